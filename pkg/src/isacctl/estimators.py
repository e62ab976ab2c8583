"""MMSE estimators at the base station and at the source.

The base station runs a Kalman filter that only receives a measurement in the
slot after a successful sensing attempt.  The source runs an open-loop
predictor that is reset to the base-station estimate whenever a communication
attempt succeeds.  A slot-``k`` attempt delivers its data at slot ``k+1``; the
step functions below consume the data arriving at the end of the step.
Absent data (no measurement, no message) is ``None``.
"""

from typing import NamedTuple, Optional

import numpy as np

from ._linalg import spd_inv, symmetrize
from .model import ModeAction, ScenarioConfig


class EstimatorContractError(ValueError):
    pass


class BaseStationBelief(NamedTuple):
    xhat: np.ndarray
    Q: np.ndarray


class SourceBelief(NamedTuple):
    xhat: np.ndarray
    P: np.ndarray


class Message(NamedTuple):
    """Payload sent to the source: the base-station estimate and covariance."""
    xhat_b: np.ndarray
    Q: np.ndarray


def _info(cfg):
    Vinv = spd_inv(cfg.V)
    return cfg.C.T @ Vinv, symmetrize(cfg.C.T @ Vinv @ cfg.C)


def bs_init(cfg: ScenarioConfig, y0) -> BaseStationBelief:
    """Fuse the conventional initial measurement ``y0 = C x0 + v0`` with the prior."""
    if y0 is None:
        raise EstimatorContractError("the initial measurement y0 is always delivered")
    CtVinv, info = _info(cfg)
    Q0 = spd_inv(spd_inv(cfg.M0) + info)
    K0 = Q0 @ CtVinv
    xhat = cfg.m0 + K0 @ (np.asarray(y0, dtype=float) - cfg.C @ cfg.m0)
    return BaseStationBelief(xhat, Q0)


def source_init(cfg: ScenarioConfig) -> SourceBelief:
    return SourceBelief(np.array(cfg.m0, dtype=float), np.array(cfg.M0, dtype=float))


def bs_step(belief: BaseStationBelief, a, u, gamma, y: Optional[np.ndarray],
            cfg: ScenarioConfig) -> BaseStationBelief:
    """One Kalman step; ``y`` must be present iff slot ``k`` sensed successfully."""
    sensed = int(u) == ModeAction.SENSE and bool(gamma)
    if sensed != (y is not None):
        raise EstimatorContractError(
            f"measurement {'missing' if sensed else 'unexpected'} for u={int(u)}, "
            f"gamma={int(gamma)}")
    A, B = cfg.A, cfg.B
    a = np.asarray(a, dtype=float)
    pred_x = A @ belief.xhat + B @ a
    pred_Q = symmetrize(A @ belief.Q @ A.T + cfg.W)
    if not sensed:
        return BaseStationBelief(pred_x, pred_Q)
    CtVinv, info = _info(cfg)
    Q = spd_inv(spd_inv(pred_Q) + info)
    K = Q @ CtVinv
    innovation = np.asarray(y, dtype=float) - cfg.C @ A @ belief.xhat - cfg.C @ B @ a
    return BaseStationBelief(pred_x + K @ innovation, Q)


def src_step(belief: SourceBelief, a, u, gamma, z: Optional[Message],
             cfg: ScenarioConfig) -> SourceBelief:
    """Source predictor; ``z`` must be present iff slot ``k`` communicated successfully.

    On delivery the source covariance becomes ``A Q A' + W``, which is the
    ``P``-recursion with its ``A (Q - P) A'`` correction folded in.
    """
    delivered = int(u) == ModeAction.COMMUNICATE and bool(gamma)
    if delivered != (z is not None):
        raise EstimatorContractError(
            f"message {'missing' if delivered else 'unexpected'} for u={int(u)}, "
            f"gamma={int(gamma)}")
    A, B = cfg.A, cfg.B
    a = np.asarray(a, dtype=float)
    xhat = A @ belief.xhat + B @ a
    if not delivered:
        return SourceBelief(xhat, symmetrize(A @ belief.P @ A.T + cfg.W))
    err = np.asarray(z.xhat_b, dtype=float) - belief.xhat
    return SourceBelief(xhat + A @ err, symmetrize(A @ np.asarray(z.Q) @ A.T + cfg.W))

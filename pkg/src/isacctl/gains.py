"""Certainty-equivalent LQ control: Riccati sequence, feedback gains, and the
weights that turn the LQG cost into a weighted sum of source covariances."""

from dataclasses import dataclass

import numpy as np

from ._linalg import spd_solve, symmetrize
from .model import ScenarioConfig


@dataclass(frozen=True)
class GainSchedule:
    S: np.ndarray      # (N+2, n, n), S[t] for t = 0..N+1
    L: np.ndarray      # (N+1, m, n), a_k = -L[k] @ xhat_k
    Gamma: np.ndarray  # (N+1, n, n), weight on P_k in the reduced cost

    @property
    def N(self):
        return self.L.shape[0] - 1


def _gain_block(cfg, S_next, k):
    """``(B'SB + Ra)^{-1} B'SA`` for the stage-``k`` weight."""
    A, B = cfg.A, cfg.B
    Lam = B.T @ S_next @ B + cfg.omega_a[k]
    return spd_solve(Lam, B.T @ S_next @ A)


def riccati_backward(cfg: ScenarioConfig) -> np.ndarray:
    """Backward Riccati recursion from ``S[N+1] = omega_x[N+1]``.

    Each step is symmetrized; the inner inverse is done by Cholesky on
    ``B'S B + omega_a``, which is PD for any validated scenario.
    """
    N, n = cfg.N, cfg.n
    A, B = cfg.A, cfg.B
    S = np.empty((N + 2, n, n))
    S[N + 1] = cfg.omega_x[N + 1]
    for t in range(N, -1, -1):
        Sn = S[t + 1]
        gain = _gain_block(cfg, Sn, t)
        S[t] = symmetrize(cfg.omega_x[t] + A.T @ Sn @ A - A.T @ Sn @ B @ gain)
    return S


def feedback_gains(cfg: ScenarioConfig, S: np.ndarray) -> np.ndarray:
    return np.stack([_gain_block(cfg, S[k + 1], k) for k in range(cfg.N + 1)])


def covariance_weights(cfg: ScenarioConfig, S: np.ndarray) -> np.ndarray:
    A, B = cfg.A, cfg.B
    out = []
    for k in range(cfg.N + 1):
        Sn = S[k + 1]
        out.append(symmetrize(A.T @ Sn @ B @ _gain_block(cfg, Sn, k)))
    return np.stack(out)


def compute_gains(cfg: ScenarioConfig) -> GainSchedule:
    S = riccati_backward(cfg)
    return GainSchedule(S=S, L=feedback_gains(cfg, S), Gamma=covariance_weights(cfg, S))


def gains_table(sched: GainSchedule):
    """Rows ``(t, S_t entries, L_t entries, Gamma_t entries)`` for CSV export.

    ``L`` and ``Gamma`` are undefined at ``t = N+1`` and exported as NaN.
    """
    rows = []
    N = sched.N
    for t in range(N + 2):
        row = [t] + sched.S[t].ravel().tolist()
        if t <= N:
            row += sched.L[t].ravel().tolist() + sched.Gamma[t].ravel().tolist()
        else:
            row += [float("nan")] * (sched.L[0].size + sched.Gamma[0].size)
        rows.append(row)
    return rows


def gains_header(sched: GainSchedule):
    def names(prefix, shape):
        return [f"{prefix}_{i}{j}" for i in range(shape[0]) for j in range(shape[1])]
    return (["t"] + names("S", sched.S.shape[1:]) + names("L", sched.L.shape[1:])
            + names("Gamma", sched.Gamma.shape[1:]))

"""Covariance dynamics on the (P, Q) pair.

``phi`` is the open-loop prediction ``A X A' + W`` and ``psi`` the prediction
followed by a measurement update, written in information form.  All
operators accept a single ``(n, n)`` matrix or a stack ``(..., n, n)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from ._linalg import spd_inv, symmetrize
from .model import ModeAction, ScenarioConfig


@dataclass(frozen=True)
class CovPair:
    P: np.ndarray  # source-side error covariance
    Q: np.ndarray  # base-station error covariance

    def __iter__(self):
        return iter((self.P, self.Q))


def measurement_information(cfg: ScenarioConfig) -> np.ndarray:
    """``C' V^{-1} C``."""
    return symmetrize(cfg.C.T @ spd_inv(cfg.V) @ cfg.C)


def phi(X, cfg: ScenarioConfig):
    X = np.asarray(X, dtype=float)
    return symmetrize(cfg.A @ X @ cfg.A.T + cfg.W)


def psi(X, cfg: ScenarioConfig):
    return spd_inv(spd_inv(phi(X, cfg)) + measurement_information(cfg))


def _as_pair(s):
    if isinstance(s, CovPair):
        return s.P, s.Q
    P, Q = s
    return np.asarray(P, dtype=float), np.asarray(Q, dtype=float)


def cov_transition(s, u, gamma, cfg: ScenarioConfig) -> CovPair:
    """Next (P, Q) after mode ``u`` with success indicator ``gamma``."""
    P, Q = _as_pair(s)
    if int(u) == ModeAction.SENSE:
        return CovPair(phi(P, cfg), psi(Q, cfg) if gamma else phi(Q, cfg))
    Qn = phi(Q, cfg)
    return CovPair(Qn if gamma else phi(P, cfg), Qn)


def expected_transitions(s, u, cfg: ScenarioConfig):
    """Outcome distribution ``[(prob, CovPair), ...]`` of one slot.

    Zero-probability outcomes are dropped, so degenerate links give a single
    entry.
    """
    lam = cfg.link_probability(u)
    out = []
    for gamma, prob in ((1, lam), (0, 1.0 - lam)):
        if prob > 0.0:
            out.append((prob, cov_transition(s, u, gamma, cfg)))
    return out


def loewner_leq(X, Y, tol=1e-9) -> bool:
    """``X <= Y`` in the Loewner order, up to ``tol`` on the eigenvalues."""
    D = symmetrize(np.atleast_2d(np.asarray(Y, dtype=float) - np.asarray(X, dtype=float)))
    return bool(np.linalg.eigvalsh(D)[0] >= -tol)


def stationary_prediction_variance(cfg: ScenarioConfig) -> float:
    """Largest eigenvalue of the fixed point of ``phi`` (stable ``A`` only)."""
    if np.max(np.abs(np.linalg.eigvals(cfg.A))) >= 1.0:
        raise ValueError("phi has no fixed point for spectral radius >= 1")
    X = solve_discrete_lyapunov(cfg.A, cfg.W)
    return float(np.linalg.eigvalsh(symmetrize(X))[-1])


def filtered_fixed_point(cfg: ScenarioConfig, iters=10_000, tol=1e-14):
    """Fixed point of ``psi`` by iteration (converges for detectable ``(A, C)``)."""
    X = np.array(cfg.W, dtype=float)
    for _ in range(iters):
        Xn = psi(X, cfg)
        if np.max(np.abs(Xn - X)) < tol:
            return Xn
        X = Xn
    return X

"""Finite-horizon dynamic programming over scalar (P, Q) variance grids.

Value tables are stored with shape ``(points_p, points_q)``; entry ``[i, j]``
is the value at ``(p[i], q[j])``.  Between nodes the value is the bilinear
interpolant of the table, and arguments leaving the grid are clamped.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .covariance import filtered_fixed_point, phi, psi, stationary_prediction_variance
from .gains import GainSchedule, compute_gains
from .model import ModeAction, ScenarioConfig

TIE_TOL = 1e-12
CLAMP_WARN_FRACTION = 1e-3
DEFAULT_POINTS = 101


class UnsupportedDimensionError(ValueError):
    pass


class GridError(ValueError):
    pass


class ThresholdStructureError(ValueError):
    """Decision map is not of threshold type.

    ``axis`` is ``"P"`` when Communicate is not an up-set in P along column
    ``index`` (fixed Q), ``"Q"`` when Sense is not an up-set in Q along row
    ``index`` (fixed P).
    """

    def __init__(self, axis, index):
        what = "column" if axis == "P" else "row"
        super().__init__(f"threshold structure violated along {what} {index} (axis {axis})")
        self.axis = axis
        self.index = index


@dataclass(frozen=True)
class GridSpec:
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    points_p: int = DEFAULT_POINTS
    points_q: int = DEFAULT_POINTS

    def __post_init__(self):
        if self.points_p < 2 or self.points_q < 2:
            raise GridError("grid needs at least 2 points per axis")
        if not (0 < self.p_min < self.p_max):
            raise GridError(f"need 0 < p_min < p_max, got {self.p_min}, {self.p_max}")
        if not (0 < self.q_min < self.q_max):
            raise GridError(f"need 0 < q_min < q_max, got {self.q_min}, {self.q_max}")

    @classmethod
    def parse(cls, text: str) -> GridSpec:
        """From ``"pmin,pmax,qmin,qmax,np,nq"``."""
        parts = [s.strip() for s in text.split(",")]
        if len(parts) != 6:
            raise GridError("grid must be pmin,pmax,qmin,qmax,np,nq")
        try:
            lo_hi = [float(x) for x in parts[:4]]
            counts = [int(x) for x in parts[4:]]
        except ValueError as exc:
            raise GridError(f"bad grid specification: {exc}") from None
        return cls(*lo_hi, *counts)

    def as_dict(self):
        return {"p_min": self.p_min, "p_max": self.p_max, "q_min": self.q_min,
                "q_max": self.q_max, "points_p": self.points_p, "points_q": self.points_q}


def build_grid(spec: GridSpec):
    """Uniform node coordinates, both endpoints included."""
    p = np.linspace(spec.p_min, spec.p_max, spec.points_p)
    q = np.linspace(spec.q_min, spec.q_max, spec.points_q)
    return p, q


def default_grid(cfg: ScenarioConfig, points=DEFAULT_POINTS) -> GridSpec:
    """Grid from a small lower bound up to 1.5x the open-loop stationary variance.

    The upper bound is rounded up to an integer and widened to contain ``M0``;
    the lower bound is 0.05, or half the filtered fixed point when that is
    smaller than 0.05 (no reachable variance lies below it).
    Unstable ``A`` has no stationary variance, so explicit bounds are required.
    """
    _require_scalar(cfg)
    try:
        stat = stationary_prediction_variance(cfg)
    except ValueError:
        raise GridError("unstable A: supply explicit p_max/q_max bounds") from None
    upper = float(math.ceil(max(1.5 * stat, float(cfg.M0[0, 0]))))
    floor = float(filtered_fixed_point(cfg)[0, 0])
    lower = 0.05 if floor >= 0.05 else 0.5 * floor
    return GridSpec(lower, upper, lower, upper, points, points)


@dataclass
class ClampCounter:
    clamped: int = 0
    evaluations: int = 0

    @property
    def fraction(self):
        return self.clamped / self.evaluations if self.evaluations else 0.0


@dataclass(frozen=True)
class ValueTable:
    k: int
    p: np.ndarray
    q: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class DecisionMap:
    k: int
    p: np.ndarray
    q: np.ndarray
    actions: np.ndarray  # int8, 0 = Sense, 1 = Communicate


@dataclass(frozen=True)
class AdvantageSurface:
    k: int
    p: np.ndarray
    q: np.ndarray
    values: np.ndarray  # F(sense) - F(communicate)


@dataclass
class DPSolution:
    grid: GridSpec
    values: list[ValueTable]
    decisions: list[DecisionMap]
    advantages: list[AdvantageSurface]
    clamps: ClampCounter = field(default_factory=ClampCounter)
    warnings: list[str] = field(default_factory=list)

    @property
    def N(self):
        return len(self.values) - 1

    def value(self, k, P, Q):
        return interpolate(self.values[k], P, Q)


def _cell(coords, x):
    i = np.searchsorted(coords, x, side="right") - 1
    i = np.clip(i, 0, len(coords) - 2)
    t = (x - coords[i]) / (coords[i + 1] - coords[i])
    return i, t


def interpolate(table, P, Q, counter: ClampCounter | None = None):
    """Bilinear interpolation of a stage table at ``(P, Q)``.

    Works for scalars or arrays.  Coordinates outside the grid are clamped to
    the boundary; ``counter`` (if given) tallies evaluations and clamped ones.
    The ``a + t (b - a)`` form keeps the interpolant exactly flat between equal
    node values, so node-level monotonicity survives rounding.
    """
    p, q, T = table.p, table.q, table.values
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    Pc = np.clip(P, p[0], p[-1])
    Qc = np.clip(Q, q[0], q[-1])
    if counter is not None:
        out = (Pc != P) | (Qc != Q)
        counter.clamped += int(np.count_nonzero(out))
        counter.evaluations += int(out.size)
    i, tp = _cell(p, Pc)
    j, tq = _cell(q, Qc)
    v00, v10 = T[i, j], T[i + 1, j]
    v01, v11 = T[i, j + 1], T[i + 1, j + 1]
    r0 = v00 + tp * (v10 - v00)
    r1 = v01 + tp * (v11 - v01)
    res = r0 + tq * (r1 - r0)
    return float(res) if res.ndim == 0 else res


def _require_scalar(cfg):
    if not cfg.is_scalar:
        raise UnsupportedDimensionError(
            f"DP solver supports scalar scenarios only (n = {cfg.n}); use simulation "
            "to evaluate policies for n > 1")


def _scalar_ops(cfg):
    def phi_s(x):
        return phi(np.asarray(x, dtype=float)[..., None, None], cfg)[..., 0, 0]

    def psi_s(x):
        return psi(np.asarray(x, dtype=float)[..., None, None], cfg)[..., 0, 0]

    return phi_s, psi_s


def stage_value(Vnext, P, Q, u, k, gains: GainSchedule, cfg: ScenarioConfig,
                counter: ClampCounter | None = None):
    """Stage-``k`` Q-factor: running weight on ``P`` plus expected next value.

    ``Vnext`` is the stage ``k+1`` table, or ``None`` at the last stage where
    the continuation is zero.
    """
    _require_scalar(cfg)
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    run = float(gains.Gamma[k][0, 0]) * P
    if Vnext is None:
        return run
    phi_s, psi_s = _scalar_ops(cfg)
    fP, fQ = phi_s(P), phi_s(Q)
    fail = interpolate(Vnext, fP, fQ, counter)
    if int(u) == ModeAction.SENSE:
        lam = cfg.lambda_s
        win = interpolate(Vnext, fP, psi_s(Q), counter)
    else:
        lam = cfg.lambda_c
        win = interpolate(Vnext, fQ, fQ, counter)
    return run + lam * win + (1.0 - lam) * fail


def solve_dp(cfg: ScenarioConfig, spec: GridSpec | None = None,
             gains: GainSchedule | None = None) -> DPSolution:
    """Backward Bellman recursion on the grid.

    Stage ``N`` holds the terminal table ``Gamma_N P`` together with an
    all-Sense map and zero advantage (no continuation, so the tie rule picks
    Sense).  For ``k < N`` the map is Communicate where
    ``F(sense) - F(communicate) > TIE_TOL``.
    """
    _require_scalar(cfg)
    notes = []
    if spec is None:
        spec = default_grid(cfg)
    elif np.max(np.abs(np.linalg.eigvals(cfg.A))) >= 1.0:
        msg = ("unstable A: phi is unbounded, values near p_max/q_max are "
               "dominated by clamping")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    if gains is None:
        gains = compute_gains(cfg)
    N = cfg.N
    p, q = build_grid(spec)
    PP, QQ = np.meshgrid(p, q, indexing="ij")
    counter = ClampCounter()

    values = [None] * (N + 1)
    decisions = [None] * (N + 1)
    advantages = [None] * (N + 1)
    VN = float(gains.Gamma[N][0, 0]) * PP
    values[N] = ValueTable(N, p, q, VN)
    decisions[N] = DecisionMap(N, p, q, np.zeros(PP.shape, dtype=np.int8))
    advantages[N] = AdvantageSurface(N, p, q, np.zeros(PP.shape))

    for k in range(N - 1, -1, -1):
        nxt = values[k + 1]
        F0 = stage_value(nxt, PP, QQ, ModeAction.SENSE, k, gains, cfg, counter)
        F1 = stage_value(nxt, PP, QQ, ModeAction.COMMUNICATE, k, gains, cfg, counter)
        delta = F0 - F1
        comm = delta > TIE_TOL
        values[k] = ValueTable(k, p, q, np.where(comm, F1, F0))
        decisions[k] = DecisionMap(k, p, q, comm.astype(np.int8))
        advantages[k] = AdvantageSurface(k, p, q, delta)

    if counter.fraction > CLAMP_WARN_FRACTION:
        msg = (f"{counter.clamped} of {counter.evaluations} interpolations were "
               "clamped to the grid boundary; consider widening the grid")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    return DPSolution(spec, values, decisions, advantages, counter, notes)


def switching_advantage(solution: DPSolution, k, P, Q):
    """Interpolated ``F(sense) - F(communicate)``; negative where sensing wins."""
    return interpolate(solution.advantages[k], P, Q)


def extract_thresholds(dmap: DecisionMap):
    """Per-column Communicate thresholds in P and per-row Sense thresholds in Q.

    Returns ``(T, T_prime)`` where ``T[j]`` is the smallest ``p`` with
    Communicate at ``q[j]`` and ``T_prime[i]`` the smallest ``q`` with Sense at
    ``p[i]``; ``inf`` when the set is empty.  Raises ThresholdStructureError if
    some column/row set is not an up-set.
    """
    acts = np.asarray(dmap.actions)
    comm = acts == ModeAction.COMMUNICATE
    T = np.full(len(dmap.q), np.inf)
    for j in range(comm.shape[1]):
        col = comm[:, j]
        if col.any():
            i0 = int(np.argmax(col))
            if not col[i0:].all():
                raise ThresholdStructureError("P", j)
            T[j] = dmap.p[i0]
    Tp = np.full(len(dmap.p), np.inf)
    sense = ~comm
    for i in range(sense.shape[0]):
        row = sense[i, :]
        if row.any():
            j0 = int(np.argmax(row))
            if not row[j0:].all():
                raise ThresholdStructureError("Q", i)
            Tp[i] = dmap.q[j0]
    return T, Tp


# -- CSV tables --------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_table_csv(path, p, q, cells, integer=False):
    """First row: blank corner then Q coordinates; first column: P coordinates."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P\\Q"] + [_fmt(x) for x in q])
        for i, pi in enumerate(p):
            row = cells[i]
            w.writerow([_fmt(pi)] + ([str(int(c)) for c in row] if integer
                                     else [_fmt(c) for c in row]))


def read_table_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    q = np.array([float(x) for x in rows[0][1:]])
    p = np.array([float(r[0]) for r in rows[1:]])
    cells = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return p, q, cells

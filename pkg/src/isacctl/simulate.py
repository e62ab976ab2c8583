"""Seeded closed-loop Monte-Carlo for switching policies.

Every episode draws its randomness up front into a noise tape (initial state,
process and measurement noise, link and policy uniforms) from its own stream,
``episode_stream(base_seed, i)``.  The tape does not depend on the policy, so
evaluating several policies with one base seed uses common random numbers.
A link attempt with mode ``u`` succeeds iff its uniform is below the mode's
success probability.

``run_episode`` is the reference path built from the step functions in
``estimators``; ``monte_carlo`` runs the same slot loop vectorized over
episodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._linalg import spd_inv
from .covariance import expected_transitions, measurement_information, phi
from .dp import TIE_TOL, AdvantageSurface, DPSolution, interpolate
from .estimators import Message, bs_init, bs_step, source_init, src_step
from .gains import GainSchedule
from .model import ModeAction, ScenarioConfig, episode_stream, noise_factor


class PolicyError(ValueError):
    pass


# -- policies ----------------------------------------------------------------
#
# A policy sees only the stage, the covariance pair and an independent uniform
# draw; realized states and estimates never reach it.

class SwitchingPolicy:
    name = "policy"

    def decide(self, k, P, Q, r) -> int:
        return int(self.decide_batch(k, np.asarray(P)[None], np.asarray(Q)[None],
                                     np.asarray([r]))[0])

    def decide_batch(self, k, P, Q, r) -> np.ndarray:
        raise NotImplementedError

    def check(self, cfg: ScenarioConfig):
        pass


class AlwaysSense(SwitchingPolicy):
    name = "always-sense"

    def decide_batch(self, k, P, Q, r):
        return np.zeros(len(P), dtype=np.int8)


class AlwaysCommunicate(SwitchingPolicy):
    name = "always-comm"

    def decide_batch(self, k, P, Q, r):
        return np.ones(len(P), dtype=np.int8)


class Periodic(SwitchingPolicy):
    """Communicate in slots where ``(k + phase) % period == period - 1``.

    ``period=2`` alternates sense, communicate, sense, ...
    """

    def __init__(self, period, phase=0):
        if int(period) < 1:
            raise PolicyError("period must be >= 1")
        self.period = int(period)
        self.phase = int(phase)
        self.name = f"periodic:{self.period}" + (f",{self.phase}" if self.phase else "")

    def decide_batch(self, k, P, Q, r):
        u = int((k + self.phase) % self.period == self.period - 1)
        return np.full(len(P), u, dtype=np.int8)


class RandomMode(SwitchingPolicy):
    def __init__(self, p_comm):
        if not 0.0 <= float(p_comm) <= 1.0:
            raise PolicyError("p_comm must lie in [0, 1]")
        self.p_comm = float(p_comm)
        self.name = f"random:{self.p_comm:g}"

    def decide_batch(self, k, P, Q, r):
        return (np.asarray(r) < self.p_comm).astype(np.int8)


class Myopic(SwitchingPolicy):
    """Greedy one-step rule on the expected next ``tr(Gamma P)``."""

    name = "myopic"

    def __init__(self, gains: GainSchedule, cfg: ScenarioConfig):
        self.gains = gains
        self.cfg = cfg

    def next_weight(self, k):
        return self.gains.Gamma[min(k + 1, self.gains.N)]

    def decide(self, k, P, Q, r):
        return myopic_policy(P, Q, k, self.gains, self.cfg)

    def decide_batch(self, k, P, Q, r):
        G = self.next_weight(k)
        gap = np.einsum("ij,eji->e", G, phi(P, self.cfg) - phi(Q, self.cfg))
        return (self.cfg.lambda_c * gap > TIE_TOL).astype(np.int8)


def myopic_policy(P, Q, k, gains: GainSchedule, cfg: ScenarioConfig) -> int:
    G = gains.Gamma[min(k + 1, gains.N)]
    cost = {}
    for u in (ModeAction.SENSE, ModeAction.COMMUNICATE):
        cost[u] = sum(prob * float(np.trace(G @ nxt.P))
                      for prob, nxt in expected_transitions((P, Q), u, cfg))
    if cost[ModeAction.SENSE] - cost[ModeAction.COMMUNICATE] > TIE_TOL:
        return int(ModeAction.COMMUNICATE)
    return int(ModeAction.SENSE)


class TablePolicy(SwitchingPolicy):
    """Optimal DP policy: communicate where the interpolated advantage is positive."""

    name = "table"

    def __init__(self, advantages: list[AdvantageSurface]):
        self.advantages = list(advantages)

    @classmethod
    def from_solution(cls, solution: DPSolution) -> TablePolicy:
        return cls(solution.advantages)

    def check(self, cfg):
        if not cfg.is_scalar:
            raise PolicyError("table policy needs a scalar scenario")
        if len(self.advantages) != cfg.N + 1:
            raise PolicyError(
                f"table policy covers {len(self.advantages)} stages, scenario needs "
                f"{cfg.N + 1}")

    def decide_batch(self, k, P, Q, r):
        P = np.asarray(P)
        Q = np.asarray(Q)
        delta = interpolate(self.advantages[k], P.reshape(len(P), -1)[:, 0],
                            Q.reshape(len(Q), -1)[:, 0])
        return (np.asarray(delta) > TIE_TOL).astype(np.int8)


def parse_policy(text: str, cfg: ScenarioConfig, gains: GainSchedule,
                 solution: DPSolution | None = None) -> SwitchingPolicy:
    """Policy from ``name[:params]``: table, always-sense, always-comm,
    periodic:P[,phase], random:p, myopic."""
    name, _, params = text.strip().partition(":")
    name = name.lower()
    try:
        if name == "table":
            if solution is None:
                raise PolicyError("table policy needs a DP solution")
            return TablePolicy.from_solution(solution)
        if name == "always-sense":
            return AlwaysSense()
        if name in ("always-comm", "always-communicate"):
            return AlwaysCommunicate()
        if name == "periodic":
            args = [int(x) for x in params.split(",")] if params else [2]
            return Periodic(*args)
        if name == "random":
            return RandomMode(float(params) if params else 0.5)
        if name == "myopic":
            return Myopic(gains, cfg)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, PolicyError):
            raise
        raise PolicyError(f"bad parameters for policy {text!r}: {exc}") from None
    raise PolicyError(f"unknown policy {text!r}")


# -- noise tapes -------------------------------------------------------------

class NoiseTape(NamedTuple):
    """Standard-normal and uniform draws for one or many episodes.

    Shapes (leading episode axis in batches): x0 (n,), w (N+1, n),
    v (N+1, p), link (N+1,), policy (N+1,).
    """
    x0: np.ndarray
    w: np.ndarray
    v: np.ndarray
    link: np.ndarray
    policy: np.ndarray


def draw_noise(cfg: ScenarioConfig, stream: np.random.Generator) -> NoiseTape:
    N = cfg.N
    return NoiseTape(
        x0=stream.standard_normal(cfg.n),
        w=stream.standard_normal((N + 1, cfg.n)),
        v=stream.standard_normal((N + 1, cfg.p)),
        link=stream.random(N + 1),
        policy=stream.random(N + 1),
    )


def draw_noise_batch(cfg: ScenarioConfig, episodes: int, base_seed: int) -> NoiseTape:
    tapes = [draw_noise(cfg, episode_stream(base_seed, i)) for i in range(episodes)]
    return NoiseTape(*(np.stack(parts) for parts in zip(*tapes)))


# -- single episode ----------------------------------------------------------

@dataclass
class EpisodeTrace:
    """Per-slot records for k = 0..N; ``x`` additionally holds x_{N+1}."""
    x: np.ndarray
    xhat_s: np.ndarray
    xhat_b: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    a: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: float
    covariance_cost: np.ndarray  # tr(Gamma_k P_k)
    mirror_ok: bool = True

    @property
    def N(self):
        return len(self.u) - 1

    @property
    def full_cost(self):
        return (float(np.sum(self.stage_cost)) + self.terminal_cost) / (self.N + 1)

    @property
    def reduced_cost(self):
        return float(np.sum(self.covariance_cost))


def run_episode(cfg: ScenarioConfig, gains: GainSchedule, policy: SwitchingPolicy,
                seed: int, episode: int = 0) -> EpisodeTrace:
    """One closed-loop rollout on the tape of ``episode_stream(seed, episode)``.

    The base station needs the applied action for its filter; it rebuilds the
    source estimate from the acknowledged (u, gamma) history and its own
    messages, and the rebuilt copy is compared with the source's.
    """
    policy.check(cfg)
    tape = draw_noise(cfg, episode_stream(seed, episode))
    N, A, B, C = cfg.N, cfg.A, cfg.B, cfg.C
    Lw, Lv = noise_factor(cfg.W), noise_factor(cfg.V)

    x = cfg.m0 + noise_factor(cfg.M0) @ tape.x0
    bs = bs_init(cfg, C @ x + Lv @ tape.v[0])
    src = source_init(cfg)
    mirror = source_init(cfg)
    mirror_ok = True

    rec = {key: [] for key in ("x", "xhat_s", "xhat_b", "P", "Q", "a", "u", "gamma",
                               "stage_cost", "covariance_cost")}
    for k in range(N + 1):
        u = policy.decide(k, src.P, bs.Q, tape.policy[k])
        lam = cfg.link_probability(u)
        gamma = int(tape.link[k] < lam)
        a = -gains.L[k] @ src.xhat
        a_bs = -gains.L[k] @ mirror.xhat
        cost = float(x @ cfg.omega_x[k] @ x + a @ cfg.omega_a[k] @ a)
        for key, val in (("x", x), ("xhat_s", src.xhat), ("xhat_b", bs.xhat),
                         ("P", src.P), ("Q", bs.Q), ("a", a), ("u", u),
                         ("gamma", gamma), ("stage_cost", cost),
                         ("covariance_cost", float(np.trace(gains.Gamma[k] @ src.P)))):
            rec[key].append(val)

        x_next = A @ x + B @ a + Lw @ tape.w[k]
        if k < N:
            sensed = u == ModeAction.SENSE and gamma
            delivered = u == ModeAction.COMMUNICATE and gamma
            y = C @ x_next + Lv @ tape.v[k + 1] if sensed else None
            z = Message(bs.xhat, bs.Q) if delivered else None
            src = src_step(src, a, u, gamma, z, cfg)
            mirror = src_step(mirror, a_bs, u, gamma, z, cfg)
            bs = bs_step(bs, a_bs, u, gamma, y, cfg)
            mirror_ok &= bool(np.array_equal(mirror.xhat, src.xhat))
        x = x_next
    rec["x"].append(x)
    terminal = float(x @ cfg.omega_x[N + 1] @ x)

    arr = {k: np.array(v) for k, v in rec.items()}
    return EpisodeTrace(
        x=arr["x"], xhat_s=arr["xhat_s"], xhat_b=arr["xhat_b"], P=arr["P"],
        Q=arr["Q"], a=arr["a"], u=arr["u"].astype(np.int8),
        gamma=arr["gamma"].astype(np.int8), stage_cost=arr["stage_cost"],
        terminal_cost=terminal, covariance_cost=arr["covariance_cost"],
        mirror_ok=mirror_ok)


# -- batched Monte-Carlo -----------------------------------------------------

@dataclass
class BatchResult:
    """Per-episode outputs of a vectorized run (episode axis first)."""
    full_cost: np.ndarray        # normalized by N+1
    reduced_cost: np.ndarray     # sum_k tr(Gamma_k P_k)
    covariance_cost: np.ndarray  # (E, N+1)
    u: np.ndarray                # (E, N+1)
    gamma: np.ndarray            # (E, N+1)
    P: np.ndarray | None = None  # (E, N+1, n, n) when recorded
    Q: np.ndarray | None = None
    err_s: np.ndarray | None = None  # x_k - xhat_s_k, (E, N+1, n)
    err_b: np.ndarray | None = None  # x_k - xhat_b_k


def _mv(M, X):
    """Apply matrix ``M`` to each row vector of ``X``."""
    return X @ M.T


def simulate_batch(cfg: ScenarioConfig, gains: GainSchedule, policy: SwitchingPolicy,
                   noise: NoiseTape, record: bool = False) -> BatchResult:
    policy.check(cfg)
    N, A, B, C = cfg.N, cfg.A, cfg.B, cfg.C
    E = noise.x0.shape[0]
    Lw, Lv = noise_factor(cfg.W), noise_factor(cfg.V)
    CtVinv = cfg.C.T @ spd_inv(cfg.V)
    info = measurement_information(cfg)

    x = cfg.m0 + _mv(noise_factor(cfg.M0), noise.x0)
    y0 = _mv(C, x) + _mv(Lv, noise.v[:, 0])
    Q0 = spd_inv(spd_inv(cfg.M0) + info)
    xb = cfg.m0 + _mv(Q0 @ CtVinv, y0 - cfg.C @ cfg.m0)
    Q = np.broadcast_to(Q0, (E, cfg.n, cfg.n)).copy()
    xs = np.broadcast_to(cfg.m0, (E, cfg.n)).copy()
    P = np.broadcast_to(cfg.M0, (E, cfg.n, cfg.n)).copy()

    stage = np.zeros(E)
    cov_cost = np.empty((E, N + 1))
    us = np.empty((E, N + 1), dtype=np.int8)
    gs = np.empty((E, N + 1), dtype=np.int8)
    if record:
        Ps = np.empty((E, N + 1, cfg.n, cfg.n))
        Qs = np.empty_like(Ps)
        es = np.empty((E, N + 1, cfg.n))
        eb = np.empty_like(es)

    for k in range(N + 1):
        u = policy.decide_batch(k, P, Q, noise.policy[:, k]).astype(np.int8)
        lam = np.where(u == ModeAction.COMMUNICATE, cfg.lambda_c, cfg.lambda_s)
        gamma = (noise.link[:, k] < lam).astype(np.int8)
        a = -_mv(gains.L[k], xs)
        stage += (np.einsum("ei,ij,ej->e", x, cfg.omega_x[k], x)
                  + np.einsum("ei,ij,ej->e", a, cfg.omega_a[k], a))
        cov_cost[:, k] = np.einsum("ij,eji->e", gains.Gamma[k], P)
        us[:, k] = u
        gs[:, k] = gamma
        if record:
            Ps[:, k], Qs[:, k] = P, Q
            es[:, k], eb[:, k] = x - xs, x - xb

        x_next = _mv(A, x) + _mv(B, a) + _mv(Lw, noise.w[:, k])
        if k < N:
            sensed = (u == ModeAction.SENSE) & (gamma == 1)
            delivered = (u == ModeAction.COMMUNICATE) & (gamma == 1)
            # base station
            pred_x = _mv(A, xb) + _mv(B, a)
            pred_Q = phi(Q, cfg)
            Q_upd = spd_inv(spd_inv(pred_Q) + info)
            y = _mv(C, x_next) + _mv(Lv, noise.v[:, k + 1])
            innov = y - _mv(C @ A, xb) - _mv(C @ B, a)
            corr = np.einsum("eij,ej->ei", Q_upd @ CtVinv, innov)
            xb_next = np.where(sensed[:, None], pred_x + corr, pred_x)
            Q_next = np.where(sensed[:, None, None], Q_upd, pred_Q)
            # source, fed by the message sent from the slot-k base-station belief
            xs_pred = _mv(A, xs) + _mv(B, a)
            xs = np.where(delivered[:, None], xs_pred + _mv(A, xb - xs), xs_pred)
            P = np.where(delivered[:, None, None], pred_Q, phi(P, cfg))
            xb, Q = xb_next, Q_next
        x = x_next
    terminal = np.einsum("ei,ij,ej->e", x, cfg.omega_x[N + 1], x)
    res = BatchResult(
        full_cost=(stage + terminal) / (N + 1),
        reduced_cost=np.sum(cov_cost, axis=1),
        covariance_cost=cov_cost, u=us, gamma=gs)
    if record:
        res.P, res.Q, res.err_s, res.err_b = Ps, Qs, es, eb
    return res


@dataclass
class CostSummary:
    policy: str
    episodes: int
    mean_full_cost: float
    mean_reduced_cost: float
    se_full_cost: float | None
    se_reduced_cost: float | None
    sense_fraction: float
    comm_fraction: float
    mean_covariance_cost: np.ndarray  # per-stage mean tr(Gamma_k P_k)
    mean_gap: float                   # mean of (N+1) * full - reduced
    se_gap: float | None

    def as_dict(self):
        return {
            "policy": self.policy, "episodes": self.episodes,
            "mean_full_cost": self.mean_full_cost,
            "mean_reduced_cost": self.mean_reduced_cost,
            "se_full_cost": self.se_full_cost,
            "se_reduced_cost": self.se_reduced_cost,
            "sense_fraction": self.sense_fraction,
            "comm_fraction": self.comm_fraction,
        }


def _se(samples):
    if len(samples) < 2:
        return None
    return float(np.std(samples, ddof=1) / np.sqrt(len(samples)))


def summarize(result: BatchResult, policy_name: str) -> CostSummary:
    E, K = result.u.shape
    gap = result.full_cost * K - result.reduced_cost
    comm = float(np.count_nonzero(result.u)) / result.u.size
    return CostSummary(
        policy=policy_name, episodes=E,
        mean_full_cost=float(np.mean(result.full_cost)),
        mean_reduced_cost=float(np.mean(result.reduced_cost)),
        se_full_cost=_se(result.full_cost), se_reduced_cost=_se(result.reduced_cost),
        sense_fraction=1.0 - comm, comm_fraction=comm,
        mean_covariance_cost=np.mean(result.covariance_cost, axis=0),
        mean_gap=float(np.mean(gap)), se_gap=_se(gap))


def monte_carlo(cfg: ScenarioConfig, gains: GainSchedule, policy: SwitchingPolicy,
                episodes: int, base_seed: int, noise: NoiseTape | None = None,
                record: bool = False):
    """Run ``episodes`` seeded rollouts; returns ``(CostSummary, BatchResult)``.

    Pass a pre-drawn ``noise`` batch to reuse tapes across policies.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if noise is None:
        noise = draw_noise_batch(cfg, episodes, base_seed)
    result = simulate_batch(cfg, gains, policy, noise, record=record)
    return summarize(result, policy.name), result


# -- full-cost decomposition -------------------------------------------------

def analytic_constant(cfg: ScenarioConfig, gains: GainSchedule):
    """Policy-independent part of the total LQG cost.

    Returns ``(mean_term, init_term, noise_term)`` = ``m0' S0 m0``,
    ``tr(S0 M0)`` and ``sum_t tr(S_{t+1} W)``.
    """
    S = gains.S
    mean_term = float(cfg.m0 @ S[0] @ cfg.m0)
    init_term = float(np.trace(S[0] @ cfg.M0))
    noise_term = float(sum(np.trace(S[t + 1] @ cfg.W) for t in range(cfg.N + 1)))
    return mean_term, init_term, noise_term


@dataclass
class FullCostReport:
    mc_total: float
    analytic_total: float
    mean_term: float
    init_term: float
    noise_term: float
    covariance_term: float
    se: float | None
    ok: bool

    @property
    def z(self):
        if not self.se:
            return None
        return (self.mc_total - self.analytic_total) / self.se


def analytic_full_cost_check(cfg: ScenarioConfig, gains: GainSchedule,
                             summary: CostSummary, n_se: float = 3.0,
                             rtol: float = 1e-9) -> FullCostReport:
    """Compare the simulated total cost with the separation decomposition.

    The simulated total is ``(N+1)`` times the mean normalized cost; the
    analytic side adds the policy-independent terms to the simulated mean of
    ``sum_k tr(Gamma_k P_k)``.  Their difference per episode has mean zero, so
    the tolerance is ``n_se`` standard errors of that paired difference (or
    ``rtol`` when the difference has no spread).
    """
    mean_term, init_term, noise_term = analytic_constant(cfg, gains)
    cov_term = float(np.sum(summary.mean_covariance_cost))
    analytic = mean_term + init_term + noise_term + cov_term
    mc = summary.mean_full_cost * (cfg.N + 1)
    diff = abs(mc - analytic)
    se = summary.se_gap
    if se:
        ok = diff <= n_se * se
    else:
        ok = diff <= rtol * max(abs(analytic), 1.0)
    return FullCostReport(mc, analytic, mean_term, init_term, noise_term, cov_term,
                          se, bool(ok))


# -- trace export ------------------------------------------------------------

def _cols(prefix, size):
    return [prefix] if size == 1 else [f"{prefix}_{i}" for i in range(size)]


def write_traces_csv(path, traces: list[EpisodeTrace]):
    """Episode traces, one row per slot plus a terminal row with x_{N+1}."""
    t0 = traces[0]
    n, m = t0.x.shape[1], t0.a.shape[1]
    header = (["episode", "k"] + _cols("x", n) + _cols("xhat_s", n) + _cols("xhat_b", n)
              + _cols("P", n * n) + _cols("Q", n * n) + ["u", "gamma"] + _cols("a", m)
              + ["stage_cost"])
    fmt = lambda v: repr(float(v))  # noqa: E731
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for e, tr in enumerate(traces):
            for k in range(tr.N + 1):
                w.writerow(
                    [e, k] + [fmt(v) for v in tr.x[k]] + [fmt(v) for v in tr.xhat_s[k]]
                    + [fmt(v) for v in tr.xhat_b[k]] + [fmt(v) for v in tr.P[k].ravel()]
                    + [fmt(v) for v in tr.Q[k].ravel()] + [int(tr.u[k]), int(tr.gamma[k])]
                    + [fmt(v) for v in tr.a[k]] + [fmt(tr.stage_cost[k])])
            blank = [""] * (2 * n + 2 * n * n + 2 + m)
            w.writerow([e, tr.N + 1] + [fmt(v) for v in tr.x[-1]] + blank
                       + [fmt(tr.terminal_cost)])

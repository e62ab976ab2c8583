"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Values are checked against independent oracles (closed forms, eigenvalue
tests, quadratic roots) rather than against the package itself.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from isacctl.cli import main
from isacctl.covariance import phi, psi
from isacctl.dp import extract_thresholds, solve_dp
from isacctl.gains import compute_gains
from isacctl.model import benchmark_scenario, scenario_from_dict
from isacctl.simulate import (AlwaysCommunicate, AlwaysSense, Myopic, Periodic, RandomMode,
                              TablePolicy, analytic_constant, analytic_full_cost_check,
                              draw_noise_batch, monte_carlo)

EPISODES = 10_000
SEED = 7


def report(tag, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def timed_solution(bench, bench_gains):
    t0 = time.perf_counter()
    sol = solve_dp(bench, gains=bench_gains)
    return sol, time.perf_counter() - t0


@pytest.fixture(scope="module")
def crn_runs(bench, bench_gains, bench_solution):
    """All policies on one batch of noise tapes."""
    t0 = time.perf_counter()
    noise = draw_noise_batch(bench, EPISODES, SEED)
    policies = [TablePolicy.from_solution(bench_solution), AlwaysSense(), AlwaysCommunicate(),
                Periodic(2), RandomMode(0.5), Myopic(bench_gains, bench)]
    runs = {}
    for pol in policies:
        runs[pol.name] = monte_carlo(bench, bench_gains, pol, EPISODES, SEED, noise=noise,
                                     record=pol.name == "table")
        if pol.name == "table":
            table_time = time.perf_counter() - t0
    return runs, table_time


def test_ac1_value_monotone(timed_solution):
    sol, elapsed = timed_solution
    V = sol.values[0].values
    assert V.shape == (101, 101)
    dp_ok = V[1:, :] >= V[:-1, :]
    dq_ok = V[:, 1:] >= V[:, :-1]
    frac = (dp_ok.sum() + dq_ok.sum()) / (dp_ok.size + dq_ok.size)
    report("AC1", frac == 1.0 and elapsed < 2.0,
           f"V0 monotone at {100 * frac:.2f}% of node pairs, solve {elapsed:.2f} s (< 2 s)")


def test_ac2_threshold_structure(bench_solution):
    dmap = bench_solution.decisions[0]
    comm = dmap.actions == 1
    # count violations directly: an up-set has no 1 -> 0 step along P and no 0 -> 1 along Q
    viol_p = int(np.count_nonzero(comm[:-1, :] & ~comm[1:, :]))
    viol_q = int(np.count_nonzero(~comm[:, :-1] & comm[:, 1:]))
    T, _ = extract_thresholds(dmap)
    mono = bool(np.all(T[1:] >= T[:-1]))
    report("AC2", viol_p == 0 and viol_q == 0 and mono,
           f"{viol_p} P-column and {viol_q} Q-row violations, T(Q) nondecreasing: {mono}")


def _random_case(rng):
    n = int(rng.integers(1, 5))
    full = bool(rng.integers(2))
    p = n + int(rng.integers(0, 2)) if full else int(rng.integers(1, n + 1))
    G = rng.standard_normal((n, n))
    H = rng.standard_normal((p, p))
    cfg = scenario_from_dict({
        "A": rng.standard_normal((n, n)).tolist(), "B": np.ones((n, 1)).tolist(),
        "C": rng.standard_normal((p, n)).tolist(),
        "W": (G @ G.T + 0.1 * np.eye(n)).tolist(), "V": (H @ H.T + 0.1 * np.eye(p)).tolist(),
        "omega_x": np.eye(n).tolist(), "omega_a": 1.0, "N": 1,
        "lambda_s": 0.5, "lambda_c": 0.5})
    F1, F2 = rng.standard_normal((2, n, n))
    Y = F1 @ F1.T
    X = Y + F2 @ F2.T
    return cfg, X, Y, np.linalg.matrix_rank(cfg.C) == n


def _min_eig(M):
    return np.linalg.eigvalsh(0.5 * (M + M.T))[0]


def test_ac3_covariance_lemmas():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, worst_gap, fails, strict_cases = 0.0, np.inf, 0, 0
    for _ in range(1000):
        cfg, X, Y, full_rank = _random_case(rng)
        checks = [_min_eig(phi(X, cfg) - phi(Y, cfg)),
                  _min_eig(psi(X, cfg) - psi(Y, cfg)),
                  _min_eig(phi(X, cfg) - psi(X, cfg))]
        worst = min(worst, *checks)
        fails += any(c < -1e-9 for c in checks)
        if full_rank:
            strict_cases += 1
            worst_gap = min(worst_gap, checks[2])
    elapsed = time.perf_counter() - t0
    ok = fails == 0 and worst_gap > 1e-12 and elapsed < 5.0
    report("AC3", ok,
           f"1000 pairs, {fails} failures, min eigenvalue {worst:.2e}; strict gap "
           f"{worst_gap:.2e} over {strict_cases} full-rank cases; {elapsed:.2f} s (< 5 s)")


def _value_structure(solution):
    """Worst violations of decreasing differences and of Delta monotonicity."""
    sub = [0, 0.0]
    mono = [0, 0.0]
    for vt, adv in zip(solution.values, solution.advantages):
        V, D = vt.values, adv.values
        eps = 1e-6 * np.max(np.abs(V))
        cross = (V[1:, 1:] - V[:-1, 1:]) - (V[1:, :-1] - V[:-1, :-1])
        sub[0] += int(np.count_nonzero(cross > eps))
        sub[1] = max(sub[1], float(np.max(cross)) / eps)
        bad_p = D[:-1, :] - D[1:, :]   # must be <= eps (nondecreasing in P)
        bad_q = D[:, 1:] - D[:, :-1]   # must be <= eps (nonincreasing in Q)
        mono[0] += int(np.count_nonzero(bad_p > eps) + np.count_nonzero(bad_q > eps))
        mono[1] = max(mono[1], float(max(bad_p.max(), bad_q.max())) / eps)
    return sub, mono


@pytest.fixture(scope="module")
def value_structure(bench_solution):
    return _value_structure(bench_solution)


def test_ac4a_submodularity(value_structure):
    (count, ratio), _ = value_structure
    report("AC4a", count == 0,
           f"decreasing differences violated at {count} cells over all stages, "
           f"worst excess {ratio:.3g} x eps_grid")


def test_ac4b_advantage_monotone(value_structure):
    _, (count, ratio) = value_structure
    report("AC4b", count == 0,
           f"Delta monotonicity violated at {count} node pairs, worst {ratio:.3g} x eps_grid")


def test_ac5_dp_matches_simulation(bench, bench_solution, crn_runs):
    runs, elapsed = crn_runs
    summary, _ = runs["table"]
    Q0 = 1.0 / (1.0 / float(bench.M0[0, 0]) + 1.0 / 0.1)  # prior fused with y0
    v0 = bench_solution.value(0, float(bench.M0[0, 0]), Q0)
    diff = abs(summary.mean_reduced_cost - v0)
    tol = max(0.02 * v0, 3 * summary.se_reduced_cost)
    report("AC5", diff <= tol and elapsed < 30.0,
           f"MC {summary.mean_reduced_cost:.4f} +/- {summary.se_reduced_cost:.4f} vs "
           f"V0 {v0:.4f} (|diff| {diff:.4f} <= {tol:.4f}); {elapsed:.2f} s (< 30 s)")


def test_ac6_table_beats_baselines(crn_runs):
    runs, _ = crn_runs
    t, _ = runs["table"]
    parts, ok = [], True
    for name, (s, _) in runs.items():
        if name == "table":
            continue
        pooled = np.hypot(t.se_reduced_cost, s.se_reduced_cost)
        fine = t.mean_reduced_cost <= s.mean_reduced_cost + 3 * pooled
        ok &= bool(fine)
        parts.append(f"{name} {s.mean_reduced_cost:.3f}")
    report("AC6", ok, f"table {t.mean_reduced_cost:.3f} vs " + ", ".join(parts))


def test_ac7_estimator_validity(crn_runs):
    runs, _ = crn_runs
    _, res = runs["table"]
    worst_rel, worst_z = 0.0, 0.0
    for err, cov in ((res.err_s[:, :, 0], res.P[:, :, 0, 0]),
                     (res.err_b[:, :, 0], res.Q[:, :, 0, 0])):
        emp = np.mean(err ** 2, axis=0)
        model = np.mean(cov, axis=0)
        worst_rel = max(worst_rel, float(np.max(np.abs(emp / model - 1))))
        z = np.mean(err, axis=0) / (np.std(err, axis=0, ddof=1) / np.sqrt(len(err)))
        worst_z = max(worst_z, float(np.max(np.abs(z))))
    report("AC7", worst_rel <= 0.05 and worst_z <= 4.0,
           f"max relative covariance error {100 * worst_rel:.2f}% (<= 5%), "
           f"max |mean error| {worst_z:.2f} SE (<= 4)")


def test_ac8_lqg_decomposition(bench, bench_gains, crn_runs):
    runs, _ = crn_runs
    rep = analytic_full_cost_check(bench, bench_gains, runs["table"][0])
    cfg = benchmark_scenario(N=0).replace(B=0.0)
    g = compute_gains(cfg)
    closed = 1.0 * (1.0 + 0.9 ** 2) + 0.3  # E[x0^2 + x1^2] with a = 0
    analytic = sum(analytic_constant(cfg, g)) + float(np.sum(g.Gamma[:, 0, 0]))
    rel = abs(analytic - closed) / closed
    report("AC8", rep.ok and rel <= 1e-9,
           f"MC total {rep.mc_total:.3f} vs decomposition {rep.analytic_total:.3f} "
           f"(z = {rep.z:.2f}); degenerate case relative error {rel:.1e}")


def test_ac9_riccati_root(bench_gains):
    a = 0.9
    roots = np.roots([1.0, -a * a, -1.0])
    root = float(roots[roots > 0][0])
    err = abs(bench_gains.S[0, 0, 0] - root)
    report("AC9", err <= 1e-6, f"S0 {bench_gains.S[0, 0, 0]:.12f} vs root {root:.12f}, "
           f"error {err:.1e}")


def test_ac10_determinism(tmp_path):
    def files(d):
        return {p.relative_to(d).as_posix(): p.read_bytes()
                for p in sorted(d.rglob("*")) if p.is_file() and p.name != "manifest.json"}

    same = True
    count = 0
    for cmd, extra in (("solve", ["--stages", "0,25"]),
                       ("simulate", ["--episodes", "2000", "--seed", "7", "--traces", "3"])):
        dirs = [tmp_path / f"{cmd}_{i}" for i in range(2)]
        for d in dirs:
            assert main([cmd, "--scenario", "@benchmark", "--out", str(d)] + extra) == 0
        a, b = files(dirs[0]), files(dirs[1])
        same &= a == b and len(a) > 0
        count += len(a)
    report("AC10", same, f"{count} data files byte-identical across repeated solve/simulate")

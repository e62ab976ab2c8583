"""Command-line entry point: ``isacctl {solve,simulate,compare,gains}``.

Exit statuses: 0 ok, 1 input error, 2 numerical error, 3 artifact mismatch.
Every command validates its inputs before writing anything, and writes a
``manifest.json`` next to its outputs.  All other outputs are deterministic.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dp import (AdvantageSurface, DPSolution, GridError, GridSpec,
                 ThresholdStructureError, UnsupportedDimensionError, build_grid,
                 extract_thresholds, read_table_csv, solve_dp, write_table_csv)
from .estimators import bs_init
from .gains import compute_gains, gains_header, gains_table
from .model import (ScenarioConfig, ScenarioError, load_scenario_file, benchmark_scenario,
                    scenario_digest, validate)
from .simulate import (PolicyError, TablePolicy, analytic_full_cost_check,
                       draw_noise_batch, monte_carlo, parse_policy, run_episode,
                       write_traces_csv)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_MISMATCH = 0, 1, 2, 3
DEFAULT_POLICIES = ("table", "always-sense", "always-comm", "periodic:2", "random:0.5",
                    "myopic")
PRESETS = {"@benchmark": benchmark_scenario}


class InputError(Exception):
    pass


class ArtifactMismatch(Exception):
    pass


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _load(args) -> ScenarioConfig:
    src = args.scenario
    if src in PRESETS:
        cfg = PRESETS[src]()
    else:
        if not os.path.isfile(src):
            raise InputError(f"scenario file not found: {src}")
        cfg = load_scenario_file(src)
    for msg in validate(cfg).warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return cfg


def _with_p0(cfg: ScenarioConfig, p0):
    if p0 is None:
        return cfg
    if p0 <= 0:
        raise InputError("--p0 must be positive")
    return cfg.replace(M0=(p0 * np.eye(cfg.n)).tolist() if cfg.n > 1 else p0)


def _grid(args, cfg):
    return GridSpec.parse(args.grid) if args.grid else None


def _stages(text, N):
    if text == "all":
        return list(range(N + 1))
    try:
        ks = sorted({int(s) for s in text.split(",")})
    except ValueError:
        raise InputError(f"bad --stages value {text!r}") from None
    bad = [k for k in ks if not 0 <= k <= N]
    if bad:
        raise InputError(f"stage {bad[0]} outside 0..{N}")
    return ks


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_manifest(out: Path, args, cfg, grid, started, files):
    _write_json(out / "manifest.json", {
        "command": args.command,
        "argv": list(args.argv),
        "scenario_digest": scenario_digest(cfg),
        "grid": grid.as_dict() if grid else None,
        "seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": sorted(files),
    })


def _initial_pair(cfg):
    """(P0, Q0) the simulator starts from: P0 = M0 and Q0 after fusing y0."""
    Q0 = bs_init(cfg, np.zeros(cfg.p)).Q
    return float(cfg.M0[0, 0]), float(Q0[0, 0])


# -- solve ---------------------------------------------------------------------

def write_solution(out: Path, sol: DPSolution, stages):
    files = []
    p, q = build_grid(sol.grid)
    for k in stages:
        write_table_csv(out / f"value_{k}.csv", p, q, sol.values[k].values)
        write_table_csv(out / f"decision_{k}.csv", p, q, sol.decisions[k].actions,
                        integer=True)
        files += [f"value_{k}.csv", f"decision_{k}.csv"]
    write_table_csv(out / "advantage_0.csv", p, q, sol.advantages[0].values)
    files.append("advantage_0.csv")
    (out / "policy").mkdir(exist_ok=True)
    for k, adv in enumerate(sol.advantages):
        write_table_csv(out / "policy" / f"advantage_{k}.csv", p, q, adv.values)
        files.append(f"policy/advantage_{k}.csv")
    return files


def load_solution_policy(path: Path, cfg: ScenarioConfig) -> tuple[TablePolicy, dict]:
    """Table policy from a solve directory, after checking its scenario digest."""
    man_path = path / "manifest.json"
    if not man_path.is_file():
        raise InputError(f"no manifest.json in solution directory {path}")
    manifest = json.loads(man_path.read_text(encoding="utf-8"))
    want, have = scenario_digest(cfg), manifest.get("scenario_digest")
    if want != have:
        raise ArtifactMismatch(
            f"solution digest {have} does not match scenario digest {want}")
    grid = GridSpec(**manifest["grid"])
    p_ref, q_ref = build_grid(grid)
    advantages = []
    for k in range(cfg.N + 1):
        f = path / "policy" / f"advantage_{k}.csv"
        if not f.is_file():
            raise ArtifactMismatch(f"solution directory lacks stage {k} ({f})")
        p, q, cells = read_table_csv(f)
        if cells.shape != (len(p_ref), len(q_ref)) or not (
                np.array_equal(p, p_ref) and np.array_equal(q, q_ref)):
            raise ArtifactMismatch(f"{f} does not match the manifest grid")
        advantages.append(AdvantageSurface(k, p, q, cells))
    return TablePolicy(advantages), manifest


def cmd_solve(args):
    started = _now()
    base = _load(args)
    cfg = _with_p0(base, args.p0)
    stages = _stages(args.stages, cfg.N)
    gains = compute_gains(cfg)
    sol = solve_dp(cfg, _grid(args, cfg), gains)

    try:
        T, Tp = extract_thresholds(sol.decisions[0])
        structure = {"threshold_structure": True}
    except ThresholdStructureError as exc:
        print(f"warning: {exc}", file=sys.stderr)
        T = Tp = None
        structure = {"threshold_structure": False, "violation_axis": exc.axis,
                     "violation_index": exc.index}

    P0, Q0 = _initial_pair(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = write_solution(out, sol, stages)
    p, q = build_grid(sol.grid)
    with open(out / "thresholds_0.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "coordinate", "threshold"])
        if T is not None:
            w.writerows(["Q", repr(float(qj)), repr(float(t))] for qj, t in zip(q, T))
            w.writerows(["P", repr(float(pi)), repr(float(t))] for pi, t in zip(p, Tp))
    files.append("thresholds_0.csv")
    _write_json(out / "summary.json", {
        "N": cfg.N,
        "grid": sol.grid.as_dict(),
        "clamped": sol.clamps.clamped,
        "evaluations": sol.clamps.evaluations,
        "P0": P0, "Q0": Q0,
        "V0_at_P0_Q0": sol.value(0, P0, Q0),
        "scenario_digest": scenario_digest(base),
        "warnings": sol.warnings,
        **structure,
    })
    files.append("summary.json")
    _write_manifest(out, args, base, sol.grid, started, files)
    print(f"V0({P0:g}, {Q0:.6g}) = {sol.value(0, P0, Q0):.6f}; wrote {len(files)} files to {out}")
    return EXIT_OK


# -- simulate / compare --------------------------------------------------------

def _is_table(name):
    return name.split(":")[0].strip().lower() == "table"


def _resolve_policies(args, base, cfg, gains, names):
    """Build policies; the table policy comes from --solution (digest-checked
    against the scenario file) or from an in-process solve on --grid."""
    table, grid = None, None
    if any(_is_table(n) for n in names):
        if args.solution:
            table, manifest = load_solution_policy(Path(args.solution), base)
            grid = GridSpec(**manifest["grid"])
        else:
            sol = solve_dp(cfg, _grid(args, cfg), gains)
            table, grid = TablePolicy.from_solution(sol), sol.grid
    policies = [table if _is_table(n) else parse_policy(n, cfg, gains) for n in names]
    for pol in policies:
        pol.check(cfg)
    return policies, grid


def cmd_simulate(args):
    started = _now()
    base = _load(args)
    if args.episodes < 1:
        raise InputError("--episodes must be >= 1")
    cfg = _with_p0(base, args.p0)
    gains = compute_gains(cfg)
    (policy,), grid = _resolve_policies(args, base, cfg, gains, [args.policy])

    summary, _ = monte_carlo(cfg, gains, policy, args.episodes, args.seed)
    report = analytic_full_cost_check(cfg, gains, summary)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    doc = summary.as_dict()
    doc["seed"] = args.seed
    doc["full_cost_check"] = {
        "mc_total": report.mc_total, "analytic_total": report.analytic_total,
        "mean_term": report.mean_term, "init_term": report.init_term,
        "noise_term": report.noise_term, "covariance_term": report.covariance_term,
        "se": report.se, "ok": report.ok,
    }
    _write_json(out / "summary.json", doc)
    files.append("summary.json")
    if args.traces:
        traces = [run_episode(cfg, gains, policy, args.seed, e)
                  for e in range(min(args.traces, args.episodes))]
        write_traces_csv(out / "traces.csv", traces)
        files.append("traces.csv")
    _write_manifest(out, args, base, grid, started, files)
    se = summary.se_reduced_cost
    print(f"{policy.name}: reduced {summary.mean_reduced_cost:.6f}"
          + (f" +/- {se:.6f}" if se is not None else "")
          + f", full {summary.mean_full_cost:.6f}, comm {summary.comm_fraction:.3f}")
    return EXIT_OK


def cmd_compare(args):
    started = _now()
    base = _load(args)
    if args.episodes < 1:
        raise InputError("--episodes must be >= 1")
    cfg = _with_p0(base, args.p0)
    gains = compute_gains(cfg)
    names = args.policy or list(DEFAULT_POLICIES)
    policies, grid = _resolve_policies(args, base, cfg, gains, names)

    noise = draw_noise_batch(cfg, args.episodes, args.seed)
    rows = [monte_carlo(cfg, gains, pol, args.episodes, args.seed, noise=noise)[0]
            for pol in policies]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "mean_full", "mean_reduced", "stderr", "comm_fraction"])
        for s in rows:
            se = "" if s.se_reduced_cost is None else repr(s.se_reduced_cost)
            w.writerow([s.policy, repr(s.mean_full_cost), repr(s.mean_reduced_cost), se,
                        repr(s.comm_fraction)])
    _write_manifest(out, args, base, grid, started, ["compare.csv"])
    for s in rows:
        print(f"{s.policy:>14s}  reduced {s.mean_reduced_cost:10.5f}  "
              f"full {s.mean_full_cost:9.5f}  comm {s.comm_fraction:.3f}")
    return EXIT_OK


# -- gains ---------------------------------------------------------------------

def cmd_gains(args):
    started = _now()
    cfg = _load(args)
    sched = compute_gains(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gains.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(gains_header(sched))
        for row in gains_table(sched):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    _write_manifest(out, args, cfg, None, started, ["gains.csv"])
    print(f"S_0 = {sched.S[0].tolist()}; wrote {out / 'gains.csv'}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="isacctl",
        description="Sense/communicate switching for LQG control over an ISAC link.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True,
                       help="scenario JSON file, or @benchmark for the built-in benchmark")
        p.add_argument("--out", required=True, help="output directory")
        return p

    def sim_flags(p):
        p.add_argument("--episodes", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0, help="64-bit base seed")
        p.add_argument("--solution", help="solve output directory for the table policy")
        p.add_argument("--grid", help="pmin,pmax,qmin,qmax,np,nq (in-process solve)")
        p.add_argument("--p0", type=float,
                       help="initial source variance; overrides M0 with p0*I")

    p = common(sub.add_parser("solve", help="solve the switching DP"))
    p.add_argument("--grid", help="pmin,pmax,qmin,qmax,np,nq")
    p.add_argument("--stages", default="0", help="comma list of stages or 'all'")
    p.add_argument("--p0", type=float, help="initial source variance for the V0 summary")
    p.set_defaults(func=cmd_solve)

    p = common(sub.add_parser("simulate", help="Monte-Carlo evaluation of one policy"))
    sim_flags(p)
    p.add_argument("--policy", default="table", help="name[:params]")
    p.add_argument("--traces", type=int, default=0,
                   help="write per-slot traces of the first K episodes")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("compare", help="compare policies on common random numbers"))
    sim_flags(p)
    p.add_argument("--policy", action="append",
                   help="policy name[:params]; repeat to compare several "
                        f"(default: {', '.join(DEFAULT_POLICIES)})")
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("gains", help="dump the Riccati sequence and gains"))
    p.set_defaults(func=cmd_gains)
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means a numerical failure
        return EXIT_INPUT if exc.code else EXIT_OK
    args.argv = argv
    try:
        if not 0 <= getattr(args, "seed", 0) < 2 ** 64:
            raise InputError("--seed must be an unsigned 64-bit integer")
        return args.func(args)
    except (InputError, ScenarioError, GridError, PolicyError,
            UnsupportedDimensionError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ArtifactMismatch as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

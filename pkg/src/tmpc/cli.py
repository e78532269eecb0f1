"""``tmpc`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import critical_lateral_accel, critical_mu
from .errors import ConfigError, TmpcError
from .harness import BatchSummary, open_loop_study, run_batch, run_trial
from .params import ConstraintConfig, VehicleParams
from .planner import _default_workers
from .scenario import benign_spec, load_scenario, stress_spec
from .stats import mann_whitney_u
from .terrain import gaussian_smooth, read_heightmap, synth_terrain, write_heightmap

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed {text!r} must be an unsigned 64-bit integer")
    return v


def _pos_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 1")
    return v


def _float_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _formulations(text):
    vals = [t.strip() for t in text.split(",") if t.strip()]
    bad = [v for v in vals if v not in ("est", "srb")]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"formulations must be a list of est,srb (got {text!r})")
    return vals


def _interior_rms(h, margin):
    core = h[margin:h.shape[0] - margin, margin:h.shape[1] - margin]
    if core.size == 0:
        core = h
    return float(np.sqrt(np.mean((core - core.mean()) ** 2)))


# ---------------------------------------------------------------- commands

def cmd_smooth(args):
    src = read_heightmap(args.input)
    out = gaussian_smooth(src, args.sigma)
    write_heightmap(out, args.output)
    margin = int(math.ceil(3 * args.sigma / src.resolution))
    before = _interior_rms(src.heights, margin)
    after = _interior_rms(out.heights, margin)
    ratio = after / before if before > 0 else 1.0
    print(f"sigma={args.sigma} cells={args.sigma / src.resolution:.3f} interior_rms_in={before:.6g} "
          f"interior_rms_out={after:.6g} attenuation={ratio:.6f}")
    return EXIT_OK


def cmd_simulate(args):
    sc = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else sc.trial.seed
    rec = run_trial(sc, seed, model=args.model, speed=args.speed, setup=args.setup, n_samples=args.samples,
                    workers=args.workers)
    if args.log:
        rec.to_csv(args.log)
        if args.solver_log:
            rec.solver_csv(args.solver_log)
    print(f"outcome={rec.outcome} t={rec.t_end:.2f} cost={rec.cost_total:.6g} seed={seed}")
    if rec.outcome == "aborted":
        print(f"aborted: {rec.message}", file=sys.stderr)
    return EXIT_OK


def cmd_batch(args):
    sc = load_scenario(args.scenario)
    base = args.seed if args.seed is not None else sc.trial.seed
    out = Path(args.out)
    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)

    def save(i, rec):
        name = f"v{rec.speed:g}_s{rec.setup}_{rec.model}_{i:03d}.csv"
        if rec.rows.size:
            rec.to_csv(logs / name)
        if args.verbose:
            print(f"{name} outcome={rec.outcome} t={rec.t_end:.2f}", file=sys.stderr)

    summary = run_batch(sc, speeds=args.speeds, formulations=args.formulations, n_trials=args.trials,
                        base_seed=base, setups=args.setups, n_samples=args.samples, workers=args.workers,
                        trial_workers=args.trial_workers, on_trial=save)
    summary.to_csv(out / "summary.csv")
    summary.trials_csv(out / "trials.csv")
    meta = {"seed": base, "trial_seeds": summary.seeds, "matched_across": args.formulations,
            "speeds": args.speeds or list(sc.trial.speeds), "setups": args.setups or [sc.trial.setup],
            "scenario": str(args.scenario)}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    aborted = sum(1 for _, r in summary.trials if r.outcome == "aborted")
    for r in summary.rows:
        print(f"speed={r['speed']:g} setup={r['setup']} formulation={r['formulation']} n={r['n']} "
              f"success={r['p_success']:.3f}+/-{r['se_success']:.3f} "
              f"rollover={r['p_rollover']:.3f}+/-{r['se_rollover']:.3f}")
    print(f"seed={base} trials={len(summary.trials)} aborted={aborted} out={out}")
    return EXIT_OK


def cmd_openloop(args):
    sc = load_scenario(args.scenario)
    base = args.seed if args.seed is not None else sc.trial.seed
    records = []
    for i in range(args.trials):
        for f in args.formulations:
            rec = run_trial(sc, base + i, model=f, speed=args.speed, n_samples=args.samples, workers=args.workers)
            if rec.rows.shape[0] > 1:
                records.append(rec)
    errs = open_loop_study(records, sc, horizon=args.horizon, stride=args.stride)
    n_seg = len(errs["est"])
    if n_seg == 0:
        print(f"error: no segments: plant trajectories shorter than the {args.horizon} s horizon",
              file=sys.stderr)
        return EXIT_RUNTIME
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# seed={base}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "start_time", "model", "location_error", "esm_error", "diverged"])
        for m, lst in errs.items():
            for k, e in enumerate(lst):
                w.writerow([k, repr(e.start_time), m, repr(e.location), repr(e.esm), int(e.diverged)])
    for m, lst in errs.items():
        ok = [e for e in lst if not e.diverged]
        loc = np.median([e.location for e in ok]) if ok else float("nan")
        es = np.median([e.esm for e in ok]) if ok else float("nan")
        print(f"model={m} segments={len(lst)} diverged={len(lst) - len(ok)} median_location={loc:.4f} "
              f"median_esm={es:.3f}")
    a = [e.location for e in errs["est"] if not e.diverged]
    b = [e.location for e in errs["srb"] if not e.diverged]
    if a and b:
        print(f"mann_whitney_p_location={mann_whitney_u(a, b).p_value:.3g}")
    print(f"seed={base}")
    return EXIT_OK


TRIAL_TABLE = BatchSummary.TRIAL_TABLE_COLUMNS


def _read_trial_tables(root):
    root = Path(root)
    files = sorted(root.rglob("trials.csv")) if root.is_dir() else [root]
    if not files:
        raise ConfigError("no summaries", [f"{root}: no trials.csv files found"])
    rows = []
    for path in files:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != TRIAL_TABLE:
                raise ConfigError("mixed-schema input rejected", [f"{path}: header {header!r} is not a trial table"])
            for n, r in enumerate(reader, 2):
                if len(r) != len(TRIAL_TABLE):
                    raise ConfigError("mixed-schema input rejected", [f"{path}:{n}: wrong field count"])
                rows.append(dict(zip(TRIAL_TABLE, r)))
    return rows


def cmd_analyze(args):
    rows = _read_trial_tables(args.summaries)
    groups = {}
    for r in rows:
        key = (float(r["speed"]), int(r["setup"]))
        groups.setdefault(key, {}).setdefault(r["formulation"], []).append(r)
    out = []
    for (speed, setup), by_f in sorted(groups.items()):
        for f, rs in sorted(by_f.items()):
            n = len(rs)
            for o in ("success", "goal_with_collision", "rollover", "timeout", "aborted"):
                k = sum(r["outcome"] == o for r in rs)
                p = k / n
                out.append(("proportion", speed, setup, f, o, p, math.sqrt(p * (1 - p) / n)))
        fs = sorted(by_f)
        if len(fs) == 2:
            costs = [[float(r["cost_total"]) for r in by_f[f] if r["outcome"] == "success"] for f in fs]
            if costs[0] and costs[1]:
                res = mann_whitney_u(costs[0], costs[1])
                out.append(("mann_whitney", speed, setup, f"{fs[0]}|{fs[1]}", res.method, res.p_value, ""))
    cfg = ConstraintConfig(a_by_bar=args.a_by_bar)
    cm = critical_mu(cfg, g=args.g, mu=args.mu)
    formula = critical_lateral_accel(VehicleParams())
    out.append(("critical_mu", "", "", "empirical", f"a_by_bar={args.a_by_bar}", cm.threshold,
                "" if cm.violable is None else ("violable" if cm.violable else "not_violable")))
    cm_f = critical_mu(ConstraintConfig(a_by_bar=formula), g=args.g, mu=args.mu)
    out.append(("critical_mu", "", "", "load_transfer", f"a_by_bar={formula:.4f}", cm_f.threshold,
                "" if cm_f.violable is None else ("violable" if cm_f.violable else "not_violable")))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "speed", "setup", "subject", "detail", "value", "extra"])
        for r in out:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    verdict = "violable" if cm.violable else "not violable"
    print(f"critical_mu={cm.threshold:.2f} mu={args.mu} {verdict}")
    for r in out:
        if r[0] == "mann_whitney":
            print(f"speed={r[1]:g} setup={r[2]} mann_whitney_p={r[5]:.4g} ({r[4]})")
    return EXIT_OK


def _parse_params(items):
    params = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError("synthetic terrain invalid", [f"--param {item!r} must be key=value"])
        try:
            params[key] = int(value) if value.lstrip("-").isdigit() else float(value)
        except ValueError:
            raise ConfigError("synthetic terrain invalid", [f"--param {item!r}: value must be numeric"]) from None
    return params


def cmd_synth(args):
    if args.builtin:
        spec = {"benign": benign_spec, "stress": stress_spec}[args.builtin]()
        if args.seed is not None:
            spec["planner"]["seed"] = args.seed
            spec["trial"]["seed"] = args.seed
        Path(args.out).write_text(json.dumps(spec, indent=2) + "\n")
        print(f"wrote scenario {args.builtin} to {args.out} seed={spec['trial']['seed']}")
        return EXIT_OK
    if not args.kind:
        raise ConfigError("synth needs --kind or --builtin", [])
    params = _parse_params(args.param)
    if args.kind == "bump_field":
        if args.seed is None and "seed" not in params:
            raise ConfigError("synthetic terrain invalid", ["bump_field requires --seed"])
        params.setdefault("seed", args.seed)
    hmap = synth_terrain(args.kind, **params)
    write_heightmap(hmap, args.out)
    seed = params.get("seed", args.seed)
    print(f"wrote {args.kind} {hmap.nx}x{hmap.ny} resolution={hmap.resolution} to {args.out}"
          + (f" seed={seed}" if seed is not None else ""))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="tmpc", description="Terrain-aware sampling MPC: trials, batches and analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("smooth", help="Gaussian-smooth a heightmap")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--sigma", type=float, required=True, help="standard deviation [m]")
    s.add_argument("--out", dest="output", required=True)
    s.set_defaults(func=cmd_smooth)

    def common_run(sp):
        sp.add_argument("--scenario", required=True)
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--samples", type=_pos_int, help="rollouts per planning step")
        sp.add_argument("--workers", type=_pos_int, help="rollout worker threads (default $TMPC_WORKERS or 1)")

    s = sub.add_parser("simulate", help="run one closed-loop trial")
    common_run(s)
    s.add_argument("--log", help="trial CSV output")
    s.add_argument("--solver-log", help="per-iteration solver stats CSV")
    s.add_argument("--model", choices=("est", "srb"))
    s.add_argument("--speed", type=float)
    s.add_argument("--setup", type=int, choices=(1, 2, 3))
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("batch", help="matched-seed Monte-Carlo batch")
    common_run(s)
    s.add_argument("--speeds", type=_float_list)
    s.add_argument("--trials", type=int)
    s.add_argument("--formulations", type=_formulations, default=["est", "srb"])
    s.add_argument("--setups", type=lambda t: [int(x) for x in t.split(",")])
    s.add_argument("--trial-workers", type=_pos_int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_batch)

    s = sub.add_parser("openloop", help="open-loop model errors along closed-loop plant trajectories")
    common_run(s)
    s.add_argument("--horizon", type=float, default=4.0)
    s.add_argument("--stride", type=float, default=0.04)
    s.add_argument("--trials", type=int, default=2)
    s.add_argument("--speed", type=float)
    s.add_argument("--formulations", type=_formulations, default=["est", "srb"],
                   help="formulations whose closed-loop runs supply plant trajectories")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_openloop)

    s = sub.add_parser("analyze", help="U tests between formulations and the critical-friction report")
    s.add_argument("--summaries", required=True, help="batch output directory (searched for trials.csv)")
    s.add_argument("--out", required=True)
    s.add_argument("--a-by-bar", type=float, default=5.0)
    s.add_argument("--mu", type=float, default=0.4)
    s.add_argument("--g", type=float, default=9.81)
    s.add_argument("--seed", type=_u64, help="accepted for interface uniformity; analysis is not random")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="write a synthetic heightmap or a built-in scenario")
    s.add_argument("--kind", choices=("flat", "ramp", "sine_ridge", "bump_field"))
    s.add_argument("--param", action="append", metavar="KEY=VALUE")
    s.add_argument("--builtin", choices=("benign", "stress"))
    s.add_argument("--seed", type=_u64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "workers", None) is None and hasattr(args, "workers"):
            args.workers = _default_workers()
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except (TmpcError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

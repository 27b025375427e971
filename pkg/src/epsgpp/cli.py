"""Command-line entry point: ``run``, ``verify`` and ``gen-field``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .field import FieldFormatError, load_field_csv, write_field_csv
from .gp import Domain, sample_field
from .harness import PLANNING_POLICIES, aggregate, default_start, run_episode

WORKERS_ENV = "EPSGPP_WORKERS"
RESULT_COLUMNS = ("policy", "seed", "step", "x", "y", "z", "reward", "reward_normalized",
                  "cum_reward", "max_reward", "tree_nodes")
SUMMARY_COLUMNS = ("policy", "step", "episodes", "cum_reward_mean", "cum_reward_se",
                   "max_reward_mean", "max_reward_se", "cum_nodes_mean", "cum_nodes_se")
TRACE_COLUMNS = ("policy", "seed", "step", "iteration", "nodes", "upper", "lower", "gap")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def make_field(cfg: cfgmod.ExperimentConfig, seed: int):
    path = cfg.field_path()
    if path is not None:
        return load_field_csv(path)
    f = cfg.field
    return sample_field(Domain.grid(f.width, f.height, f.cell_size), f.hyper, f.seed + seed)


def _job(args):
    cfg, policy_index, seed, want_trace = args
    spec = cfg.policies[policy_index]
    grid = make_field(cfg, seed)
    ep = cfg.episode(spec, seed)
    start = default_start(grid, cfg.field.loaded, ep.seed)
    rows = []
    trace = (lambda step, rec: rows.append((step, rec))) if want_trace else None
    try:
        res = run_episode(grid, ep, cfg.field.hyper, start, trace=trace)
    except Exception as exc:  # reported per episode in the manifest
        return policy_index, seed, None, rows, f"{type(exc).__name__}: {exc}"
    return policy_index, seed, res, rows, None


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _metadata(cfg, results) -> dict:
    pols = {}
    for i, spec in enumerate(cfg.policies):
        recs = [r for res in results.get(i, {}).values() for r in res.records]
        entry = {"policy": spec.policy, "horizon": spec.horizon}
        if spec.policy in PLANNING_POLICIES:
            hs = sorted({r.horizon for r in recs})
            entry["epsilon"] = spec.epsilon
            entry["lambda_by_horizon"] = {str(h): spec.epsilon / (h * (h + 1)) for h in hs}
            entry["budget"] = cfgmod._budget_dict(spec.budget)
            if recs:
                entry["n_range"] = [min(r.n_min for r in recs), max(r.n_max for r in recs)]
                entry["tau_range"] = [min(r.tau_min for r in recs), max(r.tau_max for r in recs)]
        pols[spec.label] = entry
    return {
        "schema_version": cfgmod.SCHEMA_VERSION,
        "config_hash": cfgmod.content_hash(cfg),
        "seeds": {"field": [cfg.field.seed + s for s in cfg.run.seeds] if not cfg.field.loaded else None,
                  "noise": [cfg.run.noise_seed + s for s in cfg.run.seeds]},
        "lambda_rule": "epsilon / (H'(H'+1)) with H' = min(horizon, steps remaining)",
        "policies": pols,
        "results_columns": list(RESULT_COLUMNS),
    }


def cmd_run(config_path, out=None, workers=None, trace=False) -> int:
    try:
        cfg = cfgmod.load(config_path)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(out) if out else cfg.base_dir / cfg.run.out
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(cfg, i, s, trace) for i in range(len(cfg.policies)) for s in cfg.run.seeds]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_job, jobs))
    else:
        outcomes = [_job(j) for j in jobs]

    results: dict[int, dict[int, object]] = {}
    traces, failed = [], []
    for i, seed, res, rows, err in outcomes:
        label = cfg.policies[i].label
        if err is not None:
            failed.append({"policy": label, "seed": seed, "error": err})
            print(f"episode {label}/seed {seed} failed: {err}", file=sys.stderr)
            continue
        results.setdefault(i, {})[seed] = res
        traces += [(label, seed, step, r.iteration, r.nodes, r.upper, r.lower, r.gap) for step, r in rows]

    rows, timing, summary = [], [], []
    for i, spec in enumerate(cfg.policies):
        by_seed = results.get(i, {})
        for seed in cfg.run.seeds:
            res = by_seed.get(seed)
            if res is None:
                continue
            for r in res.records:
                rows.append((spec.label, seed, r.step, r.x, r.y, r.z, r.reward, r.reward_normalized,
                             r.cum_reward, r.max_reward, r.tree_nodes))
                timing.append((spec.label, seed, r.step, r.wall_ms))
        if by_seed:
            s = aggregate([by_seed[k] for k in cfg.run.seeds if k in by_seed])
            for k in range(len(s.steps)):
                summary.append((spec.label, int(s.steps[k]), s.count,
                                float(s.cum_reward[k]), float(s.cum_reward_se[k]),
                                float(s.max_reward[k]), float(s.max_reward_se[k]),
                                float(s.cum_nodes[k]), float(s.cum_nodes_se[k])))

    _write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows)
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, summary)
    _write_csv(out_dir / "timings.csv", ("policy", "seed", "step", "wall_ms"), timing)
    if trace:
        _write_csv(out_dir / "trace.csv", TRACE_COLUMNS, traces)
    (out_dir / "config.yaml").write_text(cfgmod.dumps(cfg))
    (out_dir / "metadata.json").write_text(json.dumps(_metadata(cfg, results), indent=2) + "\n")
    manifest = {
        "complete": not failed,
        "episodes_total": len(jobs),
        "episodes_done": len(jobs) - len(failed),
        "failed": failed,
        "files": sorted(p.name for p in out_dir.iterdir() if p.name != "manifest.json"),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 1 if failed else 0


def cmd_verify(report=None) -> int:
    from .verify import failure_report, run_all

    results = run_all()
    if all(r.passed for r in results):
        print("all checks passed")
        return 0
    text = failure_report(results)
    if report:
        Path(report).write_text(text + "\n")
        print(f"failing instances written to {report}", file=sys.stderr)
    else:
        print(text, file=sys.stderr)
    return 1


def cmd_gen_field(config_path, out_csv, seed=0) -> int:
    try:
        cfg = cfgmod.load(config_path)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if cfg.field.loaded:
        print("config error: gen-field needs a field.generate section", file=sys.stderr)
        return 2
    try:
        write_field_csv(make_field(cfg, seed), out_csv)
    except (OSError, FieldFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epsgpp", description="Nonmyopic GP planning experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every (policy, seed) episode in a config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: run.out next to the config)")
    r.add_argument("--workers", type=int, help=f"parallel episodes (default ${WORKERS_ENV} or 1)")
    r.add_argument("--trace", action="store_true", help="write per-iteration anytime bounds to trace.csv")
    v = sub.add_parser("verify", help="check the planning guarantees on tiny instances")
    v.add_argument("--report", help="write failing instances as JSON to this file")
    g = sub.add_parser("gen-field", help="sample a field realization to CSV")
    g.add_argument("config")
    g.add_argument("out_csv")
    g.add_argument("--seed", type=int, default=0, help="episode seed offset added to field.generate.seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        if args.workers is not None and args.workers < 1:
            print("--workers must be >= 1", file=sys.stderr)
            return 2
        return cmd_run(args.config, args.out, args.workers, args.trace)
    if args.command == "verify":
        return cmd_verify(args.report)
    return cmd_gen_field(args.config, args.out_csv, args.seed)


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runner CLI.

Verbs: run, sweep-segment, compare-schedulers, allocate, validate. Every run
writes a self-contained directory (config snapshot, seed, metrics.json,
metrics.csv, events.jsonl) so any result can be reproduced from its directory
alone.

Environment overrides: PCDNSIM_SEED, PCDNSIM_OUT, PCDNSIM_SCHEDULER,
PCDNSIM_REPS (flags win over the environment).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

from pcdnsim import tracker as tr
from pcdnsim.scheduler import POLICY_NAMES
from pcdnsim.simnet import scenario as sim
from pcdnsim.simnet.config import ConfigError, ScenarioConfig, parse_scenario, scenario_with
from pcdnsim.simnet.metrics import MetricsReport, csv_text

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

FULL_SEGMENT_S = 100_000.0  # one segment covers any desk-scale video


def _env(name, cast, default=None):
    raw = os.environ.get(name)
    if raw is None:
        return default
    return cast(raw)


def _atomic_dir(parent: Path, name: str) -> Path:
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=parent, prefix=f".{name}."))
    final = parent / name
    if final.exists():
        raise FileExistsError(f"output directory exists: {final}")
    os.rename(tmp, final)
    return final


def _write_run_dir(out: Path, name: str, doc: dict, config: ScenarioConfig,
                   result: sim.RunResult) -> Path:
    run_dir = _atomic_dir(out, name)
    snapshot = dict(doc)
    snapshot["seed"] = config.seed
    snapshot["scheduler"] = config.scheduler
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True))
    (run_dir / "seed").write_text(str(config.seed) + "\n")
    (run_dir / "metrics.json").write_text(result.metrics.to_json() + "\n")
    (run_dir / "metrics.csv").write_text(csv_text([result.metrics]))
    with open(run_dir / "events.jsonl", "w") as fh:
        for event in result.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    return run_dir


def _load(args) -> tuple[ScenarioConfig, dict]:
    with open(args.config) as fh:
        doc = json.load(fh)
    config = parse_scenario(doc)
    seed = args.seed if args.seed is not None else _env("PCDNSIM_SEED", int)
    if seed is not None:
        config = scenario_with(config, seed=seed)
    scheduler = args.scheduler or _env("PCDNSIM_SCHEDULER", str)
    if scheduler is not None:
        if scheduler not in POLICY_NAMES:
            raise ConfigError([f"scheduler: must be one of {', '.join(POLICY_NAMES)}"])
        config = scenario_with(config, scheduler=scheduler)
    return config, doc


def _out_dir(args) -> Path:
    out = args.out or _env("PCDNSIM_OUT", str)
    if out is None:
        raise ConfigError(["--out: output directory required"])
    return Path(out)


def _print_table(headers: list[str], rows: list[list]) -> None:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(headers)]
    line = "  ".join(str(h).ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("-" * len(line))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


# --- verbs -------------------------------------------------------------------

def cmd_run(args) -> int:
    config, doc = _load(args)
    out = _out_dir(args)
    reps = args.reps if args.reps is not None else _env("PCDNSIM_REPS", int, 1)
    reports: list[MetricsReport] = []
    for k in range(reps):
        cfg_k = scenario_with(config, seed=config.seed + k)
        result = sim.run(cfg_k)
        run_dir = _write_run_dir(out, f"run-seed{cfg_k.seed}", doc, cfg_k, result)
        reports.append(result.metrics)
        print(f"seed {cfg_k.seed}: {run_dir}")
    reports.sort(key=lambda m: m.seed)
    (out / "summary.csv").write_text(csv_text(reports))
    _print_table(
        ["seed", "videos", "rebuf_rate", "jump", "peer_share", "hit", "cost"],
        [[m.seed, m.videos_started, f"{m.rebuffer_rate:.3f}", f"{m.jump_rate:.3f}",
          f"{m.peer_traffic_share:.3f}", f"{m.cache_hit_ratio:.3f}", f"{m.cost:.0f}"]
         for m in reports])
    return EXIT_OK


def _parse_sizes(spec: str) -> list[float]:
    sizes = []
    for token in spec.split(","):
        token = token.strip()
        if token == "full":
            sizes.append(FULL_SEGMENT_S)
        else:
            sizes.append(float(token))
    if not sizes:
        raise ConfigError(["--sizes: empty list"])
    return sizes


def cmd_sweep_segment(args) -> int:
    config, doc = _load(args)
    out = _out_dir(args)
    sizes = _parse_sizes(args.sizes)
    rows = []
    table = []
    for size in sorted(sizes):
        label = "full" if size >= FULL_SEGMENT_S else f"{size:g}s"
        wl = dataclasses.replace(config.workload, segment_len_s=size)
        cfg = scenario_with(config, workload=wl)
        result = sim.run(cfg)
        _write_run_dir(out, f"sweep-{label}", doc, cfg, result)
        m = result.metrics
        rows.append({"segment_len": label, "waste_bytes": m.waste_bytes,
                     "rebuffer_events": round(m.rebuffer_rate * m.videos_started),
                     "rebuffer_time_per_100s": m.rebuffer_time_per_100s})
        table.append([label, m.waste_bytes, round(m.rebuffer_rate * m.videos_started),
                      f"{m.rebuffer_time_per_100s:.3f}"])
    (out / "sweep.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    _print_table(["segment", "waste_bytes", "rebuffer_events", "rebuffer_per_100s"], table)
    return EXIT_OK


def cmd_compare_schedulers(args) -> int:
    config, doc = _load(args)
    out = _out_dir(args)
    baseline = args.baseline
    results: dict[str, MetricsReport] = {}
    for policy in POLICY_NAMES:
        cfg = scenario_with(config, scheduler=policy)
        result = sim.run(cfg)
        _write_run_dir(out, f"sched-{policy}", doc, cfg, result)
        results[policy] = result.metrics
    base = results[baseline]
    rows = []
    for policy in POLICY_NAMES:
        m = results[policy]
        delta = (m.pcdn_mean_segment_ms / base.pcdn_mean_segment_ms - 1.0) * 100 \
            if base.pcdn_mean_segment_ms else 0.0
        rows.append([policy, f"{m.pcdn_mean_segment_ms:.1f}",
                     f"{delta:+.1f}%", f"{m.redundancy_rate * 100:.2f}%",
                     f"{m.jump_rate * 100:.2f}%"])
    (out / "compare.json").write_text(json.dumps(
        {p: {"pcdn_mean_segment_ms": results[p].pcdn_mean_segment_ms,
             "redundancy_rate": results[p].redundancy_rate,
             "jump_rate": results[p].jump_rate} for p in POLICY_NAMES},
        indent=2, sort_keys=True))
    _print_table(["policy", "seg_ms", f"vs {baseline}", "redundancy", "jump_rate"], rows)
    return EXIT_OK


def cmd_allocate(args) -> int:
    with open(args.inputs) as fh:
        doc = json.load(fh)
    inputs = tr.load_allocation_inputs(doc)
    errors = inputs.validate()
    if errors:
        for e in errors:
            print(f"invalid: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    totals = tr.decompose_requirements(inputs)
    dec = tr.vendor_decomposition(inputs, totals)
    plan = tr.greedy_allocate(tr.default_instances(inputs),
                              sorted(inputs.domains.values(), key=lambda d: -d.priority),
                              dec.expected)
    print("per-(region, business) capacity:")
    _print_table(["region", "business", "bps"],
                 [[r, s, float(v)] for (r, s), v in sorted(totals.items())])
    print("\nper-(region, vendor, business):")
    _print_table(["region", "vendor", "business", "bps"],
                 [[r, v, s, float(x)] for (r, v, s), x in sorted(dec.per_business.items())])
    print("\nexpected per-(region, vendor, domain):")
    _print_table(["region", "vendor", "domain", "bps"],
                 [[r, v, d, float(x)] for (r, v, d), x in sorted(dec.expected.items())])
    print("\ngreedy plan:")
    _print_table(["region", "vendor", "domain", "allocated"],
                 [[r, v, d, float(x)] for (r, v, d), x in sorted(plan.allocations.items())])
    if plan.shortfalls:
        print("\nshortfalls:")
        _print_table(["region", "vendor", "domain", "missing"],
                     [[r, v, d, float(x)] for (r, v, d), x in sorted(plan.shortfalls.items())])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "totals": {f"{r}/{s}": float(v) for (r, s), v in sorted(totals.items())},
            "per_business": {f"{r}/{v}/{s}": float(x)
                             for (r, v, s), x in sorted(dec.per_business.items())},
            "expected": {f"{r}/{v}/{d}": float(x)
                         for (r, v, d), x in sorted(dec.expected.items())},
            "allocations": {f"{r}/{v}/{d}": float(x)
                            for (r, v, d), x in sorted(plan.allocations.items())},
            "shortfalls": {f"{r}/{v}/{d}": float(x)
                           for (r, v, d), x in sorted(plan.shortfalls.items())},
            "leftover": float(plan.leftover),
        }
        (out / "allocation.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    with open(args.config) as fh:
        doc = json.load(fh)
    parse_scenario(doc)
    print("config ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcdnsim",
                                     description="hybrid CDN / peer-network simulator")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config=True, out=True):
        if config:
            p.add_argument("--config", required=True, help="scenario config JSON")
        if out:
            p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--scheduler", choices=POLICY_NAMES, help="scheduler override")

    p_run = sub.add_parser("run", help="run one scenario (optionally repeated)")
    common(p_run)
    p_run.add_argument("--reps", type=int, help="repetitions with consecutive seeds")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep-segment", help="segment-size sweep on one seed")
    common(p_sweep)
    p_sweep.add_argument("--sizes", default="5,10,15,full",
                         help="comma list of seconds, plus 'full'")
    p_sweep.set_defaults(fn=cmd_sweep_segment)

    p_cmp = sub.add_parser("compare-schedulers", help="same workload, every scheduler")
    common(p_cmp)
    p_cmp.add_argument("--baseline", default="minrtt", choices=POLICY_NAMES)
    p_cmp.set_defaults(fn=cmd_compare_schedulers)

    p_alloc = sub.add_parser("allocate", help="bandwidth decomposition and greedy plan")
    p_alloc.add_argument("--inputs", required=True, help="allocation inputs JSON")
    p_alloc.add_argument("--out", help="directory for allocation.json")
    p_alloc.set_defaults(fn=cmd_allocate)

    p_val = sub.add_parser("validate", help="validate a scenario config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(fn=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(exc, ValueError) else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``charm gen``, ``charm run`` and ``charm report``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 file or
format errors, 4 numerical failures. When ``--out`` is not given, outputs
go to ``$CHARM_OUTPUT_DIR`` (default: the current directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import PRESETS, RunConfig, load_config, preset
from .errors import ConfigError, NumericError, ResultsParseError
from .harness import (METHODS, ConditionSummary, TrialRecord, aggregate, generate_locations,
                      location_seed, run_sweep)
from .storage import read_records, read_scenario_set, write_records, write_scenario_set

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
OUTPUT_DIR_ENV = "CHARM_OUTPUT_DIR"

# x axis, plotted quantity and log-y flag per figure
FIGURES = {
    "fig2": ("T", "nmse_db", False),
    "fig3": ("snr_db", "nmse_db", False),
    "fig4": ("bias_std", "nmse_db", False),
    "fig5": ("T", "runtime_ms", True),
}

log = logging.getLogger("charm")


def _output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or ".")


def _resolve_out(arg: Optional[str], default_name: str) -> Path:
    return Path(arg) if arg else _output_dir() / default_name


def _base_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    scenario = cfg.scenario
    if args.seed is not None:
        scenario = replace(scenario, master_seed=args.seed)
    if getattr(args, "on_grid", False):
        scenario = replace(scenario, on_grid=True)
    if getattr(args, "locations", None) is not None:
        scenario = replace(scenario, n_locations=args.locations)
    if getattr(args, "trials", None) is not None:
        scenario = replace(scenario, trials_per_location=args.trials)
    return replace(cfg, scenario=scenario)


# ----------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    cfg = _base_config(args)
    out = _resolve_out(args.out, "scenarios")
    scfg = cfg.scenario
    locations = generate_locations(cfg.system, scfg)
    seeds = [location_seed(scfg.master_seed, n) for n in range(scfg.n_locations)]
    files = write_scenario_set(out, cfg.system, locations, seeds, scfg.master_seed)
    print(f"wrote {len(files)} scenarios + manifest to {out}")
    print(f"{'location':>8}  {'paths':>5}  seed")
    for n, ((truth, _), seed) in enumerate(zip(locations, seeds)):
        print(f"{n:>8}  {len(truth):>5}  {seed}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# run


def _parse_methods(text: str) -> tuple:
    return tuple(m.strip() for m in text.split(",") if m.strip())


def cmd_run(args) -> int:
    cfg = _base_config(args)
    if args.preset:
        cfg = cfg.with_preset(args.preset)
    if args.methods:
        cfg = replace(cfg, methods=_parse_methods(args.methods))
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    out = Path(args.out) if args.out else _output_dir() / cfg.output.results

    system, locations = cfg.system, None
    scenario_dir = args.scenarios or cfg.output.scenarios
    if scenario_dir:
        system, locations = read_scenario_set(scenario_dir)
        cfg = replace(cfg, scenario=replace(cfg.scenario, n_locations=len(locations)))

    records = run_sweep(cfg.sweep, cfg.methods, system, cfg.scenario, cfg.estimator, cfg.omp,
                        cfg.lmmse, locations=locations, jobs=jobs)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records(out, records)
    failures = sum(r.failed for r in records)
    print(f"wrote {len(records)} records to {out}" + (f" ({failures} failed trials)" if failures else ""))
    print(format_table(aggregate(records)))
    return EXIT_OK


# ----------------------------------------------------------------------------
# report


def _fmt_runtime(value: float) -> str:
    return "n/a" if math.isnan(value) else f"{value:.1f}"


def format_table(summaries: Sequence[ConditionSummary]) -> str:
    """Aligned per-condition table with NMSE, median runtime and speedup over omp3d."""
    groups: Dict[tuple, List[ConditionSummary]] = {}
    for s in summaries:
        groups.setdefault((s.T, s.snr_db, s.bias_std), []).append(s)
    blocks = []
    for (T, snr_db, bias_std), rows in sorted(groups.items()):
        ref = next((s.runtime_ms_median for s in rows if s.method == "omp3d"), float("nan"))
        lines = [f"T={T}  SNR={snr_db:g} dB  bias={bias_std:g}",
                 f"{'Method':<16}{'NMSE (dB)':>11}{'Runtime (ms)':>14}{'Speedup':>10}{'Trials':>8}"]
        for s in rows:
            speedup = ref / s.runtime_ms_median if ref > 0 and s.runtime_ms_median > 0 else float("nan")
            sp = "n/a" if math.isnan(speedup) else f"{speedup:.1f}x"
            nm = "n/a" if math.isnan(s.nmse_db) else f"{s.nmse_db:+.2f}"
            trials = f"{s.count - s.failures}/{s.count}"
            lines.append(f"{s.method:<16}{nm:>11}{_fmt_runtime(s.runtime_ms_median):>14}{sp:>10}{trials:>8}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def plot_data(records: Sequence[TrialRecord], figure: str):
    """Rows ``[x, value per method]`` for one figure, at the preset's fixed point."""
    x_name, metric, log_y = FIGURES[figure]
    sweep, _ = preset(figure)
    fixed = {"T": sweep.T, "snr_db": sweep.snr_db, "bias_std": sweep.bias_std}
    fixed.pop(x_name)
    chosen = [r for r in records if all(getattr(r, k) == v for k, v in fixed.items())]
    if not chosen:
        raise ConfigError(f"no records at the {figure} operating point {fixed}")
    summaries = aggregate(chosen)
    methods = [m for m in METHODS if any(s.method == m for s in summaries)]
    methods += sorted({s.method for s in summaries} - set(methods))
    field = "nmse_db" if metric == "nmse_db" else "runtime_ms_median"
    table: Dict[float, Dict[str, float]] = {}
    for s in summaries:
        table.setdefault(getattr(s, x_name), {})[s.method] = getattr(s, field)
    rows = [[x] + [table[x].get(m, float("nan")) for m in methods] for x in sorted(table)]
    meta = {"figure": figure, "x": x_name, "y": metric, "log_y": log_y, "methods": methods,
            "fixed": fixed}
    return methods, rows, meta


PLOT_STUB = '''"""Render {figure} from {csv_name} (requires matplotlib)."""
import csv
import json

import matplotlib.pyplot as plt

meta = json.load(open("{json_name}"))
with open("{csv_name}") as fh:
    rows = list(csv.reader(fh))
header, data = rows[0], [[float(v) for v in r] for r in rows[1:]]
for col, name in enumerate(header[1:], start=1):
    plt.plot([r[0] for r in data], [r[col] for r in data], marker="o", label=name)
if meta["log_y"]:
    plt.yscale("log")
plt.xlabel(meta["x"])
plt.ylabel(meta["y"])
plt.grid(True, alpha=0.3)
plt.legend()
plt.savefig("{figure}.png", dpi=150, bbox_inches="tight")
'''


def write_plot_data(records, figure: str, out_dir: Path) -> Path:
    methods, rows, meta = plot_data(records, figure)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{figure}.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join([meta["x"]] + methods) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    (out_dir / f"{figure}.json").write_text(json.dumps(meta, indent=2) + "\n")
    (out_dir / f"plot_{figure}.py").write_text(
        PLOT_STUB.format(figure=figure, csv_name=csv_path.name, json_name=f"{figure}.json"))
    return csv_path


def cmd_report(args) -> int:
    records = read_records(args.input)
    if not records:
        raise ConfigError(f"{args.input}: no result records")
    show_table = args.table or not args.figure
    if show_table:
        print(format_table(aggregate(records)))
    for figure in args.figure or ():
        path = write_plot_data(records, figure, _resolve_out(args.out, "plots"))
        print(f"wrote {path}")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="charm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--on-grid", action="store_true", help="snap scenario parameters to the grids")
        p.add_argument("--locations", type=int, help="number of locations")

    gen = sub.add_parser("gen", help="write synthetic scenario files")
    common(gen)
    gen.add_argument("--out", help="output directory")
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run an experiment sweep")
    common(run)
    run.add_argument("--preset", choices=sorted(PRESETS), help="named experiment")
    run.add_argument("--out", help="results CSV path")
    run.add_argument("--jobs", type=int, help="worker processes")
    run.add_argument("--scenarios", help="directory written by 'charm gen'")
    run.add_argument("--methods", help=f"comma-separated subset of: {','.join(METHODS)}")
    run.add_argument("--trials", type=int, help="trials per location")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize a results file")
    rep.add_argument("--in", dest="input", required=True, help="results CSV")
    rep.add_argument("--figure", action="append", choices=sorted(FIGURES),
                     help="emit plot data for this figure (repeatable)")
    rep.add_argument("--table", action="store_true", help="print the summary table")
    rep.add_argument("--out", help="directory for plot data")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ResultsParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

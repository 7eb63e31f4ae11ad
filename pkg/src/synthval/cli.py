"""Command-line entry point: ``synthval {select,estimate,benchmark,simulate}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, load_json, load_run_config, resolve_workers
from .dataset import DatasetError, RngSeed, load_csv, write_csv
from .methods import ESTIMATORS, EffectEstimate, make_registry, run_method
from .scenarios import (
    HARNESS_COLUMNS,
    BenchmarkConfig,
    builtin_scenarios,
    generate,
    load_scenarios,
    run_benchmark,
)
from .selection import SelectionError, run_synth_validation

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
COMPLETE_FRACTION = 0.9


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _fmt(v) -> str:
    return "failed" if v is None else f"{v:.6g}"


def cmd_select(data: str, config: str | None, out: str | None,
               seed: int | None = None, threads: int | None = None) -> int:
    try:
        d = load_csv(data)
        raw = load_json(config)
        cfg = RunConfig.from_dict({**raw, **({} if seed is None else {"seed": seed})})
        workers = resolve_workers(threads if threads is not None else raw.get("threads"))
    except (OSError, DatasetError, ConfigError, ValueError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    try:
        report = run_synth_validation(d, cfg, workers=workers)
    except SelectionError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    text = report.to_json()
    if out:
        _write(out, text)
    print(f"chosen method: {report.chosen}  (estimate {_fmt(report.chosen_estimate)})")
    print(f"{'method':<10} {'mean |error|':>14} {'real estimate':>14}")
    for m in report.method_ids:
        flag = "" if report.eligible[m] else "  (ineligible)"
        print(f"{m:<10} {_fmt(report.mean_errors[m]):>14} {_fmt(report.real_estimates.get(m)):>14}{flag}")
    if not out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_estimate(data: str, method: str, config: str | None = None, seed: int | None = None) -> int:
    if method not in ESTIMATORS:
        return _fail(EXIT_INVALID, f"unknown method {method!r}; valid ids: {', '.join(ESTIMATORS)}")
    try:
        d = load_csv(data)
        cfg = load_run_config(config, seed=seed)
    except (OSError, DatasetError, ConfigError, ValueError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    (m,) = make_registry([method])
    res = run_method(m, d, cfg.cv, RngSeed(cfg.seed), cfg.caliper_scale)
    if not isinstance(res, EffectEstimate):
        return _fail(EXIT_RUNTIME, f"[estimate] {res.message}")
    sys.stdout.write(_dump({"method": res.method, "estimate": res.value, "diagnostics": res.diagnostics}))
    return EXIT_OK


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HARNESS_COLUMNS)
        for r in rows:
            writer.writerow([_csv_value(r[c]) for c in HARNESS_COLUMNS])


def summary_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".summary.json")


def cmd_benchmark(config: str | None, out: str, seed: int | None = None, threads: int | None = None,
                  scenarios: Sequence[int] | None = None, n: int | None = None,
                  reps: int | None = None) -> int:
    try:
        raw = load_json(config)
        cfg = BenchmarkConfig.from_dict(raw).replace(
            seed=seed, threads=threads, scenarios=tuple(scenarios) if scenarios else None,
            n=n, reps=reps,
        )
        workers = resolve_workers(threads if threads is not None else (cfg.threads if "threads" in raw else None))
    except (OSError, ConfigError, ValueError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    try:
        rows, summary = run_benchmark(cfg, workers)
    except Exception as exc:  # harness setup failure; per-cell errors are in the rows
        return _fail(EXIT_RUNTIME, f"[benchmark] {type(exc).__name__}: {exc}")
    write_rows(rows, out)
    _write(summary_path(out), _dump(summary))
    done = summary["complete_fraction"]
    print(f"{summary['cells']} cells, {done:.1%} of error rows complete")
    for name, entry in summary["mean_abs_error"].items():
        print(f"{name:<24} mean |error| {_fmt(entry['all'])}")
    if done < COMPLETE_FRACTION:
        return _fail(EXIT_RUNTIME, f"only {done:.1%} of cells completed")
    return EXIT_OK


def cmd_simulate(scenario: int, n: int, seed: int, out: str, config: str | None = None) -> int:
    try:
        if n < 1:
            raise ConfigError(f"n must be positive, got {n}")
        catalogue = builtin_scenarios(n)
        if config:
            catalogue.update({k: v.with_n(n) for k, v in load_scenarios(config).items()})
        if scenario not in catalogue:
            raise ConfigError(f"unknown scenario {scenario}; known ids: {sorted(catalogue)}")
        spec = catalogue[scenario]
        d, truth = generate(spec, RngSeed(seed))
    except (OSError, ConfigError, ValueError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    except RuntimeError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    write_csv(d, out)
    sidecar = {"scenario": scenario, "n": d.n, "seed": seed, "true_ate": truth}
    _write(Path(out).with_suffix(".json"), _dump(sidecar))
    print(f"wrote {d.n} rows to {out}")
    return EXIT_OK


def _id_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="choose an estimator for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("estimate", help="run one estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("benchmark", help="run the scenario evaluation harness")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="long-format CSV; summary goes to <stem>.summary.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--scenario", type=_id_list)
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("simulate", help="write one simulated dataset")
    p.add_argument("--scenario", type=int, required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of extra scenario specs")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.command == "select":
        return cmd_select(args.data, args.config, args.out, args.seed, args.threads)
    if args.command == "estimate":
        return cmd_estimate(args.data, args.method, args.config, args.seed)
    if args.command == "benchmark":
        return cmd_benchmark(args.config, args.out, args.seed, args.threads,
                             args.scenario, args.n, args.reps)
    return cmd_simulate(args.scenario, args.n, args.seed, args.out, args.config)


if __name__ == "__main__":
    sys.exit(main())

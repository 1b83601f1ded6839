"""Command-line front end: single runs, scenario comparisons, sweeps, calibration.

    pandemic-abm run       --config scenario.yaml --out results/
    pandemic-abm compare   --config scenario.yaml --scenarios NI,SQ,VACC,CT
    pandemic-abm sweep     --config scenario.yaml --param app_adoption_rate \\
                           --values 0.2,0.4,0.6,0.8
    pandemic-abm calibrate --config scenario.yaml --target-r 5.02

Any scenario key can be overridden with repeated `--set key=value` flags
(dot paths reach nested tables, e.g. `--set network_weights.household=1.5`).
Log verbosity comes from PANDEMIC_ABM_LOG={error|info|debug}.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import yaml

from .config import ConfigError, apply_overrides, build_config
from .disease import CalibrationError, calibrate_beta, measure_r
from .engine import aggregate, run_ensemble
from .output import write_outputs

log = logging.getLogger(__name__)

# Intervention toggle sets for the standard comparison scenarios.  SQ and CT
# include testing because quarantine and tracing trigger on positive results.
SCENARIO_PRESETS: dict[str, dict[str, bool]] = {
    "NI": dict(
        use_rtpcr_test_logic=False,
        poc_test_on_symptoms=False,
        use_quarantine_logic=False,
        use_den_logic=False,
        use_mct_logic=False,
        use_vaccination_logic=False,
    ),
    "SQ": dict(
        use_rtpcr_test_logic=True,
        poc_test_on_symptoms=False,
        use_quarantine_logic=True,
        use_den_logic=False,
        use_mct_logic=False,
        use_vaccination_logic=False,
    ),
    "VACC": dict(
        use_rtpcr_test_logic=False,
        poc_test_on_symptoms=False,
        use_quarantine_logic=False,
        use_den_logic=False,
        use_mct_logic=False,
        use_vaccination_logic=True,
    ),
    "CT": dict(
        use_rtpcr_test_logic=True,
        poc_test_on_symptoms=False,
        use_quarantine_logic=True,
        use_den_logic=True,
        use_mct_logic=True,
        use_vaccination_logic=False,
    ),
    "ALL": dict(
        use_rtpcr_test_logic=True,
        poc_test_on_symptoms=False,
        use_quarantine_logic=True,
        use_den_logic=True,
        use_mct_logic=True,
        use_vaccination_logic=True,
    ),
}


def _setup_logging() -> None:
    level = os.environ.get("PANDEMIC_ABM_LOG", "info").lower()
    numeric = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level, logging.INFO
    )
    logging.basicConfig(level=numeric, format="%(levelname)s %(name)s: %(message)s")


def _parse_set_flags(flags: list[str] | None) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for flag in flags or []:
        if "=" not in flag:
            raise ConfigError(f"--set expects key=value, got {flag!r}")
        key, _, value = flag.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def _load_raw(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: scenario file must be a YAML mapping")
    return raw


def _config_from_args(args, extra: dict | None = None):
    raw = _load_raw(args.config)
    overrides = _parse_set_flags(getattr(args, "set", None))
    if getattr(args, "runs", None) is not None:
        overrides["num_runs"] = str(args.runs)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    raw = apply_overrides(raw, overrides)
    if extra:
        raw.update(extra)
    config = build_config(raw)
    if config.debug and "PANDEMIC_ABM_LOG" not in os.environ:
        logging.getLogger().setLevel(logging.DEBUG)
    return config


def _run_scenario(config, jobs: int):
    started = time.perf_counter()
    results = run_ensemble(config, jobs=jobs)
    summary = aggregate(results)
    log.info(
        "scenario %s: %d runs x %d steps in %.1fs",
        config.results_file_postfix,
        config.num_runs,
        config.num_steps,
        time.perf_counter() - started,
    )
    return results, summary


def cmd_run(args) -> int:
    config = _config_from_args(args)
    if args.events:
        from .engine import aggregate, run_ensemble
        from .interventions import write_events_csv

        results = run_ensemble(config, jobs=1, record_events=True)
        summary = aggregate(results)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for i, result in enumerate(results):
            write_events_csv(
                result.events, out / f"events_{config.results_file_postfix}_run{i}.csv"
            )
    else:
        results, summary = _run_scenario(config, args.jobs)
    write_outputs(summary, results, config, args.out, plot=args.plot)
    return 0


def cmd_compare(args) -> int:
    names = [s.strip().upper() for s in args.scenarios.split(",") if s.strip()]
    for name in names:
        if name not in SCENARIO_PRESETS:
            raise ConfigError(
                f"unknown scenario {name!r}; choose from {sorted(SCENARIO_PRESETS)}"
            )
    rows = []
    for name in names:
        extra = dict(SCENARIO_PRESETS[name])
        extra["results_file_postfix"] = name
        config = _config_from_args(args, extra=extra)
        results, summary = _run_scenario(config, args.jobs)
        write_outputs(summary, results, config, args.out, plot=args.plot)
        rows.append(
            [
                name,
                summary.final_cumulative_fraction,
                summary.peak_hospitalizations,
                summary.peak_hospitalization_day,
                summary.peak_daily_infections,
                summary.peak_infection_day,
                summary.mean["deaths"][-1] if config.num_steps else 0.0,
                summary.total_cost,
            ]
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "scenario",
                "final_cumulative_fraction",
                "peak_hospitalizations",
                "peak_hospitalization_day",
                "peak_daily_infections",
                "peak_infection_day",
                "deaths",
                "total_cost",
            ]
        )
        writer.writerows(rows)
    return 0


def _sweep_values(args) -> list:
    if args.values:
        return [yaml.safe_load(v) for v in args.values.split(",") if v.strip()]
    if args.range:
        try:
            lo, hi, steps = args.range.split(":")
            lo, hi, steps = float(lo), float(hi), int(steps)
        except ValueError as exc:
            raise ConfigError(f"--range expects lo:hi:steps, got {args.range!r}") from exc
        if steps < 1:
            raise ConfigError("--range needs at least one step")
        if steps == 1:
            return [lo]
        return [lo + (hi - lo) * i / (steps - 1) for i in range(steps)]
    raise ConfigError("sweep needs --values or --range")


SWEEP_METRICS = ("peak_hospitalizations", "cumulative_infections", "total_cost")


def cmd_sweep(args) -> int:
    values = _sweep_values(args)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for metric in metrics:
        if metric not in SWEEP_METRICS:
            raise ConfigError(f"unknown metric {metric!r}; choose from {SWEEP_METRICS}")

    import numpy as np

    rows = []
    for value in values:
        raw = apply_overrides(_load_raw(args.config), _parse_set_flags(args.set))
        raw = apply_overrides(raw, {args.param: value})
        if args.runs is not None:
            raw["num_runs"] = args.runs
        if args.seed is not None:
            raw["seed"] = args.seed
        config = build_config(raw)
        _, summary = _run_scenario(config, args.jobs)
        for metric in metrics:
            samples = np.asarray(summary.per_run[metric], dtype=np.float64)
            mean = float(samples.mean()) if len(samples) else 0.0
            std = float(samples.std(ddof=1)) if len(samples) > 1 else 0.0
            rows.append([args.param, value, metric, mean, std])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    safe = args.param.replace(".", "_")
    path = out / f"sweep_{safe}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "value", "metric", "mean", "std"])
        writer.writerows(rows)
    log.info("sweep over %s: %d points -> %s", args.param, len(values), path)
    return 0


def cmd_calibrate(args) -> int:
    config = _config_from_args(args)
    target = args.target_r if args.target_r is not None else config.disease.target_r
    beta = calibrate_beta(config, target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overlay_path = out / args.overlay_name
    overlay_path.write_text(yaml.safe_dump({"beta": beta}))
    if args.check:
        measured = measure_r(config, beta, n_index=config.calibration_index_cases, salt=2)
        print(f"beta={beta:.8g} re-measured R={measured:.4f} (target {target})")
    else:
        print(f"beta={beta:.8g}")
    log.info("wrote %s", overlay_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pandemic-abm",
        description="Agent-based epidemic simulator with composable interventions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runs=True):
        p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config key (repeatable, dot paths allowed)",
        )
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if runs:
            p.add_argument("--runs", type=int, default=None, help="override num_runs")
            p.add_argument("--plot", action="store_true", help="also write SVG charts")

    p_run = sub.add_parser("run", help="run one scenario ensemble")
    common(p_run)
    p_run.add_argument(
        "--events", action="store_true", help="also write per-run event-log CSVs (serial)"
    )
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run the standard scenario presets")
    common(p_cmp)
    p_cmp.add_argument(
        "--scenarios",
        default="NI,SQ,VACC,CT,ALL",
        help="comma list from NI,SQ,VACC,CT,ALL",
    )
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="sweep one parameter across an ensemble per value")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="dot-path of the swept key")
    p_sweep.add_argument("--values", default=None, help="comma-separated values")
    p_sweep.add_argument("--range", default=None, help="lo:hi:steps linear grid")
    p_sweep.add_argument(
        "--metrics",
        default=",".join(SWEEP_METRICS),
        help=f"comma list from {SWEEP_METRICS}",
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_cal = sub.add_parser("calibrate", help="solve for beta hitting a target R")
    common(p_cal, runs=False)
    p_cal.add_argument("--target-r", type=float, default=None, help="defaults to config R")
    p_cal.add_argument(
        "--overlay-name", default="beta_overlay.yaml", help="emitted overlay file name"
    )
    p_cal.add_argument(
        "--check", action="store_true", help="re-measure R at the calibrated beta"
    )
    p_cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Result serialization: time-series CSV, summary JSON, optional SVG charts.

Outputs are bit-stable for identical summaries: floats are formatted with
repr (shortest round-trip), JSON keys are emitted in a fixed order, and
SVG rendering pins matplotlib's hash salt and strips date metadata.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, serialize_config
from .engine import SERIES_NAMES, RunResult, Summary

log = logging.getLogger(__name__)


def _fmt(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_outputs(
    summary: Summary,
    runs: list[RunResult],
    config: ScenarioConfig,
    out_dir,
    plot: bool = False,
) -> list[Path]:
    """Write timeseries CSV, summary JSON, and the resolved scenario file.

    Returns the written paths; adds one SVG chart file when `plot` is set.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    postfix = config.results_file_postfix
    paths = []

    csv_path = out / f"timeseries_{postfix}.csv"
    _write_timeseries_csv(summary, csv_path)
    paths.append(csv_path)

    json_path = out / f"summary_{postfix}.json"
    json_path.write_text(_summary_json(summary, config))
    paths.append(json_path)

    params_path = out / config.generated_params_file_name
    params_path.write_text(serialize_config(config))
    paths.append(params_path)

    if plot:
        svg_path = out / f"charts_{postfix}.svg"
        _write_charts(summary, config, svg_path)
        paths.append(svg_path)

    log.info("wrote %d output file(s) to %s", len(paths), out)
    return paths


def _write_timeseries_csv(summary: Summary, path: Path) -> None:
    header = ["step"]
    for name in SERIES_NAMES:
        header += [f"{name}_mean", f"{name}_std"]
    for band in range(9):
        header += [f"cumulative_infections_age_{band}_mean", f"cumulative_infections_age_{band}_std"]

    steps = len(summary.mean["new_infections"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(steps):
            row = [t]
            for name in SERIES_NAMES:
                row += [_fmt(summary.mean[name][t]), _fmt(summary.std[name][t])]
            for band in range(9):
                row += [_fmt(summary.age_mean[t, band]), _fmt(summary.age_std[t, band])]
            writer.writerow(row)


def _summary_json(summary: Summary, config: ScenarioConfig) -> str:
    n = config.num_agents
    payload = {
        "scenario": config.results_file_postfix,
        "config_hash": config.config_hash,
        "num_agents": n,
        "num_steps": config.num_steps,
        "num_runs": summary.n_runs,
        "seed": config.seed,
        "peak_hospitalizations": summary.peak_hospitalizations,
        "peak_hospitalization_day": summary.peak_hospitalization_day,
        "hospital_bed_capacity": config.hospital_beds,
        "peak_daily_infections": summary.peak_daily_infections,
        "peak_infection_day": summary.peak_infection_day,
        "final_cumulative_infections": summary.mean["cumulative_infections"][-1]
        if config.num_steps
        else 0.0,
        "final_cumulative_fraction": summary.final_cumulative_fraction,
        "total_deaths": summary.mean["deaths"][-1] if config.num_steps else 0.0,
        "total_cost": summary.total_cost,
        "final_cumulative_infections_by_age": summary.age_mean[-1].tolist()
        if config.num_steps
        else [0.0] * 9,
        "per_run": {k: list(v) for k, v in summary.per_run.items()},
    }
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def _write_charts(summary: Summary, config: ScenarioConfig, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = config.config_hash

    steps = np.arange(len(summary.mean["new_infections"]))
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    panels = (
        ("hospitalized_count", "Hospitalized agents"),
        ("new_infections", "Daily new infections"),
        ("cumulative_infections", "Cumulative infections"),
        ("cumulative_cost", "Cumulative cost ($)"),
    )
    for ax, (name, title) in zip(axes.ravel(), panels):
        m, s = summary.mean[name], summary.std[name]
        ax.plot(steps, m, lw=1.5)
        ax.fill_between(steps, m - s, m + s, alpha=0.25)
        if name == "hospitalized_count":
            ax.axhline(config.hospital_beds, ls=":", c="gray", lw=1)
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("day")
    fig.suptitle(f"{config.results_file_postfix} (mean ± std over {summary.n_runs} runs)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)

"""Learning-curve reporting: per-strategy metric curves against reading and
labeling cost, rendered to SVG with ±1 std shading, plus a CSV of the
plotted points.

Everything here is a pure function of the per-cycle record files, so
re-running a report never changes numbers.  SVG bytes are deterministic:
a fixed hash salt keys matplotlib's element ids and the creation date is
stripped, so identical inputs yield identical files.  Setting the
environment variable ``ALPS_DETERMINISTIC=0`` turns that pinning off.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .selector import _format_cell, load_seed_records

# headline metric per task: key into the per-cycle "test" group, plus the
# axis label
METRIC_KEYS = {
    "tagging": ("f1", "Span F1"),
    "parsing": ("las", "LAS"),
    "ie": ("relation_f1", "Relation F1"),
}

RUN_MANIFEST = "run.json"


def deterministic_mode() -> bool:
    value = os.environ.get("ALPS_DETERMINISTIC", "1").strip().lower()
    return value not in ("0", "false", "no")


@dataclass(frozen=True)
class RunRecords:
    """One simulate output directory: its manifest plus per-seed records."""

    label: str
    task: str
    per_seed: dict


def write_run_manifest(out_dir, task: str, strategy: str, self_training: bool) -> None:
    label = strategy + ("+ST" if self_training else "")
    manifest = {
        "task": task,
        "strategy": strategy,
        "self_training": self_training,
        "label": label,
    }
    path = os.path.join(out_dir, RUN_MANIFEST)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")


def load_run(run_dir) -> RunRecords:
    manifest_path = os.path.join(run_dir, RUN_MANIFEST)
    if not os.path.exists(manifest_path):
        raise ConfigError(f"{run_dir}: missing {RUN_MANIFEST} manifest")
    with open(manifest_path, encoding="utf-8") as handle:
        manifest = json.load(handle)
    for key in ("task", "label"):
        if key not in manifest:
            raise ConfigError(f"{manifest_path}: manifest lacks {key!r}")
    if manifest["task"] not in METRIC_KEYS:
        raise ConfigError(f"{manifest_path}: unknown task {manifest['task']!r}")
    per_seed = {}
    for name in sorted(os.listdir(run_dir)):
        if not name.startswith("seed"):
            continue
        try:
            seed = int(name[len("seed"):])
        except ValueError:
            continue
        records = load_seed_records(os.path.join(run_dir, name))
        if records:
            per_seed[seed] = records
    if not per_seed:
        raise ValidationError(f"{run_dir}: no seed records found")
    return RunRecords(
        label=manifest["label"], task=manifest["task"], per_seed=per_seed
    )


def load_runs(run_dirs) -> list:
    runs = [load_run(d) for d in run_dirs]
    if not runs:
        raise ValidationError("no run directories given")
    tasks = {run.task for run in runs}
    if len(tasks) > 1:
        raise ValidationError(
            f"runs mix tasks {sorted(tasks)}; report one task at a time"
        )
    return runs


def curve_points(run: RunRecords) -> list:
    """Per cycle across seeds: mean reading/labeling cost, mean and
    population std of the headline metric."""
    metric_key, _ = METRIC_KEYS[run.task]
    max_cycles = max(len(records) for records in run.per_seed.values())
    rows = []
    for cycle in range(1, max_cycles + 1):
        at_cycle = [
            records[cycle - 1]
            for seed in sorted(run.per_seed)
            for records in [run.per_seed[seed]]
            if len(records) >= cycle
        ]
        metric = np.array([r["test"][metric_key] for r in at_cycle])
        rows.append(
            {
                "strategy": run.label,
                "cycle": cycle,
                "n_seeds": len(at_cycle),
                "reading_cost_mean": float(
                    np.mean([r["reading_cost"] for r in at_cycle])
                ),
                "labeling_cost_mean": float(
                    np.mean([r["labeling_cost"] for r in at_cycle])
                ),
                "metric_mean": float(metric.mean()),
                "metric_std": float(metric.std()),
            }
        )
    return rows


CSV_FIELDS = (
    "strategy",
    "cycle",
    "n_seeds",
    "reading_cost_mean",
    "labeling_cost_mean",
    "metric_mean",
    "metric_std",
)


def write_curves_csv(path, runs) -> None:
    lines = [",".join(CSV_FIELDS)]
    for run in runs:
        for row in curve_points(run):
            lines.append(",".join(_format_cell(row[k]) for k in CSV_FIELDS))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def _render_one(runs, cost_field: str, xlabel: str, path, deterministic: bool) -> None:
    import matplotlib
    from matplotlib import rc_context
    from matplotlib.figure import Figure

    _, ylabel = METRIC_KEYS[runs[0].task]
    colors = matplotlib.colormaps["tab10"]
    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot()
    for k, run in enumerate(runs):
        rows = curve_points(run)
        x = [row[f"{cost_field}_mean"] for row in rows]
        y = [row["metric_mean"] for row in rows]
        std = [row["metric_std"] for row in rows]
        color = colors(k % 10)
        ax.plot(x, y, marker="o", markersize=3, color=color, label=run.label)
        ax.fill_between(
            x,
            [m - s for m, s in zip(y, std)],
            [m + s for m, s in zip(y, std)],
            color=color,
            alpha=0.2,
            linewidth=0,
        )
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(f"{runs[0].task}: {ylabel} vs {xlabel.lower()}")
    ax.legend()
    ax.grid(True, alpha=0.3)
    metadata = {"Date": None} if deterministic else None
    params = {"svg.hashsalt": "alps"} if deterministic else {}
    with rc_context(params):
        fig.savefig(path, format="svg", metadata=metadata)


def render_curves(runs, out_dir, deterministic: bool | None = None) -> list:
    """Write the two cost curves and the CSV of their points; returns the
    created file paths."""
    if deterministic is None:
        deterministic = deterministic_mode()
    os.makedirs(out_dir, exist_ok=True)
    created = []
    for cost_field, xlabel, name in (
        ("reading_cost", "Reading cost (tokens)", "curve_reading_cost.svg"),
        ("labeling_cost", "Labeling cost (units)", "curve_labeling_cost.svg"),
    ):
        path = os.path.join(out_dir, name)
        _render_one(runs, cost_field, xlabel, path, deterministic)
        created.append(path)
    csv_path = os.path.join(out_dir, "curves.csv")
    write_curves_csv(csv_path, runs)
    created.append(csv_path)
    return created

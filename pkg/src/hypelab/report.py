"""
Report assembly and emission.

A `MetricReport` gathers per-technique aggregates (mean and std over seeds at
the best learning rate), their deltas against a named baseline technique,
the individual run records and any per-layer series. `emit_report` writes it
as JSON and CSV with stable key order and fixed float formatting, so the same
report always produces the same bytes.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

from rich.table import Table

from .errors import InputError, OutputError, console

FORMATS = ("json", "csv")


@dataclass(frozen=True)
class TechniqueAggregate:
    task: str
    technique: str
    metric: str
    mean: float | None
    std: float | None
    n_seeds: int
    best_lr: float | None = None
    excluded: int = 0
    at_chance: int = 0
    delta: float | None = None


@dataclass(frozen=True)
class LayerPoint:
    series: str
    source: str
    task: str
    layer: int
    value: float
    seed: int | None = None


@dataclass(frozen=True)
class MetricReport:
    command: str
    name: str
    aggregates: tuple[TechniqueAggregate, ...] = ()
    runs: tuple[dict[str, Any], ...] = ()
    layers: tuple[LayerPoint, ...] = ()
    baseline: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def edit(self, **kwargs) -> "MetricReport":
        return replace(self, **kwargs)


def with_deltas(aggregates: Iterable[TechniqueAggregate], baseline: str | None) -> tuple[TechniqueAggregate, ...]:
    """
    Attach `mean - baseline mean` per task. Without a baseline every delta is
    None; a task without a completed baseline row gets None as well.
    """
    aggregates = tuple(aggregates)
    if baseline is None:
        return tuple(replace(a, delta=None) for a in aggregates)
    if not any(a.technique == baseline for a in aggregates):
        raise InputError(f"baseline technique '{baseline}' is not part of the comparison")
    reference = {a.task: a.mean for a in aggregates if a.technique == baseline}
    out = []
    for a in aggregates:
        ref = reference.get(a.task)
        delta = None if ref is None or a.mean is None else a.mean - ref
        out.append(replace(a, delta=delta))
    return tuple(out)


def suite_mean(aggregates: Sequence[TechniqueAggregate], techniques: Sequence[str]) -> list[TechniqueAggregate]:
    """One `mean` row per technique, averaging its per-task means."""
    rows = []
    for tech in techniques:
        mine = [a for a in aggregates if a.technique == tech]
        means = [a.mean for a in mine if a.mean is not None]
        stds = [a.std for a in mine if a.std is not None]
        rows.append(
            TechniqueAggregate(
                "mean",
                tech,
                "mean",
                sum(means) / len(means) if means and len(means) == len(mine) else None,
                sum(stds) / len(stds) if stds and len(stds) == len(mine) else None,
                min((a.n_seeds for a in mine), default=0),
                None,
                sum(a.excluded for a in mine),
                sum(a.at_chance for a in mine),
            )
        )
    return rows


def _round(value: float) -> float:
    return float(f"{value:.6g}")


def normalize(obj: Any, path: str = "", flags: list[str] | None = None) -> Any:
    """
    Round floats to 6 significant digits and replace non-finite values with
    null, recording their location in `flags`.
    """
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            if flags is not None:
                flags.append(f"{path or '.'}: {obj}")
            return None
        return _round(obj)
    if isinstance(obj, dict):
        return {str(k): normalize(v, f"{path}.{k}", flags) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v, f"{path}[{i}]", flags) for i, v in enumerate(obj)]
    if hasattr(obj, "item"):
        return normalize(obj.item(), path, flags)
    raise TypeError(f"cannot serialize {type(obj).__name__} at {path}")


def to_dict(report: MetricReport) -> dict[str, Any]:
    out: dict[str, Any] = {
        "command": report.command,
        "name": report.name,
        "baseline": report.baseline,
        "aggregates": [asdict(a) for a in report.aggregates],
        "runs": list(report.runs),
        "layers": [asdict(p) for p in report.layers],
    }
    if report.baseline is None:
        out["aggregates"] = [{k: v for k, v in row.items() if k != "delta"} for row in out["aggregates"]]
    out.update(report.extra)
    return out


def dumps_json(data: Any) -> str:
    flags: list[str] = []
    clean = normalize(data, "", flags)
    if isinstance(clean, dict):
        clean["non_finite"] = flags
    return json.dumps(clean, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.6f" % value if math.isfinite(value) else "nan"
    return str(value)


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buffer.getvalue()


def render_csv(report: MetricReport) -> dict[str, str]:
    files = {}
    if report.aggregates:
        header = ["task", "technique", "metric", "mean", "std", "n_seeds", "best_lr", "excluded", "at_chance"]
        if report.baseline is not None:
            header.append("delta")
        files["summary.csv"] = _csv(
            header,
            (
                [a.task, a.technique, a.metric, a.mean, a.std, a.n_seeds, a.best_lr, a.excluded, a.at_chance]
                + ([a.delta] if report.baseline is not None else [])
                for a in report.aggregates
            ),
        )
    if report.runs:
        files["runs.csv"] = _csv(
            ["task", "technique", "lr", "seed", "status", "final_score", "at_chance"],
            (
                [
                    r["config"]["task"],
                    r["config"]["technique"],
                    float(r["config"]["peak_lr"]),
                    r["config"]["seed"],
                    r["status"],
                    r["final_score"],
                    r["at_chance"],
                ]
                for r in report.runs
            ),
        )
    if report.layers:
        files["layers.csv"] = _csv(
            ["series", "source", "task", "layer", "value", "seed"],
            ([p.series, p.source, p.task, p.layer, float(p.value), p.seed] for p in report.layers),
        )
    return files


def write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write '{path}': {e.strerror}")
    return path


def emit_report(
    report: MetricReport,
    out_dir: str | Path,
    formats: Sequence[str] = FORMATS,
    resolved_config: dict[str, Any] | None = None,
) -> list[Path]:
    """
    Write report.json and/or summary.csv, runs.csv, layers.csv (CSV files
    without rows are omitted), plus resolved_config.json when given.
    """
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise InputError(f"unknown report format '{unknown[0]}', expected json or csv")
    out = Path(out_dir)
    written = []
    if "json" in formats:
        written.append(write_text(out / "report.json", dumps_json(to_dict(report))))
    if "csv" in formats:
        for name, text in render_csv(report).items():
            written.append(write_text(out / name, text))
    if resolved_config is not None:
        written.append(write_text(out / "resolved_config.json", dumps_json(resolved_config)))
    return written


def summary_table(report: MetricReport) -> Table:
    table = Table(title=f"{report.name} ({report.command})")
    for column in ("task", "technique", "metric", "mean", "std", "seeds", "best lr"):
        table.add_column(column, justify="right" if column in ("mean", "std", "seeds") else "left")
    if report.baseline is not None:
        table.add_column(f"Δ vs {report.baseline}", justify="right")
    for a in report.aggregates:
        row = [
            a.task,
            a.technique,
            a.metric,
            "-" if a.mean is None else f"{a.mean:.2f}",
            "-" if a.std is None else f"{a.std:.2f}",
            str(a.n_seeds),
            "-" if a.best_lr is None else f"{a.best_lr:g}",
        ]
        if report.baseline is not None:
            row.append("-" if a.delta is None else f"{a.delta:+.2f}")
        table.add_row(*row)
    return table


def print_summary(report: MetricReport) -> None:
    if report.aggregates:
        console.print(summary_table(report))
    for point in report.layers:
        console.print(
            f"[blue]{point.series}[/blue] {point.source} {point.task} layer {point.layer}: {point.value:.4f}"
        )

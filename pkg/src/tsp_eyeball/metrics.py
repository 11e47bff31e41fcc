"""Gap statistics, hallucination rates, and report emission.

The headline number everywhere is the optimality gap percentage:

    gap_percent = 100 * (length - optimal_length) / optimal_length

clamped at zero for negative round-off. This exact formula calibrates every
comparison the reports make.

Aggregation convention, chosen once and documented here:

* median: midpoint of the two central order statistics for even counts.
* quartiles: inclusive (Tukey) hinges. Split the sorted values at the
  median, including the median itself in both halves when the count is odd;
  Q1/Q3 are the medians of the halves. Worked examples:
  [1,2,3,4] -> median 2.5, Q1 1.5, Q3 3.5, IQR 2.0;
  [1,2,3,4,5] -> median 3, Q1 2 (median of [1,2,3]), Q3 4, IQR 2.0.
* gap stats cover Valid rows only; a group with no Valid rows reports its
  stats as absent, never as zero.
* hallucination percentages are attempt-level: each category count divided
  by total attempts, so valid + incorrect + incomplete + unparseable
  percentages sum to 100.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .parse import (
    STATUS_INCOMPLETE,
    STATUS_INCORRECT_IDS,
    STATUS_UNPARSEABLE,
    STATUS_VALID,
)
from .render import decode_png, downscale_half, encode_png, montage
from .svg import grouped_bar_chart, line_chart, panel_row

RECORDS_SCHEMA = 1
RECORDS_CSV_SCHEMA = "tsp-eyeball.records.v1"
STATS_CSV_SCHEMA = "tsp-eyeball.stats.v1"


def gap_percent(length: float, optimal_length: float) -> float:
    """Excess over the optimum as a percentage, clamped at 0 for round-off."""
    if optimal_length <= 0:
        raise ValueError(f"optimal_length must be positive, got {optimal_length}")
    if length < optimal_length - 1e-9:
        raise ValueError(f"length {length} is below the optimum {optimal_length}")
    return max(0.0, 100.0 * (length - optimal_length) / optimal_length)


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    strategy: str
    instance_id: str
    n: int
    status: str
    length: float | None
    gap_percent: float | None
    payload: dict = field(default_factory=dict)


def save_records(records: list[RunRecord], run_id: str, path: str | Path) -> None:
    doc = {
        "schema": RECORDS_SCHEMA,
        "run_id": run_id,
        "records": [
            {
                "strategy": r.strategy,
                "instance_id": r.instance_id,
                "n": r.n,
                "status": r.status,
                "length": r.length,
                "gap_percent": r.gap_percent,
                "payload": r.payload,
            }
            for r in records
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_records(path: str | Path) -> list[RunRecord]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or doc.get("schema") != RECORDS_SCHEMA:
        raise ValueError(f"{path}: missing or unsupported records schema")
    run_id = doc.get("run_id", "")
    return [
        RunRecord(
            run_id,
            entry["strategy"],
            entry["instance_id"],
            entry["n"],
            entry["status"],
            entry["length"],
            entry["gap_percent"],
            entry.get("payload", {}),
        )
        for entry in doc["records"]
    ]


# ---------------------------------------------------------------------------
# order statistics

def median(values: list[float]) -> float:
    if not values:
        raise ValueError("median of empty list")
    xs = sorted(values)
    m = len(xs)
    if m % 2:
        return xs[m // 2]
    return (xs[m // 2 - 1] + xs[m // 2]) / 2.0


def tukey_hinges(values: list[float]) -> tuple[float, float]:
    """Inclusive hinges: halves share the median element on odd counts."""
    if not values:
        raise ValueError("hinges of empty list")
    xs = sorted(values)
    m = len(xs)
    lower = xs[: (m + 1) // 2]
    upper = xs[m // 2 :]
    return median(lower), median(upper)


def iqr(values: list[float]) -> float:
    q1, q3 = tukey_hinges(values)
    return q3 - q1


# ---------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class AttemptCounts:
    total: int
    valid: int
    incorrect_node_ids: int
    incomplete_route: int
    unparseable: int

    def pct(self, count: int) -> float:
        return 100.0 * count / self.total if self.total else 0.0


@dataclass(frozen=True)
class GroupStats:
    strategy: str
    n: int
    ensemble_size: int | None
    refine_iters: int | None
    total_count: int
    valid_count: int
    failed_count: int
    median_gap: float | None
    iqr_gap: float | None
    attempts: AttemptCounts | None


@dataclass(frozen=True)
class GapStats:
    rows: tuple[GroupStats, ...]

    def base_rows(self) -> list[GroupStats]:
        return [r for r in self.rows if r.ensemble_size is None]

    def find(self, strategy: str, n: int, ensemble_size: int | None = None) -> GroupStats | None:
        for row in self.rows:
            if (row.strategy, row.n, row.ensemble_size) == (strategy, n, ensemble_size):
                return row
        return None


def _attempt_statuses(record: RunRecord) -> list[str]:
    payload = record.payload
    if "attempt" in payload:
        return [payload["attempt"]["status"]]
    if "attempts" in payload:
        return [a["status"] for a in payload["attempts"]]
    statuses = [a["status"] for a in payload.get("initial_attempts", [])]
    statuses += [step["attempt"]["status"] for step in payload.get("iterations", [])]
    if statuses:
        return statuses
    return [record.status]


def _gap_row(
    strategy: str,
    n: int,
    ensemble_size: int | None,
    refine_iters: int | None,
    gaps: list[float],
    total: int,
    failed: int,
    attempts: AttemptCounts | None,
) -> GroupStats:
    if gaps:
        med, spread = median(gaps), iqr(gaps)
    else:
        med = spread = None
    return GroupStats(
        strategy, n, ensemble_size, refine_iters, total, len(gaps), failed, med, spread, attempts
    )


def summarize(records: list[RunRecord]) -> GapStats:
    """Per (strategy, n) stats, plus per-ensemble-size rows for ensemble runs.

    Permutation-invariant: groups and their members are ordered by sort, not
    by input order.
    """
    groups: dict[tuple[str, int], list[RunRecord]] = {}
    for record in records:
        groups.setdefault((record.strategy, record.n), []).append(record)
    rows: list[GroupStats] = []
    for (strategy, n) in sorted(groups):
        members = sorted(groups[(strategy, n)], key=lambda r: r.instance_id)
        statuses = [s for r in members for s in _attempt_statuses(r)]
        attempts = AttemptCounts(
            total=len(statuses),
            valid=statuses.count(STATUS_VALID),
            incorrect_node_ids=statuses.count(STATUS_INCORRECT_IDS),
            incomplete_route=statuses.count(STATUS_INCOMPLETE),
            unparseable=statuses.count(STATUS_UNPARSEABLE),
        )
        failed = sum(1 for r in members if r.payload.get("failed"))
        iters_values = [r.payload["iters"] for r in members if "iters" in r.payload]
        refine_iters = max(iters_values) if iters_values else None
        base_gaps = [r.gap_percent for r in members if r.gap_percent is not None]
        rows.append(
            _gap_row(strategy, n, None, refine_iters, base_gaps, len(members), failed, attempts)
        )
        sizes = sorted(
            {int(s) for r in members for s in r.payload.get("per_size", {})}
        )
        for size in sizes:
            gaps = []
            for r in members:
                sel = r.payload.get("per_size", {}).get(str(size))
                if sel and sel["gap_percent"] is not None:
                    gaps.append(sel["gap_percent"])
            rows.append(_gap_row(strategy, n, size, None, gaps, len(members), 0, None))
    return GapStats(tuple(rows))


# ---------------------------------------------------------------------------
# report emission

def _fmt_opt(v: float | None) -> str:
    return "" if v is None else f"{v:.9f}"


def _write_records_csv(records: list[RunRecord], path: Path) -> None:
    # run_id deliberately left out: re-runs of the same inputs must be
    # byte-identical, and the run id lives in the manifest next door
    ordered = sorted(records, key=lambda r: (r.strategy, r.n, r.instance_id))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"#schema={RECORDS_CSV_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["strategy", "n", "instance_id", "status", "length", "gap_percent"])
        for r in ordered:
            writer.writerow(
                [r.strategy, r.n, r.instance_id, r.status, _fmt_opt(r.length), _fmt_opt(r.gap_percent)]
            )


def _write_stats_csv(stats: GapStats, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"#schema={STATS_CSV_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "strategy", "n", "ensemble_size", "refine_iters", "total_count", "valid_count",
                "failed_count", "median_gap_percent", "iqr_gap_percent", "attempts_total",
                "attempts_valid", "attempts_incorrect_node_ids", "attempts_incomplete_route",
                "attempts_unparseable", "pct_valid", "pct_incorrect_node_ids",
                "pct_incomplete_route", "pct_unparseable",
            ]
        )
        for row in stats.rows:
            a = row.attempts
            writer.writerow(
                [
                    row.strategy,
                    row.n,
                    "" if row.ensemble_size is None else row.ensemble_size,
                    "" if row.refine_iters is None else row.refine_iters,
                    row.total_count,
                    row.valid_count,
                    row.failed_count,
                    _fmt_opt(row.median_gap),
                    _fmt_opt(row.iqr_gap),
                    "" if a is None else a.total,
                    "" if a is None else a.valid,
                    "" if a is None else a.incorrect_node_ids,
                    "" if a is None else a.incomplete_route,
                    "" if a is None else a.unparseable,
                    "" if a is None else f"{a.pct(a.valid):.9f}",
                    "" if a is None else f"{a.pct(a.incorrect_node_ids):.9f}",
                    "" if a is None else f"{a.pct(a.incomplete_route):.9f}",
                    "" if a is None else f"{a.pct(a.unparseable):.9f}",
                ]
            )


def _series_over_n(rows: list[GroupStats], value) -> list[tuple[float, float | None]]:
    return [(float(r.n), value(r)) for r in sorted(rows, key=lambda r: r.n)]


def _line_chart_by_strategy(stats: GapStats, value, title: str, y_label: str) -> str:
    strategies = sorted({r.strategy for r in stats.base_rows()})
    series = []
    for strategy in strategies:
        rows = [r for r in stats.base_rows() if r.strategy == strategy]
        pts = _series_over_n(rows, value)
        if any(y is not None for _, y in pts):
            series.append((strategy, pts))
    return line_chart(title, "number of nodes", y_label, series)


def _ensemble_chart(stats: GapStats) -> str:
    size_rows = [r for r in stats.rows if r.ensemble_size is not None]
    sizes = sorted({r.ensemble_size for r in size_rows})
    series = []
    for size in sizes:
        rows = [r for r in size_rows if r.ensemble_size == size]
        pts = _series_over_n(rows, lambda r: r.median_gap)
        if any(y is not None for _, y in pts):
            series.append((f"S={size}", pts))
    return line_chart("Median gap by ensemble size", "number of nodes", "median gap (%)", series)


def _refine_chart(stats: GapStats) -> str:
    series = []
    for strategy in ("refine-1", "refine-2"):
        rows = [r for r in stats.base_rows() if r.strategy == strategy]
        pts = _series_over_n(rows, lambda r: r.median_gap)
        if any(y is not None for _, y in pts):
            series.append((strategy, pts))
    return line_chart("Self-refine median gap", "number of nodes", "median gap (%)", series)


def _hallucination_chart(stats: GapStats) -> str:
    rows = [r for r in stats.base_rows() if r.attempts is not None]
    ns = sorted({r.n for r in rows})
    strategies = sorted({r.strategy for r in rows})
    categories = [str(n) for n in ns]
    panels = []
    kinds = [
        ("Incorrect node IDs (%)", lambda a: a.pct(a.incorrect_node_ids)),
        ("Incomplete routes (%)", lambda a: a.pct(a.incomplete_route)),
        ("Unparseable (%)", lambda a: a.pct(a.unparseable)),
    ]
    for title, pick in kinds:
        groups = []
        for strategy in strategies:
            values: list[float | None] = []
            for n in ns:
                row = next((r for r in rows if r.strategy == strategy and r.n == n), None)
                values.append(None if row is None else pick(row.attempts))
            groups.append((strategy, values))
        panels.append(
            grouped_bar_chart(title, "number of nodes", "share of attempts (%)",
                              categories, groups, width=420.0, height=360.0)
        )
    return panel_row(panels, 420.0, 360.0)


def _contact_sheets(records: list[RunRecord], images_dir: Path, out_dir: Path) -> None:
    for record in sorted(records, key=lambda r: (r.strategy, r.n, r.instance_id)):
        tags = record.payload.get("image_tags") or []
        if not tags:
            continue
        tiles = []
        for tag in tags:
            png_path = images_dir / record.instance_id / f"{tag}.png"
            if png_path.exists():
                tiles.append(downscale_half(decode_png(png_path.read_bytes())))
        if not tiles:
            continue
        sheet = montage(tiles, columns=4)
        out_dir.mkdir(parents=True, exist_ok=True)
        name = f"{record.strategy}_{record.instance_id}.png"
        (out_dir / name).write_bytes(encode_png(sheet))


def emit_report(
    stats: GapStats,
    records: list[RunRecord],
    out_dir: str | Path,
    images_dir: str | Path | None = None,
) -> list[Path]:
    """Write records.csv, stats.csv, the five charts, and contact sheets.

    Every chart file is always written; charts with nothing to plot carry an
    explicit "no data" panel.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    records_csv = out / "records.csv"
    _write_records_csv(records, records_csv)
    written.append(records_csv)

    stats_csv = out / "stats.csv"
    _write_stats_csv(stats, stats_csv)
    written.append(stats_csv)

    charts = {
        "median_gap.svg": _line_chart_by_strategy(
            stats, lambda r: r.median_gap, "Median optimality gap", "median gap (%)"
        ),
        "iqr_gap.svg": _line_chart_by_strategy(
            stats, lambda r: r.iqr_gap, "Optimality gap IQR", "gap IQR (%)"
        ),
        "ensemble_gap.svg": _ensemble_chart(stats),
        "refine_gap.svg": _refine_chart(stats),
        "hallucinations.svg": _hallucination_chart(stats),
    }
    for name, content in charts.items():
        path = out / name
        path.write_text(content, encoding="utf-8")
        written.append(path)

    if images_dir is not None:
        _contact_sheets(records, Path(images_dir), out / "contact_sheets")
    return written

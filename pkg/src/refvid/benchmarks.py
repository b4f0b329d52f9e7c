"""Reported benchmark rows for total-score aggregation checks.

Component metric columns and the reported totals for public any-reference
video generation systems, as published for the single-reference and
multi-subject evaluation settings. The totals are arithmetic means of the
component columns rounded to three decimals; `total_score` must reproduce
every row from its components.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import total_score


@dataclass(frozen=True)
class BenchmarkRow:
    system: str
    components: tuple[float, ...]
    reported_total: float


# Columns: ID-Sim, Aesthetic, Motion, GmeScore
SINGLE_REFERENCE_ROWS: tuple[BenchmarkRow, ...] = (
    BenchmarkRow("consisid", (0.406, 0.418, 0.798, 0.720), 0.586),
    BenchmarkRow("echovideo", (0.455, 0.399, 0.782, 0.684), 0.580),
    BenchmarkRow("fantasyid", (0.304, 0.456, 0.854, 0.726), 0.585),
    BenchmarkRow("concat-id", (0.417, 0.441, 0.820, 0.737), 0.604),
    BenchmarkRow("hunyuancustom", (0.592, 0.497, 0.848, 0.697), 0.659),
    BenchmarkRow("skyreels-a2", (0.511, 0.443, 0.842, 0.618), 0.604),
    BenchmarkRow("phantom", (0.492, 0.504, 0.952, 0.722), 0.668),
    BenchmarkRow("vace", (0.577, 0.524, 0.949, 0.696), 0.687),
    BenchmarkRow("hailuo", (0.537, 0.527, 0.941, 0.714), 0.680),
    BenchmarkRow("pika-2.1", (0.301, 0.519, 0.851, 0.738), 0.602),
    BenchmarkRow("vidu-2.0", (0.340, 0.476, 0.919, 0.677), 0.603),
    BenchmarkRow("kling-1.6", (0.359, 0.516, 0.846, 0.672), 0.598),
    BenchmarkRow("magref", (0.595, 0.516, 0.956, 0.710), 0.694),
)

# Columns: ID-Sim, Subj-Sim, Bg-Sim, Aesthetic, Motion, GmeScore
MULTI_SUBJECT_ROWS: tuple[BenchmarkRow, ...] = (
    BenchmarkRow("skyreels-a2", (0.274, 0.464, 0.507, 0.371, 0.884, 0.659), 0.527),
    BenchmarkRow("phantom", (0.481, 0.364, 0.460, 0.458, 0.976, 0.713), 0.575),
    BenchmarkRow("vace", (0.345, 0.463, 0.615, 0.467, 0.968, 0.680), 0.590),
    BenchmarkRow("pika-2.1", (0.239, 0.347, 0.596, 0.477, 0.851, 0.676), 0.531),
    BenchmarkRow("vidu-2.0", (0.308, 0.312, 0.617, 0.425, 0.876, 0.680), 0.536),
    BenchmarkRow("kling-1.6", (0.387, 0.411, 0.571, 0.458, 0.864, 0.655), 0.558),
    BenchmarkRow("magref", (0.542, 0.496, 0.622, 0.478, 0.945, 0.681), 0.627),
)

AGGREGATION_TOLERANCE = 5.0001e-4  # reported totals are 3-decimal roundings


def check_row(row: BenchmarkRow) -> float:
    """Recomputed total for a row; callers assert against reported_total."""
    return total_score(row.components)


def all_rows_reproduce() -> bool:
    return all(abs(check_row(r) - r.reported_total) <= AGGREGATION_TOLERANCE
               for r in SINGLE_REFERENCE_ROWS + MULTI_SUBJECT_ROWS)

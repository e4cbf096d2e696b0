"""Test-set analysis tables: accuracy, misclassification coverage curves,
EIV versus non-EIV scatter rows and flip / proximity partitions.

Everything here is plain aggregation; the CSV writers are the plotting
interface.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .uq import UncertaintyReport

DEFAULT_BAND = 0.2


def default_thresholds(n: int = 51) -> np.ndarray:
    return np.linspace(0.0, 0.5, n)


def _pair(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions).astype(np.int64)
    y = np.asarray(labels).astype(np.int64)
    if p.shape != y.shape:
        raise DataError(f"predictions {p.shape} and labels {y.shape} differ in length")
    if p.size == 0:
        raise DataError("empty prediction vector")
    return p, y


def accuracy(predictions, labels) -> float:
    p, y = _pair(predictions, labels)
    return float((p == y).mean())


def misclassified_mask(predictions, labels) -> np.ndarray:
    p, y = _pair(predictions, labels)
    return p != y


@dataclass(frozen=True)
class CoverageCurve:
    thresholds: np.ndarray
    proportions: np.ndarray
    method_tag: str

    def area(self) -> float:
        """Trapezoidal area under the curve over the threshold range."""
        t, p = self.thresholds, self.proportions
        if t.size < 2:
            return 0.0
        return float(np.sum(np.diff(t) * (p[1:] + p[:-1]) / 2.0))


def coverage_curve(uncertainties, misclassified, thresholds=None,
                   method_tag: str = "") -> CoverageCurve:
    """Share of misclassified queries whose uncertainty exceeds each threshold."""
    u = np.asarray(uncertainties, dtype=np.float64)
    miss = np.asarray(misclassified, dtype=bool)
    if u.shape != miss.shape:
        raise DataError("uncertainties and misclassified flags differ in length")
    if not miss.any():
        raise DataError("no misclassified queries: the coverage curve is undefined")
    tau = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(tau) < 0):
        raise DataError("thresholds must be ascending")
    u_miss = u[miss]
    props = np.array([(u_miss > t).sum() for t in tau], dtype=np.float64) / u_miss.size
    return CoverageCurve(tau, props, method_tag)


@dataclass(frozen=True)
class ScatterRow:
    query_id: int
    u_eiv: float
    u_noneiv: float
    class_eiv: int
    class_noneiv: int
    true_label: int | None
    distance: float


def scatter_table(reports: Sequence[UncertaintyReport]) -> list[ScatterRow]:
    if not reports:
        raise DataError("scatter_table needs at least one report")
    return [ScatterRow(r.query_id, r.u_eiv, r.u_noneiv, r.class_eiv, r.class_noneiv,
                       r.true_label, abs(r.u_eiv - r.u_noneiv)) for r in reports]


@dataclass(frozen=True)
class FlipRow:
    query_id: int
    u_eiv: float
    u_noneiv: float
    flip: bool
    correct_noneiv: bool | None
    proximal: bool


@dataclass(frozen=True)
class FlipReport:
    rows: list[FlipRow]
    proximity_band: float
    counts: dict = field(default_factory=dict)


def flip_report(reports: Sequence[UncertaintyReport], proximity_band: float = DEFAULT_BAND) -> FlipReport:
    """Partition queries by (flip, non-EIV correctness) and tag proximal rows.

    Queries without a true label are counted under ``unlabelled``.
    """
    if not reports:
        raise DataError("flip_report needs at least one report")
    if proximity_band < 0:
        raise DataError("proximity_band must be non-negative")
    rows = []
    counts = {k: 0 for k in ("flip_correct", "flip_misclassified", "noflip_correct",
                             "noflip_misclassified", "flip_unlabelled", "noflip_unlabelled")}
    proximal = {"flip": 0, "noflip": 0}
    for r in reports:
        correct = None if r.true_label is None else r.class_noneiv == r.true_label
        near = abs(r.u_eiv - r.u_noneiv) <= proximity_band
        rows.append(FlipRow(r.query_id, r.u_eiv, r.u_noneiv, r.flip, correct, near))
        head = "flip" if r.flip else "noflip"
        tail = "unlabelled" if correct is None else ("correct" if correct else "misclassified")
        counts[f"{head}_{tail}"] += 1
        proximal[head] += near
    counts["proximal_flip"] = proximal["flip"]
    counts["proximal_noflip"] = proximal["noflip"]
    return FlipReport(rows, proximity_band, counts)


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_curves_csv(curves: Sequence[CoverageCurve], path: str | Path) -> None:
    """One threshold column plus one proportion column per curve."""
    base = curves[0].thresholds
    for c in curves[1:]:
        if not np.array_equal(c.thresholds, base):
            raise DataError("curves must share a threshold grid")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold"] + [c.method_tag for c in curves])
        for i, t in enumerate(base):
            w.writerow([_num(t)] + [_num(c.proportions[i]) for c in curves])


def write_scatter_csv(rows: Sequence[ScatterRow], path: str | Path) -> None:
    cols = ("query_id", "u_eiv", "u_noneiv", "class_eiv", "class_noneiv", "true_label",
            "distance")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_num(getattr(r, c)) for c in cols])


def write_flip_csv(report: FlipReport, path: str | Path) -> None:
    cols = ("query_id", "u_eiv", "u_noneiv", "flip", "correct_noneiv", "proximal")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.rows:
            w.writerow([_num(getattr(r, c)) for c in cols])


def summarize(reports: Sequence[UncertaintyReport], curves: Sequence[CoverageCurve],
              flips: FlipReport, mc_classes=None) -> dict:
    labels = [r.true_label for r in reports]
    out = {"n_queries": len(reports), "proximity_band": flips.proximity_band,
           "flip_counts": flips.counts,
           "n_flips": int(sum(r.flip for r in reports)),
           "mean_taylor_gap": float(np.mean([r.taylor_gap for r in reports])),
           "max_taylor_gap": float(np.max([r.taylor_gap for r in reports])),
           "curve_areas": {c.method_tag: c.area() for c in curves}}
    if all(lab is not None for lab in labels):
        out["accuracy"] = {
            "non_eiv": accuracy([r.class_noneiv for r in reports], labels),
            "eiv": accuracy([r.class_eiv for r in reports], labels),
        }
        if mc_classes is not None:
            out["accuracy"]["mc_dropout"] = accuracy(mc_classes, labels)
        out["n_misclassified_noneiv"] = int(misclassified_mask(
            [r.class_noneiv for r in reports], labels).sum())
    return out


def write_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

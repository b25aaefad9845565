"""Depth metrics and the four-way evaluation bookkeeping.

Categories per evaluation event:

* ``current_dist``: every held-out frame of the distribution being trained online
* ``cross_dist``: every held-out frame of the other distribution
* ``online_adapt``: held-out frames of the most recently trained online domain
* ``cross_domain``: mean over domains seen before the current one, counting
  the current distribution's pre-training domains
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, field, fields
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

CATEGORIES = ("current_dist", "cross_dist", "online_adapt", "cross_domain")
THRESHOLDS = (1.25, 1.25**2, 1.25**3)


@dataclass(frozen=True)
class MetricSet:
    rmse: float
    abs_rel: float
    sq_rel: float
    log_rmse: float
    delta_1: float
    delta_2: float
    delta_3: float

    @classmethod
    def names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> tuple:
        return astuple(self)


def mean_metrics(items: Sequence[MetricSet]) -> MetricSet:
    if not items:
        raise ValueError("mean_metrics: nothing to average")
    cols = zip(*(m.values() for m in items))
    return MetricSet(*(math.fsum(c) / len(items) for c in cols))


def compute_metrics(pred, gt, mask=None, align: str = "none") -> MetricSet:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"compute_metrics: shapes {pred.shape} and {gt.shape} differ")
    m = np.ones(gt.shape, bool) if mask is None else np.asarray(mask, bool)
    if not m.any():
        raise ValueError("compute_metrics: empty evaluation mask")
    d, g = pred[m], gt[m]
    if np.any(g <= 0):
        raise ValueError("compute_metrics: ground truth must be positive on the mask")
    if np.any(d <= 0):
        raise ValueError("compute_metrics: predictions must be positive on the mask")
    if align == "median":
        d = d * (np.median(g) / np.median(d))
    elif align != "none":
        raise ValueError(f"compute_metrics: unknown alignment {align!r}")
    diff = d - g
    ratio = np.maximum(g / d, d / g)
    return MetricSet(
        rmse=float(np.sqrt(np.mean(diff**2))),
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        log_rmse=float(np.sqrt(np.mean((np.log(d) - np.log(g)) ** 2))),
        delta_1=float(np.mean(ratio < THRESHOLDS[0])),
        delta_2=float(np.mean(ratio < THRESHOLDS[1])),
        delta_3=float(np.mean(ratio < THRESHOLDS[2])),
    )


@dataclass
class ReportRow:
    step: int
    domain: str  # online domain being trained, "" before the first online step
    categories: Dict[str, Optional[MetricSet]]
    per_domain: Dict[str, MetricSet]
    frame_counts: Dict[str, int] = field(default_factory=dict)


@dataclass
class ProtocolReport:
    rows: List[ReportRow] = field(default_factory=list)

    def series(self, category: str, metric: str) -> List[Optional[float]]:
        out = []
        for r in self.rows:
            m = r.categories.get(category)
            out.append(None if m is None else getattr(m, metric))
        return out

    @property
    def final(self) -> ReportRow:
        return self.rows[-1]


def cross_domain_from(per_domain: Dict[str, MetricSet], previous: Sequence[str]) -> Optional[MetricSet]:
    if not previous:
        return None
    return mean_metrics([per_domain[d] for d in previous])


def evaluate_checkpoint(
    predict,
    eval_sets: Dict[str, list],
    step: int,
    history: Sequence[str],
    current_distribution: str,
    distribution_of: Dict[str, str],
    current_domain: Optional[str] = None,
    align: str = "none",
) -> ReportRow:
    """One evaluation event.

    ``predict(sample) -> depth`` is called on every held-out sample;
    ``eval_sets`` maps domain id to rendered samples carrying ``gt_depth`` and
    ``gt_mask``.  ``history`` lists trained domains in order, pre-training
    first; ``current_domain`` is the online domain in progress (or None).
    """
    frame_metrics: Dict[str, List[MetricSet]] = {}
    for dom, samples in eval_sets.items():
        frame_metrics[dom] = [
            compute_metrics(predict(s), s.gt_depth, s.gt_mask, align) for s in samples
        ]
    per_domain = {dom: mean_metrics(ms) for dom, ms in frame_metrics.items()}
    cur = [m for dom, ms in frame_metrics.items() if distribution_of[dom] == current_distribution for m in ms]
    oth = [m for dom, ms in frame_metrics.items() if distribution_of[dom] != current_distribution for m in ms]
    cats: Dict[str, Optional[MetricSet]] = {
        "current_dist": mean_metrics(cur) if cur else None,
        "cross_dist": mean_metrics(oth) if oth else None,
        "online_adapt": None,
        "cross_domain": None,
    }
    if current_domain is not None:
        cats["online_adapt"] = per_domain[current_domain]
    previous = [
        d for d in dict.fromkeys(history)
        if d != current_domain and distribution_of[d] == current_distribution
    ]
    cats["cross_domain"] = cross_domain_from(per_domain, previous)
    return ReportRow(step, current_domain or "", cats, per_domain, {d: len(v) for d, v in frame_metrics.items()})


def normalize_curves(report: ProtocolReport, baseline: ProtocolReport) -> List[dict]:
    """RMSE series divided by the baseline's maximum, per category."""
    out = []
    scales = {}
    for cat in ("current_dist", "cross_dist"):
        vals = [v for v in baseline.series(cat, "rmse") if v is not None]
        peak = max(vals) if vals else 0.0
        if not peak > 0:
            raise ValueError(f"normalize_curves: baseline {cat} RMSE maximum is zero")
        scales[cat] = peak
    for r in report.rows:
        row = {"step": r.step, "domain": r.domain}
        for cat, peak in scales.items():
            m = r.categories.get(cat)
            row[cat] = None if m is None else m.rmse / peak
        out.append(row)
    return out


# --------------------------------------------------------------------------
# CSV


def report_header() -> List[str]:
    cols = ["step", "domain"]
    for cat in CATEGORIES:
        cols += [f"{cat}_{n}" for n in MetricSet.names()]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report_csv(path, report: ProtocolReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(report_header())
        for r in report.rows:
            line = [r.step, r.domain]
            for cat in CATEGORIES:
                m = r.categories.get(cat)
                line += [_fmt(None if m is None else v) for v in (m.values() if m else [None] * 7)]
            w.writerow(line)


def write_domain_csv(path, report: ProtocolReport, distribution_of: Dict[str, str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "domain_id", "distribution_id", "frames"] + MetricSet.names())
        for r in report.rows:
            for dom in sorted(r.per_domain):
                m = r.per_domain[dom]
                w.writerow([r.step, dom, distribution_of[dom], r.frame_counts.get(dom, "")] + [_fmt(v) for v in m.values()])


def read_report_csv(path) -> ProtocolReport:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            cats = {}
            for cat in CATEGORIES:
                vals = [rec[f"{cat}_{n}"] for n in MetricSet.names()]
                cats[cat] = None if vals[0] == "" else MetricSet(*(float(v) for v in vals))
            rows.append(ReportRow(int(rec["step"]), rec["domain"], cats, {}))
    return ProtocolReport(rows)


def write_curves_csv(path, curves: Iterable[dict], method: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "step", "domain", "current_dist_rmse_norm", "cross_dist_rmse_norm"])
        for c in curves:
            w.writerow([method, c["step"], c["domain"], _fmt(c["current_dist"]), _fmt(c["cross_dist"])])

"""Two-stage corpus filtering and per-dataset good/bad reporting.

Stage one drops samples whose valid-pixel ratio is below ``valid_ratio_min``.
Stage two ranks the survivors by distribution score and by gradient score
and drops the lowest ``cut_fraction`` of each ranking; a sample dropped by
either ranking is bad. Rankings are done per dataset by default.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .depthio import FAR_PLANE, ManifestEntry, atomic_write_text, load_depth
from .quality import DEFAULT_BINS, QualityScores, score_sample

METRICS = ("s_dist", "s_grad")
GROUPINGS = ("per_dataset", "global")

# drop reasons, in the order they are checked
KEPT = ""
DROP_ERROR = "error"
DROP_VALID_RATIO = "valid_ratio"
DROP_DEGENERATE = "degenerate"
DROP_S_DIST = "s_dist"
DROP_S_GRAD = "s_grad"
DROP_BOTH = "s_dist+s_grad"

SCORE_COLUMNS = ("id", "dataset", "valid_ratio", "s_chi2", "s_conc", "s_range",
                 "s_dist", "s_grad", "s_total", "kept", "drop_reason")
REPORT_COLUMNS = ("dataset", "total", "good", "bad", "mean_s_dist", "mean_s_grad",
                  "mean_s_total")
SUMMARY = "Summary"


def fmt_num(x: float) -> str:
    """9 significant digits, the precision used in every CSV we write."""
    return f"{x:.9g}"


@dataclass
class FilterPolicy:
    valid_ratio_min: float = 0.2
    cut_fraction: float = 0.2
    grouping: str = "per_dataset"
    k: int = DEFAULT_BINS
    lo: float = 0.0
    hi: float = FAR_PLANE
    range_mode: str = "fixed"
    # re-rank by s_grad after the s_dist cut instead of cutting both on one pool
    sequential: bool = False

    def __post_init__(self):
        if not 0.0 <= self.valid_ratio_min <= 1.0:
            raise ValueError("valid_ratio_min must be in [0, 1]")
        if not 0.0 <= self.cut_fraction < 1.0:
            raise ValueError("cut_fraction must be in [0, 1)")
        if self.grouping not in GROUPINGS:
            raise ValueError(f"grouping must be one of {GROUPINGS}")
        if self.range_mode not in ("fixed", "sample"):
            raise ValueError("range_mode must be 'fixed' or 'sample'")
        if self.k <= 4:
            raise ValueError("k must exceed 4")
        if not self.lo < self.hi:
            raise ValueError("histogram range needs lo < hi")

    def header(self) -> str:
        return " ".join(f"{k}={v}" for k, v in asdict(self).items())


@dataclass
class ReportRow:
    dataset: str
    total: int = 0
    good: int = 0
    bad: int = 0
    mean_s_dist: float = 0.0
    mean_s_grad: float = 0.0
    mean_s_total: float = 0.0

    def values(self) -> list[str]:
        return [self.dataset, str(self.total), str(self.good), str(self.bad),
                fmt_num(self.mean_s_dist), fmt_num(self.mean_s_grad),
                fmt_num(self.mean_s_total)]


@dataclass
class FilterReport:
    rows: list[ReportRow]
    summary: ReportRow
    policy: FilterPolicy = field(default_factory=FilterPolicy)
    # id -> drop reason ("" when kept)
    decisions: dict[str, str] = field(default_factory=dict)

    def row(self, dataset: str) -> ReportRow:
        for r in self.rows:
            if r.dataset == dataset:
                return r
        raise KeyError(dataset)


# ---------------------------------------------------------------- cuts

def valid_ratio_cut(scores: Sequence[QualityScores], threshold: float):
    """Split into (kept, dropped); a sample is dropped iff its ratio is below threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    kept = [s for s in scores if s.valid_ratio >= threshold]
    dropped = [s for s in scores if s.valid_ratio < threshold]
    return kept, dropped


def _groups(scores: Iterable[QualityScores], grouping: str) -> dict[str, list[QualityScores]]:
    out: dict[str, list[QualityScores]] = {}
    for s in scores:
        key = s.dataset if grouping == "per_dataset" else ""
        out.setdefault(key, []).append(s)
    return out


def n_cut(fraction: float, n: int) -> int:
    # rounding guards against 0.2 * 35 landing a hair under an integer
    return math.floor(round(fraction * n, 9))


def percentile_cut(scores: Sequence[QualityScores], metric: str, fraction: float,
                   grouping: str = "per_dataset"):
    """Drop the lowest ``floor(fraction * n)`` samples by ``metric`` in each group.

    Ties are broken by id. Returns (kept, dropped), each in input order.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}")
    drop_ids: set[str] = set()
    for members in _groups(scores, grouping).values():
        ranked = sorted(members, key=lambda s: (getattr(s, metric), s.id))
        drop_ids.update(s.id for s in ranked[:n_cut(fraction, len(ranked))])
    kept = [s for s in scores if s.id not in drop_ids]
    dropped = [s for s in scores if s.id in drop_ids]
    return kept, dropped


def decide(scores: Sequence[QualityScores], policy: FilterPolicy) -> dict[str, str]:
    """Drop reason for every sample id ("" means kept)."""
    reasons: dict[str, str] = {}
    pool = []
    for s in scores:
        if s.error:
            reasons[s.id] = DROP_ERROR
        elif s.valid_ratio < policy.valid_ratio_min:
            reasons[s.id] = DROP_VALID_RATIO
        elif not s.scored:
            reasons[s.id] = DROP_DEGENERATE
        else:
            pool.append(s)

    _, by_dist = percentile_cut(pool, "s_dist", policy.cut_fraction, policy.grouping)
    dist_ids = {s.id for s in by_dist}
    if policy.sequential:
        rest = [s for s in pool if s.id not in dist_ids]
        _, by_grad = percentile_cut(rest, "s_grad", policy.cut_fraction, policy.grouping)
    else:
        _, by_grad = percentile_cut(pool, "s_grad", policy.cut_fraction, policy.grouping)
    grad_ids = {s.id for s in by_grad}

    for s in pool:
        if s.id in dist_ids and s.id in grad_ids:
            reasons[s.id] = DROP_BOTH
        elif s.id in dist_ids:
            reasons[s.id] = DROP_S_DIST
        elif s.id in grad_ids:
            reasons[s.id] = DROP_S_GRAD
        else:
            reasons[s.id] = KEPT
    return reasons


# ---------------------------------------------------------------- reports

def _mean(values: list[float]) -> float:
    vals = sorted(v for v in values if math.isfinite(v))
    return math.fsum(vals) / len(vals) if vals else 0.0


def _row(name: str, members: list[QualityScores], reasons: dict[str, str]) -> ReportRow:
    good = sum(1 for s in members if reasons.get(s.id, KEPT) == KEPT)
    return ReportRow(
        dataset=name,
        total=len(members),
        good=good,
        bad=len(members) - good,
        mean_s_dist=_mean([s.s_dist for s in members]),
        mean_s_grad=_mean([s.s_grad for s in members]),
        mean_s_total=_mean([s.s_total for s in members]),
    )


def build_report(scores: Sequence[QualityScores], reasons: dict[str, str],
                 policy: FilterPolicy | None = None) -> FilterReport:
    """Per-dataset tallies and score means, datasets sorted by name.

    Means are taken over every sample of the dataset that has the score,
    good or bad. Sums use ``math.fsum`` over sorted values so the result
    does not depend on input order.
    """
    groups = _groups(scores, "per_dataset")
    rows = [_row(name, groups[name], reasons) for name in sorted(groups)]
    summary = _row(SUMMARY, list(scores), reasons)
    return FilterReport(rows, summary, policy or FilterPolicy(), dict(sorted(reasons.items())))


def report_csv(report: FilterReport) -> str:
    buf = io.StringIO()
    buf.write(f"# policy: {report.policy.header()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.rows:
        w.writerow(r.values())
    w.writerow(report.summary.values())
    return buf.getvalue()


def report_json(report: FilterReport) -> str:
    def enc(r: ReportRow) -> dict:
        # numbers go through the same 9-digit formatting as the CSV
        return {"dataset": r.dataset, "total": r.total, "good": r.good, "bad": r.bad,
                "mean_s_dist": float(fmt_num(r.mean_s_dist)),
                "mean_s_grad": float(fmt_num(r.mean_s_grad)),
                "mean_s_total": float(fmt_num(r.mean_s_total))}

    doc = {"policy": asdict(report.policy),
           "rows": [enc(r) for r in report.rows] + [enc(report.summary)]}
    return json.dumps(doc, indent=2) + "\n"


def emit_report(report: FilterReport, path, format: str = "csv") -> None:
    if format == "csv":
        atomic_write_text(path, report_csv(report))
    elif format == "json":
        atomic_write_text(path, report_json(report))
    else:
        raise ValueError(f"unsupported report format {format!r}")


def scores_csv(scores: Sequence[QualityScores], reasons: dict[str, str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for s in sorted(scores, key=lambda s: s.id):
        reason = reasons.get(s.id, KEPT)
        w.writerow([s.id, s.dataset, fmt_num(s.valid_ratio), fmt_num(s.s_chi2),
                    fmt_num(s.s_conc), fmt_num(s.s_range), fmt_num(s.s_dist),
                    fmt_num(s.s_grad), fmt_num(s.s_total), int(reason == KEPT), reason])
    return buf.getvalue()


def write_scores(scores: Sequence[QualityScores], reasons: dict[str, str], path) -> None:
    atomic_write_text(path, scores_csv(scores, reasons))


def read_scores(path) -> list[QualityScores]:
    """Parse a per-sample scores CSV. Rows dropped for read errors come back
    with ``error`` set so they stay bad under any policy."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(SCORE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            out.append(QualityScores(
                id=rec["id"], dataset=rec["dataset"],
                valid_ratio=float(rec["valid_ratio"]),
                s_chi2=float(rec["s_chi2"]), s_conc=float(rec["s_conc"]),
                s_range=float(rec["s_range"]), s_dist=float(rec["s_dist"]),
                s_grad=float(rec["s_grad"]), s_total=float(rec["s_total"]),
                error="read error" if rec["drop_reason"] == DROP_ERROR else "",
            ))
    return out


# ---------------------------------------------------------------- audit

def _score_entry(entry: ManifestEntry, policy: FilterPolicy, far_plane: float) -> QualityScores:
    try:
        sample = load_depth(entry, far_plane)
    except (OSError, ValueError) as exc:
        return QualityScores(entry.id, 0.0, dataset=entry.dataset,
                             error=f"{type(exc).__name__}: {exc}")
    return score_sample(sample, policy.k, policy.lo, policy.hi, policy.range_mode)


def score_manifest(entries: Sequence[ManifestEntry], policy: FilterPolicy,
                   far_plane: float = FAR_PLANE, threads: int = 1) -> list[QualityScores]:
    """Score every entry, sorted by id. Worker count does not change the result."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if threads == 1:
        scores = [_score_entry(e, policy, far_plane) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(lambda e: _score_entry(e, policy, far_plane), entries))
    return sorted(scores, key=lambda s: s.id)


class AuditError(RuntimeError):
    pass


def audit(entries: Sequence[ManifestEntry], policy: FilterPolicy | None = None,
          far_plane: float = FAR_PLANE, threads: int = 1):
    """Score and filter a manifest; returns (scores, report).

    Unreadable samples become error rows and are counted as bad. The run
    only fails if the manifest is empty or every sample errors.
    """
    policy = policy or FilterPolicy()
    if not entries:
        raise AuditError("manifest is empty")
    scores = score_manifest(entries, policy, far_plane, threads)
    if all(s.error for s in scores):
        raise AuditError(f"every sample failed to load; first error: {scores[0].error}")
    reasons = decide(scores, policy)
    return scores, build_report(scores, reasons, policy)

"""Evaluation metrics: top-k accuracy, clustering/semantic accuracy, bucketed AP."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptySet, MissingBucket


@dataclass(frozen=True)
class LabeledPrediction:
    """One evaluated query: ground truth, predicted ordering, confidence.

    Confidence is the retrieval cosine of the predicted (first) name, since
    rankers emit no scores of their own.
    """

    query_id: int
    ground_truth: str
    predicted_ordering: tuple[str, ...]
    confidence: float

    def __post_init__(self):
        if not self.predicted_ordering:
            raise EmptySet("predicted ordering is empty")
        if len(set(self.predicted_ordering)) != len(self.predicted_ordering):
            raise EmptySet("predicted ordering contains duplicates")


class Bucket(enum.Enum):
    RARE = "rare"
    COMMON = "common"
    FREQUENT = "frequent"


def load_buckets(path) -> dict[str, Bucket]:
    """Read a name<TAB>rare|common|frequent file."""
    out: dict[str, Bucket] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                name, bucket = line.split("\t")
                out[name] = Bucket(bucket)
            except ValueError:
                raise MissingBucket(f"{path}:{lineno}: expected 'name<TAB>rare|common|frequent'")
    return out


def topk_accuracy(preds: Sequence[LabeledPrediction], k: int) -> float:
    """Fraction of queries whose ground truth is among the first k names."""
    if k < 1:
        raise EmptySet(f"k must be >= 1, got {k}")
    if not preds:
        raise EmptySet("no predictions")
    hits = sum(1 for p in preds if p.ground_truth in p.predicted_ordering[:k])
    return hits / len(preds)


def _confusion(assignments: Sequence[tuple[str, str]]):
    pred_names = sorted({p for p, _ in assignments})
    gt_names = sorted({g for _, g in assignments})
    pred_index = {n: i for i, n in enumerate(pred_names)}
    gt_index = {n: i for i, n in enumerate(gt_names)}
    matrix = np.zeros((len(pred_names), len(gt_names)), dtype=np.int64)
    for pred, gt in assignments:
        matrix[pred_index[pred], gt_index[gt]] += 1
    return matrix, pred_names, gt_names


def best_matching(matrix: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one row/column matching maximizing the summed counts."""
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return list(zip(rows.tolist(), cols.tolist()))


def clustering_accuracy(assignments: Sequence[tuple[str, str]]) -> float:
    """Best one-to-one match of predicted names to ground-truth names.

    Builds the confusion matrix over distinct names and solves the
    assignment problem, so any bijective renaming of the predictions
    scores identically.
    """
    if not assignments:
        raise EmptySet("no assignments")
    matrix, _, _ = _confusion(assignments)
    matched = sum(int(matrix[r, c]) for r, c in best_matching(matrix))
    return matched / len(assignments)


def exact_match_similarity(a: str, b: str) -> float:
    return 1.0 if a == b else 0.0


def semantic_accuracy(
    assignments: Sequence[tuple[str, str]],
    name_sim: Callable[[str, str], float] | None = None,
) -> float:
    """Name-similarity-weighted accuracy under the optimal cluster matching.

    For each item the matched ground-truth name of its predicted cluster is
    compared to the item's own ground truth via ``name_sim``; items whose
    cluster is unmatched (more clusters than classes) compare their raw
    predicted name instead. With the default exact-match similarity this
    reduces to clustering accuracy whenever every cluster is matched.
    """
    if not assignments:
        raise EmptySet("no assignments")
    sim = name_sim or exact_match_similarity
    matrix, pred_names, gt_names = _confusion(assignments)
    assigned = {pred_names[r]: gt_names[c] for r, c in best_matching(matrix)}
    total = 0.0
    for pred, gt in assignments:
        total += sim(assigned.get(pred, pred), gt)
    return total / len(assignments)


def _class_average_precision(flags: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP for one class.

    ``flags`` marks true positives among that class's predictions already
    sorted by confidence descending; recall is measured against ``n_gt``.
    """
    if n_gt <= 0:
        raise EmptySet("class has no ground-truth instances")
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[flags].sum() / n_gt)


def bucketed_ap(
    preds: Sequence[LabeledPrediction], buckets: Mapping[str, Bucket]
) -> dict[str, float]:
    """Per-bucket and overall average precision over ground-truth regions.

    Region matching is identity (one prediction per ground-truth region), so
    a prediction is a true positive exactly when its top-1 name equals the
    region's label. Per class, predictions sort by confidence descending
    (ties by ascending query id). Buckets average the classes holding at
    least one ground-truth instance; every such class needs a bucket entry.
    """
    if not preds:
        raise EmptySet("no predictions")
    gt_counts: dict[str, int] = {}
    for p in preds:
        gt_counts[p.ground_truth] = gt_counts.get(p.ground_truth, 0) + 1
    by_class: dict[str, list[LabeledPrediction]] = {}
    for p in preds:
        by_class.setdefault(p.predicted_ordering[0], []).append(p)

    per_class: dict[str, float] = {}
    for name, n_gt in gt_counts.items():
        if name not in buckets:
            raise MissingBucket(f"category {name!r} has no frequency bucket")
        hits = sorted(by_class.get(name, ()), key=lambda p: (-p.confidence, p.query_id))
        flags = np.array([p.ground_truth == name for p in hits], dtype=bool)
        per_class[name] = _class_average_precision(flags, n_gt)

    result: dict[str, float] = {}
    for bucket in Bucket:
        values = [ap for name, ap in per_class.items() if buckets[name] is bucket]
        result[bucket.value] = float(np.mean(values)) if values else float("nan")
    result["all"] = float(np.mean(list(per_class.values())))
    return result


@dataclass
class EvalReport:
    """Metric bundle for one run; values are fractions in [0, 1]."""

    top_k: dict[int, float]
    cacc: float
    sacc: float
    ap: dict[str, float] | None
    count: int

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "top_k": {str(k): v for k, v in sorted(self.top_k.items())},
            "cacc": self.cacc,
            "sacc": self.sacc,
            "ap": self.ap,
        }

    def to_text(self) -> str:
        lines = [f"queries: {self.count}"]
        for k in sorted(self.top_k):
            lines.append(f"top-{k} accuracy: {format_percent(self.top_k[k])}")
        lines.append(f"cACC: {format_percent(self.cacc)}")
        lines.append(f"sACC: {format_percent(self.sacc)}")
        if self.ap is not None:
            for key in ("rare", "common", "frequent", "all"):
                value = self.ap.get(key, float("nan"))
                shown = "n/a" if value != value else format_percent(value)
                lines.append(f"AP[{key}]: {shown}")
        return "\n".join(lines)


def format_percent(fraction: float) -> str:
    """Render a fraction as a percentage with one decimal, rounding half up."""
    quantized = (Decimal(repr(fraction)) * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{quantized}"


def build_report(
    preds: Sequence[LabeledPrediction],
    max_k: int,
    buckets: Mapping[str, Bucket] | None = None,
    name_sim: Callable[[str, str], float] | None = None,
) -> EvalReport:
    if not preds:
        raise EmptySet("no predictions")
    assignments = [(p.predicted_ordering[0], p.ground_truth) for p in preds]
    return EvalReport(
        top_k={k: topk_accuracy(preds, k) for k in range(1, max_k + 1)},
        cacc=clustering_accuracy(assignments),
        sacc=semantic_accuracy(assignments, name_sim),
        ap=bucketed_ap(preds, buckets) if buckets is not None else None,
        count=len(preds),
    )

"""Example-based metrics, group fairness measures, and the error taxonomy.

Precision/recall/F1 are computed per sample over (level, label) pairs and
averaged over the split.  Samples group into interdisciplinary (two or
more top-level labels in the truth annotation) and non-interdisciplinary;
the recall disparity between the groups and the percentage degradation
from the full split to the IR subset quantify fairness.  Every prediction
falls into exactly one of Correct, Wrong, Lack, TooMuch or Other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .corpus import EncodedProposal
from .decoder import decode_with_probs
from .encoder import EncoderConfig
from .hierarchy import Hierarchy, LabelSetSequence, validate_sequence

TAXONOMY_CLASSES = ("Correct", "Lack", "TooMuch", "Wrong", "Other")


@dataclass
class GroupMetrics:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    count: int = 0


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    per_level: dict[int, GroupMetrics]
    nir: GroupMetrics
    ir: GroupMetrics
    disp_recall: float
    degradation_pct: float | None
    taxonomy: dict[str, int]
    n_samples: int


def prf1(pred: LabelSetSequence, truth: LabelSetSequence) -> tuple[float, float, float]:
    """Example-based precision, recall, F1 over (level, label) pairs."""
    p_pairs = pred.label_pairs()
    t_pairs = truth.label_pairs()
    if not p_pairs and not t_pairs:
        return 1.0, 1.0, 1.0
    if not p_pairs or not t_pairs:
        return 0.0, 0.0, 0.0
    hit = len(p_pairs & t_pairs)
    precision = hit / len(p_pairs)
    recall = hit / len(t_pairs)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def disp_recall(recall_nir: float, recall_ir: float) -> float:
    """Absolute recall disparity between the two groups; lower is fairer."""
    return abs(recall_nir - recall_ir)


def degradation(metric_all: float, metric_ir: float) -> float | None:
    """Percentage drop from the full split to the IR subset; None when undefined."""
    if metric_all == 0:
        return None
    return 100.0 * (metric_all - metric_ir) / metric_all


def is_interdisciplinary(truth: LabelSetSequence) -> bool:
    return truth.depth() >= 1 and len(truth.levels[0]) >= 2


def _levelwise_subset(inner: LabelSetSequence, outer: LabelSetSequence) -> bool:
    if inner.depth() > outer.depth():
        return False
    return all(inner.levels[k] <= outer.levels[k] for k in range(inner.depth()))


def classify_error(pred: LabelSetSequence, truth: LabelSetSequence, h: Hierarchy) -> str:
    """Assign one taxonomy class; evaluation order fixes the overlaps."""
    if pred.levels == truth.levels:
        return "Correct"
    if not validate_sequence(h, pred).ok:
        return "Wrong"
    if _levelwise_subset(pred, truth):
        return "Lack"
    if _levelwise_subset(truth, pred):
        return "TooMuch"
    return "Other"


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def evaluate_pairs(
    pairs: list[tuple[LabelSetSequence, LabelSetSequence]], h: Hierarchy
) -> MetricsReport:
    """Aggregate metrics over (prediction, truth) pairs."""
    overall: list[tuple[float, float, float]] = []
    group: dict[bool, list[tuple[float, float, float]]] = {False: [], True: []}
    per_level_scores: dict[int, list[tuple[float, float, float]]] = {
        k: [] for k in range(1, h.depth + 1)
    }
    taxonomy = {cls: 0 for cls in TAXONOMY_CLASSES}

    for pred, truth in pairs:
        scores = prf1(pred, truth)
        overall.append(scores)
        group[is_interdisciplinary(truth)].append(scores)
        taxonomy[classify_error(pred, truth, h)] += 1
        for k in range(1, h.depth + 1):
            pred_k = pred.levels[k - 1] if pred.depth() >= k else frozenset()
            truth_k = truth.levels[k - 1] if truth.depth() >= k else frozenset()
            if pred_k or truth_k:
                per_level_scores[k].append(
                    prf1(
                        LabelSetSequence((pred_k,)) if pred_k else LabelSetSequence(()),
                        LabelSetSequence((truth_k,)) if truth_k else LabelSetSequence(()),
                    )
                )

    def summarize(rows) -> GroupMetrics:
        return GroupMetrics(
            precision=_mean([r[0] for r in rows]),
            recall=_mean([r[1] for r in rows]),
            f1=_mean([r[2] for r in rows]),
            count=len(rows),
        )

    all_m = summarize(overall)
    nir = summarize(group[False])
    ir = summarize(group[True])
    return MetricsReport(
        precision=all_m.precision,
        recall=all_m.recall,
        f1=all_m.f1,
        per_level={k: summarize(rows) for k, rows in per_level_scores.items()},
        nir=nir,
        ir=ir,
        disp_recall=disp_recall(nir.recall, ir.recall) if ir.count and nir.count else 0.0,
        degradation_pct=degradation(all_m.f1, ir.f1) if ir.count else None,
        taxonomy=taxonomy,
        n_samples=len(pairs),
    )


def evaluate(
    params: dict,
    samples: list[EncodedProposal],
    h: Hierarchy,
    cfg: EncoderConfig,
    tau: float = 0.5,
    mask_to_children: bool = False,
) -> MetricsReport:
    """Run inference over a split and aggregate every metric."""
    pairs = []
    for ep in samples:
        pred = decode_with_probs(params, ep, h, cfg, tau, mask_to_children).sequence
        pairs.append((pred, ep.annotation))
    return evaluate_pairs(pairs, h)


def report_to_dict(report: MetricsReport) -> dict:
    def group_dict(g: GroupMetrics) -> dict:
        return {"precision": g.precision, "recall": g.recall, "f1": g.f1, "count": g.count}

    return {
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "per_level": {str(k): group_dict(g) for k, g in report.per_level.items()},
        "nir": group_dict(report.nir),
        "ir": group_dict(report.ir),
        "disp_recall": report.disp_recall,
        "degradation_pct": report.degradation_pct,
        "taxonomy": dict(report.taxonomy),
        "n_samples": report.n_samples,
    }


def write_report_json(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_taxonomy_csv(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class,count\n")
        for cls in TAXONOMY_CLASSES:
            fh.write(f"{cls},{report.taxonomy[cls]}\n")

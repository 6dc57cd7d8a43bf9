"""Selective interpolation: partner choice, mixing factor, feature mixes.

A MixPlan freezes one training-step decision for one anchor sample: which
partner to blend with, the Beta-distributed mixing factor, the strategy,
and the per-level soft targets.  Unequal annotation depths are reconciled
by virtually extending the shorter annotation with the level's stop token,
so every level of the joint depth has well-defined target cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .corpus import ConfigInvalid
from .hierarchy import Hierarchy, LabelSetSequence, LabelStats, path_edit_distance
from .numerics import Tensor

STRATEGIES = ("word_mixup", "word_cutmix", "manifold_mixup", "doc_mixup", "none")
SELECTIONS = ("selective", "random", "none")


class DegenerateBatch(ValueError):
    pass


@dataclass
class InterpolationConfig:
    strategy: str = "none"
    alpha: float = 0.4
    selection: str = "selective"

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigInvalid(f"unknown strategy {self.strategy!r}")
        if self.selection not in SELECTIONS:
            raise ConfigInvalid(f"unknown selection {self.selection!r}")
        if self.strategy != "none":
            if self.alpha <= 0:
                raise ConfigInvalid(f"alpha must be positive, got {self.alpha}")
            if self.selection == "none":
                raise ConfigInvalid("active strategies need selection 'selective' or 'random'")


@dataclass
class MixPlan:
    anchor: int
    partner: int | None
    lam: float
    strategy: str
    targets: list[np.ndarray] = field(default_factory=list)
    train_depth: int = 0
    history_a: list[frozenset[str]] = field(default_factory=list)
    history_b: list[frozenset[str]] = field(default_factory=list)
    mix_layer: int | None = None


def selective_score(key_i: str, key_j: str, dist: int, stats: LabelStats) -> float:
    """Distance over (occurrence x co-occurrence): rare, distant partners win."""
    return dist / (stats.occurrence(key_j) * stats.cond(key_i, key_j) + stats.epsilon)


def selection_distribution(i: int, batch_scores) -> np.ndarray:
    """Softmax over all candidates except the anchor itself."""
    scores = np.asarray(batch_scores, dtype=np.float64)
    n = scores.size
    if n < 2:
        raise DegenerateBatch(f"need at least 2 samples to pick a partner, got {n}")
    others = np.arange(n) != i
    shifted = scores[others] - scores[others].max()
    weights = np.exp(shifted)
    probs = np.zeros(n)
    probs[others] = weights / weights.sum()
    return probs


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    if alpha <= 0:
        raise ConfigInvalid(f"alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mix_features(a: Tensor, b: Tensor, lam: float) -> Tensor:
    """Convex combination lam*a + (1-lam)*b."""
    if a.shape != b.shape:
        raise nm.ShapeMismatch(f"mix_features shapes {a.shape} vs {b.shape}")
    return nm.add(nm.scale(a, lam), nm.scale(b, 1.0 - lam))


def cutmix_features(a: Tensor, b: Tensor, lam: float) -> tuple[Tensor, float]:
    """First ceil(lam*n) token rows from a, the rest from b.

    Returns the mixed tensor and the effective mixing factor ceil(lam*n)/n.
    """
    if a.shape != b.shape:
        raise nm.ShapeMismatch(f"cutmix_features shapes {a.shape} vs {b.shape}")
    n = a.shape[0]
    cut = int(np.ceil(lam * n))
    effective = cut / n
    if cut == 0:
        return b, 0.0
    if cut == n:
        return a, 1.0
    mixed = nm.concat([nm.slice_axis(a, 0, 0, cut), nm.slice_axis(b, 0, cut, n)], axis=0)
    return mixed, effective


def _level_set(seq: LabelSetSequence, level: int, h: Hierarchy) -> frozenset[str]:
    """The annotation's level-k set, or the stop token past its depth."""
    if level <= seq.depth():
        return seq.levels[level - 1]
    return frozenset({h.stop_token_id(level)})


def mixed_targets(
    a: LabelSetSequence, b: LabelSetSequence, lam: float, h: Hierarchy
) -> tuple[list[np.ndarray], int, list[frozenset[str]], list[frozenset[str]]]:
    """Per-level soft target vectors for a mixed pair.

    Each coordinate (stop token included) gets 0, lam, 1-lam or 1 according
    to which of the pair's level sets contain the label.  Training depth
    reaches one past the deeper annotation, capped at the hierarchy depth.
    """
    joint = max(a.depth(), b.depth())
    train_depth = min(joint + 1, h.depth)
    targets = []
    hist_a = []
    hist_b = []
    for k in range(1, train_depth + 1):
        set_a = _level_set(a, k, h)
        set_b = _level_set(b, k, h)
        hist_a.append(set_a)
        hist_b.append(set_b)
        vec = np.zeros(h.head_size(k))
        labels = h.level_labels(k) + [h.stop_token_id(k)]
        for pos, label in enumerate(labels):
            in_a = label in set_a
            in_b = label in set_b
            if in_a and in_b:
                vec[pos] = 1.0
            elif in_a:
                vec[pos] = lam
            elif in_b:
                vec[pos] = 1.0 - lam
        targets.append(vec)
    return targets, train_depth, hist_a, hist_b


def build_mix_plan(
    batch: list[LabelSetSequence],
    anchor: int,
    cfg: InterpolationConfig,
    stats: LabelStats | None,
    h: Hierarchy,
    rng: np.random.Generator,
    max_len: int | None = None,
    mix_layer: int | None = None,
) -> MixPlan:
    """Resolve one anchor's interpolation decision for this step."""
    cfg.validate()
    seq_a = batch[anchor]
    if cfg.strategy == "none":
        targets, depth, hist_a, hist_b = mixed_targets(seq_a, seq_a, 1.0, h)
        return MixPlan(
            anchor=anchor, partner=None, lam=1.0, strategy="none",
            targets=targets, train_depth=depth, history_a=hist_a, history_b=hist_b,
        )

    n = len(batch)
    if n < 2:
        raise DegenerateBatch(f"strategy {cfg.strategy!r} needs a batch of at least 2, got {n}")
    if cfg.selection == "selective":
        if stats is None:
            raise ConfigInvalid("selective partner choice needs label statistics")
        key_a = seq_a.key()
        scores = [
            selective_score(key_a, batch[j].key(), path_edit_distance(seq_a, batch[j]), stats)
            for j in range(n)
        ]
        probs = selection_distribution(anchor, scores)
        partner = int(rng.choice(n, p=probs))
    else:
        others = [j for j in range(n) if j != anchor]
        partner = others[int(rng.integers(len(others)))]

    lam = sample_lambda(cfg.alpha, rng)
    if cfg.strategy == "word_cutmix":
        if max_len is None:
            raise ConfigInvalid("word_cutmix needs the token length to round the mixing factor")
        lam = float(np.ceil(lam * max_len) / max_len)
    chosen_layer = mix_layer if cfg.strategy == "manifold_mixup" else None

    targets, depth, hist_a, hist_b = mixed_targets(seq_a, batch[partner], lam, h)
    return MixPlan(
        anchor=anchor, partner=partner, lam=lam, strategy=cfg.strategy,
        targets=targets, train_depth=depth, history_a=hist_a, history_b=hist_b,
        mix_layer=chosen_layer,
    )

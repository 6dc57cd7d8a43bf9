"""Level-wise topic-path decoding over the document representation.

The decoder embeds the prediction history (start token plus one pooled
label-set embedding per completed level), adds positional encodings over
the steps, self-attends, cross-attends into the four document rows, and
feeds the final state to a level-specific head that scores every label of
that level plus its stop token.  Training teacher-forces the (possibly
mixed) ground-truth history; inference feeds back its own selections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .corpus import EncodedProposal
from .encoder import (
    DocumentRepresentation,
    EncoderConfig,
    _xavier,
    encode,
    multi_head_attention,
    sinusoidal_encoding,
)
from .hierarchy import Hierarchy, LabelSetSequence
from .interpolation import MixPlan, mix_features
from .numerics import Tensor

START_TOKEN = "<start>"


class EmptyLabelSet(ValueError):
    pass


class LevelOutOfRange(ValueError):
    pass


@dataclass
class LabelEmbeddingTable:
    """Trainable rows for the start token and every label and stop token."""

    table: Tensor
    row_of: dict[str, int]

    @classmethod
    def build(cls, h: Hierarchy, hidden: int, rng: np.random.Generator) -> "LabelEmbeddingTable":
        row_of = {START_TOKEN: 0}
        for k in range(1, h.depth + 1):
            for label in h.level_labels(k):
                row_of[label] = len(row_of)
            row_of[h.stop_token_id(k)] = len(row_of)
        data = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(len(row_of), hidden))
        return cls(table=Tensor(data, requires_grad=True), row_of=row_of)

    @property
    def rows(self) -> int:
        return self.table.shape[0]


def init_decoder_params(cfg: EncoderConfig, h: Hierarchy, rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    table = LabelEmbeddingTable.build(h, cfg.hidden, rng)
    params["dec.labels"] = table.table
    for prefix in ("dec.hist", "dec.cross"):
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.{name}"] = Tensor(_xavier(rng, cfg.hidden, cfg.hidden), requires_grad=True)
            params[f"{prefix}.b{name[1]}"] = Tensor(np.zeros(cfg.hidden), requires_grad=True)
    for k in range(1, h.depth + 1):
        params[f"dec.head{k}.w1"] = Tensor(_xavier(rng, cfg.hidden, cfg.hidden), requires_grad=True)
        params[f"dec.head{k}.b1"] = Tensor(np.zeros(cfg.hidden), requires_grad=True)
        params[f"dec.head{k}.w2"] = Tensor(_xavier(rng, cfg.hidden, h.head_size(k)), requires_grad=True)
        params[f"dec.head{k}.b2"] = Tensor(np.zeros(h.head_size(k)), requires_grad=True)
    return params


def label_table(params: dict, h: Hierarchy) -> LabelEmbeddingTable:
    row_of = {START_TOKEN: 0}
    for k in range(1, h.depth + 1):
        for label in h.level_labels(k):
            row_of[label] = len(row_of)
        row_of[h.stop_token_id(k)] = len(row_of)
    return LabelEmbeddingTable(table=params["dec.labels"], row_of=row_of)


def readout(table: LabelEmbeddingTable, labels: frozenset[str] | set[str]) -> Tensor:
    """Mean-pool the embedding rows of a label set into one state row."""
    if not labels:
        raise EmptyLabelSet("readout needs at least one label")
    rows = [table.row_of[label] for label in sorted(labels)]
    return nm.mean_pool(nm.embedding_lookup(table.table, rows), axis=0, keepdims=True)


def mix_history(e_a: Tensor, e_b: Tensor, lam: float) -> Tensor:
    """Blend the two ground-truth history embeddings of a mixed pair."""
    return mix_features(e_a, e_b, lam)


def history_self_attention(
    history: Tensor, params: dict, heads: int, sink: list | None = None
) -> Tensor:
    """Positional encoding over steps, then multi-head self-attention."""
    k, hidden = history.shape
    pe = Tensor(sinusoidal_encoding(k, hidden))
    x = nm.add(history, pe)
    return multi_head_attention(x, x, x, params, "dec.hist", heads, sink=sink)


def cross_attend(
    history_enc: Tensor, docs: Tensor, params: dict, heads: int, sink: list | None = None
) -> Tensor:
    """Query the document rows with the encoded history; returns all k rows."""
    return multi_head_attention(history_enc, docs, docs, params, "dec.cross", heads, sink=sink)


def level_head(state: Tensor, level: int, params: dict, h: Hierarchy) -> Tensor:
    """Per-level feed-forward head with ReLU, sigmoid over labels + stop."""
    if not 1 <= level <= h.depth:
        raise LevelOutOfRange(f"level {level} outside 1..{h.depth}")
    hidden = nm.relu(nm.add(nm.matmul(state, params[f"dec.head{level}.w1"]), params[f"dec.head{level}.b1"]))
    logits = nm.add(nm.matmul(hidden, params[f"dec.head{level}.w2"]), params[f"dec.head{level}.b2"])
    return nm.sigmoid(logits)


def decode_step(
    history_rows: list[Tensor],
    docs: Tensor,
    level: int,
    params: dict,
    cfg: EncoderConfig,
    h: Hierarchy,
) -> Tensor:
    """Probability row (1, |C_k|+1) for one level given the history so far."""
    stacked = history_rows[0] if len(history_rows) == 1 else nm.concat(history_rows, axis=0)
    encoded = history_self_attention(stacked, params, cfg.heads)
    attended = cross_attend(encoded, docs, params, cfg.heads)
    last = nm.slice_axis(attended, 0, len(history_rows) - 1, len(history_rows))
    return level_head(last, level, params, h)


def teacher_forced_probs(
    plan: MixPlan,
    docs: DocumentRepresentation,
    params: dict,
    cfg: EncoderConfig,
    h: Hierarchy,
) -> list[Tensor]:
    """Per-level probability rows under the plan's mixed ground-truth history."""
    table = label_table(params, h)
    history: list[Tensor] = [readout(table, {START_TOKEN})]
    probs: list[Tensor] = []
    for k in range(1, plan.train_depth + 1):
        probs.append(decode_step(history, docs.doc, k, params, cfg, h))
        if k < plan.train_depth:
            e_a = readout(table, plan.history_a[k - 1])
            e_b = readout(table, plan.history_b[k - 1])
            history.append(mix_history(e_a, e_b, plan.lam))
    return probs


@dataclass
class DecodeState:
    """Mutable position of the inference loop."""

    history: list[frozenset[str]] = field(default_factory=list)

    @property
    def step(self) -> int:
        return len(self.history) + 1


@dataclass
class DecodeResult:
    sequence: LabelSetSequence
    probabilities: list[dict[str, float]]


def infer_path(
    params: dict,
    ep: EncodedProposal,
    h: Hierarchy,
    cfg: EncoderConfig,
    tau: float = 0.5,
    mask_to_children: bool = False,
) -> LabelSetSequence:
    """Iteratively decode a label-set sequence from the trained model."""
    return decode_with_probs(params, ep, h, cfg, tau, mask_to_children).sequence


def decode_with_probs(
    params: dict,
    ep: EncodedProposal,
    h: Hierarchy,
    cfg: EncoderConfig,
    tau: float = 0.5,
    mask_to_children: bool = False,
) -> DecodeResult:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    with nm.no_grad():
        docs = encode(ep, params, cfg)
        table = label_table(params, h)
        history_rows = [readout(table, {START_TOKEN})]
        state = DecodeState()
        levels: list[frozenset[str]] = []
        prob_log: list[dict[str, float]] = []
        for k in range(1, h.depth + 1):
            vec = decode_step(history_rows, docs.doc, k, params, cfg, h).data[0]
            labels = h.level_labels(k)
            stop_p = vec[-1]
            label_p = vec[:-1].copy()
            if mask_to_children:
                allowed = (
                    np.ones(len(labels), dtype=bool)
                    if k == 1
                    else np.array([h.parent(label) in levels[-1] for label in labels])
                )
                label_p[~allowed] = 0.0
            selected = [labels[i] for i in np.flatnonzero(label_p > tau)]
            top_label_p = label_p.max() if len(label_p) else 0.0
            if (stop_p > tau and stop_p >= top_label_p) or not selected:
                break
            levels.append(frozenset(selected))
            state.history.append(frozenset(selected))
            prob_log.append({label: float(label_p[labels.index(label)]) for label in selected})
            history_rows.append(readout(table, frozenset(selected)))
        return DecodeResult(
            sequence=LabelSetSequence(tuple(levels)), probabilities=prob_log
        )

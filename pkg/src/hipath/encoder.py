"""Two-level hierarchical transformer over proposal documents.

Each block runs a word-level transformer layer on every document's token
states, folds each document into its type embedding (vectorize, project
nh -> h, add), then runs a document-level transformer layer across the
four type rows.  Word positions get sinusoidal encodings; document types
are unordered and carry identity through their trainable type embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nm
from .corpus import DOC_TYPES, EncodedProposal
from .interpolation import MixPlan, cutmix_features, mix_features
from .numerics import Tensor


@dataclass
class EncoderConfig:
    hidden: int = 64
    heads: int = 4
    layers: int = 2
    ffn_mult: int = 2
    vocab_size: int = 0
    n_doc_types: int = len(DOC_TYPES)
    max_len: int = 100
    dropout: float = 0.1

    def validate(self) -> None:
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ValueError("need at least one block")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must include PAD and UNK")


@dataclass
class DocumentRepresentation:
    """Final |T| x h proposal representation plus per-type token states."""

    doc: Tensor
    token_states: dict[str, Tensor] = field(default_factory=dict)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    enc = np.zeros((length, dim))
    enc[:, 0::2] = np.sin(angles[:, 0::2])
    enc[:, 1::2] = np.cos(angles[:, 1::2])
    return enc


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_layer_params(params: dict, prefix: str, hidden: int, ffn_mult: int, rng) -> None:
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = Tensor(_xavier(rng, hidden, hidden), requires_grad=True)
        params[f"{prefix}.b{name[1]}"] = Tensor(np.zeros(hidden), requires_grad=True)
    inner = hidden * ffn_mult
    params[f"{prefix}.ffn.w1"] = Tensor(_xavier(rng, hidden, inner), requires_grad=True)
    params[f"{prefix}.ffn.b1"] = Tensor(np.zeros(inner), requires_grad=True)
    params[f"{prefix}.ffn.w2"] = Tensor(_xavier(rng, inner, hidden), requires_grad=True)
    params[f"{prefix}.ffn.b2"] = Tensor(np.zeros(hidden), requires_grad=True)
    for ln in ("ln1", "ln2"):
        params[f"{prefix}.{ln}.g"] = Tensor(np.ones(hidden), requires_grad=True)
        params[f"{prefix}.{ln}.b"] = Tensor(np.zeros(hidden), requires_grad=True)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    cfg.validate()
    params: dict[str, Tensor] = {}
    # unit per-coordinate variance keeps token content comparable to the
    # O(1) sinusoidal position coordinates added on top
    params["emb.token"] = Tensor(
        rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.hidden)), requires_grad=True
    )
    params["emb.type"] = Tensor(
        rng.normal(0.0, 1.0, size=(cfg.n_doc_types, cfg.hidden)), requires_grad=True
    )
    for b in range(cfg.layers):
        init_layer_params(params, f"enc.b{b}.word", cfg.hidden, cfg.ffn_mult, rng)
        init_layer_params(params, f"enc.b{b}.doc", cfg.hidden, cfg.ffn_mult, rng)
        for doc_type in DOC_TYPES[: cfg.n_doc_types]:
            params[f"enc.b{b}.fuse.{doc_type}.w"] = Tensor(
                _xavier(rng, cfg.max_len * cfg.hidden, cfg.hidden), requires_grad=True
            )
            params[f"enc.b{b}.fuse.{doc_type}.b"] = Tensor(np.zeros(cfg.hidden), requires_grad=True)
    return params


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: dict,
    prefix: str,
    heads: int,
    pad_mask: np.ndarray | None = None,
    sink: list | None = None,
) -> Tensor:
    """Standard scaled dot-product attention; masked key columns get no mass."""
    hidden = q.shape[1]
    dk = hidden // heads
    qp = nm.add(nm.matmul(q, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    kp = nm.add(nm.matmul(k, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    vp = nm.add(nm.matmul(v, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    outs = []
    for i in range(heads):
        lo, hi = i * dk, (i + 1) * dk
        qh = nm.slice_axis(qp, 1, lo, hi)
        kh = nm.slice_axis(kp, 1, lo, hi)
        vh = nm.slice_axis(vp, 1, lo, hi)
        scores = nm.scale(nm.matmul(qh, nm.transpose(kh)), 1.0 / np.sqrt(dk))
        if pad_mask is not None:
            scores = nm.masked_fill(scores, pad_mask[None, :], -1e30)
        attn = nm.softmax(scores, axis=1)
        if sink is not None:
            sink.append(attn.data.copy())
        outs.append(nm.matmul(attn, vh))
    merged = nm.concat(outs, axis=1)
    return nm.add(nm.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def transformer_layer(
    x: Tensor,
    params: dict,
    prefix: str,
    heads: int,
    pad_mask: np.ndarray | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
    sink: list | None = None,
) -> Tensor:
    """Post-norm transformer layer: attention and feed-forward sublayers."""
    attn = multi_head_attention(x, x, x, params, prefix, heads, pad_mask, sink)
    attn = nm.dropout(attn, dropout, train, rng)
    x = nm.layer_norm(nm.add(x, attn), params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    inner = nm.relu(nm.add(nm.matmul(x, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"]))
    ffn = nm.add(nm.matmul(inner, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])
    ffn = nm.dropout(ffn, dropout, train, rng)
    return nm.layer_norm(nm.add(x, ffn), params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


def word_level_layer(
    w: Tensor,
    pad_mask: np.ndarray,
    params: dict,
    block: int,
    cfg: EncoderConfig,
    train: bool = False,
    rng=None,
    sink: list | None = None,
) -> Tensor:
    return transformer_layer(
        w, params, f"enc.b{block}.word", cfg.heads, pad_mask, train, rng, cfg.dropout, sink
    )


def fuse(d_prev: Tensor, w: Tensor, fc_w: Tensor, fc_b: Tensor) -> Tensor:
    """Fold token states into a type embedding: vec, project nh -> h, add."""
    n, hidden = w.shape
    flat = nm.reshape(w, (1, n * hidden))
    return nm.add(d_prev, nm.add(nm.matmul(flat, fc_w), fc_b))


def document_level_layer(
    fused: Tensor,
    params: dict,
    block: int,
    cfg: EncoderConfig,
    train: bool = False,
    rng=None,
    sink: list | None = None,
) -> Tensor:
    return transformer_layer(
        fused, params, f"enc.b{block}.doc", cfg.heads, None, train, rng, cfg.dropout, sink
    )


def _pad_mask_for(ep: EncodedProposal, doc_type: str) -> np.ndarray:
    pad = ~ep.mask[doc_type]
    if pad.all():
        # never let a softmax row lose every key; the PAD embedding stands in
        pad = pad.copy()
        pad[0] = False
    return pad


def _embed_doc(ep: EncodedProposal, doc_type: str, params: dict, pe: Tensor) -> Tensor:
    w0 = nm.embedding_lookup(params["emb.token"], ep.ids[doc_type])
    return nm.add(w0, pe)


class AttentionSink:
    """Collects per-layer, per-head attention matrices during a forward pass."""

    def __init__(self):
        self.word: dict[int, dict[str, list[np.ndarray]]] = {}
        self.doc: dict[int, list[np.ndarray]] = {}

    def word_sink(self, block: int, doc_type: str) -> list:
        return self.word.setdefault(block, {}).setdefault(doc_type, [])

    def doc_sink(self, block: int) -> list:
        return self.doc.setdefault(block, [])


def encode(
    ep: EncodedProposal,
    params: dict,
    cfg: EncoderConfig,
    plan: Optional[MixPlan] = None,
    partner: Optional[EncodedProposal] = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
    attn_sink: AttentionSink | None = None,
) -> DocumentRepresentation:
    """Run the full two-level encoder, optionally interpolating with a partner.

    Word-level plans replace the token embeddings before the first block;
    manifold plans mix both streams' hidden states at the plan's word layer
    and continue on the mixed stream.
    """
    doc_types = DOC_TYPES[: cfg.n_doc_types]
    pe = Tensor(sinusoidal_encoding(cfg.max_len, cfg.hidden))
    mixing = plan is not None and plan.partner is not None and plan.strategy in (
        "word_mixup",
        "word_cutmix",
        "manifold_mixup",
    )
    if mixing and partner is None:
        raise ValueError("mix plan given without the partner's encoded proposal")

    states: dict[str, Tensor] = {}
    masks: dict[str, np.ndarray] = {}
    partner_states: dict[str, Tensor] = {}
    partner_masks: dict[str, np.ndarray] = {}

    for doc_type in doc_types:
        w0 = _embed_doc(ep, doc_type, params, pe)
        pad = _pad_mask_for(ep, doc_type)
        if mixing:
            w0_b = _embed_doc(partner, doc_type, params, pe)
            pad_b = _pad_mask_for(partner, doc_type)
            if plan.strategy == "word_mixup":
                w0 = mix_features(w0, w0_b, plan.lam)
                pad = pad & pad_b
            elif plan.strategy == "word_cutmix":
                w0, _ = cutmix_features(w0, w0_b, plan.lam)
                cut = round(plan.lam * cfg.max_len)
                pad = np.concatenate([pad[:cut], pad_b[cut:]])
            else:  # manifold: keep both streams until the mix layer
                partner_states[doc_type] = w0_b
                partner_masks[doc_type] = pad_b
        states[doc_type] = w0
        masks[doc_type] = pad

    manifold = mixing and plan.strategy == "manifold_mixup"
    d_state = params["emb.type"]
    d_partner = params["emb.type"]

    for block in range(cfg.layers):
        for doc_type in doc_types:
            w_sink = attn_sink.word_sink(block, doc_type) if attn_sink else None
            states[doc_type] = word_level_layer(
                states[doc_type], masks[doc_type], params, block, cfg, train, rng, w_sink
            )
            if manifold:
                partner_states[doc_type] = word_level_layer(
                    partner_states[doc_type], partner_masks[doc_type], params, block, cfg, train, rng
                )
        if manifold and block + 1 == plan.mix_layer:
            for doc_type in doc_types:
                states[doc_type] = mix_features(states[doc_type], partner_states[doc_type], plan.lam)
                masks[doc_type] = masks[doc_type] & partner_masks[doc_type]
            d_state = mix_features(d_state, d_partner, plan.lam)
            manifold = False

        def fused_rows(d_prev: Tensor, token_states: dict[str, Tensor]) -> Tensor:
            rows = []
            for i, doc_type in enumerate(doc_types):
                d_row = nm.slice_axis(d_prev, 0, i, i + 1)
                fc_w = params[f"enc.b{block}.fuse.{doc_type}.w"]
                fc_b = params[f"enc.b{block}.fuse.{doc_type}.b"]
                rows.append(fuse(d_row, token_states[doc_type], fc_w, fc_b))
            return nm.concat(rows, axis=0)

        d_sink = attn_sink.doc_sink(block) if attn_sink else None
        d_state = document_level_layer(
            fused_rows(d_state, states), params, block, cfg, train, rng, d_sink
        )
        if manifold:
            d_partner = document_level_layer(
                fused_rows(d_partner, partner_states), params, block, cfg, train, rng
            )

    return DocumentRepresentation(doc=d_state, token_states=dict(states))


def attention_export(
    ep: EncodedProposal,
    params: dict,
    cfg: EncoderConfig,
    tokens: dict[str, list[str]] | None = None,
) -> dict:
    """Serialize word- and document-level attention maps for reporting."""
    sink = AttentionSink()
    with nm.no_grad():
        encode(ep, params, cfg, attn_sink=sink)
    out: dict = {"sample_id": ep.id, "word_level": {}, "doc_level": {}, "doc_types": list(DOC_TYPES[: cfg.n_doc_types])}
    for block, per_type in sink.word.items():
        layer_key = f"layer_{block + 1}"
        out["word_level"][layer_key] = {}
        for doc_type, heads in per_type.items():
            out["word_level"][layer_key][doc_type] = {
                f"head_{i + 1}": m.tolist() for i, m in enumerate(heads)
            }
    for block, heads in sink.doc.items():
        out["doc_level"][f"layer_{block + 1}"] = {
            f"head_{i + 1}": m.tolist() for i, m in enumerate(heads)
        }
    if tokens is not None:
        out["tokens"] = {doc_type: list(toks[: cfg.max_len]) for doc_type, toks in tokens.items()}
    return out

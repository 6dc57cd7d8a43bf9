"""Loss construction over mixed targets, the optimizer loop, checkpoints.

Each training step builds one MixPlan per anchor in the batch, encodes the
(possibly interpolated) documents, teacher-forces the decoder over the
mixed history, and minimizes the summed level-wise binary cross-entropy
against the plan's soft targets.  Everything is driven by one seeded rng,
so a given seed and config reproduce runs bit for bit at one worker.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numerics as nm
from .corpus import (
    ConfigInvalid,
    EncodedProposal,
    Proposal,
    Vocabulary,
    build_vocab,
    encode,
)
from .decoder import init_decoder_params, teacher_forced_probs
from .encoder import DocumentRepresentation, EncoderConfig, encode as encode_docs, init_encoder_params
from .evaluation import MetricsReport, evaluate
from .hierarchy import Hierarchy, compute_label_stats
from .interpolation import InterpolationConfig, build_mix_plan, mix_features
from .numerics import ShapeMismatch, Tape, Tensor

PROB_FLOOR = 1e-7
CHECKPOINT_MAGIC = b"HIPATHCK"
CHECKPOINT_VERSION = 1


class NonFiniteLoss(RuntimeError):
    pass


class IoFailure(OSError):
    pass


class VersionMismatch(ValueError):
    pass


class CorruptFile(ValueError):
    pass


def level_loss(y_hat: Tensor, target: np.ndarray) -> Tensor:
    """Binary cross-entropy of one level's probabilities against soft targets.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs; the
    returned scalar is the negated log-likelihood, ready to minimize.
    """
    target = np.asarray(target, dtype=np.float64)
    if y_hat.shape != (1, target.size):
        raise ShapeMismatch(f"head output {y_hat.shape} vs target ({1}, {target.size})")
    p = nm.clip(y_hat, PROB_FLOOR, 1.0 - PROB_FLOOR)
    t = Tensor(target[None, :])
    t_neg = Tensor(1.0 - target[None, :])
    ones = Tensor(np.ones_like(p.data))
    log_p = nm.log(p)
    log_q = nm.log(nm.add(ones, nm.scale(p, -1.0)))
    likelihood = nm.sum_all(nm.add(nm.mul(t, log_p), nm.mul(t_neg, log_q)))
    return nm.scale(likelihood, -1.0)


def total_loss(level_losses: list[Tensor]) -> Tensor:
    """Sum of the per-level losses over the trained depth."""
    if not level_losses:
        raise ValueError("need at least one level loss")
    acc = level_losses[0]
    for term in level_losses[1:]:
        acc = nm.add(acc, term)
    return acc


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.15
    min_freq: int = 1
    tau: float = 0.5
    mask_to_children: bool = False
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    stats_eps: float = 1e-12
    eval_every: int = 1
    interp: InterpolationConfig = field(default_factory=InterpolationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigInvalid(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigInvalid(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigInvalid(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigInvalid(f"tau must be in (0,1), got {self.tau}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigInvalid(f"val_fraction must be in [0,1), got {self.val_fraction}")
        self.interp.validate()

    def to_dict(self) -> dict:
        out = {
            k: getattr(self, k)
            for k in (
                "epochs", "batch_size", "learning_rate", "seed", "val_fraction", "min_freq",
                "tau", "mask_to_children", "grad_clip", "beta1", "beta2", "adam_eps",
                "stats_eps", "eval_every",
            )
        }
        out["interp"] = vars(self.interp).copy()
        out["encoder"] = vars(self.encoder).copy()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        kwargs = dict(raw)
        kwargs["interp"] = InterpolationConfig(**kwargs.pop("interp"))
        kwargs["encoder"] = EncoderConfig(**kwargs.pop("encoder"))
        return cls(**kwargs)


class Adam:
    """Adaptive moment estimation over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.lr = cfg.learning_rate
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.adam_eps
        self.clip = cfg.grad_clip
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        grads = {
            name: p.grad for name, p in self.params.items() if p.grad is not None
        }
        if self.clip > 0 and grads:
            norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
            if norm > self.clip:
                factor = self.clip / norm
                for g in grads.values():
                    g *= factor
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[name].data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


METRICS_HEADER = "epoch,split,loss,f1,precision,recall,f1_ir,recall_ir,disp_recall"


def metrics_csv_row(epoch: int, split: str, loss: float, report: MetricsReport | None) -> str:
    def fmt(x: float) -> str:
        return f"{x:.10g}"

    cells = [str(epoch), split, fmt(loss)]
    if report is None:
        cells += [""] * 6
    else:
        cells += [
            fmt(report.f1), fmt(report.precision), fmt(report.recall),
            fmt(report.ir.f1), fmt(report.ir.recall), fmt(report.disp_recall),
        ]
    return ",".join(cells)


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: dict
    epoch: int
    rng_state: dict
    adam_t: int
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    vocab: dict[str, int]
    hierarchy_lines: list[str]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    rows: list[str]
    val_reports: list[MetricsReport]


def _sample_loss(
    encoded: list[EncodedProposal],
    batch_idx: list[int],
    anchor_pos: int,
    plan,
    params: dict,
    cfg: TrainConfig,
    h: Hierarchy,
    rng: np.random.Generator,
    train: bool,
) -> Tensor:
    ep = encoded[batch_idx[anchor_pos]]
    partner_ep = encoded[batch_idx[plan.partner]] if plan.partner is not None else None
    if plan.strategy == "doc_mixup" and partner_ep is not None:
        docs_a = encode_docs(ep, params, cfg.encoder, train=train, rng=rng)
        docs_b = encode_docs(partner_ep, params, cfg.encoder, train=train, rng=rng)
        docs = DocumentRepresentation(doc=mix_features(docs_a.doc, docs_b.doc, plan.lam))
    else:
        docs = encode_docs(
            ep, params, cfg.encoder, plan=plan, partner=partner_ep, train=train, rng=rng
        )
    probs = teacher_forced_probs(plan, docs, params, cfg.encoder, h)
    losses = [level_loss(p, t) for p, t in zip(probs, plan.targets)]
    return total_loss(losses)


def _teacher_forced_split_loss(
    encoded: list[EncodedProposal], params: dict, cfg: TrainConfig, h: Hierarchy
) -> float:
    """Mean plain-BCE loss of a split, no interpolation, no dropout."""
    plain = InterpolationConfig(strategy="none")
    total = 0.0
    rng = np.random.default_rng(0)  # unused: eval mode draws nothing
    with nm.no_grad():
        for i, ep in enumerate(encoded):
            plan = build_mix_plan([ep.annotation], 0, plain, None, h, rng)
            loss = _sample_loss(encoded, [i], 0, plan, params, cfg, h, rng, train=False)
            total += loss.item()
    return total / max(1, len(encoded))


def train(
    train_proposals: list[Proposal],
    val_proposals: list[Proposal],
    h: Hierarchy,
    cfg: TrainConfig,
    resume_from: "Checkpoint | None" = None,
    log_fn=None,
) -> TrainResult:
    """Optimize the model on the train split; log one CSV row per split per epoch."""
    cfg.validate()
    if not train_proposals:
        raise ConfigInvalid("empty training split")

    vocab = build_vocab(train_proposals, cfg.min_freq)
    enc_cfg = replace(cfg.encoder, vocab_size=vocab.size)
    cfg = replace(cfg, encoder=enc_cfg)

    train_enc = [encode(p, vocab, enc_cfg.max_len) for p in train_proposals]
    val_enc = [encode(p, vocab, enc_cfg.max_len) for p in val_proposals]

    stats = None
    if cfg.interp.strategy != "none" and cfg.interp.selection == "selective":
        stats = compute_label_stats([p.annotation for p in train_proposals], cfg.stats_eps, h)

    rng = np.random.default_rng(cfg.seed)
    params = init_encoder_params(enc_cfg, rng)
    params.update(init_decoder_params(enc_cfg, h, rng))
    optimizer = Adam(params, cfg)
    start_epoch = 0

    if resume_from is not None:
        for name, tensor in resume_from.params.items():
            params[name].data[...] = tensor.data
        optimizer.t = resume_from.adam_t
        for name in optimizer.m:
            optimizer.m[name][...] = resume_from.adam_m[name]
            optimizer.v[name][...] = resume_from.adam_v[name]
        rng.bit_generator.state = resume_from.rng_state
        start_epoch = resume_from.epoch

    n = len(train_enc)
    rows: list[str] = []
    val_reports: list[MetricsReport] = []

    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch_idx = [int(i) for i in order[lo : lo + cfg.batch_size]]
            annotations = [train_enc[i].annotation for i in batch_idx]
            mix_layer = None
            if cfg.interp.strategy == "manifold_mixup":
                mix_layer = 1 + int(rng.integers(enc_cfg.layers))
            effective_interp = cfg.interp
            if len(batch_idx) < 2 and cfg.interp.strategy != "none":
                effective_interp = InterpolationConfig(strategy="none")
            plans = [
                build_mix_plan(
                    annotations, a, effective_interp, stats, h, rng,
                    max_len=enc_cfg.max_len, mix_layer=mix_layer,
                )
                for a in range(len(batch_idx))
            ]
            optimizer.zero_grad()
            inv_batch = 1.0 / len(batch_idx)
            for a, plan in enumerate(plans):
                with Tape() as tape:
                    loss = _sample_loss(
                        train_enc, batch_idx, a, plan, params, cfg, h, rng, train=True
                    )
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NonFiniteLoss(
                            f"non-finite loss {value} at epoch {epoch}, sample "
                            f"{train_enc[batch_idx[a]].id}"
                        )
                    epoch_loss += value
                    tape.backward(nm.scale(loss, inv_batch))
            optimizer.step()

        train_loss = epoch_loss / n
        rows.append(metrics_csv_row(epoch, "train", train_loss, None))
        if val_enc and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            val_loss = _teacher_forced_split_loss(val_enc, params, cfg, h)
            report = evaluate(params, val_enc, h, enc_cfg, cfg.tau, cfg.mask_to_children)
            rows.append(metrics_csv_row(epoch, "val", val_loss, report))
            val_reports.append(report)
        if log_fn is not None:
            log_fn(epoch, train_loss)

    checkpoint = Checkpoint(
        params=params,
        config=cfg.to_dict(),
        epoch=cfg.epochs,
        rng_state=rng.bit_generator.state,
        adam_t=optimizer.t,
        adam_m=optimizer.m,
        adam_v=optimizer.v,
        vocab=vocab.token_to_id,
        hierarchy_lines=[
            f"{node.id}\t{node.parent_id}\t{node.level}\t{node.name}"
            for node in sorted(h.nodes.values(), key=lambda n: (n.level, n.id))
        ],
    )
    return TrainResult(checkpoint=checkpoint, rows=rows, val_reports=val_reports)


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, JSON header, raw float64 blocks,
# trailing sha256 over everything before it


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    names = sorted(ckpt.params)
    header = {
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "rng_state": _jsonable_rng(ckpt.rng_state),
        "adam_t": ckpt.adam_t,
        "params": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
        "vocab": ckpt.vocab,
        "hierarchy_lines": ckpt.hierarchy_lines,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            for name in names:
                fh.write(ckpt.params[name].data.tobytes())
                fh.write(ckpt.adam_m[name].tobytes())
                fh.write(ckpt.adam_v[name].tobytes())
            fh.flush()
        digest = hashlib.sha256(Path(path).read_bytes()).digest()
        with open(path, "ab") as fh:
            fh.write(digest)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(CHECKPOINT_MAGIC) + 12 + 32:
        raise CorruptFile(f"{path}: truncated checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile(f"{path}: checksum mismatch")
    if body[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    offset = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    header = json.loads(body[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    params: dict[str, Tensor] = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        blocks = []
        for _ in range(3):
            blocks.append(np.frombuffer(body, dtype=np.float64, count=count, offset=offset).reshape(shape).copy())
            offset += nbytes
        params[entry["name"]] = Tensor(blocks[0], requires_grad=True)
        adam_m[entry["name"]] = blocks[1]
        adam_v[entry["name"]] = blocks[2]
    if offset != len(body):
        raise CorruptFile(f"{path}: trailing bytes after parameter blocks")

    return Checkpoint(
        params=params,
        config=header["config"],
        epoch=header["epoch"],
        rng_state=_rng_from_jsonable(header["rng_state"]),
        adam_t=header["adam_t"],
        adam_m=adam_m,
        adam_v=adam_v,
        vocab={k: int(v) for k, v in header["vocab"].items()},
        hierarchy_lines=list(header["hierarchy_lines"]),
    )


def _jsonable_rng(state: dict) -> dict:
    return json.loads(json.dumps(state))


def _rng_from_jsonable(state: dict) -> dict:
    return state


def vocabulary_from_checkpoint(ckpt: Checkpoint) -> Vocabulary:
    return Vocabulary(dict(ckpt.vocab))

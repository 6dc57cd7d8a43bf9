"""Operator surface: data generation, training, evaluation, inference.

Every subcommand is driven by a key=value config file and a single seed,
writes machine-readable outputs plus a run manifest into the output
directory, and exits 0 on success, 1 on runtime failure, 2 on config or
usage errors.  ``HIPATH_LOG`` selects the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    ConfigInvalid,
    DOC_TYPES,
    GeneratorConfig,
    Proposal,
    encode,
    generate_synthetic,
    ingest,
    write_corpus,
    write_hierarchy_file,
)
from .decoder import decode_with_probs
from .encoder import EncoderConfig, attention_export
from .evaluation import evaluate, write_report_json, write_taxonomy_csv
from .hierarchy import LabelSetSequence, load_hierarchy, parse_hierarchy_lines
from .interpolation import InterpolationConfig
from .training import (
    METRICS_HEADER,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    vocabulary_from_checkpoint,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

log = logging.getLogger("hipath")


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _coerce(current, value: str):
    if isinstance(current, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigInvalid(f"expected boolean, got {value!r}")
    return type(current)(value)


def _apply_prefixed(obj, mapping: dict[str, str], prefix: str):
    names = {f.name for f in fields(obj)}
    for key, value in mapping.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in names:
            raise ConfigInvalid(f"unknown config key {key!r}")
        setattr(obj, name, _coerce(getattr(obj, name), value))
    return obj


TRAIN_REQUIRED = ("epochs", "batch_size", "learning_rate", "data.corpus", "data.hierarchy")
TRAIN_SCALAR_KEYS = (
    "epochs", "batch_size", "learning_rate", "seed", "val_fraction", "min_freq", "tau",
    "mask_to_children", "grad_clip", "beta1", "beta2", "adam_eps", "stats_eps", "eval_every",
)


def build_train_config(mapping: dict[str, str]) -> TrainConfig:
    for key in TRAIN_REQUIRED:
        if key not in mapping:
            raise ConfigInvalid(f"missing config key: {key}")
    cfg = TrainConfig()
    for key in TRAIN_SCALAR_KEYS:
        if key in mapping:
            setattr(cfg, key, _coerce(getattr(cfg, key), mapping[key]))
    cfg.interp = _apply_prefixed(InterpolationConfig(), mapping, "interp.")
    cfg.encoder = _apply_prefixed(EncoderConfig(), mapping, "encoder.")
    known = set(TRAIN_SCALAR_KEYS) | {"data.corpus", "data.hierarchy"}
    for key in mapping:
        if key not in known and not key.startswith(("interp.", "encoder.")):
            raise ConfigInvalid(f"unknown config key {key!r}")
    cfg.validate()
    return cfg


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: str | None, seed: int | None, inputs):
    manifest = {
        "command": command,
        "config": str(config) if config else None,
        "seed": seed,
        "out_dir": str(out_dir),
        "version": __version__,
        "input_hashes": {str(p): _sha256_file(Path(p)) for p in inputs if Path(p).is_file()},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _split(proposals: list[Proposal], val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(proposals))
    n_val = int(round(val_fraction * len(proposals)))
    val_idx = set(int(i) for i in order[:n_val])
    train_set = [p for i, p in enumerate(proposals) if i not in val_idx]
    val_set = [p for i, p in enumerate(proposals) if i in val_idx]
    return train_set, val_set


def cmd_gen_data(args) -> int:
    mapping = parse_kv_file(args.config) if args.config else {}
    cfg = GeneratorConfig.from_mapping(mapping)
    h, proposals = generate_synthetic(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_hierarchy_file(h, out / "hierarchy.tsv")
    write_corpus(proposals, out / "corpus.jsonl")
    write_manifest(out, "gen-data", args.config, args.seed, [args.config] if args.config else [])
    log.info("wrote %d proposals to %s", len(proposals), out / "corpus.jsonl")
    return EXIT_OK


def cmd_train(args) -> int:
    mapping = parse_kv_file(args.config)
    cfg = build_train_config(mapping)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    corpus_path = mapping["data.corpus"]
    hierarchy_path = mapping["data.hierarchy"]
    h = load_hierarchy(hierarchy_path)
    result = ingest(corpus_path, h)
    if result.dropped:
        log.info("dropped %d records during ingestion", result.dropped)
    train_set, val_set = _split(result.proposals, cfg.val_fraction, cfg.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outcome = train(train_set, val_set, h, cfg, log_fn=lambda e, l: log.info("epoch %d loss %.4f", e, l))
    save_checkpoint(outcome.checkpoint, out / "model.ckpt")
    with open(out / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in outcome.rows:
            fh.write(row + "\n")
    write_manifest(out, "train", args.config, cfg.seed, [args.config, corpus_path, hierarchy_path])
    return EXIT_OK


def _load_model(checkpoint_path: str):
    ckpt = load_checkpoint(checkpoint_path)
    cfg = TrainConfig.from_dict(ckpt.config)
    h = parse_hierarchy_lines(ckpt.hierarchy_lines, source=checkpoint_path)
    vocab = vocabulary_from_checkpoint(ckpt)
    return ckpt, cfg, h, vocab


def cmd_eval(args) -> int:
    ckpt, cfg, h, vocab = _load_model(args.checkpoint)
    result = ingest(args.corpus, h)
    samples = [encode(p, vocab, cfg.encoder.max_len) for p in result.proposals]
    report = evaluate(ckpt.params, samples, h, cfg.encoder, cfg.tau, cfg.mask_to_children)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out / "report.json")
    write_taxonomy_csv(report, out / "taxonomy.csv")
    write_manifest(out, "eval", None, ckpt.config.get("seed"), [args.checkpoint, args.corpus])
    log.info("f1=%.4f disp_recall=%.4f over %d samples", report.f1, report.disp_recall, report.n_samples)
    return EXIT_OK


def _read_inference_records(path: str, h) -> list[Proposal]:
    records = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            docs = {t: [str(w) for w in rec.get(t, [])] for t in DOC_TYPES}
            if all(not docs[t] for t in DOC_TYPES):
                raise ValueError("no documents")
            annotation = LabelSetSequence.from_lists(rec.get("labels", []))
            records.append(Proposal(id=str(rec["id"]), documents=docs, annotation=annotation))
        except (ValueError, KeyError) as exc:
            log.warning("skipping line %d: %s", lineno, exc)
    return records


def cmd_infer(args) -> int:
    ckpt, cfg, h, vocab = _load_model(args.checkpoint)
    records = _read_inference_records(args.input, h)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for p in records:
            ep = encode(p, vocab, cfg.encoder.max_len)
            result = decode_with_probs(ckpt.params, ep, h, cfg.encoder, cfg.tau, cfg.mask_to_children)
            predicted = [sorted(level) for level in result.sequence.levels]
            probabilities = [
                [result.probabilities[k][label] for label in sorted(level)]
                for k, level in enumerate(result.sequence.levels)
            ]
            fh.write(json.dumps({"id": p.id, "predicted": predicted, "probabilities": probabilities}) + "\n")
    write_manifest(out, "infer", None, ckpt.config.get("seed"), [args.checkpoint, args.input])
    return EXIT_OK


SWEEP_HEADER = "alpha,f1,precision,recall,f1_ir,recall_ir,disp_recall"


def cmd_sweep_alpha(args) -> int:
    mapping = parse_kv_file(args.config)
    base_cfg = build_train_config(mapping)
    if args.seed is not None:
        base_cfg = replace(base_cfg, seed=args.seed)
    if base_cfg.interp.strategy == "none":
        raise ConfigInvalid("alpha sweep needs an active interp.strategy")
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigInvalid(f"malformed alpha list {args.alphas!r}") from exc
    if not alphas or any(a <= 0 for a in alphas):
        raise ConfigInvalid(f"alphas must be positive, got {args.alphas!r}")

    h = load_hierarchy(mapping["data.hierarchy"])
    proposals = ingest(mapping["data.corpus"], h).proposals
    train_set, val_set = _split(proposals, base_cfg.val_fraction, base_cfg.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for alpha in alphas:
        cfg = replace(base_cfg, interp=replace(base_cfg.interp, alpha=alpha))
        outcome = train(train_set, val_set, h, cfg)
        report = outcome.val_reports[-1]
        rows.append(
            f"{alpha:.10g},{report.f1:.10g},{report.precision:.10g},{report.recall:.10g},"
            f"{report.ir.f1:.10g},{report.ir.recall:.10g},{report.disp_recall:.10g}"
        )
        log.info("alpha %.3g -> f1 %.4f", alpha, report.f1)
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    write_manifest(out, "sweep-alpha", args.config, base_cfg.seed,
                   [args.config, mapping["data.corpus"], mapping["data.hierarchy"]])
    return EXIT_OK


def cmd_export_attention(args) -> int:
    ckpt, cfg, h, vocab = _load_model(args.checkpoint)
    records = _read_inference_records(args.corpus, h)
    matches = [p for p in records if p.id == args.sample_id] if args.sample_id else records[:1]
    if not matches:
        raise ConfigInvalid(f"sample id {args.sample_id!r} not found in {args.corpus}")
    proposal = matches[0]
    ep = encode(proposal, vocab, cfg.encoder.max_len)
    export = attention_export(ep, ckpt.params, cfg.encoder, tokens=proposal.documents)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "attention.json", "w", encoding="utf-8") as fh:
        json.dump(export, fh, sort_keys=True)
        fh.write("\n")
    write_manifest(out, "export-attention", None, ckpt.config.get("seed"),
                   [args.checkpoint, args.corpus])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hipath",
        description="Hierarchical topic-path inference with selective interpolation",
    )
    parser.add_argument("--workers", type=int, default=1,
                        help="worker count (execution is sequential; determinism holds at 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus and hierarchy")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="predict topic paths for a JSONL file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("sweep-alpha", help="train once per alpha and tabulate metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--alphas", required=True, help="comma-separated positive reals")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep_alpha)

    p = sub.add_parser("export-attention", help="dump attention maps for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--sample-id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_attention)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("HIPATH_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers != 1:
        log.info("workers=%d requested; running sequentially (determinism documented at 1)", args.workers)
    try:
        return args.fn(args)
    except ConfigInvalid as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not re-raises
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

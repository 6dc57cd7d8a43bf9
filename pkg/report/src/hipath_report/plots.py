"""Figure generation from the documented CSV/JSON run artifacts.

Each plotting function validates its input against the documented schema,
writes one image, and returns a small summary dict so callers and tests
can cross-check what was drawn.  Inputs are never modified.  This package
deliberately knows nothing about the model; it only reads files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class SchemaError(ValueError):
    pass


METRICS_COLUMNS = ["epoch", "split", "loss", "f1", "precision", "recall", "f1_ir", "recall_ir", "disp_recall"]
SWEEP_COLUMNS = ["alpha", "f1", "precision", "recall", "f1_ir", "recall_ir", "disp_recall"]


def _read_csv(path: str | Path, required: list[str]) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise SchemaError(f"{path}: missing column {column!r}")
        return list(reader)


def _read_json(path: str | Path, required: list[str]) -> dict:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    for key in required:
        if key not in payload:
            raise SchemaError(f"{path}: missing key {key!r}")
    return payload


def plot_losses(metrics_csv: str | Path, out_path: str | Path, title: str | None = None) -> dict:
    """Train and validation loss curves from a metrics CSV."""
    rows = _read_csv(metrics_csv, METRICS_COLUMNS)
    curves: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        if not row["loss"]:
            continue
        curves.setdefault(row["split"], []).append((int(row["epoch"]), float(row["loss"])))
    if not curves:
        raise SchemaError(f"{metrics_csv}: no loss values")
    fig, ax = plt.subplots(figsize=(6, 4))
    for split, points in sorted(curves.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=split)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title or "Training and validation loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return {"splits": {s: len(p) for s, p in curves.items()}}


def plot_level_f1(report_json: str | Path, out_path: str | Path, title: str | None = None) -> dict:
    """Per-level precision/recall/F1 bars from an evaluation report."""
    payload = _read_json(report_json, ["per_level"])
    per_level = payload["per_level"]
    if not per_level:
        raise SchemaError(f"{report_json}: per_level is empty")
    levels = sorted(per_level, key=int)
    metrics = ("precision", "recall", "f1")
    for level in levels:
        for metric in metrics:
            if metric not in per_level[level]:
                raise SchemaError(f"{report_json}: per_level[{level}] missing key {metric!r}")
    x = np.arange(len(levels))
    width = 0.25
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, metric in enumerate(metrics):
        values = [per_level[level][metric] for level in levels]
        ax.bar(x + (i - 1) * width, values, width, label=metric)
    ax.set_xticks(x, [f"level {level}" for level in levels])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(title or "Level-wise prediction quality")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return {"levels": levels, "f1": {level: per_level[level]["f1"] for level in levels}}


def plot_taxonomy(taxonomy_csv: str | Path, out_path: str | Path, title: str | None = None) -> dict:
    """Error-class histogram; bar heights partition the evaluated split."""
    rows = _read_csv(taxonomy_csv, ["class", "count"])
    if not rows:
        raise SchemaError(f"{taxonomy_csv}: no rows")
    counts = {}
    for row in rows:
        try:
            counts[row["class"]] = int(row["count"])
        except ValueError as exc:
            raise SchemaError(f"{taxonomy_csv}: count {row['count']!r} is not an integer") from exc
    total = sum(counts.values())
    fig, ax = plt.subplots(figsize=(6, 4))
    classes = list(counts)
    ax.bar(classes, [counts[c] for c in classes], color="#4878a8")
    for i, cls in enumerate(classes):
        ax.text(i, counts[cls], str(counts[cls]), ha="center", va="bottom")
    ax.set_ylabel("samples")
    ax.set_title(title or f"Prediction outcome classes (n={total})")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return {"counts": counts, "total": total}


def plot_alpha_sweep(sweep_csv: str | Path, out_path: str | Path, title: str | None = None) -> dict:
    """F1 and fairness curves against the mixing-distribution alpha."""
    rows = _read_csv(sweep_csv, SWEEP_COLUMNS)
    if not rows:
        raise SchemaError(f"{sweep_csv}: no rows")
    rows.sort(key=lambda r: float(r["alpha"]))
    alphas = [float(r["alpha"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(alphas, [float(r["f1"]) for r in rows], marker="o", label="f1 (all)")
    ax1.plot(alphas, [float(r["f1_ir"]) for r in rows], marker="s", label="f1 (IR)")
    ax1.set_xlabel("alpha")
    ax1.set_ylabel("f1")
    ax1.legend()
    ax2.plot(alphas, [float(r["disp_recall"]) for r in rows], marker="d", color="#a84848")
    ax2.set_xlabel("alpha")
    ax2.set_ylabel("recall disparity")
    fig.suptitle(title or "Mixing-factor sensitivity")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return {"alphas": alphas}


def plot_attention(attention_json: str | Path, out_path: str | Path, title: str | None = None) -> dict:
    """Word-level attention heatmaps, one panel per document type.

    Each panel shows the first layer's first head; the mean row sum is
    annotated so a reader can confirm the rows are still stochastic.
    """
    payload = _read_json(attention_json, ["word_level", "doc_types"])
    word_level = payload["word_level"]
    if not word_level:
        raise SchemaError(f"{attention_json}: word_level is empty")
    first_layer = word_level[sorted(word_level)[0]]
    doc_types = [t for t in payload["doc_types"] if t in first_layer]
    if not doc_types:
        raise SchemaError(f"{attention_json}: no document types under word_level")

    row_sums = {}
    fig, axes = plt.subplots(1, len(doc_types), figsize=(4 * len(doc_types), 4))
    if len(doc_types) == 1:
        axes = [axes]
    for ax, doc_type in zip(axes, doc_types):
        heads = first_layer[doc_type]
        head_key = sorted(heads)[0]
        matrix = np.asarray(heads[head_key], dtype=float)
        if matrix.ndim != 2:
            raise SchemaError(f"{attention_json}: {doc_type}/{head_key} is not a matrix")
        ax.imshow(matrix, cmap="viridis", aspect="auto")
        mean_sum = float(matrix.sum(axis=1).mean())
        row_sums[doc_type] = mean_sum
        ax.set_title(f"{doc_type}\nmean row sum = {mean_sum:.3f}")
        ax.set_xlabel("key position")
        ax.set_ylabel("query position")
        tokens = payload.get("tokens", {}).get(doc_type)
        if tokens and len(tokens) <= matrix.shape[1]:
            ax.set_xticks(range(len(tokens)), tokens, rotation=90, fontsize=6)
    fig.suptitle(title or f"Word-level attention ({payload.get('sample_id', 'sample')})")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return {"row_sums": row_sums}

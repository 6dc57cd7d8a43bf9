"""Proposal ingestion, vocabulary building, encoding, and synthetic corpora.

Corpus files are JSON Lines; each record carries four tokenized documents
(title, keywords, abstract, research_field) and a per-level label list.
The synthetic generator produces an imbalanced corpus over a fresh
hierarchy: every leaf discipline owns a disjoint keyword pool, and
interdisciplinary records draw a mixed bag from two leaves under distinct
top-level disciplines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from string import ascii_uppercase
from typing import Iterable, Sequence

import numpy as np

from .hierarchy import (
    ROOT_ID,
    DisciplineNode,
    Hierarchy,
    LabelSetSequence,
    validate_sequence,
)

DOC_TYPES = ("title", "keywords", "abstract", "research_field")
PAD_ID = 0
UNK_ID = 1
DEFAULT_MAX_LEN = 100


class EmptyCorpus(ValueError):
    pass


class ConfigInvalid(ValueError):
    pass


@dataclass
class Proposal:
    id: str
    documents: dict[str, list[str]]
    annotation: LabelSetSequence


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.token_to_id) + 2

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


@dataclass
class EncodedProposal:
    id: str
    ids: dict[str, np.ndarray]
    mask: dict[str, np.ndarray]
    annotation: LabelSetSequence


@dataclass
class IngestResult:
    proposals: list[Proposal]
    dropped_incomplete: int = 0
    dropped_invalid: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return self.dropped_incomplete + self.dropped_invalid + len(self.malformed)


def ingest(corpus_file: str | Path, h: Hierarchy) -> IngestResult:
    """Read a JSONL corpus, dropping incomplete or invalidly labeled records."""
    result = IngestResult(proposals=[])
    for lineno, raw in enumerate(Path(corpus_file).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            if not isinstance(rec, dict):
                raise TypeError("record is not an object")
            rid = rec["id"]
            if not isinstance(rid, str):
                raise TypeError("id must be a string")
            docs = {}
            for doc_type in DOC_TYPES:
                tokens = rec.get(doc_type)
                if tokens is None:
                    docs[doc_type] = None
                    continue
                if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                    raise TypeError(f"{doc_type} must be a list of strings")
                docs[doc_type] = tokens
            labels = rec.get("labels")
            if not isinstance(labels, list) or not all(isinstance(lv, list) for lv in labels):
                raise TypeError("labels must be a list of per-level lists")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            result.malformed.append((lineno, str(exc)))
            continue

        if any(docs[doc_type] is None or not docs[doc_type] for doc_type in DOC_TYPES):
            result.dropped_incomplete += 1
            continue
        annotation = LabelSetSequence.from_lists(labels)
        if annotation.is_empty() or not validate_sequence(h, annotation).ok:
            result.dropped_invalid += 1
            continue
        result.proposals.append(Proposal(id=rid, documents=docs, annotation=annotation))

    if not result.proposals:
        raise EmptyCorpus(f"{corpus_file}: no valid records")
    return result


def build_vocab(proposals: Iterable[Proposal], min_freq: int = 1) -> Vocabulary:
    """Assign dense ids to tokens seen at least ``min_freq`` times."""
    if min_freq < 1:
        raise ConfigInvalid(f"min_freq must be >= 1, got {min_freq}")
    counts: dict[str, int] = {}
    for p in proposals:
        for tokens in p.documents.values():
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary({tok: i + 2 for i, tok in enumerate(kept)})


def encode(p: Proposal, v: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> EncodedProposal:
    """Map documents to fixed-length id sequences, right-padded with PAD."""
    ids: dict[str, np.ndarray] = {}
    mask: dict[str, np.ndarray] = {}
    for doc_type in DOC_TYPES:
        tokens = p.documents.get(doc_type, [])[:max_len]
        row = np.full(max_len, PAD_ID, dtype=np.int64)
        row[: len(tokens)] = [v.id_of(t) for t in tokens]
        m = np.zeros(max_len, dtype=bool)
        m[: len(tokens)] = True
        ids[doc_type] = row
        mask[doc_type] = m
    return EncodedProposal(id=p.id, ids=ids, mask=mask, annotation=p.annotation)


@dataclass
class GeneratorConfig:
    n_samples: int = 1000
    ir_fraction: float = 0.07
    n_top: int = 8
    branch_l2: int = 2
    branch_l3: int = 2
    branch_l4: int = 2
    deep_fraction: float = 0.5
    vocab_per_leaf: int = 15
    doc_len_title: int = 6
    doc_len_keywords: int = 5
    doc_len_abstract: int = 30
    doc_len_research_field: int = 3
    leaf_skew: float = 1.0

    def validate(self) -> None:
        if not 0.0 <= self.ir_fraction <= 1.0:
            raise ConfigInvalid(f"ir_fraction must be in [0,1], got {self.ir_fraction}")
        if self.n_samples < 1:
            raise ConfigInvalid(f"n_samples must be >= 1, got {self.n_samples}")
        if not 1 <= self.n_top <= 26:
            raise ConfigInvalid(f"n_top must be in [1,26], got {self.n_top}")
        if self.n_top < 2 and self.ir_fraction > 0:
            raise ConfigInvalid("interdisciplinary samples need at least 2 top disciplines")
        if self.vocab_per_leaf < 1:
            raise ConfigInvalid("vocab_per_leaf must be >= 1")
        for name in ("branch_l2", "branch_l3", "branch_l4"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
        for name in ("doc_len_title", "doc_len_keywords", "doc_len_abstract", "doc_len_research_field"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "GeneratorConfig":
        cfg = cls()
        for key, value in mapping.items():
            if not hasattr(cfg, key):
                raise ConfigInvalid(f"unknown generator key {key!r}")
            current = getattr(cfg, key)
            setattr(cfg, key, type(current)(value))
        cfg.validate()
        return cfg


def _build_synthetic_hierarchy(cfg: GeneratorConfig, rng: np.random.Generator) -> Hierarchy:
    nodes: dict[str, DisciplineNode] = {}

    def put(nid: str, parent: str, level: int) -> None:
        nodes[nid] = DisciplineNode(id=nid, level=level, parent_id=parent, name=f"Discipline {nid}")

    for t in range(cfg.n_top):
        top = ascii_uppercase[t]
        put(top, ROOT_ID, 1)
        for i in range(cfg.branch_l2):
            mid = f"{top}{i + 1:02d}"
            put(mid, top, 2)
            for j in range(cfg.branch_l3):
                low = f"{mid}{j + 1:02d}"
                put(low, mid, 3)
                if rng.random() < cfg.deep_fraction:
                    for m in range(cfg.branch_l4):
                        put(f"{low}{m + 1:02d}", low, 4)
    depth = max(n.level for n in nodes.values())
    return Hierarchy(nodes, depth)


def generate_synthetic(cfg: GeneratorConfig, seed: int) -> tuple[Hierarchy, list[Proposal]]:
    """Deterministic imbalanced corpus over a freshly built hierarchy."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    h = _build_synthetic_hierarchy(cfg, rng)

    leaves = h.leaves()
    pools = {leaf: [f"{leaf.lower()}_w{j:02d}" for j in range(cfg.vocab_per_leaf)] for leaf in leaves}
    weights = np.array([1.0 / (i + 1) ** cfg.leaf_skew for i in range(len(leaves))])
    weights /= weights.sum()

    doc_lens = {
        "title": cfg.doc_len_title,
        "keywords": cfg.doc_len_keywords,
        "abstract": cfg.doc_len_abstract,
        "research_field": cfg.doc_len_research_field,
    }

    def draw_doc(length: int, leaf_ids: list[str]) -> list[str]:
        # every annotated leaf contributes a full quota of tokens, so an
        # interdisciplinary record reads like a complete treatment of both
        # fields rather than a diluted blend of one
        slots = []
        for leaf in leaf_ids:
            slots.extend([leaf] * length)
        rng.shuffle(slots)
        tokens = []
        for leaf in slots:
            pool = pools[leaf]
            tokens.append(pool[int(rng.integers(len(pool)))])
        return tokens

    def annotation_for(leaf_ids: list[str]) -> LabelSetSequence:
        paths = [h.path_to(leaf) for leaf in leaf_ids]
        depth = max(len(p) for p in paths)
        levels = [[p[k] for p in paths if len(p) > k] for k in range(depth)]
        return LabelSetSequence.from_lists(levels)

    n_ir = round(cfg.n_samples * cfg.ir_fraction)
    flags = np.array([True] * n_ir + [False] * (cfg.n_samples - n_ir))
    rng.shuffle(flags)

    top_of = {leaf: h.path_to(leaf)[0] for leaf in leaves}
    proposals: list[Proposal] = []
    for i, is_ir in enumerate(flags):
        if is_ir:
            # uniform over cross-top leaf pairs, independent of popularity
            first = leaves[int(rng.integers(len(leaves)))]
            second = first
            while top_of[second] == top_of[first]:
                second = leaves[int(rng.integers(len(leaves)))]
            chosen = sorted([first, second])
        else:
            chosen = [leaves[int(rng.choice(len(leaves), p=weights))]]
        docs = {doc_type: draw_doc(length, chosen) for doc_type, length in doc_lens.items()}
        proposals.append(
            Proposal(id=f"rp{i:05d}", documents=docs, annotation=annotation_for(chosen))
        )
    return h, proposals


def write_corpus(proposals: Sequence[Proposal], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in proposals:
            rec = {"id": p.id}
            for doc_type in DOC_TYPES:
                rec[doc_type] = p.documents[doc_type]
            rec["labels"] = p.annotation.to_lists()
            fh.write(json.dumps(rec, sort_keys=False) + "\n")


def write_hierarchy_file(h: Hierarchy, path: str | Path) -> None:
    nodes = sorted(h.nodes.values(), key=lambda n: (n.level, n.id))
    with open(path, "w", encoding="utf-8") as fh:
        for n in nodes:
            fh.write(f"{n.id}\t{n.parent_id}\t{n.level}\t{n.name}\n")

"""Discipline hierarchy: loading, validation, label-path distances and statistics.

The hierarchy is a forest of discipline codes rooted at a single ``ROOT``
sentinel.  Each node sits on one level (1..H) and points at a parent one
level up.  Annotations are per-level label sets; interdisciplinary records
carry two root-to-leaf paths and therefore two labels per level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

ROOT_ID = "ROOT"


class HierarchyError(ValueError):
    """Base class for structural problems in a hierarchy file."""


class DuplicateId(HierarchyError):
    pass


class SelfEdge(HierarchyError):
    pass


class CycleDetected(HierarchyError):
    pass


class OrphanNode(HierarchyError):
    pass


class LevelGap(HierarchyError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class DisciplineNode:
    id: str
    level: int
    parent_id: str
    name: str


@dataclass(frozen=True)
class LabelSetSequence:
    """Per-level label sets annotating one record.

    ``levels[k-1]`` holds the labels at hierarchy level k.  Trailing empty
    sets are stripped at construction so depth() is the deepest annotated
    level.
    """

    levels: tuple[frozenset[str], ...]

    @classmethod
    def from_lists(cls, lists: Iterable[Iterable[str]]) -> "LabelSetSequence":
        sets = [frozenset(level) for level in lists]
        while sets and not sets[-1]:
            sets.pop()
        return cls(tuple(sets))

    def depth(self) -> int:
        return len(self.levels)

    def is_empty(self) -> bool:
        return not self.levels

    def flatten(self) -> tuple[str, ...]:
        """Canonical token sequence: each level sorted, levels concatenated."""
        out: list[str] = []
        for level in self.levels:
            out.extend(sorted(level))
        return tuple(out)

    def key(self) -> str:
        """Canonical string form, usable as a dictionary key."""
        return "|".join(",".join(sorted(level)) for level in self.levels)

    def label_pairs(self) -> frozenset[tuple[int, str]]:
        """All (level, label) pairs of the annotation."""
        return frozenset(
            (k + 1, label) for k, level in enumerate(self.levels) for label in level
        )

    def to_lists(self) -> list[list[str]]:
        return [sorted(level) for level in self.levels]


@dataclass
class SequenceValidation:
    ok: bool
    violations: list[str] = field(default_factory=list)


class Hierarchy:
    """Immutable discipline forest with per-level label universes."""

    def __init__(self, nodes: dict[str, DisciplineNode], depth: int):
        self.nodes = nodes
        self.depth = depth
        # C_1..C_H, each sorted for deterministic label indexing
        self.levels: list[list[str]] = [
            sorted(n.id for n in nodes.values() if n.level == k)
            for k in range(1, depth + 1)
        ]
        self._pos: list[dict[str, int]] = [
            {label: i for i, label in enumerate(level)} for level in self.levels
        ]
        self._children: dict[str, list[str]] = {nid: [] for nid in nodes}
        self._children[ROOT_ID] = []
        for n in nodes.values():
            self._children[n.parent_id].append(n.id)
        for kids in self._children.values():
            kids.sort()

    def level_labels(self, level: int) -> list[str]:
        return self.levels[level - 1]

    def stop_token_id(self, level: int) -> str:
        return f"<stop:{level}>"

    def label_pos(self, level: int, label: str) -> int:
        """Position of a label inside its level; the stop token comes last."""
        if label == self.stop_token_id(level):
            return len(self.levels[level - 1])
        return self._pos[level - 1][label]

    def head_size(self, level: int) -> int:
        return len(self.levels[level - 1]) + 1

    def parent(self, label: str) -> str:
        return self.nodes[label].parent_id

    def children(self, label: str) -> list[str]:
        return self._children.get(label, [])

    def has_label(self, label: str) -> bool:
        return label in self.nodes

    def path_to(self, label: str) -> tuple[str, ...]:
        """Chain of codes from level 1 down to ``label``."""
        chain = [label]
        while self.nodes[chain[-1]].parent_id != ROOT_ID:
            chain.append(self.nodes[chain[-1]].parent_id)
        return tuple(reversed(chain))

    def leaves(self) -> list[str]:
        return sorted(nid for nid in self.nodes if not self._children[nid])


def load_hierarchy(spec_file: str | Path) -> Hierarchy:
    """Parse and validate a tab-separated hierarchy file.

    Line format: ``id<TAB>parent_id<TAB>level<TAB>name``; ``#`` starts a
    comment.  Raises the most specific structural error: DuplicateId,
    SelfEdge, OrphanNode, CycleDetected or LevelGap.
    """
    return parse_hierarchy_lines(
        Path(spec_file).read_text(encoding="utf-8").splitlines(), source=str(spec_file)
    )


def parse_hierarchy_lines(lines, source: str = "<memory>") -> Hierarchy:
    nodes: dict[str, DisciplineNode] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise HierarchyError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        nid, parent_id, level_s, name = parts
        try:
            level = int(level_s)
        except ValueError:
            raise HierarchyError(f"line {lineno}: level {level_s!r} is not an integer") from None
        if nid == ROOT_ID:
            raise DuplicateId(f"line {lineno}: node id {ROOT_ID!r} is reserved for the root sentinel")
        if nid in nodes:
            raise DuplicateId(f"duplicate node id {nid!r}")
        nodes[nid] = DisciplineNode(id=nid, level=level, parent_id=parent_id, name=name)

    if not nodes:
        raise HierarchyError(f"{source}: no nodes")

    for n in nodes.values():
        if n.parent_id == n.id:
            raise SelfEdge(f"node {n.id!r} is its own parent")
    for n in nodes.values():
        if n.parent_id != ROOT_ID and n.parent_id not in nodes:
            raise OrphanNode(f"node {n.id!r} references missing parent {n.parent_id!r}")

    # Parent chains must terminate at ROOT; a revisit is a cycle.
    reaches_root: set[str] = set()
    for start in nodes:
        seen: list[str] = []
        cur = start
        while cur != ROOT_ID and cur not in reaches_root:
            if cur in seen:
                cycle = seen[seen.index(cur):]
                raise CycleDetected(f"cycle through nodes {cycle!r}")
            seen.append(cur)
            cur = nodes[cur].parent_id
        reaches_root.update(seen)

    for n in nodes.values():
        if n.level < 1:
            raise LevelGap(f"node {n.id!r} has level {n.level} < 1")
        parent_level = 0 if n.parent_id == ROOT_ID else nodes[n.parent_id].level
        if parent_level != n.level - 1:
            raise LevelGap(
                f"node {n.id!r} at level {n.level} has parent {n.parent_id!r} at level {parent_level}"
            )

    depth = max(n.level for n in nodes.values())
    return Hierarchy(nodes, depth)


def validate_sequence(h: Hierarchy, seq: LabelSetSequence) -> SequenceValidation:
    """Check an annotation level by level; collects violations, never raises."""
    violations: list[str] = []
    for k, level in enumerate(seq.levels, 1):
        if not level and k < seq.depth():
            violations.append(f"level {k}: empty set before the last annotated level")
            continue
        for label in level:
            if not h.has_label(label) or h.nodes[label].level != k:
                violations.append(f"level {k}: {label!r} is not a level-{k} discipline")
                continue
            if k == 1:
                continue
            if h.parent(label) not in seq.levels[k - 2]:
                violations.append(
                    f"level {k}: parent {h.parent(label)!r} of {label!r} missing from level {k - 1}"
                )
    return SequenceValidation(ok=not violations, violations=violations)


def _levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, 1):
        cur = [i]
        for j, tok_b in enumerate(b, 1):
            cost = 0 if tok_a == tok_b else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def path_edit_distance(a: LabelSetSequence, b: LabelSetSequence) -> int:
    """Token-level Levenshtein distance between canonical flattenings."""
    return _levenshtein(a.flatten(), b.flatten())


def annotation_paths(h: Hierarchy, seq: LabelSetSequence) -> frozenset[tuple[str, ...]]:
    """Decompose an annotation into its maximal root-to-leaf chains.

    A label ends a chain when no label on the next annotated level is its
    child.  Only well-formed (validated) sequences decompose cleanly.
    """
    paths: set[tuple[str, ...]] = set()
    for k, level in enumerate(seq.levels, 1):
        next_level = seq.levels[k] if k < seq.depth() else frozenset()
        for label in level:
            has_child = any(h.parent(child) == label for child in next_level)
            if has_child:
                continue
            chain = [label]
            cur = label
            for back in range(k - 1, 0, -1):
                cur = h.parent(cur)
                chain.append(cur)
            paths.add(tuple(reversed(chain)))
    return frozenset(paths)


@dataclass
class LabelStats:
    """Occurrence and conditional co-occurrence statistics of annotation keys.

    ``p[key]`` is the fraction of samples carrying exactly that annotation.
    ``p_cond[(i, j)]`` is, among samples containing all of i's root-to-leaf
    paths, the fraction also containing all of j's.  Missing pairs read as 0.
    """

    p: dict[str, float]
    p_cond: dict[tuple[str, str], float]
    epsilon: float
    n_samples: int

    def occurrence(self, key: str) -> float:
        return self.p.get(key, 0.0)

    def cond(self, key_i: str, key_j: str) -> float:
        return self.p_cond.get((key_i, key_j), 0.0)


def compute_label_stats(
    dataset: Sequence[LabelSetSequence], eps: float, h: Hierarchy
) -> LabelStats:
    """Count annotation keys and their path-level co-occurrence over a dataset."""
    if not dataset:
        raise EmptyDataset("label statistics need at least one sample")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    n = len(dataset)
    key_count: dict[str, int] = {}
    key_paths: dict[str, frozenset[tuple[str, ...]]] = {}
    for seq in dataset:
        key = seq.key()
        key_count[key] = key_count.get(key, 0) + 1
        if key not in key_paths:
            key_paths[key] = annotation_paths(h, seq)

    p = {key: count / n for key, count in key_count.items()}

    # contains[i] = number of samples whose path set covers key i's paths,
    # computed over distinct keys weighted by their multiplicity.
    keys = sorted(key_count)
    contains: dict[str, int] = {k: 0 for k in keys}
    joint: dict[tuple[str, str], int] = {}
    for sample_key, count in key_count.items():
        sample_paths = key_paths[sample_key]
        covered = [k for k in keys if key_paths[k] <= sample_paths]
        for ki in covered:
            contains[ki] += count
        for ki in covered:
            for kj in covered:
                joint[(ki, kj)] = joint.get((ki, kj), 0) + count

    p_cond = {
        (ki, kj): cnt / contains[ki] for (ki, kj), cnt in joint.items() if contains[ki]
    }
    return LabelStats(p=p, p_cond=p_cond, epsilon=eps, n_samples=n)

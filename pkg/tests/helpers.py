"""Shared fixtures: toy hierarchies, random forests, file corruptions."""

from __future__ import annotations

import numpy as np

from hipath.corpus import DOC_TYPES, EncodedProposal
from hipath.hierarchy import LabelSetSequence

# Small fixed hierarchy used across modules: two top disciplines with two
# sub-levels each, one branch reaching level 3.
TOY_LINES = [
    "A\tROOT\t1\tAlpha Sciences",
    "B\tROOT\t1\tBeta Sciences",
    "A01\tA\t2\tAlpha One",
    "A02\tA\t2\tAlpha Two",
    "B01\tB\t2\tBeta One",
    "B02\tB\t2\tBeta Two",
    "A0101\tA01\t3\tAlpha One One",
    "B0101\tB01\t3\tBeta One One",
]


def write_hierarchy(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def seq(*levels):
    return LabelSetSequence.from_lists(levels)


def random_forest(rng: np.random.Generator):
    """Random valid forest as (id, parent_id, level, name) tuples, depth >= 2."""
    depth = int(rng.integers(2, 5))
    n_roots = int(rng.integers(1, 4))
    nodes = []
    counter = 0
    prev_level = []
    for r in range(n_roots):
        nid = f"N{counter:03d}"
        counter += 1
        nodes.append((nid, "ROOT", 1, f"root {r}"))
        prev_level.append(nid)
    for level in range(2, depth + 1):
        cur_level = []
        for parent in prev_level:
            for _ in range(int(rng.integers(0, 4))):
                nid = f"N{counter:03d}"
                counter += 1
                nodes.append((nid, parent, level, f"node {nid}"))
                cur_level.append(nid)
        if not cur_level:
            # keep the promised depth: give the first parent one child
            nid = f"N{counter:03d}"
            counter += 1
            nodes.append((nid, prev_level[0], level, f"node {nid}"))
            cur_level.append(nid)
        prev_level = cur_level
    return nodes


def corrupt_forest(nodes, kind: str, rng: np.random.Generator):
    """Inject one structural defect of the given kind into a valid forest."""
    nodes = [list(n) for n in nodes]
    by_id = {n[0]: n for n in nodes}
    if kind == "self_edge":
        victim = nodes[int(rng.integers(len(nodes)))]
        victim[1] = victim[0]
    elif kind == "orphan":
        victim = nodes[int(rng.integers(len(nodes)))]
        victim[1] = "GHOST"
    elif kind == "cycle":
        # point an ancestor at one of its strict descendants
        internal = [n for n in nodes if any(m[1] == n[0] for m in nodes)]
        anc = internal[int(rng.integers(len(internal)))]
        descendants = []
        frontier = [anc[0]]
        while frontier:
            nxt = [m[0] for m in nodes if m[1] in frontier]
            descendants.extend(nxt)
            frontier = nxt
        victim_id = descendants[int(rng.integers(len(descendants)))]
        anc[1] = victim_id
    elif kind == "level_gap":
        victim = nodes[int(rng.integers(len(nodes)))]
        victim[2] = victim[2] + 1 + int(rng.integers(2))
    else:
        raise ValueError(kind)
    shuffled = list(nodes)
    rng.shuffle(shuffled)
    return [tuple(n) for n in shuffled]


def forest_lines(nodes):
    return [f"{nid}\t{pid}\t{level}\t{name}" for nid, pid, level, name in nodes]


def levenshtein_oracle(a, b):
    """Full-matrix Levenshtein DP, kept independent of the implementation."""
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            sub = d[i - 1][j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, sub)
    return d[m][n]


def flatten_oracle(s: LabelSetSequence):
    out = []
    for level in s.levels:
        out.extend(sorted(level))
    return out


def random_sequence(rng: np.random.Generator, max_depth=4, max_labels=3):
    depth = int(rng.integers(1, max_depth + 1))
    levels = []
    for k in range(depth):
        n_labels = int(rng.integers(1, max_labels + 1))
        pool = [f"L{k}_{i}" for i in range(5)]
        levels.append(rng.choice(pool, size=n_labels, replace=False).tolist())
    return LabelSetSequence.from_lists(levels)


def make_encoded(rng: np.random.Generator, vocab_size, max_len, n_real=None, rid="x",
                 annotation=None):
    """Random EncodedProposal with n_real tokens per document."""
    ids = {}
    mask = {}
    for doc_type in DOC_TYPES:
        real = n_real if n_real is not None else int(rng.integers(1, max_len + 1))
        row = np.zeros(max_len, dtype=np.int64)
        row[:real] = rng.integers(2, vocab_size, size=real)
        m = np.zeros(max_len, dtype=bool)
        m[:real] = True
        ids[doc_type] = row
        mask[doc_type] = m
    if annotation is None:
        annotation = seq(["A"])
    return EncodedProposal(id=rid, ids=ids, mask=mask, annotation=annotation)

import numpy as np
import pytest

from hipath.hierarchy import (
    CycleDetected,
    DuplicateId,
    EmptyDataset,
    LabelSetSequence,
    LevelGap,
    OrphanNode,
    SelfEdge,
    compute_label_stats,
    load_hierarchy,
    path_edit_distance,
    validate_sequence,
)

from helpers import (
    TOY_LINES,
    corrupt_forest,
    flatten_oracle,
    forest_lines,
    levenshtein_oracle,
    random_forest,
    random_sequence,
    seq,
    write_hierarchy,
)

EIGHT_TOP_LINES = [f"{c}\tROOT\t1\t{c} discipline" for c in "ABCDEFGH"] + [
    f"{c}01\t{c}\t2\t{c} sub" for c in "ABCDEFGH"
] + [f"{c}0101\t{c}01\t3\t{c} subsub" for c in "ABCDEFGH"]


@pytest.fixture
def toy(tmp_path):
    return load_hierarchy(write_hierarchy(tmp_path / "toy.tsv", TOY_LINES))


def test_load_eight_top_disciplines(tmp_path):
    h = load_hierarchy(write_hierarchy(tmp_path / "h.tsv", EIGHT_TOP_LINES))
    assert len(h.level_labels(1)) == 8
    assert h.depth == 3
    assert h.head_size(1) == 9
    assert h.path_to("C0101") == ("C", "C01", "C0101")


def test_self_edge_rejected(tmp_path):
    lines = TOY_LINES + ["X\tX\t2\tself"]
    with pytest.raises(SelfEdge):
        load_hierarchy(write_hierarchy(tmp_path / "h.tsv", lines))


def test_adjacent_cycle_rejected(tmp_path):
    lines = ["A01\tB\t2\tcyclic", "B\tA01\t1\tcyclic"]
    with pytest.raises(CycleDetected):
        load_hierarchy(write_hierarchy(tmp_path / "h.tsv", lines))


def test_duplicate_id_rejected(tmp_path):
    lines = TOY_LINES + ["A01\tB\t2\tagain"]
    with pytest.raises(DuplicateId):
        load_hierarchy(write_hierarchy(tmp_path / "h.tsv", lines))


def test_orphan_rejected(tmp_path):
    lines = TOY_LINES + ["Z01\tZ\t2\torphan"]
    with pytest.raises(OrphanNode):
        load_hierarchy(write_hierarchy(tmp_path / "h.tsv", lines))


def test_level_gap_rejected(tmp_path):
    lines = TOY_LINES + ["A010101\tA\t4\tskips level"]
    with pytest.raises(LevelGap):
        load_hierarchy(write_hierarchy(tmp_path / "h.tsv", lines))


def test_comments_and_blank_lines_ignored(tmp_path):
    lines = ["# header", ""] + TOY_LINES
    h = load_hierarchy(write_hierarchy(tmp_path / "h.tsv", lines))
    assert len(h.nodes) == len(TOY_LINES)


def test_random_forests_accepted_and_corruptions_rejected(tmp_path):
    expected = {
        "self_edge": SelfEdge,
        "orphan": OrphanNode,
        "cycle": CycleDetected,
        "level_gap": LevelGap,
    }
    rng = np.random.default_rng(7)
    kinds = list(expected)
    for trial in range(30):
        nodes = random_forest(rng)
        path = write_hierarchy(tmp_path / f"ok{trial}.tsv", forest_lines(nodes))
        h = load_hierarchy(path)
        assert len(h.nodes) == len(nodes)

        kind = kinds[trial % len(kinds)]
        bad = corrupt_forest(nodes, kind, rng)
        bad_path = write_hierarchy(tmp_path / f"bad{trial}.tsv", forest_lines(bad))
        with pytest.raises(expected[kind]):
            load_hierarchy(bad_path)


def test_validate_single_path(toy):
    assert validate_sequence(toy, seq(["A"], ["A01"])).ok


def test_validate_broken_parent_link(toy):
    result = validate_sequence(toy, seq(["A"], ["B01"]))
    assert not result.ok
    assert any("level 2" in v for v in result.violations)


def test_validate_two_path_annotation(toy):
    # hand check: A01's parent A and B02's parent B are both on level 1
    assert validate_sequence(toy, seq(["A", "B"], ["A01", "B02"])).ok


def test_validate_unknown_label(toy):
    assert not validate_sequence(toy, seq(["Q"])).ok


def test_edit_distance_identity(toy):
    s = seq(["A"], ["A01"])
    assert path_edit_distance(s, s) == 0


def test_edit_distance_sibling_swap():
    a = seq(["A"], ["A01"])
    b = seq(["A"], ["A02"])
    assert path_edit_distance(a, b) == levenshtein_oracle(flatten_oracle(a), flatten_oracle(b))
    assert path_edit_distance(a, b) == 1


def test_edit_distance_cross_discipline():
    a = seq(["A"], ["A01"])
    b = seq(["B"], ["B01"], ["B0101"])
    assert path_edit_distance(a, b) == levenshtein_oracle(flatten_oracle(a), flatten_oracle(b))
    assert path_edit_distance(a, b) == 3


def test_edit_distance_matches_oracle_and_metric_axioms():
    rng = np.random.default_rng(11)
    seqs = [random_sequence(rng) for _ in range(40)]
    for _ in range(200):
        a, b, c = (seqs[int(rng.integers(len(seqs)))] for _ in range(3))
        dab = path_edit_distance(a, b)
        assert dab == levenshtein_oracle(flatten_oracle(a), flatten_oracle(b))
        assert dab >= 0
        assert dab == path_edit_distance(b, a)
        if flatten_oracle(a) == flatten_oracle(b):
            assert dab == 0
        else:
            assert dab > 0
        assert dab <= path_edit_distance(a, c) + path_edit_distance(c, b)


def test_label_stats_occurrence(toy):
    data = [seq(["A"], ["A01"])] * 4 + [seq(["B"], ["B01"])] * 6
    stats = compute_label_stats(data, 1e-12, toy)
    assert stats.occurrence(seq(["A"], ["A01"]).key()) == pytest.approx(0.4)


def test_label_stats_never_coannotated(toy):
    data = [seq(["A"], ["A01"]), seq(["B"], ["B01"])]
    stats = compute_label_stats(data, 1e-12, toy)
    ka, kb = data[0].key(), data[1].key()
    assert stats.cond(ka, kb) == 0.0


def test_label_stats_joint_hand_count(toy):
    # 6 samples: i alone twice, j alone twice, i+j jointly twice.
    # i's paths appear in 4 samples, 2 of which also carry j's paths.
    i = seq(["A"], ["A01"])
    j = seq(["B"], ["B01"])
    joint = seq(["A", "B"], ["A01", "B01"])
    data = [i, i, j, j, joint, joint]
    stats = compute_label_stats(data, 1e-12, toy)
    assert stats.cond(i.key(), j.key()) == pytest.approx(0.5)
    assert stats.cond(j.key(), i.key()) == pytest.approx(0.5)


def test_label_stats_self_cond_is_one(toy):
    rng = np.random.default_rng(3)
    pool = [seq(["A"], ["A01"]), seq(["B"], ["B02"]), seq(["A", "B"], ["A02", "B01"])]
    data = [pool[int(rng.integers(len(pool)))] for _ in range(20)]
    stats = compute_label_stats(data, 1e-9, toy)
    for key, prob in stats.p.items():
        assert 0.0 <= prob <= 1.0
        assert stats.cond(key, key) == pytest.approx(1.0)


def test_label_stats_empty_dataset(toy):
    with pytest.raises(EmptyDataset):
        compute_label_stats([], 1e-12, toy)


def test_sequence_canonical_key_order_insensitive():
    assert seq(["B", "A"], ["A01"]).key() == seq(["A", "B"], ["A01"]).key()
    assert seq(["A"]).flatten() == ("A",)


def test_sequence_trailing_empty_levels_stripped():
    s = LabelSetSequence.from_lists([["A"], []])
    assert s.depth() == 1

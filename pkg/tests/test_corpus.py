import json

import numpy as np
import pytest

from hipath.corpus import (
    DOC_TYPES,
    PAD_ID,
    UNK_ID,
    ConfigInvalid,
    EmptyCorpus,
    GeneratorConfig,
    Proposal,
    build_vocab,
    encode,
    generate_synthetic,
    ingest,
    write_corpus,
    write_hierarchy_file,
)
from hipath.hierarchy import load_hierarchy, validate_sequence

from helpers import TOY_LINES, seq, write_hierarchy


@pytest.fixture
def toy(tmp_path):
    return load_hierarchy(write_hierarchy(tmp_path / "toy.tsv", TOY_LINES))


def record(rid="r1", labels=(("A",), ("A01",)), **overrides):
    rec = {
        "id": rid,
        "title": ["deep", "learning"],
        "keywords": ["nets"],
        "abstract": ["we", "study", "nets"],
        "research_field": ["ml"],
        "labels": [list(lv) for lv in labels],
    }
    rec.update(overrides)
    return rec


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path


def test_ingest_drops_incomplete(tmp_path, toy):
    records = [record(f"r{i}") for i in range(3)] + [record("r3", title=[])]
    result = ingest(write_jsonl(tmp_path / "c.jsonl", records), toy)
    assert len(result.proposals) == 3
    assert result.dropped_incomplete == 1


def test_ingest_drops_invalid_annotation(tmp_path, toy):
    records = [record("ok"), record("bad", labels=(("A",), ("B01",)))]
    result = ingest(write_jsonl(tmp_path / "c.jsonl", records), toy)
    assert [p.id for p in result.proposals] == ["ok"]
    assert result.dropped_invalid == 1


def test_ingest_keeps_two_path_record(tmp_path, toy):
    records = [record("ir", labels=(("A", "B"), ("A01", "B02")))]
    result = ingest(write_jsonl(tmp_path / "c.jsonl", records), toy)
    assert len(result.proposals) == 1
    assert result.proposals[0].annotation.levels[0] == frozenset({"A", "B"})


def test_ingest_reports_malformed_with_line_number(tmp_path, toy):
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps(record()) + "\nnot json\n", encoding="utf-8")
    result = ingest(path, toy)
    assert result.malformed and result.malformed[0][0] == 2


def test_ingest_empty_corpus(tmp_path, toy):
    path = tmp_path / "c.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(EmptyCorpus):
        ingest(path, toy)


def make_proposal(tokens_by_type):
    return Proposal(id="p", documents=tokens_by_type, annotation=seq(["A"]))


def test_build_vocab_counts_and_reserved_ids():
    p = make_proposal(
        {
            "title": ["a", "b"],
            "keywords": ["c"],
            "abstract": ["d", "e", "a"],
            "research_field": ["a"],
        }
    )
    v = build_vocab([p], min_freq=1)
    assert v.size == 7
    assert v.id_of("a") >= 2


def test_build_vocab_min_freq_degenerate():
    p = make_proposal({"title": ["x"], "keywords": ["y"], "abstract": ["z"], "research_field": ["w"]})
    v = build_vocab([p], min_freq=5)
    assert v.size == 2


def test_build_vocab_min_freq_boundary():
    p = make_proposal(
        {"title": ["x", "x"], "keywords": ["y"], "abstract": ["z"], "research_field": ["w"]}
    )
    v = build_vocab([p], min_freq=2)
    assert v.id_of("x") != UNK_ID
    assert v.id_of("y") == UNK_ID


def test_encode_pads_and_masks(toy):
    p = make_proposal({"title": ["a", "b", "c"], "keywords": ["a"], "abstract": ["a"], "research_field": ["a"]})
    v = build_vocab([p], min_freq=1)
    ep = encode(p, v, max_len=100)
    assert ep.ids["title"].shape == (100,)
    assert ep.mask["title"].sum() == 3
    assert np.all(ep.ids["title"][3:] == PAD_ID)


def test_encode_truncates():
    p = make_proposal(
        {"title": ["t"], "keywords": ["t"], "abstract": [f"w{i}" for i in range(150)], "research_field": ["t"]}
    )
    v = build_vocab([p], min_freq=1)
    ep = encode(p, v, max_len=100)
    assert ep.mask["abstract"].sum() == 100


def test_encode_unk():
    p = make_proposal({"title": ["known"], "keywords": ["known"], "abstract": ["known"], "research_field": ["known"]})
    v = build_vocab([p], min_freq=1)
    p2 = make_proposal({"title": ["unknown"], "keywords": ["known"], "abstract": ["known"], "research_field": ["known"]})
    ep = encode(p2, v, max_len=10)
    assert ep.ids["title"][0] == UNK_ID


def test_encode_ids_below_vocab_size(toy):
    cfg = GeneratorConfig(n_samples=50, ir_fraction=0.1)
    h, proposals = generate_synthetic(cfg, seed=3)
    v = build_vocab(proposals, min_freq=1)
    for p in proposals:
        ep = encode(p, v, max_len=40)
        for doc_type in DOC_TYPES:
            assert ep.ids[doc_type].max() < v.size
            assert np.all((ep.ids[doc_type] != PAD_ID) == ep.mask[doc_type])


def test_generator_ir_count_and_validity():
    cfg = GeneratorConfig(n_samples=1000, ir_fraction=0.07)
    h, proposals = generate_synthetic(cfg, seed=11)
    n_ir = sum(1 for p in proposals if len(p.annotation.levels[0]) >= 2)
    assert n_ir == 70
    for p in proposals[:50]:
        assert validate_sequence(h, p.annotation).ok


def test_generator_zero_ir_fraction():
    cfg = GeneratorConfig(n_samples=60, ir_fraction=0.0)
    _, proposals = generate_synthetic(cfg, seed=5)
    assert all(len(p.annotation.levels[0]) == 1 for p in proposals)


def test_generator_deterministic(tmp_path):
    cfg = GeneratorConfig(n_samples=120, ir_fraction=0.1)
    h1, p1 = generate_synthetic(cfg, seed=9)
    h2, p2 = generate_synthetic(cfg, seed=9)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_corpus(p1, a)
    write_corpus(p2, b)
    assert a.read_bytes() == b.read_bytes()
    ha, hb = tmp_path / "a.tsv", tmp_path / "b.tsv"
    write_hierarchy_file(h1, ha)
    write_hierarchy_file(h2, hb)
    assert ha.read_bytes() == hb.read_bytes()


def test_generator_keywords_come_from_annotated_leaf_pools():
    cfg = GeneratorConfig(n_samples=200, ir_fraction=0.2)
    h, proposals = generate_synthetic(cfg, seed=2)
    for p in proposals:
        leaf_prefixes = set()
        for k, level in enumerate(p.annotation.levels):
            next_level = p.annotation.levels[k + 1] if k + 1 < p.annotation.depth() else frozenset()
            for label in level:
                if not any(h.parent(child) == label for child in next_level):
                    leaf_prefixes.add(label.lower())
        for tokens in p.documents.values():
            for tok in tokens:
                assert tok.split("_w")[0] in leaf_prefixes


def test_generator_config_invalid():
    with pytest.raises(ConfigInvalid):
        generate_synthetic(GeneratorConfig(n_samples=0), seed=1)
    with pytest.raises(ConfigInvalid):
        generate_synthetic(GeneratorConfig(ir_fraction=1.5), seed=1)


def test_generator_round_trip_through_files(tmp_path):
    cfg = GeneratorConfig(n_samples=40, ir_fraction=0.1)
    h, proposals = generate_synthetic(cfg, seed=21)
    hpath = tmp_path / "h.tsv"
    cpath = tmp_path / "c.jsonl"
    write_hierarchy_file(h, hpath)
    write_corpus(proposals, cpath)
    h2 = load_hierarchy(hpath)
    result = ingest(cpath, h2)
    assert len(result.proposals) == 40
    assert result.dropped == 0

"""Corpus ingestion, markers, graphs, synthetic generation, splitting."""

import json

import numpy as np
import pytest

from crex.data import (
    FoldAssignment,
    Instance,
    LabelVocabulary,
    SyntheticSpec,
    build_dependency_graph,
    build_marked_dependency_graph,
    corpus_to_json_bytes,
    generate_synthetic,
    insert_typed_markers,
    parse_tacred_json,
    signature_tokens,
    stratified_split,
    strip_markers,
    validate_instance,
)
from crex.errors import ConfigError, ParseError, ValidationError


def make_instance(
    tokens=("Bill", "founded", "Acme"),
    subj=(0, 0),
    obj=(2, 2),
    heads=(2, 0, 2),
    relation="r1",
    inst_id="i1",
    subj_type="PERSON",
    obj_type="ORGANIZATION",
):
    return Instance(
        id=inst_id,
        tokens=tuple(tokens),
        subj_span=subj,
        obj_span=obj,
        subj_type=subj_type,
        obj_type=obj_type,
        dep_heads=tuple(heads),
        dep_labels=("dep",) * len(tokens),
        relation=relation,
    )


def random_instance(rng, n_tokens=None):
    """Random valid instance: random tree, random non-overlapping spans."""
    n = int(n_tokens or rng.integers(3, 9))
    # attach each node to a random earlier node in a random order -> a tree
    order = rng.permutation(n)
    heads = [0] * n
    for pos in range(1, n):
        parent = order[int(rng.integers(pos))]
        heads[order[pos]] = int(parent) + 1
    starts = rng.choice(n, size=2, replace=False)
    a, b = int(min(starts)), int(max(starts))
    subj = (a, a)
    obj = (b, min(b + int(rng.integers(0, 2)), n - 1))
    if obj[0] <= subj[1] and subj[0] <= obj[1]:
        obj = (b, b)
    tokens = tuple(f"w{rng.integers(30)}" for _ in range(n))
    return make_instance(
        tokens=tokens, subj=subj, obj=obj, heads=heads, inst_id=f"r{rng.integers(1e6)}"
    )


# ---------------------------------------------------------------------------
# parse_tacred_json
# ---------------------------------------------------------------------------


def tacred_record(**overrides):
    rec = {
        "id": "e001",
        "token": ["Bill", "founded", "Acme"],
        "subj_start": 0,
        "subj_end": 0,
        "obj_start": 2,
        "obj_end": 2,
        "subj_type": "PERSON",
        "obj_type": "ORGANIZATION",
        "stanford_head": [2, 0, 2],
        "stanford_deprel": ["nsubj", "ROOT", "obj"],
        "relation": "org:founded_by",
    }
    rec.update(overrides)
    return rec


def test_parse_valid_record():
    corpus, vocab = parse_tacred_json(json.dumps([tacred_record()]).encode())
    assert len(corpus) == 1
    inst = corpus[0]
    assert inst.tokens == ("Bill", "founded", "Acme")
    assert inst.subj_span == (0, 0) and inst.obj_span == (2, 2)
    assert inst.relation == "org:founded_by"
    assert "no_relation" in vocab.labels
    assert vocab.negative_label == "no_relation"
    assert vocab.labels == tuple(sorted(vocab.labels))


def test_parse_span_out_of_range_names_id():
    rec = tacred_record(subj_start=5, subj_end=5)
    with pytest.raises(ValidationError, match="e001"):
        parse_tacred_json(json.dumps([rec]).encode())


def test_parse_empty_array_is_error():
    with pytest.raises(ValidationError, match="no labels observed"):
        parse_tacred_json(b"[]")


def test_parse_malformed_json_reports_byte_offset():
    with pytest.raises(ParseError, match="byte"):
        parse_tacred_json(b'[{"id": }]')


def test_parse_missing_field_names_id():
    rec = tacred_record()
    del rec["stanford_head"]
    with pytest.raises(ValidationError, match="e001"):
        parse_tacred_json(json.dumps([rec]).encode())


def test_parse_head_cycle_names_id():
    rec = tacred_record(stanford_head=[2, 1, 0])  # 0 <-> 1 cycle
    with pytest.raises(ValidationError, match="e001"):
        parse_tacred_json(json.dumps([rec]).encode())


def test_parse_round_trips_through_emission():
    corpus, _ = parse_tacred_json(json.dumps([tacred_record()]).encode())
    again, _ = parse_tacred_json(corpus_to_json_bytes(corpus))
    assert again == corpus


# ---------------------------------------------------------------------------
# insert_typed_markers
# ---------------------------------------------------------------------------


def test_marker_layout_matches_scheme():
    marked = insert_typed_markers(make_instance())
    assert list(marked.tokens) == [
        "@", "*", "person", "*", "Bill", "@",
        "founded",
        "#", "^", "organization", "^", "Acme", "#",
    ]
    assert marked.subj_anchor == 0
    assert marked.obj_anchor == 7
    assert marked.origin_map[marked.subj_anchor] is None
    assert marked.origin_map[marked.obj_anchor] is None


def test_marker_adjacent_spans_enumerated_by_hand():
    # Three tokens, subject at 0, object at 1: walking the insertion rules
    # by hand gives 13 tokens with no marker overlap.
    inst = make_instance(
        tokens=("A", "B", "C"), subj=(0, 0), obj=(1, 1), heads=(2, 0, 2),
        subj_type="T1", obj_type="T2",
    )
    marked = insert_typed_markers(inst)
    assert list(marked.tokens) == [
        "@", "*", "t1", "*", "A", "@", "#", "^", "t2", "^", "B", "#", "C",
    ]
    assert len(marked.tokens) == 13
    assert marked.subj_anchor == 0 and marked.obj_anchor == 6


def test_marker_object_before_subject():
    inst = make_instance(
        tokens=("Acme", "hired", "Bill"), subj=(2, 2), obj=(0, 0), heads=(2, 0, 2)
    )
    marked = insert_typed_markers(inst)
    assert marked.tokens[marked.subj_anchor] == "@"
    assert marked.tokens[marked.obj_anchor] == "#"
    assert marked.obj_anchor < marked.subj_anchor
    assert strip_markers(marked) == inst.tokens


@pytest.mark.parametrize("seed", range(25))
def test_marker_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    marked = insert_typed_markers(inst)
    assert strip_markers(marked) == inst.tokens
    originals = [o for o in marked.origin_map if o is not None]
    assert originals == sorted(originals) == list(range(len(inst.tokens)))


# ---------------------------------------------------------------------------
# dependency graphs
# ---------------------------------------------------------------------------


def test_graph_example_heads():
    adj = build_dependency_graph(make_instance())
    assert adj == ((0, 1), (0, 1, 2), (1, 2))


def test_graph_single_token():
    inst = make_instance(tokens=("x",), subj=(0, 0), obj=(0, 0), heads=(0,))
    # single token cannot host two disjoint spans; bypass span validation
    adj = build_dependency_graph(inst)
    assert adj == ((0,),)


def test_graph_chain():
    inst = make_instance(
        tokens=("a", "b", "c", "d"), subj=(0, 0), obj=(2, 2), heads=(0, 1, 2, 3)
    )
    adj = build_dependency_graph(inst)
    assert adj[3] == (2, 3)


def test_graph_rejects_multiple_roots():
    inst = make_instance(heads=(0, 0, 2))
    with pytest.raises(ValidationError, match="root"):
        build_dependency_graph(inst)


@pytest.mark.parametrize("seed", range(15))
def test_graph_symmetric_reflexive_entry_count(seed):
    rng = np.random.default_rng(100 + seed)
    inst = random_instance(rng)
    adj = build_dependency_graph(inst)
    n = len(inst.tokens)
    assert sum(len(a) for a in adj) == 2 * (n - 1) + n
    for i, nbrs in enumerate(adj):
        assert i in nbrs
        for j in nbrs:
            assert i in adj[j]


def test_marked_graph_attaches_markers_to_span_first():
    inst = make_instance()
    marked = insert_typed_markers(inst)
    adj = build_marked_dependency_graph(inst, marked)
    # 'Bill' sits at marked position 4; all five subject markers attach there
    bill = 4
    for marker_pos in (0, 1, 2, 3, 5):
        assert bill in adj[marker_pos]
        assert marker_pos in adj[bill]
    n_orig = len(inst.tokens)
    n_marked = len(marked.tokens)
    expected_edges = (n_orig - 1) + 10  # tree edges + one per marker token
    assert sum(len(a) for a in adj) == 2 * expected_edges + n_marked


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def test_synthetic_tier_counts_largest_remainder():
    spec = SyntheticSpec(1000, 4, 20, (0.6, 0.2, 0.2), seed=5)
    _, _, tier_of = generate_synthetic(spec)
    counts = {t: 0 for t in ("easy", "hard", "noisy")}
    for t in tier_of.values():
        counts[t] += 1
    assert counts == {"easy": 600, "hard": 200, "noisy": 200}


def test_synthetic_no_noise_keeps_planted_labels():
    spec = SyntheticSpec(200, 3, 15, (1.0, 0.0, 0.0), seed=9)
    corpus, vocab, tier_of = generate_synthetic(spec)
    sig = signature_tokens(spec)
    for inst in corpus:
        assert tier_of[inst.id] == "easy"
        assert inst.tokens[2] == sig[inst.relation]


def test_synthetic_determinism_bytes():
    spec = SyntheticSpec(150, 5, 25, (0.5, 0.3, 0.2), seed=42)
    a = corpus_to_json_bytes(generate_synthetic(spec)[0])
    b = corpus_to_json_bytes(generate_synthetic(spec)[0])
    assert a == b


def test_synthetic_vocab_too_small():
    with pytest.raises(ConfigError, match="vocab_size"):
        generate_synthetic(SyntheticSpec(10, 8, 11, (1.0, 0.0, 0.0), seed=1))


def test_synthetic_instances_validate():
    spec = SyntheticSpec(100, 4, 20, (0.5, 0.3, 0.2), seed=3)
    corpus, vocab, _ = generate_synthetic(spec)
    for inst in corpus:
        validate_instance(inst)
        assert inst.relation in vocab.labels


def test_synthetic_noisy_labels_differ_from_planted():
    spec = SyntheticSpec(300, 4, 20, (0.0, 0.0, 1.0), seed=8)
    corpus, _, tier_of = generate_synthetic(spec)
    sig = signature_tokens(spec)
    planted_of = {tok: rel for rel, tok in sig.items()}
    for inst in corpus:
        assert tier_of[inst.id] == "noisy"
        planted = planted_of[inst.tokens[2]]
        assert inst.relation != planted


# ---------------------------------------------------------------------------
# stratified_split
# ---------------------------------------------------------------------------


def single_relation_corpus(n, relation="rel00"):
    rng = np.random.default_rng(0)
    return [
        make_instance(inst_id=f"c{i}", relation=relation) for i in range(n)
    ]


def test_split_even_folds():
    folds = stratified_split(single_relation_corpus(10), 5, seed=1)
    sizes = sorted(len(folds.members(f)) for f in range(5))
    assert sizes == [2, 2, 2, 2, 2]


def test_split_uneven_folds():
    folds = stratified_split(single_relation_corpus(7), 3, seed=1)
    sizes = sorted(len(folds.members(f)) for f in range(3))
    assert sizes == [2, 2, 3]


def test_split_determinism():
    corpus = single_relation_corpus(20)
    a = stratified_split(corpus, 4, seed=7)
    b = stratified_split(corpus, 4, seed=7)
    assert a.fold_of == b.fold_of


def test_split_too_many_folds():
    with pytest.raises(ConfigError, match="fold count"):
        stratified_split(single_relation_corpus(3), 5, seed=1)


@pytest.mark.parametrize("seed", range(10))
def test_split_partition_and_stratification(seed):
    rng = np.random.default_rng(200 + seed)
    relations = [f"rel{r}" for r in range(4)]
    corpus = []
    for i in range(60):
        rel = relations[int(rng.integers(4))]
        corpus.append(make_instance(inst_id=f"p{i}", relation=rel))
    n = int(rng.integers(2, 6))
    folds = stratified_split(corpus, n, seed=seed)
    assert set(folds.fold_of) == {inst.id for inst in corpus}
    by_rel_fold = {}
    for inst in corpus:
        f = folds.fold_of[inst.id]
        assert 0 <= f < n
        by_rel_fold.setdefault(inst.relation, [0] * n)[f] += 1
    for rel, counts in by_rel_fold.items():
        assert max(counts) - min(counts) <= 1, (rel, counts)


def test_fold_assignment_json_round_trip():
    folds = stratified_split(single_relation_corpus(9), 3, seed=2)
    again = FoldAssignment.from_json(json.loads(json.dumps(folds.to_json())))
    assert again.fold_of == dict(folds.fold_of)
    assert again.num_folds == folds.num_folds


def test_vocabulary_requires_negative_label():
    with pytest.raises(ValidationError):
        LabelVocabulary(labels=("a", "b"), negative_label="no_relation")


def test_graph_rejects_cycle():
    inst = make_instance(heads=(0, 3, 2))  # root at 0; tokens 1 and 2 form a cycle
    with pytest.raises(ValidationError, match="cycle"):
        build_dependency_graph(inst)

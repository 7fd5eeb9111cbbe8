"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The two training-heavy
criteria are timed against their budgets on the default (numba) backend;
the pure-numpy fallback is functionally identical but slower than the
stated budgets.
"""

import dataclasses
import itertools
import json
import os
import time

import numpy as np
import pytest

from crex.curriculum import (
    CurriculumSchedule,
    build_anti_schedule,
    build_schedule,
    bucketize,
    cross_review,
    curriculum_train,
)
from crex.data import (
    LabelVocabulary,
    SyntheticSpec,
    generate_synthetic,
    insert_typed_markers,
    parse_tacred_json,
    strip_markers,
    stratified_split,
)
from crex.evalx import evaluate_model, micro_prf
from crex.model import (
    ModelConfig,
    ModelParameters,
    encode_corpus,
    encode_instance,
    forward_encoded,
    init_params,
    loss_and_backward,
)
from crex.optim import OptimConfig, OptimState, adamw_step, train
from crex.rng import child_seed
from tests.test_data import random_instance
from tests.test_evalx import confusion_matrix_oracle
from tests.test_model import finite_difference_gradient, max_relative_error

SEED_SUITE = (1, 2, 3, 4, 5)

# Shared synthetic benchmark: 2000 instances, 60/20/20 easy/hard/noisy.
BENCH_SPEC = SyntheticSpec(
    num_instances=2000, num_relations=8, vocab_size=50,
    tier_fractions=(0.6, 0.2, 0.2), seed=11,
)
EVAL_SPEC = SyntheticSpec(
    num_instances=600, num_relations=8, vocab_size=50,
    tier_fractions=(1.0, 0.0, 0.0), seed=404,
)


def _passline(text):
    print(f"\nPASS {text}")


@pytest.fixture(scope="module")
def bench():
    corpus, vocab, tier_of = generate_synthetic(BENCH_SPEC)
    config = ModelConfig(num_labels=len(vocab))  # default model dims
    encoded = encode_corpus(corpus, vocab, config)
    return corpus, vocab, tier_of, config, encoded


def test_criterion_1_headline_numbers_not_claimed():
    """Published TACRED-family scores need licensed data and a large
    pretrained encoder; the README must say so instead of claiming them."""
    readme = open(os.path.join(os.path.dirname(__file__), "..", "README.md")).read()
    assert "75.0" in readme and "91.4" in readme
    assert "not" in readme.lower()
    _passline(
        "criterion 1: headline benchmark scores are explicitly documented "
        "as out of scope, not claimed"
    )


def test_criterion_2_gradient_oracle():
    started = time.perf_counter()
    rng = np.random.default_rng(20240808)
    checked = 0
    worst = 0.0
    for trial in range(20):
        n_tokens = int(rng.integers(3, 8))
        inst = random_instance(rng, n_tokens=n_tokens)
        n_labels = int(rng.integers(2, 5))
        labels = tuple(sorted(["no_relation"] + [f"r{i+1}" for i in range(n_labels - 1)]))
        vocab = LabelVocabulary(labels=labels, negative_label="no_relation")
        cfg = ModelConfig(
            num_labels=n_labels,
            embed_dim=int(rng.choice([2, 4])),
            gat_dim=int(rng.choice([2, 4])),
            vocab_hash_buckets=16,
        )
        enc = encode_instance(inst, vocab, cfg)
        params = init_params(cfg, seed=trial)
        gold = int(rng.integers(n_labels))
        training = trial % 2 == 0
        mask_seed = int(rng.integers(2**32))

        def dropout_rng():
            return np.random.default_rng(mask_seed) if training else None

        trace = forward_encoded(params, enc, dropout_rng=dropout_rng())
        _, analytic = loss_and_backward(params, trace, gold)

        def loss_at(flat):
            t = forward_encoded(
                ModelParameters(cfg, flat), enc, dropout_rng=dropout_rng()
            )
            return -np.log(t.probs[gold])

        numeric = finite_difference_gradient(loss_at, params.flat, step=1e-4)
        err = max_relative_error(analytic, numeric)
        worst = max(worst, err)
        assert err < 1e-4, f"trial {trial}: max relative error {err}"
        checked += 1
    elapsed = time.perf_counter() - started
    assert checked == 20
    assert elapsed < 10.0, f"gradient oracle took {elapsed:.1f}s"
    _passline(
        f"criterion 2: analytic gradient vs central differences on 20 random "
        f"configs, worst relative error {worst:.2e} < 1e-4 in {elapsed:.1f}s"
    )


def test_criterion_3_adamw_oracle():
    # hand-computed scalar trajectory: theta 1.0 -> 0.899 on the first step
    mc = ModelConfig(num_labels=1, embed_dim=1, gat_dim=1, vocab_hash_buckets=1)
    cfg = OptimConfig(
        epochs=1, learning_rate=0.1, beta1=0.9, beta2=0.999, epsilon=1e-8,
        weight_decay=0.01, layer_decay=1.0,
    )
    from crex.model import param_count

    params = ModelParameters(mc, np.zeros(param_count(mc)))
    params.flat[:] = 1.0
    state = OptimState.zeros(params.flat.size)
    theta_hand = 1.0
    for t in (1, 2):
        adamw_step(params, state, np.ones_like(params.flat), cfg)
        theta_hand = theta_hand - 0.1 * (1.0 / (1.0 + 1e-8) + 0.01 * theta_hand)
        if t == 1:
            assert abs(params.flat[0] - 0.899) < 1e-6
    assert abs(params.flat[0] - theta_hand) < 1e-12

    # decay 0 must equal an independently coded Adam within 1e-12
    rng = np.random.default_rng(17)
    g_seq = rng.normal(size=9)
    cfg0 = dataclasses.replace(cfg, weight_decay=0.0)
    params.flat[:] = 0.3
    state = OptimState.zeros(params.flat.size)
    m = v = 0.0
    theta = 0.3
    for t, g in enumerate(g_seq, start=1):
        adamw_step(params, state, np.full_like(params.flat, g), cfg0)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert abs(params.flat[0] - theta) < 1e-12
    _passline(
        "criterion 3: AdamW scalar trajectory matches the hand computation "
        "(first step 0.899 within 1e-6) and zero-decay AdamW equals plain "
        "Adam within 1e-12"
    )


def test_criterion_4_scorer_oracle():
    started = time.perf_counter()
    labels = ("no_relation", "r1", "r2")
    cases = 0
    for n in range(1, 5):
        for gold in itertools.product(labels, repeat=n):
            for pred in itertools.product(labels, repeat=n):
                m = micro_prf(gold, pred, "no_relation")
                assert (
                    m.correct_positive, m.predicted_positive, m.gold_positive,
                    m.precision, m.recall, m.f1,
                ) == confusion_matrix_oracle(gold, pred, labels, "no_relation")
                cases += 1
    elapsed = time.perf_counter() - started
    assert cases == 9 + 81 + 729 + 6561
    assert elapsed < 5.0, f"scorer oracle took {elapsed:.1f}s"
    _passline(
        f"criterion 4: micro P/R/F1 equals the brute-force confusion-matrix "
        f"oracle on all {cases} assignments (exact) in {elapsed:.1f}s"
    )


def test_criterion_5_cross_review_recovers_planted_difficulty(bench):
    corpus, vocab, tier_of, config, encoded = bench
    optim = OptimConfig(epochs=6)  # sub-model budget; defaults otherwise
    started = time.perf_counter()
    for master in SEED_SUITE:
        folds = stratified_split(corpus, 5, child_seed(master, "split"))
        records = cross_review(
            corpus, vocab, folds, config, optim,
            seed=child_seed(master, "cross-review"), encoded=encoded,
        )
        by_tier = {"easy": [], "hard": [], "noisy": []}
        for rec in records:
            by_tier[tier_of[rec.id]].append(rec.difficulty)
        means = {t: float(np.mean(v)) for t, v in by_tier.items()}
        assert means["noisy"] > means["hard"] > means["easy"], (master, means)
        hardest = sorted(records, key=lambda r: (-r.difficulty, r.id))[:200]
        noisy_frac = float(np.mean([tier_of[r.id] == "noisy" for r in hardest]))
        assert noisy_frac >= 0.70, (master, noisy_frac)
    elapsed = time.perf_counter() - started
    assert elapsed < 120.0, f"cross-review suite took {elapsed:.1f}s"
    _passline(
        f"criterion 5: difficulty means ordered noisy > hard > easy and "
        f"hardest decile >= 70% noisy for all 5 seeds in {elapsed:.1f}s"
    )


def test_criterion_6_curriculum_beats_shuffled_baseline(bench):
    corpus, vocab, tier_of, config, encoded = bench
    eval_corpus, _, _ = generate_synthetic(EVAL_SPEC)
    eval_encoded = encode_corpus(eval_corpus, vocab, config)
    cr_optim = OptimConfig(epochs=6)
    # arms run under-trained (low LR) so noise robustness is measurable
    arm_optim = OptimConfig(epochs=6, learning_rate=8e-5)
    k, eps, fin = 3, 1, 1
    # equal-count buckets mean the cumulative stages present
    # eps*(k+1)/2 + fin corpus passes worth of instances
    baseline_epochs = round(eps * (k + 1) / 2 + fin)

    started = time.perf_counter()
    f1s = {"curriculum": [], "baseline": [], "anti": []}
    for master in SEED_SUITE:
        folds = stratified_split(corpus, 5, child_seed(master, "split"))
        records = cross_review(
            corpus, vocab, folds, config, cr_optim,
            seed=child_seed(master, "cross-review"), encoded=encoded,
        )
        records, _ = bucketize(records, k)
        train_seed = child_seed(master, "train")

        params, _ = curriculum_train(
            corpus, vocab, records, build_schedule(k, eps, fin),
            config, arm_optim, train_seed, encoded=encoded,
        )
        f1s["curriculum"].append(
            evaluate_model(params, eval_corpus, vocab, config, encoded=eval_encoded)[0].f1
        )
        params, _ = train(
            corpus, vocab, config,
            dataclasses.replace(arm_optim, epochs=baseline_epochs),
            train_seed, encoded=encoded,
        )
        f1s["baseline"].append(
            evaluate_model(params, eval_corpus, vocab, config, encoded=eval_encoded)[0].f1
        )
        params, _ = curriculum_train(
            corpus, vocab, records, build_anti_schedule(k, eps, fin),
            config, arm_optim, train_seed, encoded=encoded,
        )
        f1s["anti"].append(
            evaluate_model(params, eval_corpus, vocab, config, encoded=eval_encoded)[0].f1
        )
    elapsed = time.perf_counter() - started

    deltas = [c - b for c, b in zip(f1s["curriculum"], f1s["baseline"])]
    nonneg = sum(1 for d in deltas if d >= 0.0)
    assert nonneg >= 4, (deltas, f1s)
    assert float(np.mean(deltas)) > 0.0, (deltas, f1s)
    assert float(np.mean(f1s["anti"])) <= float(np.mean(f1s["curriculum"])), f1s
    assert elapsed < 300.0, f"curriculum comparison took {elapsed:.1f}s"
    _passline(
        f"criterion 6: paired F1 delta >= 0 in {nonneg}/5 seeds, mean delta "
        f"{float(np.mean(deltas)):+.4f} > 0, anti-curriculum mean "
        f"{float(np.mean(f1s['anti'])):.4f} <= curriculum mean "
        f"{float(np.mean(f1s['curriculum'])):.4f}, in {elapsed:.1f}s"
    )


def test_criterion_7_structural_invariants(bench, tmp_path):
    corpus, vocab, tier_of, config, encoded = bench
    rng = np.random.default_rng(7)

    # split partition and stratification
    folds = stratified_split(corpus, 5, seed=123)
    assert set(folds.fold_of) == {inst.id for inst in corpus}
    per_rel = {}
    for inst in corpus:
        per_rel.setdefault(inst.relation, [0] * 5)[folds.fold_of[inst.id]] += 1
    for counts in per_rel.values():
        assert max(counts) - min(counts) <= 1

    # marker round-trip over the benchmark corpus
    for inst in corpus[:500]:
        assert strip_markers(insert_typed_markers(inst)) == inst.tokens

    # attention and softmax normalization at 1e-9
    params = init_params(config, seed=99)
    for enc in encoded[:50]:
        trace = forward_encoded(params, enc)
        assert abs(trace.probs.sum() - 1.0) < 1e-9
        for i in range(enc.n_tokens):
            row = trace.att_coef[enc.indptr[i] : enc.indptr[i + 1]]
            assert abs(row.sum() - 1.0) < 1e-9

    # difficulty granularity 1/(n-1) and bucket monotonicity
    small = corpus[:200]
    small_enc = encoded[:200]
    sfolds = stratified_split(small, 4, seed=5)
    records = cross_review(
        small, vocab, sfolds, config, OptimConfig(epochs=2), seed=8, encoded=small_enc
    )
    for rec in records:
        scaled = rec.difficulty * (sfolds.num_folds - 1)
        assert abs(scaled - round(scaled)) < 1e-12
    records, bounds = bucketize(records, 3)
    for b in range(2):
        assert bounds[b][1] <= bounds[b + 1][0] + 1e-15

    # exposure ordering: no instance before its bucket's stage
    bucket_of = {r.id: r.bucket for r in records}
    schedule = build_schedule(3, 1, 1)
    stage_steps = []
    for buckets, epochs in schedule.stages:
        stage_steps.append(
            sum(1 for i in small if bucket_of[i.id] in buckets) * epochs
        )
    bound = np.cumsum([0] + stage_steps)
    seen = {"i": 0}

    def hook(inst_id):
        stage = int(np.searchsorted(bound, seen["i"], side="right") - 1)
        assert bucket_of[inst_id] in schedule.stages[stage][0]
        seen["i"] += 1

    curriculum_train(
        small, vocab, records, schedule, config, OptimConfig(epochs=1), 3,
        encoded=small_enc, step_hook=hook,
    )

    # single-stage reduction, bitwise
    one_stage = CurriculumSchedule(num_buckets=3, stages=((frozenset({0, 1, 2}), 2),))
    one_stage.validate(cumulative=False)
    curr, _ = curriculum_train(
        small, vocab, records, one_stage, config, OptimConfig(epochs=2), 77,
        encoded=small_enc,
    )
    plain, _ = train(small, vocab, config, OptimConfig(epochs=2), 77, encoded=small_enc)
    assert np.array_equal(curr.flat, plain.flat)

    # full-pipeline determinism: byte-identical artifacts
    from crex.cli import main

    cfg = {
        "data": {"synthetic": {"num_instances": 40, "num_relations": 3,
                                "vocab_size": 12, "tier_fractions": [0.6, 0.2, 0.2],
                                "seed": 5}},
        "model": {"embed_dim": 4, "gat_dim": 4, "vocab_hash_buckets": 64},
        "optim": {"epochs": 2},
        "folds": 2, "buckets": 2, "seed": 3,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    outs = [str(tmp_path / "d1"), str(tmp_path / "d2")]
    for out in outs:
        for cmd in (["gen-synth"], ["split"], ["cross-review"], ["bucketize"],
                    ["train", "--arm", "curriculum"]):
            assert main([*cmd, "--config", str(cfg_path), "--out", out]) == 0
    for name in ("corpus.json", "folds.json", "difficulty.jsonl",
                 "checkpoint_curriculum_s3.json"):
        assert (tmp_path / "d1" / name).read_bytes() == (
            tmp_path / "d2" / name
        ).read_bytes(), name

    _passline(
        "criterion 7: split partition/stratification, marker round-trip, "
        "attention/softmax normalization (1e-9), difficulty granularity, "
        "bucket monotonicity, exposure ordering, bitwise single-stage "
        "reduction, and byte-identical pipeline artifacts all hold"
    )


def test_criterion_8_tacred_format_fidelity():
    records = [
        {
            "id": "doc1",
            "token": ["Bill", "Gates", "founded", "Microsoft", "in", "1975", "."],
            "subj_start": 0, "subj_end": 1, "obj_start": 3, "obj_end": 3,
            "subj_type": "PERSON", "obj_type": "ORGANIZATION",
            "stanford_head": [2, 3, 0, 3, 6, 3, 3],
            "stanford_deprel": ["compound", "nsubj", "ROOT", "obj", "case",
                                 "obl", "punct"],
            "relation": "org:founded_by",
        },
        {
            "id": "doc2",
            "token": ["Anna", "works", "for", "Acme", "Corp", "."],
            "subj_start": 0, "subj_end": 0, "obj_start": 3, "obj_end": 4,
            "subj_type": "PERSON", "obj_type": "ORGANIZATION",
            "stanford_head": [2, 0, 5, 5, 2, 2],
            "stanford_deprel": ["nsubj", "ROOT", "case", "compound", "obl",
                                 "punct"],
            "relation": "per:employee_of",
        },
        {
            "id": "doc3",
            "token": ["The", "visit", "surprised", "Acme", "and", "Bob", "."],
            "subj_start": 5, "subj_end": 5, "obj_start": 3, "obj_end": 3,
            "stanford_head": [2, 3, 0, 3, 6, 4, 3],
            "stanford_deprel": ["det", "nsubj", "ROOT", "obj", "cc", "conj",
                                 "punct"],
            "subj_type": "PERSON", "obj_type": "ORGANIZATION",
            "relation": "no_relation",
        },
    ]
    raw = json.dumps(records).encode("utf-8")
    corpus, vocab = parse_tacred_json(raw)
    assert [inst.id for inst in corpus] == ["doc1", "doc2", "doc3"]
    assert vocab.negative_label == "no_relation"

    config = ModelConfig(num_labels=len(vocab), embed_dim=8, gat_dim=8,
                         vocab_hash_buckets=256)
    folds = stratified_split(corpus, 2, seed=1)
    records_out = cross_review(
        corpus, vocab, folds, config, OptimConfig(epochs=3), seed=2
    )
    assert len(records_out) == 3
    assert all(len(r.predictions) == 1 for r in records_out)

    params, history = train(corpus, vocab, config, OptimConfig(epochs=3), seed=3)
    metrics, gold, pred = evaluate_model(params, corpus, vocab, config)
    assert len(gold) == len(pred) == 3
    assert 0.0 <= metrics.f1 <= 1.0
    _passline(
        "criterion 8: hand-written 3-record TACRED JSON parses, runs "
        "cross-review with n=2, trains, and evaluates without error"
    )

#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the per-instance fused forward/backward pass, the AdamW update, and
inference scoring on the default model size over a synthetic corpus, then
prints per-step timings and speedups. Run directly:

    python benchmarks/bench_kernels.py [--instances N] [--steps K]
"""

import argparse
import time

import numpy as np

from crex.data import SyntheticSpec, generate_synthetic
from crex.kernels import numba_impl, numpy_impl
from crex.model import ModelConfig, encode_corpus, init_params, param_count
from crex.optim import OptimConfig, OptimState, _Engine, layer_lr_scales
from crex.rng import child_rng


def bench_impl(impl, name, encoded, config, steps, seed=7):
    params = init_params(config, seed)
    state = OptimState.zeros(param_count(config))
    b = config.vocab_hash_buckets
    e = config.embed_dim
    n_emb = b * e
    emb = params.embeddings
    m_emb = state.m[:n_emb].reshape(b, e)
    v_emb = state.v[:n_emb].reshape(b, e)
    tail = params.flat[n_emb:]
    m_tail = state.m[n_emb:]
    v_tail = state.v[n_emb:]
    dtail = np.zeros(tail.size)
    warm = np.zeros(b, dtype=np.uint8)
    row_step = np.zeros(b, dtype=np.int64)
    touch = np.full(b, -1, dtype=np.int64)
    oc = OptimConfig(epochs=1)
    scales = layer_lr_scales(oc)
    eta_emb = oc.learning_rate * scales["embeddings"]
    eta_tail = np.full(tail.size, oc.learning_rate)
    eta_tail[: config.embed_dim * config.gat_dim + 2 * config.gat_dim] *= scales["gat"]
    cold_decay = 1.0 - eta_emb * oc.weight_decay
    rng = child_rng(seed, "dropout")
    p = config.dropout_rate
    inv_keep = 1.0 / (1.0 - p)

    # warm up any compilation outside the timed region
    enc = encoded[0]
    impl.fb_fused(
        emb, params.gat_w, params.gat_a, params.bilinear_w, params.bilinear_b,
        params.lin_w, enc.ids, enc.indptr, enc.neighbors,
        enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
        enc.slot_of_pos, enc.uniq_rows.shape[0],
        np.ones((enc.n_tokens, e)), np.ones((enc.n_tokens, config.gat_dim)),
        1.0, config.leaky_relu_slope, enc.gold, dtail,
    )
    impl.scores_eval(
        emb, params.gat_w, params.gat_a, params.bilinear_w, params.bilinear_b,
        params.lin_w, enc.ids, enc.indptr, enc.neighbors,
        enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
        config.leaky_relu_slope,
    )

    t0 = time.perf_counter()
    fb_time = 0.0
    for k in range(steps):
        enc = encoded[k % len(encoded)]
        n = enc.n_tokens
        emask = (rng.random((n, e)) >= p).astype(np.float64)
        gmask = (rng.random((n, config.gat_dim)) >= p).astype(np.float64)
        impl.materialize_rows(emb, enc.uniq_rows, warm, row_step,
                              state.step_count, eta_emb, oc.weight_decay)
        t_fb = time.perf_counter()
        loss, dxrow = impl.fb_fused(
            emb, params.gat_w, params.gat_a, params.bilinear_w,
            params.bilinear_b, params.lin_w,
            enc.ids, enc.indptr, enc.neighbors,
            enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
            enc.slot_of_pos, enc.uniq_rows.shape[0],
            emask, gmask, inv_keep, config.leaky_relu_slope, enc.gold, dtail,
        )
        fb_time += time.perf_counter() - t_fb
        t = state.step_count + 1
        bc1 = 1.0 - oc.beta1**t
        bc2 = 1.0 - oc.beta2**t
        impl.adamw_update(
            emb, m_emb, v_emb, tail, m_tail, v_tail,
            dxrow, enc.uniq_rows, dtail, eta_tail, eta_emb,
            oc.weight_decay, oc.epsilon, bc1, bc2, oc.beta1, oc.beta2, t,
            warm, row_step, touch, cold_decay,
        )
        state.step_count = t
    train_total = time.perf_counter() - t0

    t0 = time.perf_counter()
    for enc in encoded:
        impl.scores_eval(
            emb, params.gat_w, params.gat_a, params.bilinear_w,
            params.bilinear_b, params.lin_w,
            enc.ids, enc.indptr, enc.neighbors,
            enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
            config.leaky_relu_slope,
        )
    pred_total = time.perf_counter() - t0

    return {
        "backend": name,
        "train_step_us": 1e6 * train_total / steps,
        "fb_us": 1e6 * fb_time / steps,
        "adamw_us": 1e6 * (train_total - fb_time) / steps,
        "predict_us": 1e6 * pred_total / len(encoded),
    }


def bench_full_train(encoded, config, seed=7, epochs=2):
    """End-to-end engine epochs (includes Python driver overhead)."""
    out = {}
    for impl, name in ((numba_impl, "numba"), (numpy_impl, "numpy")):
        engine = _Engine(encoded, config, OptimConfig(epochs=epochs), seed)
        engine.kern = impl
        engine.run_stage(range(min(64, len(encoded))), 1)  # warm up compiles
        engine = _Engine(encoded, config, OptimConfig(epochs=epochs), seed)
        engine.kern = impl
        t0 = time.perf_counter()
        engine.run_stage(range(len(encoded)), epochs)
        engine.finish()
        out[name] = (time.perf_counter() - t0) / (epochs * len(encoded))
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--instances", type=int, default=400)
    parser.add_argument("--steps", type=int, default=2000)
    args = parser.parse_args()

    spec = SyntheticSpec(
        num_instances=args.instances, num_relations=8, vocab_size=50,
        tier_fractions=(0.6, 0.2, 0.2), seed=11,
    )
    corpus, vocab, _ = generate_synthetic(spec)
    config = ModelConfig(num_labels=len(vocab))
    encoded = encode_corpus(corpus, vocab, config)
    print(
        f"model: embed {config.embed_dim}, gat {config.gat_dim}, "
        f"{config.num_labels} labels, {config.vocab_hash_buckets} hash buckets, "
        f"{param_count(config)} parameters; corpus of {len(encoded)} instances"
    )

    rows = [
        bench_impl(numba_impl, "numba", encoded, config, args.steps),
        bench_impl(numpy_impl, "numpy", encoded, config, args.steps),
    ]
    header = f"{'backend':<8}{'train step':>12}{'fwd/bwd':>10}{'adamw':>10}{'predict':>10}"
    print()
    print(header)
    print("-" * len(header))
    for r in rows:
        print(
            f"{r['backend']:<8}{r['train_step_us']:>10.0f}us"
            f"{r['fb_us']:>8.0f}us{r['adamw_us']:>8.0f}us{r['predict_us']:>8.0f}us"
        )
    speedup = rows[1]["train_step_us"] / rows[0]["train_step_us"]
    print(f"\nnumba speedup on the fused train step: {speedup:.1f}x")

    full = bench_full_train(encoded, config)
    print(
        f"engine epochs incl. driver: numba {1e6 * full['numba']:.0f}us/step, "
        f"numpy {1e6 * full['numpy']:.0f}us/step "
        f"({full['numpy'] / full['numba']:.1f}x)"
    )


if __name__ == "__main__":
    main()

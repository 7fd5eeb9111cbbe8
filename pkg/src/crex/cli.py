"""Command-line front end tying the pipeline together.

Subcommands: gen-synth, split, cross-review, bucketize, train, eval,
report. Each reads and writes JSON artifacts in the output directory and
prints a single JSON summary line on success. Exit codes: 0 success, 1
validation/config error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
import time
from typing import Optional, Sequence

from . import curriculum as cur
from . import data as dat
from . import evalx
from . import optim as opt
from .config import ARMS, DataSource, ExperimentConfig, load_config, parse_config
from .errors import ConfigError, CrexError
from .kernels import active_backend
from .model import load_checkpoint, save_checkpoint
from .rng import child_seed

OUT_DIR_ENV = "CREX_OUT_DIR"


# ---------------------------------------------------------------------------
# Artifact IO (atomic writes, deterministic bytes)
# ---------------------------------------------------------------------------


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, obj) -> None:
    _write_atomic(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _read_json(path: str):
    with open(path, "r") as fh:
        return json.load(fh)


def _summary(**kwargs) -> None:
    print(json.dumps(kwargs, sort_keys=True))


# ---------------------------------------------------------------------------
# Corpus materialization
# ---------------------------------------------------------------------------


def _generate(source: DataSource):
    corpus, vocab, tier_of = dat.generate_synthetic(source.synthetic)
    return corpus, vocab, tier_of


def _load_corpus_file(path: str):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read corpus {path}: {exc}") from exc
    return dat.parse_tacred_json(raw)


def _resolve_corpus(source: Optional[DataSource], out: str, filename: str):
    """Corpus from the out-dir artifact if present, else from the source."""
    artifact = os.path.join(out, filename)
    if os.path.exists(artifact):
        return _load_corpus_file(artifact)
    if source is None:
        raise ConfigError(f"no {filename} in {out} and no data source configured")
    if source.path is not None:
        return _load_corpus_file(source.path)
    corpus, vocab, _ = _generate(source)
    return corpus, vocab


def _resolve_out(args, cfg: ExperimentConfig) -> str:
    out = args.out or cfg.out_dir or os.environ.get(OUT_DIR_ENV) or "crex-out"
    os.makedirs(out, exist_ok=True)
    return out


def _load_cfg(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config, seed_override=args.seed)
    else:
        cfg = parse_config({}, seed_override=args.seed)
    if args.folds is not None:
        if args.folds < 2:
            raise ConfigError("folds must be at least 2")
        cfg = dataclasses.replace(cfg, folds=args.folds)
    if args.buckets is not None:
        if args.buckets < 1:
            raise ConfigError("buckets must be at least 1")
        cfg = dataclasses.replace(cfg, buckets=args.buckets)
    if args.arm is not None:
        cfg = dataclasses.replace(cfg, arm=args.arm)
    return cfg


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_synth(args) -> int:
    cfg = _load_cfg(args)
    if cfg.data.synthetic is None:
        raise ConfigError("gen-synth requires a synthetic data source")
    out = _resolve_out(args, cfg)
    corpus, vocab, tier_of = _generate(cfg.data)
    _write_atomic(
        os.path.join(out, "corpus.json"),
        dat.corpus_to_json_bytes(corpus).decode("utf-8"),
    )
    _write_json(os.path.join(out, "tiers.json"), tier_of)
    n_eval = 0
    if cfg.eval_data is not None and cfg.eval_data.synthetic is not None:
        eval_corpus, _, eval_tiers = _generate(cfg.eval_data)
        _write_atomic(
            os.path.join(out, "eval_corpus.json"),
            dat.corpus_to_json_bytes(eval_corpus).decode("utf-8"),
        )
        _write_json(os.path.join(out, "eval_tiers.json"), eval_tiers)
        n_eval = len(eval_corpus)
    _summary(
        command="gen-synth",
        out=out,
        instances=len(corpus),
        eval_instances=n_eval,
        labels=len(vocab),
        seed=cfg.seed,
    )
    return 0


def _cmd_split(args) -> int:
    cfg = _load_cfg(args)
    out = _resolve_out(args, cfg)
    corpus, _ = _resolve_corpus(cfg.data, out, "corpus.json")
    folds = dat.stratified_split(corpus, cfg.folds, child_seed(cfg.seed, "split"))
    _write_json(os.path.join(out, "folds.json"), folds.to_json())
    sizes = [len(folds.members(f)) for f in range(folds.num_folds)]
    _summary(command="split", out=out, folds=cfg.folds, fold_sizes=sizes, seed=cfg.seed)
    return 0


def _cmd_cross_review(args) -> int:
    cfg = _load_cfg(args)
    out = _resolve_out(args, cfg)
    corpus, vocab = _resolve_corpus(cfg.data, out, "corpus.json")
    folds_path = os.path.join(out, "folds.json")
    if not os.path.exists(folds_path):
        raise ConfigError(f"{folds_path} not found; run 'split' first")
    folds = dat.FoldAssignment.from_json(_read_json(folds_path))
    model_cfg = cfg.model.to_model_config(num_labels=len(vocab))
    records = cur.cross_review(
        corpus, vocab, folds, model_cfg, cfg.optim,
        seed=child_seed(cfg.seed, "cross-review"),
    )
    _write_atomic(
        os.path.join(out, "difficulty.jsonl"), cur.records_to_jsonl(records)
    )
    mean_difficulty = sum(r.difficulty for r in records) / len(records)
    _summary(
        command="cross-review",
        out=out,
        folds=folds.num_folds,
        records=len(records),
        mean_difficulty=round(mean_difficulty, 6),
        backend=active_backend(),
        seed=cfg.seed,
    )
    return 0


def _cmd_bucketize(args) -> int:
    cfg = _load_cfg(args)
    out = _resolve_out(args, cfg)
    diff_path = os.path.join(out, "difficulty.jsonl")
    if not os.path.exists(diff_path):
        raise ConfigError(f"{diff_path} not found; run 'cross-review' first")
    with open(diff_path, "r") as fh:
        records = cur.records_from_jsonl(fh.read())
    bucketed, boundaries = cur.bucketize(records, cfg.buckets)
    _write_atomic(diff_path, cur.records_to_jsonl(bucketed))
    _write_json(
        os.path.join(out, "buckets.json"),
        {"k": cfg.buckets, "boundaries": [list(b) for b in boundaries]},
    )
    _summary(
        command="bucketize",
        out=out,
        buckets=cfg.buckets,
        boundaries=[list(b) for b in boundaries],
    )
    return 0


def _train_arm(cfg: ExperimentConfig, out: str, corpus, vocab):
    """Run the configured arm; returns (params, stage_losses)."""
    model_cfg = cfg.model.to_model_config(num_labels=len(vocab))
    seed = child_seed(cfg.seed, "train")
    k = cfg.buckets
    eps = cfg.schedule.epochs_per_stage
    fin = cfg.schedule.final_full_epochs
    if cfg.arm == "shuffled-baseline":
        # Matched data exposure: the curriculum presents eps*(k+1)/2 + fin
        # corpus passes worth of instances (equal-count buckets), so the
        # baseline shuffles the full corpus for that many epochs. At k=1
        # this reduces to eps + fin, the exact curriculum step count.
        total = round(eps * (k + 1) / 2 + fin)
        baseline_optim = dataclasses.replace(cfg.optim, epochs=total)
        params, history = opt.train(corpus, vocab, model_cfg, baseline_optim, seed)
        return params, [history]
    diff_path = os.path.join(out, "difficulty.jsonl")
    if not os.path.exists(diff_path):
        raise ConfigError(f"{diff_path} not found; run 'cross-review' and 'bucketize'")
    with open(diff_path, "r") as fh:
        records = cur.records_from_jsonl(fh.read())
    if any(r.bucket == cur.UNASSIGNED for r in records):
        raise ConfigError("difficulty records lack buckets; run 'bucketize' first")
    builder = cur.build_schedule if cfg.arm == "curriculum" else cur.build_anti_schedule
    schedule = builder(k, eps, fin)
    _write_json(os.path.join(out, f"schedule_{cfg.arm}.json"), schedule.to_json())
    return cur.curriculum_train(
        corpus, vocab, records, schedule, model_cfg, cfg.optim, seed
    )


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _resolve_out(args, cfg)
    corpus, vocab = _resolve_corpus(cfg.data, out, "corpus.json")
    started = time.perf_counter()
    params, stage_losses = _train_arm(cfg, out, corpus, vocab)
    elapsed = time.perf_counter() - started

    tag = f"{cfg.arm}_s{cfg.seed}"
    save_checkpoint(
        os.path.join(out, f"checkpoint_{tag}.json"),
        params,
        seed_lineage={"master_seed": cfg.seed, "train_seed": child_seed(cfg.seed, "train")},
    )
    _write_json(os.path.join(out, f"history_{tag}.json"), stage_losses)

    metrics = None
    gold: list[str] = []
    pred: list[str] = []
    if cfg.eval_data is not None:
        eval_corpus, _ = _resolve_corpus(cfg.eval_data, out, "eval_corpus.json")
        metrics, gold, pred = evalx.evaluate_model(
            params, eval_corpus, vocab, params.config
        )
    report = evalx.RunReport(
        run_id=tag,
        config_digest=evalx.config_digest(cfg.digest_payload()),
        seed=cfg.seed,
        arm=cfg.arm,
        stage_losses=stage_losses,
        metrics=metrics,
        wall_clock_seconds=elapsed,
        gold=gold,
        pred=pred,
        negative_label=vocab.negative_label,
    )
    _write_json(os.path.join(out, f"report_{tag}.json"), report.to_json())
    _summary(
        command="train",
        out=out,
        arm=cfg.arm,
        seed=cfg.seed,
        stages=len(stage_losses),
        final_loss=stage_losses[-1][-1] if stage_losses and stage_losses[-1] else None,
        f1=metrics.f1 if metrics else None,
        backend=active_backend(),
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _resolve_out(args, cfg)
    tag = f"{cfg.arm}_s{cfg.seed}"
    ckpt = os.path.join(out, f"checkpoint_{tag}.json")
    if not os.path.exists(ckpt):
        raise ConfigError(f"{ckpt} not found; run 'train' first")
    params, _ = load_checkpoint(ckpt)
    _, vocab = _resolve_corpus(cfg.data, out, "corpus.json")
    if cfg.eval_data is None:
        raise ConfigError("no eval_data configured")
    eval_corpus, _ = _resolve_corpus(cfg.eval_data, out, "eval_corpus.json")
    metrics, _, _ = evalx.evaluate_model(params, eval_corpus, vocab, params.config)
    _write_json(os.path.join(out, f"metrics_{tag}.json"), metrics.to_json())
    _summary(
        command="eval",
        out=out,
        arm=cfg.arm,
        seed=cfg.seed,
        precision=metrics.precision,
        recall=metrics.recall,
        f1=metrics.f1,
    )
    return 0


def _cmd_report(args) -> int:
    cfg = _load_cfg(args)
    out = _resolve_out(args, cfg)
    reports = []
    for name in sorted(os.listdir(out)):
        if name.startswith("report_") and name.endswith(".json"):
            reports.append(evalx.RunReport.from_json(_read_json(os.path.join(out, name))))
    if not reports:
        raise ConfigError(f"no report_*.json files in {out}")
    comparison = evalx.compare_runs(reports, [r.arm for r in reports])
    _write_json(os.path.join(out, "comparison.json"), comparison.to_json())
    _write_atomic(os.path.join(out, "comparison.txt"), comparison.render_text())
    _summary(
        command="report",
        out=out,
        arms={a.arm: round(a.mean_f1, 6) for a in comparison.arms},
        reference=comparison.reference_arm,
    )
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crex",
        description="Curriculum-learning laboratory for relation extraction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-synth": (_cmd_gen_synth, "generate a synthetic corpus"),
        "split": (_cmd_split, "stratified fold split"),
        "cross-review": (_cmd_cross_review, "estimate difficulty by cross review"),
        "bucketize": (_cmd_bucketize, "assign difficulty buckets"),
        "train": (_cmd_train, "train the configured arm"),
        "eval": (_cmd_eval, "evaluate a checkpoint"),
        "report": (_cmd_report, "compare trained arms"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--folds", type=int, help="fold count for cross review")
        p.add_argument("--buckets", type=int, help="difficulty bucket count")
        p.add_argument("--arm", choices=ARMS, help="training arm")
        p.add_argument("--out", help=f"output directory (or ${OUT_DIR_ENV})")
        p.set_defaults(fn=fn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except CrexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

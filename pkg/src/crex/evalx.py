"""Micro P/R/F1 scoring with the no-relation convention, plus run reports.

The negative class never counts as a positive: precision divides correct
positives by predicted positives, recall by gold positives, and all three
metrics are 0 when their denominator vanishes (the standard scorer
behavior for this benchmark family).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Instance, LabelVocabulary
from .errors import ValidationError
from .model import EncodedInstance, ModelConfig, ModelParameters, encode_corpus, predict_encoded


@dataclass(frozen=True)
class EvalMetrics:
    correct_positive: int
    predicted_positive: int
    gold_positive: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, predicted: int, gold: int) -> "EvalMetrics":
        p = correct / predicted if predicted > 0 else 0.0
        r = correct / gold if gold > 0 else 0.0
        f1 = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
        return cls(
            correct_positive=correct,
            predicted_positive=predicted,
            gold_positive=gold,
            precision=p,
            recall=r,
            f1=f1,
        )

    def to_json(self) -> dict:
        return {
            "correct_positive": self.correct_positive,
            "predicted_positive": self.predicted_positive,
            "gold_positive": self.gold_positive,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalMetrics":
        return cls(**obj)


def micro_prf(
    gold: Sequence[str], pred: Sequence[str], negative_label: str
) -> EvalMetrics:
    """Micro precision/recall/F1 with the negative class excluded."""
    if len(gold) != len(pred):
        raise ValidationError(
            f"gold and pred lengths differ ({len(gold)} vs {len(pred)})"
        )
    correct = predicted = positives = 0
    for g, p in zip(gold, pred):
        if g != negative_label:
            positives += 1
        if p != negative_label:
            predicted += 1
            if p == g:
                correct += 1
    return EvalMetrics.from_counts(correct, predicted, positives)


def evaluate_model(
    params: ModelParameters,
    corpus: Sequence[Instance],
    vocab: LabelVocabulary,
    config: ModelConfig,
    encoded: Optional[Sequence[EncodedInstance]] = None,
) -> tuple[EvalMetrics, list[str], list[str]]:
    """Predict the corpus and score it; returns (metrics, gold, pred) labels."""
    enc = encoded if encoded is not None else encode_corpus(corpus, vocab, config)
    gold = [inst.relation for inst in corpus]
    pred = [vocab.labels[predict_encoded(params, e)] for e in enc]
    return micro_prf(gold, pred, vocab.negative_label), gold, pred


@dataclass
class RunReport:
    """Everything needed to audit one training run's score."""

    run_id: str
    config_digest: str
    seed: int
    arm: str
    stage_losses: list[list[float]]
    metrics: Optional[EvalMetrics]
    wall_clock_seconds: float
    gold: list[str] = field(default_factory=list)
    pred: list[str] = field(default_factory=list)
    negative_label: str = "no_relation"

    def recomputed_metrics(self) -> EvalMetrics:
        return micro_prf(self.gold, self.pred, self.negative_label)

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "arm": self.arm,
            "stage_losses": self.stage_losses,
            "metrics": self.metrics.to_json() if self.metrics else None,
            "wall_clock_seconds": self.wall_clock_seconds,
            "gold": self.gold,
            "pred": self.pred,
            "negative_label": self.negative_label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunReport":
        metrics = obj.get("metrics")
        return cls(
            run_id=obj["run_id"],
            config_digest=obj["config_digest"],
            seed=int(obj["seed"]),
            arm=obj["arm"],
            stage_losses=obj["stage_losses"],
            metrics=EvalMetrics.from_json(metrics) if metrics else None,
            wall_clock_seconds=float(obj["wall_clock_seconds"]),
            gold=list(obj.get("gold", [])),
            pred=list(obj.get("pred", [])),
            negative_label=obj.get("negative_label", "no_relation"),
        )


def config_digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class ArmStats:
    arm: str
    n_runs: int
    mean_f1: float
    min_f1: float
    max_f1: float
    mean_precision: float
    mean_recall: float


@dataclass(frozen=True)
class Comparison:
    arms: tuple[ArmStats, ...]
    reference_arm: Optional[str]
    # (arm, seed) -> arm F1 minus reference F1 at the same seed
    paired_deltas: tuple[tuple[str, int, float], ...]

    def to_json(self) -> dict:
        return {
            "arms": [vars(a) for a in self.arms],
            "reference_arm": self.reference_arm,
            "paired_deltas": [
                {"arm": a, "seed": s, "delta_f1": d} for a, s, d in self.paired_deltas
            ],
        }

    def render_text(self) -> str:
        lines = []
        header = f"{'Models':<24}{'P':>8}{'R':>8}{'F1':>8}"
        lines.append(header)
        lines.append("-" * len(header))
        for a in self.arms:
            lines.append(
                f"{a.arm:<24}{100 * a.mean_precision:>8.1f}"
                f"{100 * a.mean_recall:>8.1f}{100 * a.mean_f1:>8.1f}"
            )
        if self.paired_deltas:
            lines.append("")
            lines.append(f"paired F1 deltas vs {self.reference_arm}:")
            for arm, seed, delta in self.paired_deltas:
                lines.append(f"  {arm:<22} seed {seed:<6} {100 * delta:+.2f}")
        return "\n".join(lines) + "\n"


def compare_runs(
    reports: Sequence[RunReport], grouping: Sequence[str]
) -> Comparison:
    """Per-arm F1 stats plus per-seed paired deltas against the reference arm.

    The reference is 'shuffled-baseline' when present, otherwise the
    alphabetically first arm. Paired deltas require every arm to cover the
    reference arm's seed set exactly.
    """
    if len(reports) != len(grouping):
        raise ValidationError("one arm name per report is required")
    if not reports:
        raise ValidationError("no reports to compare")
    by_arm: dict[str, list[RunReport]] = {}
    for rep, arm in zip(reports, grouping):
        if rep.metrics is None:
            raise ValidationError(f"report {rep.run_id} has no metrics")
        by_arm.setdefault(arm, []).append(rep)

    stats = []
    for arm in sorted(by_arm):
        f1s = [r.metrics.f1 for r in by_arm[arm]]
        stats.append(
            ArmStats(
                arm=arm,
                n_runs=len(f1s),
                mean_f1=float(np.mean(f1s)),
                min_f1=float(np.min(f1s)),
                max_f1=float(np.max(f1s)),
                mean_precision=float(np.mean([r.metrics.precision for r in by_arm[arm]])),
                mean_recall=float(np.mean([r.metrics.recall for r in by_arm[arm]])),
            )
        )

    if len(by_arm) < 2:
        return Comparison(arms=tuple(stats), reference_arm=None, paired_deltas=())

    reference = (
        "shuffled-baseline" if "shuffled-baseline" in by_arm else sorted(by_arm)[0]
    )
    ref_by_seed = {r.seed: r for r in by_arm[reference]}
    deltas = []
    for arm in sorted(by_arm):
        if arm == reference:
            continue
        seeds = {r.seed for r in by_arm[arm]}
        unmatched = sorted(seeds.symmetric_difference(ref_by_seed))
        if unmatched:
            raise ValidationError(
                f"arm {arm!r} and {reference!r} have unmatched seeds: {unmatched}"
            )
        for rep in sorted(by_arm[arm], key=lambda r: r.seed):
            deltas.append(
                (arm, rep.seed, rep.metrics.f1 - ref_by_seed[rep.seed].metrics.f1)
            )
    return Comparison(
        arms=tuple(stats), reference_arm=reference, paired_deltas=tuple(deltas)
    )

"""Cross-review difficulty estimation and staged curriculum training.

Cross review trains one model per fold and lets it label every instance
outside its own training fold, so each instance collects n-1 predictions
from models that never saw it. The difficulty score is the fraction of
those predictions that miss the gold label. Records are then sorted and cut
into equal-count buckets, and the curriculum trains one model through
cumulative bucket unions, easiest first, ending with a full-data stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

from .data import FoldAssignment, Instance, LabelVocabulary
from .errors import ConfigError, ValidationError
from .model import (
    EncodedInstance,
    ModelConfig,
    ModelParameters,
    encode_corpus,
    predict_encoded,
)
from .optim import OptimConfig, _Engine

_MASK64 = 0xFFFFFFFFFFFFFFFF

UNASSIGNED = -1


@dataclass(frozen=True)
class DifficultyRecord:
    """Cross-review outcome for one instance.

    ``predictions`` pairs each predicting model's fold with its predicted
    label index; ``fold`` is the instance's own fold, which never appears
    among the predictors. ``bucket`` is UNASSIGNED until bucketize runs.
    """

    id: str
    fold: int
    predictions: tuple[tuple[int, int], ...]
    num_correct: int
    difficulty: float
    bucket: int = UNASSIGNED

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "fold": self.fold,
            "predictions": [list(p) for p in self.predictions],
            "num_correct": self.num_correct,
            "difficulty": self.difficulty,
            "bucket": None if self.bucket == UNASSIGNED else self.bucket,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DifficultyRecord":
        bucket = obj.get("bucket")
        return cls(
            id=obj["id"],
            fold=int(obj["fold"]),
            predictions=tuple((int(f), int(l)) for f, l in obj["predictions"]),
            num_correct=int(obj["num_correct"]),
            difficulty=float(obj["difficulty"]),
            bucket=UNASSIGNED if bucket is None else int(bucket),
        )


@dataclass(frozen=True)
class CurriculumSchedule:
    """Ordered stages of (bucket index set, epoch count)."""

    num_buckets: int
    stages: tuple[tuple[frozenset[int], int], ...]

    def validate(self, cumulative: bool = True) -> None:
        if self.num_buckets < 1:
            raise ValidationError("schedule needs at least one bucket")
        if not self.stages:
            raise ValidationError("schedule has no stages")
        for buckets, epochs in self.stages:
            if epochs < 1:
                raise ValidationError("stage epoch counts must be at least 1")
            if not buckets or not all(0 <= b < self.num_buckets for b in buckets):
                raise ValidationError("stage bucket set out of range")
        full = frozenset(range(self.num_buckets))
        if self.stages[-1][0] != full:
            raise ValidationError("final stage must cover all buckets")
        if cumulative:
            for i, (buckets, _) in enumerate(self.stages[:-1]):
                if buckets != frozenset(range(i + 1)):
                    raise ValidationError(
                        f"stage {i} must train on buckets 0..{i} (cumulative)"
                    )

    def to_json(self) -> dict:
        return {
            "num_buckets": self.num_buckets,
            "stages": [
                {"buckets": sorted(b), "epochs": e} for b, e in self.stages
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CurriculumSchedule":
        return cls(
            num_buckets=int(obj["num_buckets"]),
            stages=tuple(
                (frozenset(int(b) for b in st["buckets"]), int(st["epochs"]))
                for st in obj["stages"]
            ),
        )


def cross_review(
    corpus: Sequence[Instance],
    vocab: LabelVocabulary,
    folds: FoldAssignment,
    model_config: ModelConfig,
    optim_config: OptimConfig,
    seed: int,
    encoded: Optional[Sequence[EncodedInstance]] = None,
) -> list[DifficultyRecord]:
    """Train one model per fold; score every instance by the other folds.

    Sub-model f trains only on fold f with seed ``seed ^ f`` and predicts
    every instance outside fold f, so each instance ends up with exactly
    n - 1 predictions and difficulty 1 - num_correct / (n - 1).
    """
    n = folds.num_folds
    if n < 2:
        raise ConfigError("cross review needs at least 2 folds")
    enc = encoded if encoded is not None else encode_corpus(
        corpus, vocab, model_config
    )
    fold_of_idx = [folds.fold_of[inst.id] for inst in corpus]
    by_fold: list[list[int]] = [[] for _ in range(n)]
    for i, f in enumerate(fold_of_idx):
        by_fold[f].append(i)

    predictions: list[list[tuple[int, int]]] = [[] for _ in corpus]
    for f in range(n):
        if not by_fold[f]:
            raise ConfigError(f"fold {f} is empty; use fewer folds")
        sub_seed = (seed ^ f) & _MASK64
        sub_enc = [enc[i] for i in by_fold[f]]
        engine = _Engine(sub_enc, model_config, optim_config, sub_seed)
        if optim_config.epochs > 0:
            engine.run_stage(range(len(sub_enc)), optim_config.epochs)
        params = engine.finish()
        for i in range(len(corpus)):
            if fold_of_idx[i] != f:
                predictions[i].append((f, predict_encoded(params, enc[i])))

    records = []
    for i, inst in enumerate(corpus):
        preds = tuple(predictions[i])
        num_correct = sum(1 for _, lab in preds if lab == enc[i].gold)
        records.append(
            DifficultyRecord(
                id=inst.id,
                fold=fold_of_idx[i],
                predictions=preds,
                num_correct=num_correct,
                difficulty=1.0 - num_correct / (n - 1),
            )
        )
    return records


def bucketize(
    records: Sequence[DifficultyRecord], k: int
) -> tuple[list[DifficultyRecord], list[tuple[float, float]]]:
    """Cut records into k equal-count difficulty buckets, easiest first.

    Records are sorted ascending by (difficulty, id) and split into k
    contiguous groups whose sizes differ by at most one; returns the sorted
    records with buckets assigned plus each bucket's (min, max) difficulty.
    """
    if k < 1:
        raise ConfigError("bucket count must be at least 1")
    if not records:
        raise ConfigError("no difficulty records to bucketize")
    if k > len(records):
        raise ConfigError(
            f"bucket count {k} exceeds record count {len(records)}"
        )
    srt = sorted(records, key=lambda r: (r.difficulty, r.id))
    q, r = divmod(len(srt), k)
    out: list[DifficultyRecord] = []
    boundaries: list[tuple[float, float]] = []
    start = 0
    for b in range(k):
        size = q + (1 if b < r else 0)
        chunk = srt[start : start + size]
        out.extend(replace(rec, bucket=b) for rec in chunk)
        boundaries.append((chunk[0].difficulty, chunk[-1].difficulty))
        start += size
    return out, boundaries


def build_schedule(
    k: int, epochs_per_stage: int, final_full_epochs: int
) -> CurriculumSchedule:
    """Cumulative easiest-first stages plus one final full-data stage."""
    if k < 1:
        raise ValidationError("bucket count must be at least 1")
    if epochs_per_stage < 1 or final_full_epochs < 1:
        raise ValidationError("epoch counts must be at least 1")
    stages = [(frozenset(range(i + 1)), epochs_per_stage) for i in range(k)]
    stages.append((frozenset(range(k)), final_full_epochs))
    schedule = CurriculumSchedule(num_buckets=k, stages=tuple(stages))
    schedule.validate(cumulative=True)
    return schedule


def build_anti_schedule(
    k: int, epochs_per_stage: int, final_full_epochs: int
) -> CurriculumSchedule:
    """Hardest-first control mirror of ``build_schedule`` (sanity arm only)."""
    if k < 1:
        raise ValidationError("bucket count must be at least 1")
    if epochs_per_stage < 1 or final_full_epochs < 1:
        raise ValidationError("epoch counts must be at least 1")
    stages = [
        (frozenset(range(k - 1 - i, k)), epochs_per_stage) for i in range(k)
    ]
    stages.append((frozenset(range(k)), final_full_epochs))
    schedule = CurriculumSchedule(num_buckets=k, stages=tuple(stages))
    schedule.validate(cumulative=False)
    return schedule


def curriculum_train(
    corpus: Sequence[Instance],
    vocab: LabelVocabulary,
    records: Sequence[DifficultyRecord],
    schedule: CurriculumSchedule,
    model_config: ModelConfig,
    optim_config: OptimConfig,
    seed: int,
    encoded: Optional[Sequence[EncodedInstance]] = None,
    reset_optimizer_between_stages: bool = False,
    step_hook: Optional[Callable[[str], None]] = None,
) -> tuple[ModelParameters, list[list[float]]]:
    """Train one model through the schedule's stages, easiest buckets first.

    The model is initialized once; parameters, optimizer state, and the
    shuffle/dropout streams carry across stages, so a one-stage schedule over
    all buckets reproduces a plain ``train`` call bit for bit. Returns the
    final parameters and the per-stage loss histories.
    """
    bucket_of: dict[str, int] = {}
    for rec in records:
        if rec.bucket == UNASSIGNED:
            raise ValidationError(f"record {rec.id} has no bucket assigned")
        bucket_of[rec.id] = rec.bucket
    missing = [inst.id for inst in corpus if inst.id not in bucket_of]
    if missing:
        raise ValidationError(
            f"{len(missing)} corpus instances lack difficulty records "
            f"(first: {missing[0]})"
        )
    enc = encoded if encoded is not None else encode_corpus(
        corpus, vocab, model_config
    )
    engine = _Engine(enc, model_config, optim_config, seed)
    histories = []
    for buckets, epochs in schedule.stages:
        indices = [i for i, inst in enumerate(corpus) if bucket_of[inst.id] in buckets]
        if not indices:
            raise ValidationError(
                f"stage over buckets {sorted(buckets)} selects no instances"
            )
        if reset_optimizer_between_stages and engine.state.step_count > 0:
            # Settle pending decay before zeroing the step counter, or the
            # cold rows would silently lose their accrued weight decay.
            engine.kern.finalize_cold(
                engine.emb, engine.warm, engine.row_step,
                engine.state.step_count, engine.eta_emb,
                optim_config.weight_decay, engine.cold_decay,
            )
            engine.state.m[:] = 0.0
            engine.state.v[:] = 0.0
            engine.state.step_count = 0
            engine.warm[:] = 0
            engine.row_step[:] = 0
        histories.append(engine.run_stage(indices, epochs, step_hook))
    return engine.finish(), histories


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def records_to_jsonl(records: Sequence[DifficultyRecord]) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)


def records_from_jsonl(text: str) -> list[DifficultyRecord]:
    records = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            records.append(DifficultyRecord.from_json(json.loads(line)))
    return records

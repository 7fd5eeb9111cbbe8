"""Experiment configuration: strict JSON parsing with helpful errors.

Unknown keys are rejected (a typo in a sweep config should fail loudly, not
silently fall back to a default), with a suggestion when a known key is
close. Absent fields fall back to the package defaults: learning rate
0.0005, dropout 0.1, layer decay 0.7, AdamW moments.
"""

from __future__ import annotations

import dataclasses
import difflib
import json
from dataclasses import dataclass
from typing import Any, Optional

from .data import SyntheticSpec
from .errors import ConfigError, ParseError
from .model import ModelConfig
from .optim import OptimConfig
from .rng import child_seed

ARMS = ("curriculum", "shuffled-baseline", "anti-curriculum")

DEFAULT_SYNTH = dict(
    num_instances=2000,
    num_relations=8,
    vocab_size=50,
    tier_fractions=(0.6, 0.2, 0.2),
)
DEFAULT_EVAL_SYNTH = dict(
    num_instances=600,
    num_relations=8,
    vocab_size=50,
    tier_fractions=(1.0, 0.0, 0.0),
)


@dataclass(frozen=True)
class ModelSettings:
    """Model hyperparameters from config; num_labels is corpus-derived."""

    embed_dim: int = 32
    gat_dim: int = 32
    leaky_relu_slope: float = 0.2
    dropout_rate: float = 0.1
    vocab_hash_buckets: int = 8192

    def to_model_config(self, num_labels: int) -> ModelConfig:
        cfg = ModelConfig(
            num_labels=num_labels,
            embed_dim=self.embed_dim,
            gat_dim=self.gat_dim,
            leaky_relu_slope=self.leaky_relu_slope,
            dropout_rate=self.dropout_rate,
            vocab_hash_buckets=self.vocab_hash_buckets,
        )
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class ScheduleSettings:
    epochs_per_stage: int = 1
    final_full_epochs: int = 1

    def validate(self) -> None:
        if self.epochs_per_stage < 1:
            raise ConfigError("schedule.epochs_per_stage must be at least 1")
        if self.final_full_epochs < 1:
            raise ConfigError("schedule.final_full_epochs must be at least 1")


@dataclass(frozen=True)
class DataSource:
    path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None

    def validate(self, prefix: str) -> None:
        if (self.path is None) == (self.synthetic is None):
            raise ConfigError(f"{prefix}: set exactly one of 'path' or 'synthetic'")
        if self.synthetic is not None:
            try:
                self.synthetic.validate()
            except ConfigError as exc:
                raise ConfigError(f"{prefix}.synthetic: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSource
    eval_data: Optional[DataSource]
    model: ModelSettings
    optim: OptimConfig
    folds: int
    buckets: int
    schedule: ScheduleSettings
    arm: str
    seed: int
    out_dir: Optional[str]

    def validate(self) -> None:
        self.data.validate("data")
        if self.eval_data is not None:
            self.eval_data.validate("eval_data")
        self.model.to_model_config(num_labels=2)
        try:
            self.optim.validate()
        except ConfigError:
            raise
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.buckets < 1:
            raise ConfigError("buckets must be at least 1")
        self.schedule.validate()
        if self.arm not in ARMS:
            raise ConfigError(f"arm must be one of {', '.join(ARMS)}")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    def digest_payload(self) -> dict:
        payload = dataclasses.asdict(self)
        return payload


_TOP_KEYS = {
    "data", "eval_data", "model", "optim", "folds", "buckets",
    "schedule", "arm", "seed", "out_dir",
}
_DATA_KEYS = {"path", "synthetic"}
_SYNTH_KEYS = {"num_instances", "num_relations", "vocab_size", "tier_fractions", "seed"}
_MODEL_KEYS = {
    "embed_dim", "gat_dim", "leaky_relu_slope", "dropout_rate", "vocab_hash_buckets",
}
_OPTIM_KEYS = {
    "epochs", "learning_rate", "beta1", "beta2", "epsilon", "weight_decay",
    "layer_decay", "batch_size", "shuffle_seed",
}
_SCHEDULE_KEYS = {"epochs_per_stage", "final_full_epochs"}

# Shorthand people actually type, mapped to the qualified key.
_ALIASES = {
    "lr": "optim.learning_rate",
    "learning_rate": "optim.learning_rate",
    "dropout": "model.dropout_rate",
    "dropout_rate": "model.dropout_rate",
    "weight_decay": "optim.weight_decay",
    "layer_decay": "optim.layer_decay",
    "epochs": "optim.epochs",
    "embed_dim": "model.embed_dim",
    "gat_dim": "model.gat_dim",
    "n_folds": "folds",
    "k": "buckets",
}

_ALL_QUALIFIED = (
    sorted(_TOP_KEYS)
    + [f"data.{k}" for k in _DATA_KEYS]
    + [f"model.{k}" for k in _MODEL_KEYS]
    + [f"optim.{k}" for k in _OPTIM_KEYS]
    + [f"schedule.{k}" for k in _SCHEDULE_KEYS]
)


def _reject_unknown(obj: dict, known: set[str], section: str) -> None:
    for key in obj:
        if key in known:
            continue
        qualified = f"{section}.{key}" if section else key
        hint = _ALIASES.get(key)
        if hint is None:
            close = difflib.get_close_matches(qualified, _ALL_QUALIFIED, n=1)
            if not close:
                close = difflib.get_close_matches(key, _ALL_QUALIFIED, n=1)
            hint = close[0] if close else None
        suffix = f" (did you mean {hint!r}?)" if hint else ""
        raise ConfigError(f"unknown config key {qualified!r}{suffix}")


def _expect(obj: Any, typ: type, key: str) -> Any:
    if typ is float and isinstance(obj, int) and not isinstance(obj, bool):
        return float(obj)
    if typ is int and (isinstance(obj, bool) or not isinstance(obj, int)):
        raise ConfigError(f"{key} must be an integer")
    if not isinstance(obj, typ):
        raise ConfigError(f"{key} must be of type {typ.__name__}")
    return obj


def _parse_synth(obj: dict, section: str, master_seed: int, defaults: dict,
                 seed_stream: str) -> SyntheticSpec:
    _reject_unknown(obj, _SYNTH_KEYS, section)
    fr = obj.get("tier_fractions", defaults["tier_fractions"])
    if not (isinstance(fr, (list, tuple)) and len(fr) == 3):
        raise ConfigError(f"{section}.tier_fractions must be three numbers")
    return SyntheticSpec(
        num_instances=_expect(obj.get("num_instances", defaults["num_instances"]),
                              int, f"{section}.num_instances"),
        num_relations=_expect(obj.get("num_relations", defaults["num_relations"]),
                              int, f"{section}.num_relations"),
        vocab_size=_expect(obj.get("vocab_size", defaults["vocab_size"]),
                           int, f"{section}.vocab_size"),
        tier_fractions=tuple(float(x) for x in fr),
        seed=_expect(obj.get("seed", child_seed(master_seed, seed_stream)),
                     int, f"{section}.seed"),
    )


def _parse_data(obj: Any, section: str, master_seed: int, defaults: dict,
                seed_stream: str) -> DataSource:
    if not isinstance(obj, dict):
        raise ConfigError(f"{section} must be an object")
    _reject_unknown(obj, _DATA_KEYS, section)
    path = obj.get("path")
    if path is not None:
        path = _expect(path, str, f"{section}.path")
    synth = None
    if "synthetic" in obj:
        if not isinstance(obj["synthetic"], dict):
            raise ConfigError(f"{section}.synthetic must be an object")
        synth = _parse_synth(
            obj["synthetic"], f"{section}.synthetic", master_seed, defaults, seed_stream
        )
    return DataSource(path=path, synthetic=synth)


def parse_config(obj: dict, seed_override: Optional[int] = None) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(obj, _TOP_KEYS, "")
    seed = seed_override if seed_override is not None else obj.get("seed", 1)
    seed = _expect(seed, int, "seed")

    if "data" in obj:
        data = _parse_data(obj["data"], "data", seed, DEFAULT_SYNTH, "synth")
    else:
        data = DataSource(
            synthetic=_parse_synth({}, "data.synthetic", seed, DEFAULT_SYNTH, "synth")
        )
    if "eval_data" in obj:
        eval_data: Optional[DataSource] = _parse_data(
            obj["eval_data"], "eval_data", seed, DEFAULT_EVAL_SYNTH, "synth-eval"
        )
    elif data.synthetic is not None:
        # default held-out eval: same label space as the training corpus,
        # easy tier only, derived seed
        eval_defaults = dict(
            DEFAULT_EVAL_SYNTH,
            num_relations=data.synthetic.num_relations,
            vocab_size=data.synthetic.vocab_size,
        )
        eval_data = DataSource(
            synthetic=_parse_synth(
                {}, "eval_data.synthetic", seed, eval_defaults, "synth-eval"
            )
        )
    else:
        eval_data = None

    mobj = obj.get("model", {})
    if not isinstance(mobj, dict):
        raise ConfigError("model must be an object")
    _reject_unknown(mobj, _MODEL_KEYS, "model")
    model = ModelSettings(
        embed_dim=_expect(mobj.get("embed_dim", 32), int, "model.embed_dim"),
        gat_dim=_expect(mobj.get("gat_dim", 32), int, "model.gat_dim"),
        leaky_relu_slope=_expect(
            mobj.get("leaky_relu_slope", 0.2), float, "model.leaky_relu_slope"
        ),
        dropout_rate=_expect(
            mobj.get("dropout_rate", 0.1), float, "model.dropout_rate"
        ),
        vocab_hash_buckets=_expect(
            mobj.get("vocab_hash_buckets", 8192), int, "model.vocab_hash_buckets"
        ),
    )

    oobj = obj.get("optim", {})
    if not isinstance(oobj, dict):
        raise ConfigError("optim must be an object")
    _reject_unknown(oobj, _OPTIM_KEYS, "optim")
    optim = OptimConfig(
        epochs=_expect(oobj.get("epochs", 5), int, "optim.epochs"),
        learning_rate=_expect(
            oobj.get("learning_rate", 0.0005), float, "optim.learning_rate"
        ),
        beta1=_expect(oobj.get("beta1", 0.9), float, "optim.beta1"),
        beta2=_expect(oobj.get("beta2", 0.999), float, "optim.beta2"),
        epsilon=_expect(oobj.get("epsilon", 1e-8), float, "optim.epsilon"),
        weight_decay=_expect(
            oobj.get("weight_decay", 0.01), float, "optim.weight_decay"
        ),
        layer_decay=_expect(oobj.get("layer_decay", 0.7), float, "optim.layer_decay"),
        batch_size=_expect(oobj.get("batch_size", 1), int, "optim.batch_size"),
        shuffle_seed=_expect(oobj.get("shuffle_seed", 0), int, "optim.shuffle_seed"),
    )

    sobj = obj.get("schedule", {})
    if not isinstance(sobj, dict):
        raise ConfigError("schedule must be an object")
    _reject_unknown(sobj, _SCHEDULE_KEYS, "schedule")
    schedule = ScheduleSettings(
        epochs_per_stage=_expect(
            sobj.get("epochs_per_stage", 1), int, "schedule.epochs_per_stage"
        ),
        final_full_epochs=_expect(
            sobj.get("final_full_epochs", 1), int, "schedule.final_full_epochs"
        ),
    )

    config = ExperimentConfig(
        data=data,
        eval_data=eval_data,
        model=model,
        optim=optim,
        folds=_expect(obj.get("folds", 5), int, "folds"),
        buckets=_expect(obj.get("buckets", 3), int, "buckets"),
        schedule=schedule,
        arm=_expect(obj.get("arm", "curriculum"), str, "arm"),
        seed=seed,
        out_dir=(
            _expect(obj["out_dir"], str, "out_dir") if "out_dir" in obj else None
        ),
    )
    config.validate()
    return config


def load_config(path: str, seed_override: Optional[int] = None) -> ExperimentConfig:
    """Read, strictly parse, and validate a JSON config file."""
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path} is not valid JSON: {exc.msg}") from exc
    return parse_config(obj, seed_override)

"""AdamW with decoupled weight decay, layer-decayed LRs, and the train loop.

``adamw_step`` is the reference dense update over the full flat parameter
vector. The training loop applies the same update through the backend
kernels, with one exactness-preserving shortcut: embedding rows whose
gradient has always been zero carry exactly zero moments, so their updates
reduce to pure weight decay and are applied lazily in closed form. Warm
rows and all non-embedding parameters follow the dense formula step by
step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Instance, LabelVocabulary
from .errors import ConfigError, GradientError, ValidationError
from .kernels import get_kernels
from .model import (
    EncodedInstance,
    ModelConfig,
    ModelParameters,
    encode_corpus,
    init_params,
    param_count,
)
from .rng import child_rng

# Depth of each parameter group measured from the output head; the LR
# multiplier is layer_decay ** depth.
DEFAULT_COMPONENT_DEPTHS = {"head": 0, "gat": 1, "embeddings": 2}

_COMPONENT_GROUP = {
    "embeddings": "embeddings",
    "gat_w": "gat",
    "gat_a": "gat",
    "bilinear_w": "head",
    "bilinear_b": "head",
    "lin_w": "head",
}


@dataclass(frozen=True)
class OptimConfig:
    epochs: int
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    layer_decay: float = 0.7
    batch_size: int = 1
    shuffle_seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("optim.epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("optim.learning_rate must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("optim.beta1/beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("optim.epsilon must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("optim.weight_decay must be >= 0")
        if not (0.0 < self.layer_decay <= 1.0):
            raise ConfigError("optim.layer_decay must be in (0, 1]")
        if self.batch_size != 1:
            raise ConfigError("optim.batch_size: only 1 is supported")


@dataclass
class OptimState:
    """AdamW moment accumulators over the flat parameter vector."""

    step_count: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_params: int) -> "OptimState":
        return cls(step_count=0, m=np.zeros(n_params), v=np.zeros(n_params))


def layer_lr_scales(
    config: OptimConfig, component_depths: Optional[dict[str, int]] = None
) -> dict[str, float]:
    """Per-group LR multipliers: head 1.0, GAT layer_decay, embeddings squared."""
    depths = component_depths or DEFAULT_COMPONENT_DEPTHS
    return {group: config.layer_decay ** depth for group, depth in depths.items()}


def _bias_corrections(t: int, beta1: float, beta2: float) -> tuple[float, float]:
    return 1.0 - beta1**t, 1.0 - beta2**t


def _scale_flat(params: ModelParameters, scales: dict[str, float]) -> np.ndarray:
    out = np.empty_like(params.flat)
    for name, (lo, hi) in params.component_offsets().items():
        out[lo:hi] = scales[_COMPONENT_GROUP[name]]
    return out


def check_gradient_finite(params: ModelParameters, grad: np.ndarray) -> None:
    if np.isfinite(grad).all():
        return
    for name, (lo, hi) in params.component_offsets().items():
        if not np.isfinite(grad[lo:hi]).all():
            raise GradientError(f"non-finite gradient entry in component {name!r}")
    raise GradientError("non-finite gradient entry")


def adamw_step(
    params: ModelParameters,
    state: OptimState,
    grad: np.ndarray,
    config: OptimConfig,
    lr_scale_per_component: Optional[dict[str, float]] = None,
) -> None:
    """One decoupled-weight-decay Adam step over the full flat vector.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  bias-corrected m_hat,
    v_hat; theta <- theta - eta_c (m_hat / (sqrt(v_hat) + eps) + wd theta),
    with eta_c the component-scaled learning rate. Weight decay stays
    decoupled: it multiplies theta, never folds into g.
    """
    if grad.shape != params.flat.shape:
        raise ValidationError("gradient length does not match parameter count")
    check_gradient_finite(params, grad)
    scales = lr_scale_per_component or layer_lr_scales(config)
    eta = config.learning_rate * _scale_flat(params, scales)
    t = state.step_count + 1
    b1, b2 = config.beta1, config.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * (grad * grad)
    bc1, bc2 = _bias_corrections(t, b1, b2)
    upd = (state.m / bc1) / (np.sqrt(state.v / bc2) + config.epsilon) + (
        config.weight_decay * params.flat
    )
    params.flat -= eta * upd
    state.step_count = t


# ---------------------------------------------------------------------------
# Training engine
# ---------------------------------------------------------------------------


class _Engine:
    """Mutable training run: one model, one optimizer state, shared streams.

    Stage boundaries do not reset anything; a single full-coverage stage is
    bitwise-identical to a plain ``train`` call with the same seed.
    """

    def __init__(
        self,
        encoded: Sequence[EncodedInstance],
        model_config: ModelConfig,
        optim_config: OptimConfig,
        seed: int,
    ):
        model_config.validate()
        optim_config.validate()
        self.encoded = encoded
        self.mc = model_config
        self.oc = optim_config
        self.params = init_params(model_config, seed)
        self.state = OptimState.zeros(param_count(model_config))
        self.shuffle_rng = child_rng(seed, f"shuffle/{optim_config.shuffle_seed}")
        self.dropout_rng = child_rng(seed, "dropout")
        self.kern = get_kernels()

        b = model_config.vocab_hash_buckets
        e = model_config.embed_dim
        n_emb = b * e
        scales = layer_lr_scales(optim_config)
        lr = optim_config.learning_rate
        self.eta_emb = lr * scales["embeddings"]
        tail_scale = _scale_flat(self.params, scales)[n_emb:]
        self.eta_tail = lr * tail_scale
        self.cold_decay = 1.0 - self.eta_emb * optim_config.weight_decay

        self.emb = self.params.embeddings
        self.m_emb = self.state.m[:n_emb].reshape(b, e)
        self.v_emb = self.state.v[:n_emb].reshape(b, e)
        self.tail = self.params.flat[n_emb:]
        self.m_tail = self.state.m[n_emb:]
        self.v_tail = self.state.v[n_emb:]
        self.dtail = np.zeros(self.tail.shape[0])
        self.warm = np.zeros(b, dtype=np.uint8)
        self.row_step = np.zeros(b, dtype=np.int64)
        self.touch = np.full(b, -1, dtype=np.int64)
        self._offsets = self.params.component_offsets()

    def run_stage(
        self,
        indices: Sequence[int],
        epochs: int,
        step_hook: Optional[Callable[[str], None]] = None,
    ) -> list[float]:
        """Train ``epochs`` passes over ``indices``; returns mean loss per epoch."""
        if not indices:
            raise ValidationError("training subset is empty")
        mc, oc = self.mc, self.oc
        p = mc.dropout_rate
        inv_keep = 1.0 / (1.0 - p)
        slope = mc.leaky_relu_slope
        history = []
        for _ in range(epochs):
            order = self.shuffle_rng.permutation(len(indices))
            total = 0.0
            for k in order:
                enc = self.encoded[indices[int(k)]]
                total += self._step(enc, p, inv_keep, slope)
                if step_hook is not None:
                    step_hook(enc.id)
            history.append(total / len(indices))
        return history

    def _step(self, enc: EncodedInstance, p: float, inv_keep: float, slope: float) -> float:
        n = enc.n_tokens
        emask = (self.dropout_rng.random((n, self.mc.embed_dim)) >= p).astype(np.float64)
        gmask = (self.dropout_rng.random((n, self.mc.gat_dim)) >= p).astype(np.float64)
        # The forward pass must read fully decayed values for this
        # instance's rows; never-used rows stay lazily pending.
        self.kern.materialize_rows(
            self.emb, enc.uniq_rows, self.warm, self.row_step,
            self.state.step_count, self.eta_emb, self.oc.weight_decay,
        )
        loss, dxrow = self.kern.fb_fused(
            self.emb, self.params.gat_w, self.params.gat_a,
            self.params.bilinear_w, self.params.bilinear_b, self.params.lin_w,
            enc.ids, enc.indptr, enc.neighbors,
            enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
            enc.slot_of_pos, enc.uniq_rows.shape[0],
            emask, gmask, inv_keep, slope, enc.gold, self.dtail,
        )
        self._screen_gradients(dxrow)
        t = self.state.step_count + 1
        bc1, bc2 = _bias_corrections(t, self.oc.beta1, self.oc.beta2)
        self.kern.adamw_update(
            self.emb, self.m_emb, self.v_emb,
            self.tail, self.m_tail, self.v_tail,
            dxrow, enc.uniq_rows, self.dtail, self.eta_tail, self.eta_emb,
            self.oc.weight_decay, self.oc.epsilon, bc1, bc2,
            self.oc.beta1, self.oc.beta2, t,
            self.warm, self.row_step, self.touch, self.cold_decay,
        )
        self.state.step_count = t
        return loss

    def _screen_gradients(self, dxrow: np.ndarray) -> None:
        # Sums propagate NaN/Inf; the precise per-component check only runs
        # when the cheap screen trips (it can also clear a spurious overflow).
        if np.isfinite(self.dtail.sum()) and np.isfinite(dxrow.sum()):
            return
        if not np.isfinite(dxrow).all():
            raise GradientError("non-finite gradient entry in component 'embeddings'")
        n_emb = self.emb.size
        for name, (lo, hi) in self._offsets.items():
            if name == "embeddings":
                continue
            if not np.isfinite(self.dtail[lo - n_emb : hi - n_emb]).all():
                raise GradientError(f"non-finite gradient entry in component {name!r}")

    def finish(self) -> ModelParameters:
        """Settle pending cold-row decay; call before the params escape."""
        self.kern.finalize_cold(
            self.emb, self.warm, self.row_step, self.state.step_count,
            self.eta_emb, self.oc.weight_decay, self.cold_decay,
        )
        return self.params


def train(
    corpus_subset: Sequence[Instance],
    vocab: LabelVocabulary,
    model_config: ModelConfig,
    optim_config: OptimConfig,
    seed: int,
    encoded: Optional[Sequence[EncodedInstance]] = None,
    step_hook: Optional[Callable[[str], None]] = None,
) -> tuple[ModelParameters, list[float]]:
    """Train a fresh model on the subset; returns params and per-epoch loss.

    Deterministic per (subset order, configs, seed): the instance order is
    reshuffled each epoch by a seeded stream, dropout masks come from a
    second stream, and init from a third, all derived from ``seed``.
    """
    if len(corpus_subset) == 0:
        raise ValidationError("training subset is empty")
    enc = encoded if encoded is not None else encode_corpus(
        corpus_subset, vocab, model_config
    )
    engine = _Engine(enc, model_config, optim_config, seed)
    if optim_config.epochs == 0:
        return engine.finish(), []
    history = engine.run_stage(range(len(enc)), optim_config.epochs, step_hook)
    return engine.finish(), history

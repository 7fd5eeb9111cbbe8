"""Differentiable relation classifier with exact analytic gradients.

The model embeds the marked token sequence through a hashed lookup table,
runs one graph-attention layer over the dependency graph of the marked
sentence, forms each entity representation by concatenating its opening
marker's embedding with the GAT output at the span's first original token
(the node all of the span's markers attach to), and scores labels with a
bilinear form plus a linear term and bias.

Heavy math lives in ``crex.kernels``; this module owns parameter layout,
instance encoding, the forward/backward API, and checkpoint round-trips.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import (
    OPEN_BLOCK_LEN,
    Instance,
    LabelVocabulary,
    MarkedSequence,
    build_marked_dependency_graph,
    insert_typed_markers,
)
from .errors import ConfigError, ValidationError
from .kernels import get_kernels
from .rng import child_rng, fnv1a64


@dataclass(frozen=True)
class ModelConfig:
    num_labels: int
    embed_dim: int = 32
    gat_dim: int = 32
    leaky_relu_slope: float = 0.2
    dropout_rate: float = 0.1
    vocab_hash_buckets: int = 8192

    def validate(self) -> None:
        if self.num_labels < 1:
            raise ConfigError("model.num_labels must be positive")
        if self.embed_dim < 1 or self.gat_dim < 1:
            raise ConfigError("model dims must be at least 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError("model.dropout_rate must be in [0, 1)")
        if self.vocab_hash_buckets < 1:
            raise ConfigError("model.vocab_hash_buckets must be positive")

    @property
    def pair_dim(self) -> int:
        return self.embed_dim + self.gat_dim


def param_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Component order and shapes of the flat parameter vector."""
    b = config.vocab_hash_buckets
    e = config.embed_dim
    g = config.gat_dim
    l = config.num_labels
    d = config.pair_dim
    return [
        ("embeddings", (b, e)),
        ("gat_w", (e, g)),
        ("gat_a", (2 * g,)),
        ("bilinear_w", (l, d, d)),
        ("bilinear_b", (l,)),
        ("lin_w", (l, 2 * d)),
    ]


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(config))


class ModelParameters:
    """All trainable tensors, backed by one flat float64 vector.

    The named attributes are reshaped views into ``flat``; mutating either
    side is visible through the other, and the flat view round-trips
    losslessly by construction.
    """

    embeddings: np.ndarray
    gat_w: np.ndarray
    gat_a: np.ndarray
    bilinear_w: np.ndarray
    bilinear_b: np.ndarray
    lin_w: np.ndarray

    def __init__(self, config: ModelConfig, flat: np.ndarray):
        expected = param_count(config)
        if flat.shape != (expected,):
            raise ValidationError(
                f"flat parameter vector has length {flat.shape}, expected {expected}"
            )
        self.config = config
        self.flat = flat
        offset = 0
        for name, shape in param_layout(config):
            size = int(np.prod(shape))
            setattr(self, name, flat[offset : offset + size].reshape(shape))
            offset += size

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, self.flat.copy())

    def component_offsets(self) -> dict[str, tuple[int, int]]:
        out = {}
        offset = 0
        for name, shape in param_layout(self.config):
            size = int(np.prod(shape))
            out[name] = (offset, offset + size)
            offset += size
        return out


# Initialization scale is 1/sqrt(fan_in) per component; fan_in is the input
# dimensionality of the map the component implements (embedding rows use
# their own width). The bias starts at zero.
def _fan_in(config: ModelConfig) -> dict[str, int]:
    d = config.pair_dim
    return {
        "embeddings": config.embed_dim,
        "gat_w": config.embed_dim,
        "gat_a": 2 * config.gat_dim,
        "bilinear_w": d,
        "lin_w": 2 * d,
    }


def init_params(config: ModelConfig, seed: int) -> ModelParameters:
    """Uniform [-s, s] init with s = 1/sqrt(fan_in), deterministic per seed."""
    config.validate()
    rng = child_rng(seed, "init")
    flat = np.zeros(param_count(config))
    params = ModelParameters(config, flat)
    fans = _fan_in(config)
    for name, shape in param_layout(config):
        if name == "bilinear_b":
            continue
        s = 1.0 / np.sqrt(fans[name])
        getattr(params, name)[...] = rng.uniform(-s, s, size=shape)
    return params


# ---------------------------------------------------------------------------
# Instance encoding
# ---------------------------------------------------------------------------


def token_bucket(token: str, buckets: int) -> int:
    return fnv1a64(token.encode("utf-8")) % buckets


@dataclass(frozen=True)
class EncodedInstance:
    """Array form of one marked instance, ready for the kernels."""

    id: str
    ids: np.ndarray  # int64 [T] hashed token buckets
    indptr: np.ndarray  # int64 [T+1]
    neighbors: np.ndarray  # int64 [nnz]
    subj_anchor: int
    obj_anchor: int
    subj_ctx: int  # marked position of the subject span's first token
    obj_ctx: int
    uniq_rows: np.ndarray  # int64 [K] sorted unique bucket rows
    slot_of_pos: np.ndarray  # int64 [T] position -> uniq slot
    gold: int

    @property
    def n_tokens(self) -> int:
        return int(self.ids.shape[0])


def encode_marked(
    marked: MarkedSequence,
    adjacency: Sequence[Sequence[int]],
    config: ModelConfig,
    gold: int = -1,
    inst_id: str = "",
) -> EncodedInstance:
    tokens = marked.tokens
    ids = np.array(
        [token_bucket(tok, config.vocab_hash_buckets) for tok in tokens],
        dtype=np.int64,
    )
    counts = [len(nb) for nb in adjacency]
    indptr = np.zeros(len(tokens) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(counts)
    neighbors = np.array([j for nb in adjacency for j in nb], dtype=np.int64)
    uniq, inverse = np.unique(ids, return_inverse=True)
    return EncodedInstance(
        id=inst_id,
        ids=ids,
        indptr=indptr,
        neighbors=neighbors,
        subj_anchor=marked.subj_anchor,
        obj_anchor=marked.obj_anchor,
        subj_ctx=marked.subj_anchor + OPEN_BLOCK_LEN,
        obj_ctx=marked.obj_anchor + OPEN_BLOCK_LEN,
        uniq_rows=uniq.astype(np.int64),
        slot_of_pos=inverse.astype(np.int64),
        gold=gold,
    )


def encode_instance(
    inst: Instance, vocab: LabelVocabulary, config: ModelConfig
) -> EncodedInstance:
    marked = insert_typed_markers(inst)
    adjacency = build_marked_dependency_graph(inst, marked)
    return encode_marked(
        marked, adjacency, config, gold=vocab.index_of(inst.relation), inst_id=inst.id
    )


def encode_corpus(
    corpus: Sequence[Instance], vocab: LabelVocabulary, config: ModelConfig
) -> list[EncodedInstance]:
    return [encode_instance(inst, vocab, config) for inst in corpus]


# ---------------------------------------------------------------------------
# Forward / backward / predict
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Activations cached by ``forward``; sufficient input for backward."""

    encoded: EncodedInstance
    token_embeddings: np.ndarray  # post-dropout h, [T, E]
    gat_inputs: np.ndarray  # projected z, [T, G]
    att_pre: np.ndarray  # per-edge pre-activation logits
    att_logits: np.ndarray  # per-edge LeakyReLU logits
    att_coef: np.ndarray  # per-edge attention coefficients
    gat_out: np.ndarray  # [T, G]
    gat_out_dropped: np.ndarray  # [T, G]
    subj_repr: np.ndarray  # [D]
    obj_repr: np.ndarray  # [D]
    scores: np.ndarray  # [L]
    probs: np.ndarray  # [L]
    emb_mask: np.ndarray
    gat_mask: np.ndarray
    inv_keep: float
    training: bool


def _draw_masks(
    config: ModelConfig, n_tokens: int, dropout_rng: Optional[np.random.Generator]
) -> tuple[np.ndarray, np.ndarray, float]:
    if dropout_rng is None:
        emask = np.ones((n_tokens, config.embed_dim))
        gmask = np.ones((n_tokens, config.gat_dim))
        return emask, gmask, 1.0
    p = config.dropout_rate
    emask = (dropout_rng.random((n_tokens, config.embed_dim)) >= p).astype(np.float64)
    gmask = (dropout_rng.random((n_tokens, config.gat_dim)) >= p).astype(np.float64)
    return emask, gmask, 1.0 / (1.0 - p)


def forward_encoded(
    params: ModelParameters,
    enc: EncodedInstance,
    dropout_rng: Optional[np.random.Generator] = None,
) -> ForwardTrace:
    config = params.config
    emask, gmask, inv_keep = _draw_masks(config, enc.n_tokens, dropout_rng)
    kern = get_kernels()
    (h, z, u, logits, alpha, gat, gat_dropped, e_s, e_o, scores, probs) = (
        kern.forward_trace(
            params.embeddings, params.gat_w, params.gat_a,
            params.bilinear_w, params.bilinear_b, params.lin_w,
            enc.ids, enc.indptr, enc.neighbors,
            enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
            emask, gmask, inv_keep, config.leaky_relu_slope,
        )
    )
    return ForwardTrace(
        encoded=enc,
        token_embeddings=h,
        gat_inputs=z,
        att_pre=u,
        att_logits=logits,
        att_coef=alpha,
        gat_out=gat,
        gat_out_dropped=gat_dropped,
        subj_repr=e_s,
        obj_repr=e_o,
        scores=scores,
        probs=probs,
        emb_mask=emask,
        gat_mask=gmask,
        inv_keep=inv_keep,
        training=dropout_rng is not None,
    )


def forward(
    params: ModelParameters,
    marked: MarkedSequence,
    adjacency: Sequence[Sequence[int]],
    config: ModelConfig,
    dropout_rng: Optional[np.random.Generator] = None,
) -> ForwardTrace:
    """Run the classifier on a marked sentence; deterministic without RNG."""
    enc = encode_marked(marked, adjacency, config)
    return forward_encoded(params, enc, dropout_rng)


def loss_and_backward(
    params: ModelParameters, trace: ForwardTrace, gold: int
) -> tuple[float, np.ndarray]:
    """Cross-entropy loss and its exact gradient as a flat vector."""
    config = params.config
    if not (0 <= gold < config.num_labels):
        raise ValidationError(f"gold label index {gold} out of range")
    enc = trace.encoded
    kern = get_kernels()
    loss, dxrow, dgw, dga, dbw, dbb, dlw = kern.backward_from_trace(
        params.gat_w, params.gat_a, params.bilinear_w, params.lin_w,
        enc.indptr, enc.neighbors,
        enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
        enc.slot_of_pos, enc.uniq_rows.shape[0],
        trace.token_embeddings, trace.gat_inputs, trace.att_pre, trace.att_coef,
        trace.subj_repr, trace.obj_repr, trace.probs,
        trace.emb_mask, trace.gat_mask, trace.inv_keep,
        config.leaky_relu_slope, gold,
    )
    grad = np.zeros_like(params.flat)
    offsets = params.component_offsets()
    lo, hi = offsets["embeddings"]
    grad[lo:hi].reshape(params.embeddings.shape)[enc.uniq_rows] = dxrow
    for name, piece in (
        ("gat_w", dgw),
        ("gat_a", dga),
        ("bilinear_w", dbw),
        ("bilinear_b", dbb),
        ("lin_w", dlw),
    ):
        lo, hi = offsets[name]
        grad[lo:hi] = piece.ravel()
    return float(loss), grad


def predict_encoded(params: ModelParameters, enc: EncodedInstance) -> int:
    kern = get_kernels()
    scores = kern.scores_eval(
        params.embeddings, params.gat_w, params.gat_a,
        params.bilinear_w, params.bilinear_b, params.lin_w,
        enc.ids, enc.indptr, enc.neighbors,
        enc.subj_anchor, enc.obj_anchor, enc.subj_ctx, enc.obj_ctx,
        params.config.leaky_relu_slope,
    )
    return int(np.argmax(scores))


def predict(
    params: ModelParameters,
    marked: MarkedSequence,
    adjacency: Sequence[Sequence[int]],
    config: ModelConfig,
) -> int:
    """Argmax label index; ties break toward the smallest index."""
    enc = encode_marked(marked, adjacency, config)
    return predict_encoded(params, enc)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "crex-checkpoint-v1"


def save_checkpoint(
    path: str | os.PathLike,
    params: ModelParameters,
    seed_lineage: Optional[dict] = None,
) -> None:
    """Write a self-describing JSON checkpoint; float64-exact round-trip."""
    config = params.config
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "config": {
            "num_labels": config.num_labels,
            "embed_dim": config.embed_dim,
            "gat_dim": config.gat_dim,
            "leaky_relu_slope": config.leaky_relu_slope,
            "dropout_rate": config.dropout_rate,
            "vocab_hash_buckets": config.vocab_hash_buckets,
        },
        "seed_lineage": seed_lineage or {},
        "tensors": {
            name: {
                "shape": list(shape),
                "data": getattr(params, name).ravel().tolist(),
            }
            for name, shape in param_layout(config)
        },
    }
    text = json.dumps(payload, sort_keys=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelParameters, dict]:
    with open(path, "r") as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ValidationError(f"unrecognized checkpoint format in {path}")
    cfg = ModelConfig(**payload["config"])
    params = ModelParameters(cfg, np.zeros(param_count(cfg)))
    for name, shape in param_layout(cfg):
        entry = payload["tensors"][name]
        if tuple(entry["shape"]) != shape:
            raise ValidationError(f"checkpoint tensor {name} has wrong shape")
        getattr(params, name)[...] = np.array(entry["data"]).reshape(shape)
    return params, payload.get("seed_lineage", {})

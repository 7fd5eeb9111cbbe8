"""Corpus handling for sentence-level relation extraction.

Covers ingestion of TACRED-schema JSON, a synthetic corpus generator with
planted difficulty tiers, typed entity-marker insertion, dependency graph
construction, and stratified fold splitting. All corpus structures are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .rng import child_rng

NO_RELATION = "no_relation"

TIER_EASY = "easy"
TIER_HARD = "hard"
TIER_NOISY = "noisy"
TIERS = (TIER_EASY, TIER_HARD, TIER_NOISY)

# Typed entity markers. The subject span becomes  @ * <type> * ... @  and the
# object span  # ^ <type> ^ ... # ; the opening '@' / '#' are the anchors.
SUBJ_OPEN = ("@", "*")
SUBJ_CLOSE = "@"
OBJ_OPEN = ("#", "^")
OBJ_CLOSE = "#"
OPEN_BLOCK_LEN = 4  # opening block: sym, inner, type, inner


@dataclass(frozen=True)
class Instance:
    """One sentence with a marked entity pair and its gold relation."""

    id: str
    tokens: tuple[str, ...]
    subj_span: tuple[int, int]  # inclusive token indices
    obj_span: tuple[int, int]
    subj_type: str
    obj_type: str
    dep_heads: tuple[int, ...]  # 1-indexed head per token, 0 = root
    dep_labels: tuple[str, ...]
    relation: str


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered relation label set; indices are stable and contiguous."""

    labels: tuple[str, ...]
    negative_label: str = NO_RELATION

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("label vocabulary contains duplicates")
        if self.negative_label not in self.labels:
            raise ValidationError(
                f"negative label {self.negative_label!r} missing from vocabulary"
            )

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown relation label {label!r}") from None

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class MarkedSequence:
    """Token sequence with typed entity markers inserted.

    ``origin_map`` holds, per marked position, the originating token index,
    or None for inserted marker tokens; stripping the None positions
    recovers the original sentence exactly.
    """

    tokens: tuple[str, ...]
    subj_anchor: int
    obj_anchor: int
    origin_map: tuple[Optional[int], ...]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic corpus with planted difficulty tiers.

    Noisy instances keep their easy-shaped sentence but the stored label is
    flipped to a uniformly random different label.
    """

    num_instances: int
    num_relations: int
    vocab_size: int
    tier_fractions: tuple[float, float, float]  # easy, hard, noisy
    seed: int

    def validate(self) -> None:
        if self.num_instances < 1:
            raise ConfigError("num_instances must be positive")
        if self.num_relations < 2:
            raise ConfigError("num_relations must be at least 2")
        if any(f < 0 for f in self.tier_fractions):
            raise ConfigError("tier_fractions must be non-negative")
        if abs(sum(self.tier_fractions) - 1.0) > 1e-9:
            raise ConfigError("tier_fractions must sum to 1")
        if self.vocab_size < self.num_relations + 4:
            raise ConfigError(
                "vocab_size must be at least num_relations + 4 "
                f"({self.num_relations + 4}), got {self.vocab_size}"
            )


@dataclass(frozen=True)
class FoldAssignment:
    """Disjoint stratified partition of a corpus into ``num_folds`` folds."""

    num_folds: int
    fold_of: Mapping[str, int]

    def members(self, fold: int) -> list[str]:
        return [i for i, f in self.fold_of.items() if f == fold]

    def to_json(self) -> dict[str, int]:
        return dict(self.fold_of)

    @classmethod
    def from_json(cls, mapping: Mapping[str, int]) -> "FoldAssignment":
        if not mapping:
            raise ValidationError("fold assignment is empty")
        n = max(mapping.values()) + 1
        return cls(num_folds=n, fold_of=dict(mapping))


def validate_instance(inst: Instance) -> None:
    """Check all Instance invariants, naming the instance in errors."""
    n = len(inst.tokens)
    if n == 0:
        raise ValidationError(f"instance {inst.id}: empty token sequence")
    for name, (s, e) in (("subj", inst.subj_span), ("obj", inst.obj_span)):
        if not (0 <= s <= e < n):
            raise ValidationError(
                f"instance {inst.id}: {name} span ({s}, {e}) out of range for "
                f"{n} tokens"
            )
    ss, se = inst.subj_span
    os_, oe = inst.obj_span
    if ss <= oe and os_ <= se:
        raise ValidationError(f"instance {inst.id}: entity spans overlap")
    if len(inst.dep_heads) != n or len(inst.dep_labels) != n:
        raise ValidationError(
            f"instance {inst.id}: dep_heads/dep_labels length mismatch"
        )
    _check_tree(inst.dep_heads, inst.id)


def _check_tree(heads: Sequence[int], inst_id: str) -> None:
    n = len(heads)
    roots = [i for i, h in enumerate(heads) if h == 0]
    for i, h in enumerate(heads):
        if not (0 <= h <= n):
            raise ValidationError(
                f"instance {inst_id}: head {h} of token {i} out of range"
            )
    if len(roots) != 1:
        raise ValidationError(
            f"instance {inst_id}: expected exactly one root, found {len(roots)}"
        )
    # BFS from the root; reaching every node proves acyclicity since each
    # non-root node has exactly one parent.
    children: list[list[int]] = [[] for _ in range(n)]
    for i, h in enumerate(heads):
        if h != 0:
            children[h - 1].append(i)
    seen = 0
    stack = [roots[0]]
    visited = [False] * n
    while stack:
        i = stack.pop()
        if visited[i]:
            continue
        visited[i] = True
        seen += 1
        stack.extend(children[i])
    if seen != n:
        raise ValidationError(f"instance {inst_id}: dependency heads contain a cycle")


# ---------------------------------------------------------------------------
# TACRED-schema ingestion and emission
# ---------------------------------------------------------------------------

_TACRED_FIELDS = (
    "id",
    "token",
    "subj_start",
    "subj_end",
    "obj_start",
    "obj_end",
    "subj_type",
    "obj_type",
    "stanford_head",
    "stanford_deprel",
    "relation",
)


def parse_tacred_json(data: bytes) -> tuple[list[Instance], LabelVocabulary]:
    """Parse a TACRED-schema JSON array into a validated corpus.

    The vocabulary is the sorted set of observed relations, always including
    the negative class so the negative-label invariant holds even for files
    that contain only positive relations.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"input is not valid UTF-8 at byte {exc.start}") from exc
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        byte_off = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON at byte {byte_off}: {exc.msg}") from exc
    if not isinstance(records, list):
        raise ParseError("expected a JSON array of records")

    corpus: list[Instance] = []
    observed: set[str] = set()
    for pos, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ValidationError(f"record #{pos} is not a JSON object")
        rec_id = str(rec.get("id", f"#{pos}"))
        missing = [f for f in _TACRED_FIELDS if f not in rec]
        if missing:
            raise ValidationError(
                f"instance {rec_id}: missing field(s) {', '.join(missing)}"
            )
        inst = Instance(
            id=str(rec["id"]),
            tokens=tuple(str(t) for t in rec["token"]),
            subj_span=(int(rec["subj_start"]), int(rec["subj_end"])),
            obj_span=(int(rec["obj_start"]), int(rec["obj_end"])),
            subj_type=str(rec["subj_type"]),
            obj_type=str(rec["obj_type"]),
            dep_heads=tuple(int(h) for h in rec["stanford_head"]),
            dep_labels=tuple(str(d) for d in rec["stanford_deprel"]),
            relation=str(rec["relation"]),
        )
        validate_instance(inst)
        corpus.append(inst)
        observed.add(inst.relation)

    if not observed:
        raise ValidationError("no labels observed")
    labels = tuple(sorted(observed | {NO_RELATION}))
    return corpus, LabelVocabulary(labels=labels, negative_label=NO_RELATION)


def instance_to_record(inst: Instance) -> dict:
    return {
        "id": inst.id,
        "token": list(inst.tokens),
        "subj_start": inst.subj_span[0],
        "subj_end": inst.subj_span[1],
        "obj_start": inst.obj_span[0],
        "obj_end": inst.obj_span[1],
        "subj_type": inst.subj_type,
        "obj_type": inst.obj_type,
        "stanford_head": list(inst.dep_heads),
        "stanford_deprel": list(inst.dep_labels),
        "relation": inst.relation,
    }


def corpus_to_json_bytes(corpus: Iterable[Instance]) -> bytes:
    records = [instance_to_record(inst) for inst in corpus]
    return (json.dumps(records, indent=1, sort_keys=True) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Synthetic corpus with planted difficulty tiers
# ---------------------------------------------------------------------------

# Fixed 7-token sentence layout: filler, SUBJ, signature, filler, OBJ,
# filler, filler. The signature token sits adjacent to the subject; the
# dependency chain is rooted at the signature ("verb") position. Distractor
# signatures may land next to either entity, so hard instances range from
# solvable (object-side interference) to genuinely ambiguous (a second
# signature adjacent to the subject).
_SENT_LEN = 7
_SUBJ_POS = 1
_SIG_POS = 2
_OBJ_POS = 4
_FILLER_SLOTS = (0, 3, 5, 6)
_DISTRACTOR_SLOTS = (0, 3, 5, 6)
_CHAIN_HEADS = (2, 3, 0, 3, 4, 5, 6)
_SUBJ_TYPE = "PERSON"
_OBJ_TYPE = "ORGANIZATION"


def relation_labels(num_relations: int) -> list[str]:
    return [f"rel{r:02d}" for r in range(num_relations)]


def signature_tokens(spec: SyntheticSpec) -> dict[str, str]:
    """Map each planted relation label to its signature sentence token."""
    return {
        label: f"tok{r:03d}"
        for r, label in enumerate(relation_labels(spec.num_relations))
    }


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[list[Instance], LabelVocabulary, dict[str, str]]:
    """Generate a corpus with planted easy/hard/noisy tiers.

    Easy sentences carry the relation's signature token adjacent to the
    subject. Hard sentences additionally place two distractor signature
    tokens of other relations at random filler positions. Noisy sentences
    are easy-shaped but store a flipped label. Returns the corpus, its
    vocabulary, and the ground-truth tier of every instance id.
    """
    spec.validate()
    rng = child_rng(spec.seed, "synth")
    n = spec.num_instances
    rel_names = relation_labels(spec.num_relations)
    labels = tuple(sorted(set(rel_names) | {NO_RELATION}))
    vocab = LabelVocabulary(labels=labels, negative_label=NO_RELATION)
    sig_of = signature_tokens(spec)
    fillers = [f"tok{v:03d}" for v in range(spec.num_relations, spec.vocab_size)]

    counts = _largest_remainder(spec.tier_fractions, n)
    tier_seq = np.repeat(np.arange(3), counts)
    tier_seq = tier_seq[rng.permutation(n)]

    corpus: list[Instance] = []
    tier_of: dict[str, str] = {}
    for i in range(n):
        tier = TIERS[tier_seq[i]]
        r = int(rng.integers(spec.num_relations))
        planted = rel_names[r]
        tokens = [fillers[int(k)] for k in rng.integers(len(fillers), size=_SENT_LEN)]
        tokens[_SIG_POS] = sig_of[planted]
        if tier == TIER_HARD:
            slots = rng.choice(len(_DISTRACTOR_SLOTS), size=2, replace=False)
            for slot in slots:
                other = int(rng.integers(spec.num_relations - 1))
                if other >= r:
                    other += 1
                tokens[_DISTRACTOR_SLOTS[int(slot)]] = sig_of[rel_names[other]]
        stored = planted
        if tier == TIER_NOISY:
            others = [lab for lab in labels if lab != planted]
            stored = others[int(rng.integers(len(others)))]
        inst = Instance(
            id=f"synth-{i:05d}",
            tokens=tuple(tokens),
            subj_span=(_SUBJ_POS, _SUBJ_POS),
            obj_span=(_OBJ_POS, _OBJ_POS),
            subj_type=_SUBJ_TYPE,
            obj_type=_OBJ_TYPE,
            dep_heads=_CHAIN_HEADS,
            dep_labels=("dep",) * _SENT_LEN,
            relation=stored,
        )
        corpus.append(inst)
        tier_of[inst.id] = tier
    return corpus, vocab, tier_of


def _largest_remainder(fractions: Sequence[float], total: int) -> list[int]:
    raw = [f * total for f in fractions]
    base = [math.floor(x) for x in raw]
    leftover = total - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


# ---------------------------------------------------------------------------
# Typed entity markers
# ---------------------------------------------------------------------------


def insert_typed_markers(inst: Instance) -> MarkedSequence:
    """Wrap both entity spans with typed punctuation markers.

    Works for either span order; the anchors point at the opening '@'/'#'.
    """
    opens: dict[int, list[str]] = {}
    closes: dict[int, list[str]] = {}
    ss, se = inst.subj_span
    os_, oe = inst.obj_span
    opens[ss] = [SUBJ_OPEN[0], SUBJ_OPEN[1], inst.subj_type.lower(), SUBJ_OPEN[1]]
    closes[se] = [SUBJ_CLOSE]
    opens[os_] = [OBJ_OPEN[0], OBJ_OPEN[1], inst.obj_type.lower(), OBJ_OPEN[1]]
    closes[oe] = [OBJ_CLOSE]

    tokens: list[str] = []
    origin: list[Optional[int]] = []
    subj_anchor = obj_anchor = -1
    for t, tok in enumerate(inst.tokens):
        if t in opens:
            if t == ss:
                subj_anchor = len(tokens)
            else:
                obj_anchor = len(tokens)
            tokens.extend(opens[t])
            origin.extend([None] * len(opens[t]))
        tokens.append(tok)
        origin.append(t)
        if t in closes:
            tokens.extend(closes[t])
            origin.extend([None] * len(closes[t]))
    return MarkedSequence(
        tokens=tuple(tokens),
        subj_anchor=subj_anchor,
        obj_anchor=obj_anchor,
        origin_map=tuple(origin),
    )


def strip_markers(marked: MarkedSequence) -> tuple[str, ...]:
    return tuple(
        tok for tok, o in zip(marked.tokens, marked.origin_map) if o is not None
    )


# ---------------------------------------------------------------------------
# Dependency graphs
# ---------------------------------------------------------------------------


def build_dependency_graph(inst: Instance) -> tuple[tuple[int, ...], ...]:
    """Symmetric neighbor lists with self-loops over the original tokens."""
    _check_tree(inst.dep_heads, inst.id)
    n = len(inst.tokens)
    nbrs: list[set[int]] = [{i} for i in range(n)]
    for i, h in enumerate(inst.dep_heads):
        if h != 0:
            nbrs[i].add(h - 1)
            nbrs[h - 1].add(i)
    return tuple(tuple(sorted(s)) for s in nbrs)


def build_marked_dependency_graph(
    inst: Instance, marked: MarkedSequence
) -> tuple[tuple[int, ...], ...]:
    """Neighbor lists over the marked sequence.

    Original-token edges are carried over through the origin map; every
    marker token attaches to the first original token of its span; every
    node has a self-loop.
    """
    _check_tree(inst.dep_heads, inst.id)
    m = len(marked.tokens)
    pos_of = {o: p for p, o in enumerate(marked.origin_map) if o is not None}
    nbrs: list[set[int]] = [{p} for p in range(m)]
    for i, h in enumerate(inst.dep_heads):
        if h != 0:
            a, b = pos_of[i], pos_of[h - 1]
            nbrs[a].add(b)
            nbrs[b].add(a)
    for span in (inst.subj_span, inst.obj_span):
        first = pos_of[span[0]]
        for p in _marker_positions(marked, span, pos_of):
            nbrs[p].add(first)
            nbrs[first].add(p)
    return tuple(tuple(sorted(s)) for s in nbrs)


def _marker_positions(
    marked: MarkedSequence, span: tuple[int, int], pos_of: Mapping[int, int]
) -> list[int]:
    anchor = pos_of[span[0]] - OPEN_BLOCK_LEN
    close = pos_of[span[1]] + 1
    return list(range(anchor, anchor + OPEN_BLOCK_LEN)) + [close]


# ---------------------------------------------------------------------------
# Stratified fold splitting
# ---------------------------------------------------------------------------


def stratified_split(
    corpus: Sequence[Instance], n: int, seed: int
) -> FoldAssignment:
    """Split into n disjoint folds, stratified by relation.

    Within each relation the instances are shuffled by the seeded stream and
    dealt round-robin, so per-relation fold counts differ by at most one.
    """
    if n < 2:
        raise ConfigError("fold count must be at least 2")
    if n > len(corpus):
        raise ConfigError(
            f"fold count {n} exceeds corpus size {len(corpus)}"
        )
    rng = child_rng(seed, "split")
    by_rel: dict[str, list[str]] = {}
    for inst in corpus:
        by_rel.setdefault(inst.relation, []).append(inst.id)
    fold_of: dict[str, int] = {}
    offset = 0  # rotate the dealing start so short relations spread out
    for rel in sorted(by_rel):
        ids = by_rel[rel]
        order = rng.permutation(len(ids))
        for j, k in enumerate(order):
            fold_of[ids[int(k)]] = (offset + j) % n
        offset = (offset + len(ids)) % n
    return FoldAssignment(num_folds=n, fold_of=fold_of)

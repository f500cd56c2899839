"""Transition-probability feature vectors for the seven coherence models.

A column of a grid is read top to bottom; every window of ``n`` consecutive
cells is one transition.  The feature vector holds the relative frequency of
every possible transition over all columns that pass the saliency filter.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import ABSENT, Dialogue, Tagset
from .grid import GRID_MODELS, CellVocab, Grid, GridSpec, RowUnit, build_grid

MODEL_NAMES = (
    "T-Grid:role",
    "T-Grid:presence",
    "D-Grid:role",
    "D-Grid:DA",
    "Only-DAs",
    "T-Grid:presence + Only DAs",
    "T-Grid:role + Only DAs",
)

COMBINATIONS = {
    "T-Grid:presence + Only DAs": ("T-Grid:presence", "Only-DAs"),
    "T-Grid:role + Only DAs": ("T-Grid:role", "Only-DAs"),
}

MAX_N = 4


class FeatureError(ValueError):
    pass


def _fingerprint(payload) -> str:
    blob = json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TransitionVocabulary:
    """All ``n``-tuples over ``tokens``, in lexicographic order of ``tokens``."""

    tokens: tuple[str, ...]
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise FeatureError(f"transition length must be >= 2, got {self.n}")

    @property
    def size(self) -> int:
        return len(self.tokens) ** self.n

    def __len__(self) -> int:
        return self.size

    @property
    def transitions(self) -> list[tuple[str, ...]]:
        return list(itertools.product(self.tokens, repeat=self.n))

    def index(self, transition: Sequence[str]) -> int:
        pos = {t: i for i, t in enumerate(self.tokens)}
        idx = 0
        for tok in transition:
            idx = idx * len(self.tokens) + pos[tok]
        return idx

    @property
    def fingerprint(self) -> str:
        return _fingerprint({"tokens": list(self.tokens), "n": self.n})


def transition_vocabulary(cell_vocab: CellVocab, n: int, tagset: Tagset | None = None,
                          include_absent: bool = True) -> TransitionVocabulary:
    """Vocabulary for one cell type.  ``include_absent=False`` is the Only-DAs case."""
    cell_vocab = CellVocab(cell_vocab)
    if cell_vocab is CellVocab.ROLE:
        tokens = ("S", "O", "X", ABSENT)
    elif cell_vocab is CellVocab.PRESENCE:
        tokens = ("X", ABSENT)
    else:
        if tagset is None:
            raise FeatureError("DA vocabulary needs a tagset")
        tokens = tagset.tags + ((ABSENT,) if include_absent else ())
    return TransitionVocabulary(tokens, n)


@dataclass(frozen=True)
class FeatureSpec:
    model_name: str
    n: int = 2
    saliency: int = 1
    tagset: Tagset | None = None

    def __post_init__(self):
        if self.model_name not in MODEL_NAMES:
            raise FeatureError(f"unknown model {self.model_name!r}; expected one of {MODEL_NAMES}")
        if not 2 <= self.n <= MAX_N:
            raise FeatureError(f"n must be in [2, {MAX_N}], got {self.n}")
        if self.saliency < 1:
            raise FeatureError(f"saliency must be >= 1, got {self.saliency}")
        if self.tagset is None and any(GRID_MODELS[c].cell_vocab is CellVocab.DA for c in self.components):
            raise FeatureError(f"{self.model_name} needs a tagset")

    @property
    def tagset_id(self) -> str | None:
        return self.tagset.tagset_id if self.tagset else None

    @property
    def components(self) -> tuple[str, ...]:
        return COMBINATIONS.get(self.model_name, (self.model_name,))

    def grid_spec(self, component: str) -> GridSpec:
        base = GRID_MODELS[component]
        if base.cell_vocab is CellVocab.DA:
            return GridSpec(base.row_unit, base.cell_vocab, base.only_das, self.tagset_id)
        return base

    def vocabularies(self) -> tuple[TransitionVocabulary, ...]:
        return tuple(_vocab_for(self.grid_spec(c), self.n, self.tagset) for c in self.components)

    @property
    def size(self) -> int:
        return sum(v.size for v in self.vocabularies())

    @property
    def fingerprint(self) -> str:
        """Identifies model name plus the vocabularies that fix the vector layout."""
        return _fingerprint({"model": self.model_name, "vocabs": [v.fingerprint for v in self.vocabularies()]})


def _vocab_for(spec: GridSpec, n: int, tagset: Tagset | None) -> TransitionVocabulary:
    return transition_vocabulary(spec.cell_vocab, n, tagset, include_absent=not spec.only_das)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    vocab_fingerprint: str
    model_name: str

    def __len__(self) -> int:
        return len(self.values)

    def same_values(self, other: "FeatureVector") -> bool:
        return self.vocab_fingerprint == other.vocab_fingerprint and np.array_equal(self.values, other.values)


def _encode_cells(cells: Sequence[Sequence[str]], width: int, vocab: TransitionVocabulary) -> np.ndarray:
    pos = {t: i for i, t in enumerate(vocab.tokens)}
    try:
        return np.array([[pos[c] for c in row] for row in cells], dtype=np.int64).reshape(len(cells), width)
    except KeyError as exc:
        raise FeatureError(f"cell {exc.args[0]!r} is not in the transition vocabulary") from None


def _salient_columns(codes: np.ndarray, vocab: TransitionVocabulary, saliency: int) -> np.ndarray:
    """Keep columns whose entity occupies at least ``saliency`` rows."""
    absent = vocab.tokens.index(ABSENT) if ABSENT in vocab.tokens else -1
    occupied = (codes != absent).sum(axis=0)
    return codes[:, occupied >= saliency]


def salient_columns(g: Grid, saliency: int) -> tuple[str, ...]:
    """Labels of the columns occupying at least ``saliency`` rows."""
    return tuple(c for j, c in enumerate(g.columns)
                 if sum(cell != ABSENT for cell in g.column(j)) >= saliency)


def _transition_probs(codes: np.ndarray, vocab: TransitionVocabulary) -> np.ndarray:
    """Relative frequency of every length-n window over all columns of ``codes``."""
    n, base = vocab.n, len(vocab.tokens)
    rows, cols = codes.shape
    windows = rows - n + 1
    if windows <= 0 or cols == 0:
        return np.zeros(vocab.size)
    idx = np.zeros((windows, cols), dtype=np.int64)
    for k in range(n):
        idx = idx * base + codes[k:k + windows]
    counts = np.bincount(idx.ravel(), minlength=vocab.size)
    return counts / float(windows * cols)


def extract_features(g: Grid, spec: FeatureSpec) -> FeatureVector:
    """Feature vector of a single grid under a single-grid model."""
    if spec.model_name in COMBINATIONS:
        raise FeatureError(f"{spec.model_name} concatenates two grids; use featurize_dialogue")
    vocab = _vocab_for(spec.grid_spec(spec.model_name), spec.n, spec.tagset)
    codes = _encode_cells(g.cells, len(g.columns), vocab)
    codes = _salient_columns(codes, vocab, spec.saliency)
    return FeatureVector(_transition_probs(codes, vocab), spec.fingerprint, spec.model_name)


@dataclass(frozen=True, eq=False)
class _EncodedGrid:
    codes: np.ndarray       # rows x salient columns
    turn_rows: tuple[np.ndarray, ...]   # row indices owned by each turn


@dataclass(frozen=True, eq=False)
class EncodedDialogue:
    """Integer-coded grids of one dialogue, reusable for any turn reordering."""

    dialogue_id: str
    n_turns: int
    parts: tuple[_EncodedGrid, ...]


class Featurizer:
    """Featurizes dialogues, and turn reorderings of them, under one model.

    Reorderings permute whole turns, so each grid is encoded once and its rows
    are shuffled per order; column order does not affect the vector.
    """

    def __init__(self, spec: FeatureSpec):
        self.spec = spec
        self.grid_specs = tuple(spec.grid_spec(c) for c in spec.components)
        self.vocabs = spec.vocabularies()
        self.fingerprint = spec.fingerprint
        self.size = sum(v.size for v in self.vocabs)

    def encode(self, d: Dialogue) -> EncodedDialogue:
        parts = []
        for gspec, vocab in zip(self.grid_specs, self.vocabs):
            g = build_grid(d, gspec)
            codes = _encode_cells(g.cells, len(g.columns), vocab)
            codes = _salient_columns(codes, vocab, self.spec.saliency)
            if gspec.row_unit is RowUnit.TURN:
                turn_rows = tuple(np.array([i]) for i in range(len(d.turns)))
            else:
                bounds = np.cumsum([0] + [len(t.units) for t in d.turns])
                turn_rows = tuple(np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:]))
            parts.append(_EncodedGrid(codes, turn_rows))
        return EncodedDialogue(d.dialogue_id, len(d.turns), tuple(parts))

    def vector(self, enc: EncodedDialogue | Dialogue, order: Sequence[int] | None = None) -> FeatureVector:
        if isinstance(enc, Dialogue):
            enc = self.encode(enc)
        pieces = []
        for part, vocab in zip(enc.parts, self.vocabs):
            codes = part.codes
            if order is not None:
                codes = codes[np.concatenate([part.turn_rows[i] for i in order])] if len(order) else codes
            pieces.append(_transition_probs(codes, vocab))
        values = pieces[0] if len(pieces) == 1 else np.concatenate(pieces)
        return FeatureVector(values, self.fingerprint, self.spec.model_name)

    def matrix(self, enc: EncodedDialogue | Dialogue, orders: Iterable[Sequence[int]]) -> np.ndarray:
        """Stacked feature values, one row per turn order."""
        if isinstance(enc, Dialogue):
            enc = self.encode(enc)
        rows = [self.vector(enc, o).values for o in orders]
        return np.vstack(rows) if rows else np.zeros((0, self.size))


def featurize_dialogue(d: Dialogue, spec: FeatureSpec) -> FeatureVector:
    """Feature vector of a dialogue; combination models concatenate their parts."""
    return Featurizer(spec).vector(d)


# --- textual dump ----------------------------------------------------------

def format_feature_record(dialogue_id: str, v: FeatureVector) -> str:
    nz = np.flatnonzero(v.values)
    pairs = " ".join(f"{i}:{v.values[i]:.12g}" for i in nz)
    return f"{dialogue_id}\t{v.model_name}\t{v.vocab_fingerprint}\t{pairs}"


def parse_feature_record(line: str, size: int) -> tuple[str, FeatureVector]:
    dialogue_id, model_name, fp, pairs = line.rstrip("\n").split("\t")
    values = np.zeros(size)
    for item in pairs.split():
        i, val = item.split(":")
        values[int(i)] = float(val)
    return dialogue_id, FeatureVector(values, fp, model_name)

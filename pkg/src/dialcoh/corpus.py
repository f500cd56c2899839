"""Annotated dialogue data model, JSONL corpus I/O, validation and splits.

Input arrives pre-annotated: every DA unit carries its tag and its entity
mentions (lemma plus grammatical role).  Nothing here parses raw text.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ROLES = ("S", "O", "X")
ABSENT = "-"
SPLIT_PARTS = ("train", "test", "dev")


class CorpusError(ValueError):
    """Raised for malformed or invalid corpus input."""


@dataclass(frozen=True)
class EntityMention:
    entity_id: str
    role: str
    surface: str = ""


@dataclass(frozen=True)
class DAUnit:
    da_tag: str
    text: str = ""
    mentions: tuple[EntityMention, ...] = ()


@dataclass(frozen=True)
class Turn:
    speaker: str
    units: tuple[DAUnit, ...]

    @property
    def mentions(self) -> tuple[EntityMention, ...]:
        """All mentions of all units, pooled in reading order."""
        return tuple(m for u in self.units for m in u.mentions)


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    turns: tuple[Turn, ...]
    tagset_id: str

    @property
    def units(self) -> tuple[DAUnit, ...]:
        return tuple(u for t in self.turns for u in t.units)

    @property
    def da_sequence(self) -> tuple[str, ...]:
        return tuple(u.da_tag for u in self.units)

    def entity_ids(self) -> tuple[str, ...]:
        """Distinct entity ids in order of first appearance."""
        seen: dict[str, None] = {}
        for unit in self.units:
            for m in unit.mentions:
                seen.setdefault(m.entity_id, None)
        return tuple(seen)

    def reorder(self, order: Sequence[int]) -> "Dialogue":
        """Return a copy whose turns follow ``order`` (a permutation of turn indices)."""
        if sorted(order) != list(range(len(self.turns))):
            raise ValueError(f"not a permutation of {len(self.turns)} turns: {order!r}")
        return replace(self, turns=tuple(self.turns[i] for i in order))


@dataclass(frozen=True)
class Tagset:
    tagset_id: str
    tags: tuple[str, ...]

    def __post_init__(self):
        if not self.tags:
            raise CorpusError(f"tagset {self.tagset_id!r} is empty")
        if len(set(self.tags)) != len(self.tags):
            raise CorpusError(f"tagset {self.tagset_id!r} has duplicate tags")
        if ABSENT in self.tags:
            raise CorpusError(f"tagset {self.tagset_id!r} may not contain {ABSENT!r}")

    def __contains__(self, tag) -> bool:
        return tag in self.tags

    def __len__(self) -> int:
        return len(self.tags)


@dataclass(frozen=True)
class Violation:
    code: str
    dialogue_id: str
    message: str
    turn: int | None = None
    unit: int | None = None

    def __str__(self) -> str:
        where = self.dialogue_id
        if self.turn is not None:
            where += f" turn {self.turn}"
        if self.unit is not None:
            where += f" unit {self.unit}"
        return f"{self.code} [{where}]: {self.message}"


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[Dialogue, ...]
    tagset: Tagset
    split: Mapping[str, tuple[str, ...]] | None = field(default=None, compare=True)

    def __len__(self) -> int:
        return len(self.dialogues)

    def __iter__(self):
        return iter(self.dialogues)

    def ids(self) -> tuple[str, ...]:
        return tuple(d.dialogue_id for d in self.dialogues)

    def get(self, dialogue_id: str) -> Dialogue:
        for d in self.dialogues:
            if d.dialogue_id == dialogue_id:
                return d
        raise KeyError(dialogue_id)

    def part(self, name: str) -> "Corpus":
        """Sub-corpus holding the dialogues of one split part."""
        if self.split is None:
            raise CorpusError("corpus has no split")
        wanted = set(self.split[name])
        return Corpus(tuple(d for d in self.dialogues if d.dialogue_id in wanted), self.tagset)


def normalize_entity(raw: str) -> str:
    return raw.strip().lower()


def validate_dialogue(d: Dialogue, tagset: Tagset) -> list[Violation]:
    """Check a dialogue against the data-model invariants.

    Violations are returned, never raised.  Codes: ``TAGSET_MISMATCH``,
    ``NO_TURNS``, ``EMPTY_TURN``, ``UNKNOWN_TAG``, ``EMPTY_ENTITY``, ``BAD_ROLE``.
    """
    out = []
    did = d.dialogue_id
    if d.tagset_id != tagset.tagset_id:
        out.append(Violation("TAGSET_MISMATCH", did,
                             f"dialogue uses tagset {d.tagset_id!r}, expected {tagset.tagset_id!r}"))
    if not d.turns:
        out.append(Violation("NO_TURNS", did, "dialogue has no turns"))
    for ti, turn in enumerate(d.turns):
        if not turn.units:
            out.append(Violation("EMPTY_TURN", did, "turn has no DA units", turn=ti))
        for ui, unit in enumerate(turn.units):
            if unit.da_tag not in tagset:
                out.append(Violation("UNKNOWN_TAG", did, f"unknown DA tag {unit.da_tag!r}",
                                     turn=ti, unit=ui))
            for m in unit.mentions:
                if not m.entity_id.strip():
                    out.append(Violation("EMPTY_ENTITY", did, "empty entity id", turn=ti, unit=ui))
                if m.role not in ROLES:
                    out.append(Violation("BAD_ROLE", did, f"role {m.role!r} not in S/O/X",
                                         turn=ti, unit=ui))
    return out


# --- reading ---------------------------------------------------------------

def load_tagset(path: str | Path) -> Tagset:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: malformed tagset JSON: {exc}") from exc
    try:
        return Tagset(str(raw["tagset_id"]), tuple(str(t) for t in raw["tags"]))
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{path}: tagset needs 'tagset_id' and 'tags'") from exc


def _dialogue_from_obj(obj: dict) -> Dialogue:
    turns = []
    for t in obj["turns"]:
        units = []
        for u in t["units"]:
            mentions = tuple(
                EntityMention(normalize_entity(str(m["entity"])), str(m["role"]), str(m.get("surface", "")))
                for m in u.get("mentions", ())
            )
            units.append(DAUnit(str(u["da_tag"]), str(u.get("text", "")), mentions))
        turns.append(Turn(str(t.get("speaker", "")), tuple(units)))
    return Dialogue(str(obj["dialogue_id"]), tuple(turns), str(obj["tagset_id"]))


def iter_dialogues(stream: IO[bytes] | IO[str] | bytes | str) -> Iterator[tuple[int, Dialogue]]:
    """Yield ``(line_number, dialogue)`` without validating dialogue content.

    Raises :class:`CorpusError` for lines that are not JSON or miss schema keys.
    """
    if isinstance(stream, (bytes, str)):
        stream = io.BytesIO(stream.encode("utf-8") if isinstance(stream, str) else stream)
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusError(f"line {lineno}: not UTF-8: {exc}") from exc
        if not line.strip():
            continue
        try:
            yield lineno, _dialogue_from_obj(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON: {exc.msg}") from exc
        except (KeyError, TypeError, AttributeError) as exc:
            raise CorpusError(f"line {lineno}: does not match the corpus schema ({exc!r})") from exc


def parse_corpus(stream: IO[bytes] | IO[str] | bytes | str, tagset: Tagset) -> Corpus:
    """Parse a JSONL corpus and validate every dialogue against ``tagset``.

    Raises :class:`CorpusError` on the first malformed line, invalid
    dialogue or duplicate ``dialogue_id``.
    """
    dialogues = []
    seen = set()
    for lineno, d in iter_dialogues(stream):
        violations = validate_dialogue(d, tagset)
        if violations:
            raise CorpusError(f"line {lineno}: " + "; ".join(map(str, violations)))
        if d.dialogue_id in seen:
            raise CorpusError(f"line {lineno}: duplicate dialogue_id {d.dialogue_id!r}")
        seen.add(d.dialogue_id)
        dialogues.append(d)
    return Corpus(tuple(dialogues), tagset)


def read_corpus(path: str | Path, tagset: Tagset) -> Corpus:
    with open(path, "rb") as fh:
        return parse_corpus(fh, tagset)


# --- writing ---------------------------------------------------------------

def dialogue_to_obj(d: Dialogue) -> dict:
    return {
        "dialogue_id": d.dialogue_id,
        "tagset_id": d.tagset_id,
        "turns": [
            {
                "speaker": t.speaker,
                "units": [
                    {
                        "da_tag": u.da_tag,
                        "text": u.text,
                        "mentions": [
                            {"entity": m.entity_id, "role": m.role, "surface": m.surface}
                            for m in u.mentions
                        ],
                    }
                    for u in t.units
                ],
            }
            for t in d.turns
        ],
    }


def dumps_canonical(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def serialize_corpus(corpus: Corpus | Iterable[Dialogue]) -> bytes:
    """Canonical JSONL bytes: schema key order, no extra whitespace, LF endings."""
    lines = [dumps_canonical(dialogue_to_obj(d)) + "\n" for d in corpus]
    return "".join(lines).encode("utf-8")


def write_corpus(path: str | Path, corpus: Corpus | Iterable[Dialogue]) -> None:
    Path(path).write_bytes(serialize_corpus(corpus))


def serialize_tagset(tagset: Tagset) -> bytes:
    return (dumps_canonical({"tagset_id": tagset.tagset_id, "tags": list(tagset.tags)}) + "\n").encode()


# --- splits ----------------------------------------------------------------

def _split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    raw = [r * n for r in ratios]
    sizes = [math.floor(x) for x in raw]
    # largest remainder; earlier parts win exact ties
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_corpus(corpus: Corpus, ratios: Sequence[float], seed: int, overwrite: bool = False) -> Corpus:
    """Partition dialogue ids into train/test/dev.

    The result depends only on the set of ids, ``ratios`` and ``seed``.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"ratios must be three non-negative fractions summing to 1, got {ratios!r}")
    if not corpus.dialogues:
        raise CorpusError("cannot split an empty corpus")
    if corpus.split is not None and not overwrite:
        raise CorpusError("corpus already has a split; pass overwrite=True to replace it")
    ids = sorted(corpus.ids())
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    sizes = _split_sizes(len(ids), ratios)
    parts, start = {}, 0
    for name, size in zip(SPLIT_PARTS, sizes):
        parts[name] = tuple(sorted(shuffled[start:start + size]))
        start += size
    logger.info("split %d dialogues into %s", len(ids), {k: len(v) for k, v in parts.items()})
    return replace(corpus, split=parts)

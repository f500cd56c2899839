"""Discrimination and insertion tasks: instance generation, training pairs, metrics.

All randomness is derived from ``(seed, dialogue_id, purpose)`` so task sets
never depend on the model being evaluated and can be written once as a bundle
and shared between runs.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import Corpus, Dialogue
from .features import MODEL_NAMES, FeatureSpec, Featurizer
from .ranker import PreferencePair, RankingModel, RankerError

logger = logging.getLogger(__name__)

TIE_POLICY = "ties-count-against-model"
RANDOM_ROW = "Random"


class TaskError(ValueError):
    pass


def derived_rng(seed: int, *keys) -> np.random.Generator:
    digest = hashlib.sha256(json.dumps([seed, *keys]).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


# --- instances -------------------------------------------------------------

@dataclass(frozen=True)
class PermutationSet:
    dialogue_id: str
    permutations: tuple[tuple[int, ...], ...]
    seed: int
    capped: bool = False


@dataclass(frozen=True)
class InsertionInstance:
    dialogue_id: str
    removed_turn_index: int
    candidate_positions: tuple[int, ...]
    seed: int

    def order(self, slot: int, n_turns: int) -> tuple[int, ...]:
        """Turn order after re-inserting the removed turn at ``slot``."""
        rest = [i for i in range(n_turns) if i != self.removed_turn_index]
        return tuple(rest[:slot] + [self.removed_turn_index] + rest[slot:])


def generate_permutations(d: Dialogue, k: int = 20, seed: int = 0) -> PermutationSet:
    m = len(d.turns)
    if m < 2:
        raise TaskError(f"{d.dialogue_id}: need at least 2 turns to permute, got {m}")
    identity = tuple(range(m))
    available = math.factorial(m) - 1
    if available <= k:
        perms = tuple(p for p in itertools.permutations(range(m)) if p != identity)
        return PermutationSet(d.dialogue_id, perms, seed, capped=available < k)
    rng = derived_rng(seed, d.dialogue_id, "permute")
    seen, perms = {identity}, []
    while len(perms) < k:
        p = tuple(int(i) for i in rng.permutation(m))
        if p not in seen:
            seen.add(p)
            perms.append(p)
    return PermutationSet(d.dialogue_id, tuple(perms), seed)


def generate_insertions(d: Dialogue, n_turns: int = 10, n_positions: int = 10,
                        seed: int = 0) -> list[InsertionInstance]:
    """Pick turns to remove and candidate slots for each; the true slot is always a candidate.

    With ``m`` turns, removing one leaves ``m`` slots (gaps plus both ends);
    slot ``s`` places the turn before the ``s``-th remaining turn.
    """
    m = len(d.turns)
    if m < 2:
        raise TaskError(f"{d.dialogue_id}: need at least 2 turns for insertion, got {m}")
    rng = derived_rng(seed, d.dialogue_id, "insert")
    picked = rng.choice(m, size=min(n_turns, m), replace=False)
    out = []
    for turn in picked:
        turn = int(turn)
        others = [s for s in range(m) if s != turn]
        extra = rng.choice(others, size=min(n_positions, m) - 1, replace=False)
        slots = tuple(sorted([turn] + [int(s) for s in extra]))
        out.append(InsertionInstance(d.dialogue_id, turn, slots, seed))
    return out


def generate_task_bundle(corpus: Corpus, k: int = 20, n_turns: int = 10, n_positions: int = 10,
                         seed: int = 0) -> tuple[dict[str, PermutationSet], dict[str, list[InsertionInstance]]]:
    perms, inserts = {}, {}
    for d in corpus:
        if len(d.turns) < 2:
            logger.warning("%s has %d turn(s); left out of both tasks", d.dialogue_id, len(d.turns))
            continue
        perms[d.dialogue_id] = generate_permutations(d, k, seed)
        inserts[d.dialogue_id] = generate_insertions(d, n_turns, n_positions, seed)
    return perms, inserts


def _task_dialogues(corpus: Corpus, instances: Mapping[str, object]) -> list[Dialogue]:
    out = []
    for d in corpus:
        if d.dialogue_id in instances:
            out.append(d)
        elif len(d.turns) >= 2:
            raise TaskError(f"no task instances for dialogue {d.dialogue_id!r}")
    return out


# --- training pairs --------------------------------------------------------

def build_training_pairs(corpus: Corpus, perms: Mapping[str, PermutationSet],
                         spec: FeatureSpec) -> list[PreferencePair]:
    """One (original, permuted) pair per permutation of every dialogue."""
    featurizer = Featurizer(spec)
    pairs = []
    for d in _task_dialogues(corpus, perms):
        enc = featurizer.encode(d)
        original = featurizer.vector(enc)
        for p in perms[d.dialogue_id].permutations:
            pairs.append(PreferencePair(original, featurizer.vector(enc, p), d.dialogue_id))
    degenerate = sum(p.degenerate for p in pairs)
    if degenerate:
        logger.info("%s: %d of %d pairs have identical features", spec.model_name, degenerate, len(pairs))
    return pairs


# --- scorers ---------------------------------------------------------------

class Scorer(Protocol):
    name: str

    def score_orders(self, d: Dialogue, orders: Sequence[tuple[int, ...]], key: str) -> np.ndarray:
        """Score each turn order of ``d``; ``key`` identifies the task instance."""


class TrainedScorer:
    def __init__(self, model: RankingModel, spec: FeatureSpec):
        self.featurizer = Featurizer(spec)
        if model.vocab_fingerprint != self.featurizer.fingerprint:
            raise RankerError(f"model {model.model_name} fingerprint does not match {spec.model_name} features")
        self.model = model
        self.name = spec.model_name
        self._cache: tuple[str, object] | None = None

    def score_orders(self, d, orders, key):
        if self._cache is None or self._cache[0] != d.dialogue_id:
            self._cache = (d.dialogue_id, self.featurizer.encode(d))
        return self.featurizer.matrix(self._cache[1], orders) @ self.model.weights


class RandomScorer:
    """Uniform random scores, reproducible per task instance."""

    name = RANDOM_ROW

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score_orders(self, d, orders, key):
        return derived_rng(self.seed, "random-scorer", key).random(len(orders))


class OracleScorer:
    """Scores the original turn order 1 and everything else 0."""

    name = "Oracle"

    def score_orders(self, d, orders, key):
        identity = tuple(range(len(d.turns)))
        return np.array([1.0 if tuple(o) == identity else 0.0 for o in orders])


# --- metrics ---------------------------------------------------------------

def rank_of(scores: Sequence[float], target: int) -> int:
    """1-based rank of ``target`` under a stable descending sort of ``scores``."""
    s = np.asarray(scores, dtype=float)
    return int(1 + np.sum(s > s[target]) + np.sum(s[:target] == s[target]))


@dataclass
class DiscriminationResult:
    accuracy: float
    mrr: float
    p_at_1: float
    n_pairs: int
    n_sets: int
    pair_wins: list[bool] = field(repr=False, default_factory=list)
    reciprocal_ranks: list[float] = field(repr=False, default_factory=list)


@dataclass
class InsertionResult:
    avg_p_at_1: float
    n_instances: int
    n_dialogues: int
    dialogue_p_at_1: list[float] = field(repr=False, default_factory=list)


def evaluate_discrimination(scorer: Scorer, corpus: Corpus,
                            perms: Mapping[str, PermutationSet]) -> DiscriminationResult:
    """Pairwise accuracy (micro over pairs) plus MRR and P@1 of the original among its permutations.

    The original is placed last among candidates, so ties always rank it
    below the permutations it ties with; tied pairs count as failures.
    """
    wins, rrs = [], []
    for d in _task_dialogues(corpus, perms):
        pset = perms[d.dialogue_id]
        orders = list(pset.permutations) + [tuple(range(len(d.turns)))]
        scores = np.asarray(scorer.score_orders(d, orders, f"discr:{d.dialogue_id}"), dtype=float)
        wins.extend(bool(x) for x in scores[-1] > scores[:-1])
        rrs.append(1.0 / rank_of(scores, len(orders) - 1))
    if not rrs:
        raise TaskError("no dialogues to evaluate")
    rr = np.array(rrs)
    return DiscriminationResult(
        accuracy=100.0 * float(np.mean(wins)),
        mrr=100.0 * float(rr.mean()),
        p_at_1=100.0 * float(np.mean(rr == 1.0)),
        n_pairs=len(wins),
        n_sets=len(rrs),
        pair_wins=wins,
        reciprocal_ranks=rrs,
    )


def evaluate_insertion(scorer: Scorer, corpus: Corpus,
                       instances: Mapping[str, Sequence[InsertionInstance]]) -> InsertionResult:
    """P@1 of the true slot, averaged per dialogue, then over dialogues."""
    per_dialogue, count = [], 0
    for d in _task_dialogues(corpus, instances):
        hits = []
        for j, inst in enumerate(instances[d.dialogue_id]):
            slots = [s for s in inst.candidate_positions if s != inst.removed_turn_index]
            slots.append(inst.removed_turn_index)
            orders = [inst.order(s, len(d.turns)) for s in slots]
            scores = scorer.score_orders(d, orders, f"ins:{d.dialogue_id}:{j}")
            hits.append(rank_of(scores, len(orders) - 1) == 1)
        if hits:
            per_dialogue.append(float(np.mean(hits)))
            count += len(hits)
    if not per_dialogue:
        raise TaskError("no insertion instances to evaluate")
    return InsertionResult(100.0 * float(np.mean(per_dialogue)), count, len(per_dialogue), per_dialogue)


# --- bundle files ----------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_permutations(path: str | Path, perms: Mapping[str, PermutationSet], config: dict | None = None) -> None:
    lines = [_dump({"type": "config", "config": config or {}})]
    for p in perms.values():
        lines.append(_dump({"type": "permutation_set", "dialogue_id": p.dialogue_id, "seed": p.seed,
                            "capped": p.capped, "permutations": [list(x) for x in p.permutations]}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_insertions(path: str | Path, inserts: Mapping[str, Sequence[InsertionInstance]],
                     config: dict | None = None) -> None:
    lines = [_dump({"type": "config", "config": config or {}})]
    for group in inserts.values():
        for i in group:
            lines.append(_dump({"type": "insertion_instance", "dialogue_id": i.dialogue_id, "seed": i.seed,
                                "removed_turn_index": i.removed_turn_index,
                                "candidate_positions": list(i.candidate_positions)}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _records(path: str | Path, kind: str) -> Iterable[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TaskError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
            if rec.get("type") == kind:
                yield rec


def read_permutations(path: str | Path) -> dict[str, PermutationSet]:
    return {r["dialogue_id"]: PermutationSet(r["dialogue_id"], tuple(tuple(p) for p in r["permutations"]),
                                             r["seed"], r.get("capped", False))
            for r in _records(path, "permutation_set")}


def read_insertions(path: str | Path) -> dict[str, list[InsertionInstance]]:
    out: dict[str, list[InsertionInstance]] = {}
    for r in _records(path, "insertion_instance"):
        out.setdefault(r["dialogue_id"], []).append(
            InsertionInstance(r["dialogue_id"], r["removed_turn_index"], tuple(r["candidate_positions"]), r["seed"]))
    return out


# --- reports ---------------------------------------------------------------

@dataclass
class EvaluationReport:
    dataset: str
    models: dict[str, dict] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    tie_policy: str = TIE_POLICY
    config: dict = field(default_factory=dict)
    outcomes: dict[str, dict] = field(default_factory=dict, repr=False)

    def add(self, name: str, discr: DiscriminationResult, ins: InsertionResult) -> None:
        counts = {"discrimination_sets": discr.n_sets, "discrimination_pairs": discr.n_pairs,
                  "insertion_instances": ins.n_instances, "insertion_dialogues": ins.n_dialogues}
        if self.counts and self.counts != counts:
            raise TaskError(f"{name} was evaluated on different instances: {counts} vs {self.counts}")
        self.counts = counts
        self.models[name] = {
            "discrimination": {"accuracy": discr.accuracy, "mrr": discr.mrr, "p_at_1": discr.p_at_1},
            "insertion": {"avg_p_at_1": ins.avg_p_at_1},
        }
        self.outcomes[name] = {
            "pair_wins": [int(x) for x in discr.pair_wins],
            "reciprocal_ranks": discr.reciprocal_ranks,
            "insertion_dialogue_p_at_1": ins.dialogue_p_at_1,
        }

    def to_json(self) -> dict:
        return {"dataset": self.dataset, "tie_policy": self.tie_policy, "counts": self.counts,
                "models": self.models, "config": self.config, "outcomes": self.outcomes}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "EvaluationReport":
        return cls(obj["dataset"], obj["models"], obj["counts"], obj.get("tie_policy", TIE_POLICY),
                   obj.get("config", {}), obj.get("outcomes", {}))


def format_table(reports: Sequence[EvaluationReport]) -> str:
    """Models down, datasets across, four metrics per dataset."""
    names: list[str] = []
    for r in reports:
        for name in r.models:
            if name not in names:
                names.append(name)
    order = {n: i for i, n in enumerate((RANDOM_ROW,) + MODEL_NAMES)}
    names.sort(key=lambda n: order.get(n, len(order)))
    label_w = max([len(n) for n in names] + [len("Model")])
    block_w = 30

    top = [" " * label_w] + [f"{r.dataset:^{block_w}}" for r in reports]
    mid = [" " * label_w] + [f"{'Discr.':^21} {'Ins.':^8}" for _ in reports]
    head = ["Model".ljust(label_w)] + [f"{'Acc.':>6} {'MRR':>6} {'P@1':>6}  {'Av. P@1':>8}" for _ in reports]
    lines = [" | ".join(top), " | ".join(mid), " | ".join(head)]
    lines.append("-" * len(lines[-1]))
    for name in names:
        cells = [name.ljust(label_w)]
        for r in reports:
            m = r.models.get(name)
            if m is None:
                cells.append(f"{'n/a':>6} {'n/a':>6} {'n/a':>6}  {'n/a':>8}")
                continue
            dm, im = m["discrimination"], m["insertion"]
            cells.append(f"{dm['accuracy']:6.2f} {dm['mrr']:6.2f} {dm['p_at_1']:6.2f}  {im['avg_p_at_1']:8.2f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"

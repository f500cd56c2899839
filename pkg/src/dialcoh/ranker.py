"""Linear pairwise-preference ranker (ranking SVM on difference vectors).

Training minimizes

    0.5 * ||w||^2 + C * sum_i max(0, 1 - w . (x_pref_i - x_other_i))

with full-batch subgradient steps of size 1/t.  A step that would raise the
objective is halved until it does not (or skipped), so the recorded objective
trace never increases.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureVector

logger = logging.getLogger(__name__)

MODEL_FORMAT = "dialcoh-ranking-model 1"
_MAX_HALVINGS = 40


class RankerError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PreferencePair:
    preferred: FeatureVector
    other: FeatureVector
    group_id: str

    def __post_init__(self):
        if (self.preferred.vocab_fingerprint != self.other.vocab_fingerprint
                or self.preferred.model_name != self.other.model_name):
            raise RankerError(f"pair {self.group_id!r} mixes feature layouts")

    @property
    def degenerate(self) -> bool:
        """True when both sides have identical features (the pair carries no signal)."""
        return np.array_equal(self.preferred.values, self.other.values)


@dataclass(frozen=True)
class Hyperparams:
    c: float = 1.0
    epochs: int = 300
    learning_rate_schedule: str = "1/t"
    seed: int = 0


@dataclass(frozen=True, eq=False)
class RankingModel:
    weights: np.ndarray
    vocab_fingerprint: str
    model_name: str
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    training_stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def objective(w: np.ndarray, diffs: np.ndarray, c: float) -> float:
    hinge = np.maximum(0.0, 1.0 - diffs @ w)
    return 0.5 * float(w @ w) + c * float(hinge.sum())


def _difference_matrix(pairs: Sequence[PreferencePair]) -> np.ndarray:
    if not pairs:
        raise RankerError("no training pairs")
    fps = {p.preferred.vocab_fingerprint for p in pairs}
    if len(fps) != 1:
        raise RankerError(f"pairs come from {len(fps)} different feature layouts")
    diffs = np.vstack([p.preferred.values - p.other.values for p in pairs]).astype(np.float64)
    if not np.all(np.isfinite(diffs)):
        raise RankerError("non-finite feature values")
    return diffs


def train_ranker(pairs: Sequence[PreferencePair], hyperparams: Hyperparams = Hyperparams()) -> RankingModel:
    diffs = _difference_matrix(pairs)
    if hyperparams.learning_rate_schedule != "1/t":
        raise RankerError(f"unsupported schedule {hyperparams.learning_rate_schedule!r}")
    c = hyperparams.c
    w = np.zeros(diffs.shape[1])
    obj = objective(w, diffs, c)
    trace = [obj]
    for t in range(1, hyperparams.epochs + 1):
        active = diffs @ w < 1.0
        grad = w - c * diffs[active].sum(axis=0)
        step = 1.0 / t
        for _ in range(_MAX_HALVINGS):
            cand = w - step * grad
            cand_obj = objective(cand, diffs, c)
            if cand_obj <= obj:
                w, obj = cand, cand_obj
                break
            step *= 0.5
        trace.append(obj)

    margins = diffs @ w
    degenerate = np.all(diffs == 0.0, axis=1)
    stats = {
        "final_objective": obj,
        "pair_violations": int(np.sum((margins <= 0.0) & ~degenerate)),
        "degenerate_pairs": int(degenerate.sum()),
        "pairs": len(pairs),
        "pairwise_accuracy": float(np.mean(margins > 0.0)),
        "objective_trace": trace,
    }
    logger.info("trained %s on %d pairs: objective %.6g, %d violations",
                pairs[0].preferred.model_name, len(pairs), obj, stats["pair_violations"])
    return RankingModel(w, pairs[0].preferred.vocab_fingerprint, pairs[0].preferred.model_name,
                        hyperparams, stats)


def _check(m: RankingModel, v: FeatureVector) -> None:
    if v.vocab_fingerprint != m.vocab_fingerprint:
        raise RankerError(f"feature fingerprint {v.vocab_fingerprint} does not match model {m.vocab_fingerprint}")


def score(m: RankingModel, v: FeatureVector) -> float:
    _check(m, v)
    return float(m.weights @ v.values)


@dataclass(frozen=True)
class RankEntry:
    index: int
    score: float
    tied: bool


def rank_scores(scores: Sequence[float]) -> list[RankEntry]:
    """Stable descending sort; ``tied`` marks entries sharing their score with another."""
    scores = [float(s) for s in scores]
    counts: dict[float, int] = {}
    for s in scores:
        counts[s] = counts.get(s, 0) + 1
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return [RankEntry(i, scores[i], counts[scores[i]] > 1) for i in order]


def rank(m: RankingModel, candidates: Sequence[FeatureVector]) -> list[RankEntry]:
    if not candidates:
        raise RankerError("no candidates to rank")
    return rank_scores([score(m, v) for v in candidates])


# --- model files -----------------------------------------------------------

def save_model(m: RankingModel, path: str | Path, config: dict | None = None) -> None:
    stats = {k: v for k, v in m.training_stats.items() if k != "objective_trace"}
    header = {
        "model_name": m.model_name,
        "fingerprint": m.vocab_fingerprint,
        "hyperparams": asdict(m.hyperparams),
        "seed": m.hyperparams.seed,
        "meta": m.meta,
        "training_stats": stats,
        "config": config or {},
    }
    lines = [MODEL_FORMAT]
    for key, value in header.items():
        lines.append(f"{key}: {json.dumps(value, sort_keys=True, separators=(',', ':'))}")
    lines.append(f"weights: {len(m.weights)}")
    lines.extend(f"{x:.17g}" for x in m.weights)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path, expected_fingerprint: str | None = None) -> RankingModel:
    """Read a model file; raises if its fingerprint differs from ``expected_fingerprint``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MODEL_FORMAT:
        raise RankerError(f"{path}: not a model file")
    header, i = {}, 1
    while not lines[i].startswith("weights: "):
        key, _, value = lines[i].partition(": ")
        header[key] = json.loads(value)
        i += 1
    size = int(lines[i].split(": ")[1])
    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise RankerError(f"{path}: fingerprint {header['fingerprint']} != expected {expected_fingerprint}")
    weights = np.array([float(x) for x in lines[i + 1:i + 1 + size]])
    if len(weights) != size:
        raise RankerError(f"{path}: expected {size} weights, found {len(weights)}")
    return RankingModel(weights, header["fingerprint"], header["model_name"],
                        Hyperparams(**header["hyperparams"]), header["training_stats"], header.get("meta", {}))

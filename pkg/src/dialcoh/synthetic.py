"""Synthetic annotated corpora for demos and self-tests.

Dialogue acts follow a first-order Markov chain (questions are followed by
answers, statements by feedback, ...).  Entity mentions are drawn
independently for every DA unit, so they carry no ordering signal at all.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, DAUnit, Dialogue, EntityMention, Tagset, Turn

SYNTH_TAGSET = Tagset("synth-damsl", ("qy", "qw", "ny", "nn", "sd", "sv", "b", "aa", "%"))

# next-tag distribution for each tag
DA_CHAIN = {
    "qy": {"ny": 0.5, "nn": 0.5},
    "qw": {"sd": 1.0},
    "ny": {"sd": 0.5, "sv": 0.5},
    "nn": {"sd": 1.0},
    "sd": {"b": 0.4, "qy": 0.3, "qw": 0.3},
    "sv": {"aa": 0.5, "qy": 0.5},
    "b": {"sd": 0.5, "sv": 0.5},
    "aa": {"qw": 0.5, "qy": 0.5},
    "%": {"qy": 0.5, "qw": 0.5},
}

ENTITIES = ("company", "drug", "policy", "client", "test", "job", "family", "car")


def markov_dialogue(dialogue_id: str, n_turns: int, rng: np.random.Generator,
                    max_units: int = 2, max_mentions: int = 2) -> Dialogue:
    tag = str(rng.choice(["qy", "qw"]))
    turns = []
    for t in range(n_turns):
        units = []
        for _ in range(int(rng.integers(1, max_units + 1))):
            mentions = tuple(
                EntityMention(str(rng.choice(ENTITIES)), str(rng.choice(["S", "O", "X"])))
                for _ in range(int(rng.integers(0, max_mentions + 1)))
            )
            units.append(DAUnit(tag, "", mentions))
            nxt = DA_CHAIN[tag]
            tag = str(rng.choice(list(nxt), p=list(nxt.values())))
        turns.append(Turn("AB"[t % 2], tuple(units)))
    return Dialogue(dialogue_id, tuple(turns), SYNTH_TAGSET.tagset_id)


def markov_corpus(n_dialogues: int, min_turns: int = 12, max_turns: int = 20, seed: int = 0,
                  prefix: str = "synth") -> Corpus:
    rng = np.random.default_rng(seed)
    dialogues = tuple(
        markov_dialogue(f"{prefix}_{i:05d}", int(rng.integers(min_turns, max_turns + 1)), rng)
        for i in range(n_dialogues)
    )
    return Corpus(dialogues, SYNTH_TAGSET)

from __future__ import annotations

from collections import Counter
from itertools import product
from pathlib import Path

import pytest
from hypothesis import strategies as st

from dialcoh.corpus import DAUnit, Dialogue, EntityMention, Tagset, Turn, load_tagset, read_corpus

DATA = Path(__file__).parent / "data"
EXTRACT = DATA / "swbd_extract.jsonl"
EXTRACT_TAGSET = DATA / "swbd_extract_tagset.json"

SMALL_TAGSET = Tagset("small", ("qy", "ny", "sd", "b"))
ENTITY_POOL = ("dog", "cat", "car", "house", "tree", "policy")


@pytest.fixture(scope="session")
def extract_tagset() -> Tagset:
    return load_tagset(EXTRACT_TAGSET)


@pytest.fixture(scope="session")
def extract(extract_tagset) -> Dialogue:
    return read_corpus(EXTRACT, extract_tagset).dialogues[0]


def brute_force_features(cells, tokens, n, saliency, absent="-"):
    """Materialize every window of every surviving column and count them.

    Returns a dict transition -> probability over the full ``tokens``^n space.
    """
    n_rows = len(cells)
    n_cols = len(cells[0]) if cells else 0
    columns = [[cells[r][c] for r in range(n_rows)] for c in range(n_cols)]
    columns = [col for col in columns if sum(x != absent for x in col) >= saliency]
    windows = []
    for col in columns:
        for start in range(n_rows - n + 1):
            windows.append(tuple(col[start:start + n]))
    counts = Counter(windows)
    total = len(windows)
    return {t: (counts[t] / total if total else 0.0) for t in product(tokens, repeat=n)}


@st.composite
def mentions(draw, pool=ENTITY_POOL):
    return EntityMention(draw(st.sampled_from(pool)), draw(st.sampled_from("SOX")), "")


@st.composite
def dialogues(draw, tagset=SMALL_TAGSET, min_turns=1, max_turns=7, max_units=3, max_mentions=3,
              dialogue_id="d"):
    turns = []
    for t in range(draw(st.integers(min_turns, max_turns))):
        units = tuple(
            DAUnit(draw(st.sampled_from(tagset.tags)), draw(st.text(max_size=5)),
                   tuple(draw(st.lists(mentions(), max_size=max_mentions))))
            for _ in range(draw(st.integers(1, max_units)))
        )
        turns.append(Turn(draw(st.sampled_from("AB")), units))
    return Dialogue(dialogue_id, tuple(turns), tagset.tagset_id)


# Filled by tests/test_acceptance.py; echoed once at the end of the session.
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in an
"acceptance criteria" section at the end of the session.
"""

import json
import time

import numpy as np
import pytest

from dialcoh.cli import main
from dialcoh.corpus import split_corpus
from dialcoh.features import FeatureSpec, extract_features, transition_vocabulary
from dialcoh.grid import GRID_MODELS, CellVocab, Grid, build_grid
from dialcoh.ranker import Hyperparams, PreferencePair, objective, train_ranker
from dialcoh.synthetic import SYNTH_TAGSET, markov_corpus
from dialcoh.tasks import (
    RandomScorer,
    TrainedScorer,
    build_training_pairs,
    evaluate_discrimination,
    evaluate_insertion,
    generate_task_bundle,
)

from .conftest import ACCEPTANCE_RESULTS, SMALL_TAGSET, brute_force_features
from .test_grid import GRID_A, GRID_B
from .test_ranker import fv, grid_search_min


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert ok, line


def run(*argv):
    return main([str(a) for a in argv])


def test_golden_grids(extract):
    t0 = time.perf_counter()
    a = build_grid(extract, GRID_MODELS["T-Grid:role"])
    b = build_grid(extract, GRID_MODELS["D-Grid:DA"])
    elapsed = time.perf_counter() - t0
    ok = [list(r) for r in a.cells] == GRID_A and [list(r) for r in b.cells] == GRID_B and elapsed < 1
    record(1, "golden entity and DA grids", ok, f"exact match, {elapsed * 1000:.1f} ms")


def test_feature_oracle():
    rng = np.random.default_rng(2024)
    cases = [
        ("T-Grid:role", CellVocab.ROLE, None),
        ("T-Grid:presence", CellVocab.PRESENCE, None),
        ("D-Grid:DA", CellVocab.DA, SMALL_TAGSET),
    ]
    t0 = time.perf_counter()
    mismatches, bad_sums, nonzero = 0, 0, 0
    for i in range(1000):
        name, cell_vocab, tagset = cases[i % 3]
        n = int(rng.integers(2, 4))
        saliency = int(rng.integers(1, 4))
        spec = FeatureSpec(name, n=n, saliency=saliency, tagset=tagset)
        vocab = transition_vocabulary(cell_vocab, n, tagset)
        rows, cols = int(rng.integers(1, 9)), int(rng.integers(0, 7))
        cells = tuple(tuple(vocab.tokens[k] for k in rng.integers(0, len(vocab.tokens), cols)) for _ in range(rows))
        g = Grid(tuple(f"r{r}" for r in range(rows)), tuple(f"e{c}" for c in range(cols)), cells,
                 spec.grid_spec(name))
        got = extract_features(g, spec).values
        oracle = brute_force_features(cells, vocab.tokens, n, saliency)
        want = np.array([oracle[t] for t in vocab.transitions])
        mismatches += not np.array_equal(got, want)
        if got.any():
            nonzero += 1
            bad_sums += abs(got.sum() - 1.0) > 1e-9
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and bad_sums == 0 and elapsed < 10
    record(2, "feature extraction vs brute-force oracle", ok,
           f"1000 grids, {mismatches} mismatches, {bad_sums}/{nonzero} bad sums, {elapsed:.2f} s")


def test_random_baselines():
    t0 = time.perf_counter()
    corpus = markov_corpus(2000, min_turns=12, max_turns=16, seed=31)
    perms, ins = generate_task_bundle(corpus, k=20, n_turns=10, n_positions=10, seed=31)
    assert all(len(p.permutations) == 20 for p in perms.values())
    assert all(len(i.candidate_positions) == 10 for v in ins.values() for i in v)
    scorer = RandomScorer(seed=31)
    disc = evaluate_discrimination(scorer, corpus, perms)
    insr = evaluate_insertion(scorer, corpus, ins)
    elapsed = time.perf_counter() - t0
    ok = (abs(disc.accuracy - 50) <= 2 and abs(disc.p_at_1 - 4.76) <= 1.5 and abs(disc.mrr - 17.4) <= 2
          and abs(insr.avg_p_at_1 - 10) <= 2 and elapsed < 60)
    record(3, "random baselines", ok,
           f"acc {disc.accuracy:.2f}, P@1 {disc.p_at_1:.2f}, MRR {disc.mrr:.2f}, "
           f"insertion {insr.avg_p_at_1:.2f} over {len(corpus)} dialogues, {elapsed:.1f} s")


def test_ranker_sanity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    w_true = rng.normal(size=6)
    x, y = rng.random((400, 6)), rng.random((400, 6))
    margin = (x - y) @ w_true
    # a clear gap: at C=1 the soft-margin optimum may sacrifice near-tie pairs
    keep = np.abs(margin) > 0.3
    pref = np.where((margin > 0)[:, None], x, y)[keep]
    other = np.where((margin > 0)[:, None], y, x)[keep]
    m = train_ranker([PreferencePair(fv(p), fv(o), f"g{i}") for i, (p, o) in enumerate(zip(pref, other))])
    trace = m.training_stats["objective_trace"]
    separable_ok = m.training_stats["pairwise_accuracy"] == 1.0 and all(a >= b for a, b in zip(trace, trace[1:]))

    worst = 0.0
    for seed in range(30):
        r = np.random.default_rng(100 + seed)
        dim, n_pairs = int(r.integers(1, 4)), int(r.integers(1, 6))
        pos, neg = r.random((n_pairs, dim)), r.random((n_pairs, dim))
        model = train_ranker([PreferencePair(fv(p), fv(q), f"g{i}") for i, (p, q) in enumerate(zip(pos, neg))],
                             Hyperparams(epochs=500))
        _, best = grid_search_min(pos - neg, 1.0, np.sqrt(2 * n_pairs) + 0.1)
        worst = max(worst, objective(model.weights, pos - neg, 1.0) / best - 1)
    elapsed = time.perf_counter() - t0
    ok = separable_ok and worst <= 0.01 and elapsed < 30
    record(4, "ranker sanity", ok,
           f"separable set acc {m.training_stats['pairwise_accuracy']:.0%} on {len(pref)} pairs, "
           f"monotone trace {separable_ok}, worst gap to grid search {worst:+.3%} over 30 instances, "
           f"{elapsed:.1f} s")


def test_only_das_finding():
    t0 = time.perf_counter()
    corpus = markov_corpus(300, seed=7)
    corpus = split_corpus(corpus, (0.64, 0.2, 0.16), seed=7)
    train, test = corpus.part("train"), corpus.part("test")
    perms, _ = generate_task_bundle(corpus, k=20, n_turns=1, n_positions=1, seed=7)
    acc = {}
    for name in ("Only-DAs", "T-Grid:role", "T-Grid:presence", "T-Grid:presence + Only DAs",
                 "T-Grid:role + Only DAs"):
        spec = FeatureSpec(name, tagset=SYNTH_TAGSET)
        model = train_ranker(build_training_pairs(train, perms, spec))
        acc[name] = evaluate_discrimination(TrainedScorer(model, spec), test, perms).accuracy
    elapsed = time.perf_counter() - t0
    only = acc["Only-DAs"]
    ok = (only >= 95
          and acc["T-Grid:role"] <= only - 20 and acc["T-Grid:presence"] <= only - 20
          and abs(acc["T-Grid:presence + Only DAs"] - only) <= 2 and abs(acc["T-Grid:role + Only DAs"] - only) <= 2
          and elapsed < 300)
    record(5, "DA-only model wins on Markov DA corpus", ok,
           ", ".join(f"{k} {v:.2f}" for k, v in acc.items()) + f" ({len(test)} test dialogues, {elapsed:.1f} s)")


@pytest.fixture(scope="module")
def user_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("user")
    assert run("synth", "--dialogues", 150, "--seed", 3, "--out", root) == 0
    return root / "corpus.jsonl", root / "tagset.json"


def _tree_bytes(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_determinism(user_corpus, tmp_path):
    corpus, tagset = user_corpus
    t0 = time.perf_counter()
    base = ("--corpus", corpus, "--tagset", tagset, "--seed", 11)
    run("permute", *base, "--out", tmp_path / "bundle")
    run("train", *base, "--bundle", tmp_path / "bundle", "--out", tmp_path / "models")
    outputs = {}
    for trial in ("a", "b"):
        out = tmp_path / trial
        assert run("permute", *base, "--out", out / "permute") == 0
        assert run("train", *base, "--bundle", tmp_path / "bundle", "--out", out / "train") == 0
        assert run("evaluate", *base, "--bundle", tmp_path / "bundle", "--model-dir", tmp_path / "models",
                   "--include-random", "--out", out / "evaluate") == 0
        outputs[trial] = {step: _tree_bytes(out / step) for step in ("permute", "train", "evaluate")}
    elapsed = time.perf_counter() - t0
    same = {step: outputs["a"][step] == outputs["b"][step] and bool(outputs["a"][step])
            for step in ("permute", "train", "evaluate")}
    ok = all(same.values()) and elapsed < 120
    record(6, "byte-identical permute/train/evaluate", ok,
           ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()) + f", {elapsed:.1f} s")


def test_full_pipeline(user_corpus, tmp_path):
    corpus, tagset = user_corpus
    t0 = time.perf_counter()
    base = ("--corpus", corpus, "--tagset", tagset)
    assert run("validate", *base) == 0
    assert run("split", *base, "--out", tmp_path / "split") == 0
    assert run("permute", *base, "--k", 20, "--insertion-turns", 10, "--insertion-positions", 10,
               "--out", tmp_path / "bundle") == 0
    assert run("train", "--corpus", tmp_path / "split" / "train.jsonl", "--tagset", tagset,
               "--bundle", tmp_path / "bundle", "--out", tmp_path / "models") == 0
    assert run("evaluate", "--corpus", tmp_path / "split" / "test.jsonl", "--tagset", tagset,
               "--bundle", tmp_path / "bundle", "--model-dir", tmp_path / "models", "--include-random",
               "--dataset", "SYN", "--out", tmp_path / "eval") == 0
    assert run("report", tmp_path / "eval" / "report.json", "--out", tmp_path / "report") == 0
    elapsed = time.perf_counter() - t0

    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    lines = (tmp_path / "report" / "table.txt").read_text().splitlines()
    rows = [l.split("|")[0].strip() for l in lines[4:] if "|" in l]
    expected = ["Random", "T-Grid:role", "T-Grid:presence", "D-Grid:role", "D-Grid:DA", "Only-DAs",
                "T-Grid:presence + Only DAs", "T-Grid:role + Only DAs"]
    shaped = ("SYN" in lines[0] and "Discr." in lines[1] and "Ins." in lines[1]
              and lines[2].split("|")[1].split() == ["Acc.", "MRR", "P@1", "Av.", "P@1"])
    ok = rows == expected and shaped and len(report["models"]) == 8
    record(7, "full pipeline on a user corpus", ok,
           f"{len(rows)} model rows incl. Random, {report['counts']['discrimination_sets']} discrimination sets, "
           f"{report['counts']['insertion_instances']} insertion instances, {elapsed:.1f} s")

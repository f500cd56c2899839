"""Command-line pipeline: validate, split, permute, featurize, train, evaluate, report.

Every option can also come from a JSON config file (``--config``) whose keys
are the option names with underscores (``k_permutations``, ``insertion_turns``
...).  Flags given on the command line win.  The effective configuration is
written into every output artifact.

Exit codes: 0 success, 1 data error, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .corpus import (
    CorpusError,
    iter_dialogues,
    load_tagset,
    read_corpus,
    serialize_tagset,
    split_corpus,
    validate_dialogue,
    write_corpus,
)
from .features import MODEL_NAMES, FeatureError, FeatureSpec, Featurizer, format_feature_record
from .grid import GridError, build_grid
from .ranker import Hyperparams, RankerError, load_model, save_model, train_ranker
from .significance import mcnemar, randomization_test
from .synthetic import SYNTH_TAGSET, markov_corpus
from .tasks import (
    EvaluationReport,
    OracleScorer,
    RandomScorer,
    TaskError,
    TrainedScorer,
    build_training_pairs,
    evaluate_discrimination,
    evaluate_insertion,
    format_table,
    generate_task_bundle,
    read_insertions,
    read_permutations,
    write_insertions,
    write_permutations,
)

logger = logging.getLogger("dialcoh")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2
PERMUTATIONS_FILE = "permutations.jsonl"
INSERTIONS_FILE = "insertions.jsonl"

DATA_ERRORS = (CorpusError, TaskError, RankerError, GridError, FeatureError, FileNotFoundError)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus_path: str | None = None
    tagset_path: str | None = None
    model_names: list[str] = field(default_factory=lambda: list(MODEL_NAMES))
    n: int = 2
    saliency: int = 1
    seed: int = 0
    k_permutations: int = 20
    insertion_turns: int = 10
    insertion_positions: int = 10
    output_dir: str = "out"
    c: float = 1.0
    epochs: int = 300
    ratios: list[float] = field(default_factory=lambda: [0.64, 0.20, 0.16])
    scorer: str = "trained"
    bundle_dir: str | None = None
    model_dir: str | None = None
    dataset: str | None = None
    include_random: bool = False
    dump_grids: bool = False

    @property
    def hyperparams(self) -> Hyperparams:
        return Hyperparams(c=self.c, epochs=self.epochs, seed=self.seed)

    def subset(self, *keys: str) -> dict:
        d = asdict(self)
        return {k: d[k] for k in keys}


def model_slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")


def parse_models(raw) -> list[str]:
    items = raw if isinstance(raw, list) else [s for s in str(raw).split(",")]
    by_slug = {model_slug(m): m for m in MODEL_NAMES}
    out = []
    for item in (s.strip() for s in items):
        if not item:
            continue
        if item in MODEL_NAMES:
            out.append(item)
        elif model_slug(item) in by_slug:
            out.append(by_slug[model_slug(item)])
        else:
            raise ConfigError(f"unknown model {item!r}; choose from {', '.join(MODEL_NAMES)}")
    if not out:
        raise ConfigError("no models selected")
    return out


# flag dest -> RunConfig field
_FLAG_FIELDS = {
    "corpus": "corpus_path", "tagset": "tagset_path", "models": "model_names", "n": "n",
    "saliency": "saliency", "seed": "seed", "k": "k_permutations", "insertion_turns": "insertion_turns",
    "insertion_positions": "insertion_positions", "out": "output_dir", "c": "c", "epochs": "epochs",
    "ratios": "ratios", "scorer": "scorer", "bundle": "bundle_dir", "model_dir": "model_dir",
    "dataset": "dataset", "include_random": "include_random", "grids": "dump_grids",
}


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    for dest, name in _FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[name] = value
    if "model_names" in values:
        values["model_names"] = parse_models(values["model_names"])
    if isinstance(values.get("ratios"), str):
        try:
            values["ratios"] = [float(x) for x in values["ratios"].split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --ratios: {exc}") from exc
    cfg = RunConfig(**values)
    if cfg.n < 2 or cfg.saliency < 1 or cfg.k_permutations < 1 or cfg.epochs < 1:
        raise ConfigError("need n >= 2, saliency >= 1, k >= 1, epochs >= 1")
    if cfg.insertion_turns < 1 or cfg.insertion_positions < 1:
        raise ConfigError("insertion turns and positions must be >= 1")
    if len(cfg.ratios) != 3 or min(cfg.ratios) < 0 or abs(sum(cfg.ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative fractions summing to 1, got {cfg.ratios}")
    if cfg.scorer not in ("trained", "random", "oracle"):
        raise ConfigError(f"unknown scorer {cfg.scorer!r}")
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join(missing))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(cfg: RunConfig):
    _require(cfg, "corpus_path", "tagset_path")
    tagset = load_tagset(cfg.tagset_path)
    return read_corpus(cfg.corpus_path, tagset)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --- commands --------------------------------------------------------------

def cmd_validate(cfg: RunConfig) -> int:
    _require(cfg, "corpus_path", "tagset_path")
    tagset = load_tagset(cfg.tagset_path)
    violations, seen, count = [], set(), 0
    with open(cfg.corpus_path, "rb") as fh:
        for lineno, d in iter_dialogues(fh):
            count += 1
            for v in validate_dialogue(d, tagset):
                violations.append(f"line {lineno}: {v}")
            if d.dialogue_id in seen:
                violations.append(f"line {lineno}: DUPLICATE_ID [{d.dialogue_id}]: dialogue_id already used")
            seen.add(d.dialogue_id)
    if count == 0:
        logger.warning("0 dialogues in %s", cfg.corpus_path)
    for v in violations:
        print(v)
    print(f"{count} dialogues, {len(violations)} violations")
    return EXIT_DATA if violations else EXIT_OK


def cmd_split(cfg: RunConfig) -> int:
    corpus = split_corpus(_load(cfg), cfg.ratios, cfg.seed)
    out = _out_dir(cfg)
    for name, ids in corpus.split.items():
        write_corpus(out / f"{name}.jsonl", corpus.part(name))
    meta = {"config": cfg.subset("corpus_path", "tagset_path", "ratios", "seed"),
            "split": {k: list(v) for k, v in corpus.split.items()}}
    (out / "split.json").write_text(_dumps(meta) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={len(v)}" for k, v in corpus.split.items()))
    return EXIT_OK


def cmd_permute(cfg: RunConfig) -> int:
    corpus = _load(cfg)
    perms, inserts = generate_task_bundle(corpus, cfg.k_permutations, cfg.insertion_turns,
                                          cfg.insertion_positions, cfg.seed)
    out = _out_dir(cfg)
    echo = cfg.subset("corpus_path", "seed", "k_permutations", "insertion_turns", "insertion_positions")
    write_permutations(out / PERMUTATIONS_FILE, perms, echo)
    write_insertions(out / INSERTIONS_FILE, inserts, echo)
    capped = [p for p in perms.values() if p.capped]
    for p in capped:
        logger.info("%s: only %d distinct permutations available", p.dialogue_id, len(p.permutations))
    print(f"{len(perms)} permutation sets ({len(capped)} capped), "
          f"{sum(len(v) for v in inserts.values())} insertion instances")
    return EXIT_OK


def _spec(cfg: RunConfig, name: str, tagset) -> FeatureSpec:
    return FeatureSpec(name, n=cfg.n, saliency=cfg.saliency, tagset=tagset)


def cmd_featurize(cfg: RunConfig) -> int:
    corpus = _load(cfg)
    out = _out_dir(cfg)
    echo = cfg.subset("corpus_path", "tagset_path", "n", "saliency")
    for name in cfg.model_names:
        spec = _spec(cfg, name, corpus.tagset)
        featurizer = Featurizer(spec)
        lines = [f"# {_dumps({'config': echo, 'model_name': name, 'fingerprint': spec.fingerprint, 'size': spec.size})}"]
        lines += [format_feature_record(d.dialogue_id, featurizer.vector(d)) for d in corpus]
        (out / f"{model_slug(name)}.features").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if cfg.dump_grids:
            grids = []
            for component in spec.components:
                for d in corpus:
                    g = build_grid(d, spec.grid_spec(component))
                    grids.append(f"== {d.dialogue_id} {component}\n{g.to_text()}")
            (out / f"{model_slug(name)}.grids.txt").write_text("".join(grids), encoding="utf-8")
    print(f"featurized {len(corpus)} dialogues for {len(cfg.model_names)} model(s)")
    return EXIT_OK


def _bundle(cfg: RunConfig):
    _require(cfg, "bundle_dir")
    b = Path(cfg.bundle_dir)
    return read_permutations(b / PERMUTATIONS_FILE), b / INSERTIONS_FILE


def cmd_train(cfg: RunConfig) -> int:
    corpus = _load(cfg)
    perms, _ = _bundle(cfg)
    out = _out_dir(cfg)
    echo = cfg.subset("corpus_path", "tagset_path", "bundle_dir", "n", "saliency", "seed", "c", "epochs")
    for name in cfg.model_names:
        spec = _spec(cfg, name, corpus.tagset)
        pairs = build_training_pairs(corpus, perms, spec)
        model = train_ranker(pairs, cfg.hyperparams)
        model.meta.update({"n": spec.n, "saliency": spec.saliency, "tagset_id": spec.tagset_id})
        save_model(model, out / f"{model_slug(name)}.model", echo)
        s = model.training_stats
        print(f"{name}: {s['pairs']} pairs, {s['degenerate_pairs']} degenerate, "
              f"{s['pair_violations']} violations, objective {s['final_objective']:.6g}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    corpus = _load(cfg)
    perms, ins_path = _bundle(cfg)
    inserts = read_insertions(ins_path)
    dataset = cfg.dataset or Path(cfg.corpus_path).stem
    echo = cfg.subset("corpus_path", "tagset_path", "bundle_dir", "model_dir", "model_names",
                      "scorer", "seed", "include_random")
    report = EvaluationReport(dataset, config=echo)

    scorers = []
    if cfg.scorer == "random" or cfg.include_random:
        scorers.append(RandomScorer(cfg.seed))
    if cfg.scorer == "oracle":
        scorers.append(OracleScorer())
    if cfg.scorer == "trained":
        _require(cfg, "model_dir")
        for name in cfg.model_names:
            path = Path(cfg.model_dir) / f"{model_slug(name)}.model"
            model = load_model(path)
            if model.model_name != name:
                raise RankerError(f"{path} holds {model.model_name!r}, not {name!r}")
            if model.meta.get("tagset_id") not in (None, corpus.tagset.tagset_id):
                raise RankerError(f"{path} was trained on tagset {model.meta['tagset_id']!r}")
            spec = FeatureSpec(name, n=model.meta.get("n", cfg.n), saliency=model.meta.get("saliency", cfg.saliency),
                               tagset=corpus.tagset)
            model = load_model(path, expected_fingerprint=spec.fingerprint)
            scorers.append(TrainedScorer(model, spec))

    for scorer in scorers:
        report.add(scorer.name, evaluate_discrimination(scorer, corpus, perms),
                   evaluate_insertion(scorer, corpus, inserts))
    out = _out_dir(cfg)
    (out / "report.json").write_text(report.dumps(), encoding="utf-8")
    table = format_table([report])
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_report(cfg: RunConfig, paths: list[str], baseline: str | None) -> int:
    reports = []
    for p in paths:
        try:
            reports.append(EvaluationReport.from_json(json.loads(Path(p).read_text(encoding="utf-8"))))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise TaskError(f"cannot read report {p}: {exc}") from exc
    text = format_table(reports)
    if baseline:
        text += "\n" + significance_table(reports, baseline)
    out = _out_dir(cfg)
    (out / "table.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def significance_table(reports: list[EvaluationReport], baseline: str) -> str:
    """p-values of every model against ``baseline``: McNemar for accuracy and P@1,
    randomization for MRR and insertion."""
    lines = [f"p-values vs {baseline} (acc, P@1: McNemar; MRR, Av. P@1: randomization)"]
    for r in reports:
        base = r.outcomes.get(baseline)
        if base is None:
            lines.append(f"{r.dataset}: no outcomes for {baseline}")
            continue
        for name, oc in r.outcomes.items():
            if name == baseline:
                continue
            p_acc = mcnemar(oc["pair_wins"], base["pair_wins"])
            p_p1 = mcnemar([x == 1.0 for x in oc["reciprocal_ranks"]], [x == 1.0 for x in base["reciprocal_ranks"]])
            p_mrr = randomization_test(oc["reciprocal_ranks"], base["reciprocal_ranks"], trials=2000)
            p_ins = randomization_test(oc["insertion_dialogue_p_at_1"], base["insertion_dialogue_p_at_1"],
                                       trials=2000)
            lines.append(f"{r.dataset} {name}: acc {p_acc:.4g}  MRR {p_mrr:.4g}  P@1 {p_p1:.4g}  Av. P@1 {p_ins:.4g}")
    return "\n".join(lines) + "\n"


def cmd_synth(cfg: RunConfig, n_dialogues: int) -> int:
    out = _out_dir(cfg)
    write_corpus(out / "corpus.jsonl", markov_corpus(n_dialogues, seed=cfg.seed))
    (out / "tagset.json").write_bytes(serialize_tagset(SYNTH_TAGSET))
    print(f"wrote {n_dialogues} synthetic dialogues to {out}")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialcoh", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help, *opts):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON config file; flags override it")
        for opt in opts:
            opt(sp)
        return sp

    def corpus(sp):
        sp.add_argument("--corpus", help="corpus JSONL file")
        sp.add_argument("--tagset", help="tagset JSON file")

    def grid(sp):
        sp.add_argument("--models", help=f"comma-separated model names (default: all seven)")
        sp.add_argument("--n", type=int, help="transition length (default 2)")
        sp.add_argument("--saliency", type=int, help="minimum rows an entity must occupy (default 1)")

    def seed(sp):
        sp.add_argument("--seed", type=int, help="random seed (default 0)")

    def out(sp):
        sp.add_argument("--out", help="output directory (default ./out)")

    def bundle(sp):
        sp.add_argument("--bundle", help="directory written by `permute`")

    add("validate", "check a corpus file against its tagset", corpus)
    sp = add("split", "split a corpus into train/test/dev files", corpus, seed, out)
    sp.add_argument("--ratios", help="train,test,dev fractions (default 0.64,0.20,0.16)")
    sp = add("permute", "generate discrimination and insertion task bundles", corpus, seed, out)
    sp.add_argument("--k", type=int, help="permutations per dialogue (default 20)")
    sp.add_argument("--insertion-turns", type=int, help="turns removed per dialogue (default 10)")
    sp.add_argument("--insertion-positions", type=int, help="candidate slots per turn (default 10)")
    sp = add("featurize", "write feature vectors per model", corpus, grid, out)
    sp.add_argument("--grids", action="store_true", default=None, help="also write plain-text grid dumps")
    sp = add("train", "train one ranker per model", corpus, grid, bundle, seed, out)
    sp.add_argument("--c", type=float, help="hinge loss weight (default 1.0)")
    sp.add_argument("--epochs", type=int, help="subgradient epochs (default 300)")
    sp = add("evaluate", "score task bundles and write a report", corpus, grid, bundle, seed, out)
    sp.add_argument("--model-dir", help="directory written by `train`")
    sp.add_argument("--scorer", choices=("trained", "random", "oracle"), help="default: trained")
    sp.add_argument("--include-random", action="store_true", default=None, help="add a Random baseline row")
    sp.add_argument("--dataset", help="dataset label in the report (default: corpus file stem)")
    sp = add("report", "merge report.json files into one results table", out)
    sp.add_argument("reports", nargs="+", help="report.json files, one per dataset")
    sp.add_argument("--baseline", help="model to test every other model against")
    sp = add("synth", "write a synthetic Markov-DA corpus and its tagset", seed, out)
    sp.add_argument("--dialogues", type=int, default=300)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "split":
            return cmd_split(cfg)
        if args.command == "permute":
            return cmd_permute(cfg)
        if args.command == "featurize":
            return cmd_featurize(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.reports, args.baseline)
        return cmd_synth(cfg, args.dialogues)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

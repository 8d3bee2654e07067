"""Command-line entry point: ``mlrst <command> ...``.

Exit status: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from mlrst import model as mdl
from mlrst.core import Document, RstTree, Token, from_bracketed, read_edu_sidecar, to_bracketed, write_edu_sidecar
from mlrst.crosslingual import BilingualDictionary, EmbeddingTable, coverage_report, token_translator
from mlrst.decode import parse as parse_tree
from mlrst.evaluate import (
    format_kv,
    format_scores,
    mfs_baseline,
    most_frequent_label,
    score,
    split_corpus,
)
from mlrst.features import FeatureExtractor
from mlrst.harmonize import FORMATS, CorpusStats, LabelMapping, build_document
from mlrst.ingest import load_conllu
from mlrst.transition import TransitionError, oracle, replay

log = logging.getLogger("mlrst")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
MODES = ("mono", "cross-source-only", "cross-plus-dev")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class InvariantError(Exception):
    pass


# --- file access ---------------------------------------------------------------

# Every corpus file read goes through read_text so that a run can be audited.
ACCESS_LOG: list[Path] = []


def note_access(path: Path) -> Path:
    path = Path(path)
    ACCESS_LOG.append(path.resolve())
    return path


def read_text(path: Path) -> str:
    path = note_access(path)
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc


# --- harmonized corpus directories ------------------------------------------------
#
# <dir>/corpus.tsv          doc_id<TAB>language, one line per harmonized tree
# <dir>/<id>.tree           bracketed tree
# <dir>/<id>.edus           k<TAB>start<TAB>end<TAB>text
# <dir>/<id>.tokens.json    token layer
# <dir>/stats.txt           corpus statistics
# <dir>/skipped.tsv         doc_id<TAB>reason
# <dir>/split.tsv           optional doc_id<TAB>train|dev|test override

def _tokens_json(tokens: Sequence[Token]) -> str:
    rows = [[t.form, t.pos, t.lemma, t.head, t.sentence_id, t.surface] for t in tokens]
    return json.dumps(rows, ensure_ascii=False) + "\n"


def _tokens_from_json(text: str) -> list[Token]:
    return [Token(*row) for row in json.loads(text)]


def write_document(doc: Document, out: Path) -> None:
    (out / f"{doc.id}.tree").write_text(to_bracketed(doc.gold_tree) + "\n", encoding="utf-8")
    (out / f"{doc.id}.edus").write_text(write_edu_sidecar(doc), encoding="utf-8")
    (out / f"{doc.id}.tokens.json").write_text(_tokens_json(doc.tokens), encoding="utf-8")


def load_corpus(directory: Path) -> list[Document]:
    directory = Path(directory)
    index = read_text(directory / "corpus.tsv")
    docs = []
    for lineno, line in enumerate(index.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{directory / 'corpus.tsv'}:{lineno}: expected doc_id<TAB>language")
        doc_id, language = parts
        try:
            tree = from_bracketed(read_text(directory / f"{doc_id}.tree").strip())
            edus = read_edu_sidecar(read_text(directory / f"{doc_id}.edus"))
            tokens = _tokens_from_json(read_text(directory / f"{doc_id}.tokens.json"))
            docs.append(Document(doc_id, language, edus, tokens, tree))
        except (ValueError, TypeError) as exc:
            raise DataError(f"{directory}: document {doc_id}: {exc}") from exc
    if not docs:
        raise DataError(f"{directory}: empty corpus")
    return docs


def load_trees(directory: Path) -> dict[str, RstTree]:
    trees = {}
    for path in sorted(Path(directory).glob("*.tree")):
        try:
            trees[path.name[:-len(".tree")]] = from_bracketed(read_text(path).strip())
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
    return trees


def corpus_splits(directory: Path, docs: list[Document], seed: int):
    """(train, dev, test) from ``split.tsv`` if present, else the seeded rule."""
    override = Path(directory) / "split.tsv"
    if not override.exists():
        try:
            return split_corpus(docs, seed)
        except ValueError as exc:
            raise DataError(f"{directory}: {exc}") from exc
    parts: dict[str, list[Document]] = {"train": [], "dev": [], "test": []}
    by_id = {d.id: d for d in docs}
    for lineno, line in enumerate(read_text(override).splitlines(), 1):
        if not line.strip():
            continue
        doc_id, _, part = line.partition("\t")
        if part not in parts or doc_id not in by_id:
            raise DataError(f"{override}:{lineno}: expected known doc_id<TAB>train|dev|test")
        parts[part].append(by_id[doc_id])
    return parts["train"], parts["dev"], parts["test"]


def select_split(directory: Path, docs: list[Document], split: str, seed: int) -> list[Document]:
    if split == "all":
        return docs
    train, dev, test = corpus_splits(directory, docs, seed)
    return {"train": train, "dev": dev, "test": test}[split]


# --- harmonize -----------------------------------------------------------------------

def read_manifest(path: Path) -> list[tuple[str, Path, Optional[Path], str]]:
    base = Path(path).parent
    rows = []
    for lineno, line in enumerate(read_text(path).splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected doc_id, tree file, conllu file or '-', language")
        doc_id, tree, conllu, language = parts
        rows.append((doc_id, base / tree, None if conllu == "-" else base / conllu, language))
    if not rows:
        raise DataError(f"{path}: manifest lists no documents")
    return rows


def cmd_harmonize(args) -> int:
    mapping = LabelMapping.load(args.mapping) if args.mapping else None
    rows = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    docs, skipped = [], []
    for doc_id, tree_path, conllu_path, language in rows:
        fmt = FORMATS.get(tree_path.suffix.lower())
        if fmt is None:
            skipped.append((doc_id, f"unknown tree format {tree_path.suffix!r}"))
            continue
        try:
            tokens = load_conllu(read_text(conllu_path)) if conllu_path else None
            doc = build_document(doc_id, language, read_text(tree_path), fmt, tokens,
                                 mapping, args.drop_first_segment)
        except (ValueError, KeyError, DataError) as exc:
            reason = str(exc).strip("'\"").replace("\n", " ")
            log.warning("skipping %s: %s", doc_id, reason)
            skipped.append((doc_id, reason))
            continue
        write_document(doc, out)
        docs.append(doc)
    (out / "skipped.tsv").write_text("".join(f"{d}\t{r}\n" for d, r in skipped), encoding="utf-8")
    if not docs:
        raise DataError("every document failed to harmonize")
    (out / "corpus.tsv").write_text("".join(f"{d.id}\t{d.language}\n" for d in docs), encoding="utf-8")
    stats = CorpusStats.compute(args.name or out.name, len(rows), [d.gold_tree for d in docs])
    report = stats.header() + "\n" + stats.row() + "\n"
    (out / "stats.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    print(f"{len(docs)} trees written, {len(skipped)} documents skipped")
    for doc_id, reason in skipped:
        print(f"skipped {doc_id}: {reason}")
    return EXIT_OK


# --- configuration ---------------------------------------------------------------------

@dataclass
class RunConfig:
    mode: str = "mono"
    target: Optional[Path] = None
    sources: list[Path] = field(default_factory=list)
    model: Path = Path("model.bin")
    seed: int = 1
    learning_rates: list[float] = field(default_factory=lambda: list(mdl.LEARNING_RATES))
    decays: list[float] = field(default_factory=lambda: list(mdl.DECAYS))
    epochs: list[int] = field(default_factory=lambda: [20])
    beams: list[int] = field(default_factory=lambda: list(mdl.BEAMS))
    dictionaries: dict[str, Path] = field(default_factory=dict)
    embeddings: Optional[Path] = None
    embedding_dim: int = 50

    @property
    def fixed_point(self) -> bool:
        return all(len(v) == 1 for v in (self.learning_rates, self.decays, self.epochs, self.beams))


def _floats(v: str) -> list[float]:
    return [float(x) for x in v.split(",") if x.strip()]


def _ints(v: str) -> list[int]:
    return [int(x) for x in v.split(",") if x.strip()]


def _paths(v: str) -> list[Path]:
    return [Path(x.strip()) for x in v.split(",") if x.strip()]


def _lang_paths(v: str) -> dict[str, Path]:
    out = {}
    for item in v.split(","):
        if item.strip():
            lang, sep, path = item.partition(":")
            if not sep:
                raise UsageError(f"expected lang:path, got {item!r}")
            out[lang.strip()] = Path(path.strip())
    return out


CONFIG_KEYS: dict[str, tuple[str, Callable]] = {
    "mode": ("mode", str),
    "target": ("target", Path),
    "sources": ("sources", _paths),
    "model": ("model", Path),
    "seed": ("seed", int),
    "learning_rates": ("learning_rates", _floats),
    "decays": ("decays", _floats),
    "epochs": ("epochs", _ints),
    "beams": ("beams", _ints),
    "dictionaries": ("dictionaries", _lang_paths),
    "embeddings": ("embeddings", Path),
    "embedding_dim": ("embedding_dim", int),
}


def parse_config(lines: Sequence[str], overrides: Sequence[str] = (), base: Optional[Path] = None) -> RunConfig:
    """Flat ``key = value`` lines, then ``key=value`` overrides; relative paths resolve against ``base``."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"config line {lineno}: expected key = value")
        values[key.strip()] = value.strip()
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r}: expected key=value")
        values[key.strip()] = value.strip()
    cfg = RunConfig()
    for key, raw in values.items():
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        attr, conv = CONFIG_KEYS[key]
        try:
            setattr(cfg, attr, conv(raw))
        except ValueError as exc:
            raise UsageError(f"config key {key}: {exc}") from exc
    if base is not None:
        def fix(p: Path) -> Path:
            return p if p.is_absolute() else base / p
        cfg.target = fix(cfg.target) if cfg.target else None
        cfg.sources = [fix(p) for p in cfg.sources]
        cfg.dictionaries = {k: fix(p) for k, p in cfg.dictionaries.items()}
        cfg.embeddings = fix(cfg.embeddings) if cfg.embeddings else None
    if cfg.mode not in MODES:
        raise UsageError(f"mode must be one of {', '.join(MODES)}")
    if cfg.mode != "cross-source-only" and cfg.target is None:
        raise UsageError(f"mode {cfg.mode} needs a target corpus")
    if cfg.mode != "mono" and not cfg.sources:
        raise UsageError(f"mode {cfg.mode} needs source corpora")
    if not all((cfg.learning_rates, cfg.decays, cfg.epochs, cfg.beams)):
        raise UsageError("hyperparameter lists must not be empty")
    if any(not 1 <= e <= 20 for e in cfg.epochs):
        raise UsageError("epochs must lie in [1, 20]")
    return cfg


def load_config(args) -> RunConfig:
    lines: list[str] = []
    base = None
    if args.config:
        lines = read_text(args.config).splitlines()
        base = Path(args.config).parent
    return parse_config(lines, args.set or [], base)


def make_extractor(dictionaries: dict[str, Path]) -> FeatureExtractor:
    if not dictionaries:
        return FeatureExtractor()
    translators = {}
    for lang, path in sorted(dictionaries.items()):
        entries = BilingualDictionary.from_lines(read_text(path).splitlines(), lang)
        translators[lang] = token_translator(entries)
    return FeatureExtractor(translators)


def training_data(cfg: RunConfig) -> tuple[list[Document], list[Document]]:
    """Training and development documents for the configured mode.

    cross-source-only touches source corpora only; target files are never opened.
    """
    train: list[Document] = []
    dev: list[Document] = []
    if cfg.mode == "mono":
        docs = load_corpus(cfg.target)
        train, dev, _ = corpus_splits(cfg.target, docs, cfg.seed)
        if not train:
            raise DataError(f"{cfg.target}: no training documents in mono mode")
        return train, dev
    for source in cfg.sources:
        docs = load_corpus(source)
        s_train, s_dev, s_test = corpus_splits(source, docs, cfg.seed)
        if cfg.mode == "cross-source-only":
            train += s_train + s_test
            dev += s_dev
        else:
            train += docs
    if cfg.mode == "cross-plus-dev":
        docs = load_corpus(cfg.target)
        t_train, dev, _ = corpus_splits(cfg.target, docs, cfg.seed)
        train += t_train
    return train, dev


def cmd_train(args) -> int:
    cfg = load_config(args)
    train, dev = training_data(cfg)
    extractor = make_extractor(cfg.dictionaries)
    vectors = None
    if cfg.embeddings:
        try:
            vectors = EmbeddingTable.load(note_access(cfg.embeddings), cfg.embedding_dim)
        except OSError as exc:
            raise DataError(f"cannot read {cfg.embeddings}: {exc}") from exc
    log_lines: list[str] = []
    if cfg.fixed_point or not dev:
        hyper = mdl.Hyperparams(cfg.learning_rates[0], cfg.decays[0], max(cfg.epochs),
                                cfg.beams[0], cfg.seed)

        def on_epoch(epoch, averaged, loss):
            line = f"lr={hyper.learning_rate} decay={hyper.decay} epoch={epoch} beam={hyper.beam} loss={loss:.4f}"
            if dev:
                s = score([parse_tree(d, averaged, hyper.beam, extractor) for d in dev],
                          [d.gold_tree for d in dev])
                line += f" span={s[0]:.2f} nuc={s[1]:.2f} rel={s[2]:.2f}"
            log_lines.append(line)

        model, _ = mdl.train_on_documents(train, hyper, extractor, vectors, on_epoch)
        model.hyper = hyper
        scores = (score([parse_tree(d, model, hyper.beam, extractor) for d in dev],
                        [d.gold_tree for d in dev]) if dev else None)
    else:
        result = mdl.grid_search(train, dev, cfg.learning_rates, cfg.decays, max(cfg.epochs),
                                 cfg.beams, cfg.seed, extractor, vectors)
        model, hyper, scores, log_lines = result.model, result.hyper, result.scores, result.log
    model_path = Path(cfg.model)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    mdl.save(model, model_path)
    Path(str(model_path) + ".log").write_text("".join(l + "\n" for l in log_lines), encoding="utf-8")
    table = (f"selected lr={hyper.learning_rate} decay={hyper.decay} epochs={hyper.epochs} "
             f"beam={hyper.beam}\n")
    if scores is not None:
        table += format_scores({"dev": scores})
    Path(str(model_path) + ".dev.txt").write_text(table, encoding="utf-8")
    print(f"trained on {len(train)} documents, {len(dev)} dev documents")
    print(table, end="")
    print(f"model {model_path} sha256 {model.checksum()}")
    return EXIT_OK


# --- parse / eval / baseline -----------------------------------------------------------

def _write_trees(trees: dict[str, RstTree], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for doc_id, tree in trees.items():
        (out / f"{doc_id}.tree").write_text(to_bracketed(tree) + "\n", encoding="utf-8")


def cmd_parse(args) -> int:
    try:
        model = mdl.load(args.model)
    except mdl.ModelError as exc:
        raise DataError(str(exc)) from exc
    docs = select_split(Path(args.corpus), load_corpus(args.corpus), args.split, args.seed)
    extractor = make_extractor(_lang_paths(args.dictionaries) if args.dictionaries else {})
    beam = args.beam or model.hyper.beam
    trees = {d.id: parse_tree(d, model, beam, extractor) for d in docs}
    _write_trees(trees, Path(args.out))
    print(f"parsed {len(trees)} documents with beam {beam}")
    return EXIT_OK


def _report(scores, name: str, fmt: str) -> None:
    print(format_kv(scores) if fmt == "kv" else format_scores({name: scores}), end="\n" if fmt == "kv" else "")


def cmd_eval(args) -> int:
    pred = load_trees(args.pred)
    gold_docs = select_split(Path(args.gold), load_corpus(args.gold), args.split, args.seed)
    missing = [d.id for d in gold_docs if d.id not in pred]
    if missing:
        raise DataError(f"no prediction for {len(missing)} documents, e.g. {missing[0]}")
    try:
        scores = score([pred[d.id] for d in gold_docs], [d.gold_tree for d in gold_docs])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    _report(scores, args.name or Path(args.gold).name, args.format)
    return EXIT_OK


def cmd_baseline(args) -> int:
    corpus = Path(args.corpus)
    docs = load_corpus(corpus)
    if args.split == "all":
        label_docs = test = docs
    else:
        train, dev, test = corpus_splits(corpus, docs, args.seed)
        label_docs = train + dev
    try:
        label = most_frequent_label([d.gold_tree for d in label_docs])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    trees = {d.id: mfs_baseline(d, label) for d in test}
    if args.out:
        _write_trees(trees, Path(args.out))
    scores = score([trees[d.id] for d in test], [d.gold_tree for d in test])
    print(f"label {label[0]}-{label[1]}")
    _report(scores, f"MFS {corpus.name}", args.format)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    docs = load_corpus(args.corpus)
    failures = 0
    for doc in docs:
        try:
            ok = replay(doc.n_edus, oracle(doc.gold_tree)) == doc.gold_tree
        except (TransitionError, ValueError):
            ok = False
        failures += not ok
        print(f"{doc.id}\t{'PASS' if ok else 'FAIL'}")
    print(f"{len(docs) - failures}/{len(docs)} round-trips pass")
    if failures:
        raise InvariantError(f"{failures} documents failed the oracle round-trip")
    return EXIT_OK


def cmd_coverage(args) -> int:
    docs = load_corpus(args.corpus)
    dictionary = BilingualDictionary.from_lines(read_text(args.dictionary).splitlines())
    report = coverage_report(docs, dictionary)
    print(report.header())
    print(report.row(args.name or Path(args.corpus).name))
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlrst", description="Multilingual RST discourse parsing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    h = sub.add_parser("harmonize", help="convert raw treebank files into a harmonized corpus")
    h.add_argument("manifest", type=Path, help="TSV: doc_id, tree file, conllu file or '-', language")
    h.add_argument("--out", required=True, type=Path)
    h.add_argument("--name", help="corpus name for the statistics report")
    h.add_argument("--mapping", type=Path, help="relation mapping TSV (default: bundled table)")
    h.add_argument("--drop-first-segment", action="store_true",
                   help="discard each document's first segment (title) before harmonizing")
    h.set_defaults(func=cmd_harmonize)

    t = sub.add_parser("train", help="train a parser, with grid search unless a single point is given")
    t.add_argument("--config", type=Path, help="flat key = value file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    def split_args(q, default):
        q.add_argument("--split", choices=("train", "dev", "test", "all"), default=default)
        q.add_argument("--seed", type=int, default=1, help="seed of the corpus split")

    fmt_choices = ("table", "kv")
    pa = sub.add_parser("parse", help="parse a harmonized corpus with a trained model")
    pa.add_argument("--model", required=True, type=Path)
    pa.add_argument("--corpus", required=True, type=Path)
    pa.add_argument("--out", required=True, type=Path)
    pa.add_argument("--beam", type=int, help="beam width (default: the selected one)")
    pa.add_argument("--dictionaries", help="lang:path,... bilingual dictionaries")
    split_args(pa, "test")
    pa.set_defaults(func=cmd_parse)

    e = sub.add_parser("eval", help="score predicted trees against a harmonized corpus")
    e.add_argument("--pred", required=True, type=Path)
    e.add_argument("--gold", required=True, type=Path)
    e.add_argument("--name")
    e.add_argument("--format", choices=fmt_choices, default="table")
    split_args(e, "test")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="most-frequent-label right-branching baseline")
    b.add_argument("--corpus", required=True, type=Path)
    b.add_argument("--out", type=Path)
    b.add_argument("--format", choices=fmt_choices, default="table")
    split_args(b, "test")
    b.set_defaults(func=cmd_baseline)

    o = sub.add_parser("oracle-check", help="check that every gold tree survives oracle replay")
    o.add_argument("--corpus", required=True, type=Path)
    o.set_defaults(func=cmd_oracle_check)

    c = sub.add_parser("coverage", help="bilingual dictionary coverage of a corpus")
    c.add_argument("--corpus", required=True, type=Path)
    c.add_argument("--dictionary", required=True, type=Path)
    c.add_argument("--name")
    c.set_defaults(func=cmd_coverage)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mlrst: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as exc:
        print(f"mlrst: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DataError, ValueError, KeyError) as exc:
        print(f"mlrst: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"mlrst: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

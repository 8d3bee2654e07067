import random
from pathlib import Path

import pytest

from mlrst import cli
from mlrst.core import Pattern, Relation, from_bracketed
from mlrst.evaluate import right_branching
from treegen import CONSUMER_CONLLU, CONSUMER_DIS, random_document

NS_ELAB = (Pattern.NS, Relation.ELABORATION)


def make_corpus(directory: Path, docs, split=None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for doc in docs:
        cli.write_document(doc, directory)
    (directory / "corpus.tsv").write_text("".join(f"{d.id}\t{d.language}\n" for d in docs))
    if split:
        (directory / "split.tsv").write_text("".join(f"{i}\t{p}\n" for i, p in split.items()))
    return directory


def synthetic_docs(seed, n_docs, n_edus=4, language="en", prefix="d", tree_fn=None):
    rng = random.Random(seed)
    return [random_document(rng, n_edus, f"{prefix}{i}", tree=tree_fn(n_edus) if tree_fn else None,
                            language=language)
            for i in range(n_docs)]


def three_way(docs, n_train, n_dev):
    parts = {}
    for i, d in enumerate(docs):
        parts[d.id] = "train" if i < n_train else "dev" if i < n_train + n_dev else "test"
    return parts


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# --- harmonize --------------------------------------------------------------------------


def test_harmonize_manifest(tmp_path, capsys):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "1384.dis").write_text(CONSUMER_DIS)
    (raw / "1384.conllu").write_text(CONSUMER_CONLLU)
    (raw / "plain.dis").write_text(CONSUMER_DIS)
    (raw / "bad.dis").write_text("( Root (span 1 2) ( Nucleus (leaf 1) (rel2par span) (text _!a_!) )")
    (raw / "odd.xyz").write_text("")
    (raw / "manifest.tsv").write_text(
        "1384\t1384.dis\t1384.conllu\ten\n"
        "plain\tplain.dis\t-\ten\n"
        "bad\tbad.dis\t-\ten\n"
        "odd\todd.xyz\t-\ten\n")
    code, out, _ = run(capsys, "harmonize", raw / "manifest.tsv", "--out", tmp_path / "h", "--name", "toy")
    assert code == 0
    assert "2 trees written, 2 documents skipped" in out
    assert "skipped bad:" in out and "skipped odd:" in out
    docs = cli.load_corpus(tmp_path / "h")
    assert [d.id for d in docs] == ["1384", "plain"]
    assert str(docs[0].gold_tree) == str(docs[1].gold_tree)
    assert len(docs[0].tokens) == 31
    stats = (tmp_path / "h" / "stats.txt").read_text()
    assert "toy" in stats and "#CDU" in stats


def test_harmonize_empty_manifest(tmp_path, capsys):
    (tmp_path / "m.tsv").write_text("# nothing\n")
    code, _, err = run(capsys, "harmonize", tmp_path / "m.tsv", "--out", tmp_path / "h")
    assert code == cli.EXIT_DATA and "no documents" in err


def test_harmonize_all_failed(tmp_path, capsys):
    (tmp_path / "m.tsv").write_text("x\tmissing.dis\t-\ten\n")
    code, _, _ = run(capsys, "harmonize", tmp_path / "m.tsv", "--out", tmp_path / "h")
    assert code == cli.EXIT_DATA


# --- oracle-check / eval / baseline ------------------------------------------------------


def test_oracle_check(tmp_path, capsys):
    corpus = make_corpus(tmp_path / "c", synthetic_docs(0, 6, n_edus=7))
    code, out, _ = run(capsys, "oracle-check", "--corpus", corpus)
    assert code == 0 and "6/6 round-trips pass" in out


def test_eval_gold_against_gold(tmp_path, capsys):
    corpus = make_corpus(tmp_path / "c", synthetic_docs(1, 40, n_edus=3))
    code, out, _ = run(capsys, "eval", "--pred", corpus, "--gold", corpus, "--format", "kv")
    assert code == 0 and out.strip() == "span=100.00, nuc=100.00, rel=100.00"


def test_eval_missing_predictions(tmp_path, capsys):
    corpus = make_corpus(tmp_path / "c", synthetic_docs(1, 3), split={"d0": "test", "d1": "test", "d2": "train"})
    pred = tmp_path / "p"
    pred.mkdir()
    (pred / "d0.tree").write_text((corpus / "d0.tree").read_text())
    code, _, err = run(capsys, "eval", "--pred", pred, "--gold", corpus)
    assert code == cli.EXIT_DATA and "d1" in err


def test_baseline(tmp_path, capsys):
    docs = synthetic_docs(2, 4, n_edus=3, tree_fn=lambda n: right_branching(n, *NS_ELAB))
    corpus = make_corpus(tmp_path / "c", docs, split=three_way(docs, 2, 1))
    code, out, _ = run(capsys, "baseline", "--corpus", corpus, "--out", tmp_path / "b", "--format", "kv")
    assert code == 0
    assert "label NS-Elaboration" in out and "span=100.00, nuc=100.00, rel=100.00" in out
    assert from_bracketed((tmp_path / "b" / "d3.tree").read_text().strip()) == right_branching(3, *NS_ELAB)


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == cli.EXIT_USAGE
    code, _, err = run(capsys, "train", "--set", "mode=sideways")
    assert code == cli.EXIT_USAGE and "mode" in err


def test_coverage_command(tmp_path, capsys):
    corpus = make_corpus(tmp_path / "c", synthetic_docs(3, 2))
    (tmp_path / "dict.tsv").write_text("alpha\talpha-en\n")
    code, out, _ = run(capsys, "coverage", "--corpus", corpus, "--dictionary", tmp_path / "dict.tsv", "--name", "Xx")
    assert code == 0
    header, row = out.splitlines()
    assert "Size dict." in header and row.split()[:2] == ["Xx", "1"]


# --- configuration ----------------------------------------------------------------------------


def test_parse_config_and_overrides(tmp_path):
    cfg = cli.parse_config(
        ["# run", "mode = cross-plus-dev", "target = nl", "sources = en, es", "learning_rates = 0.01,0.02",
         "epochs = 3", "dictionaries = es:dict/es.tsv"],
        ["beams=1", "seed=9"], base=tmp_path)
    assert cfg.mode == "cross-plus-dev" and cfg.target == tmp_path / "nl"
    assert cfg.sources == [tmp_path / "en", tmp_path / "es"]
    assert cfg.learning_rates == [0.01, 0.02] and cfg.beams == [1] and cfg.seed == 9
    assert cfg.dictionaries == {"es": tmp_path / "dict/es.tsv"}
    assert not cfg.fixed_point


@pytest.mark.parametrize("lines", [
    ["mode = mono"],
    ["mode = cross-source-only"],
    ["mode = mono", "target = x", "epochs = 21"],
    ["mode = mono", "target = x", "colour = red"],
    ["mode = mono", "target = x", "beams ="],
    ["just words"],
])
def test_bad_configs(lines):
    with pytest.raises(cli.UsageError):
        cli.parse_config(lines)


# --- training ----------------------------------------------------------------------------------


def test_mono_with_empty_train_split(tmp_path, capsys):
    docs = synthetic_docs(4, 40, n_edus=3)
    corpus = make_corpus(tmp_path / "c", docs)
    code, _, err = run(capsys, "train", "--set", f"target={corpus}", "--set", "epochs=1",
                       "--set", f"model={tmp_path / 'm.bin'}")
    assert code == cli.EXIT_DATA and "no training documents" in err


def test_train_parse_eval_on_mfs_corpus(tmp_path, capsys):
    docs = synthetic_docs(5, 12, n_edus=4, tree_fn=lambda n: right_branching(n, *NS_ELAB))
    corpus = make_corpus(tmp_path / "c", docs, split=three_way(docs, 8, 2))
    model = tmp_path / "m.bin"
    code, out, _ = run(capsys, "train", "--set", f"target={corpus}", "--set", f"model={model}",
                       "--set", "learning_rates=0.02", "--set", "decays=0", "--set", "epochs=5",
                       "--set", "beams=1")
    assert code == 0 and "sha256" in out
    log = (tmp_path / "m.bin.log").read_text().splitlines()
    assert len(log) == 5 and all("loss=" in line and "rel=" in line for line in log)
    assert (tmp_path / "m.bin.dev.txt").read_text().startswith("selected lr=0.02 decay=0.0 epochs=5 beam=1")
    code, _, _ = run(capsys, "parse", "--model", model, "--corpus", corpus, "--out", tmp_path / "p")
    assert code == 0
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "p", "--gold", corpus, "--format", "kv")
    assert code == 0 and out.strip() == "span=100.00, nuc=100.00, rel=100.00"


def test_parse_rejects_corrupt_model(tmp_path, capsys):
    corpus = make_corpus(tmp_path / "c", synthetic_docs(6, 2), split={"d0": "test", "d1": "train"})
    (tmp_path / "m.bin").write_bytes(b"not a model")
    code, _, _ = run(capsys, "parse", "--model", tmp_path / "m.bin", "--corpus", corpus, "--out", tmp_path / "p")
    assert code == cli.EXIT_DATA


def test_tiny_grid(tmp_path, capsys):
    docs = synthetic_docs(7, 6, n_edus=3)
    corpus = make_corpus(tmp_path / "c", docs, split=three_way(docs, 4, 2))
    code, out, _ = run(capsys, "train", "--set", f"target={corpus}", "--set", f"model={tmp_path / 'm.bin'}",
                       "--set", "learning_rates=0.01,0.02", "--set", "decays=0", "--set", "epochs=2",
                       "--set", "beams=1,2")
    assert code == 0 and "selected" in out
    # 2 learning rates x 2 epochs x 2 beams
    assert len((tmp_path / "m.bin.log").read_text().splitlines()) == 8


def test_cross_source_only_never_reads_target(tmp_path, capsys, monkeypatch):
    source_docs = synthetic_docs(8, 5, language="es", prefix="s")
    source = make_corpus(tmp_path / "es", source_docs, split=three_way(source_docs, 3, 1))
    target = make_corpus(tmp_path / "nl", synthetic_docs(9, 40, language="nl", prefix="t"))
    monkeypatch.setattr(cli, "ACCESS_LOG", [])
    code, _, _ = run(capsys, "train", "--set", "mode=cross-source-only", "--set", f"target={target}",
                     "--set", f"sources={source}", "--set", f"model={tmp_path / 'm.bin'}",
                     "--set", "learning_rates=0.02", "--set", "decays=0", "--set", "epochs=1",
                     "--set", "beams=1")
    assert code == 0
    touched = cli.ACCESS_LOG
    assert touched and all(source.resolve() in p.parents for p in touched)
    assert not any(target.resolve() in p.parents for p in touched)


def test_cross_plus_dev_uses_all_source_documents(tmp_path):
    source_docs = synthetic_docs(10, 5, language="es", prefix="s")
    source = make_corpus(tmp_path / "es", source_docs, split=three_way(source_docs, 3, 1))
    target_docs = synthetic_docs(11, 4, language="nl", prefix="t")
    target = make_corpus(tmp_path / "nl", target_docs, split=three_way(target_docs, 0, 2))
    cfg = cli.parse_config([], ["mode=cross-plus-dev", f"target={target}", f"sources={source}"])
    train, dev = cli.training_data(cfg)
    assert sorted(d.id for d in train) == [f"s{i}" for i in range(5)]
    assert [d.id for d in dev] == ["t0", "t1"]

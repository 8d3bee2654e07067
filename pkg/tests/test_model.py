import math
import random

import numpy as np
import pytest

from mlrst import model as mdl
from mlrst.crosslingual import EmbeddingTable
from mlrst.features import FeatureExtractor
from mlrst.model import (
    AveragedSGD,
    ChecksumError,
    Example,
    Hyperparams,
    Model,
    TemplateMismatchError,
    grid_search,
    grid_size,
    learning_rate,
    make_examples,
    oracle_symbols,
)
from mlrst.transition import SHIFT
from treegen import random_document


def small_setup(seed=0, n_docs=3, n_edus=5):
    rng = random.Random(seed)
    docs = [random_document(rng, n_edus, f"d{i}") for i in range(n_docs)]
    pairs = list(oracle_symbols(docs))
    m = Model.build((s for s, _ in pairs), (a for _, a in pairs), Hyperparams(seed=seed))
    return m, make_examples(m, pairs), docs


def batch(examples, k):
    return np.stack([e.ids for e in examples[:k]]), np.array([e.gold for e in examples[:k]])


# --- forward ------------------------------------------------------------------------


def test_input_width_matches_template():
    m, _, _ = small_setup()
    # 7 EDU slots x (7 words x 50 + 4 pos x 16 + 4 + 6 + 7 flags x 2) + 2 labels x 50
    assert m.input_width == 7 * (7 * 50 + 4 * 16 + 4 + 6 + 7 * 2) + 2 * 50 == 3166


def test_forward_is_distribution():
    m, ex, _ = small_setup()
    ids, _ = batch(ex, 5)
    p = m.forward(ids)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_zero_weights_give_uniform_output():
    m, ex, _ = small_setup()
    for k in m.params:
        m.params[k][...] = 0.0
    ids, gold = batch(ex, 5)
    assert np.allclose(m.forward(ids), 1.0 / len(m.actions))
    assert math.isclose(m.loss(ids, gold), math.log(len(m.actions)), rel_tol=1e-12)


def test_confident_model_has_zero_loss():
    m, ex, _ = small_setup()
    for k in ("W3", "b3"):
        m.params[k][...] = 0.0
    gold = ex[0].gold
    m.params["b3"][gold] = 1e3
    assert m.loss(ex[0].ids, np.array([gold])) == pytest.approx(0.0, abs=1e-12)


def test_unseen_symbols_map_to_unk():
    m, ex, docs = small_setup()
    symbols = [(s, t, "never-seen-value") for s, t, _ in next(oracle_symbols(docs[:1]))[0]]
    assert np.all(m.encode(symbols) == 0)
    assert np.isfinite(m.forward(m.encode(symbols))).all()


def test_unreferenced_rows_do_not_change_output():
    m, ex, _ = small_setup()
    ids = ex[0].ids  # initial configuration: stack slots are NONE
    before = m.forward(ids)
    used = set(ids.tolist())
    table = m.params["emb.word"]
    unused = [r for r in range(table.shape[0]) if r not in used][:5]
    table[unused] += 10.0
    assert np.array_equal(m.forward(ids), before)


def test_forward_is_deterministic():
    m, ex, _ = small_setup()
    ids, _ = batch(ex, 4)
    assert np.array_equal(m.forward(ids), m.forward(ids))


# --- gradients ----------------------------------------------------------------------


def _numeric(m, ids, gold, name, index, h=1e-5):
    p = {k: v.copy() for k, v in m.params.items()}
    p[name][index] += h
    up = m.loss(ids, gold, p)
    p[name][index] -= 2 * h
    down = m.loss(ids, gold, p)
    return (up - down) / (2 * h)


def _analytic_full(m, name, dense, sparse):
    if name in dense:
        return dense[name]
    full = np.zeros_like(m.params[name])
    rows, grad = sparse[name]
    full[rows] = grad
    return full


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_gradients_match_finite_differences(seed):
    m, ex, _ = small_setup(seed)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ex))[:5]
    ids = np.stack([ex[i].ids for i in order])
    gold = np.array([ex[i].gold for i in order])
    _, dense, sparse = m.gradients(ids, gold)
    for name in sorted(m.params):
        analytic = _analytic_full(m, name, dense, sparse)
        if name.startswith("emb."):
            rows = sparse[name][0]
            candidates = [(r, c) for r in rows for c in range(analytic.shape[1])]
        else:
            candidates = list(np.ndindex(analytic.shape))
        picks = [candidates[i] for i in rng.choice(len(candidates), min(12, len(candidates)), replace=False)]
        num = np.array([_numeric(m, ids, gold, name, idx) for idx in picks])
        ana = np.array([analytic[idx] for idx in picks])
        rel = np.abs(num - ana) / np.maximum(np.abs(num) + np.abs(ana), 1e-8)
        assert rel.max() < 1e-4, (name, rel.max())


# --- averaged SGD ---------------------------------------------------------------------


def test_learning_rate_schedule():
    assert learning_rate(0.02, 1e-5, 100_000) == pytest.approx(0.01)
    assert learning_rate(0.03, 0.0, 10**9) == 0.03


def test_average_equals_mean_of_snapshots():
    m, ex, _ = small_setup()
    opt = AveragedSGD(m, 0.05, 1e-3)
    snapshots = []
    for e in ex[:12]:
        opt.step(e)
        snapshots.append({k: v.copy() for k, v in m.params.items()})
    avg = opt.averaged()
    for k in m.params:
        expected = np.mean([s[k] for s in snapshots], axis=0)
        assert np.allclose(avg[k], expected, rtol=0, atol=1e-12)


def test_zero_learning_rate_keeps_parameters():
    m, ex, _ = small_setup()
    initial = {k: v.copy() for k, v in m.params.items()}
    trained = mdl.train(m, ex, Hyperparams(0.0, 0.0, 1, 1, 1))
    for k in initial:
        assert np.array_equal(m.params[k], initial[k])
        assert np.array_equal(trained.params[k], initial[k])


def test_training_is_deterministic():
    a, ex_a, _ = small_setup(5)
    b, ex_b, _ = small_setup(5)
    hyper = Hyperparams(0.02, 1e-6, 2, 1, 7)
    assert mdl.train(a, ex_a, hyper).checksum() == mdl.train(b, ex_b, hyper).checksum()


def test_empty_corpus():
    m, _, _ = small_setup()
    with pytest.raises(mdl.ModelError):
        mdl.train(m, [], Hyperparams())


def test_hyperparameter_ranges():
    with pytest.raises(ValueError):
        Hyperparams(epochs=21)
    with pytest.raises(ValueError):
        Hyperparams(beam=0)


def test_pretrained_word_table_stays_fixed():
    rng = random.Random(3)
    docs = [random_document(rng, 4, f"d{i}") for i in range(2)]
    words = sorted({t.form.lower() for d in docs for t in d.tokens})[:20]
    vectors = np.random.default_rng(0).normal(size=(len(words), 50))
    table = EmbeddingTable(words, vectors)
    model, _ = mdl.train_on_documents(docs, Hyperparams(0.05, 0, 2, 1, 1), FeatureExtractor(),
                                      pretrained_words=table)
    word = model.params["emb.word"]
    assert np.array_equal(word[2:], vectors)
    assert np.array_equal(word[0], table.average)
    assert "word" in model.frozen


# --- grid search ------------------------------------------------------------------------


def test_full_grid_size():
    assert grid_size() == 3 * 4 * 20 * 6 == 1440


def test_one_point_grid():
    _, _, docs = small_setup(n_docs=4, n_edus=4)
    result = grid_search(docs[:3], docs[3:], lrs=[0.02], decays=[0.0], max_epochs=1, beams=[1])
    assert result.hyper == Hyperparams(0.02, 0.0, 1, 1, 1)
    assert len(result.log) == 1 and "span=" in result.log[0]


def test_selection_prefers_relation_then_nuclearity_then_span_then_small_beam():
    assert mdl._better((10, 10, 50), 8, (90, 90, 40), 1)
    assert mdl._better((10, 60, 50), 8, (90, 50, 50), 1)
    assert mdl._better((60, 50, 50), 8, (50, 50, 50), 1)
    assert mdl._better((50, 50, 50), 1, (50, 50, 50), 4)
    assert not mdl._better((50, 50, 50), 4, (50, 50, 50), 1)


# --- serialization ------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    m, ex, _ = small_setup()
    m.hyper = Hyperparams(0.03, 1e-7, 12, 4, 9)
    path = tmp_path / "m.bin"
    mdl.save(m, path)
    back = mdl.load(path)
    ids, _ = batch(ex, 5)
    assert np.array_equal(back.forward(ids), m.forward(ids))
    assert back.checksum() == m.checksum()
    assert back.vocabs == m.vocabs and back.actions == m.actions and back.hyper == m.hyper


def test_float32_model(tmp_path):
    m, ex, _ = small_setup()
    mdl.save(m, tmp_path / "m32.bin", dtype=np.float32)
    back = mdl.load(tmp_path / "m32.bin")
    ids, _ = batch(ex, 3)
    assert np.allclose(back.forward(ids), m.forward(ids), atol=1e-5)


def test_truncated_file(tmp_path):
    m, _, _ = small_setup()
    path = tmp_path / "m.bin"
    mdl.save(m, path)
    data = path.read_bytes()
    path.write_bytes(data[:-100])
    with pytest.raises(ChecksumError):
        mdl.load(path)
    path.write_bytes(data[:10])
    with pytest.raises(ChecksumError):
        mdl.load(path)


def test_corrupted_byte(tmp_path):
    m, _, _ = small_setup()
    path = tmp_path / "m.bin"
    mdl.save(m, path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        mdl.load(path)


def test_template_mismatch_names_versions(tmp_path):
    m, _, _ = small_setup()
    m.template_version = "edu3x10/v0"
    path = tmp_path / "m.bin"
    mdl.save(m, path)
    with pytest.raises(TemplateMismatchError) as info:
        mdl.load(path)
    assert "edu3x10/v0" in str(info.value) and mdl.TEMPLATE_VERSION in str(info.value)


def test_encode_rejects_wrong_length():
    m, _, _ = small_setup()
    with pytest.raises(TemplateMismatchError):
        m.encode([("S0.first1", "word", "x")])


def test_examples_skip_unknown_actions():
    m, _, docs = small_setup()
    shift_only = Model(m.vocabs, [SHIFT], seed=0)
    pairs = list(oracle_symbols(docs[:1]))
    kept = make_examples(shift_only, pairs)
    assert len(kept) == sum(a.is_shift for _, a in pairs) == docs[0].n_edus
    assert all(isinstance(e, Example) and e.gold == 0 for e in kept)

"""Feed-forward action scorer trained with averaged SGD.

Symbols are embedded with one table per symbol type, concatenated, passed
through two ReLU layers of width 128 and a softmax over the action vocabulary.
Everything is plain numpy in float64; gradients are written out by hand.
"""

from __future__ import annotations

import hashlib
import io
import itertools
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from mlrst.core import Document, RstTree
from mlrst.features import LABEL, NONE, SYMBOL_TYPES, TEMPLATE, TEMPLATE_VERSION, WORD, FeatureExtractor
from mlrst.transition import SHIFT, Action, Configuration, oracle_configurations

log = logging.getLogger(__name__)

EMBED_DIMS = {"word": 50, "pos": 16, "position": 6, "length": 4, "flag": 2, LABEL: 50}
HIDDEN = 128
EMBED_INIT = 1.0
UNK = "<UNK>"
MAGIC = b"MLRSTMDL"
FORMAT_VERSION = 1

LEARNING_RATES = (0.01, 0.02, 0.03)
DECAYS = (1e-5, 1e-6, 1e-7, 0.0)
EPOCHS = tuple(range(1, 21))
BEAMS = (1, 2, 4, 8, 16, 32)


class ModelError(ValueError):
    pass


class ChecksumError(ModelError):
    pass


class TemplateMismatchError(ModelError):
    pass


@dataclass
class Hyperparams:
    learning_rate: float = 0.02
    decay: float = 0.0
    epochs: int = 10
    beam: int = 1
    seed: int = 1

    def __post_init__(self):
        if not 1 <= self.epochs <= 20:
            raise ValueError(f"epochs must be in [1, 20], got {self.epochs}")
        if self.beam < 1:
            raise ValueError("beam must be at least 1")


def learning_rate(eta0: float, decay: float, t: int) -> float:
    """Step size after ``t`` updates."""
    return eta0 / (1.0 + decay * t)


class Model:
    """Embedding tables, two hidden layers and a softmax layer.

    ``params`` holds the live (trained) parameters; after :func:`train` the
    model's inference parameters are the running averages.
    """

    def __init__(
        self,
        vocabs: dict[str, list[str]],
        actions: Sequence[Action],
        params: Optional[dict[str, np.ndarray]] = None,
        frozen: Iterable[str] = (),
        hyper: Optional[Hyperparams] = None,
        seed: int = 0,
        template_version: str = TEMPLATE_VERSION,
    ):
        self.template_version = template_version
        self.vocabs = {t: list(v) for t, v in vocabs.items()}
        self.index = {t: {s: i for i, s in enumerate(v)} for t, v in self.vocabs.items()}
        self.actions = list(actions)
        self.action_index = {a: i for i, a in enumerate(self.actions)}
        self.frozen = set(frozen)
        self.hyper = hyper or Hyperparams()
        self.type_slots = {
            t: np.array([i for i, (_, typ) in enumerate(TEMPLATE) if typ == t], dtype=np.int64)
            for t in SYMBOL_TYPES
        }
        self.input_width = sum(len(self.type_slots[t]) * EMBED_DIMS[t] for t in SYMBOL_TYPES)
        self.params = params if params is not None else self._init(np.random.default_rng(seed))

    # -- construction ---------------------------------------------------------
    def _init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        # U(-0.01, 0.01) everywhere leaves a 2-layer ReLU net nearly flat for
        # 20 epochs at lr 0.02; Glorot-uniform layers + U(-1, 1) embeddings train.
        params = {}
        for t in SYMBOL_TYPES:
            params[f"emb.{t}"] = rng.uniform(-EMBED_INIT, EMBED_INIT,
                                             size=(len(self.vocabs[t]), EMBED_DIMS[t]))

        def glorot(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        params["W1"] = glorot(self.input_width, HIDDEN)
        params["b1"] = np.zeros(HIDDEN)
        params["W2"] = glorot(HIDDEN, HIDDEN)
        params["b2"] = np.zeros(HIDDEN)
        params["W3"] = glorot(HIDDEN, len(self.actions))
        params["b3"] = np.zeros(len(self.actions))
        return params

    @classmethod
    def build(
        cls,
        symbol_sequences: Iterable[Sequence[tuple[str, str, str]]],
        actions: Iterable[Action],
        hyper: Optional[Hyperparams] = None,
        pretrained_words: Optional["object"] = None,
    ) -> "Model":
        """Create a model whose vocabularies cover the given training data.

        ``pretrained_words`` is an :class:`mlrst.crosslingual.EmbeddingTable`;
        when given, the word table is copied from it and kept fixed.
        """
        seen: dict[str, set[str]] = {t: set() for t in SYMBOL_TYPES}
        for seq in symbol_sequences:
            for _, typ, value in seq:
                if value != NONE:
                    seen[typ].add(value)
        vocabs = {t: [UNK, NONE] + sorted(seen[t]) for t in SYMBOL_TYPES}
        vocab_actions = [SHIFT] + sorted({a for a in actions if not a.is_shift}, key=str)
        hyper = hyper or Hyperparams()
        frozen: list[str] = []
        if pretrained_words is not None:
            vocabs[WORD] = [UNK, NONE] + list(pretrained_words.words)
            frozen.append(WORD)
        model = cls(vocabs, vocab_actions, frozen=frozen, hyper=hyper, seed=hyper.seed)
        if pretrained_words is not None:
            if pretrained_words.dim != EMBED_DIMS[WORD]:
                raise ModelError(f"pretrained vectors have {pretrained_words.dim} dims, expected {EMBED_DIMS[WORD]}")
            table = np.vstack([pretrained_words.average, np.zeros(pretrained_words.dim),
                               pretrained_words.vectors]).astype(np.float64)
            model.params[f"emb.{WORD}"] = table
        return model

    def copy(self) -> "Model":
        return Model(self.vocabs, self.actions, {k: v.copy() for k, v in self.params.items()},
                     self.frozen, Hyperparams(**asdict(self.hyper)),
                     template_version=self.template_version)

    # -- encoding -----------------------------------------------------------
    def encode(self, symbols: Sequence[tuple[str, str, str]]) -> np.ndarray:
        """Map a symbol sequence to per-slot row indices (UNK for unseen values)."""
        if len(symbols) != len(TEMPLATE):
            raise TemplateMismatchError(
                f"symbol sequence has {len(symbols)} slots, template {self.template_version} has {len(TEMPLATE)}")
        ids = np.empty(len(symbols), dtype=np.int64)
        for i, (_, typ, value) in enumerate(symbols):
            ids[i] = self.index[typ].get(value, 0)
        return ids

    def action_id(self, action: Action) -> Optional[int]:
        return self.action_index.get(action)

    # -- forward / backward -------------------------------------------------------
    def _embed(self, ids: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
        ids = np.atleast_2d(ids)
        parts = [params[f"emb.{t}"][ids[:, self.type_slots[t]]].reshape(len(ids), -1)
                 for t in SYMBOL_TYPES]
        return np.concatenate(parts, axis=1)

    def logits(self, ids: np.ndarray, params: Optional[dict[str, np.ndarray]] = None) -> np.ndarray:
        p = params or self.params
        x = self._embed(ids, p)
        h1 = np.maximum(x @ p["W1"] + p["b1"], 0.0)
        h2 = np.maximum(h1 @ p["W2"] + p["b2"], 0.0)
        return h2 @ p["W3"] + p["b3"]

    def log_probs(self, ids: np.ndarray, params=None) -> np.ndarray:
        z = self.logits(ids, params)
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def forward(self, ids: np.ndarray, params=None) -> np.ndarray:
        """Probability distribution over the action vocabulary (one row per input)."""
        return np.exp(self.log_probs(ids, params))

    def loss(self, ids: np.ndarray, gold: np.ndarray, params=None) -> float:
        """Mean negative log-likelihood of the gold actions."""
        lp = self.log_probs(ids, params)
        gold = np.atleast_1d(gold)
        return float(-lp[np.arange(len(gold)), gold].mean())

    def gradients(self, ids: np.ndarray, gold: np.ndarray, params=None):
        """Loss and gradient of the mean NLL; embedding gradients are row-sparse.

        Returns ``(loss, dense, sparse)`` where ``dense`` maps layer names to
        arrays and ``sparse`` maps ``emb.<type>`` to ``(rows, row_gradients)``.
        """
        p = params or self.params
        ids = np.atleast_2d(ids)
        gold = np.atleast_1d(gold)
        b = len(gold)
        x = self._embed(ids, p)
        z1 = x @ p["W1"] + p["b1"]
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ p["W2"] + p["b2"]
        h2 = np.maximum(z2, 0.0)
        z3 = h2 @ p["W3"] + p["b3"]
        z3 = z3 - z3.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z3).sum(axis=1, keepdims=True))
        lp = z3 - lse
        loss = float(-lp[np.arange(b), gold].mean())

        d3 = np.exp(lp)
        d3[np.arange(b), gold] -= 1.0
        d3 /= b
        dense = {"W3": h2.T @ d3, "b3": d3.sum(axis=0)}
        dh2 = d3 @ p["W3"].T
        d2 = dh2 * (z2 > 0)
        dense["W2"] = h1.T @ d2
        dense["b2"] = d2.sum(axis=0)
        dh1 = d2 @ p["W2"].T
        d1 = dh1 * (z1 > 0)
        dense["W1"] = x.T @ d1
        dense["b1"] = d1.sum(axis=0)
        dx = d1 @ p["W1"].T

        sparse = {}
        offset = 0
        for t in SYMBOL_TYPES:
            slots = self.type_slots[t]
            width = len(slots) * EMBED_DIMS[t]
            block = dx[:, offset:offset + width].reshape(-1, EMBED_DIMS[t])
            offset += width
            if t in self.frozen:
                continue
            rows = ids[:, slots].ravel()
            uniq, inverse = np.unique(rows, return_inverse=True)
            grad = np.zeros((len(uniq), EMBED_DIMS[t]))
            np.add.at(grad, inverse, block)
            sparse[f"emb.{t}"] = (uniq, grad)
        return loss, dense, sparse

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name], dtype=np.float64).tobytes())
        return digest.hexdigest()


# --- training --------------------------------------------------------------------

@dataclass
class Example:
    ids: np.ndarray
    gold: int


def oracle_symbols(docs: Iterable[Document], extractor: Optional[FeatureExtractor] = None):
    """Yield ``(symbols, gold action)`` for every oracle step of every gold tree."""
    extractor = extractor or FeatureExtractor()
    for doc in docs:
        if doc.gold_tree is None:
            raise ModelError(f"document {doc.id} has no gold tree")
        for config, action in oracle_configurations(doc.gold_tree):
            yield extractor(config, doc), action


def make_examples(model: Model, pairs: Iterable[tuple[Sequence, Action]]) -> list[Example]:
    out = []
    for symbols, action in pairs:
        gid = model.action_id(action)
        if gid is None:
            continue  # label never seen in training
        out.append(Example(model.encode(symbols), gid))
    return out


class AveragedSGD:
    """Per-example SGD with a running average of all parameter snapshots.

    The average is maintained lazily: with ``acc += (s - 1) * delta_s`` over
    updates ``s = 1..T``, the mean of the post-update snapshots is
    ``w_T - acc / T``, so sparse updates stay sparse.
    """

    def __init__(self, model: Model, eta0: float, decay: float):
        self.model = model
        self.eta0 = eta0
        self.decay = decay
        self.steps = 0
        self.acc = {k: np.zeros_like(v) for k, v in model.params.items()}

    def step(self, example: Example) -> float:
        model = self.model
        loss, dense, sparse = model.gradients(example.ids, np.array([example.gold]))
        eta = learning_rate(self.eta0, self.decay, self.steps)
        self.steps += 1
        weight = self.steps - 1
        for name, grad in dense.items():
            delta = -eta * grad
            model.params[name] += delta
            if weight:
                self.acc[name] += weight * delta
        for name, (rows, grad) in sparse.items():
            delta = -eta * grad
            model.params[name][rows] += delta
            if weight:
                self.acc[name][rows] += weight * delta
        return loss

    def averaged(self) -> dict[str, np.ndarray]:
        if self.steps == 0:
            return {k: v.copy() for k, v in self.model.params.items()}
        return {k: v - self.acc[k] / self.steps for k, v in self.model.params.items()}


EpochCallback = Callable[[int, Model, float], None]


def train(
    model: Model,
    examples: Sequence[Example],
    hyper: Hyperparams,
    on_epoch: Optional[EpochCallback] = None,
) -> Model:
    """Train in place and return a model holding the averaged parameters.

    ``on_epoch(epoch, averaged_model, mean_loss)`` is called after each epoch.
    """
    if not examples:
        raise ModelError("cannot train on an empty corpus")
    rng = np.random.default_rng(hyper.seed)
    opt = AveragedSGD(model, hyper.learning_rate, hyper.decay)
    averaged = model
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(examples))
        total = 0.0
        for i in order:
            total += opt.step(examples[i])
        averaged = model.copy()
        averaged.params = opt.averaged()
        averaged.hyper = Hyperparams(**{**asdict(hyper), "epochs": epoch})
        mean_loss = total / len(examples)
        log.info("epoch %d loss %.4f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, averaged, mean_loss)
    return averaged


def accuracy(model: Model, examples: Sequence[Example]) -> float:
    if not examples:
        return 0.0
    ids = np.stack([e.ids for e in examples])
    pred = model.logits(ids).argmax(axis=1)
    return float(np.mean(pred == np.array([e.gold for e in examples])))


def train_on_documents(
    docs: Sequence[Document],
    hyper: Hyperparams,
    extractor: Optional[FeatureExtractor] = None,
    pretrained_words=None,
    on_epoch: Optional[EpochCallback] = None,
) -> tuple[Model, list[Example]]:
    pairs = list(oracle_symbols(docs, extractor))
    model = Model.build((s for s, _ in pairs), (a for _, a in pairs), hyper, pretrained_words)
    examples = make_examples(model, pairs)
    return train(model, examples, hyper, on_epoch), examples


# --- grid search -----------------------------------------------------------------

@dataclass
class GridResult:
    hyper: Hyperparams
    scores: tuple[float, float, float]  # span, nuclearity, relation
    model: Model
    log: list[str] = field(default_factory=list)


def grid_size(lrs=LEARNING_RATES, decays=DECAYS, epochs=EPOCHS, beams=BEAMS) -> int:
    return len(lrs) * len(decays) * len(epochs) * len(beams)


def _better(scores, beam, best_scores, best_beam) -> bool:
    # relation, then nuclearity, then span, then the smaller beam
    key = (scores[2], scores[1], scores[0], -beam)
    return best_scores is None or key > (best_scores[2], best_scores[1], best_scores[0], -best_beam)


def grid_search(
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    lrs: Sequence[float] = LEARNING_RATES,
    decays: Sequence[float] = DECAYS,
    max_epochs: int = 20,
    beams: Sequence[int] = BEAMS,
    seed: int = 1,
    extractor: Optional[FeatureExtractor] = None,
    pretrained_words=None,
) -> GridResult:
    """Select hyperparameters by dev-set scores.

    One training run per (learning rate, decay); every epoch's averaged model
    is decoded with every beam width, so epochs and beams do not need separate
    runs.
    """
    from mlrst.decode import parse
    from mlrst.evaluate import score

    extractor = extractor or FeatureExtractor()
    pairs = list(oracle_symbols(train_docs, extractor))
    gold = [d.gold_tree for d in dev_docs]
    best: Optional[GridResult] = None
    lines: list[str] = []
    for lr, decay in itertools.product(lrs, decays):
        hyper = Hyperparams(lr, decay, max_epochs, 1, seed)
        model = Model.build((s for s, _ in pairs), (a for _, a in pairs), hyper, pretrained_words)
        examples = make_examples(model, pairs)

        def evaluate_epoch(epoch: int, averaged: Model, mean_loss: float) -> None:
            nonlocal best
            for beam in beams:
                pred = [parse(d, averaged, beam, extractor) for d in dev_docs]
                s = score(pred, gold)
                lines.append(
                    f"lr={lr} decay={decay} epoch={epoch} beam={beam} loss={mean_loss:.4f} "
                    f"span={s[0]:.2f} nuc={s[1]:.2f} rel={s[2]:.2f}")
                log.info(lines[-1])
                if _better(s, beam, best.scores if best else None, best.hyper.beam if best else 0):
                    chosen = Hyperparams(lr, decay, epoch, beam, seed)
                    snapshot = averaged.copy()
                    snapshot.hyper = chosen
                    best = GridResult(chosen, s, snapshot)

        train(model, examples, hyper, evaluate_epoch)
    assert best is not None
    best.log = lines
    return best


# --- serialization ---------------------------------------------------------------

def save(model: Model, path: Union[str, Path], dtype=np.float64) -> None:
    """Write the model as magic, JSON header, raw parameter blocks and a SHA-256 trailer."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ModelError("parameters are stored as float64 or float32")
    names = sorted(model.params)
    header = {
        "format": FORMAT_VERSION,
        "template": model.template_version,
        "dims": EMBED_DIMS,
        "hidden": HIDDEN,
        "vocabs": model.vocabs,
        "actions": [str(a) for a in model.actions],
        "frozen": sorted(model.frozen),
        "hyper": asdict(model.hyper),
        "dtype": dtype.str,
        "blocks": [[n, list(model.params[n].shape)] for n in names],
    }
    head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for n in names:
        buf.write(np.ascontiguousarray(model.params[n], dtype=dtype.newbyteorder("<")).tobytes())
    payload = buf.getvalue()
    Path(path).write_bytes(payload + hashlib.sha256(payload).digest())


def load(path: Union[str, Path], expect_template: str = TEMPLATE_VERSION) -> Model:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + 32:
        raise ChecksumError(f"{path}: file too short, checksum cannot match")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupted file)")
    if not payload.startswith(MAGIC):
        raise ModelError(f"{path}: not a model file")
    (hlen,) = struct.unpack_from("<I", payload, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(payload[start:start + hlen].decode("utf-8"))
    if header["format"] != FORMAT_VERSION:
        raise ModelError(f"model format {header['format']} not supported (expected {FORMAT_VERSION})")
    if header["template"] != expect_template:
        raise TemplateMismatchError(
            f"model was trained with feature template {header['template']}, "
            f"this build uses {expect_template}")
    dtype = np.dtype(header["dtype"])
    offset = start + hlen
    params = {}
    for name, shape in header["blocks"]:
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        params[name] = block.reshape(shape).astype(np.float64)
        offset += count * dtype.itemsize
    actions = [Action.parse(a) for a in header["actions"]]
    return Model(header["vocabs"], actions, params, header["frozen"],
                 Hyperparams(**header["hyper"]), template_version=header["template"])

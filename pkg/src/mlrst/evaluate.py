"""Span / Nuclearity / Relation scoring and the most-frequent-label baseline."""

from __future__ import annotations

import random
from collections import Counter
from typing import Sequence, TypeVar

from mlrst.core import Internal, Leaf, Pattern, Relation, RstTree, internal_nodes

T = TypeVar("T")

TEST_SIZE = 38
DEV_SIZE = 25
MIN_TRAIN = 100


class EvaluationError(ValueError):
    pass


def constituents(tree: RstTree) -> set[tuple[tuple[int, int], Pattern, Relation]]:
    """(span, pattern, relation) for every internal node, root included."""
    return {(n.span, n.pattern, n.relation) for n in internal_nodes(tree)}


def match_counts(pred: RstTree, gold: RstTree) -> tuple[int, int, int, int, int]:
    """Matches on span, nuclearity and relation, plus predicted and gold totals."""
    if pred.span != gold.span:
        raise EvaluationError(f"EDU count mismatch: {pred.span[1]} vs {gold.span[1]}")
    p, g = constituents(pred), constituents(gold)
    span = len({c[0] for c in p} & {c[0] for c in g})
    nuc = len({c[:2] for c in p} & {c[:2] for c in g})
    rel = len(p & g)
    return span, nuc, rel, len(p), len(g)


def _f1(matches: int, n_pred: int, n_gold: int) -> float:
    if n_pred == 0 and n_gold == 0:
        return 100.0
    if matches == 0:
        return 0.0
    precision = matches / n_pred
    recall = matches / n_gold
    return 100.0 * 2 * precision * recall / (precision + recall)


def score(pred: Sequence[RstTree], gold: Sequence[RstTree]) -> tuple[float, float, float]:
    """Micro-averaged (Span, Nuclearity, Relation) F1 in percent."""
    if len(pred) != len(gold):
        raise EvaluationError(f"{len(pred)} predicted trees for {len(gold)} gold trees")
    totals = [0, 0, 0, 0, 0]
    for p, g in zip(pred, gold):
        for i, v in enumerate(match_counts(p, g)):
            totals[i] += v
    span, nuc, rel, n_pred, n_gold = totals
    return (_f1(span, n_pred, n_gold), _f1(nuc, n_pred, n_gold), _f1(rel, n_pred, n_gold))


def format_scores(rows: dict[str, tuple[float, float, float]]) -> str:
    """Aligned text table with one row per corpus/system."""
    width = max([len(k) for k in rows] + [6])
    lines = [f"{'':<{width}} {'Span':>6} {'Nuc':>6} {'Rel':>6}"]
    for name, (s, n, r) in rows.items():
        lines.append(f"{name:<{width}} {s:>6.1f} {n:>6.1f} {r:>6.1f}")
    return "\n".join(lines) + "\n"


def format_kv(scores: tuple[float, float, float]) -> str:
    return f"span={scores[0]:.2f}, nuc={scores[1]:.2f}, rel={scores[2]:.2f}"


def right_branching(n_edus: int, pattern: Pattern, relation: Relation) -> RstTree:
    if n_edus < 1:
        raise EvaluationError("a document needs at least one EDU")
    node: RstTree = Leaf(n_edus - 1)
    for i in range(n_edus - 2, -1, -1):
        node = Internal(Leaf(i), node, pattern, relation)
    return node


def mfs_baseline(doc, label: tuple[Pattern, Relation]) -> RstTree:
    """Right-branching tree with every node carrying ``label``."""
    n = doc if isinstance(doc, int) else doc.n_edus
    return right_branching(n, *label)


def most_frequent_label(trees: Sequence[RstTree]) -> tuple[Pattern, Relation]:
    """Modal (pattern, relation) over all internal nodes; ties go to the smallest ``NN-Rel`` string."""
    counts = Counter((n.pattern, n.relation) for t in trees for n in internal_nodes(t))
    if not counts:
        raise EvaluationError("no internal nodes in the corpus")
    top = max(counts.values())
    return min((lab for lab, c in counts.items() if c == top), key=lambda lab: f"{lab[0]}-{lab[1]}")


def split_corpus(docs: Sequence[T], seed: int) -> tuple[list[T], list[T], list[T]]:
    """Seeded (train, dev, test) split: 38 test documents, then 25 dev if at
    least 100 remain for training, otherwise everything else is dev."""
    if len(docs) < TEST_SIZE + 1:
        raise EvaluationError(f"need at least {TEST_SIZE + 1} documents, got {len(docs)}")
    order = list(docs)
    random.Random(seed).shuffle(order)
    test, rest = order[:TEST_SIZE], order[TEST_SIZE:]
    if len(rest) - DEV_SIZE >= MIN_TRAIN:
        dev, train = rest[:DEV_SIZE], rest[DEV_SIZE:]
    else:
        dev, train = rest, []
    return train, dev, test

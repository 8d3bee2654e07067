import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlrst.core import (
    Internal,
    Leaf,
    Pattern,
    Relation,
    from_bracketed,
    head_edu,
    iter_nodes,
    leaves,
    read_edu_sidecar,
    span_of,
    to_bracketed,
    validate_tree,
    write_edu_sidecar,
)
from treegen import consumer_doc, consumer_tree, random_tree


def test_leaf_span():
    assert span_of(Leaf(3)) == (3, 4)


def test_adjacent_leaves_span():
    assert span_of(Internal(Leaf(0), Leaf(1), Pattern.NN, Relation.JOINT)) == (0, 2)


def test_consumer_example_root_span():
    assert span_of(consumer_tree()) == (0, 3)


def test_relation_inventory_is_closed():
    assert len(Relation) == 18
    assert Relation.parse("manner-means") is Relation.MANNER_MEANS
    with pytest.raises(ValueError):
        Relation.parse("List")


def test_validate_consumer_example():
    assert validate_tree(consumer_tree(), 3) == []


def test_validate_non_adjacent():
    tree = Internal(Leaf(0), Leaf(2), Pattern.NS, Relation.ELABORATION)
    problems = validate_tree(tree, 3)
    assert any("non-adjacent span" in p for p in problems)


def test_validate_two_satellites():
    tree = Internal(Leaf(0), Leaf(1), "SS", Relation.ELABORATION)
    assert any("two satellites" in p for p in validate_tree(tree, 2))


def test_validate_reports_all_problems():
    bad = Internal(Internal(Leaf(0), Leaf(2), "SS", Relation.JOINT), Leaf(4), Pattern.NN, Relation.JOINT)
    problems = validate_tree(bad, 4)
    assert len(problems) >= 3


def test_validate_coverage():
    tree = Internal(Leaf(0), Leaf(1), Pattern.NN, Relation.JOINT)
    assert validate_tree(tree, 3)


def test_head_edu_leaf():
    assert head_edu(Leaf(5)) == 5


def test_head_edu_consumer_example():
    inner = consumer_tree().left
    assert head_edu(inner) == 0  # NN: leftmost nucleus
    assert head_edu(consumer_tree()) == 0


def test_head_edu_sn():
    tree = Internal(Leaf(0), Internal(Leaf(1), Leaf(2), Pattern.NN, Relation.LIST if hasattr(Relation, "LIST") else Relation.JOINT), Pattern.SN, Relation.BACKGROUND)
    assert head_edu(tree) == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10**6))
def test_head_edu_follows_nuclei(n, seed):
    tree = random_tree(random.Random(seed), n)
    h = head_edu(tree)
    assert tree.span[0] <= h < tree.span[1]
    node = tree
    while isinstance(node, Internal):
        # the head lies in a nucleus child at every level
        if node.pattern is Pattern.SN:
            assert node.right.span[0] <= h < node.right.span[1]
            node = node.right
        else:
            assert node.left.span[0] <= h < node.left.span[1]
            node = node.left


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(0, 10**6))
def test_random_trees_are_contiguous(n, seed):
    tree = random_tree(random.Random(seed), n)
    assert validate_tree(tree, n) == []
    for node in iter_nodes(tree):
        if isinstance(node, Internal):
            assert node.left.span[1] == node.right.span[0]


def test_bracketed_format():
    text = to_bracketed(consumer_tree())
    assert text == "(NS-Attribution (NN-Comparison (EDU 1) (EDU 2)) (EDU 3))"
    assert from_bracketed(text) == consumer_tree()


def test_bracketed_single_leaf():
    assert to_bracketed(Leaf(0)) == "(EDU 1)"
    assert from_bracketed("(EDU 1)") == Leaf(0)


@pytest.mark.parametrize("bad", ["", "(NS-Joint (EDU 1))", "(EDU 1) (EDU 2)", "(NS-Joint (EDU 1) (EDU 2)"])
def test_bracketed_errors(bad):
    with pytest.raises(ValueError):
        from_bracketed(bad)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(0, 10**6))
def test_bracketed_round_trip(n, seed):
    tree = random_tree(random.Random(seed), n)
    assert from_bracketed(to_bracketed(tree)) == tree
    assert leaves(tree) == list(range(n))


def test_edu_sidecar_round_trip():
    doc = consumer_doc()
    assert read_edu_sidecar(write_edu_sidecar(doc)) == doc.edus


def test_document_checks_token_spans():
    doc = consumer_doc()
    from mlrst.core import Document, Edu
    with pytest.raises(ValueError):
        Document("x", "en", [Edu(0, "a", (0, 2)), Edu(1, "b", (3, 4))], doc.tokens)

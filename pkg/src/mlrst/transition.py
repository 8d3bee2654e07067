"""Shift-reduce transition system over EDUs, with a static oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from mlrst.core import Internal, Leaf, Pattern, Relation, RstNode, RstTree, validate_tree


class TransitionError(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    """SHIFT when ``pattern`` is None, otherwise a labelled REDUCE."""

    pattern: Optional[Pattern] = None
    relation: Optional[Relation] = None

    @property
    def is_shift(self) -> bool:
        return self.pattern is None

    @property
    def direction(self) -> Optional[str]:
        """Side of the nucleus: ``R`` for SN, ``L`` for NS and NN."""
        if self.pattern is None:
            return None
        return "R" if self.pattern is Pattern.SN else "L"

    def __str__(self) -> str:
        if self.is_shift:
            return "SHIFT"
        return f"REDUCE-{self.direction}-{self.pattern}-{self.relation}"

    @classmethod
    def parse(cls, text: str) -> "Action":
        text = text.strip()
        if text == "SHIFT":
            return SHIFT
        parts = text.split("-", 3)
        if len(parts) != 4 or parts[0] != "REDUCE":
            raise ValueError(f"not an action: {text!r}")
        action = reduce(Pattern(parts[2]), Relation.parse(parts[3]))
        if action.direction != parts[1]:
            raise ValueError(f"direction {parts[1]} does not match pattern {parts[2]}")
        return action


SHIFT = Action()


def reduce(pattern: Pattern, relation: Relation) -> Action:
    return Action(Pattern(pattern), Relation(relation))


@dataclass(frozen=True)
class Configuration:
    stack: tuple[RstNode, ...]
    queue: int  # index of the first unread EDU
    n_edus: int

    @property
    def is_final(self) -> bool:
        return self.queue == self.n_edus and len(self.stack) == 1

    def top(self, k: int) -> Optional[RstNode]:
        """``k``-th element from the top of the stack (0 = top)."""
        return self.stack[-1 - k] if k < len(self.stack) else None


def initial_config(n_edus: int) -> Configuration:
    if n_edus < 1:
        raise TransitionError("a document needs at least one EDU")
    return Configuration((), 0, n_edus)


def can_shift(c: Configuration) -> bool:
    return c.queue < c.n_edus


def can_reduce(c: Configuration) -> bool:
    return len(c.stack) >= 2


def legal_actions(c: Configuration) -> set[str]:
    """Legal action shapes: a subset of ``{"SHIFT", "REDUCE"}``."""
    shapes = set()
    if can_shift(c):
        shapes.add("SHIFT")
    if can_reduce(c):
        shapes.add("REDUCE")
    return shapes


def is_legal(c: Configuration, a: Action) -> bool:
    return can_shift(c) if a.is_shift else can_reduce(c)


def apply(c: Configuration, a: Action) -> Configuration:
    if a.is_shift:
        if not can_shift(c):
            raise TransitionError("SHIFT with an empty queue")
        return Configuration(c.stack + (Leaf(c.queue),), c.queue + 1, c.n_edus)
    if not can_reduce(c):
        raise TransitionError(f"{a} needs two elements on the stack, found {len(c.stack)}")
    left, right = c.stack[-2], c.stack[-1]
    node = Internal(left, right, a.pattern, a.relation)
    return Configuration(c.stack[:-2] + (node,), c.queue, c.n_edus)


def oracle(tree: RstTree) -> list[Action]:
    """Post-order action sequence that rebuilds ``tree``."""
    n = tree.span[1]
    problems = validate_tree(tree, n)
    if problems:
        raise TransitionError("; ".join(problems))
    actions: list[Action] = []
    stack: list[tuple[RstNode, bool]] = [(tree, False)]
    while stack:
        node, expanded = stack.pop()
        if isinstance(node, Leaf):
            actions.append(SHIFT)
        elif expanded:
            actions.append(reduce(node.pattern, node.relation))
        else:
            stack.append((node, True))
            stack.append((node.right, False))
            stack.append((node.left, False))
    return actions


def replay(n_edus: int, actions: Iterable[Action]) -> RstTree:
    c = initial_config(n_edus)
    for a in actions:
        c = apply(c, a)
    if not c.is_final:
        raise TransitionError("action sequence does not reach a final configuration")
    return c.stack[0]


def oracle_configurations(tree: RstTree) -> list[tuple[Configuration, Action]]:
    """(configuration, gold action) pairs along the oracle derivation."""
    c = initial_config(tree.span[1])
    pairs = []
    for a in oracle(tree):
        pairs.append((c, a))
        c = apply(c, a)
    return pairs


def format_actions(actions: Iterable[Action]) -> str:
    return "".join(f"{a}\n" for a in actions)


def parse_actions(text: str) -> list[Action]:
    return [Action.parse(line) for line in text.splitlines() if line.strip()]

"""Domain types for RST trees, EDUs and documents.

Trees are immutable binary structures over EDU indices. Spans are half-open
``(start, end)`` pairs of 0-based EDU indices; the bracketed text format uses
1-based EDU numbers, converted in :func:`to_bracketed` / :func:`from_bracketed`.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

Span = tuple[int, int]


class Relation(str, enum.Enum):
    """The 18 coarse-grained relation classes."""

    ATTRIBUTION = "Attribution"
    BACKGROUND = "Background"
    CAUSE = "Cause"
    COMPARISON = "Comparison"
    CONDITION = "Condition"
    CONTRAST = "Contrast"
    ELABORATION = "Elaboration"
    ENABLEMENT = "Enablement"
    EVALUATION = "Evaluation"
    EXPLANATION = "Explanation"
    JOINT = "Joint"
    MANNER_MEANS = "Manner-Means"
    SAME_UNIT = "Same-unit"
    SUMMARY = "Summary"
    TEMPORAL = "Temporal"
    TEXTUAL_ORGANIZATION = "Textual-organization"
    TOPIC_CHANGE = "Topic-Change"
    TOPIC_COMMENT = "Topic-Comment"

    @classmethod
    def parse(cls, name: str) -> "Relation":
        """Look up a class by its canonical name (case-insensitive)."""
        key = name.strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown relation class: {name!r}")

    def __str__(self) -> str:
        return self.value


class Nuclearity(str, enum.Enum):
    NUCLEUS = "Nucleus"
    SATELLITE = "Satellite"


class Pattern(str, enum.Enum):
    """Nuclearity pattern of a binary node (left child first)."""

    NN = "NN"
    NS = "NS"
    SN = "SN"

    @classmethod
    def from_roles(cls, left: Nuclearity, right: Nuclearity) -> "Pattern":
        if left is Nuclearity.SATELLITE and right is Nuclearity.SATELLITE:
            raise ValueError("two satellites cannot form a node")
        code = left.value[0] + right.value[0]
        return cls(code)

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Leaf:
    edu: int

    @property
    def span(self) -> Span:
        return (self.edu, self.edu + 1)


@dataclass(frozen=True)
class Internal:
    left: "RstNode"
    right: "RstNode"
    pattern: Pattern
    relation: Relation
    span: Span = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        # Bounding interval; contiguity is checked by validate_tree, not here.
        lo = min(self.left.span[0], self.right.span[0])
        hi = max(self.left.span[1], self.right.span[1])
        object.__setattr__(self, "span", (lo, hi))

    @property
    def label(self) -> str:
        return f"{self.pattern}-{self.relation}"


RstNode = Union[Leaf, Internal]
RstTree = RstNode


def span_of(node: RstNode) -> Span:
    return node.span


def iter_nodes(node: RstNode) -> Iterator[RstNode]:
    """Pre-order traversal without recursion (trees can be a few hundred deep)."""
    stack = [node]
    while stack:
        cur = stack.pop()
        yield cur
        if isinstance(cur, Internal):
            stack.append(cur.right)
            stack.append(cur.left)


def leaves(node: RstNode) -> list[int]:
    return [n.edu for n in iter_nodes(node) if isinstance(n, Leaf)]


def internal_nodes(node: RstNode) -> list[Internal]:
    return [n for n in iter_nodes(node) if isinstance(n, Internal)]


def head_edu(node: RstNode) -> int:
    """EDU reached by following nucleus children; NN takes the left one."""
    while isinstance(node, Internal):
        node = node.right if node.pattern is Pattern.SN else node.left
    return node.edu


def validate_tree(tree: RstTree, n_edus: int) -> list[str]:
    """Return every well-formedness violation found (empty list means valid)."""
    problems: list[str] = []
    for node in iter_nodes(tree):
        if isinstance(node, Leaf):
            if not 0 <= node.edu < n_edus:
                problems.append(f"leaf EDU {node.edu} outside [0, {n_edus})")
            continue
        if not isinstance(node, Internal):
            problems.append(f"not a tree node: {node!r}")
            continue
        if not isinstance(node.pattern, Pattern):
            if str(node.pattern) == "SS":
                problems.append(f"two satellites at {node.span}")
            else:
                problems.append(f"bad nuclearity pattern {node.pattern!r}")
        if not isinstance(node.relation, Relation):
            problems.append(f"bad relation {node.relation!r}")
        if node.left.span[1] != node.right.span[0]:
            problems.append(
                f"non-adjacent span: {node.left.span} and {node.right.span}"
            )
    seen = leaves(tree)
    if seen != list(range(n_edus)):
        if sorted(seen) != list(range(n_edus)):
            problems.append(
                f"leaves do not cover [0, {n_edus}) exactly once"
            )
        elif not any(p.startswith("non-adjacent") for p in problems):
            problems.append("leaves out of document order")
    return problems


def is_valid(tree: RstTree, n_edus: int) -> bool:
    return not validate_tree(tree, n_edus)


@dataclass(frozen=True)
class Token:
    form: str
    pos: str
    lemma: str
    head: Optional[int]  # document-level token index, None for ROOT
    sentence_id: int
    surface: Optional[str] = None  # characters used for EDU alignment

    @property
    def is_root(self) -> bool:
        return self.head is None


@dataclass(frozen=True)
class Edu:
    index: int
    text: str
    token_span: Span


@dataclass
class Document:
    id: str
    language: str
    edus: list[Edu]
    tokens: list[Token]
    gold_tree: Optional[RstTree] = None

    def __post_init__(self):
        for i, edu in enumerate(self.edus):
            if edu.index != i:
                raise ValueError(f"{self.id}: EDU {i} has index {edu.index}")
            start, end = edu.token_span
            if not 0 <= start < end <= len(self.tokens):
                raise ValueError(f"{self.id}: bad token span {edu.token_span} for EDU {i}")
            if i and start != self.edus[i - 1].token_span[1]:
                raise ValueError(f"{self.id}: EDU {i} token span not contiguous")

    @property
    def n_edus(self) -> int:
        return len(self.edus)

    def edu_tokens(self, index: int) -> list[Token]:
        start, end = self.edus[index].token_span
        return self.tokens[start:end]


# --- bracketed text format -------------------------------------------------

def to_bracketed(tree: RstTree) -> str:
    """``(NS-Attribution (NN-Comparison (EDU 1) (EDU 2)) (EDU 3))``."""
    out: list[str] = []
    stack: list[Union[RstNode, str]] = [tree]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            out.append(item)
        elif isinstance(item, Leaf):
            out.append(f"(EDU {item.edu + 1})")
        else:
            out.append(f"({item.label} ")
            stack.extend([")", item.right, " ", item.left])
    return "".join(out)


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def from_bracketed(text: str) -> RstTree:
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise ValueError("empty tree string")
    pos = 0
    # explicit stack: each frame is [label, children]
    frames: list[list] = []
    result: Optional[RstNode] = None
    while pos < len(tokens):
        if result is not None:
            raise ValueError("trailing content after tree")
        tok = tokens[pos]
        if tok == "(":
            if pos + 1 >= len(tokens):
                raise ValueError("unexpected end of tree string")
            head = tokens[pos + 1]
            if head == "EDU":
                if pos + 3 >= len(tokens) or tokens[pos + 3] != ")":
                    raise ValueError(f"malformed leaf near token {pos}")
                node: RstNode = Leaf(int(tokens[pos + 2]) - 1)
                pos += 4
                if not frames:
                    result = node
                else:
                    frames[-1][1].append(node)
                continue
            frames.append([head, []])
            pos += 2
        elif tok == ")":
            if not frames:
                raise ValueError(f"unbalanced ')' at token {pos}")
            label, children = frames.pop()
            if len(children) != 2:
                raise ValueError(f"node {label} has {len(children)} children")
            pattern, _, rel = label.partition("-")
            node = Internal(children[0], children[1], Pattern(pattern), Relation.parse(rel))
            pos += 1
            if not frames:
                result = node
            else:
                frames[-1][1].append(node)
        else:
            raise ValueError(f"unexpected token {tok!r}")
    if frames or result is None:
        raise ValueError("unbalanced tree string")
    return result


def write_edu_sidecar(doc: Document) -> str:
    """Stand-off EDU file: ``k<TAB>tok_start<TAB>tok_end<TAB>text`` with 1-based k."""
    lines = []
    for edu in doc.edus:
        text = edu.text.replace("\t", " ").replace("\n", " ")
        lines.append(f"{edu.index + 1}\t{edu.token_span[0]}\t{edu.token_span[1]}\t{text}")
    return "\n".join(lines) + "\n"


def read_edu_sidecar(text: str) -> list[Edu]:
    edus = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t", 3)
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 tab-separated fields")
        k, start, end, body = parts
        edus.append(Edu(int(k) - 1, body, (int(start), int(end))))
    return edus

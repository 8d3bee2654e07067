"""Binarization and relation-label harmonization of raw treebank trees."""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Union

from mlrst import ingest
from mlrst.core import (
    Document,
    Edu,
    Internal,
    Leaf,
    Nuclearity,
    Pattern,
    Relation,
    RstNode,
    RstTree,
    internal_nodes,
    validate_tree,
)
from mlrst.ingest import NUCLEUS, SATELLITE, IngestError, RawNode

log = logging.getLogger(__name__)

STRIPPED_SUFFIXES = ("-e", "-s", "-mn")


class HarmonizeError(ValueError):
    pass


class UnmappedRelationError(HarmonizeError, KeyError):
    def __init__(self, name: str):
        super().__init__(f"no coarse class for relation {name!r}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


def normalize_name(name: str) -> str:
    key = unicodedata.normalize("NFC", name.strip()).lower()
    changed = True
    while changed:
        changed = False
        for suffix in STRIPPED_SUFFIXES:
            if key.endswith(suffix) and len(key) > len(suffix):
                key = key[: -len(suffix)]
                changed = True
    return key


def _loose_key(name: str) -> str:
    # accents, hyphens and spacing ignored: "textualorganization" == "textual-organization"
    decomposed = unicodedata.normalize("NFD", name)
    return "".join(ch for ch in decomposed if ch.isalnum())


@dataclass
class LabelMapping:
    table: dict[str, Relation] = field(default_factory=dict)

    def __post_init__(self):
        self._loose = {_loose_key(k): v for k, v in self.table.items()}

    @classmethod
    def from_lines(cls, lines) -> "LabelMapping":
        table: dict[str, Relation] = {}
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"mapping line {lineno}: expected name<TAB>class")
            table[normalize_name(parts[0])] = Relation.parse(parts[1])
        return cls(table)

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "LabelMapping":
        """Read a mapping file; the bundled table when ``path`` is None."""
        if path is None:
            text = resources.files("mlrst").joinpath("data/relation_mapping.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.from_lines(text.splitlines())

    def __contains__(self, name: str) -> bool:
        try:
            self.lookup(name)
        except UnmappedRelationError:
            return False
        return True

    def lookup(self, name: str) -> Relation:
        key = normalize_name(name)
        if key in self.table:
            return self.table[key]
        loose = _loose_key(key)
        if loose in self._loose:
            return self._loose[loose]
        try:
            return Relation.parse(key)
        except ValueError:
            raise UnmappedRelationError(name) from None


_default_mapping: Optional[LabelMapping] = None


def default_mapping() -> LabelMapping:
    global _default_mapping
    if _default_mapping is None:
        _default_mapping = LabelMapping.load()
    return _default_mapping


def map_label(name: str, mapping: Optional[LabelMapping] = None) -> Relation:
    return (mapping or default_mapping()).lookup(name)


# --- binarization --------------------------------------------------------------

@dataclass
class _Item:
    node: RstNode
    role: str
    rel: Optional[str]  # relation shared with siblings; None for a plain nucleus


def _combine(left: _Item, right: _Item) -> _Item:
    roles = (Nuclearity(left.role), Nuclearity(right.role))
    try:
        pattern = Pattern.from_roles(*roles)
    except ValueError:
        raise HarmonizeError("binarization would create a node with two satellites") from None
    if pattern is Pattern.NS:
        rel, inherited = right.rel, left.rel
    elif pattern is Pattern.SN:
        rel, inherited = left.rel, right.rel
    else:
        rel = left.rel or right.rel
        inherited = rel
    if rel is None:
        raise HarmonizeError(f"no relation available for a {pattern} node")
    return _Item(Internal(left.node, right.node, pattern, rel), NUCLEUS, inherited)


def binarize(raw: RawNode) -> RstNode:
    """Turn a lifted raw tree into a binary tree.

    Relations on the result are still the source names (plain strings); use
    :func:`relabel` or :func:`harmonize_document` to map them to classes.
    Sibling lists fold right-branching, except that satellites trailing the
    last nucleus attach to it left-branching first, so that no node ever has
    two satellite children.
    """
    if raw.is_leaf:
        return Leaf(raw.edu)
    if len(raw.children) == 1:
        return binarize(raw.children[0])
    nuclei = sum(1 for c in raw.children if c.role == NUCLEUS)
    if nuclei == 0:
        raise HarmonizeError("node without a nucleus")
    items = []
    for child in raw.children:
        if child.role not in (NUCLEUS, SATELLITE):
            raise HarmonizeError("binarize needs resolved nuclearity")
        rel = child.relation if child.relation not in (None, "span") else None
        if rel is None and raw.label is not None:
            if child.role == SATELLITE or nuclei > 1:
                rel = raw.label
        if child.role == SATELLITE and rel is None:
            raise HarmonizeError("satellite without a relation")
        items.append(_Item(binarize(child), child.role, rel))

    if len(items) >= 3 and items[-1].role == SATELLITE and items[-2].role == SATELLITE:
        last_nucleus = max(i for i, it in enumerate(items) if it.role == NUCLEUS)
        tail = items[last_nucleus]
        for sat in items[last_nucleus + 1:]:
            tail = _combine(tail, sat)
        items = items[:last_nucleus] + [tail]

    acc = items[-1]
    for item in reversed(items[:-1]):
        acc = _combine(item, acc)
    return acc.node


def relabel(tree: RstNode, fn: Callable[[str], Relation]) -> RstNode:
    if isinstance(tree, Leaf):
        return tree
    return Internal(relabel(tree.left, fn), relabel(tree.right, fn), tree.pattern, fn(tree.relation))


def harmonize_document(raw: RawNode, mapping: Optional[LabelMapping] = None) -> RstTree:
    """Binarize a lifted raw tree and map its labels; the result is validated."""
    mapping = mapping or default_mapping()
    tree = relabel(binarize(raw), mapping.lookup)
    problems = validate_tree(tree, len(raw.leaves()))
    if problems:
        raise HarmonizeError("; ".join(problems))
    return tree


# --- whole documents ---------------------------------------------------------

FORMATS = {".dis": "dis", ".lisp": "lisp", ".rst": "lisp", ".rs3": "rs3"}


def read_raw_tree(text: str, fmt: str, drop_first_segment: bool = False) -> RawNode:
    """Parse, resolve nuclearity, order and lift a raw tree of any format."""
    if fmt == "rs3":
        raw, table = ingest.parse_rs3(text, drop_first_segment=drop_first_segment)
        ingest.derive_nuclearity(raw, table)
    else:
        raw = ingest.parse_dis(text) if fmt == "dis" else ingest.parse_lisp(text)
        if drop_first_segment:
            raw = _drop_first_leaf(raw)
    ingest.order_children(raw)
    for i, leaf in enumerate(raw.leaves()):
        leaf.edu = i
    return ingest.lift_relations(raw)


def _drop_first_leaf(raw: RawNode) -> RawNode:
    # Unary nodes left behind are passed through by binarize.
    first = raw.leaves()[0]
    if first is raw:
        raise HarmonizeError("document has a single segment, nothing left after dropping it")
    for node in raw.walk():
        if first in node.children:
            node.children.remove(first)
            break
    return raw


def build_document(
    doc_id: str,
    language: str,
    tree_text: str,
    fmt: str,
    tokens: Optional[list] = None,
    mapping: Optional[LabelMapping] = None,
    drop_first_segment: bool = False,
) -> Document:
    """Full pipeline for one document: raw tree -> harmonized tree + token layer."""
    raw = read_raw_tree(tree_text, fmt, drop_first_segment)
    tree = harmonize_document(raw, mapping)
    texts = [leaf.text for leaf in raw.leaves()]
    if tokens is None:
        tokens = whitespace_tokens(texts)
    spans = ingest.align_edus(texts, tokens)
    edus = [Edu(i, text, span) for i, (text, span) in enumerate(zip(texts, spans))]
    return Document(doc_id, language, edus, list(tokens), tree)


def whitespace_tokens(edu_texts: list[str]):
    """Fallback token layer when no CoNLL-U file is available: one sentence per EDU."""
    from mlrst.core import Token

    tokens = []
    for sid, text in enumerate(edu_texts):
        words = text.split()
        start = len(tokens)
        for i, w in enumerate(words):
            tokens.append(Token(w, "X", w, None if i == 0 else start, sid, w))
    return tokens


# --- corpus statistics ----------------------------------------------------------

@dataclass
class CorpusStats:
    name: str
    n_docs: int
    n_trees: int
    n_edus: int
    n_cdus: int
    max_edus: int
    min_edus: int
    avg_edus: float

    @classmethod
    def compute(cls, name: str, n_docs: int, trees: list[RstTree]) -> "CorpusStats":
        sizes = [len(internal_nodes(t)) + 1 for t in trees]
        return cls(
            name=name,
            n_docs=n_docs,
            n_trees=len(trees),
            n_edus=sum(sizes),
            n_cdus=sum(s - 1 for s in sizes),
            max_edus=max(sizes, default=0),
            min_edus=min(sizes, default=0),
            avg_edus=sum(sizes) / len(sizes) if sizes else 0.0,
        )

    def row(self) -> str:
        return (
            f"{self.name:<10} {self.n_docs:>6} {self.n_trees:>7} {self.n_edus:>7} "
            f"{self.max_edus}/{self.min_edus}/{self.avg_edus:.1f} {self.n_cdus:>7}"
        )

    @staticmethod
    def header() -> str:
        return f"{'Corpus':<10} {'#Doc':>6} {'#Trees':>7} {'#EDU':>7} max/min/avg {'#CDU':>7}"


__all__ = [
    "HarmonizeError",
    "IngestError",
    "LabelMapping",
    "UnmappedRelationError",
    "binarize",
    "build_document",
    "harmonize_document",
    "map_label",
    "normalize_name",
    "read_raw_tree",
    "relabel",
]

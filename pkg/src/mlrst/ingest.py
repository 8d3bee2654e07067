"""Readers for raw RST treebank files and CoNLL-U token layers.

Three tree formats are supported:

* ``dis``: the bracketed format of the English RST treebank,
  ``( Nucleus (leaf 1) (rel2par span) (text _!...!_) )``.
* ``lisp``: a second bracketed dialect where each node is written
  ``(role relation child...)`` and leaves are ``(role relation (edu k "text"))``,
  wrapped in a top-level ``(rst-tree ...)`` form.
* ``rs3``: the RSTTool XML encoding, where units point at their parent and
  nuclearity has to be derived from the relation table in the header.

All readers produce :class:`RawNode` trees that keep the source convention of
annotating relations on the daughters. :func:`derive_nuclearity` and
:func:`lift_relations` bring them to the parent-labelled convention used by the
binarizer.
"""

from __future__ import annotations

import logging
import re
import unicodedata
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterator, Optional

from mlrst.core import Token

log = logging.getLogger(__name__)

NUCLEUS = "Nucleus"
SATELLITE = "Satellite"
SPAN = "Span"

MONO = "mono"
MULTI = "multi"
BOTH = "both"


class IngestError(ValueError):
    """Raised on malformed or unusable treebank input."""


class BracketError(IngestError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MultipleRootsError(IngestError):
    def __init__(self, roots: list[str]):
        super().__init__(f"several roots linked to other units: {', '.join(roots)}")
        self.roots = roots


class NonAdjacentError(IngestError):
    pass


class AlignmentError(IngestError):
    pass


@dataclass
class RawNode:
    """An n-ary tree node as found in the source files.

    ``relation`` is the daughter-side annotation (relation to the parent).
    ``label`` is filled by :func:`lift_relations` with the relation the node
    itself realises.
    """

    children: list["RawNode"] = field(default_factory=list)
    role: Optional[str] = None
    relation: Optional[str] = None
    label: Optional[str] = None
    edu: Optional[int] = None
    text: str = ""
    attachment: Optional[str] = None  # rs3 only: "constituent" or "satellite"
    meta: dict = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list["RawNode"]:
        if self.is_leaf:
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def edus(self) -> list[int]:
        return [leaf.edu for leaf in self.leaves()]

    def walk(self) -> Iterator["RawNode"]:
        yield self
        for child in self.children:
            yield from child.walk()


# --- s-expressions ---------------------------------------------------------

@dataclass
class _Atom:
    value: str
    quoted: bool
    line: int
    column: int


@dataclass
class _List:
    items: list
    line: int
    column: int


_SEXP_TOKEN = re.compile(
    r'(?P<open>\()|(?P<close>\))|(?P<dis>_!.*?_!)|(?P<str>"(?:[^"\\]|\\.)*")'
    r"|(?P<ws>\s+)|(?P<atom>[^\s()\"]+)",
    re.DOTALL,
)


def _read_sexp(text: str) -> _List:
    """Parse one top-level s-expression, tracking positions for errors."""
    stack: list[_List] = []
    top: Optional[_List] = None
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _SEXP_TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise BracketError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        chunk = m.group()
        if top is not None and kind != "ws":
            raise BracketError("content after the closing bracket", line, col)
        if kind == "open":
            stack.append(_List([], line, col))
        elif kind == "close":
            if not stack:
                raise BracketError("unbalanced ')'", line, col)
            done = stack.pop()
            if stack:
                stack[-1].items.append(done)
            else:
                top = done
        elif kind != "ws":
            if not stack:
                raise BracketError("atom outside brackets", line, col)
            if kind == "dis":
                atom = _Atom(chunk[2:-2], True, line, col)
            elif kind == "str":
                atom = _Atom(bytes(chunk[1:-1], "utf-8").decode("unicode_escape")
                             if "\\" in chunk else chunk[1:-1], True, line, col)
            else:
                atom = _Atom(chunk, False, line, col)
            stack[-1].items.append(atom)
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + chunk.rfind("\n") + 1
        pos = m.end()
    if stack:
        raise BracketError("unbalanced '(' (missing ')')", stack[-1].line, stack[-1].column)
    if top is None:
        raise BracketError("empty input", line, pos - line_start + 1)
    return top


def _head(lst: _List) -> str:
    if not lst.items or not isinstance(lst.items[0], _Atom):
        raise BracketError("expected a keyword", lst.line, lst.column)
    return lst.items[0].value


def _clean_text(text: str) -> str:
    text = text.strip()
    if text.endswith("!"):  # some dis files close text with !_ instead of _!
        text = text[:-1]
    return " ".join(text.split())


# --- dis ---------------------------------------------------------------------

def _strip_embedded(name: str) -> str:
    return name[:-2] if name.lower().endswith("-e") else name


def parse_dis(text: str) -> RawNode:
    """Read an English-treebank ``.dis`` file."""
    top = _read_sexp(text)
    node = _dis_node(top)
    _number_leaves(node)
    return node


def _dis_node(lst: _List) -> RawNode:
    head = _head(lst)
    role = {"root": None, "nucleus": NUCLEUS, "satellite": SATELLITE}.get(head.lower(), "?")
    if role == "?":
        raise BracketError(f"unknown node type {head!r}", lst.line, lst.column)
    node = RawNode(role=role)
    for item in lst.items[1:]:
        if not isinstance(item, _List):
            raise BracketError(f"stray atom {item.value!r}", item.line, item.column)
        key = _head(item).lower()
        if key == "span":
            continue
        if key == "leaf":
            node.meta["source_id"] = item.items[1].value
            node.edu = int(item.items[1].value)
        elif key == "rel2par":
            if len(item.items) < 2:
                raise BracketError("rel2par without a value", item.line, item.column)
            node.relation = _strip_embedded(item.items[1].value)
        elif key == "text":
            node.text = _clean_text(" ".join(a.value for a in item.items[1:]))
        elif key in ("root", "nucleus", "satellite"):
            node.children.append(_dis_node(item))
        else:
            raise BracketError(f"unknown field {key!r}", item.line, item.column)
    if node.role is None and node.relation is not None:
        node.relation = None
    if node.children and node.edu is not None:
        raise BracketError("leaf with children", lst.line, lst.column)
    if not node.children and node.edu is None:
        raise BracketError("node with neither children nor leaf number", lst.line, lst.column)
    return node


def _number_leaves(root: RawNode) -> None:
    # Renumber 0-based in reading order; source numbers kept in meta.
    for i, leaf in enumerate(root.leaves()):
        leaf.edu = i


def format_dis(root: RawNode) -> str:
    """Write a raw tree back as ``dis`` (used for round-trip checks)."""
    lines: list[str] = []

    def emit(node: RawNode, depth: int) -> None:
        pad = "  " * depth
        kind = "Root" if depth == 0 else node.role
        edus = node.edus()
        if node.is_leaf:
            head = f"{pad}( {kind} (leaf {node.edu + 1})"
        else:
            head = f"{pad}( {kind} (span {edus[0] + 1} {edus[-1] + 1})"
        if depth:
            head += f" (rel2par {node.relation or 'span'})"
        if node.is_leaf:
            lines.append(f"{head} (text _!{node.text}_!) )")
            return
        lines.append(head)
        for child in node.children:
            emit(child, depth + 1)
        lines.append(f"{pad})")

    emit(root, 0)
    return "\n".join(lines) + "\n"


# --- lisp ----------------------------------------------------------------------

def parse_lisp(text: str) -> RawNode:
    """Read the ``(rst-tree ...)`` bracketed dialect."""
    top = _read_sexp(text)
    if _head(top).lower() != "rst-tree":
        raise BracketError("expected (rst-tree ...)", top.line, top.column)
    items = top.items[1:]
    if len(items) == 1 and isinstance(items[0], _List) and _head(items[0]).lower() == "edu":
        root = _lisp_leaf(items[0])
    else:
        root = RawNode(children=[_lisp_node(item) for item in items])
        if not root.children:
            raise BracketError("empty tree", top.line, top.column)
    _number_leaves(root)
    return root


def _lisp_leaf(lst: _List) -> RawNode:
    if len(lst.items) != 3 or not all(isinstance(i, _Atom) for i in lst.items):
        raise BracketError("expected (edu <id> \"text\")", lst.line, lst.column)
    node = RawNode(edu=int(lst.items[1].value), text=_clean_text(lst.items[2].value))
    node.meta["source_id"] = lst.items[1].value
    return node


def _lisp_node(item) -> RawNode:
    if not isinstance(item, _List):
        raise BracketError(f"stray atom {item.value!r}", item.line, item.column)
    role = {"nucleus": NUCLEUS, "satellite": SATELLITE, "n": NUCLEUS, "s": SATELLITE}.get(
        _head(item).lower())
    if role is None:
        raise BracketError(f"unknown role {_head(item)!r}", item.line, item.column)
    if len(item.items) < 3 or not isinstance(item.items[1], _Atom):
        raise BracketError("expected (role relation child...)", item.line, item.column)
    relation = _strip_embedded(item.items[1].value)
    body = item.items[2:]
    if len(body) == 1 and isinstance(body[0], _List) and _head(body[0]).lower() == "edu":
        node = _lisp_leaf(body[0])
    else:
        node = RawNode(children=[_lisp_node(child) for child in body])
    node.role = role
    node.relation = relation
    return node


def format_lisp(root: RawNode) -> str:
    def quote(text: str) -> str:
        return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'

    def emit(node: RawNode, depth: int) -> str:
        pad = "  " * depth
        if node.is_leaf:
            body = f"(edu {node.edu + 1} {quote(node.text)})"
            return f"{pad}({node.role.lower()} {node.relation or 'span'} {body})"
        inner = "\n".join(emit(child, depth + 1) for child in node.children)
        return f"{pad}({node.role.lower()} {node.relation or 'span'}\n{inner})"

    if root.is_leaf:
        return f"(rst-tree (edu {root.edu + 1} {quote(root.text)}))\n"
    inner = "\n".join(emit(child, 1) for child in root.children)
    return f"(rst-tree\n{inner})\n"


# --- rs3 -----------------------------------------------------------------------

RelationTypeTable = dict  # relation name -> MONO | MULTI | BOTH


def read_relation_table(root: ET.Element) -> RelationTypeTable:
    table: dict[str, str] = {}
    for rel in root.iter("rel"):
        name = rel.get("name")
        kind = rel.get("type")
        if name is None or kind is None:
            continue  # schema entries carry no type
        value = MULTI if kind == "multinuc" else MONO
        if table.get(name, value) != value:
            value = BOTH
        table[name] = value
    return table


def parse_rs3(text: str, drop_first_segment: bool = False) -> tuple[RawNode, RelationTypeTable]:
    """Rebuild the constituency tree encoded by rs3 parent pointers.

    Unlinked units (no parent and nothing attached to them) and empty
    segments are removed; their ids are listed in ``tree.meta["removed"]``.
    Raises :class:`MultipleRootsError` if several linked roots remain.
    """
    try:
        xml = ET.fromstring(text)
    except ET.ParseError as exc:
        raise IngestError(f"invalid rs3 XML: {exc}") from exc
    table = read_relation_table(xml)
    body = xml.find("body")
    if body is None:
        raise IngestError("rs3 file has no <body>")

    units: dict[str, dict] = {}
    order: list[str] = []
    for elem in body:
        if elem.tag not in ("segment", "group"):
            continue
        uid = elem.get("id")
        if uid is None:
            raise IngestError(f"<{elem.tag}> without id")
        units[uid] = {
            "id": uid,
            "tag": elem.tag,
            "type": elem.get("type"),
            "parent": elem.get("parent"),
            "relname": elem.get("relname"),
            "text": " ".join("".join(elem.itertext()).split()) if elem.tag == "segment" else "",
        }
        order.append(uid)

    removed: list[str] = []
    if drop_first_segment:
        first = next((u for u in order if units[u]["tag"] == "segment"), None)
        if first is not None:
            removed.append(first)
            del units[first]

    for uid, unit in units.items():
        parent = unit["parent"]
        if parent is not None and parent not in units and parent not in removed:
            raise IngestError(f"unit {uid} points to missing parent {parent}")

    # Drop units nothing links to and that link to nothing, plus empty segments.
    changed = True
    while changed:
        changed = False
        linked = {u["parent"] for u in units.values() if u["parent"] is not None}
        for uid in list(units):
            unit = units[uid]
            if unit["parent"] in removed:
                unit["parent"] = None
            unlinked = unit["parent"] is None and uid not in linked
            empty = unit["tag"] == "segment" and not unit["text"] and uid not in linked
            empty_group = unit["tag"] == "group" and uid not in linked
            if (unlinked and len(units) > 1) or empty or empty_group:
                removed.append(uid)
                del units[uid]
                changed = True

    roots = [uid for uid in order if uid in units and units[uid]["parent"] is None]
    if len(roots) > 1:
        raise MultipleRootsError(roots)
    if not roots:
        raise IngestError("rs3 file has no root unit")
    if removed:
        log.warning("rs3: removed unlinked or empty units %s", ", ".join(removed))

    for unit in units.values():
        name = unit["relname"]
        if unit["parent"] is not None and name and name != "span" and name not in table:
            raise IngestError(f"relation {name!r} not declared in header")

    segments = [uid for uid in order if uid in units and units[uid]["tag"] == "segment"]
    position = {uid: i for i, uid in enumerate(segments)}
    dependents: dict[str, list[str]] = {uid: [] for uid in units}
    for uid in order:
        if uid in units and units[uid]["parent"] is not None:
            dependents[units[uid]["parent"]].append(uid)

    def is_constituent(uid: str) -> bool:
        unit = units[uid]
        parent = units[unit["parent"]]
        name = unit["relname"] or "span"
        if parent["tag"] != "group":
            return False
        if name == "span":
            return True
        kind = table.get(name)
        return parent["type"] == "multinuc" and kind in (MULTI, BOTH)

    def core(uid: str) -> RawNode:
        unit = units[uid]
        if unit["tag"] == "segment":
            leaf = RawNode(edu=position[uid], text=unit["text"])
            leaf.meta["source_id"] = uid
            return leaf
        members = [d for d in dependents[uid] if is_constituent(d)]
        if not members:
            raise IngestError(f"group {uid} has no constituents")
        if unit["type"] != "multinuc" and len(members) == 1:
            return full(members[0])
        node = RawNode()
        node.meta["source_id"] = uid
        for m in members:
            child = full(m)
            name = units[m]["relname"] or "span"
            child.relation = name
            child.role = SPAN if name == "span" else None
            child.attachment = "constituent"
            node.children.append(child)
        return node

    def full(uid: str) -> RawNode:
        nucleus = core(uid)
        sats = [d for d in dependents[uid] if not is_constituent(d)]
        if not sats:
            return nucleus
        node = RawNode()
        nucleus.role, nucleus.relation = SPAN, "span"
        node.children.append(nucleus)
        for s in sats:
            child = full(s)
            child.relation = units[s]["relname"]
            child.role = None
            child.attachment = "satellite"
            node.children.append(child)
        return node

    root = full(roots[0])
    root.role = root.relation = None
    root.meta["removed"] = removed
    return root, table


def format_rs3(root: RawNode, table: RelationTypeTable) -> str:
    """Write a tree produced by :func:`parse_rs3` back to rs3 (for round trips)."""
    xml = ET.Element("rst")
    rels = ET.SubElement(ET.SubElement(xml, "header"), "relations")
    for name, kind in sorted(table.items()):
        kinds = ["rst", "multinuc"] if kind == BOTH else ["multinuc" if kind == MULTI else "rst"]
        for k in kinds:
            ET.SubElement(rels, "rel", name=name, type=k)
    segments: list[ET.Element] = []
    groups: list[ET.Element] = []
    next_id = [len(root.leaves())]

    def split(node: RawNode):
        sats = [c for c in node.children if c.attachment == "satellite"]
        if not sats:
            return None, []
        return next(c for c in node.children if c.attachment != "satellite"), sats

    def unit(node: RawNode, parent: Optional[str], relname: Optional[str], **extra) -> dict:
        attrs = dict(extra)
        if parent is not None:
            attrs.update(parent=parent, relname=relname)
        return attrs

    def new_group() -> str:
        next_id[0] += 1
        return str(next_id[0])

    def emit(node: RawNode, parent: Optional[str], relname: Optional[str]) -> str:
        if node.is_leaf:
            seg = ET.Element("segment", unit(node, parent, relname, id=str(node.edu + 1)))
            seg.text = node.text
            segments.append(seg)
            return seg.get("id")
        nucleus, sats = split(node)
        if nucleus is None:
            gid = new_group()
            groups.append(ET.Element("group", unit(node, parent, relname, id=gid, type="multinuc")))
            for child in node.children:
                emit(child, gid, child.relation)
            return gid
        if split(nucleus)[0] is not None:
            target = new_group()
            groups.append(ET.Element("group", unit(node, parent, relname, id=target, type="span")))
            emit(nucleus, target, "span")
        else:
            target = emit(nucleus, parent, relname)
        for sat in sats:
            emit(sat, target, sat.relation)
        return target

    emit(root, None, None)
    segments.sort(key=lambda e: int(e.get("id")))
    body = ET.SubElement(xml, "body")
    body.extend(segments + groups)
    return ET.tostring(xml, encoding="unicode")


def raw_equal(a: RawNode, b: RawNode) -> bool:
    """Structural equality ignoring source bookkeeping in ``meta``."""
    fields = ("role", "relation", "label", "edu", "text", "attachment")
    if any(getattr(a, f) != getattr(b, f) for f in fields):
        return False
    return len(a.children) == len(b.children) and all(
        raw_equal(x, y) for x, y in zip(a.children, b.children)
    )


def derive_nuclearity(raw: RawNode, table: RelationTypeTable) -> RawNode:
    """Assign Nucleus/Satellite to every child of an rs3-sourced tree."""
    for node in raw.walk():
        for child in node.children:
            if child.role in (NUCLEUS, SATELLITE):
                continue
            if child.role == SPAN or child.relation in (None, "span"):
                child.role = NUCLEUS
                continue
            kind = table.get(child.relation)
            if kind is None:
                raise IngestError(f"relation {child.relation!r} missing from relation table")
            if kind == BOTH:
                kind = MULTI if child.attachment == "constituent" else MONO
            child.role = NUCLEUS if kind == MULTI else SATELLITE
    return raw


def lift_relations(raw: RawNode) -> RawNode:
    """Move daughter-side relations onto the parent node.

    When all relation-bearing children agree, the parent gets that label and
    the children are cleared. A nucleus shared by satellites holding different
    relations keeps the per-child relations for the binarizer.
    """
    for node in raw.walk():
        if node.is_leaf:
            continue
        roles = [c.role for c in node.children]
        if any(r not in (NUCLEUS, SATELLITE) for r in roles):
            raise IngestError("lift_relations needs resolved nuclearity")
        if len(node.children) == 1:
            continue
        names = [c.relation for c in node.children if c.relation not in (None, "span")]
        distinct = sorted(set(names))
        if not distinct:
            raise IngestError("internal node without any relation on its children")
        if len(node.children) == 2 and len(distinct) > 1:
            raise IngestError(f"conflicting sibling relations: {', '.join(distinct)}")
        if roles.count(NUCLEUS) == 0:
            raise IngestError("node whose children are all satellites")
        if len(distinct) == 1:
            node.label = distinct[0]
            for child in node.children:
                child.relation = None
    return raw


def order_children(raw: RawNode) -> RawNode:
    """Sort siblings by leftmost EDU and check every node covers adjacent EDUs.

    Reordering siblings never changes which EDUs a node covers, so a node
    whose EDUs are not contiguous cannot be repaired; :class:`NonAdjacentError`
    is raised and the document should be skipped.
    """
    for node in reversed(list(raw.walk())):
        if node.is_leaf:
            continue
        node.children.sort(key=lambda c: min(c.edus()))
        edus = sorted(node.edus())
        if edus != list(range(edus[0], edus[0] + len(edus))):
            raise NonAdjacentError(f"node spans non-adjacent EDUs {edus}")
    return raw


# --- CoNLL-U ---------------------------------------------------------------------

def load_conllu(text: str) -> list[Token]:
    """Read tokens from CoNLL-U; heads become document-level token indices."""
    tokens: list[Token] = []
    sentence: list[tuple] = []
    sentence_id = 0
    pending_surface: dict[int, str] = {}
    covered: set[int] = set()

    def flush() -> None:
        nonlocal sentence_id, sentence
        if not sentence:
            return
        offset = len(tokens)
        n = len(sentence)
        for lineno, word_id, form, lemma, pos, head in sentence:
            if head == 0:
                gov = None
            elif 1 <= head <= n:
                gov = offset + head - 1
            else:
                raise IngestError(f"line {lineno}: head {head} outside sentence")
            if word_id in pending_surface:
                surface = pending_surface[word_id]
            elif word_id in covered:
                surface = ""
            else:
                surface = form
            tokens.append(Token(form, pos, lemma, gov, sentence_id, surface))
        sentence_id += 1
        sentence = []
        pending_surface.clear()
        covered.clear()

    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise IngestError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
        tid = cols[0]
        if "." in tid:
            continue  # empty node
        if "-" in tid:
            try:
                lo, hi = (int(x) for x in tid.split("-"))
            except ValueError:
                raise IngestError(f"line {lineno}: bad range id {tid!r}") from None
            pending_surface[lo] = cols[1]
            covered.update(range(lo + 1, hi + 1))
            continue
        try:
            word_id = int(tid)
            head = 0 if cols[6] in ("_", "0") else int(cols[6])
        except ValueError:
            raise IngestError(f"line {lineno}: non-numeric id or head") from None
        if word_id != len(sentence) + 1:
            raise IngestError(f"line {lineno}: word id {word_id} out of sequence")
        lemma = cols[2] if cols[2] != "_" else cols[1]
        sentence.append((lineno, word_id, cols[1], lemma, cols[3], head))
    flush()
    return tokens


def _squash(text: str) -> str:
    return "".join(unicodedata.normalize("NFC", text).split())


def align_edus(edu_texts: list[str], tokens: list[Token]) -> list[tuple[int, int]]:
    """Assign each token to the EDU holding most of its characters.

    Text comparison ignores whitespace. Returns half-open token spans, one per
    EDU, partitioning the token sequence in order.
    """
    bounds = []
    pos = 0
    for i, text in enumerate(edu_texts):
        chars = _squash(text)
        if not chars:
            raise AlignmentError(f"EDU {i} has empty text")
        bounds.append((pos, pos + len(chars)))
        pos += len(chars)
    doc_chars = "".join(_squash(t) for t in edu_texts)
    tok_chars = []
    for tok in tokens:
        tok_chars.append(_squash(tok.surface if tok.surface is not None else tok.form))
    joined = "".join(tok_chars)
    if len(joined) != len(doc_chars):
        raise AlignmentError(
            f"token text has {len(joined)} characters, EDU text {len(doc_chars)}"
        )
    if joined != doc_chars:
        at = next(i for i, (a, b) in enumerate(zip(joined, doc_chars)) if a != b)
        log.warning("token/EDU text differ from character %d; aligning by position", at)

    owner = []
    start = 0
    edu = 0
    for chars in tok_chars:
        end = start + len(chars)
        if not chars:
            owner.append(owner[-1] if owner else 0)
            continue
        best, best_overlap = edu, -1
        for j in range(edu, len(bounds)):
            lo, hi = bounds[j]
            if lo >= end:
                break
            overlap = min(hi, end) - max(lo, start)
            if overlap > best_overlap:
                best, best_overlap = j, overlap
        owner.append(best)
        edu = best
        start = end

    spans = []
    cursor = 0
    for j in range(len(edu_texts)):
        count = sum(1 for o in owner if o == j)
        if count == 0:
            raise AlignmentError(f"EDU {j} received no tokens")
        spans.append((cursor, cursor + count))
        cursor += count
    return spans

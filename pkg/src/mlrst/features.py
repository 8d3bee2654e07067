"""Typed symbol extraction from parser configurations.

Each configuration becomes a fixed-length sequence of ``(slot, type, value)``
triples. Seven EDU slots are described (two stack heads, the queue front and
the heads of the children of the two top stack elements), plus the labels of
the two top stack elements.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping, Optional, Sequence, Union

from mlrst.core import Document, Edu, Internal, RstNode, Token, head_edu
from mlrst.transition import Configuration

TEMPLATE_VERSION = "edu7x20+lab2/v1"
NONE = "<NONE>"

WORD, POS, LENGTH, POSITION, FLAG, LABEL = "word", "pos", "length", "position", "flag", "relation_label"
SYMBOL_TYPES = (WORD, POS, LENGTH, POSITION, FLAG, LABEL)

EDU_FIELDS: tuple[tuple[str, str], ...] = (
    ("first1", WORD), ("first2", WORD), ("first3", WORD), ("last", WORD),
    ("head1", WORD), ("head2", WORD), ("head3", WORD),
    ("first1_pos", POS), ("first2_pos", POS), ("first3_pos", POS), ("last_pos", POS),
    ("length", LENGTH), ("position", POSITION),
    ("is_first", FLAG), ("is_last", FLAG), ("head_inside", FLAG),
    ("date", FLAG), ("number", FLAG), ("money", FLAG), ("percent", FLAG),
)
EDU_SLOTS = ("S0", "S1", "Q0", "S0L", "S0R", "S1L", "S1R")
LABEL_SLOTS = ("S0", "S1")
WORDS_PER_EDU = sum(1 for _, t in EDU_FIELDS if t == WORD)

# (slot id, symbol type) for every position of a symbol sequence
TEMPLATE: tuple[tuple[str, str], ...] = tuple(
    [(f"{slot}.{name}", typ) for slot in EDU_SLOTS for name, typ in EDU_FIELDS]
    + [(f"{slot}.label", LABEL) for slot in LABEL_SLOTS]
)

Translator = Callable[[Token], str]


def bucket_length(n_tokens: int) -> str:
    if n_tokens > 25:
        return "very-long"
    if n_tokens > 15:
        return "long"
    if n_tokens > 5:
        return "short"
    return "very-short"


def bucket_position(index: int, n: int) -> frozenset[str]:
    """Quarter of the document the EDU falls in, plus first/last markers."""
    s = index / n
    if s < 0.25:
        quarter = "beginning"
    elif s < 0.5:
        quarter = "first-middle"
    elif s < 0.75:
        quarter = "second-middle"
    else:
        quarter = "end"
    out = {quarter}
    if index == 0:
        out.add("first")
    if index == n - 1:
        out.add("last")
    return frozenset(out)


_QUARTERS = ("beginning", "first-middle", "second-middle", "end")


# --- number / date / money / percent ------------------------------------------

@dataclass(frozen=True)
class PatternSet:
    """Regular expressions for the four surface indicators of one language."""

    months: tuple[str, ...] = ()
    percent_words: tuple[str, ...] = ()
    currency_words: tuple[str, ...] = ()
    date: re.Pattern = field(init=False, compare=False, repr=False)
    percent: re.Pattern = field(init=False, compare=False, repr=False)
    money: re.Pattern = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        num = r"\d+(?:[.,]\d+)*"
        months = "|".join(re.escape(m) for m in sorted(self.months, key=len, reverse=True))
        date = r"\b\d{1,2}[./-]\d{1,2}[./-]\d{2,4}\b"
        if months:
            # a month name next to a number: "May 5", "5 de mayo", "Oct. 1989"
            date += (rf"|(?<!\w)(?:{months})(?!\w)\s*,?\s*\d"
                     rf"|\d\.?\s+(?:\w+\s+)?(?:{months})(?!\w)")
        percent = rf"{num}\s*%"
        if self.percent_words:
            words = "|".join(re.escape(w) for w in self.percent_words)
            percent += rf"|{num}\s*(?:{words})(?!\w)"
        money = rf"[$€£¥]\s*{num}|{num}\s*[$€£¥]"
        if self.currency_words:
            words = "|".join(re.escape(w) for w in self.currency_words)
            money += rf"|{num}\s*(?:million\s+|billion\s+)?(?:{words})(?!\w)"
        flags = re.IGNORECASE
        object.__setattr__(self, "date", re.compile(date, flags))
        object.__setattr__(self, "percent", re.compile(percent, flags))
        object.__setattr__(self, "money", re.compile(money, flags))

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "PatternSet":
        kinds: dict[str, list[str]] = {"month": [], "percent": [], "currency": []}
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            kind, _, word = line.partition("\t")
            if kind not in kinds or not word:
                raise ValueError(f"pattern line {lineno}: expected month|percent|currency<TAB>word")
            kinds[kind].append(word.strip())
        return cls(tuple(kinds["month"]), tuple(kinds["percent"]), tuple(kinds["currency"]))

    def flags(self, text: str) -> dict[str, bool]:
        return {
            "date": bool(self.date.search(text)),
            "number": bool(re.search(r"\d", text)),
            "money": bool(self.money.search(text)),
            "percent": bool(self.percent.search(text)),
        }


@lru_cache(maxsize=None)
def load_patterns(language: str) -> PatternSet:
    """Bundled pattern file for ``language``; digit-only patterns if none ships."""
    path = resources.files("mlrst").joinpath(f"data/patterns/{language.lower()}.txt")
    if not path.is_file():
        return PatternSet()
    return PatternSet.from_lines(path.read_text("utf-8").splitlines())


# --- per-EDU symbols -------------------------------------------------------------

def head_set_tokens(edu: Edu, doc: Document) -> list[Token]:
    start, end = edu.token_span
    out = []
    for tok in doc.tokens[start:end]:
        if tok.head is None or not start <= tok.head < end:
            out.append(tok)
            if len(out) == 3:
                break
    return out


def head_set(edu: Edu, doc: Document) -> list[str]:
    """Up to three tokens whose governor lies outside the EDU."""
    return [t.form for t in head_set_tokens(edu, doc)]


def _word(tok: Optional[Token], translate: Optional[Translator]) -> str:
    if tok is None:
        return NONE
    form = translate(tok) if translate else tok.form
    return form.lower()


def edu_symbols(
    edu: Union[Edu, int],
    doc: Document,
    translate: Optional[Translator] = None,
    patterns: Optional[PatternSet] = None,
) -> list[tuple[str, str]]:
    """Symbols for one EDU, in :data:`EDU_FIELDS` order."""
    if isinstance(edu, int):
        edu = doc.edus[edu]
    toks = doc.edu_tokens(edu.index)
    patterns = patterns if patterns is not None else load_patterns(doc.language)
    firsts: list[Optional[Token]] = list(toks[:3]) + [None] * (3 - min(3, len(toks)))
    last = toks[-1] if toks else None
    heads: list[Optional[Token]] = head_set_tokens(edu, doc)
    heads += [None] * (3 - len(heads))
    position = bucket_position(edu.index, doc.n_edus)
    quarter = next(q for q in _QUARTERS if q in position)
    regex = patterns.flags(edu.text)

    def flag(name: str, value: bool) -> str:
        return f"{name}={'T' if value else 'F'}"

    values = (
        [_word(t, translate) for t in firsts]
        + [_word(last, translate)]
        + [_word(t, translate) for t in heads]
        + [t.pos if t is not None else NONE for t in firsts]
        + [last.pos if last is not None else NONE]
        + [bucket_length(len(toks)), quarter]
        + [
            flag("first", "first" in position),
            flag("last", "last" in position),
            flag("head", any(t.head is None for t in toks)),
        ]
        + [flag(k, regex[k]) for k in ("date", "number", "money", "percent")]
    )
    return [(typ, value) for (_, typ), value in zip(EDU_FIELDS, values)]


_EMPTY_EDU = [(typ, NONE) for _, typ in EDU_FIELDS]


def _children(node: Optional[RstNode]) -> tuple[Optional[RstNode], Optional[RstNode]]:
    if isinstance(node, Internal):
        return node.left, node.right
    return None, None


def _label(node: Optional[RstNode]) -> str:
    return node.label if isinstance(node, Internal) else NONE


class FeatureExtractor:
    """Computes symbol sequences, caching per-EDU symbols for one document at a time."""

    def __init__(self, translate: Union[Translator, Mapping[str, Translator], None] = None,
                 patterns: Optional[PatternSet] = None):
        # ``translate`` may also map language codes to translators
        self.translate = translate
        self.patterns = patterns
        self._doc: Optional[Document] = None
        self._cache: dict[int, list[tuple[str, str]]] = {}

    def translator(self, language: str) -> Optional[Translator]:
        if isinstance(self.translate, Mapping):
            return self.translate.get(language)
        return self.translate

    def edu(self, index: Optional[int], doc: Document) -> list[tuple[str, str]]:
        if index is None:
            return _EMPTY_EDU
        if self._doc is not doc:
            self._doc = doc
            self._cache = {}
        if index not in self._cache:
            self._cache[index] = edu_symbols(index, doc, self.translator(doc.language), self.patterns)
        return self._cache[index]

    def __call__(self, c: Configuration, doc: Document) -> list[tuple[str, str, str]]:
        s0, s1 = c.top(0), c.top(1)
        s0l, s0r = _children(s0)
        s1l, s1r = _children(s1)
        nodes = {"S0": s0, "S1": s1, "S0L": s0l, "S0R": s0r, "S1L": s1l, "S1R": s1r}
        out: list[tuple[str, str, str]] = []
        for slot in EDU_SLOTS:
            if slot == "Q0":
                index = c.queue if c.queue < c.n_edus else None
            else:
                node = nodes[slot]
                index = head_edu(node) if node is not None else None
            for (name, _), (typ, value) in zip(EDU_FIELDS, self.edu(index, doc)):
                out.append((f"{slot}.{name}", typ, value))
        out.append(("S0.label", LABEL, _label(s0)))
        out.append(("S1.label", LABEL, _label(s1)))
        return out


def config_symbols(c: Configuration, doc: Document,
                   translate: Optional[Translator] = None) -> list[tuple[str, str, str]]:
    return FeatureExtractor(translate)(c, doc)


def edu_word_slots(symbols: Sequence[tuple[str, str]]) -> list[Optional[str]]:
    """The seven word values of an EDU symbol list, NONE mapped to None."""
    words = [v for typ, v in symbols if typ == WORD]
    return [None if w == NONE else w for w in words]

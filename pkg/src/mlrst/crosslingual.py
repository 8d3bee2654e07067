"""Lexical transfer: dictionary translation into English and cross-lingual embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from mlrst.core import Document, Token

DEFAULT_DIM = 50


@dataclass
class BilingualDictionary:
    """Source word -> English word; the first entry for a word wins."""

    entries: dict[str, str] = field(default_factory=dict)
    language: str = ""

    def __post_init__(self):
        self._lower: dict[str, str] = {}
        for src, tgt in self.entries.items():
            self._lower.setdefault(src.lower(), tgt)

    @classmethod
    def from_lines(cls, lines: Iterable[str], language: str = "") -> "BilingualDictionary":
        entries: dict[str, str] = {}
        for lineno, line in enumerate(lines, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise ValueError(f"dictionary line {lineno}: expected source<TAB>english")
            entries.setdefault(parts[0], parts[1])
        return cls(entries, language)

    @classmethod
    def load(cls, path: Union[str, Path], language: str = "") -> "BilingualDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh, language)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, word: Optional[str]) -> Optional[str]:
        if not word:
            return None
        if word in self.entries:
            return self.entries[word]
        return self._lower.get(word.lower())


def lookup(token: str, lemma: Optional[str], stem: Optional[str],
           dictionary: BilingualDictionary) -> Optional[str]:
    """Translation via token, then lemma, then stem; None when nothing matches."""
    for candidate in (token, lemma, stem):
        hit = dictionary.get(candidate)
        if hit:
            return hit
    return None


def translate(token: str, lemma: Optional[str], stem: Optional[str],
              dictionary: BilingualDictionary) -> str:
    """English translation of a word, or the word itself if none is found."""
    hit = lookup(token, lemma, stem, dictionary)
    return hit if hit is not None else token


def token_translator(dictionary: BilingualDictionary,
                     stemmer: Optional[Callable[[str], str]] = None) -> Callable[[Token], str]:
    """Adapter for :class:`mlrst.features.FeatureExtractor`."""
    def fn(tok: Token) -> str:
        stem = stemmer(tok.form.lower()) if stemmer else None
        return translate(tok.form, tok.lemma, stem, dictionary)
    return fn


@dataclass
class EmbeddingTable:
    words: list[str]
    vectors: np.ndarray
    average: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.words) != len(self.vectors):
            raise ValueError("one vector per word is required")
        self.index = {w: i for i, w in enumerate(self.words)}
        self.average = self.vectors.mean(axis=0) if len(self.words) else np.zeros(self.vectors.shape[1])

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def load(cls, path: Union[str, Path], dim: int = DEFAULT_DIM) -> "EmbeddingTable":
        """Read ``<vocab> <dim>`` then ``word v1 .. v_dim`` lines, keeping the first ``dim`` values."""
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: first line must be '<vocab_size> <dim>'")
            size, full = int(header[0]), int(header[1])
            if dim > full:
                raise ValueError(f"{path}: asked for {dim} dimensions, file has {full}")
            words, rows = [], []
            for lineno, line in enumerate(fh, 2):
                parts = line.rstrip("\n").rstrip(" ").split(" ")
                if len(parts) != full + 1:
                    raise ValueError(f"{path}:{lineno}: expected {full} values")
                words.append(parts[0])
                rows.append([float(v) for v in parts[1:dim + 1]])
        if len(words) != size:
            raise ValueError(f"{path}: header announces {size} words, found {len(words)}")
        return cls(words, np.array(rows, dtype=np.float64).reshape(len(words), dim))

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.words)} {self.dim}\n")
            for w, row in zip(self.words, self.vectors):
                fh.write(w + " " + " ".join(repr(float(v)) for v in row) + "\n")

    def embed(self, word: str) -> np.ndarray:
        i = self.index.get(word)
        return self.vectors[i] if i is not None else self.average


def embed(word: str, table: EmbeddingTable) -> np.ndarray:
    """Row for ``word``; the average of all rows for unknown words."""
    return table.embed(word)


def edu_word_vector(words: Sequence[Optional[str]], table: EmbeddingTable) -> np.ndarray:
    """Concatenate the vectors of the seven word slots; empty slots give zeros."""
    parts = [np.zeros(table.dim) if w is None else table.embed(w) for w in words]
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass(frozen=True)
class Coverage:
    dict_size: int
    n_words: int
    n_unknown: int

    def row(self, name: str) -> str:
        return f"{name:<8} {self.dict_size:>10,} {self.n_words:>8,} {self.n_unknown:>12,}"

    @staticmethod
    def header() -> str:
        return f"{'Corpus':<8} {'Size dict.':>10} {'# words':>8} {'# unk. words':>12}"


def coverage_report(docs: Iterable[Document], dictionary: BilingualDictionary,
                    stemmer: Optional[Callable[[str], str]] = None) -> Coverage:
    """Distinct word types in the corpus and how many stay untranslated."""
    types: dict[str, Token] = {}
    for doc in docs:
        for tok in doc.tokens:
            types.setdefault(tok.form, tok)
    unknown = 0
    for form, tok in types.items():
        stem = stemmer(form.lower()) if stemmer else None
        if lookup(form, tok.lemma, stem, dictionary) is None:
            unknown += 1
    return Coverage(len(dictionary), len(types), unknown)

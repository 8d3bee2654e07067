"""Multilingual RST discourse parsing: treebank harmonization, a transition-based
parser with a feed-forward scorer, and discourse evaluation metrics."""

__version__ = "0.1.0"

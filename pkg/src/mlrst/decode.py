"""Action-synchronous beam search."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mlrst.core import Document, RstTree
from mlrst.features import FeatureExtractor
from mlrst.model import Model
from mlrst.transition import Action, Configuration, apply, can_reduce, can_shift, initial_config

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BeamItem:
    config: Configuration
    score: float  # sum of log-probabilities of the actions taken
    history: tuple[int, ...]  # action indices, in order


def _legal_mask(model: Model, c: Configuration) -> np.ndarray:
    mask = np.zeros(len(model.actions), dtype=bool)
    shift, reduce_ok = can_shift(c), can_reduce(c)
    for i, a in enumerate(model.actions):
        mask[i] = shift if a.is_shift else reduce_ok
    return mask


def search(
    doc: Document,
    model: Model,
    beam: int = 1,
    extractor: Optional[FeatureExtractor] = None,
    trace: bool = False,
) -> BeamItem:
    """Run 2n-1 synchronized steps and return the best complete item.

    Candidates are ranked by cumulative log-probability; ties go to the lower
    action index, then to the earlier beam item.
    """
    if beam < 1:
        raise ValueError("beam must be at least 1")
    extractor = extractor or FeatureExtractor()
    items = [BeamItem(initial_config(doc.n_edus), 0.0, ())]
    for step in range(2 * doc.n_edus - 1):
        ids = np.stack([model.encode(extractor(it.config, doc)) for it in items])
        logp = model.log_probs(ids)
        candidates = []
        for k, it in enumerate(items):
            mask = _legal_mask(model, it.config)
            for a in np.flatnonzero(mask):
                candidates.append((-(it.score + logp[k, a]), int(a), k))
        if not candidates:
            raise RuntimeError("no legal action before the final configuration")
        candidates.sort()
        chosen = candidates[:beam]
        items = [
            BeamItem(apply(items[k].config, model.actions[a]), -neg, items[k].history + (a,))
            for neg, a, k in chosen
        ]
        if trace:
            log.debug("step %d: %s", step,
                      "; ".join(f"{it.score:.3f} {model.actions[it.history[-1]]}" for it in items))
    best = items[0]
    assert best.config.is_final
    return best


def parse(doc: Document, model: Model, beam: int = 1,
          extractor: Optional[FeatureExtractor] = None) -> RstTree:
    """Best-scoring tree for a segmented document."""
    return search(doc, model, beam, extractor).config.stack[0]


def greedy_actions(doc: Document, model: Model,
                   extractor: Optional[FeatureExtractor] = None) -> list[Action]:
    """Stepwise argmax over legal actions, independent of the beam code path."""
    extractor = extractor or FeatureExtractor()
    c = initial_config(doc.n_edus)
    out = []
    while not c.is_final:
        scores = model.log_probs(model.encode(extractor(c, doc)))[0]
        scores = np.where(_legal_mask(model, c), scores, -np.inf)
        a = model.actions[int(np.argmax(scores))]
        out.append(a)
        c = apply(c, a)
    return out

"""Correlated feature adaptation.

The frozen linear classifier is applied to the average of the current and
previous pooled features. Under temporally correlated labels the previous
sample most likely shares the class, so averaging suppresses noise; a
confidence filter falls back to the plain prediction when averaging does not
make the classifier more certain.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidConfig, MissingPrevious


@dataclass(frozen=True)
class LinearClassifier:
    w: np.ndarray  # (C, K)
    b: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise InvalidConfig(f"classifier shapes disagree: w {w.shape}, b {b.shape}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def n_classes(self) -> int:
        return self.w.shape[1]

    def logits(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) @ self.w + self.b


def softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=float)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def single_predict(z, clf: LinearClassifier) -> np.ndarray:
    return softmax(clf.logits(z))


def cofa_predict(z, z_prev, clf: LinearClassifier) -> np.ndarray:
    """Classify the mean of the current and previous features."""
    if z_prev is None:
        raise MissingPrevious("no previous feature: first sample of the stream")
    return softmax(clf.logits((np.asarray(z) + np.asarray(z_prev)) / 2.0))


def select_index(candidates: Sequence[np.ndarray]) -> int:
    """Index of the most confident candidate; the earliest one wins ties."""
    if not candidates:
        raise InvalidConfig("confidence selection needs at least one candidate")
    return int(np.argmax([np.max(p) for p in candidates]))


def confidence_select(candidates: Sequence[np.ndarray]) -> np.ndarray:
    """Candidate with the largest maximum probability (never a blend).

    Put the plain prediction before its COFA counterpart: COFA then has to
    be strictly more confident to be chosen.
    """
    return candidates[select_index(candidates)]


class COFA:
    """Stateful wrapper holding the one-element feature cache."""

    def __init__(self, clf: LinearClassifier, filter_enabled: bool = True):
        self.clf = clf
        self.filter_enabled = filter_enabled
        self.prev: Optional[np.ndarray] = None

    def candidates(self, z) -> list[np.ndarray]:
        """``[single]`` or ``[single, cofa]`` once a previous feature exists."""
        out = [single_predict(z, self.clf)]
        if self.prev is not None:
            out.append(cofa_predict(z, self.prev, self.clf))
        return out

    def predict(self, z) -> np.ndarray:
        cands = self.candidates(z)
        if len(cands) == 1:
            return cands[0]
        return confidence_select(cands) if self.filter_enabled else cands[1]

    def push(self, z) -> None:
        self.prev = np.array(z, dtype=float)

    def reset(self) -> None:
        self.prev = None

"""Synthetic multi-domain feature world and a frozen "pretrained" model.

Inputs are ``C x H x W`` maps. A class fixes a per-channel signal, spatial
noise is added, and a domain applies a per-channel affine corruption::

    x = scale[d] * (class_mean[k] + noise * eps) + offset[d]

Source (pretraining) samples are always clean (scale 1, offset 0); test
domain 0 is clean too only when ``clean_domain0`` is set. The model is a
stack of fixed channel-mixing layers, each followed by a normalization slot
and a ReLU, then spatial pooling and a linear Gaussian-discriminant head.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bdn import EPS, GaussStats
from .cofa import LinearClassifier
from .errors import InsufficientData, InvalidConfig

# generator streams: test samples and source-fitting samples never collide
TEST_SPLIT = 0
SOURCE_SPLIT = 1


@dataclass(frozen=True)
class SyntheticWorld:
    class_means: np.ndarray  # (K, C)
    offsets: np.ndarray  # (D, C)
    scales: np.ndarray  # (D, C)
    noise: float
    height: int = 4
    width: int = 4
    seed: int = 0

    @classmethod
    def make(
        cls,
        n_domains: int,
        n_classes: int,
        channels: int = 8,
        height: int = 4,
        width: int = 4,
        noise: float = 1.0,
        class_sep: float = 2.0,
        shift: float = 2.0,
        scale_range: tuple[float, float] = (0.7, 1.4),
        seed: int = 0,
        clean_domain0: bool = True,
    ) -> "SyntheticWorld":
        """Random world; each shifted domain moves every channel by ``+-shift`` source std."""
        if n_domains < 1 or n_classes < 2:
            raise InvalidConfig("need at least one domain and two classes")
        rng = np.random.default_rng([seed, 0xD0])
        means = rng.normal(0.0, class_sep, size=(n_classes, channels))
        # per-channel std of source inputs: class spread plus spatial noise
        source_std = np.sqrt(means.var(axis=0) + noise**2)
        offsets = np.zeros((n_domains, channels))
        scales = np.ones((n_domains, channels))
        for d in range(1 if clean_domain0 else 0, n_domains):
            signs = rng.choice([-1.0, 1.0], size=channels)
            offsets[d] = signs * shift * source_std
            scales[d] = rng.uniform(*scale_range, size=channels)
        return cls(means, offsets, scales, float(noise), height, width, seed)

    @property
    def n_domains(self) -> int:
        return self.offsets.shape[0]

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def channels(self) -> int:
        return self.class_means.shape[1]

    def sample(self, domain: int, cls: int, sample_id: int, split: int = TEST_SPLIT) -> np.ndarray:
        """Deterministic feature map for ``(domain, class, sample_id)``."""
        rng = np.random.default_rng([self.seed, split, domain, cls, sample_id])
        eps = rng.standard_normal((self.channels, self.height, self.width))
        clean = self.class_means[cls][:, None, None] + self.noise * eps
        if split == SOURCE_SPLIT:
            return clean
        return self.scales[domain][:, None, None] * clean + self.offsets[domain][:, None, None]

    def samples(self, domains, classes, sample_ids, split: int = TEST_SPLIT) -> np.ndarray:
        return np.stack([self.sample(d, k, s, split) for d, k, s in zip(domains, classes, sample_ids)])


@dataclass
class PretrainedModel:
    """Frozen source model: mixing layers, normalization slots, linear head."""

    mixers: list[np.ndarray]  # L of (C, C)
    gammas: list[np.ndarray]  # L of (C,)
    betas: list[np.ndarray]  # L of (C,)
    anchors: list[GaussStats]  # source statistics per slot
    classifier: LinearClassifier = field(default=None)

    @property
    def n_layers(self) -> int:
        return len(self.mixers)

    def mix(self, layer: int, a: np.ndarray) -> np.ndarray:
        c = a.shape[0]
        return (self.mixers[layer] @ a.reshape(c, -1)).reshape(a.shape)

    def activate(self, layer: int, h: np.ndarray, mu: np.ndarray, var: np.ndarray) -> np.ndarray:
        """Normalize with ``(mu, var)``, apply the frozen affine, then ReLU."""
        scale = (self.gammas[layer] / np.sqrt(var + EPS))[:, None, None]
        out = (h - mu[:, None, None]) * scale + self.betas[layer][:, None, None]
        return np.maximum(out, 0.0)

    def forward(self, x: np.ndarray, stats: Optional[Sequence[GaussStats]] = None) -> np.ndarray:
        """Pooled feature ``z`` with fixed per-slot statistics (anchors by default)."""
        stats = self.anchors if stats is None else stats
        a = x
        for layer in range(self.n_layers):
            h = self.mix(layer, a)
            a = self.activate(layer, h, stats[layer].mu, stats[layer].var)
        return a.mean(axis=(1, 2))

    def fingerprint(self) -> str:
        """SHA-256 over every parameter; changes if anything is mutated."""
        h = hashlib.sha256()
        arrays = [*self.mixers, *self.gammas, *self.betas]
        arrays += [s.mu for s in self.anchors] + [s.var for s in self.anchors]
        arrays += [self.classifier.w, self.classifier.b]
        for a in arrays:
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()


def fit_source(world: SyntheticWorld, n_source: int = 2000, n_layers: int = 2, seed: int = 0) -> PretrainedModel:
    """Fit anchors and a Gaussian nearest-class-mean head on clean source samples.

    Mixers are random orthogonal matrices; slot statistics are the pooled
    (sample and spatial) mean/variance of each slot's input on source data,
    computed layer by layer so deeper anchors see anchor-normalized inputs.
    """
    k = world.n_classes
    if n_source < 10 * k:
        raise InsufficientData(f"need at least {10 * k} source samples for {k} classes, got {n_source}")
    if n_layers < 1:
        raise InvalidConfig("model needs at least one layer")
    c = world.channels
    rng = np.random.default_rng([world.seed, seed, 0x50])
    mixers, gammas, betas = [], [], []
    for _ in range(n_layers):
        q, r = np.linalg.qr(rng.standard_normal((c, c)))
        mixers.append(q * np.sign(np.diag(r)))
        gammas.append(rng.uniform(0.8, 1.2, size=c))
        betas.append(rng.uniform(0.0, 0.5, size=c))

    labels = np.arange(n_source) % k
    x = world.samples(np.zeros(n_source, dtype=int), labels, np.arange(n_source), split=SOURCE_SPLIT)
    model = PretrainedModel(mixers, gammas, betas, [])
    a = x
    for layer in range(n_layers):
        h = np.einsum("ij,njhw->nihw", mixers[layer], a)
        anchor = GaussStats(h.mean(axis=(0, 2, 3)), h.var(axis=(0, 2, 3)))
        model.anchors.append(anchor)
        a = np.stack([model.activate(layer, hi, anchor.mu, anchor.var) for hi in h])
    z = a.mean(axis=(2, 3))
    centroids = np.stack([z[labels == j].mean(axis=0) for j in range(k)])
    # shared isotropic within-class variance sets the logit scale
    s2 = np.mean((z - centroids[labels]) ** 2)
    model.classifier = LinearClassifier(centroids.T / s2, -0.5 * (centroids**2).sum(axis=1) / s2)
    return model

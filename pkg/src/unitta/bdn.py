"""Balanced domain normalization.

Per-sample instance statistics are matched against per-domain Gaussian
statistics with a symmetric KL divergence. Each domain keeps one EMA cell
per class; the domain statistics are the class-balanced recombination of
those cells, so majority classes cannot drag them. A sample that is closer
to the source (anchor) statistics than to every known domain opens a new
domain, initialized from the anchor.

A bank with a single domain doubles as the global/class-statistics bank.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidConfig

EPS = 1e-5


@dataclass(frozen=True)
class GaussStats:
    """Per-channel diagonal Gaussian: mean and variance vectors of length C."""

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mu.shape != var.shape or mu.ndim != 1:
            raise InvalidConfig(f"mu and var must be matching vectors, got {mu.shape} and {var.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "var": self.var.tolist()}


def instance_stats(f) -> GaussStats:
    """Spatial mean and population variance of a ``C x H x W`` feature map."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 3 or 0 in f.shape:
        raise InvalidConfig(f"feature map must be C x H x W with nonzero sizes, got {f.shape}")
    mu = f.mean(axis=(1, 2))
    var = ((f - mu[:, None, None]) ** 2).mean(axis=(1, 2))
    return GaussStats(mu, var)


def _sym_kl(mu_a, var_a, mu_b, var_b, eps=EPS):
    va = np.maximum(var_a, eps)
    vb = np.maximum(var_b, eps)
    d2 = (mu_a - mu_b) ** 2
    # the log terms of the two directions cancel
    return 0.5 * (((va + d2) / vb) + ((vb + d2) / va) - 2.0).sum(axis=-1)


def sym_kl(a: GaussStats, b: GaussStats, eps: float = EPS) -> float:
    """KL(a||b) + KL(b||a) for diagonal Gaussians, summed over channels.

    Variances are floored at ``eps`` first.
    """
    return float(_sym_kl(a.mu, a.var, b.mu, b.var, eps))


def normalize(f, stats: GaussStats, scale=None, shift=None, eps: float = EPS) -> np.ndarray:
    """``(f - mu) / sqrt(var + eps) * scale + shift`` per channel."""
    f = np.asarray(f, dtype=float)
    out = (f - stats.mu[:, None, None]) / np.sqrt(stats.var + eps)[:, None, None]
    if scale is not None:
        out = out * np.asarray(scale)[:, None, None]
    if shift is not None:
        out = out + np.asarray(shift)[:, None, None]
    return out


@dataclass(frozen=True)
class Assignment:
    """Domain chosen for a sample; ``domain is None`` requests a new domain."""

    domain: Optional[int]

    @property
    def is_new(self) -> bool:
        return self.domain is None


NEW_DOMAIN = Assignment(None)


def default_eta(n_classes: int) -> float:
    return 5e-4 * n_classes


class StatsBank:
    """Per-(domain, class) EMA statistics with class-balanced domain aggregates.

    Arrays: ``cell_mu``/``cell_var`` have shape ``(D, K, C)``, ``mu``/``var``
    (the domain aggregates) have shape ``(D, C)``. ``assigned`` counts the
    samples routed to each domain.
    """

    def __init__(self, anchor: GaussStats, n_classes: int, eta: Optional[float] = None):
        if n_classes < 1:
            raise InvalidConfig("a bank needs at least one class")
        self.anchor = GaussStats(anchor.mu.copy(), anchor.var.copy())
        self.n_classes = int(n_classes)
        self.eta = default_eta(n_classes) if eta is None else float(eta)
        if not 0.0 < self.eta <= 1.0:
            raise InvalidConfig(f"EMA momentum must lie in (0, 1], got {self.eta}")
        c = self.anchor.mu.size
        self.cell_mu = np.empty((0, self.n_classes, c))
        self.cell_var = np.empty((0, self.n_classes, c))
        self.mu = np.empty((0, c))
        self.var = np.empty((0, c))
        self.assigned: list[int] = []
        self.floor_events = 0
        self.expand()

    @property
    def n_domains(self) -> int:
        return self.mu.shape[0]

    @property
    def n_channels(self) -> int:
        return self.mu.shape[1]

    def domain_stats(self, d: int) -> GaussStats:
        return GaussStats(self.mu[d].copy(), self.var[d].copy())

    def cell_stats(self, d: int, k: int) -> GaussStats:
        return GaussStats(self.cell_mu[d, k].copy(), self.cell_var[d, k].copy())

    def expand(self) -> int:
        """Add a domain whose cells and aggregate are copies of the anchor."""
        k = self.n_classes
        self.cell_mu = np.concatenate([self.cell_mu, np.tile(self.anchor.mu, (1, k, 1))])
        self.cell_var = np.concatenate([self.cell_var, np.tile(self.anchor.var, (1, k, 1))])
        self.mu = np.vstack([self.mu, self.anchor.mu])
        self.var = np.vstack([self.var, self.anchor.var])
        self.assigned.append(0)
        return self.n_domains - 1

    def ema_update(self, d: int, k: int, f, refresh: bool = True) -> None:
        """EMA step of cell ``(d, k)`` towards feature map ``f`` (``C x H x W``).

        Both variance terms use the pre-update cell mean ``u``::

            mu  <- (1 - eta) u + eta mean(F)
            var <- (1 - eta) var + eta mean((F - u)^2) - eta^2 (mean(F) - u)^2
        """
        if not (0 <= d < self.n_domains and 0 <= k < self.n_classes):
            raise IndexError(f"cell ({d}, {k}) outside bank of {self.n_domains} x {self.n_classes}")
        f = np.asarray(f, dtype=float)
        c = f.shape[0]
        flat = f.reshape(c, -1)
        inv = 1.0 / flat.shape[1]
        eta = self.eta
        u = self.cell_mu[d, k]
        f_bar = flat.sum(axis=1) * inv
        sq_dev = ((flat - u[:, None]) ** 2).sum(axis=1) * inv
        new_var = (1.0 - eta) * self.cell_var[d, k] + eta * sq_dev - eta**2 * (f_bar - u) ** 2
        negative = new_var < 0.0
        if negative.any():
            self.floor_events += int(negative.sum())
            new_var = np.where(negative, 0.0, new_var)
        self.cell_mu[d, k] = (1.0 - eta) * u + eta * f_bar
        self.cell_var[d, k] = new_var
        if refresh:
            self.refresh_domain_stats(d)

    def refresh_domain_stats(self, d: int) -> None:
        """Class average of the cells plus the spread of the class means."""
        cm = self.cell_mu[d]
        inv = 1.0 / self.n_classes
        mu = cm.sum(axis=0) * inv
        self.mu[d] = mu
        self.var[d] = (self.cell_var[d].sum(axis=0) + ((cm - mu) ** 2).sum(axis=0)) * inv

    def divergences(self, inst: GaussStats) -> np.ndarray:
        """Symmetric KL from ``inst`` to every domain aggregate."""
        return _sym_kl(inst.mu[None, :], inst.var[None, :], self.mu, self.var)

    def assign_or_flag(self, inst: GaussStats) -> Assignment:
        """Nearest domain by symmetric KL, or ``NEW_DOMAIN`` if the anchor is strictly closer."""
        kl = self.divergences(inst)
        if kl.min() > sym_kl(inst, self.anchor):
            return NEW_DOMAIN
        return Assignment(int(np.argmin(kl)))

    def record_assignment(self, d: int) -> None:
        self.assigned[d] += 1

    def domains_over(self, threshold: int = 100) -> int:
        """Number of domains with more than ``threshold`` assigned samples."""
        return sum(c > threshold for c in self.assigned)

    def copy(self) -> "StatsBank":
        other = StatsBank.__new__(StatsBank)
        other.__dict__.update(self.__dict__)
        for name in ("cell_mu", "cell_var", "mu", "var"):
            setattr(other, name, getattr(self, name).copy())
        other.assigned = list(self.assigned)
        return other

    def snapshot(self) -> dict:
        return {
            "n_domains": self.n_domains,
            "n_classes": self.n_classes,
            "eta": self.eta,
            "floor_events": self.floor_events,
            "anchor": self.anchor.to_dict(),
            "assigned": list(self.assigned),
            "domains_over_100": self.domains_over(100),
            "domains": [
                {
                    "mu": self.mu[d].tolist(),
                    "var": self.var[d].tolist(),
                    "cell_mu": self.cell_mu[d].tolist(),
                    "cell_var": self.cell_var[d].tolist(),
                }
                for d in range(self.n_domains)
            ],
        }

"""Finite labeled streams sampled from composed domain/class ULMMs.

Domains and classes are walked jointly on the Kronecker chain, so a record's
``(domain_id, class_id)`` pair is a single Markov state. Axes that a plain
chain cannot realize (continual axes, i.i.d. imbalanced axes, or anything
when ``quota`` is forced) are driven by per-state quotas: once a state's
quota is used up its column is zeroed and the rows renormalized.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import Exhausted, InvalidConfig
from .markov import (
    AxisConfig,
    build_ulmm,
    correlation_vector,
    kronecker_compose,
    power_law_weights,
)

CSV_HEADER = ("step", "domain_id", "class_id", "sample_id")

# standard factors for non-i.i.d./imbalanced axes: (alpha1, beta)
DOMAIN_DEFAULTS = (0.85, 5.0)
CLASS_DEFAULTS = (0.95, 10.0)

AXIS_SETTINGS = (
    ("continual", "balanced"),
    ("iid", "balanced"),
    ("iid", "imbalanced"),
    ("noniid", "balanced"),
    ("noniid", "imbalanced"),
    ("continual", "imbalanced"),
)


@dataclass(frozen=True)
class SampleRecord:
    step: int
    domain_id: int
    class_id: int
    sample_id: int


def _needs_quota(axis: AxisConfig) -> bool:
    return axis.correlation_mode == "continual" or (
        axis.correlation_mode == "iid" and axis.beta > 1.0
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the setting grid plus stream length and seed.

    ``quota=True`` forces exact per-state counts through column masking, and
    also admits non-i.i.d. axes that violate ``(1 - alpha1) * beta < (n-1)/n``.
    Continual and i.i.d.-imbalanced axes always use quotas.
    """

    domain_axis: AxisConfig
    class_axis: AxisConfig
    length: int
    seed: int = 0
    quota: bool = False

    def __post_init__(self):
        if self.length < 1:
            raise InvalidConfig(f"stream length must be positive, got {self.length}")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")

    @property
    def code(self) -> str:
        return f"{self.domain_axis.code}-{self.class_axis.code}"

    @property
    def uses_quota(self) -> bool:
        return self.quota or _needs_quota(self.domain_axis) or _needs_quota(self.class_axis)

    @property
    def n_states(self) -> int:
        return self.domain_axis.n * self.class_axis.n

    def transition_matrix(self) -> np.ndarray:
        a_d = correlation_vector(self.domain_axis, quota=self.quota)
        a_c = correlation_vector(self.class_axis, quota=self.quota)
        return kronecker_compose(build_ulmm(a_d), build_ulmm(a_c))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return ScenarioConfig(self.domain_axis, self.class_axis, self.length, seed, self.quota)


def axis_config(n: int, correlation_mode: str, balance_mode: str, defaults=DOMAIN_DEFAULTS) -> AxisConfig:
    """Axis with the standard correlation/imbalance factors filled in."""
    alpha1 = defaults[0] if correlation_mode == "noniid" else None
    beta = defaults[1] if balance_mode == "imbalanced" else None
    return AxisConfig(n, correlation_mode, alpha1, balance_mode, beta)


def enumerate_grid(
    experiment: bool = False,
    n_domains: int = 5,
    n_classes: int = 4,
    length: int = 10_000,
    seed: int = 0,
    domain_defaults=DOMAIN_DEFAULTS,
    class_defaults=CLASS_DEFAULTS,
) -> list[ScenarioConfig]:
    """All 6 x 6 = 36 (domain, class) settings, or the 24 without continual classes."""
    out = []
    for d_corr, d_bal in AXIS_SETTINGS:
        for c_corr, c_bal in AXIS_SETTINGS:
            if experiment and c_corr == "continual":
                continue
            out.append(
                ScenarioConfig(
                    axis_config(n_domains, d_corr, d_bal, domain_defaults),
                    axis_config(n_classes, c_corr, c_bal, class_defaults),
                    length,
                    seed,
                )
            )
    return out


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    target = weights * total
    counts = np.floor(target).astype(np.int64)
    short = total - int(counts.sum())
    # stable sort keeps ties on the lower index
    order = np.argsort(-(target - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def quotas(beta: float, n: int, total: int) -> np.ndarray:
    """Per-state sample counts following the power law implied by ``beta``.

    Rounded by largest remainder so they sum to exactly ``total``.
    """
    if total < n:
        raise InvalidConfig(f"cannot split {total} samples over {n} states")
    counts = _largest_remainder(power_law_weights(beta, n), total)
    if np.any(counts == 0):
        raise InvalidConfig(f"quota rounds to zero for some state (beta={beta}, n={n}, N={total})")
    return counts


def joint_quotas(domain_axis: AxisConfig, class_axis: AxisConfig, total: int) -> np.ndarray:
    """Quotas over joint states ``d * n_class + k`` (product of the axis power laws)."""
    w = np.outer(
        power_law_weights(domain_axis.beta, domain_axis.n),
        power_law_weights(class_axis.beta, class_axis.n),
    ).ravel()
    if total < w.size:
        raise InvalidConfig(f"cannot split {total} samples over {w.size} joint states")
    counts = _largest_remainder(w, total)
    if np.any(counts == 0):
        raise InvalidConfig(f"joint quota rounds to zero for some state (N={total})")
    return counts


def mask_columns(p: np.ndarray, alive) -> np.ndarray:
    """Zero the columns of exhausted states and renormalize every row.

    Rows left without mass fall back to a uniform draw over surviving states.
    """
    alive = np.asarray(alive, dtype=bool)
    if not alive.any():
        raise Exhausted("every state is exhausted")
    q = np.where(alive[None, :], p, 0.0)
    mass = q.sum(axis=1, keepdims=True)
    uniform = alive / alive.sum()
    return np.where(mass > 0, q / np.where(mass > 0, mass, 1.0), uniform[None, :])


class TransitionQueues:
    """Pre-sampled next-state draws, one queue per state.

    Each queue is drawn by inverse-CDF lookup on that state's row and refilled
    from the same generator when it runs dry.
    """

    def __init__(self, p, rng: np.random.Generator, horizon: int = 1024):
        p = np.asarray(p, dtype=float)
        self.n = p.shape[0]
        self.cdf = np.cumsum(p, axis=1)
        self.cdf[:, -1] = 1.0
        self.rng = rng
        self.horizon = int(horizon)
        self.queues: list[list[int]] = [[] for _ in range(self.n)]
        self.pos = [0] * self.n
        for s in range(self.n):
            self._refill(s)

    def _refill(self, state: int) -> None:
        u = self.rng.random(self.horizon)
        self.queues[state] = np.searchsorted(self.cdf[state], u, side="right").tolist()
        self.pos[state] = 0

    def pop(self, state: int) -> int:
        i = self.pos[state]
        if i == len(self.queues[state]):
            self._refill(state)
            i = 0
        self.pos[state] = i + 1
        return self.queues[state][i]


def presample_queues(p, seed, horizon: int = 1024) -> TransitionQueues:
    return TransitionQueues(p, np.random.default_rng(seed), horizon)


@dataclass
class Stream:
    """A labeled stream stored column-wise."""

    domain: np.ndarray
    cls: np.ndarray
    sample_id: np.ndarray
    n_domains: int
    n_classes: int
    quotas: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.domain)

    def __iter__(self) -> Iterator[SampleRecord]:
        for t, (d, k, s) in enumerate(zip(self.domain.tolist(), self.cls.tolist(), self.sample_id.tolist())):
            yield SampleRecord(t, d, k, s)

    def __getitem__(self, idx: slice) -> "Stream":
        if not isinstance(idx, slice):
            raise TypeError("streams are sliced, not indexed; iterate for records")
        return Stream(self.domain[idx], self.cls[idx], self.sample_id[idx], self.n_domains, self.n_classes)

    @property
    def states(self) -> np.ndarray:
        return self.domain * self.n_classes + self.cls

    def counts(self) -> np.ndarray:
        return np.bincount(self.states, minlength=self.n_domains * self.n_classes)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(zip(itertools.count(), self.domain.tolist(), self.cls.tolist(), self.sample_id.tolist()))

    @classmethod
    def from_csv(cls, path, n_domains: Optional[int] = None, n_classes: Optional[int] = None) -> "Stream":
        """Read a stream CSV; raises :class:`InvalidConfig` on schema problems."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise InvalidConfig(f"{path}: expected header {','.join(CSV_HEADER)}")
        body = rows[1:]
        if not body:
            raise InvalidConfig(f"{path}: no records")
        try:
            arr = np.array([[int(v) for v in r] for r in body], dtype=np.int64)
        except ValueError as exc:
            raise InvalidConfig(f"{path}: malformed record ({exc})") from None
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise InvalidConfig(f"{path}: every record needs 4 fields")
        if not np.array_equal(arr[:, 0], np.arange(len(arr))):
            raise InvalidConfig(f"{path}: step column is not 0..N-1")
        if np.any(arr[:, 1:] < 0):
            raise InvalidConfig(f"{path}: negative ids")
        nd = n_domains if n_domains is not None else int(arr[:, 1].max()) + 1
        nc = n_classes if n_classes is not None else int(arr[:, 2].max()) + 1
        if arr[:, 1].max() >= nd or arr[:, 2].max() >= nc:
            raise InvalidConfig(f"{path}: ids exceed the configured domain/class counts")
        return cls(arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy(), nd, nc)


# rejection attempts against masked columns before drawing from the renormalized row
_MAX_REJECTIONS = 8


def generate(cfg: ScenarioConfig, sampler: str = "queue", horizon: int = 1024) -> Stream:
    """Sample a stream of ``cfg.length`` records.

    ``sampler="queue"`` consumes pre-sampled per-state queues (rejecting draws
    that land on exhausted states); ``sampler="direct"`` draws every step from
    the masked, renormalized row. Both are deterministic in ``cfg.seed``.
    """
    if sampler not in ("queue", "direct"):
        raise InvalidConfig(f"unknown sampler {sampler!r}")
    p = cfg.transition_matrix()
    n = p.shape[0]
    n_c = cfg.class_axis.n
    rng = np.random.default_rng(cfg.seed)

    quota = joint_quotas(cfg.domain_axis, cfg.class_axis, cfg.length) if cfg.uses_quota else None
    remaining = quota.tolist() if quota is not None else None
    alive = [True] * n
    n_dead = 0
    queues = TransitionQueues(p, rng, horizon) if sampler == "queue" else None

    def masked_draw(state: int) -> int:
        row = mask_columns(p[state : state + 1], alive)[0]
        return int(rng.choice(n, p=row))

    states = np.empty(cfg.length, dtype=np.int64)
    s = int(rng.integers(n))
    for t in range(cfg.length):
        states[t] = s
        if remaining is not None:
            remaining[s] -= 1
            if remaining[s] == 0:
                alive[s] = False
                n_dead += 1
        if t == cfg.length - 1:
            break
        if n_dead == n:
            raise Exhausted(f"all states exhausted after {t + 1} of {cfg.length} samples")
        if queues is None:
            s = masked_draw(s) if n_dead else int(rng.choice(n, p=p[s]))
            continue
        nxt = queues.pop(s)
        tries = 1
        while not alive[nxt] and tries < _MAX_REJECTIONS:
            nxt = queues.pop(s)
            tries += 1
        s = nxt if alive[nxt] else masked_draw(s)

    domain, cls = np.divmod(states, n_c)
    sample_id = _sequential_ids(states, n)
    return Stream(domain, cls, sample_id, cfg.domain_axis.n, n_c, quota)


def _sequential_ids(states: np.ndarray, n: int) -> np.ndarray:
    seen = np.zeros(n, dtype=np.int64)
    ids = np.empty_like(states)
    for t, s in enumerate(states.tolist()):
        ids[t] = seen[s]
        seen[s] += 1
    return ids


@dataclass
class EmpiricalStats:
    counts: np.ndarray
    frequencies: np.ndarray
    self_transition: np.ndarray
    imbalance_ratio: float

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "counts": self.counts.tolist(),
            "frequencies": clean(self.frequencies),
            "self_transition": clean(self.self_transition),
            "imbalance_ratio": self.imbalance_ratio if np.isfinite(self.imbalance_ratio) else None,
        }


def _labels(stream: Stream, axis: str) -> tuple[np.ndarray, int]:
    if axis == "domain":
        return stream.domain, stream.n_domains
    if axis == "class":
        return stream.cls, stream.n_classes
    if axis == "joint":
        return stream.states, stream.n_domains * stream.n_classes
    raise InvalidConfig(f"unknown axis {axis!r}")


def empirical_report(stream: Stream, axis: str = "joint") -> EmpiricalStats:
    """Marginal frequencies, self-transition rates and max/min frequency ratio.

    States never left (or never visited) get a NaN self-transition rate.
    """
    if len(stream) == 0:
        raise InvalidConfig("empty stream")
    x, n = _labels(stream, axis)
    counts = np.bincount(x, minlength=n)
    freq = counts / counts.sum()
    departures = np.bincount(x[:-1], minlength=n)
    stays = np.bincount(x[:-1][x[:-1] == x[1:]], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(departures > 0, stays / np.maximum(departures, 1), np.nan)
        ratio = float(freq.max() / freq.min()) if freq.min() > 0 else float("inf")
    return EmpiricalStats(counts, freq, rate, ratio)

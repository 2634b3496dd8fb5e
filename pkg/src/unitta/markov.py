"""Uniformly leaving Markov matrices (ULMMs).

A ULMM is a row-stochastic matrix whose off-diagonal entries are constant
within each row, so it is fully described by its diagonal ``alpha``::

    P[i, i] = alpha[i]
    P[i, j] = (1 - alpha[i]) / (n - 1)      for j != i

The stationary distribution satisfies ``(1 - alpha[i]) * pi[i] = const``,
which gives a closed form and lets ``alpha`` be chosen so that visit
frequencies follow a power law with imbalance factor ``beta = pi[0] / pi[-1]``.

State ``0`` always carries the largest ``alpha`` and is therefore the most
frequent state.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstraintViolation, DegenerateChain, InvalidConfig, NonConvergence

ROW_SUM_TOL = 1e-12
ORACLE_TOL = 1e-10

CORRELATION_MODES = ("iid", "noniid", "continual")
BALANCE_MODES = ("balanced", "imbalanced")

_CORR_CODE = {"iid": "i", "noniid": "n", "continual": "1"}
_BAL_CODE = {"balanced": "1", "imbalanced": "u"}


@dataclass(frozen=True)
class AxisConfig:
    """Sampling configuration of one axis (domains or classes).

    ``alpha1`` may be omitted for the ``iid`` (resolved to ``1/n``) and
    ``continual`` (resolved to ``1``) modes; ``beta`` may be omitted for the
    ``balanced`` mode (resolved to ``1``).
    """

    n: int
    correlation_mode: str = "iid"
    alpha1: Optional[float] = None
    balance_mode: str = "balanced"
    beta: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidConfig(f"an axis needs at least 2 states, got n={self.n}")
        object.__setattr__(self, "n", int(self.n))
        if self.correlation_mode not in CORRELATION_MODES:
            raise InvalidConfig(f"unknown correlation mode {self.correlation_mode!r}")
        if self.balance_mode not in BALANCE_MODES:
            raise InvalidConfig(f"unknown balance mode {self.balance_mode!r}")

        alpha1 = self.alpha1
        if self.correlation_mode == "iid":
            if alpha1 is not None and not np.isclose(alpha1, 1.0 / self.n, rtol=0, atol=1e-12):
                raise InvalidConfig(f"iid mode requires alpha1 = 1/n = {1.0 / self.n}")
            alpha1 = 1.0 / self.n
        elif self.correlation_mode == "continual":
            if alpha1 is not None and alpha1 != 1.0:
                raise InvalidConfig("continual mode requires alpha1 = 1")
            alpha1 = 1.0
        else:
            if alpha1 is None:
                raise InvalidConfig("noniid mode requires an explicit alpha1")
            if not 1.0 / self.n < alpha1 < 1.0:
                raise InvalidConfig(
                    f"noniid alpha1 must lie strictly inside (1/n, 1) = ({1.0 / self.n:.6g}, 1), got {alpha1}"
                )
        object.__setattr__(self, "alpha1", float(alpha1))

        beta = self.beta
        if self.balance_mode == "balanced":
            if beta is not None and beta != 1.0:
                raise InvalidConfig("balanced mode requires beta = 1")
            beta = 1.0
        elif beta is None:
            raise InvalidConfig("imbalanced mode requires an explicit beta")
        if beta < 1.0:
            raise InvalidConfig(f"imbalance factor beta must be >= 1, got {beta}")
        object.__setattr__(self, "beta", float(beta))

    @property
    def code(self) -> str:
        """Two-letter setting code, e.g. ``"nu"`` for non-i.i.d. and imbalanced."""
        return _CORR_CODE[self.correlation_mode] + _BAL_CODE[self.balance_mode]

    @property
    def feasible(self) -> bool:
        """Whether a plain ULMM (no quota masking) realizes this axis.

        i.i.d. and continual axes with ``beta > 1`` are never feasible: their
        diagonal is pinned, so imbalance has to come from quotas.
        """
        if self.correlation_mode == "noniid":
            return (1.0 - self.alpha1) * self.beta < (self.n - 1) / self.n
        if self.correlation_mode == "continual":
            return False
        return self.beta == 1.0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mode": self.correlation_mode,
            "alpha1": self.alpha1,
            "balance": self.balance_mode,
            "beta": self.beta,
        }


def power_law_weights(beta: float, n: int) -> np.ndarray:
    """Normalized weights with constant neighbor ratio and ``w[0]/w[-1] = beta``."""
    if beta < 1.0:
        raise InvalidConfig(f"beta must be >= 1, got {beta}")
    w = float(beta) ** (-np.arange(n) / (n - 1))
    return w / w.sum()


def correlation_vector(cfg: AxisConfig, quota: bool = False) -> np.ndarray:
    """Diagonal ``alpha`` of the ULMM for one axis.

    In ``noniid`` mode the leaving probabilities grow geometrically,
    ``1 - alpha[i] = (1 - alpha1) * beta ** (i / (n - 1))``, which requires
    ``(1 - alpha1) * beta < (n - 1) / n``. When that fails a
    :class:`ConstraintViolation` is raised, unless ``quota`` is set: the
    correlation is then kept uniform at ``alpha1`` and the imbalance is left
    to quota masking in the sampler.
    """
    n = cfg.n
    if cfg.correlation_mode == "iid":
        return np.full(n, 1.0 / n)
    if cfg.correlation_mode == "continual":
        return np.ones(n)

    lhs = (1.0 - cfg.alpha1) * cfg.beta
    rhs = (n - 1) / n
    if not lhs < rhs:
        if quota:
            return np.full(n, cfg.alpha1)
        raise ConstraintViolation(
            f"(1 - alpha1) * beta = {lhs:.6g} must be < (n - 1) / n = {rhs:.6g} "
            f"for a temporally correlated imbalanced axis (alpha1={cfg.alpha1}, beta={cfg.beta}, n={n}); "
            "use quota mode instead"
        )
    leaving = (1.0 - cfg.alpha1) * cfg.beta ** (np.arange(n) / (n - 1))
    return 1.0 - leaving


def _as_alpha(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if a.ndim != 1:
        raise InvalidConfig("a correlation vector must be one-dimensional")
    if a.size < 2:
        raise InvalidConfig(f"a ULMM needs at least 2 states, got {a.size}")
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise InvalidConfig("correlation factors must lie in [0, 1]")
    return a


def build_ulmm(alpha) -> np.ndarray:
    a = _as_alpha(alpha)
    n = a.size
    p = np.repeat(((1.0 - a) / (n - 1))[:, None], n, axis=1)
    np.fill_diagonal(p, a)
    return p


def check_stochastic(p, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Validate and return ``p`` as a float row-stochastic square matrix."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise InvalidConfig(f"transition matrix must be square, got shape {p.shape}")
    if np.any(p < 0.0):
        raise InvalidConfig("transition matrix has negative entries")
    err = np.abs(p.sum(axis=1) - 1.0).max()
    if err > tol:
        raise InvalidConfig(f"rows do not sum to 1 (max deviation {err:.3g})")
    return p


def stationary_closed_form(alpha) -> np.ndarray:
    """Stationary distribution of a ULMM: ``pi[i]`` proportional to ``1 / (1 - alpha[i])``."""
    a = _as_alpha(alpha)
    if np.any(a >= 1.0):
        raise DegenerateChain(
            "a state with alpha = 1 is absorbing; the chain has no unique stationary distribution"
        )
    w = 1.0 / (1.0 - a)
    return w / w.sum()


def stationary_oracle(p, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary distribution by plain power iteration of ``pi @ P``.

    Independent of the ULMM structure; used to check the closed form.
    """
    p = check_stochastic(p)
    n = p.shape[0]
    # non-uniform start: the uniform vector is a fixed point of some periodic chains
    pi = np.arange(1.0, n + 1.0)
    pi /= pi.sum()
    for _ in range(max_iter):
        nxt = pi @ p
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < tol:
            return nxt
        pi = nxt
    raise NonConvergence(
        f"power iteration did not settle within {max_iter} steps; the chain may be reducible or periodic"
    )


def kronecker_compose(p_domain, p_class) -> np.ndarray:
    """Joint chain over (domain, class) pairs.

    State ``d * n_class + k`` encodes domain ``d`` and class ``k``.
    """
    pd = check_stochastic(p_domain)
    pc = check_stochastic(p_class)
    return np.kron(pd, pc)


def joint_index(domain, cls, n_class):
    return np.asarray(domain) * n_class + np.asarray(cls)


def split_index(state, n_class):
    """Inverse of :func:`joint_index`; returns ``(domain, class)``."""
    return np.divmod(state, n_class)

"""Three-forward-pass adaptation over a synthetic world.

Per sample:

1. normalize every slot with the global statistics and take the argmax as
   a class pseudo-label;
2. run again, updating the global (one-domain) bank cell of that class
   before normalizing; at the domain-prediction slot match the instance
   statistics against the domain bank;
3. run with the assigned domain's statistics (opening a new domain first if
   flagged), updating that domain's cell, and pick the most confident of
   the forward-2 and forward-3 candidates.

The engine is strictly sequential and never looks ahead in the stream.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .bdn import StatsBank, instance_stats
from .cofa import cofa_predict, select_index, single_predict
from .errors import ConfigMismatch, InvalidConfig
from .stream import Stream
from .world import PretrainedModel, SyntheticWorld, fit_source

MODES = ("unitta", "cofa_only", "bdn_only", "global_bn_baseline", "test_baseline")


@dataclass(frozen=True)
class EngineConfig:
    """Engine options.

    ``force_single_domain`` and ``bypass_cofa`` switch off one component of
    ``unitta``; ``cofa_only`` and ``bdn_only`` are those ablations by name.
    ``eta=None`` uses ``5e-4 * n_classes``.
    """

    mode: str = "unitta"
    domain_pred_layer: int = 0
    filter_enabled: bool = True
    eta: Optional[float] = None
    force_single_domain: bool = False
    bypass_cofa: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.domain_pred_layer < 0:
            raise InvalidConfig("domain_pred_layer must be nonnegative")

    @property
    def use_cofa(self) -> bool:
        return self.mode in ("unitta", "cofa_only") and not self.bypass_cofa

    @property
    def expand_domains(self) -> bool:
        return self.mode in ("unitta", "bdn_only") and not self.force_single_domain

    @property
    def three_pass(self) -> bool:
        return self.mode in ("unitta", "cofa_only", "bdn_only")

    def replace(self, **kw) -> "EngineConfig":
        return EngineConfig(**{**asdict(self), **kw})


@dataclass(frozen=True)
class Prediction:
    label: int
    probs: np.ndarray
    domain: Optional[int] = None
    new_domain: bool = False
    source: str = "single"


# candidate order: plain before COFA inside a pass, forward 3 before forward 2
_CANDIDATE_NAMES = ("f3_single", "f3_cofa", "f2_single", "f2_cofa")


class Engine:
    def __init__(self, model: PretrainedModel, cfg: EngineConfig, n_classes: Optional[int] = None):
        if cfg.domain_pred_layer >= model.n_layers:
            raise InvalidConfig(
                f"domain_pred_layer {cfg.domain_pred_layer} outside a {model.n_layers}-layer model"
            )
        self.model = model
        self.cfg = cfg
        k = model.classifier.n_classes if n_classes is None else n_classes
        self.global_banks = [StatsBank(a, k, cfg.eta) for a in model.anchors]
        self.domain_banks = [StatsBank(a, k, cfg.eta) for a in model.anchors]
        self.prev_z: Optional[np.ndarray] = None

    @property
    def n_domains(self) -> int:
        return self.domain_banks[self.cfg.domain_pred_layer].n_domains

    @property
    def assignment_bank(self) -> StatsBank:
        return self.domain_banks[self.cfg.domain_pred_layer]

    def _pass(self, x, banks, d: int, k: Optional[int], probe: bool = False):
        """One forward pass; updates cell ``(d, k)`` of every slot first when ``k`` is given."""
        model = self.model
        inst = None
        a = x
        for layer in range(model.n_layers):
            h = model.mix(layer, a)
            if probe and layer == self.cfg.domain_pred_layer:
                inst = instance_stats(h)
            bank = banks[layer]
            if k is not None:
                bank.ema_update(d, k, h)
            a = model.activate(layer, h, bank.mu[d], bank.var[d])
        return a.mean(axis=(1, 2)), inst

    def _probs(self, z):
        clf = self.model.classifier
        single = single_predict(z, clf)
        if not self.cfg.use_cofa or self.prev_z is None:
            return single, None
        return single, cofa_predict(z, self.prev_z, clf)

    def _pick(self, single, cofa):
        if cofa is None:
            return single
        if self.cfg.filter_enabled:
            return cofa if select_index([single, cofa]) == 1 else single
        return cofa

    def step(self, x: np.ndarray) -> Prediction:
        cfg = self.cfg
        clf = self.model.classifier
        if cfg.mode == "test_baseline":
            p = single_predict(self.model.forward(x), clf)
            return Prediction(int(np.argmax(p)), p)

        # forward 1: global statistics, no update
        z1, _ = self._pass(x, self.global_banks, 0, None)
        k1 = int(np.argmax(single_predict(z1, clf)))

        # forward 2: update global/class statistics, predict the domain
        z2, inst = self._pass(x, self.global_banks, 0, k1, probe=cfg.three_pass)
        p2_single, p2_cofa = self._probs(z2)
        if not cfg.three_pass:
            return Prediction(int(np.argmax(p2_single)), p2_single)
        k2 = int(np.argmax(self._pick(p2_single, p2_cofa)))

        assignment = self.assignment_bank.assign_or_flag(inst)
        new = assignment.is_new
        if not new:
            d = assignment.domain
        elif cfg.expand_domains:
            for bank in self.domain_banks:
                d = bank.expand()
        else:
            d = int(np.argmin(self.assignment_bank.divergences(inst)))
        self.assignment_bank.record_assignment(d)

        # forward 3: domain statistics for the final prediction
        z3, _ = self._pass(x, self.domain_banks, d, k2)
        p3_single, p3_cofa = self._probs(z3)
        if cfg.use_cofa:
            self.prev_z = z3

        if cfg.filter_enabled:
            cands = [p3_single, p3_cofa, p2_single, p2_cofa]
            present = [i for i, p in enumerate(cands) if p is not None]
            i = present[select_index([cands[j] for j in present])]
            p, source = cands[i], _CANDIDATE_NAMES[i]
        elif p3_cofa is not None:
            p, source = p3_cofa, "f3_cofa"
        else:
            p, source = p3_single, "f3_single"
        return Prediction(int(np.argmax(p)), p, d, new, source)


@dataclass
class Metrics:
    mode: str
    setting: str
    n_samples: int
    error: float  # top-1 error in percent
    n_domains: int = 1
    domains_over_100: int = 1
    assignment_accuracy: Optional[float] = None
    confusion: list = field(default_factory=list)
    domain_pred_layer: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def assignment_purity(true_domains, assigned) -> float:
    """Fraction of samples whose discovered domain maps to their true domain.

    Each discovered domain is mapped to the true domain it most often holds.
    """
    groups: dict[int, Counter] = {}
    for t, a in zip(true_domains, assigned):
        groups.setdefault(a, Counter())[t] += 1
    hits = sum(c.most_common(1)[0][1] for c in groups.values())
    return hits / len(true_domains)


def compute_metrics(cfg: EngineConfig, stream: Stream, preds, engine: Engine, setting: str = "") -> Metrics:
    labels = np.array([p.label for p in preds])
    k = stream.n_classes
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (stream.cls, labels), 1)
    err = 100.0 * float(np.mean(labels != stream.cls))
    m = Metrics(cfg.mode, setting, len(stream), err, confusion=confusion.tolist(), domain_pred_layer=cfg.domain_pred_layer)
    if cfg.three_pass:
        bank = engine.assignment_bank
        m.n_domains = bank.n_domains
        m.domains_over_100 = bank.domains_over(100)
        m.assignment_accuracy = assignment_purity(stream.domain.tolist(), [p.domain for p in preds])
    return m


def _check_dims(stream: Stream, world: SyntheticWorld):
    if stream.n_domains != world.n_domains or stream.n_classes != world.n_classes:
        raise ConfigMismatch(
            f"stream has {stream.n_domains} domains x {stream.n_classes} classes, "
            f"world has {world.n_domains} x {world.n_classes}"
        )


def run_detailed(
    cfg: EngineConfig,
    stream: Stream,
    world: SyntheticWorld,
    model: Optional[PretrainedModel] = None,
    batch_size: int = 1,
    setting: str = "",
):
    """Run a stream; returns ``(metrics, engine, predictions)``.

    ``batch_size`` only groups how inputs are materialized; samples are
    still processed one at a time.
    """
    _check_dims(stream, world)
    model = fit_source(world) if model is None else model
    if model.classifier.n_classes != stream.n_classes:
        raise ConfigMismatch("model head and stream disagree on the class count")
    engine = Engine(model, cfg, stream.n_classes)
    preds = []
    for start in range(0, len(stream), batch_size):
        sl = slice(start, start + batch_size)
        xs = world.samples(stream.domain[sl], stream.cls[sl], stream.sample_id[sl])
        preds.extend(engine.step(x) for x in xs)
    return compute_metrics(cfg, stream, preds, engine, setting), engine, preds


def run(cfg: EngineConfig, stream: Stream, world: SyntheticWorld, model: Optional[PretrainedModel] = None, **kw) -> Metrics:
    return run_detailed(cfg, stream, world, model, **kw)[0]


def sweep_layer(cfg: EngineConfig, stream: Stream, world: SyntheticWorld, model: Optional[PretrainedModel] = None) -> list[Metrics]:
    """One run per candidate domain-prediction slot."""
    model = fit_source(world) if model is None else model
    return [run(cfg.replace(domain_pred_layer=m), stream, world, model) for m in range(model.n_layers)]

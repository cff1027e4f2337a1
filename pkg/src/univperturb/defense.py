"""Fine-tuning against universal perturbations with adaptive-magnitude mixing."""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError
from .models import SampleSet, TrainConfig, accuracy, train
from .numerics import as_vector, child_seed, lp_norm, make_rng
from .universal import BUDGET_SLACK, UniversalConfig, compute_universal, fooling_rate

log = logging.getLogger(__name__)

ALPHA_MAX = 10.0
ALPHA_START = 2.0 ** -10
BISECTION_STEPS = 30
FINETUNE_LR_SCALE = 0.1


class PerturbationPool:
    """Universal perturbations sharing norm order, budget and source model."""

    def __init__(self, members):
        members = list(members)
        if not members:
            raise ConfigError("perturbation pool is empty")
        first = members[0]
        for m in members:
            if m.p != first.p or m.xi != first.xi or m.model_id != first.model_id:
                raise ConfigError("pool members must share p, xi and model provenance")
            if not np.any(m.v):
                raise DomainError("pool members must be nonzero")
            if lp_norm(m.v, m.p) > m.xi * (1 + BUDGET_SLACK):
                raise DomainError("pool member exceeds its budget")
        self.members = members

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]


def adaptive_magnitude(model, x, v, alpha_max=ALPHA_MAX):
    """Smallest ``alpha`` in ``(0, alpha_max]`` with ``predict(x + alpha v) != predict(x)``.

    Doubles ``alpha`` from ``2**-10`` until the label changes, then bisects the
    last bracket 30 times, so the crossing returned is the first one met along
    the doubling sequence. Returns None if nothing up to ``alpha_max`` fools.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        raise DomainError("adaptive magnitude needs a nonzero direction")
    x = as_vector(x, v.shape[0])
    k = model.predict(x)
    lo, hi = 0.0, min(ALPHA_START, alpha_max)
    while model.predict(x + hi * v) == k:
        if hi >= alpha_max:
            return None
        lo, hi = hi, min(2.0 * hi, alpha_max)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if model.predict(x + mid * v) == k:
            lo = mid
        else:
            hi = mid
    return hi


def perturb_training_set(model, data, pool, mix_prob, rng, alpha_max=ALPHA_MAX):
    """One epoch's modified training set.

    Each sample is replaced with probability ``mix_prob`` by ``x + alpha v``
    for a pool member ``v`` drawn uniformly; ``alpha`` is adaptive, or 1 when
    no crossing exists. Labels stay clean. Returns ``(SampleSet, mask)``.
    """
    if not 0.0 <= mix_prob <= 1.0:
        raise ConfigError("mix_prob must lie in [0, 1]")
    m = len(data)
    mask = rng.random(m) < mix_prob
    picks = rng.integers(0, len(pool), size=m)
    inputs = data.inputs.copy()
    for i in np.flatnonzero(mask):
        v = pool[picks[i]].v
        alpha = adaptive_magnitude(model, data.inputs[i], v, alpha_max)
        inputs[i] = data.inputs[i] + (1.0 if alpha is None else alpha) * v
    return SampleSet(inputs, data.labels, data.name), mask


def finetune_with_pool(model, trainset, pool, epochs, mix_prob, rng, train_cfg=None):
    """Continue training ``model`` (in place) on pool-perturbed copies of ``trainset``.

    The modified set is rebuilt at the start of each epoch against the current
    model. ``train_cfg`` supplies the batch size, seed and weight decay; its
    learning rate is used as given.
    """
    if len(pool) == 0:
        raise ConfigError("perturbation pool is empty")
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if not 0.0 <= mix_prob <= 1.0:
        raise ConfigError("mix_prob must lie in [0, 1]")
    cfg = replace(train_cfg or TrainConfig(), epochs=int(epochs))

    def epoch_data(epoch, current):
        mixed, mask = perturb_training_set(current, trainset, pool, mix_prob, rng)
        log.debug("epoch %d: %d of %d samples perturbed", epoch, int(mask.sum()), len(mask))
        return mixed

    return train(model, trainset, cfg, epoch_data=epoch_data)


@dataclass
class RobustnessConfig:
    universal: UniversalConfig = field(default_factory=UniversalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pool_size: int = 10
    epochs: int = 5
    mix_prob: float = 0.5
    x_size: int = 500
    fresh_runs: int = 3
    seed: int = 0

    def __post_init__(self):
        if min(self.pool_size, self.epochs, self.x_size, self.fresh_runs) < 1:
            raise ConfigError("pool_size, epochs, x_size and fresh_runs must be >= 1")
        if not 0.0 <= self.mix_prob <= 1.0:
            raise ConfigError("mix_prob must lie in [0, 1]")


@dataclass
class RoundReport:
    round: int
    fresh_fooling_rate: float
    clean_accuracy: float


def _fresh_rate(model, X, valset, cfg, seed):
    rates = []
    for j in range(cfg.fresh_runs):
        pert = compute_universal(model, X, replace(cfg.universal, seed=child_seed(seed, j)))
        rates.append(fooling_rate(model, valset, pert.v).rate)
    return float(np.mean(rates))


def robustness_iteration(model, trainset, valset, cfg, rounds):
    """Alternate pool computation, fine-tuning and fresh-perturbation measurement.

    Row 0 of the report measures the untouched model. Each later round builds
    a pool of ``cfg.pool_size`` universal perturbations (distinct shuffle
    seeds) on the current model, fine-tunes a copy for ``cfg.epochs`` epochs at
    0.1x the base learning rate, then recomputes ``cfg.fresh_runs`` fresh
    universal perturbations and reports their mean validation fooling rate
    with the clean validation accuracy. Returns ``(model, reports)``.
    """
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    base = cfg.seed
    order = make_rng(child_seed(base, 0)).permutation(len(trainset))
    X = trainset.subset(np.sort(order[: min(cfg.x_size, len(trainset))]), "X")
    model = model.copy()
    reports = [
        RoundReport(0, _fresh_rate(model, X, valset, cfg, child_seed(base, 1)), accuracy(model, valset))
    ]
    for rnd in range(1, rounds + 1):
        members = [
            compute_universal(model, X, replace(cfg.universal, seed=child_seed(base, 100 * rnd + j)))
            for j in range(cfg.pool_size)
        ]
        pool = PerturbationPool(members)
        tcfg = replace(cfg.train, lr=cfg.train.lr * FINETUNE_LR_SCALE, seed=child_seed(base, 100 * rnd + 99))
        rng = make_rng(child_seed(base, 100 * rnd + 98))
        model = finetune_with_pool(model, trainset, pool, cfg.epochs, cfg.mix_prob, rng, tcfg)
        rate = _fresh_rate(model, X, valset, cfg, child_seed(base, 100 * rnd + 1))
        acc = accuracy(model, valset)
        if math.isnan(acc) or math.isnan(rate):
            raise ConfigError("round produced NaN metrics")
        log.info("round %d: fresh fooling rate %.4f, clean accuracy %.4f", rnd, rate, acc)
        reports.append(RoundReport(rnd, rate, acc))
    return model, reports

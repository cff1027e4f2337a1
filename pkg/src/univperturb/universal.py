"""Universal perturbations: aggregate per-sample minimal steps, project on the lp ball."""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import DEFAULT_MAX_ITER, DEFAULT_OVERSHOOT, minimal_perturbation
from .errors import ConfigError, DomainError, NumericalError, ParseError, ShapeError, UnsupportedVersionError
from .numerics import as_vector, lp_norm, make_rng, norm_order_label, parse_norm_order

log = logging.getLogger(__name__)

PERTURBATION_FORMAT_VERSION = 1
BUDGET_SLACK = 1e-9


def project_lp(v, p, xi):
    """Euclidean projection of ``v`` onto ``{u : ||u||_p <= xi}`` for p in {2, inf}."""
    try:
        p = parse_norm_order(p)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    if not xi > 0:
        raise ConfigError("xi must be positive")
    v = np.asarray(v, dtype=np.float64)
    if p == math.inf:
        return np.clip(v, -xi, xi)
    n = np.linalg.norm(v)
    if n <= xi:
        return v.copy()
    out = v * (xi / n)
    # rounding can leave the norm an ulp above xi; shrink until the identity branch
    # above accepts the result, which makes the projection exactly idempotent
    while np.linalg.norm(out) > xi:
        out *= 1.0 - 2.0 ** -52
    return out


@dataclass
class FoolingReport:
    rate: float
    flipped: np.ndarray  # bool per sample
    original: np.ndarray  # clean predicted labels
    perturbed: np.ndarray  # labels after adding v

    @property
    def pairs(self):
        return list(zip(self.original.tolist(), self.perturbed.tolist()))


def fooling_rate(model, X, v, clip=None):
    """Fraction of samples whose predicted label changes when ``v`` is added.

    Compares against the model's clean predictions, never ground truth.
    ``clip=(lo, hi)`` clamps perturbed inputs to a valid range first.
    """
    inputs = X.inputs if hasattr(X, "inputs") else np.asarray(X, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise DomainError("fooling rate of an empty set")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (inputs.shape[1],):
        raise ShapeError("perturbation dimension does not match the samples")
    clean = model.predict(inputs)
    pert = inputs + v
    if clip is not None:
        pert = np.clip(pert, clip[0], clip[1])
    fooled = model.predict(pert)
    flipped = fooled != clean
    return FoolingReport(float(np.mean(flipped)), flipped, clean, fooled)


@dataclass
class UniversalConfig:
    p: object = math.inf
    xi: float = 1.0
    delta: float = 0.2
    max_passes: int = 10
    seed: int = 0
    overshoot: float = DEFAULT_OVERSHOOT
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        try:
            self.p = parse_norm_order(self.p)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        if not self.xi > 0:
            raise ConfigError("xi must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.max_passes < 1:
            raise ConfigError("max_passes must be >= 1")
        if self.max_iter < 1 or self.overshoot < 0:
            raise ConfigError("bad attack settings")


@dataclass
class Perturbation:
    v: np.ndarray
    p: object
    xi: float
    model_id: str = ""
    seed: int = 0
    passes: int = 0
    converged: bool = True
    fooling_rate: float = float("nan")
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.v = as_vector(self.v)
        self.p = parse_norm_order(self.p)
        if lp_norm(self.v, self.p) > self.xi * (1 + BUDGET_SLACK):
            raise DomainError("perturbation exceeds its budget")

    @property
    def dim(self):
        return self.v.shape[0]


def compute_universal(model, X, cfg, hook=None):
    """Build a universal perturbation for ``model`` from the samples ``X``.

    Each pass visits ``X`` in a freshly shuffled order. A sample still
    classified as its clean label under the current ``v`` contributes the
    DeepFool step from ``x + v``, after which ``v`` is projected back on the
    budget ball. Passes stop once the fooling rate on ``X`` exceeds
    ``1 - delta``, or after ``cfg.max_passes`` with ``converged=False``.

    ``hook(v)`` is called after every update, for instrumentation.
    """
    if len(X) == 0:
        raise DomainError("empty sample set")
    if X.dim != model.input_dim:
        raise ShapeError("sample dimension does not match the model")
    rng = make_rng(cfg.seed)
    inputs = X.inputs
    clean = model.predict(inputs)
    v = np.zeros(model.input_dim)
    target = 1.0 - cfg.delta
    err = 0.0
    passes = 0
    converged = False
    history = []
    while passes < cfg.max_passes:
        passes += 1
        for i in rng.permutation(len(X)):
            xi_v = inputs[i] + v
            if model.predict(xi_v) != clean[i]:
                continue
            try:
                res = minimal_perturbation(model, xi_v, cfg.max_iter, cfg.overshoot, label=clean[i])
            except NumericalError as exc:
                log.warning("skipping sample %d: %s", i, exc)
                continue
            if not res.fooled:
                continue
            v = project_lp(v + res.r, cfg.p, cfg.xi)
            if hook is not None:
                hook(v)
        err = fooling_rate(model, X, v).rate
        history.append(err)
        log.info("pass %d: fooling rate on X %.4f", passes, err)
        if err > target:
            converged = True
            break
    return Perturbation(v, cfg.p, cfg.xi, model.model_id(), cfg.seed, passes, converged, err, history)


def perturbation_to_dict(pert):
    return {
        "format_version": PERTURBATION_FORMAT_VERSION,
        "p": norm_order_label(pert.p),
        "xi": pert.xi,
        "dim": pert.dim,
        "data": pert.v.tolist(),
        "model_id": pert.model_id,
        "seed": pert.seed,
        "passes": pert.passes,
        "converged": pert.converged,
    }


def perturbation_from_dict(doc):
    if not isinstance(doc, dict):
        raise ParseError("perturbation document must be a JSON object")
    version = doc.get("format_version")
    if version != PERTURBATION_FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported perturbation format_version {version!r}")
    try:
        data = np.asarray(doc["data"], dtype=np.float64)
        if data.ndim != 1 or data.shape[0] != int(doc["dim"]):
            raise ParseError("perturbation data length does not match dim")
        return Perturbation(
            data,
            doc["p"],
            float(doc["xi"]),
            str(doc.get("model_id", "")),
            int(doc.get("seed", 0)),
            int(doc.get("passes", 0)),
            bool(doc.get("converged", True)),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r} in perturbation document") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad perturbation field: {exc}") from None


def save_perturbation(pert, path):
    Path(path).write_text(json.dumps(perturbation_to_dict(pert)) + "\n", encoding="utf-8")


def load_perturbation(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return perturbation_from_dict(doc)

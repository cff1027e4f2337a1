"""Geometry and comparison experiments around universal perturbations.

Baselines and norm sweeps, cross-model transfer, the matrix of boundary
normals and its spectrum, random probes inside the normals' top singular
subspace, the dominant-label graph, and the random-direction scaling check.
Writers at the bottom emit CSV and DOT files.
"""

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .attacks import DEFAULT_MAX_ITER, DEFAULT_OVERSHOOT, fgs_perturbation, minimal_perturbation
from .errors import AnalysisError, ConfigError, DomainError, NumericalError
from .numerics import sample_sphere, svd
from .universal import compute_universal, fooling_rate

log = logging.getLogger(__name__)

BASELINE_KINDS = ("random_sphere", "single_adversarial_df", "single_adversarial_fgs", "sum_adversarial", "data_mean")
MAX_REDRAWS = 10


def baseline_perturbations(model, X, kind, rng, overshoot=DEFAULT_OVERSHOOT, max_iter=DEFAULT_MAX_ITER,
                           fgs_epsilon=0.1):
    """Unscaled comparison direction of the given ``kind`` (see ``BASELINE_KINDS``)."""
    if len(X) == 0:
        raise DomainError("empty sample set")
    if kind == "random_sphere":
        return sample_sphere(X.dim, 1.0, rng)
    if kind == "data_mean":
        return X.inputs.mean(axis=0)
    if kind == "sum_adversarial":
        total = np.zeros(X.dim)
        for x in X.inputs:
            total += minimal_perturbation(model, x, max_iter, overshoot).r
        return total
    if kind in ("single_adversarial_df", "single_adversarial_fgs"):
        for _ in range(MAX_REDRAWS):
            x = X.inputs[int(rng.integers(len(X)))]
            try:
                if kind == "single_adversarial_df":
                    res = minimal_perturbation(model, x, max_iter, overshoot)
                else:
                    res = fgs_perturbation(model, x, epsilon=fgs_epsilon)
            except NumericalError:
                continue
            if res.fooled or (kind == "single_adversarial_fgs" and np.any(res.r)):
                return res.r
        raise AnalysisError(f"{kind}: attack failed on {MAX_REDRAWS} drawn samples")
    raise ConfigError(f"unknown baseline kind {kind!r}")


def rescale(v, norm):
    """``v`` scaled to the given l2 norm."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise DomainError("cannot rescale a zero perturbation")
    if norm < 0:
        raise DomainError("target norms must be nonnegative")
    return v * (norm / n)


def norm_sweep(model, valset, perturbation, norms):
    """Fooling rate of ``perturbation`` rescaled to each l2 norm in ``norms``.

    Returns a list of ``(norm, rate)`` pairs in the order given.
    """
    rescale(perturbation, 1.0)
    curve = []
    for target in norms:
        v = rescale(perturbation, target)
        rate = 0.0 if target == 0 else fooling_rate(model, valset, v).rate
        curve.append((float(target), rate))
    return curve


@dataclass
class TransferMatrix:
    model_ids: list
    rates: np.ndarray  # rows: source model, columns: evaluated model

    def diagonal_dominates_row_mean(self):
        return bool(np.all(np.diag(self.rates) >= self.rates.mean(axis=1)))


def transfer_matrix(models, X, valset, cfg, ids=None):
    """Fooling rate on ``valset`` of each model's universal perturbation against every model."""
    if not models:
        raise ConfigError("no models given")
    dims = {m.input_dim for m in models}
    if len(dims) != 1:
        raise ConfigError("models disagree on input dimension")
    ids = list(ids) if ids is not None else [f"model{i}" for i in range(len(models))]
    perts = [compute_universal(m, X, cfg) for m in models]
    rates = np.array([[fooling_rate(target, valset, p.v).rate for target in models] for p in perts])
    return TransferMatrix(ids, rates)


@dataclass
class NormalsMatrix:
    matrix: np.ndarray  # (d, n), unit columns
    sample_ids: list = field(default_factory=list)


def build_normals_matrix(model, samples, overshoot=DEFAULT_OVERSHOOT, max_iter=DEFAULT_MAX_ITER,
                         min_success=0.9):
    """Unit minimal perturbations of ``samples``, one column per successful attack."""
    cols, ids = [], []
    for i, x in enumerate(samples.inputs):
        try:
            res = minimal_perturbation(model, x, max_iter, overshoot)
        except NumericalError as exc:
            log.warning("normals: sample %d failed: %s", i, exc)
            continue
        n = np.linalg.norm(res.r)
        if not res.fooled or n == 0:
            log.info("normals: dropping sample %d (attack did not converge)", i)
            continue
        cols.append(res.r / n)
        ids.append(i)
    if len(ids) < min_success * len(samples):
        raise AnalysisError(f"only {len(ids)} of {len(samples)} attacks succeeded; sample more points")
    return NormalsMatrix(np.column_stack(cols), ids)


def random_unit_columns(d, n, rng):
    return np.column_stack([sample_sphere(d, 1.0, rng) for _ in range(n)])


def singular_spectrum_comparison(N, rng):
    """Singular values of ``N`` and of a same-shape matrix of uniform unit columns."""
    d, n = N.matrix.shape
    sigma_n = svd(N.matrix)[1]
    sigma_r = svd(random_unit_columns(d, n, rng))[1]
    return sigma_n, sigma_r


def energy_fraction(sigma, k):
    """Share of the squared singular values carried by the top ``k``."""
    s2 = np.asarray(sigma) ** 2
    return float(s2[:k].sum() / s2.sum())


@dataclass
class SubspaceProbe:
    vector: np.ndarray
    basis: np.ndarray  # (d, k) orthonormal
    fooling_rate: float


def subspace_probe(N, k, xi, evalset, model, rng):
    """Fooling rate of a random norm-``xi`` vector in the span of N's top ``k`` left singular vectors.

    ``evalset`` must not contain the samples N was built from.
    """
    u, sigma, _ = svd(N.matrix)
    tol = sigma[0] * max(N.matrix.shape) * np.finfo(float).eps if sigma.size else 0.0
    rank = int(np.sum(sigma > tol))
    if not 1 <= k <= rank:
        raise ConfigError(f"subspace dimension {k} exceeds the rank {rank} of N")
    basis = u[:, :k]
    coef = rng.standard_normal(k)
    vec = basis @ coef
    vec *= xi / np.linalg.norm(vec)
    return SubspaceProbe(vec, basis, fooling_rate(model, evalset, vec).rate)


@dataclass
class LabelGraph:
    vertices: list
    edges: dict  # source -> (target, count)
    totals: dict  # class -> number of samples with that clean prediction
    fooled: dict  # class -> number of those samples fooled
    dominant: dict = field(default_factory=dict)  # component root -> dominant label

    def edge_list(self):
        return [(i, j, c) for i, (j, c) in sorted(self.edges.items())]


def _components(vertices, edges):
    parent = {v: v for v in vertices}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, (j, _) in edges.items():
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for v in vertices:
        groups.setdefault(find(v), []).append(v)
    return groups


def build_label_graph(model, valset, v):
    """Directed graph sending each class to the label most of its fooled samples take.

    Classes are the model's clean predictions. Ties pick the lowest label.
    For every weakly connected component containing an edge, ``dominant``
    maps its smallest vertex to the most common edge target.
    """
    rep = fooling_rate(model, valset, v)
    vertices = list(range(model.num_classes))
    totals = Counter(rep.original.tolist())
    fooled = Counter()
    targets = {}
    for src, dst, flip in zip(rep.original.tolist(), rep.perturbed.tolist(), rep.flipped.tolist()):
        if flip:
            fooled[src] += 1
            targets.setdefault(src, Counter())[dst] += 1
    edges = {}
    for src, cnt in targets.items():
        best = max(cnt.values())
        dst = min(t for t, c in cnt.items() if c == best)
        edges[src] = (dst, cnt[dst])
    dominant = {}
    for root, members in _components(vertices, edges).items():
        tcount = Counter(edges[m][0] for m in members if m in edges)
        if tcount:
            best = max(tcount.values())
            dominant[root] = min(t for t, c in tcount.items() if c == best)
    return LabelGraph(vertices, edges, dict(totals), dict(fooled), dominant)


@dataclass
class ScalingReport:
    ratios: np.ndarray  # radius / (sqrt(d) * ||r||), NaN where censored
    censored: np.ndarray  # bool
    median: float


def _first_flip_radius(model, x, k, u, cap, iters):
    # bisection for the boundary on the ray x + t u, t in (0, cap]
    if model.predict(x + cap * u) == k:
        return None
    lo, hi = 0.0, cap
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if model.predict(x + mid * u) == k:
            lo = mid
        else:
            hi = mid
    return hi


def random_norm_scaling_check(model, samples, rng, cap_factor=1e6, iters=40,
                              overshoot=DEFAULT_OVERSHOOT, max_iter=DEFAULT_MAX_ITER):
    """Distance to the boundary along a random line versus ``sqrt(d) * ||r(x)||``.

    For each sample a random unit direction is drawn; the fooling radius is
    the smaller of the bisected crossings along ``+u`` and ``-u``, searched up
    to ``cap_factor * ||r(x)||``. Samples with no crossing are censored.
    """
    if len(samples) == 0:
        raise DomainError("no samples")
    d = samples.dim
    ratios, censored = [], []
    for x in samples.inputs:
        k = model.predict(x)
        r = minimal_perturbation(model, x, max_iter, overshoot)
        rn = np.linalg.norm(r.r)
        u = sample_sphere(d, 1.0, rng)
        if not r.fooled or rn == 0:
            ratios.append(np.nan)
            censored.append(True)
            continue
        cap = cap_factor * rn
        found = [t for t in (_first_flip_radius(model, x, k, s * u, cap, iters) for s in (1.0, -1.0)) if t is not None]
        if not found:
            ratios.append(np.nan)
            censored.append(True)
            continue
        ratios.append(min(found) / (math.sqrt(d) * rn))
        censored.append(False)
    ratios = np.asarray(ratios)
    censored = np.asarray(censored)
    med = float(np.median(ratios[~censored])) if np.any(~censored) else float("nan")
    return ScalingReport(ratios, censored, med)


def write_curves_csv(path, curves):
    """``curves`` maps a perturbation kind to its ``[(norm, rate), ...]``; norms must agree."""
    kinds = list(curves)
    norms = [n for n, _ in curves[kinds[0]]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["norm", *kinds])
        for i, n in enumerate(norms):
            w.writerow([repr(n), *[repr(curves[k][i][1]) for k in kinds]])


def write_spectra_csv(path, sigma_n, sigma_r):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "sigma_N", "sigma_random"])
        for i, (a, b) in enumerate(zip(sigma_n, sigma_r)):
            w.writerow([i, repr(float(a)), repr(float(b))])


def write_transfer_csv(path, tm):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", *tm.model_ids])
        for mid, row in zip(tm.model_ids, tm.rates):
            w.writerow([mid, *[repr(float(r)) for r in row]])


def write_label_graph_dot(path, graph, names=None):
    name = (lambda i: str(i)) if names is None else (lambda i: names[i])
    lines = ["digraph fooled_labels {"]
    used = sorted({i for i, _, _ in graph.edge_list()} | {j for _, j, _ in graph.edge_list()})
    for v in used:
        lines.append(f'  {v} [label="{name(v)}"];')
    for i, j, c in graph.edge_list():
        lines.append(f'  {i} -> {j} [label="{c}"];')
    lines.append("}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

"""Per-sample perturbation solvers.

``minimal_perturbation`` is the multiclass DeepFool iteration, FGS is the
one-step sign attack, and ``affine_minimal_oracle`` is the closed-form
minimal l2 perturbation of an affine classifier used to check the former.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, InfeasibleError, NumericalError
from .models import softmax
from .numerics import as_vector

DEFAULT_OVERSHOOT = 0.02
DEFAULT_MAX_ITER = 50

# Each linearized step lands a hair past its boundary.
_REL_NUDGE = 1e-9
_ABS_NUDGE = 1e-12


@dataclass
class AttackResult:
    r: np.ndarray
    iterations: int
    fooled: bool
    original_label: int
    new_label: int


def minimal_perturbation(model, x, max_iter=DEFAULT_MAX_ITER, overshoot=DEFAULT_OVERSHOOT, label=None):
    """DeepFool: approximately minimal l2 perturbation changing the label of ``x``.

    Parameters
    ----------
    model : Model
    x : array_like, shape (d,)
    max_iter : int
        Linearization steps before giving up.
    overshoot : float
        The accumulated perturbation is scaled by ``1 + overshoot``.
    label : int, optional
        Label that must be left. Defaults to ``model.predict(x)``; the
        universal algorithm passes the clean label of the unperturbed point.

    Returns
    -------
    AttackResult
        ``fooled`` is False when ``max_iter`` ran out; that is not an error.
    """
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    if overshoot < 0:
        raise ConfigError("overshoot must be >= 0")
    x = as_vector(x, model.input_dim)
    k0 = model.predict(x) if label is None else int(label)
    r_tot, it, status = kernels.deepfool_loop(
        model._w, model._b, model._relu, x, k0, int(max_iter), float(overshoot), _REL_NUDGE, _ABS_NUDGE
    )
    if status == 1:
        raise NumericalError("non-finite gradient in minimal_perturbation")

    r = (1.0 + overshoot) * r_tot
    new = model.predict(x + r)
    return AttackResult(r, it, new != k0, k0, new)


def fgs_perturbation(model, x, label=None, epsilon=0.1):
    """Fast gradient sign step ``epsilon * sign(grad_x CE(x, label))``.

    ``label`` defaults to the model's prediction at ``x``.
    """
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    x = as_vector(x, model.input_dim)
    k0 = model.predict(x)
    y = k0 if label is None else int(label)
    f, jac = model.logits_and_jacobian(x)
    p = softmax(f)
    p[y] -= 1.0
    grad = jac.T @ p
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient in fgs_perturbation")
    r = epsilon * np.sign(grad)
    new = model.predict(x + r)
    return AttackResult(r, 1, new != k0, k0, new)


def affine_minimal_oracle(w_per_class, b_per_class, x):
    """Exact minimal l2 perturbation for the affine classifier ``W x + b``.

    Classes whose weight row equals the current class's row have no boundary
    with it and are skipped.
    """
    w = np.asarray(w_per_class, dtype=np.float64)
    b = np.asarray(b_per_class, dtype=np.float64)
    x = as_vector(x, w.shape[1])
    f = w @ x + b
    k0 = int(np.argmax(f))
    best, best_k = np.inf, None
    for k in range(w.shape[0]):
        if k == k0:
            continue
        dn = np.linalg.norm(w[k] - w[k0])
        if dn == 0:
            continue
        ratio = abs(f[k] - f[k0]) / dn
        if ratio < best:
            best, best_k = ratio, k
    if best_k is None:
        raise InfeasibleError("all class boundaries are degenerate")
    u = w[best_k] - w[k0]
    u /= np.linalg.norm(u)
    r = (best * (1.0 + _REL_NUDGE) + _ABS_NUDGE) * u
    new = int(np.argmax(w @ (x + r) + b))
    return AttackResult(r, 1, new != k0, k0, new)

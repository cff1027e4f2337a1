"""Pure numpy implementations of the hot kernels.

Signatures mirror ``_ckernels``; ``univperturb.kernels`` picks one at import.
"""

import numpy as np


def jacobi_sweeps(at, vt, tol, max_sweeps):
    """One-sided Jacobi orthogonalization of the rows of ``at``, in place.

    ``at`` holds the matrix columns as rows (n x m). Every rotation applied to
    a pair of rows is mirrored on ``vt`` (n x n). Returns the number of sweeps
    performed; a sweep with no rotation ends the iteration.
    """
    n = at.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = at[p]
                aq = at[q]
                alpha = ap @ ap
                beta = aq @ aq
                gamma = ap @ aq
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * ap - s * aq
                at[q] = s * ap + c * aq
                at[p] = new_p
                vp = vt[p]
                vq = vt[q]
                new_vp = c * vp - s * vq
                vt[q] = s * vp + c * vq
                vt[p] = new_vp
        if not rotated:
            break
    return sweeps


def logits_jacobian(weights, biases, relu, x):
    """Logits and their Jacobian w.r.t. ``x`` for a stack of dense layers.

    ``relu[i]`` tells whether layer ``i`` is followed by a ReLU. The ReLU
    derivative at exactly 0 is taken as 0.
    """
    h = x
    masks = []
    for w, b, act in zip(weights, biases, relu):
        h = w @ h + b
        if act:
            m = h > 0.0
            h = np.where(m, h, 0.0)
            masks.append(m)
        else:
            masks.append(None)
    jac = None
    for w, m in zip(reversed(weights), reversed(masks)):
        if jac is None:
            jac = w.copy() if m is None else w * m[:, None]
        else:
            if m is not None:
                jac = jac * m[None, :]
            jac = jac @ w
    return h, jac


def _predict(weights, biases, relu, x):
    h = x
    for w, b, act in zip(weights, biases, relu):
        h = w @ h + b
        if act:
            h = np.maximum(h, 0.0)
    return int(np.argmax(h))


def deepfool_loop(weights, biases, relu, x, k0, max_iter, overshoot, rel_nudge, abs_nudge):
    """Accumulated DeepFool perturbation (before overshoot scaling).

    Returns ``(r_tot, iterations, status)``; status 0 is normal termination,
    1 a non-finite gradient, 2 no class with a usable boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    others = np.arange(weights[-1].shape[0]) != k0
    r = np.zeros_like(x)
    it = 0
    current = _predict(weights, biases, relu, x)
    while current == k0 and it < max_iter:
        f, jac = logits_jacobian(weights, biases, relu, x + r)
        w = jac[others] - jac[k0]
        gap = f[others] - f[k0]
        wn = np.sqrt(np.einsum("ij,ij->i", w, w))
        if not (np.all(np.isfinite(wn)) and np.all(np.isfinite(gap))):
            return r, it, 1
        usable = wn > 0
        if not np.any(usable):
            return r, it, 2
        ratio = np.full(gap.shape, np.inf)
        ratio[usable] = np.abs(gap[usable]) / wn[usable]
        j = int(np.argmin(ratio))
        r = r + ((ratio[j] * (1.0 + rel_nudge) + abs_nudge) / wn[j]) * w[j]
        it += 1
        current = _predict(weights, biases, relu, x + (1.0 + overshoot) * r)
    return r, it, 0

"""Backend selection for the hot kernels.

``jacobi_sweeps`` and ``deepfool_loop`` come from the compiled extension when
it was built, otherwise from the numpy fallback. ``logits_jacobian`` is always
the numpy version: it is matrix products, which BLAS already does well.
Set ``UNIVPERTURB_BACKEND=python`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
jacobi_sweeps = _pykernels.jacobi_sweeps
deepfool_loop = _pykernels.deepfool_loop
logits_jacobian = _pykernels.logits_jacobian

if os.environ.get("UNIVPERTURB_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        jacobi_sweeps = _ckernels.jacobi_sweeps
        deepfool_loop = _ckernels.deepfool_loop

__all__ = ["BACKEND", "jacobi_sweeps", "deepfool_loop", "logits_jacobian"]

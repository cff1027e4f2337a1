"""Build the optional Cython kernels.

The package runs without them; ``univperturb.kernels`` falls back to the
numpy implementations when the extension is missing.
"""

import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("UNIVPERTURB_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "univperturb._ckernels",
                    ["src/univperturb/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

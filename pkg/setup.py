"""Build the optional Cython kernel for the L2 hyperbolic random-feature map.

The package works without it: ``gphlvm.kernels._backend`` falls back to a
NumPy implementation when the compiled module is missing.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "gphlvm.kernels._mc_ext",
                ["src/gphlvm/kernels/_mc_ext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)

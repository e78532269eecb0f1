import os
import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; tmpc falls back to the numpy backend
    cythonize = None

openmp = [] if sys.platform == "darwin" or os.environ.get("TMPC_NO_OPENMP") else ["-fopenmp"]

ext_modules = []
if cythonize is not None and not os.environ.get("TMPC_PURE_PYTHON"):
    ext_modules = cythonize(
        [
            Extension(
                "tmpc._kernels",
                ["src/tmpc/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"] + openmp,
                extra_link_args=openmp,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)

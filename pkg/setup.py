"""Build script for the compiled kernel extension.

The extension is optional: set ADAINFER_SKIP_EXT=1 to install without a
C toolchain. The package then falls back to the numpy kernels at import.
"""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ADAINFER_SKIP_EXT", "0") != "1":
    from Cython.Build import cythonize

    ext = Extension(
        "adainfer.kernels._core",
        ["src/adainfer/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], language_level="3")

setup(ext_modules=ext_modules)

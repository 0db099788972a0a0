"""Build the optional Cython kernels.

If Cython or a C compiler is unavailable the package still installs and
``ufpfts.kernels`` falls back to the pure-Python implementations.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("UFPFTS_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ufpfts._kernels",
                    ["src/ufpfts/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)

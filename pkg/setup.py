"""Builds the optional compiled rasterizer. The package works without it
(a numpy fallback is selected at import), so a missing compiler or Cython
only costs rendering speed."""

import numpy
from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "echotiming._kernels._render_cy",
                ["src/echotiming/_kernels/_render_cy.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffp-contract=off keeps the per-pixel arithmetic bit-identical
                # to the numpy fallback (no FMA fusion).
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)

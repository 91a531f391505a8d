"""Build script.

The only compiled piece is the DTW kernel used by the pitch-contour
metrics.  It is optional: when Cython or a C compiler is unavailable the
package falls back to a pure-Python implementation of the same kernel,
so installation never fails on the extension.
"""

import warnings

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "melosvc._dtw",
                ["src/melosvc/_dtw.pyx"],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    warnings.warn("Cython not available; installing with the pure-Python DTW kernel")

setup(ext_modules=ext_modules)

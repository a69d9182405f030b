"""Build script for the optional compiled convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed extension build is downgraded to a warning.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "anonet._kernels._convext",
                ["src/anonet/_kernels/_convext.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    warnings.warn(f"skipping compiled kernels ({exc}); numpy fallback will be used")

setup(ext_modules=ext_modules)

"""Build hook for the optional compiled scan kernel.

The package is pure Python plus one Cython extension for the selective-scan
recurrence. If Cython or a C compiler is unavailable the build proceeds
without the extension and the package falls back to the numpy kernels at
import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "seqdiff._kernels._scan_cy",
                sources=["src/seqdiff/_kernels/_scan_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as err:  # noqa: BLE001 - any build-chain gap means fallback
    sys.stderr.write(f"seqdiff: building without compiled kernels ({err})\n")

setup(ext_modules=ext_modules)

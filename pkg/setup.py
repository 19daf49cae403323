"""Build script for the optional compiled attention kernel.

The package works without the extension (a NumPy fallback is selected at
import time); compilation failures therefore only cost speed, not features.
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
                "seqfuse.kernels._attn",
                ["src/seqfuse/kernels/_attn.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # noqa: BLE001 - any build-chain failure falls back
    print(f"seqfuse: skipping compiled kernel ({exc}); NumPy fallback will be used", file=sys.stderr)

setup(ext_modules=ext_modules)

"""Build script for the compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a missing Cython toolchain only costs speed.
"""

from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "milnet.kernels._native",
                ["src/milnet/kernels/_native.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level="3",
    )
else:
    extensions = []

setup(ext_modules=extensions)

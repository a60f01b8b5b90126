"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-numpy backend is selected at
import time); the extension only accelerates the training inner loop. Set
DITSCALE_PURE_PYTHON=1 to skip compilation entirely.
"""

import os
import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"skipping compiled kernels ({exc}); "
                          "ditscale will use the pure-numpy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"failed to build {ext.name} ({exc}); "
                          "ditscale will use the pure-numpy backend")


def make_ext_modules():
    if os.environ.get("DITSCALE_PURE_PYTHON"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "ditscale.netcore._kernels",
        ["src/ditscale/netcore/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fno-math-errno", "-funroll-loops"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=make_ext_modules(), cmdclass={"build_ext": OptionalBuildExt})

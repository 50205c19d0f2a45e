"""Build script: compiles the optional convolution extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so any failure here downgrades to a warning.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"warning: building the compiled kernels failed ({exc}); "
            "eqmri will use the pure NumPy fallback",
            file=sys.stderr,
        )


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:  # pragma: no cover - build environment dependent
        print(
            f"warning: {exc}; skipping compiled kernels, "
            "eqmri will use the pure NumPy fallback",
            file=sys.stderr,
        )
        return []
    ext = Extension(
        "eqmri._kernels._convx",
        ["src/eqmri/_kernels/_convx.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})

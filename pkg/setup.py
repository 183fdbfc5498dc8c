"""Build hook for the optional compiled clipping kernel.

The package is fully functional without the extension; ``otmesh.powerdiagram``
falls back to the pure-Python kernel when the import fails.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:  # source build without Cython: pure-Python fallback
    cythonize = None


class OptionalBuildExt(build_ext):
    """Let installation proceed when the extension cannot be compiled."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        warnings.warn(
            f"compiled kernel unavailable, using the pure-Python fallback: {exc}"
        )


if cythonize is not None:
    ext_modules = cythonize(
        [Extension("otmesh._pdclip", ["src/otmesh/_pdclip.pyx"])],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})

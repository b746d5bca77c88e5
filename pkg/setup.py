"""Build script for the optional compiled solver core.

The package is fully functional without the extension: forge.ilp selects a
pure-Python backend at import time when forge.ilp._speedups is missing.
Set FORGE_SKIP_SPEEDUPS=1 to skip compilation entirely.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the speedup extension, but never fail the install over it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"WARNING: building forge.ilp._speedups failed ({exc}); "
            "falling back to the pure-Python solver core.",
            file=sys.stderr,
        )


ext_modules = []
cmdclass = {}
if not os.environ.get("FORGE_SKIP_SPEEDUPS"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "forge.ilp._speedups",
                    sources=["src/forge/ilp/_speedups.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
        cmdclass["build_ext"] = optional_build_ext
    except ImportError:
        print(
            "WARNING: Cython not available; installing without the compiled "
            "solver core.",
            file=sys.stderr,
        )

setup(ext_modules=ext_modules, cmdclass=cmdclass)

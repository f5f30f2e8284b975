"""Build script for the optional Cython kernels.

The package works without the compiled extension; ``hdmed.kernels`` falls
back to the pure-Python implementation when ``hdmed._ckernels`` is missing.
"""
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: skipping compiled kernels ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    exts = [
        Extension(
            "hdmed._ckernels",
            sources=["src/hdmed/_ckernels.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    return cythonize(exts, language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})

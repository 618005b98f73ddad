"""Builds the optional compiled kernel extension.

The package is fully functional without it (the numpy kernel backend is
selected at import when the extension is absent).  Build in place with:

    python setup.py build_ext --inplace
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Carry on with the pure-Python kernels when compilation fails."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            print(f"warning: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc})")


ext_modules = []
if not os.environ.get("BAGFORGE_SKIP_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "bagforge.kernels._ck",
                    sources=["src/bagforge/kernels/_ck.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError as exc:
        print(f"warning: compiled kernels unavailable ({exc})")

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})

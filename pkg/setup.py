"""Build the optional compiled kernels.

The package works without them (``bevkit._pykernels`` is used instead), so a
missing compiler or Cython only produces a warning.
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
                "bevkit._kernels",
                ["src/bevkit/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"bevkit: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)

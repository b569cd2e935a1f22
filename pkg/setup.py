"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); compiling it speeds up the dense forward/backward inner loops.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "erpbpnn._kernels",
                ["src/erpbpnn/_kernels.pyx"],
                # No -ffast-math: summation order stays fixed so results are
                # reproducible run-to-run.
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)

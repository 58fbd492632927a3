"""Build hook for the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time); the build is therefore best-effort and never fails the install.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gridcascade._kernels_cy",
                ["src/gridcascade/_kernels_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"compiled kernels skipped: {exc}")

setup(ext_modules=ext_modules)

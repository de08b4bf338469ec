"""Build script: compiles the optional accelerator extension.

The package is fully functional without the extension (a pure-numpy
implementation is selected at import time when ``dualdecomp._kernel`` is
missing), so any failure to build it is demoted to a warning.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "dualdecomp._kernel",
                ["src/dualdecomp/_kernel.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - degraded build path
    sys.stderr.write(
        "warning: could not set up the compiled kernel (%s); "
        "installing with the pure-python backend only\n" % exc
    )

setup(ext_modules=ext_modules)

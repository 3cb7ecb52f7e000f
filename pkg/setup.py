"""Build the optional Cython rollout kernel.

The extension is marked optional: when Cython or a C compiler is missing the
package still installs and falls back to the pure-Python kernel.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    USE_CYTHON = True
except ImportError:
    USE_CYTHON = False

ext = Extension(
    "ltnctrl._kernels",
    ["src/ltnctrl/_kernels.pyx" if USE_CYTHON else "src/ltnctrl/_kernels.c"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
    optional=True,
)

extensions = [ext]
if USE_CYTHON:
    extensions = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=extensions)

"""Build script for the compiled Kalman kernels.

The package runs without the extension (a pure-NumPy fallback is selected at
import time); build it in place for development with::

    python setup.py build_ext --inplace
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "dfmap.kalman._ckalman",
        ["src/dfmap/kalman/_ckalman.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))

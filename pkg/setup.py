import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

npy_random_lib = os.path.join(os.path.dirname(np.__file__), "random", "lib")

ext = Extension(
    "dnsp._chain_ext",
    ["src/dnsp/_chain_ext.pyx"],
    language="c++",
    include_dirs=[np.get_include()],
    library_dirs=[npy_random_lib],
    libraries=["npyrandom"],
    extra_compile_args=["-O2", "-ffp-contract=off"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3))

import os

import numpy
from setuptools import setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
pyx = os.path.join("src", "svkwave", "_stencils.pyx")
if cythonize is not None and os.path.exists(pyx):
    ext_modules = cythonize(
        [pyx],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
        ext.extra_compile_args = ["-O3"]

setup(ext_modules=ext_modules)

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "linkpattern._kernels._ckernels",
    ["src/linkpattern/_kernels/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize([ext], language_level=3))

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "plls._convcore",
                ["src/plls/_convcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python conv backend is selected at import time when the
    # compiled core is unavailable.
    ext_modules = []

setup(ext_modules=ext_modules)

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PCDNSIM_PURE") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "pcdnsim._kernels._ckernels",
                    ["src/pcdnsim/_kernels/_ckernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython: the package still works on the pure-python kernels.
        ext_modules = []

setup(ext_modules=ext_modules)

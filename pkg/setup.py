import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ROBUSTDR_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "robustdr._kernels",
                    ["src/robustdr/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # pure-Python install; robustdr.kernels falls back to numpy
        ext_modules = []

setup(ext_modules=ext_modules)

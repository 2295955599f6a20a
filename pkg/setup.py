"""Build the optional Cython kernels.

The package imports a pure-Python fallback when the extension is missing, so a
failed compile only costs speed.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("CO2SEQ_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "co2seq._kernels",
                    ["src/co2seq/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
        for ext in ext_modules:
            ext.optional = True

setup(ext_modules=ext_modules)

"""Build configuration for the optional compiled likelihood kernel.

The package works without the extension; covcast.kernels falls back to the
NumPy implementation when the compiled module is absent.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "covcast._loglik",
                sources=["src/covcast/_loglik.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("iotident._kernels", ["src/iotident/_kernels.pyx"])],
        language_level=3,
    )
except ImportError:
    # No Cython at build time: install pure, the package falls back to the
    # Python kernels at import.
    ext_modules = []

setup(ext_modules=ext_modules)

import os

from setuptools import setup

ext_modules = []
if os.environ.get("PACESIM_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("pacesim._kernel", ["src/pacesim/_kernel.pyx"], extra_compile_args=["-O3"])],
            language_level=3,
        )
    except ImportError:
        # no Cython: the pure-Python kernel is used at runtime
        ext_modules = []

setup(ext_modules=ext_modules)

"""Build shim: compiles the ntp._tape extension; metadata lives in
pyproject.toml."""

from Cython.Build import cythonize
from setuptools import Extension, setup

setup(
    ext_modules=cythonize(
        [Extension("ntp._tape", ["src/ntp/_tape.pyx"])],
        language_level="3",
    ),
)

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the accelerator extension if possible, otherwise install pure Python."""

    def run(self):
        try:
            build_ext.run(self)
        except Exception as err:  # compiler missing etc.
            warnings.warn(f"skipping compiled kernels, using the Python fallback: {err}")

    def build_extension(self, ext):
        try:
            build_ext.build_extension(self, ext)
        except Exception as err:
            warnings.warn(f"skipping {ext.name}, using the Python fallback: {err}")


try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("entrobound._core", ["src/entrobound/_core.pyx"])],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})

from setuptools import setup

# The compiled ray-march kernel is optional: the package falls back to the
# pure-Python implementation in radiomap._kernels when the extension is absent.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/radiomap/_kernels/_trace.pyx"],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)

"""Build the optional compiled world checker; the package works without it."""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("pdq._kernel", ["src/pdq/_kernel.pyx"], include_dirs=[numpy.get_include()],
                   extra_compile_args=["-O3"], optional=True)],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)

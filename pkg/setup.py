"""Build the optional compiled kernel. If Cython or a C compiler is missing
the install still succeeds and the package falls back to the numpy kernel."""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [Extension("armcal._kernel_cy", ["src/armcal/_kernel_cy.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)

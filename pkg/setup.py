"""Build script: compiles the optional evaluation kernel.

The package is pure Python except for one hot spot, the expression tape
evaluator in killingflag/_evalcore.pyx.  If Cython or a C compiler is
missing the extension is skipped and the pure-Python interpreter in
killingflag/_tape.py is used instead.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "killingflag._evalcore",
                ["src/killingflag/_evalcore.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)

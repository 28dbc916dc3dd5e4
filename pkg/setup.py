import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "ikdnet.kernels._core",
                sources=["src/ikdnet/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                # fp-contract off: backends must agree bitwise with numpy,
                # which never fuses multiply-add
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3},
    )

# The package is fully functional without the extension: ikdnet.kernels falls
# back to the pure-numpy implementations when the compiled core is absent.
setup(ext_modules=extensions)

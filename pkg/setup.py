# Builds the optional compiled kernel extension. The package works without it
# (pure numpy fallback); a failed build must not block installation.
from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "quicknet.kernels.ckernels",
        ["src/quicknet/kernels/ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        optional=True,
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
except ImportError:
    pass

setup(ext_modules=ext_modules)

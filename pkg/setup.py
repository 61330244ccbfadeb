"""Build hook for the optional compiled kernel extension."""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "specbar._kernels._fast",
                ["src/specbar/_kernels/_fast.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    # pure-python fallback still works; the extension is a speedup only
    extensions = []

setup(ext_modules=extensions)

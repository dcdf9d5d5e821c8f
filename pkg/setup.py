import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("hullsim._kernels", ["src/hullsim/_kernels.pyx"], include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"])],
        language_level="3",
    )

# The extension is optional: the package falls back to NumPy kernels.
setup(ext_modules=ext_modules)

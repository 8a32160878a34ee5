"""Builds the compiled log-sum-exp core; set FEDIRL_PURE_PYTHON=1 to skip it.

The C core is compiled as its own static library with fast-math so its
exp loops vectorize. AVX2/FMA code generation is enabled when the build
host advertises both; override with FEDIRL_SIMD_FLAGS.
"""
import os
import shlex

from setuptools import Extension, setup

CORE_FLAGS = ["-O3", "-fno-wrapv", "-ffast-math"]


def simd_flags():
    if "FEDIRL_SIMD_FLAGS" in os.environ:
        return shlex.split(os.environ["FEDIRL_SIMD_FLAGS"])
    try:
        with open("/proc/cpuinfo") as fh:
            flags = set(next(line for line in fh if line.startswith("flags")).split())
    except (OSError, StopIteration):
        return []
    return ["-mavx2", "-mfma"] if {"avx2", "fma"} <= flags else []


kwargs = {}
if os.environ.get("FEDIRL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        kwargs["libraries"] = [
            ("lse_core", {"sources": ["src/fedirl/ot/_lse_core.c"], "cflags": CORE_FLAGS + simd_flags()})
        ]
        kwargs["ext_modules"] = cythonize(
            [
                Extension(
                    "fedirl.ot._lse",
                    ["src/fedirl/ot/_lse.pyx"],
                    include_dirs=[np.get_include(), "src/fedirl/ot"],
                    extra_compile_args=["-O3"],
                    libraries=["lse_core", "mvec", "m"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(**kwargs)

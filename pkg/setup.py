"""Build the optional Cython cores (ray casting and the ADAM update).

The extensions are optional: when Cython or a C compiler is unavailable the
package installs without them and numpy fallbacks are used.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: skipping compiled core ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc})")


def extensions():
    if os.environ.get("MMFF_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    # no fast-math / fp contraction: results must match the numpy path
    flags = ["-O3", "-ffp-contract=off"]
    exts = [
        Extension(f"mmff.{name}", [f"src/mmff/{name}.pyx"], extra_compile_args=flags)
        for name in ("_raycast", "_optim")
    ]
    return cythonize(
        exts,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})

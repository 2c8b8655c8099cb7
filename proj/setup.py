"""CMake-driven build for the s3lspeech extension module.

The wheel contains the python package plus the pybind11 `_core` module built
by the repository's CMake tree (scikit-build-core is the nicer backend for
this, but a plain setuptools shim keeps `pip install --no-build-isolation .`
working with only setuptools installed).
"""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp) / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        out_dir = Path(self.get_ext_fullpath(ext.name)).resolve().parent
        configure = [
            "cmake",
            "-S", str(source_dir),
            "-B", str(build_dir),
            "-DS3L_BUILD_PYTHON=ON",
            "-DS3L_BUILD_TESTS=OFF",
            "-DS3L_BUILD_CLI=OFF",
            f"-DCMAKE_BUILD_TYPE={os.environ.get('S3L_BUILD_TYPE', 'Release')}",
            f"-DPython3_EXECUTABLE={sys.executable}",
        ]
        subprocess.run(configure, check=True)
        subprocess.run(["cmake", "--build", str(build_dir), "--target", "_core", "-j"], check=True)

        built = build_dir / "python" / "s3lspeech"
        out_dir.mkdir(parents=True, exist_ok=True)
        for so in built.glob("_core*.so"):
            self.copy_file(str(so), str(out_dir / so.name))


setup(
    packages=["s3lspeech"],
    package_dir={"s3lspeech": "python/s3lspeech"},
    ext_modules=[CMakeExtension("s3lspeech._core")],
    cmdclass={"build_ext": CMakeBuild},
)

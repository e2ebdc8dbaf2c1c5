"""CMake-driven build of the _nlq extension module."""

import os
import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp) / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)
        out_path = Path(self.get_ext_fullpath(ext.name)).resolve()
        out_path.parent.mkdir(parents=True, exist_ok=True)

        import pybind11

        subprocess.run(
            [
                "cmake",
                "-S", str(source_dir),
                "-B", str(build_dir),
                "-DNLQ_PYTHON=ON",
                "-DNLQ_TESTS=OFF",
                "-DCMAKE_BUILD_TYPE=Release",
                f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
                f"-DPython_EXECUTABLE={sys.executable}",
            ],
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_nlq",
             "-j", str(os.cpu_count() or 2)],
            check=True,
        )

        built = None
        for candidate in build_dir.glob("_nlq*.so"):
            built = candidate
        if built is None:
            for candidate in build_dir.rglob("_nlq*"):
                if candidate.suffix in (".so", ".pyd", ".dylib"):
                    built = candidate
        if built is None:
            raise RuntimeError("cmake build produced no _nlq module")
        shutil.copy2(built, out_path)


setup(
    ext_modules=[CMakeExtension("nlq._nlq")],
    cmdclass={"build_ext": CMakeBuild},
)

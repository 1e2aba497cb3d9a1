import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        src = Path(__file__).resolve().parent
        build = Path(self.build_temp).resolve() / "cmake"
        build.mkdir(parents=True, exist_ok=True)
        subprocess.run(
            [
                "cmake",
                "-S", str(src),
                "-B", str(build),
                "-DCMAKE_BUILD_TYPE=Release",
                "-DMAMBAQ_BUILD_TESTS=OFF",
                "-DMAMBAQ_BUILD_CLI=OFF",
                "-DMAMBAQ_BUILD_PYTHON=ON",
            ],
            check=True,
        )
        subprocess.run(["cmake", "--build", str(build), "--target", "_mambaq", "-j"], check=True)
        built = next((build / "python").glob("_mambaq.*"))
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built, dest)


setup(
    ext_modules=[CMakeExtension("mambaq._mambaq")],
    cmdclass={"build_ext": CMakeBuild},
)

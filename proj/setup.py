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
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)

        subprocess.run(
            [
                "cmake",
                "-S",
                str(source_dir),
                "-B",
                str(build_dir),
                "-DCMAKE_BUILD_TYPE=Release",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ],
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_lpnum", "-j"],
            check=True,
        )

        built = sorted(build_dir.glob("_lpnum*.so")) + sorted(
            build_dir.glob("_lpnum*.pyd")
        )
        if not built:
            raise RuntimeError(f"cmake did not produce _lpnum in {build_dir}")
        out_path = Path(self.get_ext_fullpath(ext.name)).resolve()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built[0], out_path)


setup(
    ext_modules=[CMakeExtension("lpnum._lpnum")],
    cmdclass={"build_ext": CMakeBuild},
)

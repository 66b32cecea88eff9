import json
import os
import pathlib
import re
import subprocess
import sys

import pytest
import tomlkit

here = os.path.dirname(os.path.realpath(__file__))
repo_dir = pathlib.Path(f"{here}/../").resolve()
dist_dir = pathlib.Path(f"{repo_dir}/dist").resolve()

build_file_re = re.compile(r"^\s*- Built (.*)\s*$", flags=re.IGNORECASE | re.MULTILINE)


def _last_json_line(output: str) -> dict:
    return json.loads(output.strip().splitlines()[-1])


@pytest.mark.slow
@pytest.mark.parametrize("pkgformat", ["sdist", "wheel"])
def test_package_install(tmp_path, pkgformat):
    build_output = subprocess.check_output(
        ["poetry", "build", "-n", "-f", pkgformat],
        cwd=repo_dir,
        text=True,
    )
    m = build_file_re.search(build_output)
    assert m
    venv_path = tmp_path / "venv"
    subprocess.check_call([sys.executable, "-m", "venv", venv_path])
    subprocess.check_call([venv_path / "bin/pip", "install", dist_dir / m.group(1)])
    faw = venv_path / "bin/faw"
    subprocess.check_call([faw, "--help"])

    # templates and the bundled scenario must ship with the package
    solved = subprocess.run(
        [faw, "solve", "--baseline", "fpa", "--out", tmp_path / "run"],
        cwd=tmp_path,
        capture_output=True,
        text=True,
    )
    assert solved.returncode == 0, solved.stderr
    assert _last_json_line(solved.stdout)["command"] == "solve"
    assert (tmp_path / "run" / "trace.csv").exists()

    verified = subprocess.run(
        [faw, "verify", "--suite", "mul-equivalence"], capture_output=True, text=True
    )
    assert verified.returncode == 0, verified.stderr

    installed_version = subprocess.check_output(
        [venv_path / "bin/python", "-c", "import fluid_antenna_wsr as f; print(f.__version__)"],
        text=True,
    ).strip()
    doc = tomlkit.parse(pathlib.Path(repo_dir / "pyproject.toml").read_text())
    assert installed_version == doc["tool"]["poetry"]["version"]

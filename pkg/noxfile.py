# pylint: disable=missing-module-docstring,import-error,protected-access,missing-function-docstring
import datetime
import os
import pathlib
import shutil

import nox
from nox.command import CommandFailed

nox.options.reuse_existing_virtualenvs = True
nox.options.error_on_missing_interpreters = False

PYTHON_VERSIONS = ("3", "3.8", "3.9", "3.10", "3.11")
SKIP_REQUIREMENTS_INSTALL = "SKIP_REQUIREMENTS_INSTALL" in os.environ
COVERAGE_VERSION_REQUIREMENT = "coverage>=6.0"
SALT_REQUIREMENT = os.environ.get("SALT_REQUIREMENT") or "salt>=3006"
if SALT_REQUIREMENT == "salt==master":
    SALT_REQUIREMENT = "git+https://github.com/saltstack/salt.git@master"

os.environ["PYTHONDONTWRITEBYTECODE"] = "1"

REPO_ROOT = pathlib.Path(__file__).resolve().parent
os.chdir(str(REPO_ROOT))

PACKAGE_GLOB = "src/saltext/csmt/*"
ARTIFACTS_DIR = REPO_ROOT / "artifacts"
ARTIFACTS_DIR.mkdir(parents=True, exist_ok=True)
RUNTESTS_LOGFILE = ARTIFACTS_DIR / "runtests-{}.log".format(
    datetime.datetime.now().strftime("%Y%m%d%H%M%S.%f")
)
COVERAGE_REPORT_DB = REPO_ROOT / ".coverage"
COVERAGE_REPORT_PROJECT = ARTIFACTS_DIR.relative_to(REPO_ROOT) / "coverage-project.xml"
JUNIT_REPORT = ARTIFACTS_DIR.relative_to(REPO_ROOT) / "junit-report.xml"


def _install_requirements(session, install_salt=True, install_coverage=True, extras=("tests",)):
    if SKIP_REQUIREMENTS_INSTALL:
        return
    session.install("--progress-bar=off", "wheel", silent=True)
    if install_coverage:
        session.install("--progress-bar=off", COVERAGE_VERSION_REQUIREMENT, silent=True)
    if install_salt:
        session.install("--progress-bar=off", SALT_REQUIREMENT, silent=True)
    pkg = "."
    if extras:
        pkg += f"[{','.join(extras)}]"
    session.install("-e", pkg, silent=True)


@nox.session(python=PYTHON_VERSIONS)
def tests(session):
    _install_requirements(session)

    sitecustomize_dir = session.run("salt-factories", "--coverage", silent=True, log=False)
    python_path = [sitecustomize_dir] + [
        entry for entry in (os.environ.get("PYTHONPATH") or "").split(os.pathsep) if entry
    ]
    env = {
        "PYTHONPATH": os.pathsep.join(python_path),
        "COVERAGE_FILE": str(COVERAGE_REPORT_DB),
        "COVERAGE_PROCESS_START": str(REPO_ROOT / ".coveragerc"),
    }

    session.run("coverage", "erase")
    args = [
        "--rootdir",
        str(REPO_ROOT),
        f"--log-file={RUNTESTS_LOGFILE.relative_to(REPO_ROOT)}",
        "--log-file-level=debug",
        "--show-capture=no",
        f"--junitxml={JUNIT_REPORT}",
        "-ra",
    ]
    args.extend(session.posargs or ["tests/"])
    try:
        session.run("coverage", "run", "-m", "pytest", *args, env=env)
    finally:
        try:
            session.run("coverage", "combine")
        except CommandFailed:
            pass
        session.run(
            "coverage",
            "xml",
            "-o",
            str(COVERAGE_REPORT_PROJECT),
            "--omit=tests/*",
            f"--include={PACKAGE_GLOB}",
        )
        try:
            session.run("coverage", "report", "--show-missing", f"--include={PACKAGE_GLOB}")
        finally:
            if COVERAGE_REPORT_DB.exists():
                shutil.move(str(COVERAGE_REPORT_DB), str(ARTIFACTS_DIR / COVERAGE_REPORT_DB.name))


@nox.session(python="3")
def lint(session):
    """
    Run PyLint against the code and the test suite.
    """
    _install_requirements(session, install_salt=False, install_coverage=False, extras=("dev", "tests"))
    env = {"PYTHONPATH": str(REPO_ROOT / "src"), "PYTHONUNBUFFERED": "1"}
    session.run("pylint", "--rcfile=.pylintrc", "--disable=I", "setup.py", "src/", env=env)
    session.run(
        "pylint",
        "--rcfile=.pylintrc",
        "--disable=I,redefined-outer-name,missing-function-docstring,no-member,missing-module-docstring",
        "tests/",
        env=env,
    )


@nox.session(python="3")
def docs(session):
    """
    Build Docs
    """
    _install_requirements(session, install_coverage=False, extras=("docs",))
    build_dir = pathlib.Path("docs", "_build", "html")
    session.run("sphinx-build", "-Wn", "--keep-going", "docs", str(build_dir), external=True)

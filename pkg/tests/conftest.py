import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from clarens.config import ServerConfig  # noqa: E402
from clarens.harness import node_config  # noqa: E402
from clarens.rpc.client import ClarensClient  # noqa: E402
from clarens.server import ClarensServer  # noqa: E402

ADMIN = "/O=Grid/CN=Admin"
ALICE = "/O=Grid/CN=Alice"
BOB = "/O=Grid/CN=Bob"
MALLORY = "/O=Grid/CN=Mallory"
ROOTY = "/O=Grid/CN=Rooty"

ALL_SERVICES = ("echo", "group", "discovery", "metrics", "catalog", "dls", "shell", "file", "df")


def write_gridmap(path: Path) -> Path:
    path.write_text(
        "# test grid-mapfile\n"
        f'"{ADMIN}" nobody\n'
        f'"{ALICE}" alice\n'
        f'"{BOB}" bob\n'
        f'"{ROOTY}" root\n',
        encoding="utf-8",
    )
    return path


@pytest.fixture
def make_server(tmp_path):
    """Factory for started servers; all are stopped at teardown."""
    started: list[ClarensServer] = []

    def factory(services=ALL_SERVICES, shell_impl="same-user", **overrides) -> ClarensServer:
        workdir = tmp_path / f"srv{len(started)}"
        workdir.mkdir()
        bindings = {name: "builtin" for name in services}
        if "shell" in bindings:
            bindings["shell"] = shell_impl
        overrides.setdefault("gridmap_path", write_gridmap(workdir / "grid-mapfile"))
        overrides.setdefault("admins", [ADMIN])
        cfg: ServerConfig = node_config(workdir, services=bindings, **overrides)
        server = ClarensServer(cfg).start()
        started.append(server)
        return server

    yield factory
    for s in started:
        s.stop()


@pytest.fixture
def server(make_server):
    return make_server()


def client_for(server: ClarensServer, dn: str | None = None, encoding: str = "xmlrpc") -> ClarensClient:
    return ClarensClient(server.url, encoding, "header" if dn else "none", dn or "")


# --- acceptance reporting ------------------------------------------------------------

SESSION_START = time.monotonic()
_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported as a PASS/FAIL line")
    config.addinivalue_line("markers", "run_last: schedule after every other test")


def pytest_collection_modifyitems(session, config, items):
    items.sort(key=lambda item: item.get_closest_marker("run_last") is not None)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown" and report.passed:
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        previous = _CRITERIA.get(number)
        status = "FAIL" if report.failed or (previous and previous[0] == "FAIL") else "PASS"
        _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"{status} [{number:2d}] {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))

"""Command-line client and server launcher.

Exit codes: 0 ok, 1 usage, 2 network, 3 remote fault; ``run`` exits with the
remote command's exit code.
"""

from __future__ import annotations

import argparse
import base64
import json
import logging
import os
import signal
import subprocess
import sys
import tempfile
import threading
import time
from pathlib import Path
from typing import Any, Sequence

from clarens.errors import ConfigError, RpcFault
from clarens.rpc.client import ClarensClient, TransportError
from clarens.rpc.wire import Encoding, from_json, to_json

EXIT_OK, EXIT_USAGE, EXIT_NETWORK, EXIT_FAULT = 0, 1, 2, 3
EXIT_KILLED = 128 + signal.SIGKILL

POLL_INTERVAL_S = 0.25
CHUNK = 1 << 20
DEFAULT_SERVER = "http://127.0.0.1:8080/clarens"

# Which subcommand reaches each RPC method.  `call` reaches all of them.
METHOD_TABLE = {
    "system.list_methods": "call",
    "system.whoami": "call",
    "system.acl_add": "call",
    "system.acl_remove": "call",
    "system.acl_list": "call",
    "echo.echo": "call",
    "group.create": "call",
    "group.delete": "call",
    "group.add": "call",
    "group.remove": "call",
    "group.list": "call",
    "discovery.register": "call",
    "discovery.deregister": "call",
    "discovery.find": "discover",
    "discovery.find_server": "discover --servers",
    "metrics.report": "call",
    "metrics.query": "call",
    "catalog.lookup": "call",
    "catalog.add": "call",
    "catalog.remove": "call",
    "dls.locate": "call",
    "dls.record_access": "call",
    "shell.cmd": "run",
    "shell.cmd_info": "run",
    "shell.cmd_kill": "call",
    "file.ls": "ls",
    "file.get": "get",
    "file.put": "put",
    "df.df": "call",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def parse_literal(text: str) -> Any:
    """Typed literal: ``b64:<data>``, any JSON value (tagged $dt/$b64 allowed), else a bare string."""
    if text.startswith("b64:"):
        try:
            return base64.b64decode(text[4:], validate=True)
        except ValueError:
            raise UsageError(f"bad base64 literal {text!r}") from None
    try:
        tree = json.loads(text)
    except ValueError:
        return text
    try:
        return from_json(tree)
    except RpcFault as exc:
        raise UsageError(f"bad literal {text!r}: {exc.message}") from None


def render(value: Any) -> str:
    return json.dumps(to_json(value), sort_keys=True, ensure_ascii=False)


def _client(args) -> ClarensClient:
    auth = args.auth or ("header" if args.dn else "none")
    try:
        return ClarensClient(args.server, Encoding(args.encoding), auth, args.dn or "", args.secret)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_call(args) -> int:
    params = [parse_literal(p) for p in args.params]
    print(render(_client(args).call(args.method, *params)))
    return EXIT_OK


def cmd_discover(args) -> int:
    attrs = {}
    for item in args.attr:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--attr expects key=value, got {item!r}")
        attrs[key] = value
    client = _client(args)
    if args.servers:
        for host in client.call("discovery.find_server", args.pattern, attrs):
            print(host)
    else:
        for rec in client.call("discovery.find", args.pattern, attrs):
            print(render(rec))
    return EXIT_OK


def fetch_file(client: ClarensClient, path: str, out) -> int:
    offset = 0
    while True:
        chunk = client.call("file.get", path, offset, CHUNK)
        out.write(chunk)
        offset += len(chunk)
        if len(chunk) < CHUNK:
            return offset


def cmd_run(args) -> int:
    client = _client(args)
    job_id = client.call("shell.cmd", args.command, list(args.args))
    while True:
        info = client.call("shell.cmd_info", job_id)
        if info["state"] in ("FINISHED", "FAILED", "KILLED"):
            break
        time.sleep(POLL_INTERVAL_S)
    sys.stdout.flush()
    fetch_file(client, f"jobs/{job_id}/stdout", sys.stdout.buffer)
    sys.stdout.buffer.flush()
    fetch_file(client, f"jobs/{job_id}/stderr", sys.stderr.buffer)
    sys.stderr.buffer.flush()
    if info["state"] == "KILLED":
        return EXIT_KILLED
    return int(info.get("exit_code", 0))


def cmd_ls(args) -> int:
    for entry in _client(args).call("file.ls", args.path):
        kind = "d" if entry["is_dir"] else "-"
        print(f"{kind} {int(entry['size_B']):>12} {entry['name']}")
    return EXIT_OK


def cmd_get(args) -> int:
    client = _client(args)
    if args.local in (None, "-"):
        fetch_file(client, args.remote, sys.stdout.buffer)
        sys.stdout.buffer.flush()
    else:
        with open(args.local, "wb") as fh:
            fetch_file(client, args.remote, fh)
    return EXIT_OK


def cmd_put(args) -> int:
    client = _client(args)
    data = sys.stdin.buffer.read() if args.local == "-" else Path(args.local).read_bytes()
    written = 0
    append = args.append
    for start in range(0, max(len(data), 1), CHUNK):
        written += client.call("file.put", args.remote, data[start : start + CHUNK], append)
        append = True
    print(written)
    return EXIT_OK


def cmd_serve(args) -> int:
    from clarens.config import load_config
    from clarens.server import ClarensServer

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        server = ClarensServer(load_config(args.config))
    except (ConfigError, OSError) as exc:
        print(f"clarens: {exc}", file=sys.stderr)
        return EXIT_USAGE
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    server.start()
    print(f"clarens listening on {server.url}", flush=True)
    stop.wait()
    server.stop()
    return EXIT_OK


# --- demo mesh ---------------------------------------------------------------


DEMO_ADMIN = "/O=Grid/CN=demo-admin"
DEMO_LFN = "/store/demo/run1.root"
DEMO_PUBLISH_MS = 200


class DemoFailure(Exception):
    pass


def _demo_config(i: int, n: int, base_port: int, workdir: Path) -> Path:
    udp = [base_port + 100 + k for k in range(n)]
    peers = ",".join(f"127.0.0.1:{p}" for k, p in enumerate(udp) if k != i)
    services = ["discovery", "echo"]
    if i == 0:
        services.append("catalog")
    if i == 1:
        services += ["dls", "metrics"]
    lines = [
        f"http.port={base_port + i}",
        f"udp.port={udp[i]}",
        f"registry.peers={peers}",
        f"registry.publish_interval_ms={DEMO_PUBLISH_MS}",
        "registry.purge_interval_ms=200",
        "registry.self_ttl_s=4",
        f"acl.admins={DEMO_ADMIN}",
        "acl.anonymous=catalog.lookup",
        f"sandbox.root=node{i}/sandboxes",
        f"file.root=node{i}/files",
    ] + [f"service.{s}=builtin" for s in services]
    path = workdir / f"node{i}.conf"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _wait(predicate, timeout: float, interval: float = 0.02) -> float:
    start = time.monotonic()
    while time.monotonic() - start <= timeout:
        try:
            if predicate():
                return time.monotonic() - start
        except (TransportError, RpcFault):
            pass
        time.sleep(interval)
    raise DemoFailure(f"condition not met within {timeout:.1f}s")


def demo_mesh(n: int, base_port: int, out=None) -> int:
    """Launch ``n`` peer servers as subprocesses and exercise discovery and data location across them."""
    out = out or sys.stdout
    if not 2 <= n <= 5:
        raise UsageError("demo-mesh needs 2 <= n <= 5")

    def say(msg: str) -> None:
        print(msg, file=out, flush=True)

    procs: list[subprocess.Popen] = []
    with tempfile.TemporaryDirectory(prefix="clarens-demo-") as tmp:
        workdir = Path(tmp)
        try:
            urls = []
            for i in range(n):
                conf = _demo_config(i, n, base_port, workdir)
                log = open(workdir / f"node{i}.log", "wb")
                procs.append(
                    subprocess.Popen(
                        [sys.executable, "-m", "clarens", "serve", "--config", str(conf)],
                        stdout=log,
                        stderr=subprocess.STDOUT,
                        cwd=workdir,
                    )
                )
                log.close()
                urls.append(f"http://127.0.0.1:{base_port + i}/clarens")
            clients = [ClarensClient(u, auth="header", dn=DEMO_ADMIN, timeout=5) for u in urls]
            for i, c in enumerate(clients):
                _wait(lambda c=c: bool(c.call("system.list_methods")), 15)
                say(f"[node{i + 1}] up at {urls[i]}")

            probe = {"name": "demo-probe", "host_url": urls[0], "ttl_s": 10, "methods": [], "attrs": {"demo": "yes"}}
            clients[0].call("discovery.register", probe)
            elapsed = _wait(lambda: clients[-1].call("discovery.find", "demo-probe", {}) != [], 5, 0.01)
            bound = 2 * DEMO_PUBLISH_MS / 1000.0
            say(f"[node{n}] saw registration from node1 after {elapsed * 1000:.0f} ms (bound {bound * 1000:.0f} ms)")
            if elapsed > bound:
                raise DemoFailure(f"propagation took {elapsed:.3f}s, more than {bound:.3f}s")

            _wait(lambda: {"catalog", "dls"} <= {r["name"] for r in clients[-1].call("discovery.find", "*", {})}, 5)
            for rec in clients[-1].call("discovery.find", "*", {}):
                say(f"[node{n}] discovery: {rec['name']:<12} at {rec['host_url']}")

            replicas = [
                ("gsiftp://se1.example.org/data/run1.root", "se1.example.org", 0.05, 1e7),
                ("gsiftp://se2.example.org/data/run1.root", "se2.example.org", 0.01, 5e6),
                ("gsiftp://se3.example.org/data/run1.root", "se3.example.org", None, None),
            ]
            for pfn, host, rtt, bw in replicas:
                clients[0].call("catalog.add", DEMO_LFN, pfn, 100_000_000)
                if rtt is not None:
                    clients[1].call("metrics.report", {"src": "ui", "dst": host, "rtt_s": rtt, "bandwidth_Bps": bw})
            say(f"[node1] catalog holds {len(replicas)} replicas of {DEMO_LFN}")

            dls_hosts = clients[-1].call("discovery.find_server", "dls", {})
            if not dls_hosts:
                raise DemoFailure("no dls service visible from the last node")
            dls = ClarensClient(dls_hosts[0], auth="header", dn=DEMO_ADMIN, timeout=10)
            result = dls.call("dls.locate", DEMO_LFN, 0, 10, "ui")
            say(f"[node{n}] dls.locate via {dls_hosts[0]}: total={result['total']}")
            for rank, r in enumerate(result["page"], 1):
                say(f"  {rank}. score={r['score']:.4f} t_est={r['t_est_s']:.2f}s {r['pfn']}")
            if result["total"] != len(replicas):
                raise DemoFailure(f"expected {len(replicas)} replicas, got {result['total']}")
            if result["page"][0]["pfn"] != replicas[0][0]:
                raise DemoFailure("fastest replica was not ranked first")
            say("demo-mesh: OK")
            return EXIT_OK
        finally:
            for p in procs:
                p.terminate()
            for p in procs:
                try:
                    p.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    p.kill()
                    p.wait()


def cmd_demo_mesh(args) -> int:
    try:
        return demo_mesh(args.n, args.base_port)
    except DemoFailure as exc:
        print(f"demo-mesh: FAILED: {exc}", file=sys.stderr)
        return EXIT_FAULT


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="clarens", description="Clarens grid services client")
    p.add_argument("--server", default=os.environ.get("CLARENS_SERVER", DEFAULT_SERVER))
    p.add_argument("--encoding", choices=[e.value for e in Encoding], default="xmlrpc")
    p.add_argument("--dn", default=os.environ.get("CLARENS_DN"))
    p.add_argument("--auth", choices=["none", "header", "hmac"])
    p.add_argument("--secret", default=os.environ.get("CLARENS_SECRET"))
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    s = sub.add_parser("call", help="invoke any method")
    s.add_argument("method")
    s.add_argument("params", nargs="*")
    s.set_defaults(fn=cmd_call)

    s = sub.add_parser("run", help="run a remote command and stream its output")
    s.add_argument("command")
    s.add_argument("args", nargs=argparse.REMAINDER)
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("discover", help="query the discovery service")
    s.add_argument("pattern", nargs="?", default="*")
    s.add_argument("--attr", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--servers", action="store_true", help="list hosts instead of records")
    s.set_defaults(fn=cmd_discover)

    s = sub.add_parser("ls", help="list a remote directory")
    s.add_argument("path", nargs="?", default="")
    s.set_defaults(fn=cmd_ls)

    s = sub.add_parser("get", help="download a remote file")
    s.add_argument("remote")
    s.add_argument("local", nargs="?")
    s.set_defaults(fn=cmd_get)

    s = sub.add_parser("put", help="upload a local file ('-' for stdin)")
    s.add_argument("local")
    s.add_argument("remote")
    s.add_argument("--append", action="store_true")
    s.set_defaults(fn=cmd_put)

    s = sub.add_parser("demo-mesh", help="launch a local peer mesh and demonstrate discovery and DLS")
    s.add_argument("n", type=int, nargs="?", default=3)
    s.add_argument("base_port", type=int, nargs="?", default=18000)
    s.set_defaults(fn=cmd_demo_mesh)

    s = sub.add_parser("serve", help="run a server")
    s.add_argument("--config", required=True)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"clarens: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RpcFault as fault:
        print(f"clarens: fault {fault.code}: {fault.message}", file=sys.stderr)
        return EXIT_FAULT
    except TransportError as exc:
        print(f"clarens: {exc}", file=sys.stderr)
        return EXIT_NETWORK


if __name__ == "__main__":
    sys.exit(main())

"""In-process multi-node harness: N servers on ephemeral ports in a full UDP peer mesh."""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path
from typing import Callable

from clarens.config import ServerConfig
from clarens.server import ClarensServer


def node_config(workdir: str | Path, **overrides) -> ServerConfig:
    """A config rooted under ``workdir`` with ephemeral HTTP and UDP ports."""
    workdir = Path(workdir)
    base = ServerConfig(
        http_port=0,
        udp_port=0,
        sandbox_root=workdir / "sandboxes",
        file_root=workdir / "files",
    )
    return replace(base, **overrides)


class Mesh:
    """Start ``n`` servers whose registries publish to every other node."""

    def __init__(self, workdir: str | Path, n: int, configure: Callable[[int, ServerConfig], ServerConfig] | None = None, **overrides):
        self.workdir = Path(workdir)
        self.servers: list[ClarensServer] = []
        for i in range(n):
            cfg = node_config(self.workdir / f"node{i}", **overrides)
            if configure is not None:
                cfg = configure(i, cfg)
            self.servers.append(ClarensServer(cfg))

    def start(self) -> "Mesh":
        try:
            for s in self.servers:
                s.start()
        except Exception:
            self.stop()
            raise
        for s in self.servers:
            s.node.peers = [o.udp_address for o in self.servers if o is not s]
        return self

    def stop(self) -> None:
        for s in self.servers:
            s.stop()

    def kill(self, index: int) -> None:
        """Take one node off the network, as if its host went away."""
        self.servers[index].stop()
        for s in self.servers:
            if s.node is not None:
                s.node.peers = [p for p in s.node.peers if p != self.servers[index].udp_address]

    def __enter__(self) -> "Mesh":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def __getitem__(self, i: int) -> ClarensServer:
        return self.servers[i]

    def __len__(self) -> int:
        return len(self.servers)


def wait_for(predicate: Callable[[], bool], timeout: float, interval: float = 0.01) -> float | None:
    """Poll until ``predicate()`` holds; return seconds waited, or None on timeout."""
    start = time.monotonic()
    while True:
        if predicate():
            return time.monotonic() - start
        if time.monotonic() - start > timeout:
            return None
        time.sleep(interval)

"""One Clarens node: shared state, bound plugins, HTTP front door, UDP peer node and timers."""

from __future__ import annotations

import logging
import time
from typing import Callable

from clarens.acl import AclEntry, AclStore
from clarens.auth import Principal, authenticate, load_gridmap
from clarens.config import ServerConfig
from clarens.dls import Catalog, DataLocationService, StatsStore
from clarens.errors import ConfigError
from clarens.gateway import Gateway, HttpFrontDoor
from clarens.journal import Journal
from clarens.metrics import MetricsStore
from clarens.plugins import resolve
from clarens.registry import Periodic, Registry, RegistryNode, ServiceRecord
from clarens.rpc.client import ClarensClient
from clarens.workspace.files import FileService
from clarens.workspace.shell import SameUserExecutor, SetuidHelperExecutor, Shell

log = logging.getLogger(__name__)

CORE_SERVICES = ("system",)


def seed_acl(config: ServerConfig) -> list[AclEntry]:
    seed = [AclEntry("*", "dn", dn, True) for dn in config.admins]
    seed += [AclEntry(pattern, "anonymous", "", True) for pattern in config.anonymous_methods]
    return seed


def rpc_catalog_lookup(host_url: str, lfn: str, timeout: float) -> list[dict]:
    return ClarensClient(host_url, timeout=timeout).call("catalog.lookup", lfn)


class ClarensServer:
    def __init__(self, config: ServerConfig, clock: Callable[[], float] = time.time):
        config.validate()
        self.config = config
        self.journal = Journal(config.journal_path)
        self.gridmap: dict[str, str] = load_gridmap(config.gridmap_path) if config.gridmap_path else {}
        self.acl = AclStore(seed_acl(config), self.journal)
        self.registry = Registry(clock)
        self.metrics = MetricsStore()
        self.stats = StatsStore(self.journal)
        self.catalog = Catalog()
        self.dls = DataLocationService(
            self.registry,
            self.metrics,
            self.stats,
            rpc_catalog_lookup,
            config.w_time,
            config.w_rel,
            config.catalog_timeout_ms / 1000.0,
        )
        self.shell: Shell | None = None
        self.files: FileService | None = None
        shell_impl = config.services.get("shell")
        if shell_impl is not None:
            if shell_impl == "setuid-helper":
                helper = config.suexec_helper.split() if config.suexec_helper else None
                executor = SetuidHelperExecutor(helper, config.privileged_users)
            else:
                executor = SameUserExecutor(config.privileged_users)
            self.shell = Shell(config.sandbox_root, executor, self.journal)
        if "file" in config.services:
            self.files = FileService(config.file_root, self.shell)

        self.gateway = Gateway(self.acl, self._authenticate)
        bindings = {name: "builtin" for name in CORE_SERVICES}
        bindings.update(config.services)
        for name in sorted(bindings):
            factory = resolve(name, bindings[name])
            if factory is None:
                raise ConfigError(f"service.{name}={bindings[name]}: no such service implementation")
            self.gateway.bind(name, factory(self))

        self.http: HttpFrontDoor | None = None
        self.node: RegistryNode | None = None
        self._renewer: Periodic | None = None
        self._stopped = False

    def _authenticate(self, headers) -> Principal:
        return authenticate(headers, self.config.auth_mode, self.gridmap, self.config.hmac_secret)

    @property
    def url(self) -> str:
        if self.http is None:
            raise RuntimeError("server not started")
        return self.http.url

    @property
    def udp_address(self) -> tuple[str, int]:
        if self.node is None:
            raise RuntimeError("server not started")
        return self.node.address

    def start(self) -> "ClarensServer":
        cfg = self.config
        self.http = HttpFrontDoor(self.gateway, cfg.http_host, cfg.http_port)
        try:
            self.node = RegistryNode(
                self.registry, cfg.udp_host, cfg.udp_port, cfg.peers, cfg.publish_interval_ms, cfg.purge_interval_ms
            )
        except OSError:
            self.http.httpd.server_close()
            raise
        self.http.start()
        self.node.start()
        self.register_self()
        self._renewer = Periodic(max(cfg.self_ttl_s / 2.0, 0.1), self.register_self, f"renew-{self.http.address[1]}")
        self._renewer.start()
        log.info("clarens node up at %s (udp %s:%d)", self.url, *self.node.address)
        return self

    def self_records(self) -> list[ServiceRecord]:
        """One record per bound non-core service, advertising this node's URL."""
        methods = self.gateway.list_methods()
        records = []
        for name in self.gateway.services():
            if name in CORE_SERVICES:
                continue
            own = tuple(m for m in methods if m.startswith(name + "."))
            records.append(ServiceRecord(name, self.url, self.config.self_ttl_s, own, {}))
        return records

    def register_self(self) -> None:
        for rec in self.self_records():
            self.registry.register(rec)

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        if self._renewer is not None:
            self._renewer.stop()
        if self.http is not None:
            self.http.stop()
        if self.node is not None:
            self.node.stop()
        if self.shell is not None:
            self.shell.shutdown()

    def __enter__(self) -> "ClarensServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

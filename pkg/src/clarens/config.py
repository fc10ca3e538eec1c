"""Server configuration: a properties-style ``key=value`` file."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from clarens.auth import AUTH_MODES, HMAC_TOKEN, INSECURE_HEADER
from clarens.errors import ConfigError

DEFAULT_DENYLIST = ("root", "toor", "daemon", "bin", "sys", "adm", "sync", "shutdown", "halt", "operator")

_SCALAR_KEYS = {
    "http.port",
    "http.host",
    "udp.port",
    "udp.host",
    "registry.peers",
    "registry.purge_interval_ms",
    "registry.publish_interval_ms",
    "registry.self_ttl_s",
    "auth.mode",
    "auth.hmac_secret",
    "gridmap.path",
    "sandbox.root",
    "file.root",
    "journal.path",
    "dls.w_time",
    "dls.w_rel",
    "dls.catalog_timeout_ms",
    "acl.admins",
    "acl.anonymous",
    "shell.denylist",
    "shell.helper",
}


@dataclass
class ServerConfig:
    http_port: int
    http_host: str = "127.0.0.1"
    udp_port: int = 0
    udp_host: str = "127.0.0.1"
    peers: list[tuple[str, int]] = field(default_factory=list)
    purge_interval_ms: int = 500
    publish_interval_ms: int = 1000
    self_ttl_s: int = 10
    auth_mode: str = INSECURE_HEADER
    hmac_secret: str | None = None
    gridmap_path: Path | None = None
    sandbox_root: Path = Path("sandboxes")
    file_root: Path = Path("files")
    journal_path: Path | None = None
    services: dict[str, str] = field(default_factory=dict)
    w_time: float = 1.0
    w_rel: float = 1.0
    catalog_timeout_ms: int = 2000
    # DNs granted everything, seeded ahead of any stored ACL.
    admins: list[str] = field(default_factory=list)
    # method globs open to anonymous callers (server-to-server lookups).
    anonymous_methods: list[str] = field(default_factory=list)
    privileged_users: tuple[str, ...] = DEFAULT_DENYLIST
    suexec_helper: str | None = None

    def validate(self) -> None:
        from clarens.plugins import resolve

        for name, port in (("http.port", self.http_port), ("udp.port", self.udp_port)):
            if not 0 <= port <= 65535:
                raise ConfigError(f"{name} out of range: {port}")
        if self.purge_interval_ms <= 0 or self.publish_interval_ms <= 0:
            raise ConfigError("registry intervals must be positive")
        if self.self_ttl_s <= 0 or self.catalog_timeout_ms <= 0:
            raise ConfigError("registry.self_ttl_s and dls.catalog_timeout_ms must be positive")
        if self.auth_mode not in AUTH_MODES:
            raise ConfigError(f"auth.mode must be one of {', '.join(AUTH_MODES)}")
        if self.auth_mode == HMAC_TOKEN and not self.hmac_secret:
            raise ConfigError("auth.mode=hmac-token requires auth.hmac_secret")
        if self.w_time < 0 or self.w_rel < 0:
            raise ConfigError("dls weights must be non-negative")
        for service, impl in self.services.items():
            if resolve(service, impl) is None:
                raise ConfigError(f"service.{service}={impl}: no such service implementation")


def _parse_int(key: str, value: str, path: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}", path, lineno) from None


def _parse_float(key: str, value: str, path: str, lineno: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}", path, lineno) from None


def _split(value: str, sep: str = ",") -> list[str]:
    return [v.strip() for v in value.split(sep) if v.strip()]


def _parse_peers(value: str, path: str, lineno: int) -> list[tuple[str, int]]:
    peers = []
    for item in _split(value):
        host, sep, port = item.rpartition(":")
        if not sep or not host:
            raise ConfigError(f"peer {item!r} must be host:port", path, lineno)
        peers.append((host, _parse_int("registry.peers", port, path, lineno)))
    return peers


def load_config(path: str | os.PathLike) -> ServerConfig:
    """Read a config file.  Relative paths in it resolve against the file's directory."""
    path = str(path)
    base = Path(path).resolve().parent
    kwargs: dict = {}
    services: dict[str, str] = {}
    service_lines: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError("expected key=value", path, lineno)
        if key.startswith("service."):
            name = key[len("service."):]
            if not name or "." in name or not value:
                raise ConfigError(f"bad service binding {line!r}", path, lineno)
            services[name] = value
            service_lines[name] = lineno
            continue
        if key not in _SCALAR_KEYS:
            raise ConfigError(f"unknown key {key!r}", path, lineno)
        if key in ("http.port", "udp.port"):
            kwargs[key.replace(".", "_")] = _parse_int(key, value, path, lineno)
        elif key in ("http.host", "udp.host"):
            kwargs[key.replace(".", "_")] = value
        elif key == "registry.peers":
            kwargs["peers"] = _parse_peers(value, path, lineno)
        elif key in ("registry.purge_interval_ms", "registry.publish_interval_ms", "registry.self_ttl_s"):
            kwargs[key.split(".", 1)[1]] = _parse_int(key, value, path, lineno)
        elif key == "dls.catalog_timeout_ms":
            kwargs["catalog_timeout_ms"] = _parse_int(key, value, path, lineno)
        elif key == "auth.mode":
            if value not in AUTH_MODES:
                raise ConfigError(f"auth.mode must be one of {', '.join(AUTH_MODES)}", path, lineno)
            kwargs["auth_mode"] = value
        elif key == "auth.hmac_secret":
            kwargs["hmac_secret"] = value
        elif key in ("gridmap.path", "sandbox.root", "file.root", "journal.path"):
            kwargs[key.replace(".", "_")] = base / value
        elif key in ("dls.w_time", "dls.w_rel"):
            kwargs[key.split(".", 1)[1]] = _parse_float(key, value, path, lineno)
        elif key == "acl.admins":
            kwargs["admins"] = _split(value, ";")
        elif key == "acl.anonymous":
            kwargs["anonymous_methods"] = _split(value)
        elif key == "shell.denylist":
            kwargs["privileged_users"] = tuple(_split(value))
        elif key == "shell.helper":
            kwargs["suexec_helper"] = value
    if "http_port" not in kwargs:
        raise ConfigError("http.port is mandatory", path, None)
    kwargs.setdefault("sandbox_root", base / "sandboxes")
    kwargs.setdefault("file_root", base / "files")
    config = ServerConfig(services=services, **kwargs)
    try:
        config.validate()
    except ConfigError as exc:
        line = None
        for name, lineno in service_lines.items():
            if f"service.{name}=" in str(exc):
                line = lineno
        raise ConfigError(str(exc), path, line) from None
    return config

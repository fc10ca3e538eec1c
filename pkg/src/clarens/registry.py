"""Discovery service: a soft-state registry of service records.

Records live for ``ttl_s`` seconds after their last registration and are
then invisible to lookups (and removed by the periodic purge).  Locally
registered records are pushed to statically configured peers as one UDP
datagram per record per publication tick; records learned from peers are
never forwarded again.
"""

from __future__ import annotations

import logging
import math
import socket
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping

from clarens.errors import FaultCode, RpcFault
from clarens.matching import glob_match

log = logging.getLogger(__name__)

MAGIC = "CLARENS-REG/1"
MAX_DATAGRAM = 1400

LOCAL = "local"
PEER = "peer"


@dataclass(frozen=True)
class ServiceRecord:
    name: str
    host_url: str
    ttl_s: int
    methods: tuple[str, ...] = ()
    attrs: Mapping[str, str] = field(default_factory=dict)
    registered_at: float = 0.0
    origin: str = LOCAL

    @property
    def key(self) -> tuple[str, str]:
        return (self.name, self.host_url)

    @property
    def deadline(self) -> float:
        return self.registered_at + self.ttl_s

    def live(self, now: float) -> bool:
        return now < self.deadline

    def as_struct(self) -> dict:
        return {
            "name": self.name,
            "host_url": self.host_url,
            "methods": list(self.methods),
            "attrs": dict(self.attrs),
            "ttl_s": self.ttl_s,
            "registered_at": float(self.registered_at),
        }

    @classmethod
    def from_struct(cls, data: object) -> "ServiceRecord":
        if not isinstance(data, dict):
            raise RpcFault(FaultCode.BAD_PARAMS, "service record must be a struct")
        unknown = set(data) - {"name", "host_url", "ttl_s", "methods", "attrs"}
        if unknown:
            raise RpcFault(FaultCode.BAD_PARAMS, f"unknown record fields {sorted(unknown)}")
        methods = data.get("methods", [])
        attrs = data.get("attrs", {})
        if not isinstance(methods, list) or not isinstance(attrs, dict):
            raise RpcFault(FaultCode.BAD_PARAMS, "methods must be an array and attrs a struct")
        rec = cls(
            name=data.get("name"),
            host_url=data.get("host_url"),
            ttl_s=data.get("ttl_s"),
            methods=tuple(methods),
            attrs=dict(attrs),
        )
        validate_record(rec)
        return rec


def validate_record(rec: ServiceRecord) -> None:
    def bad(msg: str) -> RpcFault:
        return RpcFault(FaultCode.BAD_PARAMS, msg)

    if not isinstance(rec.name, str) or not rec.name:
        raise bad("name must be a non-empty string")
    if not isinstance(rec.host_url, str) or not rec.host_url:
        raise bad("host_url must be a non-empty string")
    if isinstance(rec.ttl_s, bool) or not isinstance(rec.ttl_s, int) or rec.ttl_s <= 0:
        raise bad("ttl_s must be a positive integer")
    for text in (rec.name, rec.host_url):
        if "\n" in text:
            raise bad("newlines are not allowed in record fields")
    for m in rec.methods:
        if not isinstance(m, str) or not m or "," in m or "\n" in m:
            raise bad(f"bad method name {m!r}")
    for k, v in rec.attrs.items():
        if not isinstance(k, str) or not k or "=" in k or "\n" in k:
            raise bad(f"bad attribute key {k!r}")
        if not isinstance(v, str) or "\n" in v:
            raise bad(f"attribute {k!r} must be a single-line string")


# --- datagram codec --------------------------------------------------------


def encode_datagram(rec: ServiceRecord) -> bytes:
    lines = [
        MAGIC,
        f"name={rec.name}",
        f"host={rec.host_url}",
        f"ttl={rec.ttl_s}",
        "methods=" + ",".join(rec.methods),
    ]
    lines += [f"attr.{k}={rec.attrs[k]}" for k in sorted(rec.attrs)]
    return "\n".join(lines).encode("utf-8")


class MalformedDatagram(ValueError):
    pass


def decode_datagram(data: bytes) -> ServiceRecord:
    """Strict inverse of encode_datagram: only canonical datagrams are accepted."""
    if len(data) > MAX_DATAGRAM:
        raise MalformedDatagram("datagram too large")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedDatagram("not UTF-8") from None
    lines = text.split("\n")
    if len(lines) < 5 or lines[0] != MAGIC:
        raise MalformedDatagram("missing magic line or mandatory fields")
    fields = {}
    for line, key in zip(lines[1:5], ("name", "host", "ttl", "methods")):
        prefix = key + "="
        if not line.startswith(prefix):
            raise MalformedDatagram(f"expected {key}= line")
        fields[key] = line[len(prefix):]
    ttl_text = fields["ttl"]
    if not ttl_text.isdigit() or str(int(ttl_text)) != ttl_text:
        raise MalformedDatagram("ttl must be a canonical decimal integer")
    methods = tuple(fields["methods"].split(",")) if fields["methods"] else ()
    attrs: dict[str, str] = {}
    for line in lines[5:]:
        if not line.startswith("attr."):
            raise MalformedDatagram(f"unexpected line {line!r}")
        key, sep, value = line[len("attr."):].partition("=")
        if not sep:
            raise MalformedDatagram("attribute line without '='")
        if key in attrs or (attrs and key < max(attrs)):
            raise MalformedDatagram("attributes must be unique and sorted by key")
        attrs[key] = value
    rec = ServiceRecord(fields["name"], fields["host"], int(ttl_text), methods, attrs, origin=PEER)
    try:
        validate_record(rec)
    except RpcFault as exc:
        raise MalformedDatagram(exc.message) from None
    return rec


# --- the store -------------------------------------------------------------


class Registry:
    def __init__(self, clock: Callable[[], float] = time.time):
        self.clock = clock
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], ServiceRecord] = {}

    def register(self, rec: ServiceRecord, now: float | None = None, origin: str = LOCAL) -> ServiceRecord:
        validate_record(rec)
        now = self.clock() if now is None else now
        stored = replace(rec, registered_at=now, origin=origin, attrs=dict(rec.attrs), methods=tuple(rec.methods))
        with self._lock:
            self._records[stored.key] = stored
        return stored

    def deregister(self, name: str, host_url: str, now: float | None = None) -> bool:
        now = self.clock() if now is None else now
        with self._lock:
            rec = self._records.pop((name, host_url), None)
        return rec is not None and rec.live(now)

    def _matching(self, name_pattern: str, attr_filter: Mapping[str, str], now: float) -> list[ServiceRecord]:
        with self._lock:
            records = list(self._records.values())
        out = [
            r
            for r in records
            if r.live(now)
            and glob_match(name_pattern, r.name)
            and all(r.attrs.get(k) == v for k, v in attr_filter.items())
        ]
        out.sort(key=lambda r: r.key)
        return out

    def find(self, name_pattern: str = "*", attr_filter: Mapping[str, str] | None = None, now: float | None = None) -> list[ServiceRecord]:
        now = self.clock() if now is None else now
        return self._matching(name_pattern, attr_filter or {}, now)

    def find_server(self, name_pattern: str = "*", attr_filter: Mapping[str, str] | None = None, now: float | None = None) -> list[str]:
        return sorted({r.host_url for r in self.find(name_pattern, attr_filter, now)})

    def purge_expired(self, now: float | None = None) -> int:
        now = self.clock() if now is None else now
        with self._lock:
            dead = [k for k, r in self._records.items() if not r.live(now)]
            for k in dead:
                del self._records[k]
        return len(dead)

    def local_live(self, now: float | None = None) -> list[ServiceRecord]:
        now = self.clock() if now is None else now
        with self._lock:
            return sorted((r for r in self._records.values() if r.origin == LOCAL and r.live(now)), key=lambda r: r.key)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


def publish_udp(rec: ServiceRecord) -> bytes | None:
    """Encode a record for publication; None (and a log line) when it would not fit."""
    data = encode_datagram(rec)
    if len(data) > MAX_DATAGRAM:
        log.warning("record %s@%s encodes to %d bytes, not published", rec.name, rec.host_url, len(data))
        return None
    return data


def handle_datagram(registry: Registry, data: bytes, now: float | None = None) -> ServiceRecord | None:
    """Apply a peer's datagram; malformed input raises MalformedDatagram."""
    rec = decode_datagram(data)
    return registry.register(rec, now=now, origin=PEER)


class Periodic:
    """Run ``fn`` every ``interval_s`` on a daemon thread until stopped."""

    def __init__(self, interval_s: float, fn: Callable[[], object], name: str):
        self.interval_s = interval_s
        self._fn = fn
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.wait(self.interval_s):
            try:
                self._fn()
            except Exception:
                log.exception("periodic task %s failed", self._thread.name)

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive() and self._thread is not threading.current_thread():
            self._thread.join(timeout=5)


@dataclass
class NodeStats:
    sent: int = 0
    received: int = 0
    dropped: int = 0
    oversize: int = 0
    purged: int = 0


class RegistryNode:
    """Couples a Registry with its UDP listener, publication timer and purge timer."""

    def __init__(
        self,
        registry: Registry,
        host: str = "127.0.0.1",
        port: int = 0,
        peers: Iterable[tuple[str, int]] = (),
        publish_interval_ms: int = 1000,
        purge_interval_ms: int = 500,
    ):
        self.registry = registry
        self.peers = list(peers)
        self.stats = NodeStats()
        self._stats_lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.1)
        self.address = self._sock.getsockname()
        self._stop = threading.Event()
        self._listener = threading.Thread(target=self._listen, name=f"udp-listen-{self.address[1]}", daemon=True)
        self._publisher = Periodic(publish_interval_ms / 1000.0, self.publish_tick, f"udp-publish-{self.address[1]}")
        self._purger = Periodic(purge_interval_ms / 1000.0, self.purge_tick, f"purge-{self.address[1]}")

    def start(self) -> None:
        self._listener.start()
        self._publisher.start()
        self._purger.start()

    def stop(self) -> None:
        self._stop.set()
        self._publisher.stop()
        self._purger.stop()
        if self._listener.is_alive():
            self._listener.join(timeout=5)
        self._sock.close()

    def _bump(self, counter: str, n: int = 1) -> None:
        with self._stats_lock:
            setattr(self.stats, counter, getattr(self.stats, counter) + n)

    def _listen(self) -> None:
        while not self._stop.is_set():
            try:
                data, _addr = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    return
                continue
            self._bump("received")
            try:
                handle_datagram(self.registry, data)
            except MalformedDatagram as exc:
                self._bump("dropped")
                log.debug("dropped datagram: %s", exc)

    def outgoing(self, now: float | None = None) -> list[bytes]:
        """Datagrams for one tick: each live local record with its remaining lifetime as TTL.

        Advertising the remaining lifetime (floored to whole seconds) keeps a
        peer's copy from outliving the original once renewals stop.
        """
        now = self.registry.clock() if now is None else now
        out = []
        for rec in self.registry.local_live(now):
            remaining = math.floor(rec.deadline - now)
            if remaining < 1:
                continue
            data = publish_udp(replace(rec, ttl_s=remaining))
            if data is None:
                self._bump("oversize")
                continue
            out.append(data)
        return out

    def publish_tick(self) -> int:
        sent = 0
        for data in self.outgoing():
            for peer in list(self.peers):
                try:
                    self._sock.sendto(data, peer)
                    sent += 1
                except OSError as exc:
                    log.debug("send to %s failed: %s", peer, exc)
        self._bump("sent", sent)
        return sent

    def purge_tick(self) -> int:
        n = self.registry.purge_expired()
        self._bump("purged", n)
        return n

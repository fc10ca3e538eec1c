"""Data location service: find every replica of a logical file and rank them.

Ranking cost for replica r, with the client as the measurement source::

    t_est(r) = rtt + size / bandwidth * (1 + load)
    score(r) = w_time * t_est(r) / max(t_est) + w_rel * (1 - reliability(r))

where reliability is the Laplace-smoothed access success rate
(successes + 1) / (successes + failures + 2).  Lower scores rank first; ties
go to the lexicographically smaller PFN.
"""

from __future__ import annotations

import concurrent.futures
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence
from urllib.parse import urlsplit

from clarens.errors import FaultCode, RpcFault
from clarens.journal import Journal
from clarens.metrics import MetricsStore
from clarens.registry import Registry
from clarens.rpc.values import INT_MAX, wire_size

log = logging.getLogger(__name__)

DEFAULT_RTT_S = 1.0
DEFAULT_BANDWIDTH_BPS = 1e6
DEFAULT_LOAD = 0.0

MAX_PAGE_SIZE = 1000
CATALOG_PATTERN = "catalog*"


def host_of(pfn: str) -> str:
    """Host id of a physical file URL: the netloc without credentials or port."""
    netloc = urlsplit(pfn).netloc
    host = netloc.rpartition("@")[2]
    if host.startswith("["):
        return host[1 : host.find("]")] if "]" in host else host
    return host.partition(":")[0]


@dataclass(frozen=True)
class ReplicaLocation:
    lfn: str
    pfn: str
    host: str
    size_B: int
    catalog_host: str = ""

    def as_struct(self) -> dict:
        return {
            "lfn": self.lfn,
            "pfn": self.pfn,
            "host": self.host,
            "size_B": wire_size(self.size_B),
            "catalog_host": self.catalog_host,
        }


@dataclass(frozen=True)
class ReplicaStats:
    pfn: str
    successes: int = 0
    failures: int = 0

    @property
    def reliability(self) -> float:
        return (self.successes + 1) / (self.successes + self.failures + 2)

    def as_struct(self) -> dict:
        return {
            "pfn": self.pfn,
            "successes": self.successes,
            "failures": self.failures,
            "reliability": self.reliability,
        }


@dataclass(frozen=True)
class ScoredReplica:
    replica: ReplicaLocation
    t_est_s: float
    reliability: float
    score: float

    def as_struct(self) -> dict:
        out = self.replica.as_struct()
        out.update(t_est_s=self.t_est_s, reliability=self.reliability, score=self.score)
        return out


class StatsStore:
    """Per-PFN access outcome counters."""

    def __init__(self, journal: Journal | None = None):
        self._lock = threading.Lock()
        self._stats: dict[str, ReplicaStats] = {}
        self._journal = journal or Journal(None)
        for rec in self._journal.replay("replica_access"):
            pfn, success = rec.get("pfn"), rec.get("success")
            if isinstance(pfn, str) and isinstance(success, bool):
                self._apply(pfn, success)

    def _apply(self, pfn: str, success: bool) -> ReplicaStats:
        old = self._stats.get(pfn, ReplicaStats(pfn))
        new = ReplicaStats(pfn, old.successes + success, old.failures + (not success))
        self._stats[pfn] = new
        return new

    def record_access(self, pfn: str, success: bool) -> ReplicaStats:
        with self._lock:
            stats = self._apply(pfn, success)
            self._journal.append("replica_access", pfn=pfn, success=success)
            return stats

    def get(self, pfn: str) -> ReplicaStats:
        with self._lock:
            return self._stats.get(pfn, ReplicaStats(pfn))

    def reliability(self, pfn: str) -> float:
        return self.get(pfn).reliability


def estimate_transfer_time(replica: ReplicaLocation, client_host: str, metrics: MetricsStore) -> float:
    sample = metrics.query(client_host, replica.host)
    rtt = sample.rtt_s if sample is not None else DEFAULT_RTT_S
    bandwidth = sample.bandwidth_Bps if sample is not None else DEFAULT_BANDWIDTH_BPS
    load = metrics.load_of(replica.host)
    if load is None:
        load = DEFAULT_LOAD
    return rtt + replica.size_B / bandwidth * (1 + load)


def score_replicas(
    replicas: Sequence[ReplicaLocation],
    client_host: str,
    metrics: MetricsStore,
    stats: StatsStore,
    w_time: float = 1.0,
    w_rel: float = 1.0,
) -> list[ScoredReplica]:
    if not replicas:
        raise ValueError("score_replicas needs at least one replica")
    estimates = [estimate_transfer_time(r, client_host, metrics) for r in replicas]
    t_max = max(estimates)
    scored = []
    for replica, t_est in zip(replicas, estimates):
        reliability = stats.reliability(replica.pfn)
        time_term = t_est / t_max if t_max > 0 else 0.0
        score = w_time * time_term + w_rel * (1 - reliability)
        scored.append(ScoredReplica(replica, t_est, reliability, score))
    scored.sort(key=lambda s: (s.score, s.replica.pfn))
    return scored


class Catalog:
    """A dataset catalog: LFN -> PFNs, one entry per PFN."""

    def __init__(self):
        self._lock = threading.Lock()
        self._by_pfn: dict[str, tuple[str, int]] = {}

    def add(self, lfn: str, pfn: str, size_B: int) -> None:
        if not lfn or not pfn:
            raise RpcFault(FaultCode.BAD_PARAMS, "lfn and pfn must be non-empty")
        if size_B < 0:
            raise RpcFault(FaultCode.BAD_PARAMS, "size must be >= 0")
        with self._lock:
            self._by_pfn[pfn] = (lfn, size_B)

    def remove(self, pfn: str) -> bool:
        with self._lock:
            return self._by_pfn.pop(pfn, None) is not None

    def lookup(self, lfn: str) -> list[dict]:
        with self._lock:
            hits = [(pfn, size) for pfn, (l, size) in self._by_pfn.items() if l == lfn]
        return [{"lfn": lfn, "pfn": pfn, "size_B": wire_size(size)} for pfn, size in sorted(hits)]


CatalogLookup = Callable[[str, str, float], Iterable[dict]]


def _entry_size(value: object) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("size_B must be a number")
    if isinstance(value, float) and (not value.is_integer() or value > 2**53):
        raise ValueError("size_B must be a whole number")
    if value < 0:
        raise ValueError("size_B must be >= 0")
    return int(value)


class DataLocationService:
    def __init__(
        self,
        registry: Registry,
        metrics: MetricsStore,
        stats: StatsStore,
        lookup: CatalogLookup,
        w_time: float = 1.0,
        w_rel: float = 1.0,
        catalog_timeout_s: float = 2.0,
    ):
        self.registry = registry
        self.metrics = metrics
        self.stats = stats
        self.lookup = lookup
        self.w_time = w_time
        self.w_rel = w_rel
        self.catalog_timeout_s = catalog_timeout_s

    def gather(self, lfn: str) -> tuple[list[ReplicaLocation], int, int]:
        """Query every discovered catalog.  Returns (replicas, queried, unreachable)."""
        hosts = self.registry.find_server(CATALOG_PATTERN)
        if not hosts:
            return [], 0, 0
        results: dict[str, list[dict] | None] = {}
        pool = concurrent.futures.ThreadPoolExecutor(max_workers=min(8, len(hosts)), thread_name_prefix="dls-fanout")
        try:
            futures = {pool.submit(self.lookup, h, lfn, self.catalog_timeout_s): h for h in hosts}
            done, _pending = concurrent.futures.wait(futures, timeout=self.catalog_timeout_s)
            for fut, host in futures.items():
                if fut not in done:
                    results[host] = None
                    continue
                try:
                    results[host] = list(fut.result())
                except Exception as exc:
                    log.info("catalog %s unreachable: %s", host, exc)
                    results[host] = None
        finally:
            pool.shutdown(wait=False, cancel_futures=True)

        replicas: dict[str, ReplicaLocation] = {}
        unreachable = 0
        for host in hosts:
            entries = results[host]
            if entries is None:
                unreachable += 1
                continue
            try:
                parsed = [
                    ReplicaLocation(lfn, e["pfn"], host_of(e["pfn"]), _entry_size(e["size_B"]), host)
                    for e in entries
                    if e.get("lfn") == lfn
                ]
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                log.info("catalog %s answered garbage: %s", host, exc)
                unreachable += 1
                continue
            for rep in parsed:
                replicas.setdefault(rep.pfn, rep)
        return list(replicas.values()), len(hosts), unreachable

    def rank(self, replicas: Sequence[ReplicaLocation], client_host: str) -> list[ScoredReplica]:
        return score_replicas(replicas, client_host, self.metrics, self.stats, self.w_time, self.w_rel)

    def locate(self, lfn: str, client_host: str, page: int = 0, page_size: int = 10) -> dict:
        if page < 0 or not 0 < page_size <= MAX_PAGE_SIZE:
            raise RpcFault(FaultCode.BAD_PARAMS, f"page must be >= 0 and page_size in 1..{MAX_PAGE_SIZE}")
        if page * page_size > INT_MAX:
            raise RpcFault(FaultCode.BAD_PARAMS, "page offset too large")
        replicas, queried, unreachable = self.gather(lfn)
        if not replicas:
            raise RpcFault(FaultCode.NOT_FOUND, f"no replicas of {lfn!r} found ({unreachable} of {queried} catalogs unreachable)")
        ranked = self.rank(replicas, client_host)
        start = page * page_size
        return {
            "total": len(ranked),
            "page": [s.as_struct() for s in ranked[start : start + page_size]],
            "catalogs_queried": queried,
            "catalogs_unreachable": unreachable,
        }

    def record_access(self, pfn: str, success: bool) -> ReplicaStats:
        return self.stats.record_access(pfn, success)

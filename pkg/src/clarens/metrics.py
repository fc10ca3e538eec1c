"""Network measurement store that the data location service reads from.

Samples are directional and keyed by (src, dst); the latest report wins.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import asdict, dataclass

from clarens.errors import FaultCode, RpcFault


@dataclass(frozen=True)
class LinkMetric:
    src: str
    dst: str
    rtt_s: float
    bandwidth_Bps: float
    server_load: float = 0.0
    measured_at: float = 0.0

    def validate(self) -> None:
        if not isinstance(self.src, str) or not isinstance(self.dst, str) or not self.src or not self.dst:
            raise RpcFault(FaultCode.BAD_PARAMS, "src and dst must be non-empty strings")
        for name in ("rtt_s", "bandwidth_Bps", "server_load", "measured_at"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise RpcFault(FaultCode.BAD_PARAMS, f"{name} must be a finite number")
        if self.rtt_s < 0:
            raise RpcFault(FaultCode.BAD_PARAMS, "rtt_s must be >= 0")
        if self.bandwidth_Bps <= 0:
            raise RpcFault(FaultCode.BAD_PARAMS, "bandwidth_Bps must be > 0")
        if self.server_load < 0:
            raise RpcFault(FaultCode.BAD_PARAMS, "server_load must be >= 0")

    @classmethod
    def from_struct(cls, data: object, now: float | None = None) -> "LinkMetric":
        if not isinstance(data, dict):
            raise RpcFault(FaultCode.BAD_PARAMS, "metric sample must be a struct")
        allowed = {"src", "dst", "rtt_s", "bandwidth_Bps", "server_load", "measured_at"}
        unknown = set(data) - allowed
        missing = {"src", "dst", "rtt_s", "bandwidth_Bps"} - set(data)
        if unknown or missing:
            raise RpcFault(FaultCode.BAD_PARAMS, f"bad sample fields: unknown {sorted(unknown)}, missing {sorted(missing)}")
        sample = cls(
            src=data["src"],
            dst=data["dst"],
            rtt_s=data["rtt_s"],
            bandwidth_Bps=data["bandwidth_Bps"],
            server_load=data.get("server_load", 0.0),
            measured_at=data.get("measured_at", time.time() if now is None else now),
        )
        sample.validate()
        return sample

    def as_struct(self) -> dict:
        return {k: float(v) if isinstance(v, (int, float)) else v for k, v in asdict(self).items()}


class MetricsStore:
    def __init__(self):
        self._lock = threading.Lock()
        self._samples: dict[tuple[str, str], LinkMetric] = {}

    def report(self, sample: LinkMetric) -> None:
        sample.validate()
        with self._lock:
            self._samples[(sample.src, sample.dst)] = sample

    def query(self, src: str, dst: str) -> LinkMetric | None:
        with self._lock:
            return self._samples.get((src, dst))

    def load_of(self, dst: str) -> float | None:
        """Server load of ``dst`` as seen by its most recent sample from any source."""
        with self._lock:
            samples = [s for (_, d), s in self._samples.items() if d == dst]
        if not samples:
            return None
        return max(samples, key=lambda s: (s.measured_at, s.src)).server_load

    def __len__(self) -> int:
        with self._lock:
            return len(self._samples)

"""Caller identity: DN extraction from request headers and grid-mapfile lookup."""

from __future__ import annotations

import hashlib
import hmac
import os
import time
from dataclasses import dataclass
from typing import Mapping

from clarens.errors import ConfigError, FaultCode, RpcFault

DN_HEADER = "X-Clarens-DN"
TOKEN_HEADER = "X-Clarens-Token"

INSECURE_HEADER = "insecure-header"
HMAC_TOKEN = "hmac-token"
AUTH_MODES = (INSECURE_HEADER, HMAC_TOKEN)

MAX_CLOCK_SKEW_S = 300


@dataclass(frozen=True)
class Principal:
    dn: str = ""
    local_user: str | None = None
    anonymous: bool = True

    @classmethod
    def for_dn(cls, dn: str, gridmap: Mapping[str, str] | None = None) -> "Principal":
        if not dn:
            return ANONYMOUS
        return cls(dn=dn, local_user=(gridmap or {}).get(dn), anonymous=False)

    def as_struct(self) -> dict:
        out = {"dn": self.dn, "anonymous": self.anonymous}
        if self.local_user is not None:
            out["local_user"] = self.local_user
        return out


ANONYMOUS = Principal()


def load_gridmap(path: str | os.PathLike) -> dict[str, str]:
    """Parse a Globus grid-mapfile: ``"<DN>" <user>`` per line.

    When the user field lists several comma-separated accounts the first one
    is used, as Globus does.  Later lines for the same DN override earlier
    ones.
    """
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not line.startswith('"'):
                raise ConfigError("DN must be enclosed in double quotes", str(path), lineno)
            end = line.find('"', 1)
            if end < 0:
                raise ConfigError("unterminated DN quote", str(path), lineno)
            dn = line[1:end]
            rest = line[end + 1 :]
            if not dn:
                raise ConfigError("empty DN", str(path), lineno)
            if rest and not rest[0].isspace():
                raise ConfigError("expected whitespace after DN", str(path), lineno)
            fields = rest.split()
            if len(fields) != 1:
                raise ConfigError("expected exactly one user field after DN", str(path), lineno)
            user = fields[0].split(",")[0]
            if not user:
                raise ConfigError("missing user field", str(path), lineno)
            mapping[dn] = user
    return mapping


def _token_mac(secret: str, dn: str, ts: int) -> str:
    return hmac.new(secret.encode("utf-8"), f"{dn}|{ts}".encode("utf-8"), hashlib.sha256).hexdigest()


def make_token(dn: str, secret: str, now: float | None = None) -> str:
    ts = int(time.time() if now is None else now)
    return f"{dn}:{ts}:{_token_mac(secret, dn, ts)}"


def verify_token(token: str, secret: str, now: float | None = None) -> str:
    """Return the DN a token vouches for, or raise AUTH_FAILED."""
    now = time.time() if now is None else now
    parts = token.rsplit(":", 2)
    if len(parts) != 3 or not parts[0]:
        raise RpcFault(FaultCode.AUTH_FAILED, "malformed token")
    dn, ts_text, mac = parts
    try:
        ts = int(ts_text)
    except ValueError:
        raise RpcFault(FaultCode.AUTH_FAILED, "malformed token timestamp") from None
    if not hmac.compare_digest(_token_mac(secret, dn, ts), mac.lower()):
        raise RpcFault(FaultCode.AUTH_FAILED, "token signature mismatch")
    if abs(now - ts) > MAX_CLOCK_SKEW_S:
        raise RpcFault(FaultCode.AUTH_FAILED, "token outside allowed clock skew")
    return dn


def authenticate(
    headers: Mapping[str, str],
    mode: str,
    gridmap: Mapping[str, str] | None = None,
    secret: str | None = None,
    now: float | None = None,
    body_digest: bytes | None = None,
) -> Principal:
    """Resolve request headers to a Principal.

    Missing credentials give the anonymous principal; present-but-invalid
    credentials raise RpcFault(101).  ``body_digest`` is accepted for
    transport symmetry; the token format does not cover the body.
    """
    lowered = {k.lower(): v for k, v in headers.items()}
    if mode == INSECURE_HEADER:
        return Principal.for_dn(lowered.get(DN_HEADER.lower(), "").strip(), gridmap)
    if mode == HMAC_TOKEN:
        token = lowered.get(TOKEN_HEADER.lower(), "").strip()
        if not token:
            return ANONYMOUS
        if not secret:
            raise RpcFault(FaultCode.AUTH_FAILED, "server has no token secret configured")
        return Principal.for_dn(verify_token(token, secret, now), gridmap)
    raise ValueError(f"unknown auth mode {mode!r}")

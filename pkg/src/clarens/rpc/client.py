"""Minimal client for a Clarens endpoint, speaking either encoding."""

from __future__ import annotations

import itertools
import urllib.error
import urllib.request
from typing import Any

from clarens.auth import DN_HEADER, TOKEN_HEADER, make_token
from clarens.errors import RpcFault
from clarens.rpc.wire import Encoding, RpcCall, RpcResponse, decode_response, encode_call

_CONTENT_TYPES = {Encoding.XMLRPC: "text/xml", Encoding.JSONRPC: "application/json"}


class TransportError(OSError):
    """The server could not be reached or answered outside the RPC protocol."""


class ClarensClient:
    def __init__(
        self,
        url: str,
        encoding: Encoding | str = Encoding.XMLRPC,
        auth: str = "none",
        dn: str = "",
        secret: str | None = None,
        timeout: float = 30.0,
    ):
        if auth not in ("none", "header", "hmac"):
            raise ValueError(f"unknown auth mode {auth!r}")
        if auth == "hmac" and not secret:
            raise ValueError("hmac auth needs a secret")
        if auth in ("header", "hmac") and not dn:
            raise ValueError(f"{auth} auth needs a DN")
        self.url = url
        self.encoding = Encoding(encoding)
        self.auth = auth
        self.dn = dn
        self.secret = secret
        self.timeout = timeout
        self._ids = itertools.count(1)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": _CONTENT_TYPES[self.encoding]}
        if self.auth == "header":
            headers[DN_HEADER] = self.dn
        elif self.auth == "hmac":
            headers[TOKEN_HEADER] = make_token(self.dn, self.secret)
        return headers

    def call_raw(self, method: str, *params: Any) -> RpcResponse:
        call_id = str(next(self._ids)) if self.encoding is Encoding.JSONRPC else None
        body = encode_call(RpcCall(self.encoding, method, list(params), call_id))
        req = urllib.request.Request(self.url, data=body, headers=self._headers(), method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"HTTP {exc.code} from {self.url}") from None
        except (urllib.error.URLError, OSError) as exc:
            reason = getattr(exc, "reason", exc)
            raise TransportError(f"cannot reach {self.url}: {reason}") from None
        try:
            return decode_response(payload, self.encoding)
        except RpcFault as exc:
            raise TransportError(f"unreadable response from {self.url}: {exc.message}") from None

    def call(self, method: str, *params: Any) -> Any:
        resp = self.call_raw(method, *params)
        if resp.fault is not None:
            raise resp.fault
        return resp.value

    def __getattr__(self, service: str) -> "_ServiceProxy":
        if service.startswith("_"):
            raise AttributeError(service)
        return _ServiceProxy(self, service)


class _ServiceProxy:
    def __init__(self, client: ClarensClient, service: str):
        self._client = client
        self._service = service

    def __getattr__(self, name: str):
        if name.startswith("_"):
            raise AttributeError(name)
        return lambda *params: self._client.call(f"{self._service}.{name}", *params)

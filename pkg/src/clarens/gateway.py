"""Single-URL RPC front door.

Every request is POSTed to ``/clarens``; its encoding is sniffed, the caller
authenticated, the ``service.method`` looked up among the bound plugins and
checked against the ACL.  Whatever happens after a well-formed POST, the
answer is HTTP 200 with an in-band result or fault in the request's own
encoding (415 only when the encoding cannot be recognised).
"""

from __future__ import annotations

import inspect
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping

from clarens.acl import AclStore
from clarens.auth import ANONYMOUS, Principal
from clarens.errors import FaultCode, RpcFault
from clarens.rpc import wire
from clarens.rpc.values import check_value, normalize
from clarens.rpc.wire import CallParseError, Encoding, RpcCall, RpcResponse

log = logging.getLogger(__name__)

RPC_PATH = "/clarens"
MAX_BODY = 64 << 20

CONTENT_TYPES = {Encoding.XMLRPC: "text/xml; charset=utf-8", Encoding.JSONRPC: "application/json"}


@dataclass
class CallContext:
    principal: Principal = ANONYMOUS
    client_addr: str = ""
    acl: AclStore | None = None

    def allowed(self, method: str) -> bool:
        """Whether the caller holds a grant for a pseudo-method such as ``shell.admin``."""
        return self.acl is not None and self.acl.check(self.principal, method)


Authenticator = Callable[[Mapping[str, str]], Principal]


class Gateway:
    def __init__(self, acl: AclStore, authenticator: Authenticator | None = None):
        self.acl = acl
        self.authenticator = authenticator or (lambda headers: ANONYMOUS)
        self._services: dict[str, Any] = {}
        self._methods: dict[str, tuple[Callable, inspect.Signature]] = {}

    def bind(self, name: str, service: Any) -> None:
        if name in self._services:
            raise ValueError(f"service {name!r} already bound")
        self._services[name] = service
        for attr in dir(service):
            fn = getattr(service, attr)
            if callable(fn) and getattr(fn, "__rpc_exposed__", False):
                self._methods[f"{name}.{attr}"] = (fn, inspect.signature(fn))

    def services(self) -> list[str]:
        return sorted(self._services)

    def list_methods(self) -> list[str]:
        return sorted(self._methods)

    def dispatch(self, call: RpcCall, ctx: CallContext) -> RpcResponse:
        try:
            value = self._invoke(call, ctx)
        except RpcFault as fault:
            return RpcResponse(fault=RpcFault(fault.code, fault.message), call_id=call.call_id)
        return RpcResponse(value=value, call_id=call.call_id)

    def _invoke(self, call: RpcCall, ctx: CallContext) -> Any:
        if call.service not in self._services:
            raise RpcFault(FaultCode.NO_SUCH_SERVICE, f"no service {call.service!r}")
        entry = self._methods.get(call.method)
        if entry is None:
            raise RpcFault(FaultCode.NO_SUCH_METHOD, f"service {call.service!r} has no method {call.name!r}")
        fn, sig = entry
        if getattr(fn, "__rpc_needs_mapping__", False) and not ctx.principal.local_user:
            raise RpcFault(FaultCode.AUTH_FAILED, f"{call.method} needs a DN mapped to a local account")
        if not self.acl.check(ctx.principal, call.method):
            who = "anonymous caller" if ctx.principal.anonymous else repr(ctx.principal.dn)
            raise RpcFault(FaultCode.ACCESS_DENIED, f"{who} may not call {call.method}")
        try:
            sig.bind(ctx, *call.params)
        except TypeError as exc:
            raise RpcFault(FaultCode.BAD_PARAMS, f"{call.method}: {exc}") from None
        try:
            result = fn(ctx, *call.params)
        except RpcFault:
            raise
        except Exception as exc:
            log.exception("%s failed", call.method)
            raise RpcFault(FaultCode.INTERNAL, f"{call.method} failed: {type(exc).__name__}: {exc}") from None
        result = normalize(result)
        check_value(result, FaultCode.INTERNAL)
        return result

    # -- HTTP-level entry point, independent of the server plumbing --

    def handle_request(self, body: bytes, content_type: str, headers: Mapping[str, str], client_addr: str = "") -> tuple[int, str, bytes]:
        """Return (status, content type, body) for one POST."""
        if not body.strip():
            return 415, "text/plain", b"empty request body\n"
        try:
            encoding = wire.sniff_encoding(body, content_type)
        except wire.UnrecognizedEncoding as exc:
            return 415, "text/plain", f"{exc}\n".encode()

        auth_fault: RpcFault | None = None
        principal = ANONYMOUS
        try:
            principal = self.authenticator(headers)
        except RpcFault as fault:
            auth_fault = fault
        ctx = CallContext(principal, client_addr, self.acl)

        def run(call: RpcCall) -> RpcResponse:
            if auth_fault is not None:
                return RpcResponse(fault=auth_fault, call_id=call.call_id)
            call.principal = principal
            return self.dispatch(call, ctx)

        ctype = CONTENT_TYPES[encoding]
        if encoding is Encoding.JSONRPC:
            try:
                batch = wire.parse_batch(body)
            except CallParseError as exc:
                return 200, ctype, wire.encode_response(RpcResponse(fault=exc, call_id=exc.call_id), encoding)
            if batch is not None:
                responses = [
                    RpcResponse(fault=item, call_id=item.call_id) if isinstance(item, CallParseError) else run(item)
                    for item in batch
                ]
                return 200, ctype, wire.encode_batch_response(responses)
        try:
            call = wire.parse_call(body, encoding)
        except CallParseError as exc:
            return 200, ctype, wire.encode_response(RpcResponse(fault=exc, call_id=exc.call_id), encoding)
        resp = run(call)
        try:
            out = wire.encode_response(resp, encoding)
        except RpcFault as fault:
            out = wire.encode_response(RpcResponse(fault=fault, call_id=call.call_id), encoding)
        return 200, ctype, out


class _Handler(BaseHTTPRequestHandler):
    server_version = "Clarens/0.1"
    gateway: Gateway  # set on the per-server subclass

    def do_POST(self) -> None:
        if self.path.split("?", 1)[0] != RPC_PATH:
            self._reply(404, "text/plain", b"not found\n")
            return
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self._reply(411, "text/plain", b"Content-Length required\n")
            return
        if not 0 <= length <= MAX_BODY:
            self._reply(413, "text/plain", b"request too large\n")
            return
        body = self.rfile.read(length)
        try:
            status, ctype, out = self.gateway.handle_request(
                body, self.headers.get("Content-Type", ""), dict(self.headers.items()), self.client_address[0]
            )
        except Exception:
            # Encoding failures are handled in-band; this is the last resort.
            log.exception("unhandled error while serving request")
            status, ctype, out = 200, "text/plain", b""
            try:
                enc = wire.sniff_encoding(body, self.headers.get("Content-Type", ""))
                out = wire.encode_response(RpcResponse(fault=RpcFault(FaultCode.INTERNAL, "internal error")), enc)
                ctype = CONTENT_TYPES[enc]
            except Exception:
                status = 500
        self._reply(status, ctype, out)

    def _not_allowed(self) -> None:
        self.send_response(405)
        self.send_header("Allow", "POST")
        self.send_header("Content-Length", "0")
        self.end_headers()

    do_GET = do_PUT = do_DELETE = do_PATCH = _not_allowed

    def _reply(self, status: int, ctype: str, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, format: str, *args: Any) -> None:
        log.debug("%s - %s", self.address_string(), format % args)


class HttpFrontDoor:
    """A threaded HTTP server feeding one Gateway."""

    def __init__(self, gateway: Gateway, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"gateway": gateway})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self.address = self.httpd.server_address[:2]
        self._thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.1}, name=f"http-{self.address[1]}", daemon=True)

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}{RPC_PATH}"

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self._thread.join(timeout=5)

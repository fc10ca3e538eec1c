"""Request sniffing plus the XML-RPC and JSON-RPC 2.0 encodings.

XML-RPC marshalling is the stdlib's, with one patch: bare carriage returns
are emitted as character references, since XML parsers normalize a literal
CR to LF and the value would not survive the round trip.

JSON has no datetime or binary type; those travel as single-key structs
``{"$dt": "<iso-8601>"}`` and ``{"$b64": "<base64>"}``.
"""

from __future__ import annotations

import base64
import binascii
import enum
import json
import xmlrpc.client
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from clarens.errors import FaultCode, RpcFault
from clarens.rpc.values import (
    B64_TAG,
    DT_TAG,
    INT_MAX,
    INT_MIN,
    check_value,
    normalize,
)


class Encoding(str, enum.Enum):
    XMLRPC = "xmlrpc"
    JSONRPC = "jsonrpc"


class UnrecognizedEncoding(ValueError):
    """Body is neither XML-RPC nor JSON-RPC (HTTP 415)."""


class CallParseError(RpcFault):
    """A fault raised while parsing a request; keeps the JSON-RPC id if one was read."""

    def __init__(self, code: int, message: str, call_id: Any = None):
        super().__init__(code, message)
        self.call_id = call_id


@dataclass
class RpcCall:
    encoding: Encoding
    method: str
    params: list = field(default_factory=list)
    call_id: Any = None
    principal: Any = None

    @property
    def service(self) -> str:
        return self.method.split(".", 1)[0]

    @property
    def name(self) -> str:
        return self.method.split(".", 1)[1]


@dataclass
class RpcResponse:
    value: Any = None
    fault: RpcFault | None = None
    call_id: Any = None

    @property
    def ok(self) -> bool:
        return self.fault is None


# JSON-RPC reserved codes <-> our fault table, applied only at the wire.
_TO_JSON_CODE = {
    FaultCode.PARSE_FAULT: -32700,
    FaultCode.NO_SUCH_METHOD: -32601,
    FaultCode.BAD_PARAMS: -32602,
}
_FROM_JSON_CODE = {v: k for k, v in _TO_JSON_CODE.items()}
_FROM_JSON_CODE.update({-32600: FaultCode.PARSE_FAULT, -32603: FaultCode.INTERNAL})


def sniff_encoding(body: bytes, content_type: str = "") -> Encoding:
    ctype = (content_type or "").lower()
    if "json" in ctype:
        return Encoding.JSONRPC
    if "xml" in ctype:
        return Encoding.XMLRPC
    head = body.lstrip()[:1]
    if head in (b"{", b"["):
        return Encoding.JSONRPC
    if head == b"<":
        return Encoding.XMLRPC
    raise UnrecognizedEncoding("request is neither XML-RPC nor JSON-RPC")


def check_method_name(method: Any, call_id: Any = None) -> str:
    if not isinstance(method, str):
        raise CallParseError(FaultCode.PARSE_FAULT, "method name must be a string", call_id)
    service, dot, name = method.partition(".")
    if not dot or not service or not name or "." in name:
        raise CallParseError(FaultCode.BAD_METHOD, f"method {method!r} is not of the form service.name", call_id)
    return method


# --- XML-RPC ---------------------------------------------------------------


def _xml_escape(s: str) -> str:
    return xmlrpc.client.escape(s).replace("\r", "&#13;")


class _Marshaller(xmlrpc.client.Marshaller):
    dispatch = dict(xmlrpc.client.Marshaller.dispatch)

    def dump_unicode(self, value, write, escape=_xml_escape):
        xmlrpc.client.Marshaller.dump_unicode(self, value, write, escape)

    dispatch[str] = dump_unicode

    def dump_struct(self, value, write, escape=_xml_escape):
        xmlrpc.client.Marshaller.dump_struct(self, value, write, escape)

    dispatch[dict] = dump_struct


def _xml_dumps(params: tuple | xmlrpc.client.Fault, methodname: str | None = None) -> bytes:
    m = _Marshaller("utf-8")
    try:
        data = m.dumps(params)
    except (TypeError, OverflowError) as exc:
        raise RpcFault(FaultCode.INTERNAL, f"cannot encode value: {exc}") from None
    if methodname is not None:
        text = f"<?xml version='1.0'?>\n<methodCall>\n<methodName>{_xml_escape(methodname)}</methodName>\n{data}</methodCall>\n"
    else:
        text = f"<?xml version='1.0'?>\n<methodResponse>\n{data}</methodResponse>\n"
    return text.encode("utf-8")


def _xml_loads(body: bytes) -> tuple[tuple, str | None]:
    try:
        return xmlrpc.client.loads(body, use_builtin_types=True)
    except xmlrpc.client.Fault:
        raise
    except Exception as exc:
        raise CallParseError(FaultCode.PARSE_FAULT, f"malformed XML-RPC: {exc}") from None


# --- JSON ------------------------------------------------------------------


def to_json(value: Any) -> Any:
    """RPC value -> JSON-compatible tree, tagging datetime and bytes."""
    if isinstance(value, bytes):
        return {B64_TAG: base64.b64encode(value).decode("ascii")}
    if isinstance(value, datetime):
        return {DT_TAG: value.isoformat()}
    if isinstance(value, list):
        return [to_json(v) for v in value]
    if isinstance(value, dict):
        return {k: to_json(v) for k, v in value.items()}
    return value


def from_json(tree: Any) -> Any:
    """Inverse of to_json; raises PARSE_FAULT on anything outside the value set."""
    if tree is None:
        raise RpcFault(FaultCode.PARSE_FAULT, "null is not an RPC value")
    if isinstance(tree, bool) or isinstance(tree, str):
        return tree
    if isinstance(tree, int):
        if not INT_MIN <= tree <= INT_MAX:
            raise RpcFault(FaultCode.PARSE_FAULT, f"integer {tree} outside 32-bit range")
        return tree
    if isinstance(tree, float):
        return tree
    if isinstance(tree, list):
        return [from_json(v) for v in tree]
    if isinstance(tree, dict):
        if DT_TAG in tree or B64_TAG in tree:
            return _from_tagged(tree)
        return {k: from_json(v) for k, v in tree.items()}
    raise RpcFault(FaultCode.PARSE_FAULT, f"unexpected JSON node {type(tree).__name__}")


def _from_tagged(tree: dict) -> Any:
    if len(tree) != 1:
        raise RpcFault(FaultCode.PARSE_FAULT, "tagged struct must have exactly one key")
    (tag, payload), = tree.items()
    if not isinstance(payload, str):
        raise RpcFault(FaultCode.PARSE_FAULT, f"{tag} payload must be a string")
    if tag == DT_TAG:
        try:
            dt = datetime.fromisoformat(payload)
        except ValueError:
            raise RpcFault(FaultCode.PARSE_FAULT, f"bad datetime {payload!r}") from None
        if dt.tzinfo is not None or dt.microsecond:
            raise RpcFault(FaultCode.PARSE_FAULT, "datetime must be naive with whole seconds")
        return dt
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError):
        raise RpcFault(FaultCode.PARSE_FAULT, "bad base64 payload") from None


def _reject_constant(name: str) -> Any:
    raise ValueError(f"{name} is not valid JSON")


def _json_loads(body: bytes) -> Any:
    try:
        return json.loads(body.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CallParseError(FaultCode.PARSE_FAULT, f"malformed JSON: {exc}") from None


def _json_dumps(obj: Any) -> bytes:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(",", ":")).encode("utf-8")


def _json_call_from_obj(obj: Any) -> RpcCall:
    if not isinstance(obj, dict):
        raise CallParseError(FaultCode.PARSE_FAULT, "JSON-RPC request must be an object")
    call_id = obj.get("id")
    if call_id is not None and (isinstance(call_id, bool) or not isinstance(call_id, (str, int))):
        raise CallParseError(FaultCode.PARSE_FAULT, "id must be a string, number or null")
    if obj.get("jsonrpc") != "2.0":
        raise CallParseError(FaultCode.PARSE_FAULT, 'missing "jsonrpc": "2.0"', call_id)
    method = check_method_name(obj.get("method"), call_id)
    raw = obj.get("params", [])
    if not isinstance(raw, list):
        raise CallParseError(FaultCode.BAD_PARAMS, "only positional params are supported", call_id)
    try:
        params = [from_json(p) for p in raw]
        for p in params:
            check_value(p, FaultCode.PARSE_FAULT)
    except RpcFault as exc:
        raise CallParseError(exc.code, exc.message, call_id) from None
    return RpcCall(Encoding.JSONRPC, method, params, call_id)


# --- public entry points ---------------------------------------------------


def parse_call(body: bytes, encoding: Encoding) -> RpcCall:
    """Decode one request.  Raises CallParseError (code 300/301/302)."""
    if encoding is Encoding.XMLRPC:
        try:
            params, method = _xml_loads(body)
        except xmlrpc.client.Fault:
            raise CallParseError(FaultCode.PARSE_FAULT, "a fault is not a request") from None
        if method is None:
            raise CallParseError(FaultCode.PARSE_FAULT, "missing methodName")
        check_method_name(method)
        params = list(params)
        try:
            for p in params:
                check_value(p, FaultCode.PARSE_FAULT)
        except RpcFault as exc:
            raise CallParseError(exc.code, exc.message) from None
        return RpcCall(Encoding.XMLRPC, method, params)
    tree = _json_loads(body)
    if isinstance(tree, list):
        raise CallParseError(FaultCode.PARSE_FAULT, "batch requests must go through parse_batch")
    return _json_call_from_obj(tree)


def parse_batch(body: bytes) -> list[RpcCall | CallParseError] | None:
    """Decode a JSON-RPC batch; returns None when the body is a single request."""
    tree = _json_loads(body)
    if not isinstance(tree, list):
        return None
    if not tree:
        raise CallParseError(FaultCode.PARSE_FAULT, "empty batch")
    out: list[RpcCall | CallParseError] = []
    for item in tree:
        try:
            out.append(_json_call_from_obj(item))
        except CallParseError as exc:
            out.append(exc)
    return out


def encode_call(call: RpcCall) -> bytes:
    params = normalize(call.params)
    check_value(params)
    if call.encoding is Encoding.XMLRPC:
        return _xml_dumps(tuple(params), methodname=call.method)
    return _json_dumps({"jsonrpc": "2.0", "method": call.method, "params": to_json(params), "id": call.call_id})


def _response_object(resp: RpcResponse) -> dict:
    if resp.fault is not None:
        code = _TO_JSON_CODE.get(resp.fault.code, resp.fault.code)
        return {"jsonrpc": "2.0", "error": {"code": code, "message": resp.fault.message}, "id": resp.call_id}
    return {"jsonrpc": "2.0", "result": to_json(resp.value), "id": resp.call_id}


def encode_response(resp: RpcResponse, encoding: Encoding) -> bytes:
    if encoding is Encoding.XMLRPC:
        if resp.fault is not None:
            return _xml_dumps(xmlrpc.client.Fault(resp.fault.code, resp.fault.message))
        return _xml_dumps((resp.value,))
    return _json_dumps(_response_object(resp))


def encode_batch_response(responses: list[RpcResponse]) -> bytes:
    return _json_dumps([_response_object(r) for r in responses])


def decode_response(body: bytes, encoding: Encoding) -> RpcResponse:
    """Client side: decode a single response body.  Malformed bodies raise CallParseError."""
    if encoding is Encoding.XMLRPC:
        try:
            params, _ = _xml_loads(body)
        except xmlrpc.client.Fault as f:
            return RpcResponse(fault=RpcFault(int(f.faultCode), str(f.faultString)))
        if len(params) != 1:
            raise CallParseError(FaultCode.PARSE_FAULT, "response must hold exactly one value")
        check_value(params[0], FaultCode.PARSE_FAULT)
        return RpcResponse(value=params[0])
    obj = _json_loads(body)
    if not isinstance(obj, dict):
        raise CallParseError(FaultCode.PARSE_FAULT, "JSON-RPC response must be an object")
    call_id = obj.get("id")
    if "error" in obj:
        err = obj["error"] or {}
        raw_code = err.get("code", FaultCode.INTERNAL)
        code = _FROM_JSON_CODE.get(raw_code, raw_code)
        return RpcResponse(fault=RpcFault(int(code), str(err.get("message", ""))), call_id=call_id)
    if "result" not in obj:
        raise CallParseError(FaultCode.PARSE_FAULT, "response has neither result nor error")
    value = from_json(obj["result"])
    check_value(value, FaultCode.PARSE_FAULT)
    return RpcResponse(value=value, call_id=call_id)

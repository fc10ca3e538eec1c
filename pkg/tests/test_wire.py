import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clarens.errors import FaultCode, RpcFault
from clarens.rpc import wire
from clarens.rpc.values import INT_MAX, INT_MIN, check_value, values_equal, wire_size
from clarens.rpc.wire import CallParseError, Encoding, RpcCall, RpcResponse

from strategies import rpc_values

BOTH = [Encoding.XMLRPC, Encoding.JSONRPC]


def roundtrip_call(value, encoding):
    body = wire.encode_call(RpcCall(encoding, "echo.echo", [value], "7" if encoding is Encoding.JSONRPC else None))
    return wire.parse_call(body, encoding).params[0]


def roundtrip_response(value, encoding):
    body = wire.encode_response(RpcResponse(value=value), encoding)
    return wire.decode_response(body, encoding).value


# --- sniffing -----------------------------------------------------------------


@pytest.mark.parametrize(
    "body, ctype, expected",
    [
        (b"<?xml version='1.0'?><methodCall/>", "text/xml", Encoding.XMLRPC),
        (b'{"jsonrpc":"2.0","method":"echo.echo"}', "", Encoding.JSONRPC),
        (b"<methodCall></methodCall>", "application/json", Encoding.JSONRPC),
        (b'  \n[{"jsonrpc":"2.0"}]', "", Encoding.JSONRPC),
        (b"\t<methodCall/>", "", Encoding.XMLRPC),
        (b'{"a":1}', "text/xml; charset=utf-8", Encoding.XMLRPC),
        (b"anything", "application/json-rpc", Encoding.JSONRPC),
    ],
)
def test_sniff_examples(body, ctype, expected):
    assert wire.sniff_encoding(body, ctype) is expected


@pytest.mark.parametrize("body, ctype", [(b"hello", ""), (b"hello", "text/plain"), (b"   ", "")])
def test_sniff_unrecognized(body, ctype):
    with pytest.raises(wire.UnrecognizedEncoding):
        wire.sniff_encoding(body, ctype)


@given(st.binary(min_size=1, max_size=40), st.sampled_from(["", "text/plain", "application/octet-stream"]))
def test_sniff_rule_without_content_type(body, ctype):
    head = body.lstrip()[:1]
    if head in (b"{", b"["):
        assert wire.sniff_encoding(body, ctype) is Encoding.JSONRPC
    elif head == b"<":
        assert wire.sniff_encoding(body, ctype) is Encoding.XMLRPC
    else:
        with pytest.raises(wire.UnrecognizedEncoding):
            wire.sniff_encoding(body, ctype)


# --- parsing ------------------------------------------------------------------


def test_parse_xmlrpc_call():
    body = wire.encode_call(RpcCall(Encoding.XMLRPC, "echo.echo", ["hi"]))
    call = wire.parse_call(body, Encoding.XMLRPC)
    assert (call.method, call.params, call.call_id) == ("echo.echo", ["hi"], None)
    assert (call.service, call.name) == ("echo", "echo")


def test_parse_jsonrpc_call_keeps_id():
    body = b'{"jsonrpc":"2.0","method":"echo.echo","params":["hi"],"id":"1"}'
    call = wire.parse_call(body, Encoding.JSONRPC)
    assert (call.method, call.params, call.call_id) == ("echo.echo", ["hi"], "1")


@pytest.mark.parametrize(
    "body, encoding",
    [
        (b"not xml", Encoding.XMLRPC),
        (b"<methodCall><methodName>a.b</methodName><params><param><value><i4>x</i4></value></param></params></methodCall>", Encoding.XMLRPC),
        (b"{not json", Encoding.JSONRPC),
        (b'{"method":"echo.echo","params":[]}', Encoding.JSONRPC),
        (b'{"jsonrpc":"2.0","method":"echo.echo","params":[null]}', Encoding.JSONRPC),
        (b'{"jsonrpc":"2.0","method":"echo.echo","params":[NaN]}', Encoding.JSONRPC),
        (b'"just a string"', Encoding.JSONRPC),
        (b"\xff\xfe", Encoding.JSONRPC),
    ],
)
def test_parse_fault_300(body, encoding):
    with pytest.raises(CallParseError) as exc:
        wire.parse_call(body, encoding)
    assert exc.value.code == FaultCode.PARSE_FAULT


@pytest.mark.parametrize("method", ["echo", "echo.", ".echo", "a.b.c", ""])
@pytest.mark.parametrize("encoding", BOTH)
def test_bad_method_301(method, encoding):
    if encoding is Encoding.XMLRPC:
        body = f"<?xml version='1.0'?><methodCall><methodName>{method}</methodName><params/></methodCall>".encode()
    else:
        body = json.dumps({"jsonrpc": "2.0", "method": method, "params": [], "id": 1}).encode()
    with pytest.raises(CallParseError) as exc:
        wire.parse_call(body, encoding)
    assert exc.value.code == FaultCode.BAD_METHOD


def test_named_params_are_302():
    body = b'{"jsonrpc":"2.0","method":"echo.echo","params":{"x":1},"id":4}'
    with pytest.raises(CallParseError) as exc:
        wire.parse_call(body, Encoding.JSONRPC)
    assert exc.value.code == FaultCode.BAD_PARAMS
    assert exc.value.call_id == 4


# --- the value set ------------------------------------------------------------


@pytest.mark.parametrize("encoding", BOTH)
@pytest.mark.parametrize("n", [INT_MIN, -1, 0, 1, INT_MAX])
def test_int_range_edges_roundtrip(encoding, n):
    assert values_equal(roundtrip_call(n, encoding), n)


@pytest.mark.parametrize("n", [INT_MIN - 1, INT_MAX + 1, 2**40])
def test_out_of_range_ints(n):
    with pytest.raises(RpcFault) as exc:
        check_value(n)
    assert exc.value.code == FaultCode.BAD_PARAMS
    body = json.dumps({"jsonrpc": "2.0", "method": "echo.echo", "params": [n], "id": 1}).encode()
    with pytest.raises(CallParseError) as exc:
        wire.parse_call(body, Encoding.JSONRPC)
    assert exc.value.code == FaultCode.PARSE_FAULT
    xml = f"<?xml version='1.0'?><methodCall><methodName>echo.echo</methodName><params><param><value><int>{n}</int></value></param></params></methodCall>"
    with pytest.raises(CallParseError) as exc:
        wire.parse_call(xml.encode(), Encoding.XMLRPC)
    assert exc.value.code == FaultCode.PARSE_FAULT


@pytest.mark.parametrize("key", ["$dt", "$b64"])
def test_reserved_struct_keys_rejected(key):
    with pytest.raises(RpcFault):
        check_value({key: "x"})
    body = json.dumps({"jsonrpc": "2.0", "method": "echo.echo", "params": [{key: "x", "other": 1}], "id": 1}).encode()
    with pytest.raises(CallParseError):
        wire.parse_call(body, Encoding.JSONRPC)


@pytest.mark.parametrize(
    "value",
    [float("nan"), float("inf"), "bad\x00char", "lone\ud800", datetime(2020, 1, 1, 0, 0, 0, 5), datetime(2020, 1, 1, tzinfo=timezone.utc), None, {1: 2}, object()],
)
def test_unrepresentable_values(value):
    with pytest.raises(RpcFault):
        check_value(value)


@pytest.mark.parametrize("encoding", BOTH)
def test_carriage_return_survives(encoding):
    for s in ["a\rb", "\r\n", "\r", "x\r\ny\rz\n"]:
        assert roundtrip_call(s, encoding) == s
        assert roundtrip_call({s: s}, encoding) == {s: s}


def test_json_tagging():
    dt = datetime(2006, 5, 4, 3, 2, 1)
    body = wire.encode_call(RpcCall(Encoding.JSONRPC, "echo.echo", [dt, b"\x00\xff"], "x"))
    tree = json.loads(body)
    assert tree["params"] == [{"$dt": "2006-05-04T03:02:01"}, {"$b64": "AP8="}]


def test_spec_echo_examples_roundtrip():
    for encoding in BOTH:
        assert roundtrip_call("hello", encoding) == "hello"
        v = {"a": 1, "b": [True, 2.5]}
        assert values_equal(roundtrip_call(v, encoding), v)
        blob = bytes(range(256))
        assert roundtrip_call(blob, encoding) == blob


def test_values_equal_is_type_strict():
    assert not values_equal(True, 1)
    assert not values_equal(1, 1.0)
    assert not values_equal(b"x", "x")
    assert values_equal([1, {"a": b""}], [1, {"a": b""}])


def test_wire_size():
    assert wire_size(5) == 5 and isinstance(wire_size(5), int)
    big = wire_size(2**40)
    assert isinstance(big, float) and big == 2**40


@settings(max_examples=300, deadline=None)
@given(rpc_values(4))
def test_roundtrip_property_both_encodings(value):
    for encoding in BOTH:
        assert values_equal(roundtrip_call(value, encoding), value)
        assert values_equal(roundtrip_response(value, encoding), value)


@settings(max_examples=200, deadline=None)
@given(rpc_values(3))
def test_encodings_agree(value):
    assert values_equal(roundtrip_call(value, Encoding.XMLRPC), roundtrip_call(value, Encoding.JSONRPC))


# --- responses and faults -----------------------------------------------------


@pytest.mark.parametrize("encoding", BOTH)
@pytest.mark.parametrize("code", [c.value for c in FaultCode])
def test_fault_roundtrip_preserves_table_code(encoding, code):
    body = wire.encode_response(RpcResponse(fault=RpcFault(code, "boom"), call_id="9"), encoding)
    resp = wire.decode_response(body, encoding)
    assert resp.fault == RpcFault(code, "boom")


@pytest.mark.parametrize("code, json_code", [(300, -32700), (201, -32601), (302, -32602)])
def test_jsonrpc_standard_codes_on_the_wire(code, json_code):
    body = wire.encode_response(RpcResponse(fault=RpcFault(code, "m"), call_id=1), Encoding.JSONRPC)
    assert json.loads(body)["error"]["code"] == json_code


def test_batch():
    body = b'[{"jsonrpc":"2.0","method":"echo.echo","params":[1],"id":1},{"bad":true},{"jsonrpc":"2.0","method":"nodot","id":3}]'
    items = wire.parse_batch(body)
    assert isinstance(items[0], RpcCall) and items[0].params == [1]
    assert isinstance(items[1], CallParseError) and items[1].code == FaultCode.PARSE_FAULT
    assert isinstance(items[2], CallParseError) and items[2].code == FaultCode.BAD_METHOD and items[2].call_id == 3
    assert wire.parse_batch(b'{"jsonrpc":"2.0"}') is None
    with pytest.raises(CallParseError):
        wire.parse_batch(b"[]")

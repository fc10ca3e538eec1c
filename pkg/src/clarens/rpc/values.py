"""The RPC value model.

Values are plain Python objects drawn from the XML-RPC type set:

    int (32-bit signed), bool, str, float (finite), datetime (naive, whole
    seconds), bytes, list, dict with str keys

Both encodings must carry every value losslessly, which is what forces the
narrower-than-Python rules below (no NaN, no lone surrogates, no XML-illegal
control characters, no sub-second datetimes).
"""

from __future__ import annotations

import math
import re
from datetime import datetime
from typing import Any

from clarens.errors import FaultCode, RpcFault

INT_MIN = -(2**31)
INT_MAX = 2**31 - 1

# Reserved struct keys used to tag datetime/base64 in JSON.
DT_TAG = "$dt"
B64_TAG = "$b64"
RESERVED_KEYS = frozenset({DT_TAG, B64_TAG})

MAX_DEPTH = 64

# XML 1.0 Char production minus surrogates (which UTF-8 cannot carry).
_ILLEGAL_CHARS = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


def check_string(s: str, what: str = "string") -> None:
    m = _ILLEGAL_CHARS.search(s)
    if m:
        raise RpcFault(FaultCode.BAD_PARAMS, f"{what} contains unencodable character U+{ord(m.group()):04X}")


def check_value(value: Any, code: int = FaultCode.BAD_PARAMS, _depth: int = 0) -> None:
    """Raise RpcFault(code) unless value is a representable RPC value."""
    if _depth > MAX_DEPTH:
        raise RpcFault(code, "value nested too deeply")
    if isinstance(value, bool):
        return
    if isinstance(value, int):
        if not INT_MIN <= value <= INT_MAX:
            raise RpcFault(code, f"integer {value} outside 32-bit range")
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise RpcFault(code, "non-finite double")
        return
    if isinstance(value, str):
        try:
            check_string(value)
        except RpcFault as exc:
            raise RpcFault(code, exc.message) from None
        return
    if isinstance(value, bytes):
        return
    if isinstance(value, datetime):
        if value.tzinfo is not None or value.microsecond:
            raise RpcFault(code, "datetime must be naive with whole seconds")
        return
    if isinstance(value, list):
        for item in value:
            check_value(item, code, _depth + 1)
        return
    if isinstance(value, dict):
        for k, v in value.items():
            if not isinstance(k, str):
                raise RpcFault(code, "struct keys must be strings")
            if k in RESERVED_KEYS:
                raise RpcFault(code, f"struct key {k!r} is reserved")
            try:
                check_string(k, "struct key")
            except RpcFault as exc:
                raise RpcFault(code, exc.message) from None
            check_value(v, code, _depth + 1)
        return
    raise RpcFault(code, f"cannot represent {type(value).__name__} as an RPC value")


def values_equal(a: Any, b: Any) -> bool:
    """Type-strict equality: True != 1, 1 != 1.0, b"x" != "x"."""
    if type(a) is not type(b):
        return False
    if isinstance(a, list):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(values_equal(a[k], b[k]) for k in a)
    return a == b


def normalize(value: Any) -> Any:
    """Convert tuples and bytearrays coming from service code to canonical types."""
    if isinstance(value, (list, tuple)):
        return [normalize(v) for v in value]
    if isinstance(value, dict):
        return {k: normalize(v) for k, v in value.items()}
    if isinstance(value, bytearray):
        return bytes(value)
    return value


def wire_size(n: int) -> int | float:
    """Byte counts above the 32-bit int range travel as doubles."""
    return n if INT_MIN <= n <= INT_MAX else float(n)

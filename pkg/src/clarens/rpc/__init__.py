"""Wire layer: value model, the two encodings, and an HTTP client."""

from clarens.rpc.values import check_value, values_equal
from clarens.rpc.wire import (
    Encoding,
    RpcCall,
    RpcResponse,
    UnrecognizedEncoding,
    decode_response,
    encode_call,
    encode_response,
    parse_call,
    sniff_encoding,
)

__all__ = [
    "Encoding",
    "RpcCall",
    "RpcResponse",
    "UnrecognizedEncoding",
    "check_value",
    "decode_response",
    "encode_call",
    "encode_response",
    "parse_call",
    "sniff_encoding",
    "values_equal",
]

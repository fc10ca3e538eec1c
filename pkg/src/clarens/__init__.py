"""Clarens-style grid services framework.

One HTTP endpoint hosts pluggable RPC services reachable over XML-RPC or
JSON-RPC, guarded by DN-based access control, with a soft-state discovery
registry, a replica-ranking data location service and a sandboxed shell.
"""

from clarens.errors import ConfigError, FaultCode, RpcFault

__version__ = "0.1.0"

__all__ = ["ConfigError", "FaultCode", "RpcFault", "__version__"]

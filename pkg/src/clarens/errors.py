from __future__ import annotations

import enum


class FaultCode(enum.IntEnum):
    ACCESS_DENIED = 100
    AUTH_FAILED = 101
    NO_SUCH_SERVICE = 200
    NO_SUCH_METHOD = 201
    PARSE_FAULT = 300
    BAD_METHOD = 301
    BAD_PARAMS = 302
    INTERNAL = 400
    NOT_FOUND = 404
    CONFLICT = 409


class RpcFault(Exception):
    """An in-band RPC fault.  Raised by services, carried back to the caller."""

    def __init__(self, code: int, message: str = ""):
        super().__init__(code, message)
        self.code = int(code)
        self.message = message

    def __str__(self) -> str:
        return f"fault {self.code}: {self.message}"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RpcFault):
            return NotImplemented
        return (self.code, self.message) == (other.code, other.message)

    def __hash__(self) -> int:
        return hash((self.code, self.message))


class ConfigError(ValueError):
    """Bad configuration or grid-mapfile content."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line

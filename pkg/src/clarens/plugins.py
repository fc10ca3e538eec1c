"""Service plugin table: service name -> implementation id -> factory.

A factory takes the running server and returns the service object whose
``@exposed`` methods become ``<service>.<method>`` RPC calls.
"""

from __future__ import annotations

from typing import Any, Callable

Factory = Callable[[Any], Any]

_PLUGINS: dict[str, dict[str, Factory]] = {}
_loaded = False


def register_plugin(service: str, impl_id: str = "builtin") -> Callable[[Factory], Factory]:
    def deco(factory: Factory) -> Factory:
        _PLUGINS.setdefault(service, {})[impl_id] = factory
        return factory

    return deco


def plugins() -> dict[str, dict[str, Factory]]:
    global _loaded
    if not _loaded:
        _loaded = True
        import clarens.services  # noqa: F401  (registers the built-in services)
    return _PLUGINS


def resolve(service: str, impl_id: str) -> Factory | None:
    return plugins().get(service, {}).get(impl_id)


def exposed(fn: Callable | None = None, *, needs_mapping: bool = False):
    """Mark a service method as callable over RPC.  It receives ``ctx`` first.

    ``needs_mapping`` methods act as a local account, so callers without a
    grid-mapfile entry are refused (fault 101) before the ACL is consulted.
    """

    def mark(f: Callable) -> Callable:
        f.__rpc_exposed__ = True
        f.__rpc_needs_mapping__ = needs_mapping
        return f

    return mark(fn) if fn is not None else mark

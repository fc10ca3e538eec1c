"""Built-in RPC services.

Each class is a thin adapter: it checks parameter types, calls into the
module that owns the behaviour, and converts results to RPC values.  The
``@register_plugin`` lines are the service.<name>=<impl> bindings that a
config file can select.
"""

from __future__ import annotations

from typing import Any

from clarens.acl import AclEntry
from clarens.errors import FaultCode, RpcFault
from clarens.gateway import CallContext
from clarens.metrics import LinkMetric
from clarens.plugins import exposed, register_plugin
from clarens.registry import ServiceRecord
from clarens.rpc.values import wire_size
from clarens.workspace.df import disk_usage
from clarens.workspace.shell import needs_raw_grant


def _bad(msg: str) -> RpcFault:
    return RpcFault(FaultCode.BAD_PARAMS, msg)


def _str(value: Any, name: str) -> str:
    if not isinstance(value, str):
        raise _bad(f"{name} must be a string")
    return value


def _int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _bad(f"{name} must be an integer")
    return value


def _bool(value: Any, name: str) -> bool:
    if not isinstance(value, bool):
        raise _bad(f"{name} must be a boolean")
    return value


def _size(value: Any, name: str) -> int:
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return _int(value, name)


def _str_map(value: Any, name: str) -> dict[str, str]:
    if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
        raise _bad(f"{name} must be a struct of strings")
    return value


def _str_list(value: Any, name: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise _bad(f"{name} must be an array of strings")
    return value


@register_plugin("system")
class SystemService:
    def __init__(self, server):
        self.server = server

    @exposed
    def list_methods(self, ctx: CallContext) -> list[str]:
        return self.server.gateway.list_methods()

    @exposed
    def whoami(self, ctx: CallContext) -> dict:
        return ctx.principal.as_struct()

    @exposed
    def acl_add(self, ctx: CallContext, entry: Any, index: Any = None) -> int:
        pos = None if index is None else _int(index, "index")
        return self.server.acl.add(AclEntry.from_struct(entry), pos)

    @exposed
    def acl_remove(self, ctx: CallContext, index: Any) -> dict:
        return self.server.acl.remove(_int(index, "index")).as_struct()

    @exposed
    def acl_list(self, ctx: CallContext) -> list[dict]:
        return [e.as_struct() for e in self.server.acl.entries()]


@register_plugin("echo")
class EchoService:
    def __init__(self, server):
        pass

    @exposed
    def echo(self, ctx: CallContext, value: Any) -> Any:
        return value


@register_plugin("group")
class GroupService:
    def __init__(self, server):
        self.acl = server.acl

    @exposed
    def create(self, ctx: CallContext, name: Any) -> bool:
        self.acl.group_create(_str(name, "name"))
        return True

    @exposed
    def delete(self, ctx: CallContext, name: Any) -> bool:
        self.acl.group_delete(_str(name, "name"))
        return True

    @exposed
    def add(self, ctx: CallContext, name: Any, dn: Any) -> bool:
        return self.acl.group_add(_str(name, "name"), _str(dn, "dn"))

    @exposed
    def remove(self, ctx: CallContext, name: Any, dn: Any) -> bool:
        return self.acl.group_remove(_str(name, "name"), _str(dn, "dn"))

    @exposed
    def list(self, ctx: CallContext) -> list[dict]:
        return [{"name": n, "members": m} for n, m in self.acl.groups().items()]


@register_plugin("discovery")
class DiscoveryService:
    def __init__(self, server):
        self.registry = server.registry

    @exposed
    def register(self, ctx: CallContext, record: Any) -> bool:
        self.registry.register(ServiceRecord.from_struct(record))
        return True

    @exposed
    def deregister(self, ctx: CallContext, name: Any, host_url: Any) -> bool:
        return self.registry.deregister(_str(name, "name"), _str(host_url, "host_url"))

    @exposed
    def find(self, ctx: CallContext, pattern: Any = "*", attrs: Any = None) -> list[dict]:
        found = self.registry.find(_str(pattern, "pattern"), _str_map(attrs or {}, "attrs"))
        return [r.as_struct() for r in found]

    @exposed
    def find_server(self, ctx: CallContext, pattern: Any = "*", attrs: Any = None) -> list[str]:
        return self.registry.find_server(_str(pattern, "pattern"), _str_map(attrs or {}, "attrs"))


@register_plugin("metrics")
class MetricsService:
    def __init__(self, server):
        self.store = server.metrics

    @exposed
    def report(self, ctx: CallContext, sample: Any) -> bool:
        self.store.report(LinkMetric.from_struct(sample))
        return True

    @exposed
    def query(self, ctx: CallContext, src: Any, dst: Any) -> dict:
        """The latest sample for src->dst, or an empty struct when there is none."""
        sample = self.store.query(_str(src, "src"), _str(dst, "dst"))
        return {} if sample is None else sample.as_struct()


@register_plugin("catalog")
class CatalogService:
    def __init__(self, server):
        self.catalog = server.catalog

    @exposed
    def lookup(self, ctx: CallContext, lfn: Any) -> list[dict]:
        return self.catalog.lookup(_str(lfn, "lfn"))

    @exposed
    def add(self, ctx: CallContext, lfn: Any, pfn: Any, size: Any) -> bool:
        self.catalog.add(_str(lfn, "lfn"), _str(pfn, "pfn"), _size(size, "size"))
        return True

    @exposed
    def remove(self, ctx: CallContext, pfn: Any) -> bool:
        return self.catalog.remove(_str(pfn, "pfn"))


@register_plugin("dls")
class DlsService:
    def __init__(self, server):
        self.dls = server.dls

    @exposed
    def locate(self, ctx: CallContext, lfn: Any, page: Any = 0, page_size: Any = 10, client_host: Any = None) -> dict:
        client = ctx.client_addr if client_host is None else _str(client_host, "client_host")
        return self.dls.locate(_str(lfn, "lfn"), client, _int(page, "page"), _int(page_size, "page_size"))

    @exposed
    def record_access(self, ctx: CallContext, pfn: Any, success: Any) -> dict:
        return self.dls.record_access(_str(pfn, "pfn"), _bool(success, "success")).as_struct()


@register_plugin("shell", "builtin")
@register_plugin("shell", "same-user")
@register_plugin("shell", "setuid-helper")
class ShellService:
    def __init__(self, server):
        self.shell = server.shell

    def _job(self, ctx: CallContext, job_id: Any):
        return self.shell.authorize(_str(job_id, "id"), ctx.principal.dn, ctx.allowed("shell.admin"))

    @exposed(needs_mapping=True)
    def cmd(self, ctx: CallContext, command: Any, argv: Any = None) -> str:
        command = _str(command, "command")
        argv = _str_list([] if argv is None else argv, "argv")
        if needs_raw_grant(command) and not ctx.allowed("shell.raw"):
            raise RpcFault(FaultCode.ACCESS_DENIED, f"running {command!r} requires the shell.raw grant")
        return self.shell.submit(ctx.principal.dn, ctx.principal.local_user, command, argv)

    @exposed(needs_mapping=True)
    def cmd_info(self, ctx: CallContext, job_id: Any) -> dict:
        job = self._job(ctx, job_id)
        return self.shell.info(job.id)

    @exposed(needs_mapping=True)
    def cmd_kill(self, ctx: CallContext, job_id: Any) -> bool:
        job = self._job(ctx, job_id)
        return self.shell.kill(job.id)


@register_plugin("file")
class FileRpcService:
    def __init__(self, server):
        self.files = server.files

    @exposed(needs_mapping=True)
    def ls(self, ctx: CallContext, path: Any = "") -> list[dict]:
        return [e.as_struct() for e in self.files.ls(ctx.principal.local_user, _str(path, "path"))]

    @exposed(needs_mapping=True)
    def get(self, ctx: CallContext, path: Any, offset: Any = 0, length: Any = 1 << 20) -> bytes:
        return self.files.get(ctx.principal.local_user, _str(path, "path"), _int(offset, "offset"), _int(length, "length"))

    @exposed(needs_mapping=True)
    def put(self, ctx: CallContext, path: Any, data: Any, append: Any = False) -> int:
        if not isinstance(data, bytes):
            raise _bad("data must be base64 bytes")
        return self.files.put(ctx.principal.local_user, _str(path, "path"), data, _bool(append, "append"))


@register_plugin("df")
class DfService:
    def __init__(self, server):
        pass

    @exposed
    def df(self, ctx: CallContext) -> dict:
        mounts = disk_usage()
        return {
            mount: {"filesystem": info["filesystem"], "total_B": wire_size(info["total_B"]), "free_B": wire_size(info["free_B"])}
            for mount, info in mounts.items()
        }

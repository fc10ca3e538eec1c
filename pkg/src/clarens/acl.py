"""Access control lists and user groups.

An ACL is an ordered list of entries.  The first entry whose pattern matches
the method and whose subject matches the caller decides; if nothing
matches, access is denied.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Mapping

from clarens.auth import Principal
from clarens.errors import FaultCode, RpcFault
from clarens.journal import Journal
from clarens.matching import glob_match

# Always callable, so a fresh server can be introspected before any ACL exists.
BOOTSTRAP_METHODS = frozenset({"system.list_methods", "echo.echo"})

SUBJECT_KINDS = ("dn", "group", "anonymous")


@dataclass(frozen=True)
class AclEntry:
    pattern: str
    kind: str
    subject: str = ""
    allow: bool = True

    def __post_init__(self):
        if not self.pattern:
            raise ValueError("ACL pattern must be non-empty")
        if self.kind not in SUBJECT_KINDS:
            raise ValueError(f"unknown subject kind {self.kind!r}")
        if self.kind == "anonymous" and self.subject:
            raise ValueError("anonymous entries take no subject")
        if self.kind != "anonymous" and not self.subject:
            raise ValueError(f"{self.kind} entries need a subject")

    @classmethod
    def from_struct(cls, data: object) -> "AclEntry":
        """Build from the wire form ``{pattern, allow, dn|group|anonymous}``."""
        if not isinstance(data, dict):
            raise RpcFault(FaultCode.BAD_PARAMS, "ACL entry must be a struct")
        unknown = set(data) - {"pattern", "allow", *SUBJECT_KINDS}
        if unknown:
            raise RpcFault(FaultCode.BAD_PARAMS, f"unknown ACL entry fields {sorted(unknown)}")
        kinds = [k for k in SUBJECT_KINDS if k in data]
        if len(kinds) != 1:
            raise RpcFault(FaultCode.BAD_PARAMS, "ACL entry needs exactly one of dn, group, anonymous")
        kind = kinds[0]
        pattern, allow = data.get("pattern"), data.get("allow", True)
        if not isinstance(pattern, str) or not isinstance(allow, bool):
            raise RpcFault(FaultCode.BAD_PARAMS, "pattern must be a string and allow a boolean")
        if kind == "anonymous":
            if data["anonymous"] is not True:
                raise RpcFault(FaultCode.BAD_PARAMS, "anonymous must be true")
            subject = ""
        else:
            subject = data[kind]
            if not isinstance(subject, str):
                raise RpcFault(FaultCode.BAD_PARAMS, f"{kind} must be a string")
        try:
            return cls(pattern, kind, subject, allow)
        except ValueError as exc:
            raise RpcFault(FaultCode.BAD_PARAMS, str(exc)) from None

    def as_struct(self) -> dict:
        out: dict = {"pattern": self.pattern, "allow": self.allow}
        out[self.kind] = True if self.kind == "anonymous" else self.subject
        return out

    def subject_matches(self, principal: Principal, groups: Mapping[str, Iterable[str]]) -> bool:
        if self.kind == "anonymous":
            return principal.anonymous
        if principal.anonymous:
            return False
        if self.kind == "dn":
            return principal.dn == self.subject
        members = groups.get(self.subject)
        return members is not None and principal.dn in members


def check(principal: Principal, method: str, acl: Iterable[AclEntry], groups: Mapping[str, Iterable[str]]) -> bool:
    if method in BOOTSTRAP_METHODS:
        return True
    for entry in acl:
        if glob_match(entry.pattern, method) and entry.subject_matches(principal, groups):
            return entry.allow
    return False


class AclStore:
    """Thread-safe ACL and group state, optionally journaled.

    ``seed`` entries come from configuration and are laid down before the
    journal is replayed; only RPC-driven mutations are journaled.
    """

    def __init__(self, seed: Iterable[AclEntry] = (), journal: Journal | None = None):
        self._lock = threading.RLock()
        self._acl: list[AclEntry] = list(seed)
        self._groups: dict[str, set[str]] = {}
        self._journal = journal or Journal(None)
        self._replay()

    def _replay(self) -> None:
        kinds = ("acl_add", "acl_remove", "group_create", "group_delete", "group_add", "group_remove")
        for rec in self._journal.replay(*kinds):
            try:
                kind = rec["kind"]
                if kind == "acl_add":
                    self._add(AclEntry.from_struct(rec["entry"]), rec.get("index"))
                elif kind == "acl_remove":
                    self._remove(rec["index"])
                elif kind == "group_create":
                    self._group_create(rec["name"])
                elif kind == "group_delete":
                    self._group_delete(rec["name"])
                elif kind == "group_add":
                    self._group_add(rec["name"], rec["dn"])
                else:
                    self._group_remove(rec["name"], rec["dn"])
            except (RpcFault, KeyError):
                continue

    # -- evaluation --

    def check(self, principal: Principal, method: str) -> bool:
        with self._lock:
            return check(principal, method, self._acl, self._groups)

    # -- ACL mutation --

    def _add(self, entry: AclEntry, index: int | None) -> int:
        if index is None:
            self._acl.append(entry)
            return len(self._acl) - 1
        if not 0 <= index <= len(self._acl):
            raise RpcFault(FaultCode.NOT_FOUND, f"no ACL position {index}")
        self._acl.insert(index, entry)
        return index

    def add(self, entry: AclEntry, index: int | None = None) -> int:
        with self._lock:
            pos = self._add(entry, index)
            self._journal.append("acl_add", entry=entry.as_struct(), index=index)
            return pos

    def _remove(self, index: int) -> AclEntry:
        if not 0 <= index < len(self._acl):
            raise RpcFault(FaultCode.NOT_FOUND, f"no ACL entry at index {index}")
        return self._acl.pop(index)

    def remove(self, index: int) -> AclEntry:
        with self._lock:
            entry = self._remove(index)
            self._journal.append("acl_remove", index=index)
            return entry

    def entries(self) -> list[AclEntry]:
        with self._lock:
            return list(self._acl)

    # -- groups --

    def _group_create(self, name: str) -> None:
        if not name:
            raise RpcFault(FaultCode.BAD_PARAMS, "group name must be non-empty")
        if name in self._groups:
            raise RpcFault(FaultCode.CONFLICT, f"group {name!r} already exists")
        self._groups[name] = set()

    def _members(self, name: str) -> set[str]:
        try:
            return self._groups[name]
        except KeyError:
            raise RpcFault(FaultCode.NOT_FOUND, f"no group {name!r}") from None

    def _group_delete(self, name: str) -> None:
        self._members(name)
        del self._groups[name]

    def _group_add(self, name: str, dn: str) -> bool:
        members = self._members(name)
        if dn in members:
            return False
        members.add(dn)
        return True

    def _group_remove(self, name: str, dn: str) -> bool:
        members = self._members(name)
        if dn not in members:
            return False
        members.discard(dn)
        return True

    def group_create(self, name: str) -> None:
        with self._lock:
            self._group_create(name)
            self._journal.append("group_create", name=name)

    def group_delete(self, name: str) -> None:
        with self._lock:
            self._group_delete(name)
            self._journal.append("group_delete", name=name)

    def group_add(self, name: str, dn: str) -> bool:
        with self._lock:
            changed = self._group_add(name, dn)
            if changed:
                self._journal.append("group_add", name=name, dn=dn)
            return changed

    def group_remove(self, name: str, dn: str) -> bool:
        with self._lock:
            changed = self._group_remove(name, dn)
            if changed:
                self._journal.append("group_remove", name=name, dn=dn)
            return changed

    def groups(self) -> dict[str, list[str]]:
        with self._lock:
            return {name: sorted(members) for name, members in sorted(self._groups.items())}

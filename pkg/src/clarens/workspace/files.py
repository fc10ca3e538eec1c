"""Per-user file jail: browse, download and upload below ``<file_root>/<local_user>``.

Job sandboxes owned by the user appear read-only at ``jobs/<id>/``.  A path
is accepted only if, after lexical normalisation and full symlink
resolution, it still lies under the directory it was resolved against.
"""

from __future__ import annotations

import os
import stat
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from clarens.errors import FaultCode, RpcFault
from clarens.rpc.values import wire_size
from clarens.workspace.shell import Shell

MAX_CHUNK = 1 << 20
JOBS_DIR = "jobs"


def _denied(path: str) -> RpcFault:
    return RpcFault(FaultCode.ACCESS_DENIED, f"path {path!r} escapes the jail")


def _within(path: str, root: str) -> bool:
    return path == root or path.startswith(root.rstrip(os.sep) + os.sep)


def split_jail_path(path: str) -> list[str]:
    """Lexically normalise a client path into components; '..' may not climb above the root."""
    if not isinstance(path, str):
        raise RpcFault(FaultCode.BAD_PARAMS, "path must be a string")
    if "\x00" in path or path.startswith("/"):
        raise _denied(path)
    parts: list[str] = []
    for part in PurePosixPath(path).parts:
        if part in ("", "."):
            continue
        if part == "..":
            if not parts:
                raise _denied(path)
            parts.pop()
            continue
        parts.append(part)
    return parts


@dataclass(frozen=True)
class Resolved:
    real: Path
    read_only: bool
    # The virtual "jobs" directory listing (no real path behind it).
    jobs_listing: bool = False


@dataclass(frozen=True)
class FileEntry:
    name: str
    is_dir: bool
    size_B: int
    mtime: float

    def as_struct(self) -> dict:
        return {"name": self.name, "is_dir": self.is_dir, "size_B": wire_size(self.size_B), "mtime": float(self.mtime)}


class FileService:
    def __init__(self, file_root: str | os.PathLike, shell: Shell | None = None):
        self.file_root = Path(file_root)
        self.file_root.mkdir(parents=True, exist_ok=True)
        self.shell = shell

    def jail_root(self, local_user: str | None) -> Path:
        if not local_user:
            raise RpcFault(FaultCode.AUTH_FAILED, "caller is not mapped to a local account")
        if local_user in (".", "..") or "/" in local_user or "\x00" in local_user:
            raise RpcFault(FaultCode.ACCESS_DENIED, f"unusable local account name {local_user!r}")
        root = self.file_root / local_user
        root.mkdir(parents=True, exist_ok=True)
        return Path(os.path.realpath(root))

    def resolve(self, local_user: str | None, path: str) -> Resolved:
        root = self.jail_root(local_user)
        parts = split_jail_path(path)
        if parts and parts[0] == JOBS_DIR and self.shell is not None:
            if len(parts) == 1:
                return Resolved(root, read_only=True, jobs_listing=True)
            job_id, rest = parts[1], parts[2:]
            try:
                job = self.shell.get(job_id)
            except RpcFault:
                raise RpcFault(FaultCode.NOT_FOUND, f"no such file {path!r}") from None
            if job.local_user != local_user:
                raise RpcFault(FaultCode.NOT_FOUND, f"no such file {path!r}")
            base, read_only = Path(os.path.realpath(job.sandbox)), True
        else:
            base, rest, read_only = root, parts, False
        real = os.path.realpath(base.joinpath(*rest))
        if not _within(real, str(base)):
            raise _denied(path)
        return Resolved(Path(real), read_only)

    def ls(self, local_user: str | None, path: str = "") -> list[FileEntry]:
        res = self.resolve(local_user, path)
        if res.jobs_listing:
            entries = []
            for job in self.shell.owned_by_user(local_user):
                try:
                    st = os.stat(job.sandbox)
                except FileNotFoundError:
                    continue
                entries.append(FileEntry(job.id, True, 0, st.st_mtime))
            return entries
        try:
            st = os.stat(res.real)
        except FileNotFoundError:
            raise RpcFault(FaultCode.NOT_FOUND, f"no such file {path!r}") from None
        if not stat.S_ISDIR(st.st_mode):
            raise RpcFault(FaultCode.BAD_PARAMS, f"{path!r} is not a directory")
        entries = []
        with os.scandir(res.real) as it:
            for de in it:
                st = de.stat(follow_symlinks=False)
                is_dir = stat.S_ISDIR(st.st_mode)
                entries.append(FileEntry(de.name, is_dir, 0 if is_dir else st.st_size, st.st_mtime))
        is_root = not split_jail_path(path)
        if is_root and self.shell is not None and not any(e.name == JOBS_DIR for e in entries):
            entries.append(FileEntry(JOBS_DIR, True, 0, 0.0))
        return sorted(entries, key=lambda e: e.name)

    def get(self, local_user: str | None, path: str, offset: int, length: int) -> bytes:
        if offset < 0 or length < 0 or length > MAX_CHUNK:
            raise RpcFault(FaultCode.BAD_PARAMS, f"need offset >= 0 and 0 <= length <= {MAX_CHUNK}")
        res = self.resolve(local_user, path)
        if res.jobs_listing:
            raise RpcFault(FaultCode.BAD_PARAMS, f"{path!r} is a directory")
        try:
            fd = os.open(res.real, os.O_RDONLY | os.O_NOFOLLOW)
        except FileNotFoundError:
            raise RpcFault(FaultCode.NOT_FOUND, f"no such file {path!r}") from None
        except OSError as exc:
            raise RpcFault(FaultCode.ACCESS_DENIED, f"cannot open {path!r}: {exc.strerror}") from None
        try:
            if not stat.S_ISREG(os.fstat(fd).st_mode):
                raise RpcFault(FaultCode.BAD_PARAMS, f"{path!r} is not a regular file")
            return os.pread(fd, length, offset)
        finally:
            os.close(fd)

    def put(self, local_user: str | None, path: str, data: bytes, append: bool = False) -> int:
        res = self.resolve(local_user, path)
        if res.read_only:
            raise RpcFault(FaultCode.ACCESS_DENIED, f"{path!r} is read-only")
        root = str(self.jail_root(local_user))
        if str(res.real) == root:
            raise RpcFault(FaultCode.CONFLICT, f"{path!r} is a directory")
        parent = res.real.parent
        parent.mkdir(parents=True, exist_ok=True)
        if not _within(os.path.realpath(parent), root):
            raise _denied(path)
        flags = os.O_WRONLY | os.O_CREAT | os.O_NOFOLLOW | (os.O_APPEND if append else os.O_TRUNC)
        try:
            fd = os.open(res.real, flags, 0o644)
        except IsADirectoryError:
            raise RpcFault(FaultCode.CONFLICT, f"{path!r} is a directory") from None
        except OSError as exc:
            raise RpcFault(FaultCode.ACCESS_DENIED, f"cannot write {path!r}: {exc.strerror}") from None
        try:
            view = memoryview(data)
            while view:
                n = os.write(fd, view)
                view = view[n:]
        finally:
            os.close(fd)
        return len(data)

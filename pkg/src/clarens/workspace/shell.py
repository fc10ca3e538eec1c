"""Asynchronous command execution in per-job sandbox directories.

A job is ``QUEUED`` until its process starts, ``RUNNING`` while it lives,
and ends ``FINISHED`` (exit 0), ``FAILED`` (non-zero exit, or the command
could not be started) or ``KILLED``.  Standard output and error go to
``<sandbox_root>/<id>/stdout`` and ``stderr``.
"""

from __future__ import annotations

import enum
import logging
import os
import pwd
import secrets
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from clarens.errors import FaultCode, RpcFault
from clarens.journal import Journal

log = logging.getLogger(__name__)

# Commands that reinterpret their arguments as shell code; they need the
# extra "shell.raw" grant.
SHELL_INTERPRETERS = frozenset({"sh", "bash", "dash", "ash", "zsh", "ksh", "csh", "tcsh", "fish", "busybox"})

# Exit code reported when the command itself could not be executed.
EXIT_NOT_EXECUTABLE = 127


class JobState(str, enum.Enum):
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"
    FINISHED = "FINISHED"
    FAILED = "FAILED"
    KILLED = "KILLED"

    @property
    def terminal(self) -> bool:
        return self in (JobState.FINISHED, JobState.FAILED, JobState.KILLED)


def is_privileged(user: str, denylist: Iterable[str] = ()) -> bool:
    """True for root, anything with uid 0, and denylisted account names."""
    if user == "root" or user in set(denylist):
        return True
    try:
        return pwd.getpwnam(user).pw_uid == 0
    except KeyError:
        return False


def refuse_privileged(user: str, denylist: Iterable[str] = ()) -> None:
    if is_privileged(user, denylist):
        raise RpcFault(FaultCode.ACCESS_DENIED, f"refusing to run commands as privileged user {user!r}")


def needs_raw_grant(command: str) -> bool:
    return os.path.basename(command) in SHELL_INTERPRETERS


@dataclass
class CommandResult:
    exit_code: int
    stdout: bytes
    stderr: bytes


def run_command(argv: Sequence[str], timeout: float = 30.0, cwd: str | os.PathLike | None = None) -> CommandResult:
    """Run a command to completion and capture its output.

    The building block for services that wrap a command-line tool.  A missing
    binary or a timeout becomes fault 400.
    """
    try:
        proc = subprocess.run(list(argv), cwd=cwd, stdin=subprocess.DEVNULL, capture_output=True, timeout=timeout)
    except FileNotFoundError:
        raise RpcFault(FaultCode.INTERNAL, f"command {argv[0]!r} is not available") from None
    except subprocess.TimeoutExpired:
        raise RpcFault(FaultCode.INTERNAL, f"command {argv[0]!r} timed out after {timeout}s") from None
    return CommandResult(proc.returncode, proc.stdout, proc.stderr)


# --- executors --------------------------------------------------------------


class SameUserExecutor:
    """Runs commands under the server's own account; local_user is recorded only."""

    mode = "same-user"

    def __init__(self, denylist: Iterable[str] = ()):
        self.denylist = tuple(denylist)

    def argv_for(self, local_user: str, command: str, argv: Sequence[str]) -> list[str]:
        refuse_privileged(local_user, self.denylist)
        return [command, *argv]

    def prepare(self, sandbox: Path, local_user: str) -> None:
        pass


class SetuidHelperExecutor:
    """Delegates the uid switch to an external helper that applies the same refusals."""

    mode = "setuid-helper"

    def __init__(self, helper: Sequence[str] | None = None, denylist: Iterable[str] = ()):
        self.helper = list(helper) if helper else [sys.executable, "-m", "clarens.workspace.suexec"]
        self.denylist = tuple(denylist)

    def argv_for(self, local_user: str, command: str, argv: Sequence[str]) -> list[str]:
        refuse_privileged(local_user, self.denylist)
        deny = ["--deny", ",".join(self.denylist)] if self.denylist else []
        return [*self.helper, *deny, local_user, "--", command, *argv]

    def prepare(self, sandbox: Path, local_user: str) -> None:
        """Hand the sandbox to the target account so the command can write into it."""
        if os.geteuid() != 0:
            return
        try:
            pw = pwd.getpwnam(local_user)
        except KeyError:
            return
        for path in (sandbox, sandbox / "stdout", sandbox / "stderr"):
            os.chown(path, pw.pw_uid, pw.pw_gid)


# --- jobs ---------------------------------------------------------------------


def new_job_id() -> str:
    return secrets.token_hex(8)


@dataclass
class CommandJob:
    id: str
    command: str
    argv: list[str]
    local_user: str
    owner_dn: str
    sandbox: Path
    state: JobState = JobState.QUEUED
    pid: int | None = None
    exit_code: int | None = None
    submitted_at: float = field(default_factory=time.time)
    started_at: float | None = None
    ended_at: float | None = None
    executor: str = SameUserExecutor.mode

    def as_struct(self) -> dict:
        out = {
            "id": self.id,
            "command": self.command,
            "argv": list(self.argv),
            "local_user": self.local_user,
            "state": self.state.value,
            "sandbox": str(self.sandbox),
            "submitted_at": float(self.submitted_at),
            "executor": self.executor,
        }
        for name in ("pid", "exit_code"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        for name in ("started_at", "ended_at"):
            value = getattr(self, name)
            if value is not None:
                out[name] = float(value)
        return out

    def snapshot(self) -> dict:
        data = self.as_struct()
        data["owner_dn"] = self.owner_dn
        return data


class _Runtime:
    """Process handle and synchronisation for a live job."""

    def __init__(self):
        self.proc: subprocess.Popen | None = None
        self.kill_requested = False
        self.done = threading.Event()


class Shell:
    def __init__(self, sandbox_root: str | os.PathLike, executor=None, journal: Journal | None = None):
        self.sandbox_root = Path(sandbox_root)
        self.sandbox_root.mkdir(parents=True, exist_ok=True)
        self.executor = executor or SameUserExecutor()
        self._journal = journal or Journal(None)
        self._lock = threading.Lock()
        self._jobs: dict[str, CommandJob] = {}
        self._runtime: dict[str, _Runtime] = {}
        self._replay()

    def _replay(self) -> None:
        latest: dict[str, dict] = {}
        for rec in self._journal.replay("job"):
            if isinstance(rec.get("id"), str):
                latest[rec["id"]] = rec
        for job_id, rec in latest.items():
            try:
                job = CommandJob(
                    id=job_id,
                    command=rec["command"],
                    argv=list(rec["argv"]),
                    local_user=rec["local_user"],
                    owner_dn=rec["owner_dn"],
                    sandbox=Path(rec["sandbox"]),
                    state=JobState(rec["state"]),
                    pid=rec.get("pid"),
                    exit_code=rec.get("exit_code"),
                    submitted_at=rec.get("submitted_at", 0.0),
                    started_at=rec.get("started_at"),
                    ended_at=rec.get("ended_at"),
                    executor=rec.get("executor", SameUserExecutor.mode),
                )
            except (KeyError, ValueError, TypeError):
                continue
            if not job.state.terminal:
                # The process did not survive the restart.
                job.state, job.exit_code, job.ended_at = JobState.KILLED, None, time.time()
            rt = _Runtime()
            rt.done.set()
            self._jobs[job_id] = job
            self._runtime[job_id] = rt

    def _record(self, job: CommandJob) -> None:
        self._journal.append("job", **job.snapshot())

    def allocate_sandbox(self) -> tuple[str, Path]:
        """Create a fresh, empty sandbox directory under a new unique id."""
        while True:
            job_id = new_job_id()
            path = self.sandbox_root / job_id
            with self._lock:
                if job_id in self._jobs:
                    continue
            try:
                path.mkdir(mode=0o755)
            except FileExistsError:
                continue
            return job_id, path

    def submit(self, owner_dn: str, local_user: str | None, command: str, argv: Sequence[str]) -> str:
        if not local_user:
            raise RpcFault(FaultCode.AUTH_FAILED, "caller is not mapped to a local account")
        if not isinstance(command, str) or not command:
            raise RpcFault(FaultCode.BAD_PARAMS, "command must be a non-empty string")
        if not all(isinstance(a, str) for a in argv):
            raise RpcFault(FaultCode.BAD_PARAMS, "argv must be a list of strings")
        full_argv = self.executor.argv_for(local_user, command, argv)
        try:
            job_id, sandbox = self.allocate_sandbox()
            for name in ("stdout", "stderr"):
                (sandbox / name).touch()
            self.executor.prepare(sandbox, local_user)
        except OSError as exc:
            raise RpcFault(FaultCode.INTERNAL, f"cannot create sandbox: {exc}") from None
        job = CommandJob(job_id, command, list(argv), local_user, owner_dn, sandbox, executor=self.executor.mode)
        rt = _Runtime()
        with self._lock:
            self._jobs[job_id] = job
            self._runtime[job_id] = rt
            self._record(job)
        threading.Thread(target=self._run, args=(job, rt, full_argv), name=f"job-{job_id}", daemon=True).start()
        return job_id

    def _run(self, job: CommandJob, rt: _Runtime, full_argv: list[str]) -> None:
        try:
            with open(job.sandbox / "stdout", "ab") as out, open(job.sandbox / "stderr", "ab") as err:
                with self._lock:
                    if rt.kill_requested:
                        return
                    try:
                        rt.proc = subprocess.Popen(
                            full_argv,
                            cwd=job.sandbox,
                            stdin=subprocess.DEVNULL,
                            stdout=out,
                            stderr=err,
                            start_new_session=True,
                            close_fds=True,
                        )
                    except OSError as exc:
                        err.write(f"cannot execute {job.command!r}: {exc.strerror or exc}\n".encode())
                        err.flush()
                        job.started_at = job.ended_at = time.time()
                        job.state, job.exit_code = JobState.FAILED, EXIT_NOT_EXECUTABLE
                        self._record(job)
                        return
                    job.pid = rt.proc.pid
                    job.started_at = time.time()
                    job.state = JobState.RUNNING
                    self._record(job)
                code = rt.proc.wait()
            with self._lock:
                job.ended_at = time.time()
                if rt.kill_requested:
                    job.state = JobState.KILLED
                else:
                    job.exit_code = code if code >= 0 else 128 - code
                    job.state = JobState.FINISHED if code == 0 else JobState.FAILED
                self._record(job)
        except Exception:
            log.exception("job %s runner crashed", job.id)
            with self._lock:
                if not job.state.terminal:
                    job.ended_at = time.time()
                    job.state, job.exit_code = JobState.FAILED, EXIT_NOT_EXECUTABLE
                    self._record(job)
        finally:
            rt.done.set()

    def get(self, job_id: str) -> CommandJob:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise RpcFault(FaultCode.NOT_FOUND, f"no job {job_id!r}")
        return job

    def authorize(self, job_id: str, dn: str, is_admin: bool) -> CommandJob:
        job = self.get(job_id)
        if job.owner_dn != dn and not is_admin:
            raise RpcFault(FaultCode.ACCESS_DENIED, f"job {job_id} belongs to another user")
        return job

    def info(self, job_id: str) -> dict:
        job = self.get(job_id)
        with self._lock:
            return job.as_struct()

    def kill(self, job_id: str, timeout: float = 10.0) -> bool:
        job = self.get(job_id)
        with self._lock:
            rt = self._runtime[job_id]
            if job.state.terminal or rt.kill_requested:
                return False
            rt.kill_requested = True
            if rt.proc is None:
                job.state, job.ended_at = JobState.KILLED, time.time()
                self._record(job)
                rt.done.set()
                return True
            try:
                os.killpg(rt.proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
        rt.done.wait(timeout)
        return True

    def wait(self, job_id: str, timeout: float | None = None) -> dict:
        """Block until the job is terminal (test and CLI convenience)."""
        self.get(job_id)
        with self._lock:
            rt = self._runtime[job_id]
        rt.done.wait(timeout)
        return self.info(job_id)

    def owned_by_user(self, local_user: str) -> list[CommandJob]:
        with self._lock:
            return sorted((j for j in self._jobs.values() if j.local_user == local_user), key=lambda j: j.id)

    def shutdown(self) -> None:
        with self._lock:
            live = [jid for jid, j in self._jobs.items() if not j.state.terminal]
        for jid in live:
            self.kill(jid, timeout=2.0)

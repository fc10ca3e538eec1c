"""Disk usage by wrapping the system ``df`` command."""

from __future__ import annotations

from clarens.errors import FaultCode, RpcFault
from clarens.workspace.shell import run_command

DF_ARGV = ("df", "-P", "-k")


def parse_df(output: str) -> dict[str, dict[str, int]]:
    """Parse POSIX ``df -P -k`` output into {mount: {total_B, free_B, filesystem}}."""
    lines = output.splitlines()
    if not lines or not lines[0].startswith("Filesystem"):
        raise RpcFault(FaultCode.INTERNAL, "unexpected df output")
    mounts: dict[str, dict] = {}
    for line in lines[1:]:
        fields = line.split(None, 5)
        if len(fields) < 6:
            continue
        fs, blocks, _used, avail, _cap, mount = fields
        try:
            total, free = int(blocks) * 1024, max(int(avail), 0) * 1024
        except ValueError:
            continue
        mounts[mount] = {"filesystem": fs, "total_B": total, "free_B": min(free, total)}
    if not mounts:
        raise RpcFault(FaultCode.INTERNAL, "df reported no mounts")
    return mounts


def disk_usage() -> dict[str, dict[str, int]]:
    result = run_command(DF_ARGV, timeout=15)
    # df exits 1 when some mounts are unreadable but still prints the rest.
    if result.exit_code not in (0, 1) or not result.stdout:
        raise RpcFault(FaultCode.INTERNAL, f"df failed: {result.stderr.decode(errors='replace').strip()}")
    return parse_df(result.stdout.decode("utf-8", errors="replace"))

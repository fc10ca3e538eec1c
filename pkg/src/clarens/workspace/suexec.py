"""suexec-style helper: switch to a mapped local account, then exec the command.

    python -m clarens.workspace.suexec [--deny a,b] USER -- COMMAND [ARG...]

Refuses root, any uid-0 account and denylisted names.  Without root
privileges it can only "switch" to the account it already runs as.
"""

from __future__ import annotations

import argparse
import os
import pwd
import sys

from clarens.workspace.shell import EXIT_NOT_EXECUTABLE, is_privileged

EXIT_REFUSED = 126


def _fail(msg: str, code: int = EXIT_REFUSED) -> int:
    print(f"suexec: {msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="suexec")
    parser.add_argument("--deny", default="", help="comma-separated privileged account names")
    parser.add_argument("user")
    parser.add_argument("command", nargs=argparse.REMAINDER)
    args = parser.parse_args(argv)
    command = args.command
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        return _fail("no command given")
    denylist = [d for d in args.deny.split(",") if d]
    if is_privileged(args.user, denylist):
        return _fail(f"refusing to run as privileged user {args.user!r}")
    try:
        pw = pwd.getpwnam(args.user)
    except KeyError:
        return _fail(f"unknown user {args.user!r}")
    if os.geteuid() == 0:
        os.setgroups([])
        os.initgroups(pw.pw_name, pw.pw_gid)
        os.setgid(pw.pw_gid)
        os.setuid(pw.pw_uid)
    elif pw.pw_uid != os.geteuid():
        return _fail(f"cannot switch to {args.user!r} without privileges")
    os.environ.update(USER=pw.pw_name, LOGNAME=pw.pw_name, HOME=pw.pw_dir)
    try:
        os.execvp(command[0], command)
    except OSError as exc:
        return _fail(f"cannot execute {command[0]!r}: {exc.strerror}", EXIT_NOT_EXECUTABLE)
    return EXIT_NOT_EXECUTABLE  # unreachable


if __name__ == "__main__":
    sys.exit(main())

"""'*'-only glob matching shared by ACL patterns and discovery lookups.

Only '*' is special (matches any run of characters, '.' included); every
other character, '?' and '[' among them, matches itself.
"""

from __future__ import annotations

import functools
import re


@functools.lru_cache(maxsize=1024)
def _compile(pattern: str) -> re.Pattern[str]:
    return re.compile("".join(".*" if part == "*" else re.escape(part) for part in re.split(r"(\*)", pattern)) + r"\Z", re.S)


def glob_match(pattern: str, text: str) -> bool:
    return _compile(pattern).match(text) is not None

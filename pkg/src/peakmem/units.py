"""Byte-size constants, parsing, and formatting.

Sizes are stored internally as plain integer bytes everywhere in the
package; binary suffixes (KiB/MiB/GiB) exist only at the CLI boundary
and in rendered text.
"""

from __future__ import annotations

import re

KIB = 1024
MIB = 1024 * KIB
GIB = 1024 * MIB

_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(B|KIB|MIB|GIB|KB|MB|GB)?\s*$", re.IGNORECASE)

_MULTIPLIERS = {
    None: 1,
    "B": 1,
    "KIB": KIB,
    "MIB": MIB,
    "GIB": GIB,
    # Decimal suffixes are accepted as their binary cousins: every size in
    # this domain (allocator constants, profiler totals) is binary, and
    # silently interpreting "20MB" as 20*10^6 would be a footgun.
    "KB": KIB,
    "MB": MIB,
    "GB": GIB,
}


def parse_size(text: str | int) -> int:
    """Parse a human size ('8GiB', '512', '20 MiB') into integer bytes."""
    if isinstance(text, int):
        return text
    m = _SIZE_RE.match(text)
    if not m:
        raise ValueError(f"unparseable size: {text!r}")
    value = float(m.group(1))
    suffix = m.group(2).upper() if m.group(2) else None
    result = value * _MULTIPLIERS[suffix]
    if result != int(result):
        raise ValueError(f"size is not a whole number of bytes: {text!r}")
    return int(result)


def format_size(n: int) -> str:
    """Render bytes with the largest exact-or-two-decimal binary suffix."""
    if n < 0:
        return "-" + format_size(-n)
    for unit, name in ((GIB, "GiB"), (MIB, "MiB"), (KIB, "KiB")):
        if n >= unit:
            value = n / unit
            if value == int(value):
                return f"{int(value)}{name}"
            return f"{value:.2f}{name}"
    return f"{n}B"

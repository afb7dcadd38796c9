"""Canonical text formatting: reports must be byte-identical across reruns.

Floats render with ``%.9g``.  Keys appear in a fixed order.  ``None``
renders as ``NA``.
"""

from __future__ import annotations

__all__ = ["fmt9", "fmt_value", "kv_line"]


def fmt9(x):
    return "%.9g" % float(x)


def fmt_value(v):
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt9(v)
    return str(v)


def kv_line(key, value):
    return f"{key} = {fmt_value(value)}"

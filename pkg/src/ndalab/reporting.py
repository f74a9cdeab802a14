"""Structured-text reports and small CSV writers for run directories.

A report is a sequence of ``[section]`` headers, each followed by
``key = value`` lines. Floats are written with ``repr`` so values read back
exactly and reruns produce identical bytes.
"""
from __future__ import annotations

import math

import numpy as np

from .data import atomic_write_text

RUN_LAYOUT_VERSION = 1


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, np.integer):
        return str(int(value))
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(float(value))
    if isinstance(value, (list, tuple)):
        return ",".join(fmt(v) for v in value)
    if hasattr(value, "item") and getattr(value, "ndim", 1) == 0:
        return fmt(value.item())
    return str(value)


def render_report(sections) -> str:
    """``sections`` is an iterable of (name, [(key, value), ...])."""
    chunks = []
    for name, items in sections:
        lines = [f"[{name}]"] + [f"{k} = {fmt(v)}" for k, v in items]
        chunks.append("\n".join(lines) + "\n")
    return "\n".join(chunks)


def parse_report(text: str) -> dict:
    """Inverse of :func:`render_report`; values stay strings."""
    out, current = {}, None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = out.setdefault(line[1:-1], {})
        elif current is not None and "=" in line:
            key, value = (p.strip() for p in line.split("=", 1))
            current[key] = value
    return out


def write_report(path, sections):
    atomic_write_text(path, render_report(sections))


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")

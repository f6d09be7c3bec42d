"""Atomic file writes and deterministic CSV formatting.

Floats are written with ``repr`` so values round-trip bit-exactly and
repeated runs with the same seed produce byte-identical files.
"""

import os
import tempfile

import numpy as np


def fmt_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def atomic_write_text(path, text):
    """Write via a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_csv(path, header, rows):
    lines = [",".join(str(h) for h in header)]
    for row in rows:
        lines.append(",".join(fmt_value(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")

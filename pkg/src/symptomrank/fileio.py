"""Small file helpers shared across the pipeline modules."""

from __future__ import annotations

import io
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import IO


def open_text(source: str | Path | IO) -> tuple[IO, bool]:
    """Return (text stream, whether we own it) for a path, byte stream, or text stream."""
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8"), True
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)):
        return io.TextIOWrapper(source, encoding="utf-8"), False
    return source, False


def open_write(sink: str | Path | IO) -> tuple[IO, bool]:
    if isinstance(sink, (str, Path)):
        return open(sink, "w", encoding="utf-8", newline="\n"), True
    if isinstance(sink, (io.RawIOBase, io.BufferedIOBase)):
        return io.TextIOWrapper(sink, encoding="utf-8", newline="\n"), False
    return sink, False


@contextmanager
def atomic_write(path: str | Path, mode: str = "w"):
    """Write to a temp file and rename into place, so partial outputs never land."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kwargs) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise

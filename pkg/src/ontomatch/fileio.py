"""Small file helpers: atomic writes and wall-time formatting."""

from __future__ import annotations

import os
import tempfile

from .errors import PersistFailure


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a temp file in the same directory + rename.

    Readers never observe a half-written artifact; on failure the original
    file (if any) is left untouched.
    """
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(text)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise
    except OSError as exc:
        raise PersistFailure(f"could not write {path}: {exc}") from exc


def format_wall_time(seconds: float) -> str:
    """Render elapsed seconds as HH:MM:SS, rounding to whole seconds."""
    total = int(round(seconds))
    if total < 0:
        total = 0
    hours, rem = divmod(total, 3600)
    minutes, secs = divmod(rem, 60)
    return f"{hours:02d}:{minutes:02d}:{secs:02d}"

"""Artifact writers: delimited output, JSON summaries, manifest, figures.

All writes are atomic (temp file in the target directory, then rename)
so a crashed run never leaves a half-written artifact. Floats are
formatted with repr-faithful precision, which is what makes
deterministic reruns bitwise comparable.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
import time


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def atomic_write_text(path: str, text: str) -> str:
    """Write text to path via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_bytes(path: str, payload: bytes) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path: str, rows: list, columns: list | None = None) -> str:
    """Rows of dicts to a comma-separated file with a fixed column order.

    Columns default to the keys of the first row in insertion order.
    Every row must cover every column; missing keys are a caller bug and
    raise instead of silently writing blanks.
    """
    if columns is None:
        if not rows:
            raise ValueError("cannot infer columns from zero rows")
        columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str, payload) -> str:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def sha256_of(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, config_echo: dict, artifacts: list, deterministic: bool) -> str:
    """Manifest with a content hash for every artifact in the directory.

    Deterministic runs omit the timestamp so the manifest itself can be
    compared across reruns.
    """
    entries = {}
    for path in sorted(set(artifacts)):
        entries[os.path.relpath(path, out_dir)] = sha256_of(path)
    payload = {
        "config": config_echo,
        "artifacts": entries,
        "versions": _versions(),
    }
    if not deterministic:
        payload["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    return write_json(os.path.join(out_dir, "manifest.json"), payload)


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "fsieq": __version__,
    }


# ---------------------------------------------------------------- figures


def render_figure(path: str, draw) -> str:
    """Render one figure through a callback receiving (fig, ax).

    matplotlib loads lazily with the file backend so headless runs work;
    the image is written atomically like every other artifact.
    """
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=110)
    try:
        draw(fig, ax)
        fig.tight_layout()
        import io

        buf = io.BytesIO()
        fig.savefig(buf, format="png")
        atomic_write_bytes(path, buf.getvalue())
    finally:
        plt.close(fig)
    return path

"""Curve CSV and result JSON serialization with atomic output."""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .analysis import FitResult
from .protocols import EchoCurve

CSV_HEADER = ("time_s", "value", "scheme", "k", "mode", "sigma_strength", "seed")


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def curve_to_csv(curve: EchoCurve, seed="") -> str:
    meta = curve.meta
    pert = meta.get("perturbation")
    if isinstance(pert, Mapping):
        strength = pert.get("strength", 0.0)
    elif pert is not None:
        strength = pert.strength
    else:
        strength = meta.get("sigma_strength", 0.0)
    fixed = [fmt(meta.get("scheme", "")), fmt(meta.get("k", "")), fmt(meta.get("mode", "")),
             fmt(strength), fmt(seed)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for t, v in zip(curve.times, curve.values):
        w.writerow([fmt(t), fmt(v)] + fixed)
    return buf.getvalue()


def _parse_cell(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def curve_from_csv(text: str, source: str = "<csv>") -> EchoCurve:
    """Inverse of :func:`curve_to_csv`; metadata comes from the first row."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{source}: expected header {','.join(CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{source}: no data rows")
    try:
        t = np.array([float(r[0]) for r in body])
        v = np.array([float(r[1]) for r in body])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{source}: malformed row ({exc})") from None
    first = body[0]
    meta = {
        "scheme": _parse_cell(first[2]),
        "k": _parse_cell(first[3]),
        "mode": first[4],
        "sigma_strength": _parse_cell(first[5]),
        "seed": _parse_cell(first[6]),
        "perturbation": None,
        "time_axis": "lab",
    }
    return EchoCurve(t, v, meta=meta)


def read_curve(path) -> EchoCurve:
    path = Path(path)
    return curve_from_csv(path.read_text(), source=str(path))


def dumps(obj) -> str:
    """JSON with sorted keys; floats keep full precision via repr."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _plain(obj):
    if isinstance(obj, FitResult):
        return _plain(obj.to_dict())
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_bundle(directory, files: Mapping[str, str]) -> list[Path]:
    """Write ``{name: text}`` into ``directory`` all-or-nothing.

    Everything is first written to a sibling temporary directory; files are
    moved into place only after all of them were written successfully.
    """
    directory = Path(directory)
    parent = directory.parent
    parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=parent))
    try:
        for name, text in files.items():
            (staging / name).write_text(text)
        directory.mkdir(exist_ok=True)
        out = []
        for name in files:
            os.replace(staging / name, directory / name)
            out.append(directory / name)
        return out
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

"""File formats: CSV vectors, PGM images, JSON reports."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .core import ParseError

JSON_SCHEMA = 1


def parse_csv_vector(path) -> np.ndarray:
    """One real per line; blank lines and lines starting with '#' are skipped."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            values.append(float(s))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: not a number: {s!r}") from None
    if not values:
        raise ParseError(f"{path}: no values found")
    return np.array(values)


def write_csv_vector(path, values, comment: str = None):
    lines = [] if comment is None else [f"# {comment}"]
    lines += [repr(float(x)) for x in np.asarray(values).reshape(-1)]
    Path(path).write_text("\n".join(lines) + "\n")


def _pgm_tokens(data: bytes, count: int, path):
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns (tokens, offset just past the last token).
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise ParseError(f"{path}: header truncated at byte {i}")
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        tokens.append((data[start:i], start))
    return tokens, i


def parse_pgm(path) -> np.ndarray:
    """Grayscale image as a float array of shape (height, width).

    Accepts ASCII (P2) and binary (P5) files with maxval up to 65535;
    16-bit binary samples are big-endian.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    tokens, offset = _pgm_tokens(data, 4, path)
    magic = tokens[0][0]
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"{path}: byte 0: unsupported magic {magic!r}, expected P2 or P5")
    fields = []
    for name, (tok, pos) in zip(("width", "height", "maxval"), tokens[1:]):
        try:
            fields.append(int(tok))
        except ValueError:
            raise ParseError(f"{path}: byte {pos}: {name} is not an integer: {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ParseError(f"{path}: byte {tokens[1][1]}: image must be at least 1x1")
    if not 1 <= maxval <= 65535:
        raise ParseError(f"{path}: byte {tokens[3][1]}: maxval {maxval} outside 1..65535")
    count = width * height
    if magic == b"P5":
        start = offset + 1  # exactly one whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        raster = data[start : start + need]
        if len(raster) < need:
            raise ParseError(f"{path}: byte {start + len(raster)}: raster truncated, "
                             f"need {need} bytes")
        pixels = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    else:
        body = data[offset:]
        parts = body.split()
        if len(parts) < count:
            raise ParseError(f"{path}: byte {len(data)}: expected {count} pixels, found {len(parts)}")
        try:
            pixels = np.array([int(p) for p in parts[:count]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"{path}: non-integer pixel value in raster") from None
    if np.any(pixels > maxval):
        raise ParseError(f"{path}: pixel value above maxval {maxval}")
    return pixels.reshape(height, width)


def write_pgm(path, pixels, maxval: int = 255, binary: bool = True):
    img = np.asarray(pixels)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2D array")
    vals = np.clip(np.round(img), 0, maxval).astype(np.int64)
    h, w = vals.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode()
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        body = vals.astype(dtype).tobytes()
    else:
        body = ("\n".join(" ".join(str(v) for v in row) for row in vals) + "\n").encode()
    Path(path).write_bytes(header + body)


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_report(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip float text."""
    body = dict(obj)
    body.setdefault("schema", JSON_SCHEMA)
    return json.dumps(_plain(body), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(path, obj):
    Path(path).write_text(dumps_report(obj))

"""Reading and writing point clouds and vocabularies.

Formats
-------
csv
    One point per line, comma separated; a non-numeric first line is taken
    as a header.
pcloud
    8-byte magic ``PCLOUD01``, a 4-byte little-endian header length, a UTF-8
    JSON header ``{"p", "D", "dtype": "f32"|"f64", "order": "row"}``, then the
    little-endian row-major payload.
npy
    NumPy ``.npy`` version 1.0, little-endian ``<f4``/``<f8``, C order.
"""

from __future__ import annotations

import ast
import csv
import json
import math
import re
import struct
from pathlib import Path

import numpy as np

from .core_geometry import PointCloud

PCLOUD_MAGIC = b"PCLOUD01"
NPY_MAGIC = b"\x93NUMPY"
FORMATS = ("csv", "pcloud", "npy")
_EXTENSIONS = {".csv": "csv", ".txt": "csv", ".pcloud": "pcloud", ".bin": "pcloud", ".npy": "npy"}
_DTYPES = {"f32": "<f4", "f64": "<f8"}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def detect_format(path) -> str:
    fmt = _EXTENSIONS.get(Path(path).suffix.lower())
    if fmt is None:
        raise DataError(f"cannot infer format of {path}; pass one of {FORMATS}")
    return fmt


def _check_finite(m: np.ndarray):
    bad = ~np.isfinite(m).all(axis=1)
    if bad.any():
        raise DataError(f"non-finite value in row {int(np.argmax(bad))}")


def _read_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def _read_pcloud(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != PCLOUD_MAGIC:
        raise DataError(f"{path}: bad magic, not a PCLOUD01 file")
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        p, d, dtype = int(header["p"]), int(header["D"]), _DTYPES[header["dtype"]]
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: malformed header ({exc})") from None
    if header.get("order", "row") != "row":
        raise DataError(f"{path}: only row-major order is supported")
    payload = raw[12 + hlen:]
    expected = p * d * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(p, d).astype(np.float64)


def _read_npy(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:6] != NPY_MAGIC:
        raise DataError(f"{path}: not an npy file")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise DataError(f"{path}: npy version {major}.{minor} unsupported (need 1.0)")
    (hlen,) = struct.unpack("<H", raw[8:10])
    try:
        header = ast.literal_eval(raw[10:10 + hlen].decode("latin1"))
        descr, fortran, shape = header["descr"], header["fortran_order"], tuple(header["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed npy header ({exc})") from None
    if descr not in ("<f4", "<f8"):
        raise DataError(f"{path}: dtype {descr} unsupported (need <f4 or <f8)")
    if fortran:
        raise DataError(f"{path}: Fortran-order arrays unsupported")
    if len(shape) != 2:
        raise DataError(f"{path}: expected a 2-d array, got shape {shape}")
    payload = raw[10 + hlen:]
    n = shape[0] * shape[1] * np.dtype(descr).itemsize
    if len(payload) < n:
        raise DataError(f"{path}: payload truncated")
    return np.frombuffer(payload[:n], dtype=descr).reshape(shape).astype(np.float64)


def load_matrix(path, fmt: str | None = None, labels=None) -> PointCloud:
    """Load a ``p x D`` matrix as a :class:`PointCloud` (values upcast to float64)."""
    fmt = fmt or detect_format(path)
    if not Path(path).is_file():
        raise DataError(f"{path}: no such file")
    readers = {"csv": _read_csv, "pcloud": _read_pcloud, "npy": _read_npy}
    if fmt not in readers:
        raise DataError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    m = readers[fmt](path)
    _check_finite(m)
    if m.shape[0] < 2:
        raise DataError(f"{path}: need at least 2 points, got {m.shape[0]}")
    if labels is not None and len(labels) != m.shape[0]:
        raise DataError(f"vocabulary has {len(labels)} tokens but the matrix has {m.shape[0]} rows")
    return PointCloud(m, labels)


def save_pcloud(path, coords, dtype: str = "f64") -> None:
    coords = np.ascontiguousarray(coords, dtype=_DTYPES[dtype])
    p, d = coords.shape
    header = json.dumps({"p": p, "D": d, "dtype": dtype, "order": "row"}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PCLOUD_MAGIC + struct.pack("<I", len(header)) + header + coords.tobytes())


def save_csv(path, coords, header=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in np.asarray(coords, dtype=np.float64):
            w.writerow([format_float(v) for v in row])


def save_matrix(path, coords, fmt: str | None = None) -> None:
    fmt = fmt or detect_format(path)
    if fmt == "pcloud":
        save_pcloud(path, coords)
    elif fmt == "csv":
        save_csv(path, coords)
    elif fmt == "npy":
        np.save(path, np.ascontiguousarray(coords, dtype="<f8"))
    else:
        raise DataError(f"unknown format {fmt!r}")


_ESCAPE = re.compile(r"\\(u[0-9a-fA-F]{4}|U[0-9a-fA-F]{8}|\\|n|t|r|.|$)")
_SIMPLE = {"\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


def _unescape(s: str, lineno: int) -> str:
    def sub(m):
        code = m.group(1)
        if code in _SIMPLE:
            return _SIMPLE[code]
        if code[:1] in "uU" and len(code) > 1:
            return chr(int(code[1:], 16))
        raise DataError(f"vocabulary line {lineno}: invalid escape \\{code}")

    return _ESCAPE.sub(sub, s)


def load_vocab(path, expected: int | None = None) -> list[str]:
    """One token per UTF-8 line; ``\\uXXXX``, ``\\n``, ``\\t``, ``\\\\`` escapes decoded."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    tokens = [_unescape(line.rstrip("\r"), i + 1) for i, line in enumerate(lines)]
    if expected is not None and len(tokens) != expected:
        raise DataError(f"vocabulary has {len(tokens)} tokens, expected {expected}")
    return tokens


def format_float(v) -> str:
    """Shortest decimal string that round-trips to the same double."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)

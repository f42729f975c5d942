"""Field and report serialization.

EULCI1 binary field format (little-endian):

    bytes 0..7    magic  b"EULCI1\\x00\\x00"
    bytes 8..11   uint32 n          (grid points per axis)
    bytes 12..15  uint32 ncomp      (1 scalar, 3 vector, 6 symmetric tensor)
    then ncomp blocks of n^3 float64 samples, row-major over (x1, x2, x3)

Reports are JSON, series are CSV.  Every file is written atomically
(write to <path>.tmp, then rename).
"""

import hashlib
import json
import os
import struct

import numpy as np

from .fields import Grid3, ScalarField, VectorField, SymTensorField

MAGIC = b"EULCI1\x00\x00"

_BY_NCOMP = {1: ScalarField, 3: VectorField, 6: SymTensorField}


class FormatError(Exception):
    pass


def atomic_write_bytes(path, data: bytes):
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def export_field(field_obj, path, fmt="eulci1"):
    if fmt == "eulci1":
        ncomp = 1 if field_obj.ncomp is None else field_obj.ncomp
        header = MAGIC + struct.pack("<II", field_obj.grid.n, ncomp)
        vals = field_obj.values
        if field_obj.ncomp is None:
            vals = vals[None]
        body = b"".join(np.ascontiguousarray(c, dtype="<f8").tobytes() for c in vals)
        atomic_write_bytes(path, header + body)
    elif fmt == "legacy-ascii-vtk":
        _export_vtk(field_obj, path)
    else:
        raise FormatError(f"unknown format {fmt!r}")


def import_field(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise FormatError(f"unexpected end of file at offset {len(data)}: no header")
    if data[:8] != MAGIC:
        raise FormatError("magic mismatch: not an EULCI1 file")
    n, ncomp = struct.unpack("<II", data[8:16])
    if ncomp not in _BY_NCOMP:
        raise FormatError(f"unsupported component count {ncomp}")
    expected = 16 + ncomp * n**3 * 8
    if len(data) != expected:
        raise FormatError(
            f"unexpected end of file at offset {len(data)} (expected {expected})"
        )
    grid = Grid3(n)
    arr = np.frombuffer(data[16:], dtype="<f8").reshape(ncomp, n, n, n).astype(np.float64)
    cls = _BY_NCOMP[ncomp]
    if cls is ScalarField:
        return ScalarField(grid, arr[0])
    return cls(grid, arr)


def _export_vtk(field_obj, path):
    """ASCII STRUCTURED_POINTS, for inspection in standard viewers."""
    n = field_obj.grid.n
    dx = field_obj.grid.dx
    ncomp = 1 if field_obj.ncomp is None else field_obj.ncomp
    lines = [
        "# vtk DataFile Version 3.0",
        "eulerci field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {n} {n} {n}",
        "ORIGIN 0 0 0",
        f"SPACING {dx} {dx} {dx}",
        f"POINT_DATA {n**3}",
    ]
    vals = field_obj.values if field_obj.ncomp is not None else field_obj.values[None]
    if ncomp == 3:
        lines.append("VECTORS field double")
        flat = np.stack([vals[i].ravel(order="F") for i in range(3)], axis=1)
        lines.extend(" ".join(f"{x:.12e}" for x in row) for row in flat)
    else:
        for ci in range(ncomp):
            name = "field" if ncomp == 1 else f"comp{ci}"
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{x:.12e}" for x in vals[ci].ravel(order="F"))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON-serializable: {type(o)}")


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

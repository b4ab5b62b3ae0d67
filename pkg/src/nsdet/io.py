"""Binary field snapshots (DFLD1), bank containers and CSV helpers.

A DFLD1 record is the ASCII magic ``DFLD1``, little-endian ``u32 nx``,
``u32 ny``, ``u8 kind`` (0 scalar, 1 velocity) and then little-endian
float64 values in row-major order of the ``[i, j]`` arrays: ``nx*ny`` values
for a scalar, ``(nx+1)*ny`` followed by ``nx*(ny+1)`` for a velocity. Node
scalars are written with their own array dimensions ``(nx+1, ny+1)``.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from .errors import FormatError
from .fields import ScalarField, VelocityField
from .functionals import FunctionalBank
from .geometry import DiscreteDomain, build_rectangle

MAGIC = b"DFLD1"
_HEADER = struct.Struct("<IIB")
HEADER_SIZE = len(MAGIC) + _HEADER.size
_F8 = np.dtype("<f8")

Field = Union[ScalarField, VelocityField]


def encode_field(f: Field) -> bytes:
    if isinstance(f, VelocityField):
        d = f.domain
        head = _HEADER.pack(d.nx, d.ny, 1)
        body = f.u.astype(_F8).tobytes(order="C") + f.v.astype(_F8).tobytes(order="C")
    else:
        a, b = f.values.shape
        head = _HEADER.pack(a, b, 0)
        body = f.values.astype(_F8).tobytes(order="C")
    return MAGIC + head + body


def _record_size(nx, ny, kind):
    if kind == 0:
        return nx * ny * 8
    return ((nx + 1) * ny + nx * (ny + 1)) * 8


def decode_field(buf: bytes, offset: int = 0, Lx: float = 1.0, Ly: float = 1.0,
                 domain: Optional[DiscreteDomain] = None):
    """Decode one record starting at ``offset``; returns ``(field, next_offset)``.

    Scalars whose dimensions equal ``(domain.nx+1, domain.ny+1)`` are read as
    node fields when ``domain`` is given.
    """
    if len(buf) - offset < HEADER_SIZE:
        raise FormatError("truncated DFLD1 header")
    if buf[offset : offset + len(MAGIC)] != MAGIC:
        raise FormatError("bad magic: not a DFLD1 record")
    nx, ny, kind = _HEADER.unpack_from(buf, offset + len(MAGIC))
    if kind not in (0, 1):
        raise FormatError(f"unknown field kind {kind}")
    if nx == 0 or ny == 0:
        raise FormatError("empty grid in header")
    size = _record_size(nx, ny, kind)
    start = offset + HEADER_SIZE
    if len(buf) - start < size:
        raise FormatError(f"truncated DFLD1 payload: need {size} bytes, have {len(buf) - start}")
    data = np.frombuffer(buf, dtype=_F8, count=size // 8, offset=start).astype(float)
    end = start + size
    if kind == 1:
        dom = domain if domain is not None else build_rectangle(nx, ny, Lx, Ly)
        if (dom.nx, dom.ny) != (nx, ny):
            raise FormatError(f"record is {nx}x{ny}, expected {dom.nx}x{dom.ny}")
        nu = (nx + 1) * ny
        return VelocityField(data[:nu].reshape(nx + 1, ny), data[nu:].reshape(nx, ny + 1), dom), end
    arr = data.reshape(nx, ny)
    if domain is not None:
        if (nx, ny) == (domain.nx + 1, domain.ny + 1):
            return ScalarField(arr, domain, location="node"), end
        if (nx, ny) != (domain.nx, domain.ny):
            raise FormatError(f"record is {nx}x{ny}, does not fit a {domain.nx}x{domain.ny} grid")
        return ScalarField(arr, domain), end
    return ScalarField(arr, build_rectangle(nx, ny, Lx, Ly)), end


def write_snapshot(f: Field, path) -> None:
    Path(path).write_bytes(encode_field(f))


def read_snapshot(path, domain: Optional[DiscreteDomain] = None, Lx: float = 1.0, Ly: float = 1.0) -> Field:
    buf = Path(path).read_bytes()
    f, end = decode_field(buf, 0, Lx, Ly, domain)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after the DFLD1 record")
    return f


def write_fields(fields: Sequence[Field], path) -> None:
    """Concatenated DFLD1 records."""
    Path(path).write_bytes(b"".join(encode_field(f) for f in fields))


def read_fields(path, domain: Optional[DiscreteDomain] = None) -> List[Field]:
    buf = Path(path).read_bytes()
    out, off = [], 0
    while off < len(buf):
        f, off = decode_field(buf, off, domain=domain)
        out.append(f)
    return out


def write_bank(bank: FunctionalBank, directory) -> None:
    """``bank.dfld`` (one scalar record per coefficient field) and ``bank.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_fields(bank.coefficient_fields, directory / "bank.dfld")
    d = bank.domain
    meta = {
        "seed": bank.seed,
        "N": bank.N,
        "inner_product": bank.inner_product,
        "cutoff": bank.cutoff,
        "nx": d.nx,
        "ny": d.ny,
        "Lx": d.Lx,
        "Ly": d.Ly,
    }
    (directory / "bank.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_bank(directory) -> FunctionalBank:
    """Read a bank directory holding ``bank.json`` and ``bank.dfld``."""
    directory = Path(directory)
    if directory.is_file() and directory.name == "bank.dfld":
        directory = directory.parent
    try:
        meta = json.loads((directory / "bank.json").read_text())
        d = build_rectangle(meta["nx"], meta["ny"], meta["Lx"], meta["Ly"])
    except (KeyError, json.JSONDecodeError, OSError) as exc:
        raise FormatError(f"bad bank manifest: {exc}") from exc
    fields = read_fields(directory / "bank.dfld", domain=d)
    if len(fields) != meta["N"]:
        raise FormatError(f"bank manifest says N={meta['N']} but {len(fields)} fields were stored")
    return FunctionalBank(meta["N"], fields, meta["inner_product"], meta["seed"], d, meta.get("cutoff", 8))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv_matrix(path) -> np.ndarray:
    """Numeric CSV with one header row."""
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc

"""Binary mask/field formats, PGM previews and CSV tables.

Mask file: ``b"SOBEXMSK"``, u32 dim, u32 extents, f64 origin, f64 spacing,
then one byte per cell in row-major order (0 outside, 1 boundary layer,
2 open). Field file: ``b"SOBEXFLD"``, u32 dim, optional u32 split (product
fields), u32 extents, f64 origin, f64 spacing, then little-endian f64
samples. The split is detected from the file size.
"""

import csv
import struct

import numpy as np

from .grid import DomainMask, GridSpec, ScalarField

MASK_MAGIC = b"SOBEXMSK"
FIELD_MAGIC = b"SOBEXFLD"


def _header(magic, grid, split=None):
    out = [magic, struct.pack("<I", grid.dim)]
    if split is not None:
        out.append(struct.pack("<I", int(split)))
    out.append(struct.pack(f"<{grid.dim}I", *grid.extents))
    out.append(struct.pack(f"<{grid.dim}d", *grid.origin))
    out.append(struct.pack("<d", grid.spacing))
    return b"".join(out)


def _read_header(buf, magic, with_split):
    if buf[:8] != magic:
        raise ValueError(f"bad magic {buf[:8]!r}, expected {magic!r}")
    pos = 8
    (dim,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    split = None
    if with_split:
        (split,) = struct.unpack_from("<I", buf, pos)
        pos += 4
    ext = struct.unpack_from(f"<{dim}I", buf, pos)
    pos += 4 * dim
    origin = struct.unpack_from(f"<{dim}d", buf, pos)
    pos += 8 * dim
    (h,) = struct.unpack_from("<d", buf, pos)
    pos += 8
    return GridSpec(origin, h, ext), split, pos


def write_mask(path, mask):
    codes = np.zeros(mask.grid.shape, dtype=np.uint8)
    codes[mask.closed] = 1
    codes[mask.open] = 2
    with open(path, "wb") as fh:
        fh.write(_header(MASK_MAGIC, mask.grid))
        fh.write(codes.tobytes(order="C"))


def read_mask(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    grid, _, pos = _read_header(buf, MASK_MAGIC, False)
    codes = np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(grid.shape)
    return DomainMask(grid, codes == 2, codes >= 1)


def write_field(path, field, split=None):
    """Write a :class:`ScalarField` (or ``(grid, values)``); ``split`` marks a product field."""
    grid, values = (field.grid, field.values) if isinstance(field, ScalarField) else field
    vals = np.ascontiguousarray(np.asarray(values, dtype="<f8").reshape(grid.shape))
    with open(path, "wb") as fh:
        fh.write(_header(FIELD_MAGIC, grid, split))
        fh.write(vals.tobytes(order="C"))


def read_field(path):
    """Return ``(grid, values, split)``; ``split`` is None for plain fields."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (dim,) = struct.unpack_from("<I", buf, 8)
    plain = 8 + 4 + 4 * dim + 8 * dim + 8
    with_split = (len(buf) - plain) % 8 == 4
    grid, split, pos = _read_header(buf, FIELD_MAGIC, with_split)
    vals = np.frombuffer(buf, dtype="<f8", offset=pos)
    if vals.size != grid.n_cells:
        raise ValueError("field payload does not match its header")
    return grid, vals.reshape(grid.shape).copy(), split


def write_pgm(path, mask):
    """8-bit greyscale preview of a 2-D mask (white open, grey layer, black outside)."""
    if mask.grid.dim != 2:
        raise ValueError("PGM previews are 2-D only")
    img = np.zeros(mask.grid.shape, dtype=np.uint8)
    img[mask.closed] = 128
    img[mask.open] = 255
    img = img.T[::-1]  # rows top to bottom = y decreasing
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_csv(path, rows, columns, header=None):
    """Write dict rows; floats use ``repr`` so the output round-trips exactly.

    ``header`` becomes a leading ``#`` comment line.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v

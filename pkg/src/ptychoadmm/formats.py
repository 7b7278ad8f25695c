"""Binary and text file formats shared across the package.

CIM1
    ``b"CIM1"``, u32 height, u32 width, then ``height * width`` pairs of
    little-endian float64 ``(real, imag)`` in row-major order.
PME1
    ``b"PME1"``, u32 N, u32 m, then ``N * m * m`` little-endian float64
    intensities.
Scan text
    Header line ``m N`` followed by N lines ``row col``.  ``#`` starts a
    comment.
PGM
    8-bit binary greymap (``P5``).
"""

import struct
from pathlib import Path

import numpy as np

CIM_MAGIC = b"CIM1"
PME_MAGIC = b"PME1"
FORMAT_VERSIONS = {"complex_field": "CIM1", "measurements": "PME1",
                   "checkpoint": "CKP1", "scans": "text-v1"}

_C16 = np.dtype("<c16")
_F8 = np.dtype("<f8")


class FormatError(ValueError):
    """Raised for malformed input files; the message names file and offset."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def encode_complex(x):
    """CIM1 payload (header + data) for a 2-D complex array."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape
    return CIM_MAGIC + struct.pack("<II", h, w) + x.astype(_C16).tobytes()


def decode_complex(buf, path="<bytes>", offset=0):
    """Decode one CIM1 record from `buf` at `offset`.

    Returns
    -------
    (ndarray, int)
        The field and the offset just past the record.
    """
    if buf[offset:offset + 4] != CIM_MAGIC:
        raise FormatError(path, offset, f"bad magic {bytes(buf[offset:offset + 4])!r}, expected CIM1")
    if len(buf) < offset + 12:
        raise FormatError(path, offset + 4, "truncated header")
    h, w = struct.unpack_from("<II", buf, offset + 4)
    start = offset + 12
    nbytes = h * w * 16
    if h == 0 or w == 0:
        raise FormatError(path, offset + 4, f"empty field {h}x{w}")
    if len(buf) < start + nbytes:
        raise FormatError(path, len(buf), f"truncated data: need {nbytes} bytes for {h}x{w}")
    data = np.frombuffer(buf, dtype=_C16, count=h * w, offset=start)
    data = data.astype(np.complex128).reshape(h, w)
    if not np.all(np.isfinite(data)):
        raise FormatError(path, start, "non-finite values in field")
    return data, start + nbytes


def write_complex(path, x):
    Path(path).write_bytes(encode_complex(x))


def read_complex(path):
    buf = Path(path).read_bytes()
    field, end = decode_complex(buf, path)
    if end != len(buf):
        raise FormatError(path, end, f"{len(buf) - end} trailing bytes")
    return field


def write_measurements(path, d):
    """Write an ``(N, m, m)`` intensity stack as PME1."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 3 or d.shape[1] != d.shape[2]:
        raise ValueError(f"expected shape (N, m, m), got {d.shape}")
    n, m, _ = d.shape
    Path(path).write_bytes(PME_MAGIC + struct.pack("<II", n, m) + d.astype(_F8).tobytes())


def read_measurements(path):
    buf = Path(path).read_bytes()
    if buf[:4] != PME_MAGIC:
        raise FormatError(path, 0, f"bad magic {buf[:4]!r}, expected PME1")
    if len(buf) < 12:
        raise FormatError(path, 4, "truncated header")
    n, m = struct.unpack_from("<II", buf, 4)
    if n == 0 or m == 0:
        raise FormatError(path, 4, f"empty measurement set N={n}, m={m}")
    expected = 12 + n * m * m * 8
    if len(buf) != expected:
        raise FormatError(path, min(len(buf), expected),
                          f"size {len(buf)} does not match N={n}, m={m} (expected {expected})")
    d = np.frombuffer(buf, dtype=_F8, offset=12).astype(np.float64).reshape(n, m, m)
    bad = ~np.isfinite(d) | (d < 0)
    if bad.any():
        k = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError(path, 12 + 8 * k, "negative or non-finite intensity")
    return d


def write_scans(path, m, offsets):
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
    lines = [f"{m} {len(offsets)}"] + [f"{r} {c}" for r, c in offsets]
    Path(path).write_text("\n".join(lines) + "\n")


def read_scans(path):
    """Parse a scan text file.

    Returns
    -------
    (int, ndarray)
        Window size ``m`` and the ``(N, 2)`` integer offsets.
    """
    rows = []
    header = None
    offset = 0
    for raw in Path(path).read_text().splitlines(keepends=True):
        line = raw.split("#", 1)[0].strip()
        if line:
            parts = line.split()
            try:
                vals = [int(p) for p in parts]
            except ValueError:
                raise FormatError(path, offset, f"non-integer token in {line!r}") from None
            if len(vals) != 2:
                raise FormatError(path, offset, f"expected two integers, got {line!r}")
            if header is None:
                header = vals
            else:
                rows.append(vals)
        offset += len(raw.encode())
    if header is None:
        raise FormatError(path, 0, "missing 'm N' header")
    m, n = header
    if m < 1:
        raise FormatError(path, 0, f"window size must be positive, got {m}")
    if len(rows) != n:
        raise FormatError(path, offset, f"header announces {n} offsets, found {len(rows)}")
    offsets = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if (offsets < 0).any():
        raise FormatError(path, 0, "negative scan offset")
    return m, offsets


def write_pgm(path, img):
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D raster")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def read_pgm(path):
    """Read an 8-bit binary PGM as a float array with values in [0, 255]."""
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(path, pos, "truncated PGM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(path, 0, f"unsupported PGM magic {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(path, 0, f"non-integer PGM header {tokens[1:]!r}") from None
    if maxval != 255:
        raise FormatError(path, pos, f"only 8-bit PGM supported (maxval {maxval})")
    pos += 1
    if len(buf) - pos < w * h:
        raise FormatError(path, len(buf), "truncated PGM data")
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).astype(np.float64)


def magnitude_pgm(z):
    """Min-max scaled magnitude as an 8-bit raster."""
    a = np.abs(z)
    lo, hi = a.min(), a.max()
    return np.zeros_like(a) if hi <= lo else 255.0 * (a - lo) / (hi - lo)


def phase_pgm(z):
    """Phase mapped from (-pi, pi] onto [0, 255]."""
    return 255.0 * (np.angle(z) + np.pi) / (2 * np.pi)

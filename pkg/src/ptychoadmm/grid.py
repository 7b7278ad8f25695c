"""Complex rasters, periodic finite differences, unitary FFTs and scan windows.

Fields are plain 2-D ``complex128`` arrays in row-major order, which is the
lexicographic ordering (rows stacked one after another).  A gradient pair
``(gx, gy)`` is stored as a single array of shape ``(2, h, w)``.

Scan masks are never materialized: a mask is an ``(row, col)`` offset plus a
window size ``m``.  Applying the mask is :func:`extract_window` and applying
its transpose is :func:`embed_window`.
"""

import numpy as np


def as_field(x):
    """Return `x` as a finite 2-D complex128 array."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a nonempty 2-D field, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("field contains NaN or Inf entries")
    return x


def inner(a, b):
    """Complex inner product ``sum(a * conj(b))``."""
    return np.sum(np.asarray(a) * np.conj(np.asarray(b)))


def forward_diff(z):
    """Forward horizontal and vertical differences with periodic wrap.

    ``gx[r, c] = z[r, c] - z[r, c-1]`` and ``gy[r, c] = z[r, c] - z[r-1, c]``,
    where column ``-1`` and row ``-1`` wrap around to the last column/row.

    Returns
    -------
    ndarray, shape (2, h, w)
    """
    z = np.asarray(z)
    return np.stack((z - np.roll(z, 1, axis=1), z - np.roll(z, 1, axis=0)))


def divergence_adjoint(p):
    """Adjoint of :func:`forward_diff` (the transpose of the gradient)."""
    p = np.asarray(p)
    if p.ndim != 3 or p.shape[0] != 2:
        raise ValueError(f"expected a gradient pair of shape (2, h, w), got {p.shape}")
    px, py = p
    return (px - np.roll(px, -1, axis=1)) + (py - np.roll(py, -1, axis=0))


def laplacian(z):
    """Periodic 5-point Laplacian, ``-divergence_adjoint(forward_diff(z))``."""
    return -divergence_adjoint(forward_diff(z))


def fft2_unitary(x):
    return np.fft.fft2(x, norm="ortho")


def ifft2_unitary(x):
    return np.fft.ifft2(x, norm="ortho")


def _check_window(offset, m, shape):
    r, c = int(offset[0]), int(offset[1])
    h, w = shape
    if m < 1 or r < 0 or c < 0 or r + m > h or c + m > w:
        raise ValueError(
            f"window of size {m} at offset ({r}, {c}) does not fit in a {h}x{w} grid"
        )
    return r, c


def extract_window(z, offset, m):
    """Return a copy of the ``m x m`` block of `z` starting at `offset`."""
    r, c = _check_window(offset, m, np.shape(z))
    return np.array(z[r:r + m, c:c + m])


def embed_window(x, offset, shape):
    """Place the square block `x` at `offset` in a zero field of `shape`."""
    x = np.asarray(x)
    m = x.shape[0]
    if x.ndim != 2 or x.shape[1] != m:
        raise ValueError(f"window must be square, got shape {x.shape}")
    r, c = _check_window(offset, m, shape)
    out = np.zeros(shape, dtype=np.result_type(x, np.complex128))
    out[r:r + m, c:c + m] = x
    return out

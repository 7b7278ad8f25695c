"""Synthetic ptychography experiments: probes, raster scans, measurements, noise."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .grid import as_field, extract_window, fft2_unitary

log = logging.getLogger(__name__)

POISSON_GAUSS_CUTOFF = 1e7


class CoverageError(ValueError):
    """A scan set leaves some object pixel unscanned."""


@dataclass(frozen=True, eq=False)
class ScanSet:
    """Probe window origins on an object grid.

    Parameters
    ----------
    shape : (int, int)
        Object grid ``(h, w)``.
    m : int
        Probe window side length.
    offsets : ndarray, shape (N, 2)
        ``(row, col)`` origin of each window.
    """

    shape: tuple
    m: int
    offsets: np.ndarray
    coverage: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 2)
        h, w = (int(s) for s in self.shape)
        m = int(self.m)
        if len(offsets) == 0:
            raise ValueError("scan set is empty")
        if m < 1:
            raise ValueError(f"probe size must be positive, got {m}")
        bad = (offsets < 0).any(axis=1) | (offsets[:, 0] + m > h) | (offsets[:, 1] + m > w)
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise ValueError(f"scan {j} at {tuple(offsets[j])} does not fit a {m}x{m} window in {h}x{w}")
        cov = np.zeros((h, w), dtype=np.int64)
        for r, c in offsets:
            cov[r:r + m, c:c + m] += 1
        if cov.min() < 1:
            rr, cc = np.argwhere(cov == 0)[0]
            raise CoverageError(f"pixel ({rr}, {cc}) is not covered by any scan window "
                                f"({int((cov == 0).sum())} uncovered pixels)")
        offsets.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "shape", (h, w))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "coverage", cov)

    def __len__(self):
        return len(self.offsets)

    def window(self, z, j):
        return extract_window(z, self.offsets[j], self.m)

    def slices(self, j):
        r, c = self.offsets[j]
        return slice(r, r + self.m), slice(c, c + self.m)

    def covering(self, row, col):
        """Indices of scans whose window contains pixel ``(row, col)``."""
        r, c = self.offsets[:, 0], self.offsets[:, 1]
        inside = (r <= row) & (row < r + self.m) & (c <= col) & (col < c + self.m)
        return np.flatnonzero(inside)


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement corruption: ``"none"``, ``"gaussian"`` (SNR in dB) or ``"poisson"`` (scale zeta)."""

    kind: str = "none"
    snr: float = 40.0
    zeta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "poisson"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not np.isfinite(self.snr):
            raise ValueError("snr must be finite")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")


def make_probe(kind, m, radius=None, width=None, curvature=0.0):
    """Synthesize an ``m x m`` probe.

    Parameters
    ----------
    kind : {"flat", "disk", "gaussian"}
    m : int
    radius : float, optional
        Disk radius in pixels (default ``m / 2``).
    width : float, optional
        Gaussian standard deviation in pixels (default ``m / 4``).
    curvature : float
        Quadratic phase in radians reached at distance ``m / 2`` from the
        centre.  Ignored for ``flat``.
    """
    if m < 1:
        raise ValueError(f"probe size must be positive, got {m}")
    c = (m - 1) / 2.0
    yy, xx = np.mgrid[0:m, 0:m]
    rho2 = (yy - c) ** 2 + (xx - c) ** 2
    phase = np.exp(1j * curvature * rho2 / (m / 2.0) ** 2)
    if kind == "flat":
        return np.ones((m, m), dtype=np.complex128)
    if kind == "disk":
        radius = m / 2.0 if radius is None else radius
        if not radius > 0:
            raise ValueError(f"disk radius must be positive, got {radius}")
        amp = (rho2 <= radius ** 2).astype(np.float64)
    elif kind == "gaussian":
        width = m / 4.0 if width is None else width
        if not width > 0:
            raise ValueError(f"gaussian width must be positive, got {width}")
        amp = np.exp(-rho2 / (2.0 * width ** 2))
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    if not amp.any():
        raise ValueError("probe is identically zero")
    return amp * phase


def perturb_probe(omega, eps, rng):
    """``omega + eps * max|omega| * g`` with ``g`` a complex standard normal field."""
    g = (rng.standard_normal(omega.shape) + 1j * rng.standard_normal(omega.shape)) / np.sqrt(2)
    return omega + eps * np.abs(omega).max() * g


def make_raster_scan(n, m, grid_k):
    """Regular ``grid_k x grid_k`` lattice of window origins.

    The stride is ``(n - m) // (grid_k - 1)``; the last row and column of
    the lattice are moved so the final window ends exactly at the border.
    ``n`` may be an int or an ``(h, w)`` pair.
    """
    h, w = (n, n) if np.isscalar(n) else (int(n[0]), int(n[1]))
    if h == m and w == m:
        if grid_k != 1:
            raise ValueError("object and probe have equal size: only a single scan (grid_k=1) is allowed")
        return ScanSet((h, w), m, [(0, 0)])
    if grid_k < 2:
        raise ValueError(f"grid_k must be at least 2, got {grid_k}")
    if m >= min(h, w) or m < 1:
        raise ValueError(f"probe size {m} must be smaller than the object {h}x{w}")

    def axis(length):
        stride = (length - m) // (grid_k - 1)
        if stride < 1:
            raise ValueError(f"{grid_k} positions do not fit along an axis of length {length}")
        pos = [k * stride for k in range(grid_k - 1)] + [length - m]
        gaps = np.diff(pos)
        if gaps.max() > m:
            raise CoverageError(f"stride {int(gaps.max())} exceeds probe size {m}: coverage gap")
        return pos

    rows, cols = axis(h), axis(w)
    offsets = [(r, c) for r in rows for c in cols]
    return ScanSet((h, w), m, offsets)


def exit_spectra(z, omega, scans):
    """``F(omega * S_j z)`` for every scan, shape ``(N, m, m)``."""
    out = np.empty((len(scans), scans.m, scans.m), dtype=np.complex128)
    for j in range(len(scans)):
        out[j] = fft2_unitary(omega * scans.window(z, j))
    return out


def forward_measure(z, omega, scans):
    """Noiseless intensities ``|F(omega * S_j z)|**2``, shape ``(N, m, m)``."""
    z = as_field(z)
    omega = as_field(omega)
    if z.shape != scans.shape or omega.shape != (scans.m, scans.m):
        raise ValueError(f"object {z.shape} / probe {omega.shape} do not match scans "
                         f"{scans.shape} / m={scans.m}")
    return np.abs(exit_spectra(z, omega, scans)) ** 2


def gaussian_noise_sigma(clean, snr):
    """Amplitude noise level ``s`` giving the requested SNR in dB."""
    clean = np.asarray(clean, dtype=np.float64)
    total = clean.sum()
    if not total > 0:
        raise ValueError("measurements are identically zero; SNR is undefined")
    n, m = clean.shape[0], clean.shape[1]
    return float(np.sqrt(10.0 ** (-snr / 10.0) * total / (n * m * m)))


def corrupt(clean, noise, rng):
    """Apply `noise` to the clean intensity stack `clean`.

    Gaussian noise is added to the amplitudes and the result squared.
    Poisson noise samples counts with mean ``zeta**2 * clean``, i.e. the
    intensities of the object scaled by ``zeta``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if noise.kind == "none":
        return clean.copy()
    if noise.kind == "gaussian":
        s = gaussian_noise_sigma(clean, noise.snr)
        return (np.sqrt(clean) + s * rng.standard_normal(clean.shape)) ** 2
    lam = noise.zeta ** 2 * clean
    big = lam > POISSON_GAUSS_CUTOFF
    out = np.empty_like(lam)
    out[~big] = rng.poisson(lam[~big])
    if big.any():
        approx = lam[big] + np.sqrt(lam[big]) * rng.standard_normal(int(big.sum()))
        out[big] = np.maximum(np.rint(approx), 0.0)
    return out


def measure_snr(noisy, clean):
    """SNR in dB of noisy amplitudes against clean ones; ``inf`` when identical."""
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    den = clean.sum()
    if not den > 0:
        raise ValueError("clean measurements are identically zero")
    num = np.sum((np.sqrt(noisy) - np.sqrt(clean)) ** 2)
    if num == 0:
        return float("inf")
    return float(-10.0 * np.log10(num / den))


def rasters_to_field(mag8, phase8, mag_range=(0.3, 1.0), phase_range=(-np.pi / 2, np.pi / 2)):
    """Map two 8-bit rasters affinely onto magnitude and phase ranges."""
    mag8 = np.asarray(mag8, dtype=np.float64)
    phase8 = np.asarray(phase8, dtype=np.float64)
    if mag8.shape != phase8.shape:
        raise ValueError(f"magnitude {mag8.shape} and phase {phase8.shape} rasters differ in size")
    lo, hi = mag_range
    plo, phi = phase_range
    if not 0 <= lo <= hi:
        raise ValueError(f"invalid magnitude range {mag_range}")
    if not -np.pi < plo <= phi <= np.pi:
        raise ValueError(f"phase range {phase_range} must lie within (-pi, pi]")
    mag = lo + (hi - lo) * mag8 / 255.0
    phase = plo + (phi - plo) * phase8 / 255.0
    return mag * np.exp(1j * phase)


def field_to_rasters(z, mag_range=(0.3, 1.0), phase_range=(-np.pi / 2, np.pi / 2)):
    """Inverse of :func:`rasters_to_field` (values rounded to 8 bits)."""
    lo, hi = mag_range
    plo, phi = phase_range
    mag8 = np.rint(255.0 * (np.abs(z) - lo) / (hi - lo)) if hi > lo else np.zeros(np.shape(z))
    phase8 = np.rint(255.0 * (np.angle(z) - plo) / (phi - plo)) if phi > plo else np.zeros(np.shape(z))
    return np.clip(mag8, 0, 255), np.clip(phase8, 0, 255)


def load_ground_truth(magnitude_file, phase_file, mag_range=(0.3, 1.0),
                      phase_range=(-np.pi / 2, np.pi / 2)):
    """Compose a complex object from magnitude and phase PGM files."""
    return rasters_to_field(formats.read_pgm(magnitude_file), formats.read_pgm(phase_file),
                            mag_range, phase_range)


def phantom_rasters(n):
    """Piecewise-constant 8-bit magnitude and phase test rasters of size ``n x n``."""
    yy, xx = (np.mgrid[0:n, 0:n] + 0.5) / n
    mag = np.full((n, n), 200.0)
    mag[(np.abs(xx - 0.3) < 0.18) & (np.abs(yy - 0.3) < 0.12)] = 40.0
    mag[(xx - 0.68) ** 2 + (yy - 0.35) ** 2 < 0.16 ** 2] = 255.0
    mag[((xx - 0.5) / 0.3) ** 2 + ((yy - 0.75) / 0.13) ** 2 < 1] = 110.0
    mag[(np.abs(xx - 0.78) < 0.05) & (np.abs(yy - 0.72) < 0.2)] = 0.0

    phase = np.full((n, n), 128.0)
    phase[(xx - 0.35) ** 2 + (yy - 0.62) ** 2 < 0.2 ** 2] = 230.0
    phase[(np.abs(xx - 0.7) < 0.14) & (np.abs(yy - 0.3) < 0.2)] = 30.0
    phase[(np.abs(xx + yy - 1.0) < 0.06) & (np.abs(xx - yy) < 0.5)] = 180.0
    return mag, phase


def phantom_object(n, mag_range=(0.3, 1.0), phase_range=(-np.pi / 2, np.pi / 2)):
    return rasters_to_field(*phantom_rasters(n), mag_range, phase_range)

"""Reconstruction quality: scale/translation alignment, SSIM and KKT residuals."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .estimators import kkt_gradients, primal_residuals

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class AlignmentResult:
    zeta: complex
    shift: tuple
    aligned: np.ndarray
    residual: float


def align(recon, truth, search_radius=5):
    """Best complex scale and circular shift mapping `recon` onto `truth`.

    For every shift ``t`` with ``|t_k| <= search_radius`` the optimal scale
    is ``<truth, roll(recon, t)> / ||recon||^2``.  The returned ``shift`` is
    the ``t`` passed to ``np.roll``, so ``aligned = zeta * np.roll(recon, t)``.
    Ties go to the lexicographically smallest ``(row, col)``.
    """
    recon = np.asarray(recon, dtype=np.complex128)
    truth = np.asarray(truth, dtype=np.complex128)
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {truth.shape}")
    if search_radius < 0:
        raise ValueError("search_radius must be nonnegative")
    nrm2 = np.vdot(recon, recon).real
    if nrm2 == 0:
        raise ValueError("cannot align an all-zero reconstruction")
    best = None
    rng = range(-search_radius, search_radius + 1)
    for dr in rng:
        for dc in rng:
            s = np.roll(recon, (dr, dc), axis=(0, 1))
            zeta = np.vdot(s, truth) / nrm2
            res = float(np.sum(np.abs(zeta * s - truth) ** 2))
            if best is None or res < best[0]:
                best = (res, zeta, (dr, dc), s)
    res, zeta, shift, s = best
    return AlignmentResult(complex(zeta), shift, zeta * s, res)


def _gauss_taps():
    x = np.arange(SSIM_WIN) - (SSIM_WIN - 1) / 2
    g = np.exp(-x ** 2 / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _local_mean(x):
    g = _gauss_taps()
    out = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    p = SSIM_WIN // 2
    return out[p:-p, p:-p]


def ssim(a, b, data_range=None):
    """Mean SSIM over all full 11x11 Gaussian windows (sigma 1.5).

    `b` is the reference: when `data_range` is not given it is
    ``max(b) - min(b)``, falling back to 1 for a constant reference.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"images must be at least {SSIM_WIN}x{SSIM_WIN}")
    L = float(b.max() - b.min()) if data_range is None else float(data_range)
    if L <= 0:
        L = 1.0
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    mu_a, mu_b = _local_mean(a), _local_mean(b)
    var_a = _local_mean(a * a) - mu_a ** 2
    var_b = _local_mean(b * b) - mu_b ** 2
    cov = _local_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def mag_phase_ssim(recon, truth, search_radius=5):
    """Align, then SSIM of magnitudes and of principal-value phases."""
    al = align(recon, truth, search_radius)
    return (ssim(np.abs(al.aligned), np.abs(truth)),
            ssim(np.angle(al.aligned), np.angle(truth)))


@dataclass
class KktResiduals:
    r_u: float
    r_v: float
    r_omega: float
    r_z: float


def kkt_residuals(omega, z, u, lam, v, y, scans, beta1, beta2):
    """Primal feasibility and full-gradient norms of the augmented Lagrangian."""
    r_u, r_v = primal_residuals(omega, z, u, v, scans)
    g_omega, g_z = kkt_gradients(omega, z, u, lam, v, y, scans, beta1, beta2)
    return KktResiduals(r_u, r_v, float(np.linalg.norm(g_omega)), float(np.linalg.norm(g_z)))

"""Gradient estimators and exact solvers for the probe and object subproblems.

All routines work directly on window slices; ``u`` and ``lam`` are ``(N, m, m)``
stacks of Fourier-domain auxiliaries and multipliers, ``v`` and ``y`` are
``(2, h, w)`` gradient pairs.  ``batch`` is a sorted sequence of scan indices;
reductions over it run in that order so results are reproducible bit for bit.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .grid import divergence_adjoint, fft2_unitary, forward_diff, ifft2_unitary, laplacian

GUARD = 1e-12


class SingularWeightError(ZeroDivisionError):
    """An illumination weight or normal-equation denominator vanished."""


def _guard(denom, what):
    top = np.max(denom)
    if not top > 0:
        raise SingularWeightError(f"{what}: denominator is identically zero")
    small = denom <= GUARD * top
    if small.any():
        idx = tuple(int(i) for i in np.argwhere(small)[0])
        raise SingularWeightError(f"{what}: denominator vanishes at {idx} "
                                  f"({int(small.sum())} entries below {GUARD:g} * max)")


def _check_batch(batch):
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("empty batch")
    return batch


def target(u_j, lam_j, beta1):
    """``F^-1(u_j + lam_j / beta1)``: the exit wave the auxiliaries ask for."""
    return ifft2_unitary(u_j + lam_j / beta1)


def grad_G_j(omega, z, u_j, lam_j, offset, beta1):
    """Gradient in the probe of ``beta1/2 || target_j - omega * S_j z ||^2``."""
    m = omega.shape[0]
    r, c = offset
    s = z[r:r + m, c:c + m]
    return -beta1 * np.conj(s) * (target(u_j, lam_j, beta1) - omega * s)


def omega_sgd_estimator(omega, z, u, lam, scans, batch, beta1):
    batch = _check_batch(batch)
    g = np.zeros_like(omega)
    for j in batch:
        g += grad_G_j(omega, z, u[j], lam[j], scans.offsets[j], beta1)
    return g / len(batch)


def illumination_phi(window, gamma_omega):
    """PIE-style probe weights ``1 / ((1-g)|s|^2 + g max|s|^2)`` for one object window."""
    a2 = np.abs(window) ** 2
    denom = (1.0 - gamma_omega) * a2 + gamma_omega * a2.max()
    _guard(denom, "illumination weight")
    return 1.0 / denom


def omega_pie_estimator(omega, z, u, lam, scans, batch, beta1, gamma_omega):
    batch = _check_batch(batch)
    g = np.zeros_like(omega)
    for j in batch:
        phi = illumination_phi(scans.window(z, j), gamma_omega)
        g += phi * grad_G_j(omega, z, u[j], lam[j], scans.offsets[j], beta1)
    return g / len(batch)


def grad_omega_full(omega, z, u, lam, scans, beta1):
    """Full gradient of the augmented Lagrangian in the probe."""
    return len(scans) * omega_sgd_estimator(omega, z, u, lam, scans, range(len(scans)), beta1)


@dataclass
class BatchResiduals:
    """Per-scan object-gradient pieces ``A_j`` (kept as windows) and the shared term ``B``."""

    windows: dict
    B: np.ndarray
    offsets: np.ndarray
    m: int

    def embedded(self, j):
        """``A_j`` on the full object grid (zero outside window ``j``)."""
        out = np.zeros_like(self.B)
        r, c = self.offsets[j]
        out[r:r + self.m, c:c + self.m] = self.windows[j]
        return out


def compute_B(z, v, y, beta2):
    return -beta2 * (divergence_adjoint(v + y / beta2) + laplacian(z))


def compute_A_B(omega, z, u, lam, v, y, scans, batch, beta1, beta2):
    batch = _check_batch(batch)
    windows = {}
    for j in batch:
        s = scans.window(z, j)
        windows[int(j)] = -beta1 * np.conj(omega) * (target(u[j], lam[j], beta1) - omega * s)
    return BatchResiduals(windows, compute_B(z, v, y, beta2), scans.offsets, scans.m)


def psi_window(omega, gamma_z):
    """Object weights ``Psi`` indexed by probe coordinate (same for every scan)."""
    a2 = np.abs(omega) ** 2
    denom = (1.0 - gamma_z) * a2 + gamma_z * a2.max()
    _guard(denom, "object illumination weight")
    return 1.0 / denom


def psi_factor(omega, offset, pixel, gamma_z):
    """Weight ``Psi_{i,j}`` for object `pixel` seen through the window at `offset`."""
    k = (pixel[0] - offset[0], pixel[1] - offset[1])
    m = omega.shape[0]
    if not (0 <= k[0] < m and 0 <= k[1] < m):
        raise ValueError(f"pixel {pixel} is outside the window at {tuple(offset)}")
    return float(psi_window(omega, gamma_z)[k])


def _z_estimator(res, scans, batch, weight):
    batch = _check_batch(batch)
    acc = np.zeros_like(res.B)
    hits = np.zeros(res.B.shape, dtype=np.int64)
    b_share = res.B / scans.coverage
    for j in batch:
        rs, cs = scans.slices(j)
        term = res.windows[int(j)] + b_share[rs, cs]
        acc[rs, cs] += term if weight is None else weight * term
        hits[rs, cs] += 1
    out = np.zeros_like(acc)
    seen = hits > 0
    out[seen] = acc[seen] / hits[seen]
    return out


def z_sgd_estimator(res, scans, batch):
    """Per-pixel average of ``A_j + B / |N_i|`` over the batch scans covering the pixel."""
    return _z_estimator(res, scans, batch, None)


def z_pie_estimator(res, omega, scans, batch, gamma_z):
    return _z_estimator(res, scans, batch, psi_window(omega, gamma_z))


def grad_z_full(omega, z, u, lam, v, y, scans, beta1, beta2):
    """Full gradient of the augmented Lagrangian in the object."""
    res = compute_A_B(omega, z, u, lam, v, y, scans, range(len(scans)), beta1, beta2)
    g = res.B.copy()
    for j in range(len(scans)):
        rs, cs = scans.slices(j)
        g[rs, cs] += res.windows[j]
    return g


def exact_omega_solve(z, u, lam, scans, beta1):
    """Minimize the probe subproblem exactly (diagonal normal equations)."""
    num = np.zeros((scans.m, scans.m), dtype=np.complex128)
    den = np.zeros((scans.m, scans.m))
    for j in range(len(scans)):
        s = scans.window(z, j)
        num += np.conj(s) * target(u[j], lam[j], beta1)
        den += np.abs(s) ** 2
    _guard(den, "probe normal equations")
    return num / den


def illumination_weight(omega, scans):
    """``sum_j S_j^T |omega|^2``: diagonal of the data term in the object system."""
    w = np.zeros(scans.shape)
    a2 = np.abs(omega) ** 2
    for j in range(len(scans)):
        rs, cs = scans.slices(j)
        w[rs, cs] += a2
    return w


def z_operator(z, weight, beta1, beta2):
    """``(beta1 sum_j P_j^* P_j - beta2 Laplacian) z`` with the data part as a diagonal weight."""
    return beta1 * weight * z - beta2 * laplacian(z)


def z_rhs(omega, u, lam, v, y, scans, beta1, beta2):
    rhs = beta2 * divergence_adjoint(v + y / beta2).astype(np.complex128)
    for j in range(len(scans)):
        rs, cs = scans.slices(j)
        rhs[rs, cs] += beta1 * np.conj(omega) * target(u[j], lam[j], beta1)
    return rhs


@dataclass
class SolveInfo:
    converged: bool
    iterations: int
    relative_residual: float


def exact_z_solve(omega, u, lam, v, y, scans, beta1, beta2, z0=None, tol=1e-8, max_iter=500):
    """Solve the object normal equations by unpreconditioned conjugate gradients.

    Returns
    -------
    (ndarray, SolveInfo)
    """
    shape = scans.shape
    weight = illumination_weight(omega, scans)
    rhs = z_rhs(omega, u, lam, v, y, scans, beta1, beta2)
    return solve_z_system(weight, rhs, beta1, beta2, z0=z0, tol=tol, max_iter=max_iter, shape=shape)


def solve_z_system(weight, rhs, beta1, beta2, z0=None, tol=1e-8, max_iter=500, shape=None):
    shape = rhs.shape if shape is None else shape
    size = shape[0] * shape[1]

    def matvec(x):
        return z_operator(x.reshape(shape), weight, beta1, beta2).ravel()

    op = LinearOperator((size, size), matvec=matvec, dtype=np.complex128)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x0 = None if z0 is None else np.asarray(z0, dtype=np.complex128).ravel()
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return np.zeros(shape, dtype=np.complex128), SolveInfo(True, 0, 0.0)
    x, _ = cg(op, rhs.ravel(), x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, callback=count)
    z = x.reshape(shape)
    rel = float(np.linalg.norm(z_operator(z, weight, beta1, beta2) - rhs) / bnorm)
    return z, SolveInfo(rel <= tol, iters, rel)


def kkt_gradients(omega, z, u, lam, v, y, scans, beta1, beta2):
    """Full probe and object gradients of the augmented Lagrangian."""
    return (grad_omega_full(omega, z, u, lam, scans, beta1),
            grad_z_full(omega, z, u, lam, v, y, scans, beta1, beta2))


def primal_residuals(omega, z, u, v, scans):
    """``max_j ||u_j - F(omega S_j z)||`` and ``||v - grad z||``."""
    r_u = 0.0
    for j in range(len(scans)):
        r_u = max(r_u, float(np.linalg.norm(u[j] - fft2_unitary(omega * scans.window(z, j)))))
    return r_u, float(np.linalg.norm(v - forward_diff(z)))

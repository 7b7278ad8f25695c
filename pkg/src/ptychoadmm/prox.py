"""Closed-form proximal operators for the fidelity and regularization splits."""

import numpy as np

from .grid import forward_diff

FIDELITIES = ("agm", "ipm")
REGULARIZERS = ("aitv", "isotv", "none")

_TINY_INTENSITY = 1e-300


def csign(w):
    """Complex sign with ``csign(0) = 1``."""
    w = np.asarray(w, dtype=np.complex128)
    a = np.abs(w)
    out = np.ones_like(w)
    nz = a > 0
    out[nz] = w[nz] / a[nz]
    return out


def prox_agm(w, d, beta1):
    """Prox of ``(1/beta1) * 0.5 * || |u| - sqrt(d) ||^2`` evaluated at `w`."""
    d = np.asarray(d, dtype=np.float64)
    mag = (np.sqrt(d) + beta1 * np.abs(w)) / (1.0 + beta1)
    return mag * csign(w)


def prox_ipm(w, d, beta1):
    """Prox of ``(1/beta1) * 0.5 * <|u|^2 - d log|u|^2, 1>`` evaluated at `w`."""
    d = np.where(np.asarray(d, dtype=np.float64) < _TINY_INTENSITY, 0.0, d)
    bw = beta1 * np.abs(w)
    mag = (bw + np.sqrt(bw ** 2 + 4.0 * (1.0 + beta1) * d)) / (2.0 * (1.0 + beta1))
    return mag * csign(w)


def prox_fidelity(kind, w, d, beta1):
    if kind == "agm":
        return prox_agm(w, d, beta1)
    if kind == "ipm":
        return prox_ipm(w, d, beta1)
    raise ValueError(f"unknown fidelity {kind!r}")


def prox_l1_minus_al2(x, kappa, alpha, axis=-1):
    r"""Prox of :math:`\kappa(\|x\|_1 - \alpha\|x\|_2)` for complex vectors.

    The vectors run along `axis`; every other axis is batched.  When the
    largest entry lies in ``((1-alpha) kappa, kappa]`` the minimizer is
    1-sparse and the first maximal coordinate is kept.

    Parameters
    ----------
    x : array_like, complex
    kappa : float
        Threshold, must be positive.
    alpha : float
        Weight of the l2 term, in ``[0, 1]``.
    axis : int
        Axis holding the vector coordinates.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    ax = np.abs(x)
    amax = ax.max(axis=-1, keepdims=True)
    sgn = csign(x)
    out = np.zeros_like(x)

    # |x|_inf > kappa: soft threshold, then push the result out by alpha*kappa
    big = amax[..., 0] > kappa
    if big.any():
        xi = sgn[big] * np.maximum(ax[big] - kappa, 0.0)
        nrm = np.linalg.norm(xi, axis=-1, keepdims=True)
        out[big] = (nrm + alpha * kappa) * xi / nrm

    # (1-alpha) kappa < |x|_inf <= kappa: keep one coordinate
    mid = ~big & (amax[..., 0] > (1.0 - alpha) * kappa)
    if mid.any():
        xm = x[mid]
        k = np.argmax(np.abs(xm), axis=-1)
        rows = np.arange(len(xm))
        sparse = np.zeros_like(xm)
        sparse[rows, k] = (np.abs(xm[rows, k]) + (alpha - 1.0) * kappa) * csign(xm[rows, k])
        out[mid] = sparse
    return np.moveaxis(out, -1, axis)


def prox_group_l2(x, kappa, axis=-1):
    """Group shrinkage ``max(1 - kappa/||x||, 0) * x`` along `axis`."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    x = np.asarray(x, dtype=np.complex128)
    nrm = np.linalg.norm(x, axis=axis, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(nrm > kappa, 1.0 - kappa / nrm, 0.0)
    return factor * x


def regularizer_value(v, reg, alpha, lam):
    """``lam * (||v||_1 - alpha ||v||_{2,1})`` (AITV) or ``lam * ||v||_{2,1}`` (isoTV)."""
    if reg == "none" or lam == 0:
        return 0.0
    iso = np.sum(np.sqrt(np.abs(v[0]) ** 2 + np.abs(v[1]) ** 2))
    if reg == "isotv":
        return lam * iso
    if reg == "aitv":
        return lam * (np.sum(np.abs(v)) - alpha * iso)
    raise ValueError(f"unknown regularizer {reg!r}")


def v_update(z, y, beta2, lam, reg="aitv", alpha=0.8):
    """Per-pixel prox of the regularizer at ``grad(z) - y / beta2``."""
    x = forward_diff(z) - y / beta2
    if reg == "none" or lam == 0:
        return x
    kappa = lam / beta2
    if reg == "aitv":
        return prox_l1_minus_al2(x, kappa, alpha, axis=0)
    if reg == "isotv":
        return prox_group_l2(x, kappa, axis=0)
    raise ValueError(f"unknown regularizer {reg!r}")

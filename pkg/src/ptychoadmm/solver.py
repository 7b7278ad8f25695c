"""Stochastic ADMM for (blind) ptychography with AITV or isoTV regularization.

One iteration samples a minibatch of scans and updates, in order, the
Fourier auxiliaries ``u``, the probe, the gradient auxiliary ``v``, the
object ``z`` and finally the multipliers ``lam`` (batch scans only) and
``y``.  The ``"exact"`` estimator runs the deterministic full-batch variant
in which the probe and object subproblems are solved to optimality.
"""

import dataclasses
import hashlib
import io
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .formats import FormatError
from .grid import fft2_unitary, forward_diff
from .metrics import kkt_residuals, mag_phase_ssim
from .prox import FIDELITIES, REGULARIZERS, prox_fidelity, regularizer_value, v_update
from .simulate import exit_spectra

log = logging.getLogger(__name__)

ESTIMATORS = ("sgd", "pie", "exact")
CKP_MAGIC = b"CKP1"


class NumericalAbort(FloatingPointError):
    """Non-finite values appeared in the solver state.

    ``checkpoint`` holds the last state known to be finite (start of the
    failing epoch).
    """

    def __init__(self, message, checkpoint, epoch, iteration):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    fidelity: str = "agm"
    regularizer: str = "aitv"
    alpha: float = 0.8
    lam: float = 0.0
    beta1: float = 0.25
    beta2: float = 0.25
    batch_size: int = 5
    gamma_omega: float = 0.025
    gamma_z: float = 0.1
    estimator: str = "pie"
    blind: bool = False
    epochs: int = 100
    delta_z: float = 2.0
    delta_omega: float = 1e-3
    seed: int = 0
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    zeta: float = 1.0
    u_init: str = "zero"
    kkt_every: int = 10

    def __post_init__(self):
        if self.fidelity not in FIDELITIES:
            raise ValueError(f"fidelity must be one of {FIDELITIES}, got {self.fidelity!r}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.u_init not in ("zero", "forward"):
            raise ValueError(f"u_init must be 'zero' or 'forward', got {self.u_init!r}")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("penalty parameters must be positive")
        if not (0 <= self.gamma_omega <= 1 and 0 <= self.gamma_z <= 1):
            raise ValueError("gamma_omega and gamma_z must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not (self.delta_z > 0 and self.delta_omega > 0):
            raise ValueError("step sizes must be positive")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.kkt_every < 1:
            raise ValueError("kkt_every must be at least 1")

    def digest(self):
        """SHA-256 over the canonical field listing."""
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in dataclasses.fields(self))
        return hashlib.sha256(text.encode()).digest()


@dataclass(frozen=True)
class StepSchedule:
    """Piecewise-constant step sizes scaled by ``sqrt(batch_size)``.

    Both steps drop by `drop` after half and after three quarters of the
    epochs (epochs are counted from 1).
    """

    epochs: int
    batch_size: int
    delta_z: float = 2.0
    delta_omega: float = 1e-3
    drop: float = 0.1

    def phase(self, epoch):
        if epoch <= self.epochs / 2:
            return 0
        if epoch <= 3 * self.epochs / 4:
            return 1
        return 2

    def at(self, epoch):
        """``(delta_z, delta_omega)`` used during `epoch`."""
        f = math.sqrt(self.batch_size) * self.drop ** self.phase(epoch)
        return self.delta_z * f, self.delta_omega * f

    @classmethod
    def from_config(cls, config, n_scans):
        return cls(config.epochs, min(config.batch_size, n_scans), config.delta_z, config.delta_omega)


@dataclass
class SolverState:
    u: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    y: np.ndarray
    iteration: int = 0
    epoch: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def copy(self):
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return SolverState(self.u.copy(), self.omega.copy(), self.v.copy(), self.z.copy(),
                           self.lam.copy(), self.y.copy(), self.iteration, self.epoch, rng)

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in (self.u, self.omega, self.v, self.z, self.lam, self.y))


def default_object_init(config, shape):
    scale = config.zeta if config.fidelity == "ipm" else 1.0
    return np.full(shape, scale * (1 + 1j) / np.sqrt(2))


def init_state(config, scans, measurements, omega0, z0=None):
    """Initial ADMM state: ``u = lam`` (zeros, or the forward spectra), ``v = y = grad z0``."""
    n = len(scans)
    if measurements.shape != (n, scans.m, scans.m):
        raise ValueError(f"measurements {measurements.shape} do not match {n} scans of size {scans.m}")
    omega = np.array(omega0, dtype=np.complex128)
    if omega.shape != (scans.m, scans.m):
        raise ValueError(f"probe shape {omega.shape} does not match window size {scans.m}")
    z = default_object_init(config, scans.shape) if z0 is None else np.array(z0, dtype=np.complex128)
    if z.shape != scans.shape:
        raise ValueError(f"object shape {z.shape} does not match scan grid {scans.shape}")
    if config.u_init == "forward":
        u = exit_spectra(z, omega, scans)
    else:
        u = np.zeros((n, scans.m, scans.m), dtype=np.complex128)
    g = forward_diff(z)
    return SolverState(u=u, omega=omega, v=g.copy(), z=z, lam=u.copy(), y=g.copy(),
                       rng=np.random.default_rng(config.seed))


def sample_batch(rng, n, b):
    """Uniform size-`b` subset of ``range(n)`` without replacement, sorted."""
    if not 1 <= b <= n:
        raise ValueError(f"batch size {b} must lie in [1, {n}]")
    if b == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=b, replace=False))



def u_update(state, scans, batch, measurements, fidelity, beta1):
    """Prox step on the Fourier auxiliaries of the batch scans; others stay frozen."""
    for j in batch:
        w = fft2_unitary(state.omega * scans.window(state.z, j)) - state.lam[j] / beta1
        state.u[j] = prox_fidelity(fidelity, w, measurements[j], beta1)


def omega_update(state, scans, batch, config, delta_omega):
    if not config.blind:
        return
    if config.estimator == "exact":
        state.omega = est.exact_omega_solve(state.z, state.u, state.lam, scans, config.beta1)
        return
    if config.estimator == "pie":
        g = est.omega_pie_estimator(state.omega, state.z, state.u, state.lam, scans, batch,
                                    config.beta1, config.gamma_omega)
    else:
        g = est.omega_sgd_estimator(state.omega, state.z, state.u, state.lam, scans, batch,
                                    config.beta1)
    state.omega = state.omega - delta_omega * g


def z_update(state, scans, batch, config, delta_z):
    """Object step.  Returns the CG report in exact mode, else ``None``."""
    if config.estimator == "exact":
        z, info = est.exact_z_solve(state.omega, state.u, state.lam, state.v, state.y, scans,
                                    config.beta1, config.beta2, z0=state.z,
                                    tol=config.cg_tol, max_iter=config.cg_max_iter)
        state.z = z
        return info
    res = est.compute_A_B(state.omega, state.z, state.u, state.lam, state.v, state.y, scans,
                          batch, config.beta1, config.beta2)
    if config.estimator == "pie":
        g = est.z_pie_estimator(res, state.omega, scans, batch, config.gamma_z)
    else:
        g = est.z_sgd_estimator(res, scans, batch)
    state.z = state.z - delta_z * g
    return None


def multiplier_update(state, scans, batch, beta1, beta2):
    for j in batch:
        state.lam[j] = state.lam[j] + beta1 * (
            state.u[j] - fft2_unitary(state.omega * scans.window(state.z, j)))
    state.y = state.y + beta2 * (state.v - forward_diff(state.z))


def iterate(state, scans, measurements, config, batch, delta_z, delta_omega):
    """One ADMM iteration on `batch` (u, probe, v, z, then multipliers)."""
    u_update(state, scans, batch, measurements, config.fidelity, config.beta1)
    omega_update(state, scans, batch, config, delta_omega)
    state.v = v_update(state.z, state.y, config.beta2, config.lam, config.regularizer, config.alpha)
    info = z_update(state, scans, batch, config, delta_z)
    multiplier_update(state, scans, batch, config.beta1, config.beta2)
    state.iteration += 1
    return info


def fidelity_term(kind, g, f):
    """``B(g, f)`` summed over entries: AGM or IPM data misfit."""
    if kind == "agm":
        return 0.5 * float(np.sum((np.sqrt(g) - np.sqrt(f)) ** 2))
    pos = f > 0
    if np.any(g[pos] <= 0):
        log.warning("IPM fidelity undefined: zero intensity where data is positive")
        return math.inf
    return 0.5 * float(np.sum(g) - np.sum(f[pos] * np.log(g[pos])))


def objective_terms(state, config, scans, measurements):
    """``(fidelity, lagrangian)`` of the current state.

    The fidelity is the data misfit of the current object and probe; the
    Lagrangian is the full augmented Lagrangian including multipliers.
    """
    spectra = exit_spectra(state.z, state.omega, scans)
    fid = fidelity_term(config.fidelity, np.abs(spectra) ** 2, measurements)
    lag = fidelity_term(config.fidelity, np.abs(state.u) ** 2, measurements)
    r = state.u - spectra
    lag += float(np.sum((np.conj(state.lam) * r).real)) + 0.5 * config.beta1 * float(np.sum(np.abs(r) ** 2))
    rv = state.v - forward_diff(state.z)
    lag += regularizer_value(state.v, config.regularizer, config.alpha, config.lam)
    lag += float(np.sum((np.conj(state.y) * rv).real)) + 0.5 * config.beta2 * float(np.sum(np.abs(rv) ** 2))
    return fid, lag


def lagrangian_eval(state, config, scans, measurements):
    return objective_terms(state, config, scans, measurements)[1]


METRIC_COLUMNS = ("epoch", "iter", "fidelity", "lagrangian", "mag_ssim", "phase_ssim",
                  "kkt_u", "kkt_v", "kkt_omega", "kkt_z", "wall_seconds")


@dataclass
class MetricsRow:
    epoch: int
    iter: int
    fidelity: float
    lagrangian: float
    mag_ssim: float = math.nan
    phase_ssim: float = math.nan
    kkt_u: float = math.nan
    kkt_v: float = math.nan
    kkt_omega: float = math.nan
    kkt_z: float = math.nan
    wall_seconds: float = 0.0


@dataclass
class MetricsHistory:
    rows: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def to_csv(self):
        lines = [",".join(METRIC_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(repr(getattr(r, c)) if isinstance(getattr(r, c), int)
                                  else repr(float(getattr(r, c))) for c in METRIC_COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = text.strip().splitlines()
        if tuple(lines[0].split(",")) != METRIC_COLUMNS:
            raise ValueError("unexpected metrics header")
        rows = []
        for line in lines[1:]:
            vals = line.split(",")
            rows.append(MetricsRow(int(vals[0]), int(vals[1]), *(float(v) for v in vals[2:])))
        return cls(rows)


@dataclass
class RunResult:
    omega: np.ndarray
    z: np.ndarray
    history: MetricsHistory
    state: SolverState
    cg_failures: int = 0


def iterations_per_epoch(config, n_scans):
    return 1 if config.estimator == "exact" else math.ceil(n_scans / min(config.batch_size, n_scans))


def run(config, scans, measurements, omega0=None, z0=None, ground_truth=None, state=None,
        search_radius=5, record_timing=True, checkpoint_every=0, on_checkpoint=None):
    """Run the solver for ``config.epochs`` epochs.

    Parameters
    ----------
    config : SolverConfig
    scans : ScanSet
    measurements : ndarray, shape (N, m, m)
    omega0, z0 : ndarray, optional
        Initial probe (required unless `state` is given) and object.
    ground_truth : ndarray, optional
        When given, magnitude and phase SSIM are recorded every epoch.
    state : SolverState, optional
        Resume from this state; epochs already done are skipped.
    record_timing : bool
        When false the ``wall_seconds`` column is written as 0 so the
        metrics file is byte-reproducible.
    checkpoint_every : int
        Call ``on_checkpoint(state)`` after every multiple of this many epochs.
    """
    n = len(scans)
    if config.batch_size > n:
        raise ValueError(f"batch size {config.batch_size} exceeds the {n} scans")
    measurements = np.asarray(measurements, dtype=np.float64)
    if state is None:
        if omega0 is None:
            raise ValueError("an initial probe is required")
        state = init_state(config, scans, measurements, omega0, z0)
    else:
        state = state.copy()
    schedule = StepSchedule.from_config(config, n)
    b = n if config.estimator == "exact" else config.batch_size
    per_epoch = iterations_per_epoch(config, n)
    history = MetricsHistory()
    cg_failures = 0
    t0 = time.perf_counter()

    for epoch in range(state.epoch + 1, config.epochs + 1):
        good = state.copy()
        dz, dw = schedule.at(epoch)
        for _ in range(per_epoch):
            batch = sample_batch(state.rng, n, b)
            info = iterate(state, scans, measurements, config, batch, dz, dw)
            if info is not None and not info.converged:
                cg_failures += 1
                log.warning("CG did not converge at iteration %d (relative residual %.3g)",
                            state.iteration, info.relative_residual)
            if not state.is_finite():
                raise NumericalAbort(f"non-finite state at epoch {epoch}, iteration {state.iteration}",
                                     good, epoch, state.iteration)
        state.epoch = epoch

        fid, lag = objective_terms(state, config, scans, measurements)
        row = MetricsRow(epoch, state.iteration, fid, lag)
        if ground_truth is not None:
            row.mag_ssim, row.phase_ssim = mag_phase_ssim(state.z, ground_truth, search_radius)
        if epoch == 1 or epoch % config.kkt_every == 0 or epoch == config.epochs:
            k = kkt_residuals(state.omega, state.z, state.u, state.lam, state.v, state.y, scans,
                              config.beta1, config.beta2)
            row.kkt_u, row.kkt_v, row.kkt_omega, row.kkt_z = k.r_u, k.r_v, k.r_omega, k.r_z
        if record_timing:
            row.wall_seconds = time.perf_counter() - t0
        history.rows.append(row)
        log.debug("epoch %d fidelity %.6g lagrangian %.6g", epoch, fid, lag)
        if checkpoint_every and on_checkpoint is not None and epoch % checkpoint_every == 0:
            on_checkpoint(state.copy())

    return RunResult(state.omega.copy(), state.z.copy(), history, state, cg_failures)


def _pack_array(buf, a):
    a = np.asarray(a, dtype=np.complex128)
    buf.write(struct.pack("<I", a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(a.astype("<c16").tobytes())


def _unpack_array(data, pos, path):
    if len(data) < pos + 4:
        raise FormatError(path, pos, "truncated array header")
    (ndim,) = struct.unpack_from("<I", data, pos)
    if ndim > 8:
        raise FormatError(path, pos, f"implausible array rank {ndim}")
    if len(data) < pos + 4 + 4 * ndim:
        raise FormatError(path, pos, "truncated array shape")
    shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
    pos += 4 + 4 * ndim
    count = int(np.prod(shape))
    if len(data) < pos + 16 * count:
        raise FormatError(path, pos, "truncated array data")
    a = np.frombuffer(data, dtype="<c16", count=count, offset=pos).astype(np.complex128).reshape(shape)
    return a, pos + 16 * count


def encode_checkpoint(state, config):
    buf = io.BytesIO()
    buf.write(CKP_MAGIC)
    buf.write(config.digest())
    for name in ("u", "omega", "v", "z", "lam", "y"):
        _pack_array(buf, getattr(state, name))
    buf.write(struct.pack("<QQ", state.iteration, state.epoch))
    rng = json.dumps(state.rng.bit_generator.state, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(rng)))
    buf.write(rng)
    return buf.getvalue()


def decode_checkpoint(data, config, path="<bytes>"):
    """Rebuild a :class:`SolverState`; the config digest must match."""
    if data[:4] != CKP_MAGIC:
        raise FormatError(path, 0, f"bad magic {data[:4]!r}, expected CKP1")
    if data[4:36] != config.digest():
        raise FormatError(path, 4, "checkpoint was written with a different solver configuration")
    pos = 36
    arrays = {}
    for name in ("u", "omega", "v", "z", "lam", "y"):
        arrays[name], pos = _unpack_array(data, pos, path)
    if len(data) < pos + 20:
        raise FormatError(path, pos, "truncated counters")
    iteration, epoch = struct.unpack_from("<QQ", data, pos)
    (nrng,) = struct.unpack_from("<I", data, pos + 16)
    pos += 20
    if pos + nrng != len(data):
        raise FormatError(path, min(pos + nrng, len(data)), "generator state length mismatch")
    try:
        rng_state = json.loads(data[pos:pos + nrng].decode())
        bitgen = getattr(np.random, rng_state["bit_generator"])()
        bitgen.state = rng_state
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise FormatError(path, pos, f"unreadable generator state: {exc}") from None
    return SolverState(rng=np.random.Generator(bitgen), iteration=iteration, epoch=epoch, **arrays)


def write_checkpoint(path, state, config):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(state, config))


def read_checkpoint(path, config):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), config, path)

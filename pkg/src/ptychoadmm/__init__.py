"""Stochastic ADMM reconstruction for ptychography with AITV regularization."""

from .grid import divergence_adjoint, embed_window, extract_window, fft2_unitary, forward_diff, ifft2_unitary
from .metrics import align, kkt_residuals, mag_phase_ssim, ssim
from .prox import prox_agm, prox_group_l2, prox_ipm, prox_l1_minus_al2, v_update
from .simulate import NoiseSpec, ScanSet, corrupt, forward_measure, make_probe, make_raster_scan
from .solver import SolverConfig, SolverState, StepSchedule, init_state, run

__version__ = "0.1.0"

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptychoadmm.formats import write_pgm
from ptychoadmm.simulate import (
    CoverageError,
    NoiseSpec,
    ScanSet,
    corrupt,
    exit_spectra,
    field_to_rasters,
    forward_measure,
    gaussian_noise_sigma,
    load_ground_truth,
    make_probe,
    make_raster_scan,
    measure_snr,
    perturb_probe,
    phantom_object,
    rasters_to_field,
)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture(scope="module")
def desk():
    n, m = 64, 32
    z = phantom_object(n)
    omega = make_probe("disk", m)
    scans = make_raster_scan(n, m, 5)
    return z, omega, scans, forward_measure(z, omega, scans)


# ---------------------------------------------------------------- probes

def test_flat_probe():
    np.testing.assert_array_equal(make_probe("flat", 4), np.ones((4, 4)))


def test_disk_probe_area():
    p = make_probe("disk", 64)
    count = np.count_nonzero(p)
    assert abs(count - np.pi * 32 ** 2) <= 0.05 * np.pi * 32 ** 2
    assert set(np.unique(np.abs(p))) == {0.0, 1.0}


def test_disk_probe_quadratic_phase():
    p = make_probe("disk", 16, curvature=1.0)
    assert np.allclose(np.abs(p[p != 0]), 1)
    assert np.ptp(np.angle(p[p != 0])) > 0.5


def test_gaussian_probe_wide_limit_is_flat():
    np.testing.assert_allclose(make_probe("gaussian", 32, width=1e5), 1, atol=1e-6)


@pytest.mark.parametrize("kw", [{"kind": "disk", "radius": 0}, {"kind": "gaussian", "width": -1.0},
                                {"kind": "square"}])
def test_probe_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        make_probe(m=8, **kw)


def test_perturb_probe_scale():
    rng = np.random.default_rng(0)
    p = make_probe("disk", 32)
    q = perturb_probe(p, 0.05, rng)
    rms = np.sqrt(np.mean(np.abs(q - p) ** 2))
    assert rms == pytest.approx(0.05, rel=0.1)
    np.testing.assert_array_equal(perturb_probe(p, 0.0, rng), p)


# ---------------------------------------------------------------- scans

def test_single_scan_when_sizes_equal():
    s = make_raster_scan(8, 8, 1)
    assert s.offsets.tolist() == [[0, 0]]
    assert np.all(s.coverage == 1)
    with pytest.raises(ValueError):
        make_raster_scan(8, 8, 3)


def test_desk_raster():
    s = make_raster_scan(64, 32, 5)
    pos = [0, 8, 16, 24, 32]
    assert s.offsets.tolist() == [[r, c] for r in pos for c in pos]
    cov = np.zeros((64, 64), int)
    for r, c in s.offsets:
        cov[r:r + 32, c:c + 32] += 1
    np.testing.assert_array_equal(s.coverage, cov)
    assert cov.min() >= 1


def test_full_scale_raster_arithmetic():
    s = make_raster_scan(348, 256, 10)
    assert len(s) == 100
    assert s.offsets.max() == 92


def test_raster_last_window_reaches_border():
    s = make_raster_scan(50, 16, 4)
    assert s.offsets[:, 0].max() + 16 == 50


def test_raster_gap_rejected():
    with pytest.raises(CoverageError):
        make_raster_scan(64, 8, 2)


def test_scanset_rejects_out_of_bounds_and_gaps():
    with pytest.raises(ValueError):
        ScanSet((8, 8), 4, [(0, 5)])
    with pytest.raises(CoverageError):
        ScanSet((8, 8), 4, [(0, 0), (4, 4)])


def test_covering():
    s = make_raster_scan(64, 32, 5)
    for pix in [(0, 0), (31, 31), (40, 10), (63, 63)]:
        expect = [j for j, (r, c) in enumerate(s.offsets)
                  if r <= pix[0] < r + 32 and c <= pix[1] < c + 32]
        assert s.covering(*pix).tolist() == expect
        assert len(expect) == s.coverage[pix]


# ---------------------------------------------------------------- forward model

def test_forward_impulse_flat_spectrum():
    m = 6
    z = np.zeros((m, m), complex)
    z[2, 3] = 1
    d = forward_measure(z, make_probe("flat", m), make_raster_scan(m, m, 1))
    np.testing.assert_allclose(d, 1 / m ** 2, rtol=1e-14)


def test_forward_parseval():
    rng = np.random.default_rng(4)
    z, om = crandn(rng, 20, 20), crandn(rng, 8, 8)
    s = make_raster_scan(20, 8, 3)
    d = forward_measure(z, om, s)
    for j in range(len(s)):
        e = np.sum(np.abs(om * s.window(z, j)) ** 2)
        assert abs(d[j].sum() - e) <= 1e-10 * e


def test_forward_naive_dft():
    rng = np.random.default_rng(8)
    z, om = crandn(rng, 6, 6), crandn(rng, 4, 4)
    s = make_raster_scan(6, 4, 2)
    k = np.arange(4)
    W = np.exp(-2j * np.pi * np.outer(k, k) / 4) / 2
    for j in range(len(s)):
        x = om * s.window(z, j)
        np.testing.assert_allclose(forward_measure(z, om, s)[j], np.abs(W @ x @ W.T) ** 2, atol=1e-12)


def test_forward_scale_equivariance():
    rng = np.random.default_rng(6)
    z, om = crandn(rng, 12, 12), crandn(rng, 6, 6)
    s = make_raster_scan(12, 6, 3)
    zeta = 0.3 - 1.7j
    np.testing.assert_allclose(forward_measure(zeta * z, om, s), abs(zeta) ** 2 * forward_measure(z, om, s),
                               rtol=1e-10)


def test_forward_rejects_mismatch():
    s = make_raster_scan(12, 6, 3)
    with pytest.raises(ValueError):
        forward_measure(np.ones((10, 10)), np.ones((6, 6)), s)


def test_exit_spectra_modulus(desk):
    z, om, s, d = desk
    np.testing.assert_allclose(np.abs(exit_spectra(z, om, s)) ** 2, d)


# ---------------------------------------------------------------- noise

def test_sigma_hand_value():
    assert gaussian_noise_sigma(np.ones((1, 1, 1)), 0.0) == pytest.approx(1.0)


def test_sigma_homogeneous_and_limit(desk):
    d = desk[3]
    assert gaussian_noise_sigma(4 * d, 40) == pytest.approx(2 * gaussian_noise_sigma(d, 40))
    assert gaussian_noise_sigma(d, 400) < 1e-15


def test_sigma_rejects_zero():
    with pytest.raises(ValueError):
        gaussian_noise_sigma(np.zeros((2, 3, 3)), 40)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("uniform")
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", snr=float("inf"))
    with pytest.raises(ValueError):
        NoiseSpec("poisson", zeta=0)


def test_corrupt_none_is_identity(desk):
    d = desk[3]
    out = corrupt(d, NoiseSpec("none"), np.random.default_rng(0))
    assert out.tobytes() == d.tobytes()


def test_corrupt_gaussian_vanishing_noise(desk):
    d = desk[3]
    out = corrupt(d, NoiseSpec("gaussian", snr=600), np.random.default_rng(0))
    np.testing.assert_allclose(out, d, rtol=1e-12, atol=1e-300)


def test_corrupt_gaussian_reproducible(desk):
    d = desk[3]
    a = corrupt(d, NoiseSpec("gaussian", 30), np.random.default_rng(7))
    b = corrupt(d, NoiseSpec("gaussian", 30), np.random.default_rng(7))
    assert a.tobytes() == b.tobytes()
    assert np.all(a >= 0)


def test_gaussian_snr_round_trip(desk):
    d = desk[3]
    snrs = [measure_snr(corrupt(d, NoiseSpec("gaussian", 40), np.random.default_rng(s)), d) for s in range(3)]
    assert abs(np.mean(snrs) - 40) <= 0.5


def test_poisson_counts_are_integers(desk):
    d = desk[3]
    out = corrupt(d, NoiseSpec("poisson", zeta=10), np.random.default_rng(1))
    assert np.all(out >= 0) and np.array_equal(out, np.rint(out))


def test_poisson_mean():
    clean = np.array([[[0.5, 3.0], [20.0, 1e-3]]])
    rng = np.random.default_rng(2)
    draws = np.array([corrupt(clean, NoiseSpec("poisson", zeta=1.0), rng) for _ in range(200)])
    se = np.sqrt(clean / 200)
    assert np.all(np.abs(draws.mean(0) - clean) <= 3 * se + 1e-12)


def test_poisson_concentration(desk):
    d = desk[3]
    rng = np.random.default_rng(3)
    devs = []
    for zeta in (1.0, 10.0, 100.0):
        total = zeta ** 2 * d.sum()
        devs.append(np.mean([abs(corrupt(d, NoiseSpec("poisson", zeta=zeta), rng).sum() - total) / total
                             for _ in range(100)]))
    assert devs[0] > devs[1] > devs[2]
    # relative deviation shrinks like 1/zeta
    assert devs[0] / devs[2] == pytest.approx(100, rel=0.5)


def test_poisson_large_intensity_fallback():
    clean = np.full((1, 2, 2), 1e9)
    out = corrupt(clean, NoiseSpec("poisson"), np.random.default_rng(0))
    assert np.all(np.abs(out - 1e9) < 10 * np.sqrt(1e9))
    assert np.array_equal(out, np.rint(out))


def test_measure_snr_identical_is_inf(desk):
    assert measure_snr(desk[3], desk[3]) == float("inf")


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10))
def test_measure_snr_scale_invariant(c):
    rng = np.random.default_rng(0)
    clean = rng.uniform(0.1, 2, (3, 4, 4))
    noisy = (np.sqrt(clean) + 0.05 * rng.standard_normal(clean.shape)) ** 2
    assert measure_snr(c ** 2 * noisy, c ** 2 * clean) == pytest.approx(measure_snr(noisy, clean), abs=1e-9)


# ---------------------------------------------------------------- ground truth

def test_ground_truth_constant_ones(tmp_path):
    write_pgm(tmp_path / "m.pgm", np.full((4, 5), 255))
    write_pgm(tmp_path / "p.pgm", np.zeros((4, 5)))
    z = load_ground_truth(tmp_path / "m.pgm", tmp_path / "p.pgm", phase_range=(0.0, 1.0))
    np.testing.assert_array_equal(z, np.ones((4, 5)))


def test_ground_truth_quarter_turn(tmp_path):
    write_pgm(tmp_path / "m.pgm", np.full((3, 3), 255))
    write_pgm(tmp_path / "p.pgm", np.full((3, 3), 255))
    z = load_ground_truth(tmp_path / "m.pgm", tmp_path / "p.pgm")
    np.testing.assert_allclose(z, 1j, atol=1e-12)


def test_ground_truth_round_trip(tmp_path):
    z = phantom_object(24)
    mag8, ph8 = field_to_rasters(z)
    write_pgm(tmp_path / "m.pgm", mag8)
    write_pgm(tmp_path / "p.pgm", ph8)
    np.testing.assert_allclose(load_ground_truth(tmp_path / "m.pgm", tmp_path / "p.pgm"), z, atol=1e-9)


def test_ground_truth_rejects_mismatch_and_bad_range():
    with pytest.raises(ValueError):
        rasters_to_field(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        rasters_to_field(np.zeros((3, 3)), np.zeros((3, 3)), phase_range=(-4.0, 0.0))


def test_phantom_ranges():
    z = phantom_object(64)
    assert 0.3 - 1e-12 <= np.abs(z).min() and np.abs(z).max() <= 1 + 1e-12
    assert np.abs(np.angle(z)).max() <= np.pi / 2 + 1e-12

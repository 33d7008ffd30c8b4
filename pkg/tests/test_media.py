"""Random two-phase media: covariance, sampling, thresholding."""

import numpy as np
import pytest
import scipy.stats

from microrom import (ConfigError, GrfSampler, GrfSpec, PhaseSpec,
                      StructuredGrid, level_cut, make_microstructure,
                      sample_cut_threshold)
from microrom.media import covariance


def test_phase_spec_validation():
    ps = PhaseSpec(1.0, 10.0)
    assert ps.contrast == 10.0
    PhaseSpec(2.0, 2.0)  # equal phases are allowed
    with pytest.raises(ConfigError):
        PhaseSpec(0.0, 1.0)
    with pytest.raises(ConfigError):
        PhaseSpec(3.0, 1.0)


def test_covariance_values():
    pts = np.array([[0.0], [0.3], [1.0]])
    K = covariance(pts, 0.5)
    assert K[0, 0] == 1.0
    assert np.isclose(K[0, 1], np.exp(-0.09 / 0.25))
    assert np.isclose(K[0, 2], np.exp(-4.0))
    assert np.allclose(K, K.T)


def test_level_cut_assignment():
    phases = PhaseSpec(1.0, 10.0)
    lam = level_cut(np.array([-1.0, 0.0, 1.0]), 0.0, phases)
    # strictly-below goes lo, the threshold itself hi
    assert np.array_equal(lam, [1.0, 10.0, 10.0])


def test_cut_threshold_pushforward():
    # the threshold is the normal quantile of one uniform draw
    rng = np.random.default_rng(0)
    u_rng = np.random.default_rng(0)
    f_cut = sample_cut_threshold(rng)
    assert np.isclose(f_cut, scipy.stats.norm.ppf(u_rng.random()))


def test_sampler_is_deterministic():
    grid = StructuredGrid.make(1, (32,))
    sampler = GrfSampler(grid, GrfSpec(0.1))
    f1 = sampler.sample(np.random.default_rng(42))
    f2 = sampler.sample(np.random.default_rng(42))
    assert np.array_equal(f1, f2)


def test_microstructure_draw_order():
    # the field is consumed from the stream before the threshold
    grid = StructuredGrid.make(1, (16,))
    phases = PhaseSpec(1.0, 2.0)
    sampler = GrfSampler(grid, GrfSpec(0.1))
    ms = make_microstructure(sampler, phases, np.random.default_rng(7))
    rng = np.random.default_rng(7)
    f = sampler.sample(rng)
    f_cut = sample_cut_threshold(rng)
    assert np.array_equal(ms.lam, level_cut(f, f_cut, phases))
    assert ms.f_cut == f_cut
    assert ms.volume_fraction_lo == np.mean(ms.lam == 1.0)


def test_method_selection():
    small = GrfSampler(StructuredGrid.make(1, (100,)), GrfSpec(0.05, "auto"))
    assert small.method == "cholesky"
    big = GrfSampler(StructuredGrid.make(1, (5000,)), GrfSpec(0.05, "auto"))
    assert big.method == "spectral"


def test_cholesky_survives_degenerate_covariance():
    # a length scale far beyond the domain makes the covariance numerically
    # rank one; the jitter ladder must still produce a usable factor
    grid = StructuredGrid.make(1, (64,))
    sampler = GrfSampler(grid, GrfSpec(100.0, "cholesky"))
    f = sampler.sample(np.random.default_rng(0))
    assert np.all(np.isfinite(f))
    assert np.std(f) < 0.2  # nearly perfectly correlated field


def test_field_marginals_are_standard_normal():
    grid = StructuredGrid.make(1, (48,))
    sampler = GrfSampler(grid, GrfSpec(0.05, "cholesky"))
    rng = np.random.default_rng(3)
    draws = np.asarray([sampler.sample(rng) for _ in range(600)])
    assert abs(draws.mean()) < 0.05
    assert abs(draws.var(ddof=1) - 1.0) < 0.08
    # stationarity: per-point variances all near one
    assert np.max(np.abs(draws.var(axis=0, ddof=1) - 1.0)) < 0.3


def test_spectral_covariance_matches_exact_kernel():
    grid = StructuredGrid.make(1, (16,))
    spec = GrfSpec(0.2, "spectral", n_rff=4000)
    sampler = GrfSampler(grid, spec)
    rng = np.random.default_rng(11)
    draws = np.asarray([sampler.sample(rng) for _ in range(1500)])
    emp = (draws.T @ draws) / draws.shape[0]
    exact = covariance(sampler.points, 0.2)
    assert np.max(np.abs(emp - exact)) < 0.12


def test_volume_fraction_is_uniform():
    # thresholding at a normal quantile of a uniform draw makes the expected
    # low-phase fraction uniform; the realized fraction must pass a KS test
    grid = StructuredGrid.make(1, (64,))
    phases = PhaseSpec(1.0, 10.0)
    sampler = GrfSampler(grid, GrfSpec(0.01, "cholesky"))
    rng = np.random.default_rng(5)
    vf = np.asarray([make_microstructure(sampler, phases, rng).volume_fraction_lo
                     for _ in range(512)])
    stat = scipy.stats.kstest(vf, "uniform")
    assert stat.pvalue > 0.01


def test_contrast_one_medium_is_constant():
    grid = StructuredGrid.make(1, (16,))
    phases = PhaseSpec(2.0, 2.0)
    sampler = GrfSampler(grid, GrfSpec(0.05))
    ms = make_microstructure(sampler, phases, np.random.default_rng(1))
    assert np.all(ms.lam == 2.0)

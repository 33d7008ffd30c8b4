"""Level-cut Gaussian random fields for two-phase conductivity microstructures.

A zero-mean, unit-variance stationary Gaussian field with squared-exponential
covariance exp(-r^2 / l^2) is evaluated at element centers and thresholded:
elements with f < f_cut get lam_lo, the rest lam_hi. Drawing the threshold as
f_cut = Phi^{-1}(v) with v ~ U(0,1) makes the expected low-phase volume
fraction uniform on (0,1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, NumericalError

CHOLESKY_MAX_POINTS = 4096


@dataclass(frozen=True)
class PhaseSpec:
    lam_lo: float
    lam_hi: float

    def __post_init__(self):
        if not (0.0 < self.lam_lo <= self.lam_hi):
            raise ConfigError("phase values must satisfy 0 < lam_lo <= lam_hi")

    @property
    def contrast(self):
        return self.lam_hi / self.lam_lo


@dataclass(frozen=True)
class GrfSpec:
    length_scale: float = 0.01
    method: str = "auto"  # auto | cholesky | spectral
    n_rff: int = 5000

    def __post_init__(self):
        if self.length_scale <= 0.0:
            raise ConfigError("length_scale must be positive")
        if self.method not in ("auto", "cholesky", "spectral"):
            raise ConfigError(f"unknown GRF method {self.method!r}")
        if self.n_rff < 1:
            raise ConfigError("n_rff must be positive")


def covariance(points, length_scale):
    """Squared-exponential covariance exp(-r^2/l^2) between the given points."""
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-d2 / length_scale**2)


class GrfSampler:
    """Draws stationary Gaussian field values at the element centers of a grid.

    Exact dense Cholesky for small grids, random Fourier features for large
    ones ('auto' picks by point count). Both produce unit marginal variance;
    the spectral route is an M-term approximation of the same covariance.
    """

    def __init__(self, grid, spec):
        self.spec = spec
        self.points = grid.element_centers()
        n = self.points.shape[0]
        method = spec.method
        if method == "auto":
            method = "cholesky" if n <= CHOLESKY_MAX_POINTS else "spectral"
        self.method = method
        self._chol = None
        if method == "cholesky":
            K = covariance(self.points, spec.length_scale)
            for jitter in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
                try:
                    self._chol = np.linalg.cholesky(
                        K + jitter * np.eye(n) if jitter else K)
                    break
                except np.linalg.LinAlgError:
                    continue
            if self._chol is None:
                raise NumericalError(
                    "GRF covariance not factorizable even with jitter")

    def sample(self, rng):
        """One field realization; consumes rng draws in a fixed order."""
        n = self.points.shape[0]
        if self.method == "cholesky":
            return self._chol @ rng.standard_normal(n)
        m = self.spec.n_rff
        w = rng.standard_normal((m, self.points.shape[1])) * (
            np.sqrt(2.0) / self.spec.length_scale)
        b = rng.uniform(0.0, 2.0 * np.pi, m)
        amp = rng.standard_normal(m)
        return np.cos(self.points @ w.T + b) @ amp * np.sqrt(2.0 / m)


def sample_cut_threshold(rng):
    """Threshold with uniformly distributed expected low-phase volume fraction."""
    return ndtri(rng.random())


def level_cut(f, f_cut, phases):
    """Two-phase conductivity from field values: lam_lo where f < f_cut."""
    f = np.asarray(f, dtype=float)
    return np.where(f < f_cut, phases.lam_lo, phases.lam_hi)


@dataclass(frozen=True)
class MicrostructureSample:
    lam: np.ndarray
    f_cut: float
    volume_fraction_lo: float


def make_microstructure(sampler, phases, rng):
    """Draw one two-phase microstructure (field first, then the threshold)."""
    f = sampler.sample(rng)
    f_cut = sample_cut_threshold(rng)
    lam = level_cut(f, f_cut, phases)
    return MicrostructureSample(lam, float(f_cut),
                                float(np.mean(lam == phases.lam_lo)))

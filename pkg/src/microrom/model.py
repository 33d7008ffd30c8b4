"""Model containers and densities for the three-stage surrogate.

The encoder maps fine-scale features to latent coarse coefficients,
z_k ~ N((Phi theta)_k, sigma_c_k^2), with lam_c = link(z) fed to the coarse
solver; the decoder lifts the coarse solution through a fixed interpolation,
u_f ~ N(W u_c + b, diag S).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LinkFunction:
    """Map between unconstrained latent z and element conductivity lam."""

    kind: str  # identity | sigmoid | log
    lam_lo: float = None
    lam_hi: float = None

    def __post_init__(self):
        if self.kind not in ("identity", "sigmoid", "log"):
            raise ConfigError(f"unknown link {self.kind!r}")
        if self.kind == "sigmoid":
            if self.lam_lo is None or self.lam_hi is None:
                raise ConfigError("sigmoid link needs lam_lo and lam_hi")
            if not (0.0 < self.lam_lo < self.lam_hi):
                raise ConfigError("sigmoid link needs 0 < lam_lo < lam_hi")

    def forward(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "identity":
            return z.copy()
        if self.kind == "log":
            return np.exp(z)
        return (self.lam_hi - self.lam_lo) * expit(z) + self.lam_lo

    def inverse(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.kind == "identity":
            return lam.copy()
        if self.kind == "log":
            if np.any(lam <= 0.0):
                raise NumericalError("log link inverse needs positive lam")
            return np.log(lam)
        if np.any(lam <= self.lam_lo) or np.any(lam >= self.lam_hi):
            raise NumericalError(
                "sigmoid link inverse undefined at or outside the phase interval")
        return np.log((lam - self.lam_lo) / (self.lam_hi - lam))

    def jacobian(self, z):
        """Elementwise d lam / d z."""
        z = np.asarray(z, dtype=float)
        if self.kind == "identity":
            return np.ones_like(z)
        if self.kind == "log":
            return np.exp(z)
        s = expit(z)
        return (self.lam_hi - self.lam_lo) * s * (1.0 - s)


@dataclass(frozen=True)
class EncoderParams:
    """Regression coefficients, per-cell noise, and the sparsity prior state.

    theta is (n_features,) in shared mode or (n_cells, n_features) per-cell.
    theta_cov holds the posterior covariance over active features only:
    (n_active, n_active), or stacked per cell.
    """

    theta: np.ndarray
    sigma_c_sq: np.ndarray
    gamma: np.ndarray
    active: np.ndarray
    coefficient_mode: str = "shared"
    theta_cov: np.ndarray = None

    def __post_init__(self):
        if self.coefficient_mode not in ("shared", "per-cell"):
            raise ConfigError(
                f"unknown coefficient_mode {self.coefficient_mode!r}")

    @property
    def n_features(self):
        return self.theta.shape[-1]

    def mean_z(self, Phi):
        """Encoder mean (Phi theta) per macro-cell."""
        if self.coefficient_mode == "shared":
            return Phi @ self.theta
        return np.einsum("kj,kj->k", Phi, self.theta)

    def with_updates(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class DecoderParams:
    W: object = field(repr=False)  # (n_dof_f, n_dof_c), sparse or dense
    b: np.ndarray = field(repr=False)
    s_sq: np.ndarray = field(repr=False)

    def mean_uf(self, u_c):
        return self.W @ u_c + self.b


@dataclass
class VariationalState:
    """Diagonal Gaussian over the latent z of one sample."""

    mu: np.ndarray
    sigma: np.ndarray

    def copy(self):
        return VariationalState(self.mu.copy(), self.sigma.copy())

    def entropy(self):
        return float(np.sum(np.log(self.sigma))
                     + 0.5 * self.mu.size * (1.0 + LOG_2PI))

    def sample(self, eps):
        return self.mu + self.sigma * eps

    def moments(self):
        """Exact first and diagonal second moment of z."""
        return self.mu.copy(), self.mu**2 + self.sigma**2


def pc_log_density(z, mean_z, sigma_c_sq):
    """Encoder log density and its gradient in z."""
    r = z - mean_z
    logp = -0.5 * float(np.sum(LOG_2PI + np.log(sigma_c_sq) + r**2 / sigma_c_sq))
    return logp, -r / sigma_c_sq


def pcf_log_density(u_f, u_c, dec):
    """Decoder log density and its gradient in the coarse solution."""
    r = u_f - dec.mean_uf(u_c)
    logp = -0.5 * float(np.sum(LOG_2PI + np.log(dec.s_sq) + r**2 / dec.s_sq))
    return logp, dec.W.T @ (r / dec.s_sq)

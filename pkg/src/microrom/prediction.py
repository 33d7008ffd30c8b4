"""Posterior-predictive sampling and accuracy metrics.

A trained model predicts a fine-grid solution field for an unseen
conductivity image by propagating coefficient and latent uncertainty through
the coarse solver and the linear decoder. Metrics compare predictive means
and variances against reference fine-grid solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, SolveError
from .features import PcaBasis, Standardizer, build_design_matrix
from .grids import BoundaryCondition, MacroCellPartition, StructuredGrid
from .fem import Solver
from .media import PhaseSpec
from .model import DecoderParams, EncoderParams, LinkFunction, LOG_2PI

PREDICT_MODES = ("laplace", "map")


def _coefficient_sampler(enc, rng, mode):
    """Returns a draw() giving theta over active features."""
    idx = np.flatnonzero(enc.active)
    if enc.coefficient_mode == "shared":
        mean = enc.theta[idx]
    else:
        mean = enc.theta[:, idx]
    if mode == "map" or enc.theta_cov is None:
        return lambda: mean
    if enc.coefficient_mode == "shared":
        L = _safe_cholesky(enc.theta_cov)
        return lambda: mean + L @ rng.standard_normal(idx.size)
    Ls = np.asarray([_safe_cholesky(c) for c in enc.theta_cov])
    return lambda: mean + np.einsum(
        "kij,kj->ki", Ls, rng.standard_normal((mean.shape[0], idx.size)))


def _safe_cholesky(cov):
    jitter = 0.0
    base = np.asarray(cov)
    scale = max(float(np.trace(base)) / base.shape[0], 1e-300)
    for _ in range(8):
        try:
            return np.linalg.cholesky(base + jitter * np.eye(base.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-14 * scale)
    raise NumericalError("coefficient covariance is not positive definite")


@dataclass
class SurrogateModel:
    """Everything needed to predict: geometry, features, link, parameters."""

    fine: StructuredGrid
    coarse: StructuredGrid
    registry: tuple
    phases: PhaseSpec
    link: LinkFunction
    encoder: EncoderParams
    decoder: DecoderParams
    standardizer: Standardizer | None = None
    local_pca: PcaBasis | None = None
    global_pca: PcaBasis | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._partition = MacroCellPartition.build(self.coarse, self.fine)

    def design_matrix(self, lam_f):
        Phi = build_design_matrix(lam_f, self._partition, self.registry,
                                  self.phases, self.local_pca,
                                  self.global_pca)
        if self.standardizer is not None:
            Phi = self.standardizer.apply(Phi)
        return Phi

    def predict_summary(self, lam_f, bc_a, n_draws=64, rng=None,
                        mode="laplace"):
        """Predictive mean and per-dof variance on the fine grid."""
        return predict(self, lam_f, bc_a, n_draws=n_draws, rng=rng, mode=mode)


def predict(model, lam_f, bc_a, n_draws=64, rng=None, mode="laplace"):
    """Monte Carlo posterior-predictive summary for one conductivity image.

    Draws coefficients (unless mode is "map"), then latent variables, solves
    the coarse problem under the requested boundary vector, and decodes.
    Returns (mean, variance) arrays over fine-grid dofs.
    """
    if mode not in PREDICT_MODES:
        raise ConfigError(f"unknown predict mode {mode!r}")
    if n_draws < 1:
        raise ConfigError("n_draws must be at least 1")
    if rng is None:
        rng = np.random.default_rng()
    enc, dec = model.encoder, model.decoder
    Phi = model.design_matrix(lam_f)
    idx = np.flatnonzero(enc.active)
    Phi_act = Phi[:, idx]
    draw_theta = _coefficient_sampler(enc, rng, mode)
    bc = BoundaryCondition.corner_dirichlet(model.coarse,
                                            np.asarray(bc_a, float))
    solver = Solver(model.coarse, bc)
    sig_c = np.sqrt(enc.sigma_c_sq)
    decoded = []
    for _ in range(n_draws):
        theta = draw_theta()
        if enc.coefficient_mode == "shared":
            mean_z = Phi_act @ theta
        else:
            mean_z = np.einsum("kj,kj->k", Phi_act, theta)
        z = mean_z + sig_c * rng.standard_normal(mean_z.size)
        lam_c = model.link.forward(z)
        try:
            if np.any(lam_c <= 0.0) or not np.all(np.isfinite(lam_c)):
                raise SolveError("non-positive coarse conductivity")
            u_c = solver.solve(lam_c)
        except SolveError:
            continue
        decoded.append(dec.mean_uf(u_c))
    if not decoded:
        raise NumericalError("every predictive draw failed to solve")
    decoded = np.asarray(decoded)
    mean = decoded.mean(axis=0)
    var = dec.s_sq + ((decoded - mean) ** 2).mean(axis=0)
    return mean, var


# ---------------------------------------------------------------------------
# metrics

def free_dof_mask(grid):
    """True at dofs not pinned by the boundary treatment (node 0 is pinned)."""
    mask = np.ones(grid.n_nodes, dtype=bool)
    mask[0] = False
    return mask


def estimate_var_uf(u_f_draws, floor=1e-12):
    """Per-dof reference variance from a stack of fine-grid solutions."""
    u = np.asarray(u_f_draws)
    if u.shape[0] < 2:
        raise ConfigError("need at least two draws to estimate a variance")
    return np.maximum(u.var(axis=0, ddof=1), floor)


def error_e(mu_pred, u_f, var_uf, mask):
    """Mean squared prediction error, dof-wise normalized by the reference
    variance of the solution field, averaged over samples and unpinned dofs."""
    mu_pred = np.atleast_2d(mu_pred)
    u_f = np.atleast_2d(u_f)
    d = (mu_pred[:, mask] - u_f[:, mask]) ** 2 / var_uf[mask]
    return float(d.mean())


def error_L(mu_pred, var_pred, u_f, mask):
    """Mean negative predictive log-density per dof over unpinned dofs."""
    mu_pred = np.atleast_2d(mu_pred)
    var_pred = np.atleast_2d(var_pred)
    u_f = np.atleast_2d(u_f)
    m, v, u = mu_pred[:, mask], var_pred[:, mask], u_f[:, mask]
    nll = 0.5 * (LOG_2PI + np.log(v) + (u - m) ** 2 / v)
    return float(nll.mean())


def baseline_L_data(u_f_train, u_f_test, mask, floor=1e-12):
    """Negative log-density of test solutions under a dof-wise Gaussian fit
    to the training solutions; the bar any useful predictive density beats."""
    u_tr = np.asarray(u_f_train)
    if u_tr.shape[0] < 2:
        raise ConfigError("need at least two training samples for a baseline")
    m = u_tr.mean(axis=0)
    v = np.maximum(u_tr.var(axis=0, ddof=1), floor)
    mu = np.broadcast_to(m, np.asarray(u_f_test).shape)
    var = np.broadcast_to(v, np.asarray(u_f_test).shape)
    return error_L(mu, var, u_f_test, mask)


def evaluate(predictor, lam_f, u_f, bc_a, var_uf, mask, n_draws=64, rng=None,
             mode="laplace", u_f_train=None):
    """Run a predictor over a test set and compute summary metrics.

    predictor needs a predict_summary(lam_f, bc_a, n_draws, rng, mode)
    method returning (mean, variance) per fine dof.
    """
    if rng is None:
        rng = np.random.default_rng()
    lam_f = np.atleast_2d(lam_f)
    u_f = np.atleast_2d(u_f)
    bc_a = np.atleast_2d(bc_a)
    if bc_a.shape[0] == 1 and lam_f.shape[0] > 1:
        bc_a = np.broadcast_to(bc_a, (lam_f.shape[0], bc_a.shape[1]))
    mus, vars_ = [], []
    for n in range(lam_f.shape[0]):
        mu, var = predictor.predict_summary(lam_f[n], bc_a[n],
                                            n_draws=n_draws, rng=rng,
                                            mode=mode)
        mus.append(mu)
        vars_.append(var)
    mus = np.asarray(mus)
    vars_ = np.asarray(vars_)
    out = {
        "e": error_e(mus, u_f, var_uf, mask),
        "L": error_L(mus, vars_, u_f, mask),
        "n_samples": int(lam_f.shape[0]),
        "n_draws": int(n_draws),
    }
    if u_f_train is not None:
        out["L_data"] = baseline_L_data(u_f_train, u_f, mask)
    return out

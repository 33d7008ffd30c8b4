"""Variational EM training of the surrogate.

E-step: per sample, stochastic gradient ascent (reparametrized draws, Adam) on
the per-sample evidence bound over a diagonal Gaussian q(z), followed by Monte
Carlo moments of the coarse solution. M-step: closed-form updates for the
decoder variance, the regression coefficients (ridge-regularized by the
sparsity prior), and the encoder variances, plus an evidence-driven update of
the prior variances gamma with hard pruning of deactivated features.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, SolveError, VacuousModelError
from .fem import Solver
from .grids import (BoundaryCondition, MacroCellPartition, StructuredGrid,
                    interpolation_matrix)
from .model import (DecoderParams, EncoderParams, LinkFunction,
                    VariationalState, LOG_2PI)

log = logging.getLogger(__name__)

# stream tags for per-sample generator keys
_STREAM_SVI = 1
_STREAM_MOMENTS = 2
_STREAM_TRACE = 3


@dataclass(frozen=True)
class TrainingConfig:
    n_svi_steps: int = 50
    n_mc_elbo: int = 1
    n_mc_moments: int = 10
    adam_step_mu: float = 0.05
    adam_step_sigma: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    convergence_tol: float = 1e-4
    gamma_prune_threshold: float = 1e-4
    variance_floor: float = 1e-10
    coefficient_mode: str = "shared"
    free_bias: bool = False
    sigma_vi_init: float = 0.5
    sigma_vi_floor: float = 1e-8
    inner_max_iters: int = 100
    inner_tol: float = 1e-6
    elbo_trace_draws: int = 8
    threads: int = 1

    def __post_init__(self):
        if self.coefficient_mode not in ("shared", "per-cell"):
            raise ConfigError(
                f"unknown coefficient_mode {self.coefficient_mode!r}")
        if min(self.n_svi_steps, self.n_mc_elbo, self.n_mc_moments) < 0:
            raise ConfigError("Monte Carlo counts must be non-negative")


@dataclass(frozen=True)
class TrainingData:
    """Training arrays; samples carry stable integer ids for seeding."""

    lam_f: np.ndarray  # (N, n_elements_fine)
    u_f: np.ndarray    # (N, n_dof_fine)
    bc_a: np.ndarray   # (N, 4)
    ids: np.ndarray    # (N,)

    @property
    def n_samples(self):
        return self.lam_f.shape[0]

    def reordered(self, order):
        return TrainingData(self.lam_f[order], self.u_f[order],
                            self.bc_a[order], self.ids[order])


@dataclass
class SampleMoments:
    z_mean: np.ndarray
    z_sq: np.ndarray
    uc_mean: np.ndarray
    wuc_mean: np.ndarray
    wuc_sq_mean: np.ndarray
    n_ok: int


def rng_for(master_seed, *key):
    """Deterministic, order-independent stream from a structured key."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((int(master_seed),) + tuple(int(k) for k in key))))


# ---------------------------------------------------------------------------
# Adam (ascent)

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_ascent(state, grad, step, beta1, beta2, eps):
    """In-place Adam moment update; returns the ascent increment."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return step * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# per-sample decoder context (everything the latent update needs, coarse-sized)

@dataclass
class SampleContext:
    sample_id: int
    solver: Solver
    link: LinkFunction
    enc_mean: np.ndarray     # (K,)
    sigma_c_sq: np.ndarray   # (K,)
    A_dec: np.ndarray        # (n_dof_c, n_dof_c) = W' S^-1 W
    c_dec: np.ndarray        # (n_dof_c,)         = W' S^-1 (u_f - b)
    q0: float                # (u_f - b)' S^-1 (u_f - b)
    logdet: float            # sum log(2 pi s^2)


def decoder_normal_matrix(W, s_sq):
    """W' S^-1 W as a dense coarse-by-coarse matrix."""
    Winv = W.multiply(1.0 / s_sq[:, None]) if hasattr(W, "multiply") \
        else W / s_sq[:, None]
    A = W.T @ Winv
    return np.asarray(A.todense()) if hasattr(A, "todense") else np.asarray(A)


def decoder_sample_terms(W, b, s_sq, u_f):
    """Per-sample pieces of the decoder log-density in coarse coordinates."""
    r = u_f - b
    c = np.asarray(W.T @ (r / s_sq))
    q0 = float(np.sum(r**2 / s_sq))
    logdet = float(np.sum(LOG_2PI + np.log(s_sq)))
    return c, q0, logdet


def decoder_quadratic(W, b, s_sq, u_f):
    """Coarse-sized representation of log p(u_f | u_c) for fast inner loops."""
    A = decoder_normal_matrix(W, s_sq)
    c, q0, logdet = decoder_sample_terms(W, b, s_sq, u_f)
    return A, c, q0, logdet


def _pcf_from_quadratic(ctx, u_c):
    quad = ctx.q0 - 2.0 * float(ctx.c_dec @ u_c) + float(u_c @ ctx.A_dec @ u_c)
    logp = -0.5 * (ctx.logdet + quad)
    grad_uc = ctx.c_dec - ctx.A_dec @ u_c
    return logp, grad_uc


# ---------------------------------------------------------------------------
# SVI objective and E-step

def svi_objective_and_grad(mu, sigma, eps, ctx):
    """MC evidence-bound estimate for one sample and its (mu, sigma) gradient.

    eps has shape (n_draws, K); passing the same draws makes the estimate a
    deterministic, differentiable function of (mu, sigma).
    """
    n_draws, K = eps.shape
    obj = 0.0
    g_mu = np.zeros(K)
    g_sig = np.zeros(K)
    n_failed = 0
    for d in range(n_draws):
        z = mu + sigma * eps[d]
        r = z - ctx.enc_mean
        logpc = -0.5 * float(np.sum(LOG_2PI + np.log(ctx.sigma_c_sq)
                                    + r**2 / ctx.sigma_c_sq))
        gz = -r / ctx.sigma_c_sq
        lam = ctx.link.forward(z)
        try:
            if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
                raise SolveError("non-positive coarse conductivity")
            u_c, again = ctx.solver.solve_with_factor(lam)
            logpcf, grad_uc = _pcf_from_quadratic(ctx, u_c)
            dlam = ctx.solver.adjoint_gradient(lam, u_c, grad_uc, again)
            gz = gz + dlam * ctx.link.jacobian(z)
            obj += logpcf
        except SolveError:
            n_failed += 1
        obj += logpc
        g_mu += gz
        g_sig += gz * eps[d]
    obj /= n_draws
    g_mu /= n_draws
    g_sig /= n_draws
    entropy = float(np.sum(np.log(sigma))) + 0.5 * K * (1.0 + LOG_2PI)
    obj += entropy
    g_sig += 1.0 / sigma
    return obj, g_mu, g_sig, n_failed


def _run_svi(state, adam_mu, adam_sig, ctx, cfg, rng):
    n_failed = 0
    for _ in range(cfg.n_svi_steps):
        eps = rng.standard_normal((cfg.n_mc_elbo, state.mu.size))
        _, g_mu, g_sig, bad = svi_objective_and_grad(
            state.mu, state.sigma, eps, ctx)
        n_failed += bad
        state.mu = state.mu + adam_ascent(
            adam_mu, g_mu, cfg.adam_step_mu, cfg.adam_beta1, cfg.adam_beta2,
            cfg.adam_eps)
        state.sigma = np.maximum(
            state.sigma + adam_ascent(adam_sig, g_sig, cfg.adam_step_sigma,
                                      cfg.adam_beta1, cfg.adam_beta2,
                                      cfg.adam_eps),
            cfg.sigma_vi_floor)
    return n_failed


def _estimate_uc_draws(state, ctx, n_draws, rng):
    """Coarse solutions at fresh latent draws; failed solves are skipped."""
    draws = []
    for _ in range(n_draws):
        z = state.sample(rng.standard_normal(state.mu.size))
        lam = ctx.link.forward(z)
        try:
            if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
                raise SolveError("non-positive coarse conductivity")
            draws.append(ctx.solver.solve(lam))
        except SolveError:
            continue
    if not draws:
        raise NumericalError(
            f"all moment draws failed for sample {ctx.sample_id}")
    return np.asarray(draws)


# ---------------------------------------------------------------------------
# process-pool worker

_WORKER_SOLVERS = {}


def _get_solver(dim, nel_per_axis, a):
    key = (dim, tuple(nel_per_axis), tuple(np.round(np.asarray(a, float), 12)))
    if key not in _WORKER_SOLVERS:
        grid = StructuredGrid.make(dim, nel_per_axis)
        bc = BoundaryCondition.corner_dirichlet(grid, np.asarray(a, float))
        _WORKER_SOLVERS[key] = Solver(grid, bc)
    return _WORKER_SOLVERS[key]


def _e_step_task(payload):
    (sid, epoch, master_seed, dim, nel, a, link_obj, enc_mean, sigma_c_sq,
     A_dec, c_dec, q0, logdet, mu, sigma, am, av, at, sm, sv, st, cfg) = payload
    solver = _get_solver(dim, nel, a)
    ctx = SampleContext(sid, solver, link_obj, enc_mean, sigma_c_sq,
                        A_dec, c_dec, q0, logdet)
    state = VariationalState(mu.copy(), sigma.copy())
    adam_mu = AdamState(am.copy(), av.copy(), at)
    adam_sig = AdamState(sm.copy(), sv.copy(), st)
    rng = rng_for(master_seed, _STREAM_SVI, sid, epoch)
    n_failed = _run_svi(state, adam_mu, adam_sig, ctx, cfg, rng)
    mrng = rng_for(master_seed, _STREAM_MOMENTS, sid, epoch)
    uc = _estimate_uc_draws(state, ctx, cfg.n_mc_moments, mrng)
    return (sid, state.mu, state.sigma, adam_mu.m, adam_mu.v, adam_mu.t,
            adam_sig.m, adam_sig.v, adam_sig.t, uc, n_failed)


def run_e_step(states, adam_states, ctxs, cfg, master_seed, epoch, W,
               executor=None):
    """Update every sample's variational state and return its moments.

    Results are keyed by sample id, so dataset order and pool scheduling do
    not affect the outcome.
    """
    payloads = []
    for ctx in ctxs:
        st = states[ctx.sample_id]
        am, asg = adam_states[ctx.sample_id]
        payloads.append((ctx.sample_id, epoch, master_seed,
                         ctx.solver.grid.dim, ctx.solver.grid.nel_per_axis,
                         np.asarray(ctx.solver.bc.a), ctx.link, ctx.enc_mean,
                         ctx.sigma_c_sq, ctx.A_dec, ctx.c_dec, ctx.q0,
                         ctx.logdet, st.mu, st.sigma, am.m, am.v, am.t,
                         asg.m, asg.v, asg.t, cfg))
    if executor is None:
        results = [_e_step_task(p) for p in payloads]
    else:
        results = list(executor.map(_e_step_task, payloads,
                                    chunksize=max(1, len(payloads) // 32)))
    results.sort(key=lambda r: r[0])
    new_states, moments, n_failed = {}, {}, 0
    for (sid, mu, sigma, amm, amv, amt, asm, asv, ast, uc, bad) in results:
        new_states[sid] = VariationalState(mu, sigma)
        adam_states[sid] = (AdamState(amm, amv, amt), AdamState(asm, asv, ast))
        wuc = np.asarray([W @ u for u in uc])
        moments[sid] = SampleMoments(
            z_mean=mu.copy(), z_sq=mu**2 + sigma**2, uc_mean=uc.mean(axis=0),
            wuc_mean=wuc.mean(axis=0), wuc_sq_mean=(wuc**2).mean(axis=0),
            n_ok=uc.shape[0])
        n_failed += bad
    return new_states, moments, n_failed


# ---------------------------------------------------------------------------
# M-steps

def m_step_S(u_f, b, moments_list, floor):
    """Per-dof decoder variance: averaged expected squared residual."""
    acc = np.zeros(u_f.shape[1])
    for n, mom in enumerate(moments_list):
        r = u_f[n] - b
        acc += r**2 - 2.0 * r * mom.wuc_mean + mom.wuc_sq_mean
    return np.maximum(acc / len(moments_list), floor)


def m_step_bias(u_f, moments_list):
    acc = np.zeros(u_f.shape[1])
    for n, mom in enumerate(moments_list):
        acc += u_f[n] - mom.wuc_mean
    return acc / len(moments_list)


def _normal_equations(Phis, sigma_c_sq, z_means, mode):
    """Accumulated data terms of the coefficient posterior."""
    w = 1.0 / sigma_c_sq
    if mode == "shared":
        A = np.einsum("nkj,k,nkl->jl", Phis, w, Phis)
        rhs = np.einsum("nkj,k,nk->j", Phis, w, z_means)
        return A, rhs
    A = np.einsum("nkj,nkl->kjl", Phis, Phis) * w[:, None, None]
    rhs = np.einsum("nkj,nk->kj", Phis, z_means) * w[:, None]
    return A, rhs


def m_step_theta_c(Phis, sigma_c_sq, z_means, gamma, active, mode):
    """Posterior mode and covariance of the coefficients given gamma.

    Returns theta over all features (zeros at pruned ones) and the posterior
    covariance over the active set: (A, A) in shared mode, (K, A, A) per-cell.
    """
    A, rhs = _normal_equations(Phis, sigma_c_sq, z_means, mode)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        raise VacuousModelError("no active features", gamma=gamma.copy())
    prior = np.diag(1.0 / gamma[idx])
    if mode == "shared":
        cov = np.linalg.inv(A[np.ix_(idx, idx)] + prior)
        theta = np.zeros(Phis.shape[2])
        theta[idx] = cov @ rhs[idx]
        return theta, cov
    K = Phis.shape[1]
    theta = np.zeros((K, Phis.shape[2]))
    covs = np.empty((K, idx.size, idx.size))
    for k in range(K):
        covs[k] = np.linalg.inv(A[k][np.ix_(idx, idx)] + prior)
        theta[k, idx] = covs[k] @ rhs[k, idx]
    return theta, covs


def m_step_sigma_c(Phis, z_means, z_sqs, theta, mode, floor):
    """Per-cell encoder variance: averaged expected squared regression residual."""
    if mode == "shared":
        m = Phis @ theta
    else:
        m = np.einsum("nkj,kj->nk", Phis, theta)
    val = (z_sqs - 2.0 * m * z_means + m**2).mean(axis=0)
    return np.maximum(val, floor)


def gamma_em_update(theta, cov, active, mode):
    """Expected squared coefficient under the posterior, per feature."""
    idx = np.flatnonzero(active)
    if mode == "shared":
        return theta[idx] ** 2 + np.diag(cov)
    return (theta[:, idx] ** 2
            + np.diagonal(cov, axis1=1, axis2=2)).mean(axis=0)


def inner_gamma_loop(Phis, sigma_c_sq, z_means, gamma, active, mode,
                     threshold, max_iters=100, tol=1e-6):
    """Alternate coefficient solves and gamma updates, pruning as it goes.

    Features whose prior variance falls below the (absolute) threshold are
    deactivated permanently: their coefficients are pinned at zero and they
    leave the posterior. Raises when nothing survives.
    """
    gamma = gamma.copy()
    active = active.copy()
    theta = cov = None
    for _ in range(max_iters):
        theta, cov = m_step_theta_c(Phis, sigma_c_sq, z_means, gamma, active, mode)
        idx = np.flatnonzero(active)
        new_act = gamma_em_update(theta, cov, active, mode)
        rel = np.max(np.abs(new_act - gamma[idx]) / np.maximum(gamma[idx], 1e-300))
        gamma[idx] = new_act
        kill = idx[gamma[idx] < threshold]
        if kill.size:
            active[kill] = False
            if not active.any():
                raise VacuousModelError(
                    "every feature was pruned", gamma=gamma)
            theta, cov = m_step_theta_c(Phis, sigma_c_sq, z_means, gamma,
                                        active, mode)
        elif rel < tol:
            break
    return theta, cov, gamma, active


# ---------------------------------------------------------------------------
# full-data evidence-bound estimate (common random numbers for tracing)

def elbo_with_draws(states, ctxs, eps_by_id):
    """Bound estimate and its MC standard error for fixed noise draws."""
    total = 0.0
    var = 0.0
    for ctx in ctxs:
        st = states[ctx.sample_id]
        eps = eps_by_id[ctx.sample_id]
        vals = []
        for d in range(eps.shape[0]):
            z = st.sample(eps[d])
            r = z - ctx.enc_mean
            logpc = -0.5 * float(np.sum(LOG_2PI + np.log(ctx.sigma_c_sq)
                                        + r**2 / ctx.sigma_c_sq))
            lam = ctx.link.forward(z)
            try:
                if np.any(lam <= 0.0):
                    raise SolveError("non-positive coarse conductivity")
                u_c = ctx.solver.solve(lam)
                logpcf, _ = _pcf_from_quadratic(ctx, u_c)
            except SolveError:
                continue
            vals.append(logpc + logpcf)
        if not vals:
            raise NumericalError("no valid draws in bound estimate")
        vals = np.asarray(vals)
        total += float(vals.mean()) + float(np.sum(np.log(st.sigma))) \
            + 0.5 * st.mu.size * (1.0 + LOG_2PI)
        if vals.size > 1:
            var += float(vals.var(ddof=1)) / vals.size
    return total, float(np.sqrt(var))


# ---------------------------------------------------------------------------
# driver

@dataclass
class TrainedEncoderBundle:
    """What train() hands back besides the trace (packed by the caller)."""

    encoder: EncoderParams
    decoder: DecoderParams
    states: dict


def _init_theta(registry, link, phases, n_features, mode, n_cells):
    theta = np.zeros(n_features)
    mid = 0.5 * (phases.lam_lo + phases.lam_hi)
    for j, spec in enumerate(registry):
        if spec.family == "constant":
            theta[j] = link.inverse(np.array([mid]))[0]
            break
    if mode == "per-cell":
        theta = np.tile(theta, (n_cells, 1))
    return theta


def train(data, fine, coarse, registry, phases, link, cfg, seed,
          standardizer=None, local_pca=None, global_pca=None, Phis=None,
          on_epoch=None):
    """Fit encoder and decoder on the given training data.

    Returns (bundle, trace) where bundle carries the final parameters and
    per-sample variational states, and trace is a list of per-epoch records.
    Pass Phis to reuse precomputed (already standardized) design matrices.
    """
    from .features import build_design_matrix

    order = np.argsort(data.ids)
    data = data.reordered(order)
    N = data.n_samples
    partition = MacroCellPartition.build(coarse, fine)
    W = interpolation_matrix(coarse, fine)
    K = coarse.n_elements

    if Phis is None:
        raw = np.asarray([build_design_matrix(data.lam_f[n], partition,
                                              registry, phases, local_pca,
                                              global_pca)
                          for n in range(N)])
        Phis = standardizer.apply(raw) if standardizer is not None else raw
    J = Phis.shape[2]

    mode = cfg.coefficient_mode
    theta = _init_theta(registry, link, phases, J, mode, K)
    gamma = np.ones(J)
    active = np.ones(J, dtype=bool)
    sigma_c_sq = np.ones(K)
    b = np.zeros(data.u_f.shape[1])
    s_sq = np.maximum(data.u_f.var(axis=0), cfg.variance_floor)
    enc = EncoderParams(theta, sigma_c_sq, gamma, active, mode)

    solvers = {}
    for n in range(N):
        key = tuple(np.round(data.bc_a[n], 12))
        if key not in solvers:
            bc = BoundaryCondition.corner_dirichlet(coarse, data.bc_a[n])
            solvers[key] = Solver(coarse, bc)

    states = {}
    adam_states = {}
    eps_trace = {}
    for n in range(N):
        sid = int(data.ids[n])
        mu0 = enc.mean_z(Phis[n])
        states[sid] = VariationalState(mu0, np.full(K, cfg.sigma_vi_init))
        adam_states[sid] = (AdamState.zeros(K), AdamState.zeros(K))
        eps_trace[sid] = rng_for(seed, _STREAM_TRACE, sid).standard_normal(
            (cfg.elbo_trace_draws, K))

    executor = None
    if cfg.threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        executor = ProcessPoolExecutor(max_workers=cfg.threads)

    trace = []
    theta_cov = None
    try:
        def build_ctxs(cur_enc, cur_sigma_c, cur_b, cur_s):
            A_dec = decoder_normal_matrix(W, cur_s)
            out = []
            for n in range(N):
                sid = int(data.ids[n])
                c_dec, q0, logdet = decoder_sample_terms(W, cur_b, cur_s,
                                                         data.u_f[n])
                out.append(SampleContext(
                    sid, solvers[tuple(np.round(data.bc_a[n], 12))], link,
                    cur_enc.mean_z(Phis[n]), cur_sigma_c, A_dec, c_dec, q0,
                    logdet))
            return out

        prev_vec = None
        for epoch in range(cfg.max_epochs):
            t0 = time.perf_counter()
            ctxs = build_ctxs(enc, sigma_c_sq, b, s_sq)
            states, moments, n_failed = run_e_step(
                states, adam_states, ctxs, cfg, seed, epoch, W, executor)
            mom_list = [moments[int(i)] for i in data.ids]

            if cfg.free_bias:
                b = m_step_bias(data.u_f, mom_list)
            s_sq = m_step_S(data.u_f, b, mom_list, cfg.variance_floor)

            z_means = np.asarray([m.z_mean for m in mom_list])
            z_sqs = np.asarray([m.z_sq for m in mom_list])
            theta, theta_cov = m_step_theta_c(Phis, sigma_c_sq, z_means,
                                              gamma, active, mode)
            sigma_c_sq = m_step_sigma_c(Phis, z_means, z_sqs, theta, mode,
                                        cfg.variance_floor)
            idx = np.flatnonzero(active)
            gamma[idx] = gamma_em_update(theta, theta_cov, active, mode)
            kill = idx[gamma[idx] < cfg.gamma_prune_threshold]
            if kill.size:
                active[kill] = False
                if not active.any():
                    raise VacuousModelError("every feature was pruned",
                                            gamma=gamma)
                theta, theta_cov = m_step_theta_c(Phis, sigma_c_sq, z_means,
                                                  gamma, active, mode)

            enc = EncoderParams(theta, sigma_c_sq, gamma.copy(), active.copy(),
                                mode, theta_cov)

            elbo, elbo_se = elbo_with_draws(
                states, build_ctxs(enc, sigma_c_sq, b, s_sq), eps_trace)

            vec = np.concatenate([theta.ravel(), sigma_c_sq, s_sq])
            rel = (np.linalg.norm(vec - prev_vec)
                   / max(np.linalg.norm(prev_vec), 1e-300)) \
                if prev_vec is not None else np.inf
            prev_vec = vec
            rec = {"epoch": epoch, "elbo": elbo, "elbo_se": elbo_se,
                   "n_active": int(active.sum()),
                   "theta_norm": float(np.linalg.norm(theta)),
                   "sigma_c_sq_mean": float(sigma_c_sq.mean()),
                   "s_sq_mean": float(s_sq.mean()),
                   "n_solve_failures": int(n_failed),
                   "rel_change": float(rel) if np.isfinite(rel) else None,
                   "wall_time_s": time.perf_counter() - t0}
            trace.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
            if rel < cfg.convergence_tol:
                break

        z_means = np.asarray([moments[int(i)].z_mean for i in data.ids])
        theta, theta_cov, gamma, active = inner_gamma_loop(
            Phis, sigma_c_sq, z_means, gamma, active, mode,
            cfg.gamma_prune_threshold, cfg.inner_max_iters, cfg.inner_tol)
        enc = EncoderParams(theta, sigma_c_sq, gamma, active, mode, theta_cov)
    finally:
        if executor is not None:
            executor.shutdown()

    dec = DecoderParams(W, b, s_sq)
    return TrainedEncoderBundle(enc, dec, states), trace

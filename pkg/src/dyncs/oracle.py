"""Support-aware oracle estimators: genie lower bounds with the support known.

With the support fixed, the model is jointly Gaussian, so sum-product
messages stay Gaussian everywhere and no approximations are needed. The
smoother runs scalar Gaussian belief propagation over the whole graph
(within-frame measurement factors plus the amplitude chains) until the
means settle; at a fixed point of Gaussian BP the means solve the exact
normal equations, so they equal the MMSE estimate (the variances are the
usual loopy approximations and are reported as-is). A dense joint solve
over all coefficients is provided for small instances as the ground truth
the smoother is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DynamicDataset, ModelParams
from .posteriors import PosteriorEstimates

__all__ = [
    "OracleProblem",
    "NonConvergenceError",
    "sks_estimate",
    "skf_estimate",
    "exact_mmse_small",
]


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last mean change {residual:.3e})")
        self.residual = residual


@dataclass
class OracleProblem:
    dataset: DynamicDataset
    support: np.ndarray   # (T, N), nonzero = active
    params: ModelParams

    def __post_init__(self):
        self.support = np.asarray(self.support).astype(bool)
        if self.support.shape != (self.dataset.t, self.dataset.n):
            raise ValueError("support dimensions disagree with the dataset")
        self.params.require_dynamic()


class _FrameGraph:
    """Scalar Gaussian BP between one frame's measurements and its active
    coefficients. Messages are kept in precision / precision-mean form."""

    def __init__(self, y, a, support, sigma_e2, damping):
        self.idx = np.flatnonzero(support)
        self.y = y
        self.b = a[:, self.idx]
        self.abs2 = np.abs(self.b) ** 2
        self.sigma_e2 = sigma_e2
        self.damping = damping
        m = a.shape[0]
        self.p = np.zeros((m, self.idx.size))              # factor-to-variable precision
        self.h = np.zeros((m, self.idx.size), complex)     # and precision-mean

    def update(self, prior_prec, prior_h, inner=1):
        if self.idx.size == 0:
            return
        for _ in range(inner):
            tot_p = prior_prec + self.p.sum(axis=0)
            tot_h = prior_h + self.h.sum(axis=0)
            p_v2f = tot_p[None, :] - self.p
            h_v2f = tot_h[None, :] - self.h
            v_v2f = 1.0 / p_v2f
            m_v2f = h_v2f * v_v2f
            g_row = self.sigma_e2 + (self.abs2 * v_v2f).sum(axis=1)
            r_row = self.y - (self.b * m_v2f).sum(axis=1)
            g = g_row[:, None] - self.abs2 * v_v2f
            r = r_row[:, None] + self.b * m_v2f
            new_p = self.abs2 / g
            new_h = np.conj(self.b) * r / g
            d = self.damping
            self.p = d * self.p + (1.0 - d) * new_p
            self.h = d * self.h + (1.0 - d) * new_h

    def evidence(self):
        """Summed factor-to-variable messages for this frame's active set."""
        return self.p.sum(axis=0), self.h.sum(axis=0)


def _forward_chain(prec, h, params):
    """Push a Gaussian message through the amplitude-evolution factor."""
    a = params.alpha
    flat = prec <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(flat, np.inf, 1.0 / np.where(flat, 1.0, prec))
        m = np.where(flat, 0.0, h / np.where(flat, 1.0, prec))
    v_out = (1.0 - a) ** 2 * v + a**2 * params.rho
    m_out = (1.0 - a) * m + a * params.zeta
    p_out = 1.0 / v_out  # a > 0 keeps this finite even for flat inputs
    return p_out, p_out * m_out


def _backward_chain(prec, h, params):
    a = params.alpha
    if a == 1.0:
        return np.zeros_like(prec), np.zeros_like(h)
    flat = prec <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(flat, np.inf, 1.0 / np.where(flat, 1.0, prec))
        m = np.where(flat, 0.0, h / np.where(flat, 1.0, prec))
    v_out = (v + a**2 * params.rho) / (1.0 - a) ** 2
    m_out = (m - a * params.zeta) / (1.0 - a)
    p_out = np.where(np.isinf(v_out), 0.0, 1.0 / np.where(np.isinf(v_out), 1.0, v_out))
    return p_out, p_out * np.where(np.isinf(v_out), 0.0, m_out)


class _GaussianSmoother:
    def __init__(self, problem: OracleProblem, damping: float):
        d, p = problem.dataset, problem.params
        self.problem = problem
        self.params = p
        self.frames = [
            _FrameGraph(d.y[t], d.operator(t), problem.support[t], p.sigma_e2, damping)
            for t in range(d.t)
        ]
        tt, nn = d.t, d.n
        self.fwd_p = np.zeros((tt, nn))
        self.fwd_h = np.zeros((tt, nn), complex)
        self.bwd_p = np.zeros((tt, nn))
        self.bwd_h = np.zeros((tt, nn), complex)
        self.fwd_p[0] = 1.0 / p.sigma2
        self.fwd_h[0] = p.zeta / p.sigma2

    def _frame_prior(self, t):
        idx = self.frames[t].idx
        return (self.fwd_p[t, idx] + self.bwd_p[t, idx],
                self.fwd_h[t, idx] + self.bwd_h[t, idx])

    def _push_forward(self, t):
        ev_p, ev_h = self.frames[t].evidence()
        p_e = self.fwd_p[t].copy()
        h_e = self.fwd_h[t].copy()
        idx = self.frames[t].idx
        p_e[idx] += ev_p
        h_e[idx] += ev_h
        self.fwd_p[t + 1], self.fwd_h[t + 1] = _forward_chain(p_e, h_e, self.params)

    def _push_backward(self, t):
        ev_p, ev_h = self.frames[t].evidence()
        p_e = self.bwd_p[t].copy()
        h_e = self.bwd_h[t].copy()
        idx = self.frames[t].idx
        p_e[idx] += ev_p
        h_e[idx] += ev_h
        self.bwd_p[t - 1], self.bwd_h[t - 1] = _backward_chain(p_e, h_e, self.params)

    def theta_posterior(self):
        tt, nn = self.fwd_p.shape
        prec = self.fwd_p + self.bwd_p
        h = self.fwd_h + self.bwd_h
        for t, fr in enumerate(self.frames):
            ev_p, ev_h = fr.evidence()
            prec[t, fr.idx] += ev_p
            h[t, fr.idx] += ev_h
        return h / prec, 1.0 / prec

    def smooth(self, max_iters, tol, inner):
        prev = None
        delta = np.inf
        for _ in range(max_iters):
            for t in range(len(self.frames)):
                self.frames[t].update(*self._frame_prior(t), inner=inner)
                if t + 1 < len(self.frames):
                    self._push_forward(t)
            for t in range(len(self.frames) - 1, -1, -1):
                self.frames[t].update(*self._frame_prior(t), inner=inner)
                if t > 0:
                    self._push_backward(t)
            mean, _ = self.theta_posterior()
            if prev is not None:
                delta = float(np.max(np.abs(mean - prev)))
                if delta < tol:
                    return
            prev = mean
        raise NonConvergenceError("Gaussian smoother did not converge", residual=delta)

    def filter(self, tol, max_inner):
        for t in range(len(self.frames)):
            fr = self.frames[t]
            prev = None
            for _ in range(max_inner):
                fr.update(*self._frame_prior(t), inner=1)
                ev_p, ev_h = fr.evidence()
                prior_p, prior_h = self._frame_prior(t)
                mean = (prior_h + ev_h) / (prior_p + ev_p)
                if prev is not None and (mean.size == 0 or np.max(np.abs(mean - prev)) < tol):
                    break
                prev = mean
            else:
                if fr.idx.size:
                    raise NonConvergenceError(
                        "Gaussian filter frame did not converge",
                        residual=float(np.max(np.abs(mean - prev))),
                    )
            if t + 1 < len(self.frames):
                self._push_forward(t)


def _estimates_from(smoother: _GaussianSmoother, problem: OracleProblem) -> PosteriorEstimates:
    theta_mean, theta_var = smoother.theta_posterior()
    s = problem.support.astype(float)
    return PosteriorEstimates(
        x_mean=s * theta_mean,
        x_var=s * theta_var,
        s_prob=s.copy(),
        theta_mean=theta_mean,
        theta_var=theta_var,
    )


def sks_estimate(problem: OracleProblem, max_iters: int = 400, tol: float = 1e-10,
                 damping: float = 0.3, inner: int = 2) -> PosteriorEstimates:
    """Support-aware smoother: loopy Gaussian BP to convergence (exact means).

    Raises NonConvergenceError (with the last mean change) if the message
    passing has not settled within ``max_iters`` sweeps.
    """
    smoother = _GaussianSmoother(problem, damping)
    smoother.smooth(max_iters=max_iters, tol=tol, inner=inner)
    return _estimates_from(smoother, problem)


def skf_estimate(problem: OracleProblem, tol: float = 1e-10, max_inner: int = 4000,
                 damping: float = 0.3) -> PosteriorEstimates:
    """Support-aware filter: forward-only Gaussian message passing (causal)."""
    smoother = _GaussianSmoother(problem, damping)
    smoother.filter(tol=tol, max_inner=max_inner)
    return _estimates_from(smoother, problem)


def exact_mmse_small(problem: OracleProblem) -> PosteriorEstimates:
    """Dense joint-Gaussian conditioning over every coefficient and timestep.

    Feasible for N*T up to a few dozen; used as the reference the smoother's
    means are verified against.
    """
    d, p = problem.dataset, problem.params
    tt, nn, mm = d.t, d.n, d.m
    dim = tt * nn
    if dim > 64:
        raise ValueError(f"exact solve limited to N*T <= 64, got {dim}")

    # Prior over theta stacked as (t, n) -> t * nn + n: independent across n,
    # stationary AR(1) across t.
    idx_t = np.arange(tt)
    corr = (1.0 - p.alpha) ** np.abs(idx_t[:, None] - idx_t[None, :])
    prior_cov = np.zeros((dim, dim), complex)
    for n in range(nn):
        sl = np.ix_(idx_t * nn + n, idx_t * nn + n)
        prior_cov[sl] = p.sigma2 * corr
    prior_mean = np.full(dim, p.zeta, complex)

    h = np.zeros((tt * mm, dim), complex)
    for t in range(tt):
        h[t * mm:(t + 1) * mm, t * nn:(t + 1) * nn] = d.operator(t) * problem.support[t]
    y = d.y.reshape(tt * mm)

    gram = h.conj().T @ h / p.sigma_e2
    prior_prec = np.linalg.inv(prior_cov)
    post_cov = np.linalg.inv(prior_prec + gram)
    if not np.all(np.isfinite(post_cov)):
        raise FloatingPointError("singular covariance in the exact solve")
    post_mean = post_cov @ (prior_prec @ prior_mean + h.conj().T @ y / p.sigma_e2)

    theta_mean = post_mean.reshape(tt, nn)
    theta_var = np.real(np.diag(post_cov)).reshape(tt, nn)
    s = problem.support.astype(float)
    return PosteriorEstimates(
        x_mean=s * theta_mean,
        x_var=s * theta_var,
        s_prob=s.copy(),
        theta_mean=theta_mean,
        theta_var=theta_var,
    )

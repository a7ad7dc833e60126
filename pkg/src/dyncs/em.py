"""Expectation-maximization learning of the six model hyperparameters.

Each EM iteration runs one forward/backward smoothing pass (reusing the
message state, so passes warm-start each other), assembles the posterior
summaries, and applies closed-form coordinate-wise updates. The update for
the forgetting factor solves a quadratic in alpha; the root consistent with
a maximizer in [0, 1] is the positive one (the negative root is discarded).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .model import DynamicDataset, GroundTruth, ModelParams
from .posteriors import PosteriorEstimates, compute_posteriors
from .scheduler import SolverConfig, backward_sweep, forward_sweep, init_state
from .validation import check_index_count

__all__ = [
    "EmTrace",
    "em_update_raw",
    "em_update",
    "init_heuristics",
    "em_loop",
    "run_filter_em",
]

_VAR_FLOOR = 1e-12
_PROB_EPS = 1e-6


def _second_moment(post: PosteriorEstimates):
    return post.theta_var + np.abs(post.theta_mean) ** 2


def em_update_raw(post: PosteriorEstimates, params: ModelParams,
                  dataset: DynamicDataset, mask: np.ndarray | None = None) -> dict:
    """Unclamped closed-form updates from the posterior summaries.

    ``mask`` restricts the coefficient set (used for per-group learning);
    the noise update always uses all coefficients since residuals do not
    decompose across groups.
    """
    tt, nn = post.t, post.n
    cols = np.ones(nn, dtype=bool) if mask is None else mask
    n_eff = int(np.count_nonzero(cols))

    out = {}
    out["lam"] = float(np.mean(post.s_prob[0, cols]))

    if tt > 1:
        q1_prev = post.s_prob[:-1, cols]
        q2 = post.s_pair[:, cols]
        denom = float(np.sum(q1_prev))
        out["p01"] = float(np.sum(q1_prev - q2) / denom) if denom > 0 else params.p01

        a, rho, zeta = params.alpha, params.rho, params.zeta
        sigma2 = params.sigma2
        mu_t = post.theta_mean[1:, cols]
        mu_p = post.theta_mean[:-1, cols]
        sm_t = _second_moment(post)[1:, cols]
        sm_p = _second_moment(post)[:-1, cols]
        cross_re = np.real(post.theta_cross[:, cols])

        k_pairs = n_eff * (tt - 1)
        prec = k_pairs / rho + n_eff / sigma2
        zeta_new = (
            np.sum(post.theta_mean[0, cols]) / sigma2
            + np.sum(mu_t - (1.0 - a) * mu_p) / (a * rho)
        ) / prec
        out["zeta"] = complex(zeta_new)

        b = (2.0 / rho) * float(np.sum(
            cross_re - np.real((mu_t - mu_p) * np.conj(zeta)) - sm_p
        ))
        c = (2.0 / rho) * float(np.sum(sm_t + sm_p - 2.0 * cross_re))
        disc = b * b + 8.0 * k_pairs * c
        out["alpha"] = float((b + np.sqrt(max(disc, 0.0))) / (4.0 * k_pairs))

        rho_new = float(np.sum(
            sm_t
            + a**2 * np.abs(zeta) ** 2
            - 2.0 * (1.0 - a) * cross_re
            - 2.0 * a * np.real(np.conj(mu_t) * zeta)
            + 2.0 * a * (1.0 - a) * np.real(np.conj(mu_p) * zeta)
            + (1.0 - a) ** 2 * sm_p
        )) / (a**2 * k_pairs)
        out["rho"] = rho_new
    else:
        out["p01"] = params.p01
        out["alpha"] = params.alpha
        out["rho"] = params.rho
        out["zeta"] = complex(np.mean(post.theta_mean[0, cols]))

    resid = 0.0
    for t in range(tt):
        r = dataset.y[t] - dataset.operator(t) @ post.x_mean[t]
        resid += float(np.sum(np.abs(r) ** 2)) + float(np.sum(post.x_var[t]))
    out["sigma_e2"] = resid / (tt * dataset.m)
    return out


def _clamped_params(raw: dict, params: ModelParams) -> ModelParams:
    lam = float(np.clip(raw["lam"], _PROB_EPS, 1.0 - _PROB_EPS))
    p01 = float(np.clip(raw["p01"], 0.0, 1.0))
    # keep the implied p10 = lam*p01/(1-lam) a probability
    p01_cap = (1.0 - lam) / lam if lam > 0.5 else 1.0
    if p01 > p01_cap:
        warnings.warn("p01 update clipped to keep the implied p10 in [0, 1]")
        p01 = p01_cap
    alpha = float(np.clip(raw["alpha"], 1e-8, 1.0))
    rho = raw["rho"]
    sigma_e2 = raw["sigma_e2"]
    if rho < _VAR_FLOOR:
        warnings.warn("rho update fell below the variance floor; clamped")
        rho = _VAR_FLOOR
    if sigma_e2 < _VAR_FLOOR:
        warnings.warn("sigma_e2 update fell below the variance floor; clamped")
        sigma_e2 = _VAR_FLOOR
    return ModelParams(lam=lam, p01=p01, zeta=raw["zeta"], alpha=alpha,
                       rho=rho, sigma_e2=sigma_e2)


def em_update(post: PosteriorEstimates, params: ModelParams, dataset: DynamicDataset,
              groups: np.ndarray | None = None):
    """One M-step: new parameters, each clamped to its valid domain.

    With ``groups`` (an (N,) integer label array), the activity rate and the
    amplitude-process parameters are learned per group while the transition
    probability and noise variance stay shared; returns ``{label: params}``.
    """
    if groups is None:
        return _clamped_params(em_update_raw(post, params, dataset), params)

    groups = np.asarray(groups)
    if groups.shape != (post.n,):
        raise ValueError("groups must label every coefficient")
    shared = em_update_raw(post, params, dataset)
    result = {}
    for label in np.unique(groups):
        raw = em_update_raw(post, params, dataset, mask=groups == label)
        raw["p01"] = shared["p01"]
        raw["sigma_e2"] = shared["sigma_e2"]
        result[int(label)] = _clamped_params(raw, params)
    return result


def _lasso_phase_transition(delta: float) -> float:
    """Largest recoverable sparsity-per-measurement ratio at undersampling
    ``delta`` for soft-threshold AMP; the standard initializer for the
    activity rate."""

    def neg_rho(c):
        h = (1.0 + c * c) * ndtr(-c) - c * np.exp(-0.5 * c * c) / np.sqrt(2.0 * np.pi)
        return -(1.0 - (2.0 / delta) * h) / (1.0 + c * c - 2.0 * h)

    res = minimize_scalar(neg_rho, bounds=(1e-6, 20.0), method="bounded")
    return float(max(-res.fun, 0.0))


def init_heuristics(dataset: DynamicDataset, snr0_db: float = 20.0) -> ModelParams:
    """Data-driven starting point for EM.

    Noise floor from an assumed 20 dB SNR; activity rate from the phase
    transition curve (floored at 0.10); slab variance from the energy
    balance of unit-norm columns; the forgetting factor from the lag-one
    correlation of successive measurement vectors (clamped to [1e-3, 0.99]);
    transition probability fixed at the generic default 0.10.
    """
    y = dataset.y
    tt, mm, nn = dataset.t, dataset.m, dataset.n
    energy = float(np.sum(np.abs(y) ** 2))
    if energy == 0.0:
        raise ValueError("measurements carry zero energy; cannot initialize")

    sigma_e2 = energy / (tt * mm) / (1.0 + 10.0 ** (snr0_db / 10.0))
    delta = mm / nn
    lam = float(np.clip(delta * _lasso_phase_transition(delta), 0.10, 0.90))
    sigma2 = max((energy / tt - mm * sigma_e2) / (lam * nn), _VAR_FLOOR)

    if tt > 1:
        ratios = []
        for t in range(tt - 1):
            num = abs(complex(np.vdot(y[t], y[t + 1])))
            tr = complex(np.sum(dataset.operator(t) * np.conj(dataset.operator(t + 1))))
            den = lam * sigma2 * abs(tr)
            ratios.append(num / den if den > 0 else np.inf)
        alpha = 1.0 - float(np.mean(ratios))
    else:
        alpha = 0.99
    alpha = float(np.clip(alpha, 1e-3, 0.99))

    rho = sigma2 * (2.0 - alpha) / alpha
    return ModelParams(lam=lam, p01=0.10, zeta=0.0, alpha=alpha, rho=rho, sigma_e2=sigma_e2)


@dataclass
class EmTrace:
    """Per-iteration record of the EM run."""

    params_history: list = field(default_factory=list)   # ModelParams per iteration (incl. init)
    rel_change: list = field(default_factory=list)
    residual_nmse: list = field(default_factory=list)    # measurement-domain proxy
    tnmse_db: list = field(default_factory=list)         # only when truth was supplied
    n_iterations: int = 0
    stopping_reason: str = ""
    diverged: bool = False

    def to_dict(self) -> dict:
        out = {
            "iterations": self.n_iterations,
            "stopping_reason": self.stopping_reason,
            "diverged": self.diverged,
            "history": [p.to_dict() for p in self.params_history],
            "rel_change": self.rel_change,
            "residual_nmse": self.residual_nmse,
        }
        if self.tnmse_db:
            out["tnmse_db"] = self.tnmse_db
        return out


def _param_rel_change(new: ModelParams, old: ModelParams) -> float:
    pairs = [
        (new.lam, old.lam), (new.p01, old.p01), (abs(new.zeta - old.zeta), None),
        (new.alpha, old.alpha), (new.rho, old.rho), (new.sigma_e2, old.sigma_e2),
    ]
    worst = 0.0
    for entry in pairs:
        if entry[1] is None:
            diff, scale = entry[0], max(abs(old.zeta), 1e-12)
        else:
            diff, scale = abs(entry[0] - entry[1]), max(abs(entry[1]), 1e-12)
        worst = max(worst, diff / scale)
    return worst


def _residual_nmse(dataset: DynamicDataset, x_mean: np.ndarray) -> float:
    num = 0.0
    for t in range(dataset.t):
        num += float(np.sum(np.abs(dataset.y[t] - dataset.operator(t) @ x_mean[t]) ** 2))
    return num / float(np.sum(np.abs(dataset.y) ** 2))


def em_loop(
    dataset: DynamicDataset,
    init_params: ModelParams | None = None,
    config: SolverConfig | None = None,
    max_em_iters: int = 300,
    param_tol: float = 1e-5,
    truth: GroundTruth | None = None,
):
    """Alternate smoothing passes with parameter updates.

    Returns ``(posteriors, params, trace)``. With ``max_em_iters=0`` a single
    smoothing pass is run and the initialization is returned untouched. If the
    measurement-domain residual worsens for 10 consecutive iterations the
    best-so-far iterate is returned with ``trace.diverged`` set.
    """
    check_index_count(max_em_iters, "max_em_iters", minimum=0)
    config = config or SolverConfig()
    if config.mode != "smooth":
        raise ValueError("EM learning requires smoothing mode")
    params = init_params if init_params is not None else init_heuristics(dataset)
    params.require_dynamic()

    state = init_state(dataset.t, dataset.n, params)
    trace = EmTrace(params_history=[params])

    def record_fit(post):
        trace.residual_nmse.append(_residual_nmse(dataset, post.x_mean))
        if truth is not None:
            norms = np.sum(np.abs(truth.x) ** 2, axis=1)
            keep = norms > 0
            err = np.sum(np.abs(post.x_mean - truth.x) ** 2, axis=1)
            trace.tnmse_db.append(float(10 * np.log10(np.mean(err[keep] / norms[keep]))))

    def one_pass():
        forward_sweep(state, dataset, params, config)
        backward_sweep(state, dataset, params, config)
        return compute_posteriors(state, params)

    if max_em_iters == 0:
        post = one_pass()
        record_fit(post)
        trace.stopping_reason = "iteration cap 0"
        return post, params, trace

    best = None
    worse_streak = 0
    post = None
    for k in range(1, max_em_iters + 1):
        post = one_pass()
        record_fit(post)

        proxy = trace.residual_nmse[-1]
        if best is None or proxy <= best[0]:
            best = (proxy, params, post)
            worse_streak = 0
        else:
            worse_streak += 1
            if worse_streak >= 10:
                trace.n_iterations = k
                trace.stopping_reason = "residual worsened for 10 consecutive iterations"
                trace.diverged = True
                return best[2], best[1], trace

        new_params = em_update(post, params, dataset)
        trace.params_history.append(new_params)
        change = _param_rel_change(new_params, params)
        trace.rel_change.append(change)
        params = new_params
        trace.n_iterations = k
        if change < param_tol:
            trace.stopping_reason = f"parameters settled (rel change {change:.2e})"
            return post, params, trace

    trace.stopping_reason = "iteration cap reached"
    return post, params, trace


def run_filter_em(dataset: DynamicDataset, init_params: ModelParams,
                  config: SolverConfig | None = None, update_every: int = 1):
    """Causal EM variant: re-estimate parameters from running sums over the
    frames processed so far, while filtering. Experimental; the smoothing
    loop is the supported route and this one is not wired into the CLI.
    """
    from .scheduler import _process_frame, step_across_forward  # noqa: PLC0415

    config = config or SolverConfig(mode="filter")
    params = init_params
    params.require_dynamic()
    state = init_state(dataset.t, dataset.n, params)
    history = [params]
    for t in range(dataset.t):
        state.lam_fwd[0] = params.lam
        state.eta_fwd[0] = params.zeta
        state.kappa_fwd[0] = params.sigma2
        _process_frame(state, dataset, t, params, config)
        if t + 1 < dataset.t:
            step_across_forward(state, t, params)
        if (t + 1) % update_every == 0 and t >= 1:
            post = compute_posteriors(state, params)
            window = slice(0, t + 1)
            causal = PosteriorEstimates(
                x_mean=post.x_mean[window], x_var=post.x_var[window],
                s_prob=post.s_prob[window], theta_mean=post.theta_mean[window],
                theta_var=post.theta_var[window],
                s_pair=post.s_pair[: t], theta_cross=post.theta_cross[: t],
            )
            sub = DynamicDataset(
                y=dataset.y[window],
                a=dataset.a if dataset.time_invariant else dataset.a[window],
            )
            params = em_update(causal, params, sub)
            history.append(params)
    return compute_posteriors(state, params), params, history

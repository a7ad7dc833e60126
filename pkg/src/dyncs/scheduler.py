"""Turbo message schedule coupling per-frame AMP with the temporal chains.

Each timestep ("frame") is visited in four phases:

* (into):   fuse the forward/backward chain messages into a per-coefficient
            spike-and-slab local prior,
* (within): run the AMP inner loop on that frame's measurements,
* (out):    convert the frame's evidence into outgoing activity and amplitude
            messages (the amplitude message is an improper mixture that gets
            collapsed to a single Gaussian; see ``collapse_threshold`` /
            ``collapse_taylor``),
* (across): push the updated beliefs through the support-transition and
            amplitude-evolution factors to the neighbouring frame.

A forward sweep over t = 1..T is a filtering pass; alternating forward and
backward sweeps implements smoothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .ampcore import LocalPrior, amp_frame, log_likelihood_ratio_inactive
from .model import DynamicDataset, ModelParams
from .validation import check_unit_interval_array

__all__ = [
    "SolverConfig",
    "MessageState",
    "init_state",
    "step_into",
    "step_out",
    "omega",
    "collapse_threshold",
    "collapse_taylor",
    "step_across_forward",
    "step_across_backward",
    "forward_sweep",
    "backward_sweep",
    "run_filter",
    "run_smooth",
    "gauss_product",
]


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs; defaults follow the reference operating point."""

    mode: str = "smooth"             # "smooth" or "filter"
    passes: int = 5                  # forward/backward passes when smoothing
    i_max: int = 25                  # AMP iterations per frame visit
    stop_tol: float = 1e-5           # AMP early-termination tolerance
    epsilon: float = 1e-7            # amplitude-message broadening parameter
    tau: float = 0.99                # activity threshold for the collapse
    taylor_switch_p01: float = 0.025  # use the Taylor collapse below this p01
    collapse: str = "auto"           # "auto", "threshold", or "taylor"
    pass_tol: float = 1e-6           # stop smoothing once estimates settle
    damping: float = 0.0             # optional AMP damping, off by default
    warm_start: bool = False         # reuse AMP iterates across frame visits
    check_messages: bool = True      # assert probability messages stay in [0,1]

    def __post_init__(self):
        if self.mode not in ("smooth", "filter"):
            raise ValueError(f"mode must be 'smooth' or 'filter', got {self.mode!r}")
        if self.collapse not in ("auto", "threshold", "taylor"):
            raise ValueError(f"unknown collapse method {self.collapse!r}")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        if not 0.0 < self.epsilon <= 1e-3:
            raise ValueError("epsilon must lie in (0, 1e-3]")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class MessageState:
    """All per-(t, n) messages plus the latest AMP iterates per frame.

    Chain messages are indexed by the variable they point at: ``lam_fwd[t]``
    is the forward support message into frame t, ``lam_bwd[t]`` the backward
    one (from frame t+1); ``eta/kappa`` are the amplitude analogues
    (mean/variance, ``inf`` variance meaning uninformative).
    """

    lam_fwd: np.ndarray
    eta_fwd: np.ndarray
    kappa_fwd: np.ndarray
    lam_bwd: np.ndarray
    eta_bwd: np.ndarray
    kappa_bwd: np.ndarray
    pi_bar: np.ndarray   # local prior fed to AMP at the last visit
    xi_bar: np.ndarray
    psi_bar: np.ndarray
    pi_out: np.ndarray   # outgoing activity / amplitude messages
    xi_out: np.ndarray
    psi_out: np.ndarray
    mu: np.ndarray       # latest AMP posterior means (the signal estimate)
    v: np.ndarray        # latest AMP posterior variances
    phi: np.ndarray      # final pseudo-measurements per frame
    c: np.ndarray        # final scalar channel variances per frame
    amp_iterations: np.ndarray = field(default=None)
    z: np.ndarray = None  # final AMP residuals, kept for warm starts

    @property
    def t(self) -> int:
        return self.mu.shape[0]

    @property
    def n(self) -> int:
        return self.mu.shape[1]


def init_state(t: int, n: int, params: ModelParams) -> MessageState:
    cplx = lambda: np.zeros((t, n), dtype=np.complex128)
    real = lambda fill=0.0: np.full((t, n), fill, dtype=float)
    return MessageState(
        lam_fwd=real(params.lam),
        eta_fwd=cplx() + params.zeta,
        kappa_fwd=real(params.sigma2),
        lam_bwd=real(0.5),
        eta_bwd=cplx(),
        kappa_bwd=real(np.inf),
        pi_bar=real(params.lam),
        xi_bar=cplx(),
        psi_bar=real(np.inf),
        pi_out=real(0.5),
        xi_out=cplx(),
        psi_out=real(np.inf),
        mu=cplx(),
        v=real(),
        phi=cplx(),
        c=np.zeros(t),
        amp_iterations=np.zeros(t, dtype=int),
    )


def gauss_product(m1, v1, m2, v2):
    """Moments of the product of two Gaussian messages.

    Works in precision space so infinite (uninformative) variances are exact;
    two uninformative inputs give back (0, inf).
    """
    p1 = np.where(np.isinf(v1), 0.0, 1.0 / np.where(np.isinf(v1), 1.0, v1))
    p2 = np.where(np.isinf(v2), 0.0, 1.0 / np.where(np.isinf(v2), 1.0, v2))
    p = p1 + p2
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(p > 0, 1.0 / np.where(p > 0, p, 1.0), np.inf)
        m = np.where(p > 0, (p1 * m1 + p2 * m2) / np.where(p > 0, p, 1.0), 0.0)
    return m, v


def step_into(state: MessageState, t: int, params: ModelParams) -> LocalPrior:
    """(into): fuse chain messages into the frame's local spike-and-slab prior."""
    lf, lb = state.lam_fwd[t], state.lam_bwd[t]
    num = lf * lb
    den = (1.0 - lf) * (1.0 - lb) + num
    bad = den == 0.0
    if np.any(bad):
        warnings.warn("conflicting certain support messages; treating coefficient as inactive")
    pi = np.where(bad, 0.0, num / np.where(bad, 1.0, den))
    xi, psi = gauss_product(state.eta_fwd[t], state.kappa_fwd[t], state.eta_bwd[t], state.kappa_bwd[t])
    state.pi_bar[t], state.xi_bar[t], state.psi_bar[t] = pi, xi, psi
    return LocalPrior(pi=pi, xi=xi, psi=psi)


def omega(pi, epsilon: float):
    """Weight of the informative component in the broadened amplitude message."""
    e2 = epsilon * epsilon
    return e2 * pi / ((1.0 - pi) + e2 * pi)


def collapse_threshold(phi, c, pi_bar, epsilon: float, tau: float):
    """Pick the mixture component by thresholding the activity belief."""
    keep = pi_bar > tau
    xi = np.where(keep, phi, phi / epsilon)
    psi = np.where(keep, c, c / epsilon**2)
    return xi, psi


def collapse_taylor(phi, c, pi_bar, epsilon: float):
    """Collapse the two-component amplitude message by a second-order fit.

    Matches a single Gaussian to the negative log of the mixture at its mode:
    the dominant component's centre carries the mean, and the curvature there
    (dominant peak plus the other component's local floor) widens the
    variance. Reduces to the informative component as the weight goes to 1 and
    to the broadened component as it goes to 0. Entries with non-finite
    curvature fall back to the threshold rule with tau = 1/2.
    """
    w = omega(pi_bar, epsilon)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
        log_1mw = np.log1p(-w)
    log_eps2 = 2.0 * np.log(epsilon)
    r2 = np.abs(phi) ** 2 / c

    # Peak heights of the mixture at the two component centres (up to 1/(pi*c)).
    log_narrow_at_narrow = log_w
    log_broad_at_narrow = log_1mw + log_eps2 - (1.0 - epsilon) ** 2 * r2
    log_narrow_at_broad = log_w - (1.0 / epsilon - 1.0) ** 2 * r2
    log_broad_at_broad = log_1mw + log_eps2
    peak_narrow = np.logaddexp(log_narrow_at_narrow, log_broad_at_narrow)
    peak_broad = np.logaddexp(log_narrow_at_broad, log_broad_at_broad)
    narrow_wins = peak_narrow >= peak_broad

    with np.errstate(over="ignore"):
        ratio_narrow = np.exp(log_broad_at_narrow - log_narrow_at_narrow)
        ratio_broad = np.exp(log_narrow_at_broad - log_broad_at_broad)
    xi = np.where(narrow_wins, phi, phi / epsilon)
    psi = np.where(narrow_wins, c * (1.0 + ratio_narrow), (c / epsilon**2) * (1.0 + ratio_broad))

    bad = ~np.isfinite(psi)
    if np.any(bad):
        xi_fb, psi_fb = collapse_threshold(phi, c, pi_bar, epsilon, tau=0.5)
        xi = np.where(bad, xi_fb, xi)
        psi = np.where(bad, psi_fb, psi)
    return xi, psi


def step_out(phi, c, prior: LocalPrior, params: ModelParams, config: SolverConfig):
    """(out): activity and amplitude messages leaving the frame.

    The outgoing activity message divides the local prior back out, leaving a
    pure likelihood ratio; it is formed in the log domain so certain beliefs
    (pi_bar of 0 or 1) cannot overflow.
    """
    log_lr = log_likelihood_ratio_inactive(phi, c, prior.xi, prior.psi)
    pi_out = expit(-log_lr)

    method = config.collapse
    if method == "auto":
        method = "taylor" if params.p01 < config.taylor_switch_p01 else "threshold"
    if method == "taylor":
        xi_out, psi_out = collapse_taylor(phi, c, prior.pi, config.epsilon)
    else:
        xi_out, psi_out = collapse_threshold(phi, c, prior.pi, config.epsilon, config.tau)
    return pi_out, xi_out, psi_out


def forward_support_step(lam_fwd, pi_out, params: ModelParams):
    """Forward message through the support-transition factor."""
    den = (1.0 - lam_fwd) * (1.0 - pi_out) + lam_fwd * pi_out
    if np.any(den == 0.0):
        raise FloatingPointError("degenerate support messages in the forward transition")
    return (params.p10 * (1.0 - lam_fwd) * (1.0 - pi_out)
            + (1.0 - params.p01) * lam_fwd * pi_out) / den


def forward_amplitude_step(eta_fwd, kappa_fwd, xi_out, psi_out, params: ModelParams):
    """Forward message through the amplitude-evolution factor."""
    mc, vc = gauss_product(eta_fwd, kappa_fwd, xi_out, psi_out)
    a = params.alpha
    return (1.0 - a) * mc + a * params.zeta, (1.0 - a) ** 2 * vc + a**2 * params.rho


def step_across_forward(state: MessageState, t: int, params: ModelParams) -> None:
    """(across, forward): write the chain messages into frame t+1."""
    state.lam_fwd[t + 1] = forward_support_step(state.lam_fwd[t], state.pi_out[t], params)
    state.eta_fwd[t + 1], state.kappa_fwd[t + 1] = forward_amplitude_step(
        state.eta_fwd[t], state.kappa_fwd[t], state.xi_out[t], state.psi_out[t], params
    )


def step_across_backward(state: MessageState, t: int, params: ModelParams) -> None:
    """(across, backward): write the chain messages into frame t-1.

    Mirror image of the forward step: the support message is the sum-product
    update through the transition factor traversed in reverse, and the
    amplitude message inverts the evolution factor (for a memoryless process,
    alpha = 1, nothing flows backward and the message is uninformative).
    """
    lb, po = state.lam_bwd[t], state.pi_out[t]
    q1 = po * lb
    q0 = (1.0 - po) * (1.0 - lb)
    nu1 = params.p01 * q0 + (1.0 - params.p01) * q1
    nu0 = (1.0 - params.p10) * q0 + params.p10 * q1
    den = nu0 + nu1
    if np.any(den == 0.0):
        raise FloatingPointError("degenerate support messages in the backward transition")
    state.lam_bwd[t - 1] = nu1 / den

    a = params.alpha
    if a == 1.0:
        state.eta_bwd[t - 1] = 0.0
        state.kappa_bwd[t - 1] = np.inf
        return
    mc, vc = gauss_product(state.xi_out[t], state.psi_out[t], state.eta_bwd[t], state.kappa_bwd[t])
    state.eta_bwd[t - 1] = (mc - a * params.zeta) / (1.0 - a)
    state.kappa_bwd[t - 1] = (vc + a**2 * params.rho) / (1.0 - a) ** 2


def _process_frame(state: MessageState, dataset: DynamicDataset, t: int,
                   params: ModelParams, config: SolverConfig) -> None:
    prior = step_into(state, t, params)
    warm = None
    if config.warm_start and state.z is not None and state.amp_iterations[t] > 0:
        from .ampcore import AmpFrameState  # noqa: PLC0415

        warm = AmpFrameState(phi=state.phi[t], mu=state.mu[t], v=state.v[t],
                             c=float(state.c[t]), z=state.z[t],
                             iterations=int(state.amp_iterations[t]))
    amp = amp_frame(
        dataset.y[t],
        dataset.operator(t),
        prior,
        params.sigma_e2,
        i_max=config.i_max,
        stop_tol=config.stop_tol,
        damping=config.damping,
        inf_var_substitute=params.sigma2,
        warm_start=warm,
    )
    state.mu[t], state.v[t] = amp.mu, amp.v
    state.phi[t], state.c[t] = amp.phi, amp.c
    state.amp_iterations[t] = amp.iterations
    if config.warm_start:
        if state.z is None:
            state.z = np.zeros((state.t, amp.z.size), dtype=np.complex128)
        state.z[t] = amp.z
    pi_out, xi_out, psi_out = step_out(amp.phi, amp.c, prior, params, config)
    state.pi_out[t], state.xi_out[t], state.psi_out[t] = pi_out, xi_out, psi_out


def _check_probability_messages(state: MessageState) -> None:
    state.lam_fwd[...] = check_unit_interval_array(state.lam_fwd, "lam_fwd")
    state.lam_bwd[...] = check_unit_interval_array(state.lam_bwd, "lam_bwd")
    state.pi_bar[...] = check_unit_interval_array(state.pi_bar, "pi_bar")
    state.pi_out[...] = check_unit_interval_array(state.pi_out, "pi_out")


def forward_sweep(state: MessageState, dataset: DynamicDataset,
                  params: ModelParams, config: SolverConfig,
                  until: int | None = None) -> None:
    """One pass t = 1..T (or up to ``until`` exclusive) of into/within/out/across."""
    t_end = state.t if until is None else until
    state.lam_fwd[0] = params.lam
    state.eta_fwd[0] = params.zeta
    state.kappa_fwd[0] = params.sigma2
    for t in range(t_end):
        _process_frame(state, dataset, t, params, config)
        if t + 1 < state.t:
            step_across_forward(state, t, params)
    if config.check_messages:
        _check_probability_messages(state)


def backward_sweep(state: MessageState, dataset: DynamicDataset,
                   params: ModelParams, config: SolverConfig) -> None:
    """The backward portion of one smoothing pass: frames T-1 .. 1 revisited."""
    tt = state.t
    state.lam_bwd[tt - 1] = 0.5
    state.eta_bwd[tt - 1] = 0.0
    state.kappa_bwd[tt - 1] = np.inf
    for t in range(tt - 2, -1, -1):
        step_across_backward(state, t + 1, params)
        _process_frame(state, dataset, t, params, config)
    if config.check_messages:
        _check_probability_messages(state)


def run_filter(dataset: DynamicDataset, params: ModelParams, config: SolverConfig) -> MessageState:
    """Single causal forward pass; estimates at t use measurements 1..t only."""
    params.require_dynamic()
    state = init_state(dataset.t, dataset.n, params)
    forward_sweep(state, dataset, params, config)
    return state


def run_smooth(dataset: DynamicDataset, params: ModelParams, config: SolverConfig) -> MessageState:
    """Alternating forward/backward passes; stops early once estimates settle."""
    params.require_dynamic()
    state = init_state(dataset.t, dataset.n, params)
    prev = None
    for _ in range(config.passes):
        forward_sweep(state, dataset, params, config)
        backward_sweep(state, dataset, params, config)
        if prev is not None and float(np.max(np.abs(state.mu - prev))) < config.pass_tol:
            break
        prev = state.mu.copy()
    return state

"""Posterior summaries assembled from the message state.

These are the per-coefficient beliefs the EM step consumes: support
marginals, pairwise support probabilities at the transition factors,
amplitude moments, and amplitude cross-moments at the evolution factors.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelParams, _read_blob, _write_blob
from .scheduler import MessageState, gauss_product

__all__ = [
    "PosteriorEstimates",
    "support_marginal",
    "support_pairwise",
    "theta_moments",
    "theta_crossmoment",
    "compute_posteriors",
    "save_estimates",
    "load_estimates",
]


@dataclass
class PosteriorEstimates:
    """Marginal posterior summaries for every coefficient and timestep."""

    x_mean: np.ndarray               # (T, N) complex, E[x | measurements]
    x_var: np.ndarray                # (T, N) var{x | measurements}
    s_prob: np.ndarray               # (T, N) P(active | measurements)
    theta_mean: np.ndarray           # (T, N) complex, E[theta | measurements]
    theta_var: np.ndarray            # (T, N) var{theta | measurements}
    s_pair: np.ndarray | None = None        # (T-1, N) P(active at t and t-1)
    theta_cross: np.ndarray | None = None   # (T-1, N) E[theta_t^* theta_{t-1}]

    @property
    def t(self) -> int:
        return self.x_mean.shape[0]

    @property
    def n(self) -> int:
        return self.x_mean.shape[1]


def support_marginal(lam_fwd, pi_out, lam_bwd):
    """Posterior activity probability from the three messages at a support node."""
    num = lam_fwd * pi_out * lam_bwd
    den = num + (1.0 - lam_fwd) * (1.0 - pi_out) * (1.0 - lam_bwd)
    bad = den == 0.0
    if np.any(bad):
        warnings.warn("conflicting certain support messages; marginal set to 0")
    return np.where(bad, 0.0, num / np.where(bad, 1.0, den))


def support_pairwise(lam_fwd_prev, pi_out_prev, pi_out_cur, lam_bwd_cur, params: ModelParams):
    """P(active at t-1 and t): the joint belief at the transition factor.

    Normalizes incoming-message x transition-kernel x outgoing-message over
    the four support combinations and returns the (1, 1) mass.
    """
    in1 = lam_fwd_prev * pi_out_prev
    in0 = (1.0 - lam_fwd_prev) * (1.0 - pi_out_prev)
    out1 = pi_out_cur * lam_bwd_cur
    out0 = (1.0 - pi_out_cur) * (1.0 - lam_bwd_cur)
    j11 = in1 * (1.0 - params.p01) * out1
    j10 = in1 * params.p01 * out0
    j01 = in0 * params.p10 * out1
    j00 = in0 * (1.0 - params.p10) * out0
    total = j11 + j10 + j01 + j00
    if np.any(total == 0.0):
        raise FloatingPointError("all four pairwise support masses vanished")
    return j11 / total


def theta_moments(eta_fwd, kappa_fwd, xi_out, psi_out, eta_bwd, kappa_bwd):
    """Amplitude posterior mean/variance: product of the three incident messages.

    All-uninformative inputs return (0, inf); the caller substitutes the prior.
    """
    m12, v12 = gauss_product(eta_fwd, kappa_fwd, xi_out, psi_out)
    return gauss_product(m12, v12, eta_bwd, kappa_bwd)


def theta_crossmoment(m1, v1, m2, v2, params: ModelParams):
    """E[theta_t^* theta_{t-1}] from the pairwise Gaussian belief at the
    evolution factor.

    ``(m1, v1)`` is the message from the earlier amplitude node into the
    factor, ``(m2, v2)`` the one from the later node. Builds the bivariate
    Gaussian belief and returns cross-covariance plus the product of means.
    """
    a = 1.0 - params.alpha
    q = params.alpha**2 * params.rho
    p1 = np.where(np.isinf(v1), 0.0, 1.0 / np.where(np.isinf(v1), 1.0, v1))
    p2 = np.where(np.isinf(v2), 0.0, 1.0 / np.where(np.isinf(v2), 1.0, v2))
    j11 = p1 + a**2 / q
    j12 = -a / q
    j22 = p2 + 1.0 / q
    det = j11 * j22 - j12**2
    if np.any(det <= 0.0) or not np.all(np.isfinite(det)):
        raise FloatingPointError("singular pairwise amplitude belief")
    h1 = p1 * m1 - a * params.alpha * params.zeta / q
    h2 = p2 * m2 + params.alpha * params.zeta / q
    mu_prev = (j22 * h1 - j12 * h2) / det
    mu_cur = (-j12 * h1 + j11 * h2) / det
    cross_cov = -j12 / det
    return cross_cov + mu_prev * np.conj(mu_cur)


def _refreshed_forward_chains(state: MessageState, params: ModelParams):
    """Relax the forward chain messages against the current frame evidence.

    After a backward sweep the stored forward messages predate the latest
    frame updates; one cheap relaxation (no frame reprocessing) restores a
    consistent message snapshot, which makes the pairwise beliefs marginalize
    exactly onto the node marginals.
    """
    from .scheduler import forward_amplitude_step, forward_support_step  # noqa: PLC0415

    lam = state.lam_fwd.copy()
    eta = state.eta_fwd.copy()
    kappa = state.kappa_fwd.copy()
    lam[0] = params.lam
    eta[0] = params.zeta
    kappa[0] = params.sigma2
    for t in range(state.t - 1):
        lam[t + 1] = forward_support_step(lam[t], state.pi_out[t], params)
        eta[t + 1], kappa[t + 1] = forward_amplitude_step(
            eta[t], kappa[t], state.xi_out[t], state.psi_out[t], params
        )
    return lam, eta, kappa


def compute_posteriors(state: MessageState, params: ModelParams) -> PosteriorEstimates:
    """Assemble all posterior summaries from the current message state."""
    lam_fwd, eta_fwd, kappa_fwd = _refreshed_forward_chains(state, params)
    s_prob = support_marginal(lam_fwd, state.pi_out, state.lam_bwd)
    th_mean, th_var = theta_moments(
        eta_fwd, kappa_fwd, state.xi_out, state.psi_out,
        state.eta_bwd, state.kappa_bwd,
    )
    uninformative = np.isinf(th_var)
    th_mean = np.where(uninformative, params.zeta, th_mean)
    th_var = np.where(uninformative, params.sigma2, th_var)

    tt = state.t
    s_pair = None
    theta_cross = None
    if tt > 1:
        s_pair = support_pairwise(
            lam_fwd[:-1], state.pi_out[:-1],
            state.pi_out[1:], state.lam_bwd[1:], params,
        )
        m1, v1 = gauss_product(eta_fwd[:-1], kappa_fwd[:-1],
                               state.xi_out[:-1], state.psi_out[:-1])
        m2, v2 = gauss_product(state.xi_out[1:], state.psi_out[1:],
                               state.eta_bwd[1:], state.kappa_bwd[1:])
        theta_cross = theta_crossmoment(m1, v1, m2, v2, params)

    return PosteriorEstimates(
        x_mean=state.mu.copy(),
        x_var=state.v.copy(),
        s_prob=s_prob,
        theta_mean=th_mean,
        theta_var=th_var,
        s_pair=s_pair,
        theta_cross=theta_cross,
    )


_ESTIMATE_FIELDS = (
    ("x_mean", True), ("x_var", False), ("s_prob", False),
    ("theta_mean", True), ("theta_var", False),
)


def save_estimates(post: PosteriorEstimates, directory: str | Path) -> None:
    """Write the posterior summaries in the dataset binary format."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, _ in _ESTIMATE_FIELDS:
        _write_blob(d / f"{name}.bin", getattr(post, name))
    manifest = {"format": "dyncs-estimates-v1", "t": post.t, "n": post.n}
    (d / "estimates.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_estimates(directory: str | Path) -> PosteriorEstimates:
    d = Path(directory)
    manifest = json.loads((d / "estimates.json").read_text())
    if manifest.get("format") != "dyncs-estimates-v1":
        raise ValueError(f"{d}: not a dyncs estimates directory")
    shape = (manifest["t"], manifest["n"])
    fields = {name: _read_blob(d / f"{name}.bin", shape, complex_)
              for name, complex_ in _ESTIMATE_FIELDS}
    return PosteriorEstimates(**fields)

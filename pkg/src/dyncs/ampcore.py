"""Scalar spike-and-slab channel functions and the per-frame AMP loop.

The scalar channel: a pseudo-measurement ``phi = x + CN(0, c)`` of a
coefficient with prior ``(1-pi)*delta(x) + pi*CN(x; xi, psi)``. The posterior
is a two-component mixture whose statistics have closed forms:

* ``gamma``: posterior odds of the spike against the slab,
* ``posterior_mean`` (F), ``posterior_variance`` (G),
* ``posterior_mean_slope`` (F' = G / c), the Onsager slope.

``amp_frame`` runs the Onsager-corrected iteration for one timestep:
matched filter + current mean, scalar shrinkage, variance average, corrected
residual. Everything is computed in the log/odds domain so that extreme
activity beliefs and high SNR cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "LocalPrior",
    "AmpFrameState",
    "MatrixOperator",
    "DivergenceError",
    "log_likelihood_ratio_inactive",
    "log_gamma",
    "gamma",
    "posterior_activity",
    "posterior_mean",
    "posterior_variance",
    "posterior_mean_slope",
    "amp_frame",
]


@dataclass
class LocalPrior:
    """Per-coefficient spike-and-slab prior fed to one AMP frame.

    ``psi = np.inf`` encodes an uninformative slab (the coefficient's
    amplitude belief carries no information yet).
    """

    pi: np.ndarray   # (N,) activity probability in [0, 1]
    xi: np.ndarray   # (N,) complex slab mean
    psi: np.ndarray  # (N,) slab variance, > 0 or +inf

    def __post_init__(self):
        self.pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=np.complex128))
        self.psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ValueError("activity probabilities must lie in [0, 1]")
        if np.any(self.psi <= 0):
            raise ValueError("slab variances must be positive (inf allowed)")
        self.has_flat_slab = bool(np.any(np.isinf(self.psi)))
        self._log_prior_odds = None

    @property
    def log_prior_odds(self) -> np.ndarray:
        """log((1-pi)/pi), cached: it is constant across AMP iterations."""
        if self._log_prior_odds is None:
            with np.errstate(divide="ignore"):
                self._log_prior_odds = np.log1p(-self.pi) - np.log(self.pi)
        return self._log_prior_odds


@dataclass
class AmpFrameState:
    """Iterates of one frame's AMP run (final values)."""

    phi: np.ndarray  # (N,) pseudo-measurements from the last iteration
    mu: np.ndarray   # (N,) posterior means
    v: np.ndarray    # (N,) posterior variances
    c: float         # scalar variance of the pseudo-measurement channel
    z: np.ndarray    # (M,) Onsager-corrected residual
    iterations: int


class DivergenceError(RuntimeError):
    """AMP produced non-finite iterates or a runaway variance state."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class MatrixOperator:
    """Dense measurement operator with application counters.

    Counts forward/adjoint products so tests can pin the per-iteration cost
    of the AMP loop (two applications per iteration).
    """

    def __init__(self, a: np.ndarray):
        self.a = np.asarray(a, dtype=np.complex128)
        self.n_apply = 0
        self.n_adjoint = 0

    @property
    def shape(self):
        return self.a.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        self.n_apply += 1
        return self.a @ x

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        # A^H r as conj(conj(r) @ A): one vector-matrix product on the stored
        # layout, no transposed copy of A.
        self.n_adjoint += 1
        return np.conj(np.conj(r) @ self.a)

    @property
    def n_products(self) -> int:
        return self.n_apply + self.n_adjoint


def _slab_posterior(phi, c, xi, psi):
    """Mean and variance of the slab component's Gaussian posterior."""
    if not np.any(np.isinf(psi)):
        denom = psi + c
        return (psi * phi + xi * c) / denom, psi * c / denom
    inf = np.isinf(psi)
    with np.errstate(invalid="ignore", over="ignore"):
        denom = psi + c
        m = np.where(inf, phi, (psi * phi + xi * c) / np.where(inf, 1.0, denom))
        q = np.where(inf, c, psi * c / np.where(inf, 1.0, denom))
    return m, q


def log_likelihood_ratio_inactive(phi, c, xi, psi) -> np.ndarray:
    """Log likelihood ratio of the spike against the slab given ``phi``.

    This is the activity-belief-free part of ``log gamma``:
    ``log CN(phi; 0, c) - log CN(phi; xi, psi + c)``. Returns ``+inf`` for an
    uninformative slab (``psi = inf``), whose density vanishes everywhere.
    """
    phi = np.asarray(phi, dtype=np.complex128)
    c = np.asarray(c, dtype=float)
    xi = np.asarray(xi, dtype=np.complex128)
    psi = np.asarray(psi, dtype=float)
    inf = np.isinf(psi)
    if not np.any(inf):
        denom = psi + c
        quad = -(psi * np.abs(phi) ** 2 + 2.0 * c * np.real(np.conj(xi) * phi)
                 - c * np.abs(xi) ** 2) / (c * denom)
        return np.log(denom / c) + quad
    psi_f = np.where(inf, 1.0, psi)
    quad = -(psi_f * np.abs(phi) ** 2 + 2.0 * c * np.real(np.conj(xi) * phi) - c * np.abs(xi) ** 2) / (
        c * (psi_f + c)
    )
    out = np.log((psi_f + c) / c) + quad
    return np.where(inf, np.inf, out)


def log_gamma(phi, c, prior: LocalPrior) -> np.ndarray:
    """``log gamma``: log posterior odds of the spike, prior odds included."""
    return prior.log_prior_odds + log_likelihood_ratio_inactive(phi, c, prior.xi, prior.psi)


def gamma(phi, c, prior: LocalPrior) -> np.ndarray:
    """Posterior odds of the spike; ``+inf`` when ``pi = 0``, 0 when ``pi = 1``."""
    with np.errstate(over="ignore"):
        return np.exp(log_gamma(phi, c, prior))


def posterior_activity(phi, c, prior: LocalPrior) -> np.ndarray:
    """``1 / (1 + gamma)``: posterior probability the coefficient is active."""
    lg = log_gamma(phi, c, prior)
    if not prior.has_flat_slab:
        return expit(-lg)
    out = expit(-np.where(np.isnan(lg), np.inf, lg))
    # log_gamma is +inf - inf = nan only when pi = 1 meets psi = inf; the slab
    # wins by construction there.
    return np.where(np.isnan(lg) & (prior.pi == 1.0), 1.0, out)


def _mean_and_variance(phi, c, prior: LocalPrior):
    """Fused F and G evaluation (one activity/slab computation)."""
    m, q = _slab_posterior(phi, c, prior.xi, prior.psi)
    act = posterior_activity(phi, c, prior)
    return act * m, act * q + act * (1.0 - act) * np.abs(m) ** 2


def posterior_mean(phi, c, prior: LocalPrior) -> np.ndarray:
    """F: MMSE estimate of the coefficient from the scalar channel."""
    return _mean_and_variance(phi, c, prior)[0]


def posterior_variance(phi, c, prior: LocalPrior) -> np.ndarray:
    """G: posterior variance of the coefficient from the scalar channel."""
    return _mean_and_variance(phi, c, prior)[1]


def posterior_mean_slope(phi, c, prior: LocalPrior) -> np.ndarray:
    """F': derivative of F with respect to phi, identically G / c."""
    return posterior_variance(phi, c, prior) / c


def _initial_c(prior: LocalPrior, inf_var_substitute: float | None) -> float:
    psi = prior.psi
    if np.any(np.isinf(psi)):
        if inf_var_substitute is None:
            raise ValueError(
                "prior has uninformative slab variances; pass inf_var_substitute "
                "(e.g. the model's steady-state variance) to seed the AMP variance state"
            )
        psi = np.where(np.isinf(psi), inf_var_substitute, psi)
    return 100.0 * float(np.sum(psi))


def amp_frame(
    y: np.ndarray,
    a,
    prior: LocalPrior,
    sigma_e2: float,
    i_max: int = 25,
    stop_tol: float = 1e-5,
    damping: float = 0.0,
    inf_var_substitute: float | None = None,
    warm_start: AmpFrameState | None = None,
) -> AmpFrameState:
    """Run the AMP inner loop for one frame.

    Parameters
    ----------
    y : (M,) complex measurements.
    a : (M, N) array or MatrixOperator.
    prior : per-coefficient spike-and-slab beliefs.
    sigma_e2 : measurement noise variance.
    i_max : iteration cap.
    stop_tol : stop once ``||mu_new - mu_old||_2 / N < stop_tol``.
    damping : optional relaxation of the mean/residual updates (0 = off).
    inf_var_substitute : variance used in place of infinite slab variances
        when seeding the scalar variance state.
    warm_start : state of a previous visit to continue from, instead of the
        cold (z=y, mu=0, large c) initialization.

    Raises
    ------
    DivergenceError
        On non-finite iterates or a variance state growing by more than 1e6x.
    """
    op = a if isinstance(a, MatrixOperator) else MatrixOperator(a)
    m_dim = op.shape[0]
    n_dim = op.shape[1]
    y = np.asarray(y, dtype=np.complex128)

    if warm_start is not None:
        z = warm_start.z.copy()
        mu = warm_start.mu.copy()
        c = float(warm_start.c)
    else:
        z = y.copy()
        mu = np.zeros(n_dim, dtype=np.complex128)
        c = _initial_c(prior, inf_var_substitute)
    c_cap = 1e6 * c
    phi = np.zeros(n_dim, dtype=np.complex128)
    v = np.zeros(n_dim)

    iterations = 0
    for i in range(1, i_max + 1):
        phi = op.adjoint(z) + mu
        mu_new, v_new = _mean_and_variance(phi, c, prior)
        if damping > 0.0 and i > 1:
            mu_new = (1.0 - damping) * mu_new + damping * mu
        onsager = (z / m_dim) * float(np.sum(v_new)) / c
        c_new = sigma_e2 + float(np.sum(v_new)) / m_dim
        z_new = y - op.apply(mu_new) + onsager
        if damping > 0.0 and i > 1:
            z_new = (1.0 - damping) * z_new + damping * z

        if not (np.all(np.isfinite(mu_new.view(float))) and np.all(np.isfinite(z_new.view(float))) and np.isfinite(c_new)):
            raise DivergenceError("AMP produced non-finite iterates", iteration=i)
        if c_new > c_cap:
            raise DivergenceError("AMP variance state grew beyond 1e6x its initial value", iteration=i)

        delta = float(np.linalg.norm(mu_new - mu)) / n_dim
        mu, v, z, c = mu_new, v_new, z_new, c_new
        iterations = i
        # The first update steps away from the zero initializer under a huge
        # variance state, so its small change is not evidence of convergence;
        # a finite tolerance only applies once two real estimates exist.
        if delta < stop_tol and (i > 1 or not np.isfinite(stop_tol)):
            break

    return AmpFrameState(phi=phi, mu=mu, v=v, c=c, z=z, iterations=iterations)

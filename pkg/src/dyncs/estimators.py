"""Estimator-style front end following the scikit-learn parameter API.

The classes duck-type the sklearn contract (``get_params`` / ``set_params``,
constructor arguments stored verbatim, fitted attributes with trailing
underscores) without depending on scikit-learn itself, so they compose with
pipeline tooling that relies on the convention.

``fit`` consumes a DynamicDataset; fitted attributes expose the posterior
summaries, and ``score`` returns the negative TNMSE in dB when the dataset
carries ground truth.
"""

from __future__ import annotations

import inspect

import numpy as np

from .em import em_loop, init_heuristics
from .harness import run_bg_amp, tnmse_db
from .model import DynamicDataset, ModelParams
from .oracle import OracleProblem, skf_estimate, sks_estimate
from .posteriors import compute_posteriors
from .scheduler import SolverConfig, run_filter, run_smooth

__all__ = ["BaseEstimator", "DynamicAmp", "FrameAmp", "SupportAwareSmoother"]


class BaseEstimator:
    """Minimal get_params/set_params implementation (sklearn-compatible)."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **kwargs):
        valid = set(self._param_names())
        for key, value in kwargs.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    def _check_fitted(self):
        if not hasattr(self, "x_mean_"):
            raise RuntimeError(f"{type(self).__name__} is not fitted yet; call fit first")


def _check_dataset(x) -> DynamicDataset:
    if not isinstance(x, DynamicDataset):
        raise TypeError(f"expected a DynamicDataset, got {type(x).__name__}")
    return x


def _expose(estimator, post, params):
    estimator.x_mean_ = post.x_mean
    estimator.x_var_ = post.x_var
    estimator.s_prob_ = post.s_prob
    estimator.theta_mean_ = post.theta_mean
    estimator.theta_var_ = post.theta_var
    estimator.params_ = params


class DynamicAmp(BaseEstimator):
    """Temporal-structure-aware AMP recovery (filtering or smoothing).

    Parameters mirror the solver configuration; ``params`` carries the model
    hyperparameters and may be None when ``learn_params`` is set, in which
    case EM starts from data-driven heuristics.
    """

    def __init__(self, params: ModelParams | None = None, mode: str = "smooth",
                 passes: int = 5, i_max: int = 25, stop_tol: float = 1e-5,
                 epsilon: float = 1e-7, tau: float = 0.99,
                 taylor_switch_p01: float = 0.025, collapse: str = "auto",
                 damping: float = 0.0, warm_start: bool = False,
                 learn_params: bool = False, max_em_iters: int = 300):
        self.params = params
        self.mode = mode
        self.passes = passes
        self.i_max = i_max
        self.stop_tol = stop_tol
        self.epsilon = epsilon
        self.tau = tau
        self.taylor_switch_p01 = taylor_switch_p01
        self.collapse = collapse
        self.damping = damping
        self.warm_start = warm_start
        self.learn_params = learn_params
        self.max_em_iters = max_em_iters

    def _config(self) -> SolverConfig:
        return SolverConfig(mode=self.mode, passes=self.passes, i_max=self.i_max,
                            stop_tol=self.stop_tol, epsilon=self.epsilon, tau=self.tau,
                            taylor_switch_p01=self.taylor_switch_p01,
                            collapse=self.collapse, damping=self.damping,
                            warm_start=self.warm_start)

    def fit(self, x: DynamicDataset, y=None):
        d = _check_dataset(x)
        config = self._config()
        if self.learn_params:
            if self.mode != "smooth":
                raise ValueError("learn_params requires smoothing mode")
            init = self.params if self.params is not None else init_heuristics(d)
            post, learned, trace = em_loop(d, init_params=init, config=config,
                                           max_em_iters=self.max_em_iters)
            _expose(self, post, learned)
            self.em_trace_ = trace
            return self
        params = self.params if self.params is not None else d.params
        if params is None:
            raise ValueError("no model parameters: pass params or set learn_params")
        runner = run_smooth if self.mode == "smooth" else run_filter
        state = runner(d, params, config)
        _expose(self, compute_posteriors(state, params), params)
        return self

    def fit_predict(self, x: DynamicDataset, y=None) -> np.ndarray:
        return self.fit(x).x_mean_

    def score(self, x: DynamicDataset, y=None) -> float:
        """Negative TNMSE (dB) of the fitted estimate against ground truth."""
        self._check_fitted()
        d = _check_dataset(x)
        if d.truth is None:
            raise ValueError("dataset carries no ground truth to score against")
        return -tnmse_db(d.truth.x, self.x_mean_)


class FrameAmp(BaseEstimator):
    """Frame-independent AMP baseline under the static marginal prior."""

    def __init__(self, params: ModelParams | None = None, i_max: int = 25,
                 stop_tol: float = 1e-5, damping: float = 0.0):
        self.params = params
        self.i_max = i_max
        self.stop_tol = stop_tol
        self.damping = damping

    def fit(self, x: DynamicDataset, y=None):
        d = _check_dataset(x)
        params = self.params if self.params is not None else d.params
        if params is None:
            raise ValueError("no model parameters available")
        config = SolverConfig(i_max=self.i_max, stop_tol=self.stop_tol,
                              damping=self.damping)
        _expose(self, run_bg_amp(d, params, config), params)
        return self

    def fit_predict(self, x: DynamicDataset, y=None) -> np.ndarray:
        return self.fit(x).x_mean_

    def score(self, x: DynamicDataset, y=None) -> float:
        self._check_fitted()
        d = _check_dataset(x)
        if d.truth is None:
            raise ValueError("dataset carries no ground truth to score against")
        return -tnmse_db(d.truth.x, self.x_mean_)


class SupportAwareSmoother(BaseEstimator):
    """Genie-aided Gaussian smoother/filter; ``fit`` takes the known support
    as the target argument (or uses the dataset's ground truth)."""

    def __init__(self, params: ModelParams | None = None, mode: str = "smooth",
                 max_iters: int = 400, tol: float = 1e-10, damping: float = 0.3):
        self.params = params
        self.mode = mode
        self.max_iters = max_iters
        self.tol = tol
        self.damping = damping

    def fit(self, x: DynamicDataset, y=None):
        d = _check_dataset(x)
        support = y
        if support is None:
            if d.truth is None:
                raise ValueError("pass the known support as y or provide ground truth")
            support = d.truth.s
        params = self.params if self.params is not None else d.params
        if params is None:
            raise ValueError("no model parameters available")
        problem = OracleProblem(d, np.asarray(support), params)
        if self.mode == "smooth":
            post = sks_estimate(problem, max_iters=self.max_iters, tol=self.tol,
                                damping=self.damping)
        elif self.mode == "filter":
            post = skf_estimate(problem, tol=self.tol, damping=self.damping)
        else:
            raise ValueError(f"mode must be 'smooth' or 'filter', got {self.mode!r}")
        _expose(self, post, params)
        return self

    def fit_predict(self, x: DynamicDataset, y=None) -> np.ndarray:
        return self.fit(x, y).x_mean_

"""Signal model: parameter container, synthetic data generation, dataset I/O.

The generative model for a length-``T`` time series of sparse vectors
``x[t] (N,)`` observed through ``y[t] = A[t] @ x[t] + e[t] (M,)``:

* support ``s[t] (N,)``: independent stationary binary Markov chains with
  activity rate ``lam`` and active-to-inactive transition probability ``p01``
  (the reverse rate ``p10`` follows from stationarity),
* amplitudes ``theta[t] (N,)``: independent stationary complex Gauss-Markov
  chains ``theta[t] = (1-alpha)*(theta[t-1]-zeta) + alpha*w[t] + zeta`` with
  ``w[t] ~ CN(0, rho)``,
* ``x[t] = s[t] * theta[t]`` elementwise, and circular AWGN ``e[t]`` with
  variance ``sigma_e2``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import (
    as_complex_matrix,
    check_index_count,
    check_positive,
    check_probability,
    check_unit_columns,
)

__all__ = [
    "ModelParams",
    "GroundTruth",
    "DynamicDataset",
    "derive_p10",
    "steady_state_variance",
    "rho_for_variance",
    "noise_variance_for_snr",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
]


def derive_p10(lam: float, p01: float) -> float:
    """Inactive-to-active transition probability implied by stationarity.

    A chain with activity rate ``lam`` and active-to-inactive probability
    ``p01`` stays at marginal activity ``lam`` for every t only when
    ``p10 = lam * p01 / (1 - lam)``.

    Raises
    ------
    ValueError
        If ``lam == 1`` (degenerate chain) or the implied ``p10`` exceeds 1.
    """
    check_probability(p01, "p01")
    check_probability(lam, "lam")
    if lam == 1.0:
        raise ValueError("lam=1 is degenerate: p10 is undefined for an always-active chain")
    p10 = lam * p01 / (1.0 - lam)
    if p10 > 1.0:
        raise ValueError(f"(lam={lam}, p01={p01}) implies p10={p10:.4g} > 1; no stationary chain exists")
    return p10


def steady_state_variance(alpha: float, rho: float) -> float:
    """Stationary variance ``alpha*rho/(2-alpha)`` of the amplitude process."""
    check_positive(rho, "rho")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(
            f"alpha={alpha} outside (0, 1]; alpha=0 freezes the amplitudes and leaves "
            "the process variance undefined (handle static amplitudes explicitly)"
        )
    return alpha * rho / (2.0 - alpha)


def rho_for_variance(sigma2: float, alpha: float) -> float:
    """Innovation variance giving steady-state variance ``sigma2``: inverts
    ``sigma2 = alpha*rho/(2-alpha)``."""
    check_positive(sigma2, "sigma2")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside (0, 1]")
    return sigma2 * (2.0 - alpha) / alpha


@dataclass(frozen=True)
class ModelParams:
    """The six scalar hyperparameters of the signal model.

    Attributes
    ----------
    lam : stationary activity rate, in [0, 1).
    p01 : active-to-inactive transition probability, in [0, 1].
    zeta : mean of the amplitude process (complex).
    alpha : amplitude forgetting factor, in [0, 1]; 1 = memoryless, ->0 = static.
    rho : innovation variance of the amplitude process, > 0.
    sigma_e2 : measurement noise variance, > 0.
    """

    lam: float
    p01: float
    zeta: complex = 0.0
    alpha: float = 0.01
    rho: float = 199.0
    sigma_e2: float = 1e-3

    def __post_init__(self):
        check_probability(self.lam, "lam", allow_one=False)
        check_probability(self.p01, "p01")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha={self.alpha} outside [0, 1]")
        check_positive(self.rho, "rho")
        check_positive(self.sigma_e2, "sigma_e2")
        if not np.isfinite(self.zeta):
            raise ValueError("zeta must be finite")
        derive_p10(self.lam, self.p01)  # reject combinations with p10 > 1

    @property
    def p10(self) -> float:
        return derive_p10(self.lam, self.p01)

    @property
    def sigma2(self) -> float:
        """Steady-state amplitude variance; 0 when alpha == 0 (static amplitudes)."""
        if self.alpha == 0.0:
            return 0.0
        return steady_state_variance(self.alpha, self.rho)

    def require_dynamic(self) -> None:
        """Reject parameter sets the message-passing solvers cannot handle."""
        if self.alpha == 0.0:
            raise ValueError("alpha=0 gives a zero-variance amplitude prior; solvers need alpha > 0")

    def replace(self, **kwargs) -> "ModelParams":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "p01": self.p01,
            "zeta_re": float(np.real(self.zeta)),
            "zeta_im": float(np.imag(self.zeta)),
            "alpha": self.alpha,
            "rho": self.rho,
            "sigma_e2": self.sigma_e2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        zeta = complex(d.get("zeta_re", 0.0), d.get("zeta_im", 0.0))
        return cls(lam=d["lam"], p01=d["p01"], zeta=zeta, alpha=d["alpha"],
                   rho=d["rho"], sigma_e2=d["sigma_e2"])


@dataclass
class GroundTruth:
    """Hidden state of a synthetic dataset: support, amplitudes, and the signal."""

    s: np.ndarray      # (T, N) float 0/1
    theta: np.ndarray  # (T, N) complex
    x: np.ndarray      # (T, N) complex, x = s * theta

    def __post_init__(self):
        if not np.array_equal(self.x, self.s * self.theta):
            raise ValueError("ground truth violates x = s * theta")


@dataclass
class DynamicDataset:
    """Measurements and operators for one recovery problem.

    ``a`` is either ``(T, M, N)`` (time-varying operators) or ``(M, N)``
    (one operator shared by every timestep). Columns must have unit norm.
    """

    y: np.ndarray                      # (T, M) complex
    a: np.ndarray                      # (T, M, N) or (M, N) complex
    truth: GroundTruth | None = None
    params: ModelParams | None = None  # generating parameters, when known
    seed: int | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.complex128)
        self.a = np.asarray(self.a, dtype=np.complex128)
        if self.y.ndim != 2:
            raise ValueError(f"y must be (T, M), got shape {self.y.shape}")
        if self.a.ndim not in (2, 3):
            raise ValueError(f"a must be (M, N) or (T, M, N), got shape {self.a.shape}")
        if self.a.shape[-2] != self.y.shape[1]:
            raise ValueError("measurement count of a and y disagree")
        if self.a.ndim == 3 and self.a.shape[0] != self.y.shape[0]:
            raise ValueError("timestep count of a and y disagree")
        if self.a.ndim == 2:
            check_unit_columns(self.a)
        else:
            for t in range(self.a.shape[0]):
                check_unit_columns(self.a[t], name=f"A[{t}]")
        if self.truth is not None:
            if self.truth.x.shape != (self.t, self.n):
                raise ValueError("truth dimensions disagree with dataset")

    @property
    def t(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @property
    def n(self) -> int:
        return self.a.shape[-1]

    @property
    def time_invariant(self) -> bool:
        return self.a.ndim == 2

    def operator(self, t: int) -> np.ndarray:
        return self.a if self.time_invariant else self.a[t]


def noise_variance_for_snr(noiseless: np.ndarray, snr_db: float) -> float:
    """Noise variance that sets the measurement SNR to ``snr_db``.

    ``noiseless`` holds the clean measurements ``A[t] @ x[t]`` stacked as
    (T, M). The variance is the average per-sample measurement energy divided
    by ``10**(snr_db/10)``.
    """
    z = np.asarray(noiseless)
    energy = float(np.sum(np.abs(z) ** 2))
    if energy == 0.0:
        raise ValueError("noiseless measurements carry zero energy; SNR is undefined")
    return energy / z.size / 10.0 ** (snr_db / 10.0)


def _complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)


def _sample_support(rng: np.random.Generator, params: ModelParams, t: int, n: int) -> np.ndarray:
    s = np.empty((t, n))
    s[0] = rng.random(n) < params.lam
    p01, p10 = params.p01, params.p10
    for k in range(1, t):
        u = rng.random(n)
        active = s[k - 1] > 0.5
        s[k] = np.where(active, u >= p01, u < p10)
    return s.astype(float)


def _sample_amplitudes(rng: np.random.Generator, params: ModelParams, t: int, n: int) -> np.ndarray:
    theta = np.empty((t, n), dtype=np.complex128)
    sigma2 = params.sigma2
    theta[0] = params.zeta + np.sqrt(sigma2) * _complex_normal(rng, n)
    a = params.alpha
    for k in range(1, t):
        w = np.sqrt(params.rho) * _complex_normal(rng, n)
        theta[k] = (1.0 - a) * (theta[k - 1] - params.zeta) + a * w + params.zeta
    return theta


def _sample_operator(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    a = _complex_normal(rng, (m, n))
    a /= np.linalg.norm(a, axis=0, keepdims=True)
    return a


def generate_synthetic(
    params: ModelParams,
    n: int,
    m: int,
    t: int,
    seed: int,
    *,
    snr_db: float | None = None,
    time_invariant_a: bool = False,
) -> DynamicDataset:
    """Draw a dataset (with ground truth) from the signal model.

    Fully deterministic given ``seed``: support, amplitudes, operators, and
    noise each consume an independent child stream of one SeedSequence, so
    changing e.g. T leaves earlier draws of the other components unchanged.

    When ``snr_db`` is given it overrides ``params.sigma_e2`` with the value
    that hits the requested SNR for this realization; the dataset's ``params``
    echo carries the actual noise variance used.
    """
    check_index_count(n, "n"), check_index_count(m, "m"), check_index_count(t, "t")
    ss = np.random.SeedSequence(seed)
    rng_s, rng_theta, rng_a, rng_e = (np.random.default_rng(c) for c in ss.spawn(4))

    s = _sample_support(rng_s, params, t, n)
    theta = _sample_amplitudes(rng_theta, params, t, n)
    x = s * theta

    if time_invariant_a:
        a = _sample_operator(rng_a, m, n)
        clean = x @ a.T
    else:
        a = np.stack([_sample_operator(rng_a, m, n) for _ in range(t)])
        clean = np.einsum("tmn,tn->tm", a, x)

    sigma_e2 = params.sigma_e2
    if snr_db is not None:
        sigma_e2 = noise_variance_for_snr(clean, snr_db)
        params = params.replace(sigma_e2=sigma_e2)

    y = clean + np.sqrt(sigma_e2) * _complex_normal(rng_e, (t, m))
    truth = GroundTruth(s=s, theta=theta, x=x)
    return DynamicDataset(y=y, a=a, truth=truth, params=params, seed=seed)


# ---------------------------------------------------------------------------
# Dataset files: a JSON manifest plus raw little-endian float64 blobs.
# Complex arrays are stored interleaved (re, im), row-major.


def _write_blob(path: Path, arr: np.ndarray) -> None:
    if np.iscomplexobj(arr):
        data = np.ascontiguousarray(arr.astype("<c16"))
    else:
        data = np.ascontiguousarray(arr.astype("<f8"))
    path.write_bytes(data.tobytes())


def _read_blob(path: Path, shape, complex_: bool) -> np.ndarray:
    dtype = "<c16" if complex_ else "<f8"
    flat = np.frombuffer(path.read_bytes(), dtype=dtype)
    return flat.reshape(shape).astype(np.complex128 if complex_ else np.float64)


def save_dataset(dataset: DynamicDataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "dyncs-dataset-v1",
        "t": dataset.t,
        "m": dataset.m,
        "n": dataset.n,
        "time_invariant_a": dataset.time_invariant,
        "seed": dataset.seed,
        "params": dataset.params.to_dict() if dataset.params else None,
        "has_truth": dataset.truth is not None,
    }
    _write_blob(d / "y.bin", dataset.y)
    _write_blob(d / "a.bin", dataset.a)
    if dataset.truth is not None:
        _write_blob(d / "s.bin", dataset.truth.s)
        _write_blob(d / "theta.bin", dataset.truth.theta)
        _write_blob(d / "x.bin", dataset.truth.x)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(directory: str | Path) -> DynamicDataset:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != "dyncs-dataset-v1":
        raise ValueError(f"{d}: not a dyncs dataset directory")
    t, m, n = manifest["t"], manifest["m"], manifest["n"]
    a_shape = (m, n) if manifest["time_invariant_a"] else (t, m, n)
    y = _read_blob(d / "y.bin", (t, m), complex_=True)
    a = _read_blob(d / "a.bin", a_shape, complex_=True)
    truth = None
    if manifest["has_truth"]:
        truth = GroundTruth(
            s=_read_blob(d / "s.bin", (t, n), complex_=False),
            theta=_read_blob(d / "theta.bin", (t, n), complex_=True),
            x=_read_blob(d / "x.bin", (t, n), complex_=True),
        )
    params = ModelParams.from_dict(manifest["params"]) if manifest["params"] else None
    return DynamicDataset(y=y, a=a, truth=truth, params=params, seed=manifest["seed"])

"""Exact Gaussian-process regression with a Matern + periodic kernel.

Kernel inputs are the rows produced by :func:`frugalsense.timeseries.feature_matrix`.
The Matern term sees the full row (continuous time in days plus the calendar
encodings); the periodic term sees only the time column.

The prior has a constant mean ``KernelParams.mean`` (dB). All variances are
in dB^2.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from . import _accel
from .errors import NotPositiveDefinite, ShapeMismatch, VersionMismatch

SMOOTHNESS_CODES = {0.5: 0, 1.5: 1, 2.5: 2}
PARAMS_FORMAT_VERSION = 1

JITTER_START = 1e-8
JITTER_MAX = 1e-2
DEFAULT_WINDOW = 1344


@dataclass(frozen=True)
class MaternParams:
    variance: float = 25.0
    length_scale: float = 0.5
    smoothness: float = 1.5

    def __post_init__(self):
        if not self.variance > 0 or not self.length_scale > 0:
            raise ValueError("Matern variance and length_scale must be > 0")
        if self.smoothness not in SMOOTHNESS_CODES:
            raise ValueError(f"smoothness must be one of {sorted(SMOOTHNESS_CODES)}")


@dataclass(frozen=True)
class PeriodicParams:
    variance: float = 25.0
    length_scale: float = 1.0
    period: float = 1.0

    def __post_init__(self):
        if not (self.variance > 0 and self.length_scale > 0 and self.period > 0):
            raise ValueError("periodic parameters must be > 0")


# kernel-input columns seen by the Matern term: slot_time, weekday sin/cos, holiday
MATERN_COLUMNS = (0, 3, 4, 5)


@dataclass(frozen=True)
class KernelParams:
    """Composite-kernel hyperparameters plus the Matern input standardization.

    ``input_offset``/``input_scale`` map the Matern columns of a kernel input
    to standardized coordinates, ``(x - offset) / scale``.
    """

    matern: MaternParams = field(default_factory=MaternParams)
    periodic: PeriodicParams = field(default_factory=PeriodicParams)
    noise_variance: float = 1.0
    mean: float = 0.0
    input_offset: tuple = (0.0, 0.0, 0.0, 0.0)
    input_scale: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        object.__setattr__(self, "input_offset", tuple(float(v) for v in self.input_offset))
        object.__setattr__(self, "input_scale", tuple(float(v) for v in self.input_scale))
        if len(self.input_offset) != len(MATERN_COLUMNS) or len(self.input_scale) != len(MATERN_COLUMNS):
            raise ValueError(f"input standardization needs {len(MATERN_COLUMNS)} entries")
        if not all(v > 0 for v in self.input_scale):
            raise ValueError("input_scale entries must be > 0")

    def matern_inputs(self, X) -> np.ndarray:
        """Standardized Matern coordinates of full kernel-input rows."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] == len(MATERN_COLUMNS) + 2:
            X = X[:, MATERN_COLUMNS]
        elif X.shape[1] != len(MATERN_COLUMNS):
            # bare (time-only or custom) inputs are used as given
            return np.ascontiguousarray(X)
        return np.ascontiguousarray((X - np.array(self.input_offset)) / np.array(self.input_scale))

    @property
    def prior_variance(self) -> float:
        """Predictive variance of a single slot under the prior."""
        return self.matern.variance + self.periodic.variance + self.noise_variance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format_version"] = PARAMS_FORMAT_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        if d.get("format_version") != PARAMS_FORMAT_VERSION:
            raise VersionMismatch(f"kernel params format {d.get('format_version')!r}")
        return cls(
            matern=MaternParams(**d["matern"]),
            periodic=PeriodicParams(**d["periodic"]),
            noise_variance=float(d["noise_variance"]),
            mean=float(d.get("mean", 0.0)),
            input_offset=tuple(d.get("input_offset", (0.0,) * len(MATERN_COLUMNS))),
            input_scale=tuple(d.get("input_scale", (1.0,) * len(MATERN_COLUMNS))),
        )

    def save(self, path, **extra) -> None:
        with open(path, "w") as fh:
            json.dump({**self.to_dict(), **extra}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "KernelParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -------------------------------------------------------------- kernels ---

def _as_row(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=np.float64))


def matern_kernel(xi, xj, p: MaternParams) -> float:
    d = float(np.linalg.norm(_as_row(xi) - _as_row(xj)))
    r = d / p.length_scale
    if p.smoothness == 0.5:
        return p.variance * math.exp(-r)
    if p.smoothness == 1.5:
        s = math.sqrt(3.0) * r
        return p.variance * (1.0 + s) * math.exp(-s)
    s = math.sqrt(5.0) * r
    return p.variance * (1.0 + s + s * s / 3.0) * math.exp(-s)


def periodic_kernel(xi, xj, p: PeriodicParams) -> float:
    """Periodic kernel on the time coordinate (first entry of a kernel input)."""
    d = abs(float(_as_row(xi)[0]) - float(_as_row(xj)[0]))
    s = math.sin(math.pi * d / p.period)
    return p.variance * math.exp(-2.0 * s * s / p.length_scale ** 2)


def combined_kernel(xi, xj, p: KernelParams) -> float:
    """Matern on the standardized Matern coordinates plus periodic on time."""
    return (matern_kernel(p.matern_inputs(xi)[0], p.matern_inputs(xj)[0], p.matern)
            + periodic_kernel(xi, xj, p.periodic))


def standardization(X) -> tuple[tuple, tuple]:
    """Column means and standard deviations of the Matern inputs of ``X``.

    Constant columns (for example a holiday flag with no holidays) keep
    scale 1 so they never divide by zero.
    """
    M = np.asarray(X, dtype=np.float64)[:, MATERN_COLUMNS]
    offset = M.mean(axis=0)
    scale = M.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return tuple(offset.tolist()), tuple(scale.tolist())


def _as_inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.ascontiguousarray(X)


def gram(XA, XB, p: KernelParams) -> np.ndarray:
    """Combined-kernel cross-covariance between two sets of inputs."""
    A = _as_inputs(XA)
    sym = XB is XA
    B = A if sym else _as_inputs(XB)
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatch("input dimensions differ")
    m, q = p.matern, p.periodic
    MA = p.matern_inputs(A)
    MB = MA if sym else p.matern_inputs(B)
    return _accel.combined_gram(MA, MB, np.ascontiguousarray(A[:, 0]), np.ascontiguousarray(B[:, 0]),
                                m.variance, m.length_scale, SMOOTHNESS_CODES[m.smoothness],
                                q.variance, q.length_scale, q.period, sym)


def _prior_diag(p: KernelParams, n: int) -> np.ndarray:
    # both kernels are stationary: k(x, x) is the same for every input
    return np.full(n, p.matern.variance + p.periodic.variance)


# ----------------------------------------------------------------- model ---

@dataclass(frozen=True, eq=False)
class Prediction:
    mean: np.ndarray
    variance: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True, eq=False)
class GPModel:
    inputs: np.ndarray
    targets: np.ndarray
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    window: int | None = DEFAULT_WINDOW

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    def predict(self, Xq) -> "Prediction":
        return predict(self, Xq)

    def condition(self, x, y) -> "GPModel":
        return condition(self, x, y)


def _factor(K: np.ndarray, base_noise: float) -> tuple[np.ndarray, float]:
    """Cholesky of ``K + noise*I + jitter*I`` with jitter escalation."""
    n = K.shape[0]
    scale = float(np.mean(np.diag(K))) if n else 1.0
    jitter = JITTER_START * scale
    A = K.copy()
    idx = np.diag_indices(n)
    while True:
        A[idx] = K[idx] + base_noise + jitter
        try:
            return np.linalg.cholesky(A), jitter
        except np.linalg.LinAlgError:
            if jitter >= JITTER_MAX * scale * (1 - 1e-9):
                raise NotPositiveDefinite(f"Gram matrix not positive definite at jitter {jitter:.3g}")
            jitter = min(jitter * 10.0, JITTER_MAX * scale)


def fit(X, y, params: KernelParams, window: int | None = DEFAULT_WINDOW) -> GPModel:
    X = _as_inputs(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ShapeMismatch("need |X| = |y| >= 1")
    K = gram(X, X, params)
    L, jitter = _factor(K, params.noise_variance)
    alpha = cho_solve((L, True), y - params.mean)
    return GPModel(X, y, params, L, alpha, jitter, window)


def predict(model: GPModel, Xq) -> Prediction:
    Xq = _as_inputs(Xq)
    p = model.params
    Ks = gram(model.inputs, Xq, p)
    mean = Ks.T @ model.alpha + p.mean
    V = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    var = _prior_diag(p, Xq.shape[0]) + p.noise_variance - np.einsum("ij,ij->j", V, V)
    return Prediction(mean, np.maximum(var, 1e-12))


def log_marginal_likelihood(X, y, params: KernelParams) -> float:
    model = fit(X, y, params, window=None)
    return _lml(model)


def _lml(model: GPModel) -> float:
    r = model.targets - model.params.mean
    n = r.shape[0]
    return float(-0.5 * r @ model.alpha - np.sum(np.log(np.diag(model.chol)))
                 - 0.5 * n * math.log(2.0 * math.pi))


def condition(model: GPModel, x, y) -> GPModel:
    """Posterior after one more observation, hyperparameters unchanged.

    Extends the Cholesky factor by one row. When the training set would
    exceed ``model.window`` the oldest observation is dropped and the model
    is refitted.
    """
    x = _as_inputs(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    y = float(y)
    X = np.vstack([model.inputs, x])
    Y = np.append(model.targets, y)
    if model.window is not None and X.shape[0] > model.window:
        return fit(X[-model.window:], Y[-model.window:], model.params, model.window)
    p = model.params
    k = gram(model.inputs, x, p)[:, 0]
    l = solve_triangular(model.chol, k, lower=True, check_finite=False)
    d2 = float(p.matern.variance + p.periodic.variance + p.noise_variance + model.jitter - l @ l)
    if d2 <= 1e-14 * (p.matern.variance + p.periodic.variance):
        # numerically singular extension: fall back to a fresh factorization
        return fit(X, Y, p, model.window)
    n = model.chol.shape[0]
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = model.chol
    L[n, :n] = l
    L[n, n] = math.sqrt(d2)
    alpha = cho_solve((L, True), Y - p.mean)
    return GPModel(X, Y, p, L, alpha, model.jitter, model.window)


# ------------------------------------------------------ block posterior ---

class BlockPosterior:
    """Joint latent posterior over a fixed set of query inputs, updated in place.

    Observing one of the block's own inputs is an exact rank-one Gaussian
    update, so a sequence of observations gives the same posterior as
    refitting the GP on its training set plus those observations.
    ``obs_noise`` is the diagonal added for an observation (noise variance
    plus the factorization jitter, as in a refit); ``pred_noise`` is the
    noise variance added to predictive variances.
    """

    def __init__(self, mean: np.ndarray, cov: np.ndarray, obs_noise: float, pred_noise: float):
        self.mean = np.array(mean, dtype=np.float64)
        self.cov = np.array(cov, dtype=np.float64)
        self.obs_noise = float(obs_noise)
        self.pred_noise = float(pred_noise)

    def __len__(self) -> int:
        return int(self.mean.shape[0])

    def copy(self) -> "BlockPosterior":
        return BlockPosterior(self.mean, self.cov, self.obs_noise, self.pred_noise)

    def predictive_variance(self, idx=None) -> np.ndarray:
        d = np.diag(self.cov) if idx is None else np.diag(self.cov)[idx]
        return np.maximum(np.maximum(d, 0.0) + self.pred_noise, 1e-12)

    def predictive_mean(self, idx=None) -> np.ndarray:
        return self.mean.copy() if idx is None else self.mean[idx]

    def observe(self, i: int, y: float) -> None:
        _accel.condition_block(self.mean, self.cov, int(i), float(y), self.obs_noise)

    def fi_after_each(self, candidates, span) -> np.ndarray:
        """Mean predictive precision over ``span`` after observing each candidate alone."""
        return _accel.fi_after_each(self.cov, self.obs_noise, self.pred_noise,
                                    np.ascontiguousarray(candidates, dtype=np.int64),
                                    np.ascontiguousarray(span, dtype=np.int64))


def posterior_block(model: GPModel | None, Xq, params: KernelParams | None = None) -> BlockPosterior:
    """Block posterior at ``Xq`` given ``model``, or the prior when ``model`` is None."""
    Xq = _as_inputs(Xq)
    if model is None:
        if params is None:
            raise ValueError("params required for a prior block")
        K = gram(Xq, Xq, params)
        jitter = JITTER_START * (params.matern.variance + params.periodic.variance)
        return BlockPosterior(np.full(Xq.shape[0], params.mean), K,
                              params.noise_variance + jitter, params.noise_variance)
    p = model.params
    Ks = gram(model.inputs, Xq, p)
    V = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    cov = gram(Xq, Xq, p) - V.T @ V
    cov = 0.5 * (cov + cov.T)
    mean = Ks.T @ model.alpha + p.mean
    return BlockPosterior(mean, cov, p.noise_variance + model.jitter, p.noise_variance)


# ------------------------------------------------ hyperparameter search ---

PARAM_NAMES = ("matern_variance", "matern_length_scale", "periodic_variance",
               "periodic_length_scale", "period", "noise_variance")

# half-width of the log-space search box around the initial value
_LOG_HALF_WIDTH = {
    "matern_variance": math.log(100.0),
    "matern_length_scale": math.log(100.0),
    "periodic_variance": math.log(100.0),
    "periodic_length_scale": math.log(100.0),
    "period": math.log(1.05),
    "noise_variance": math.log(1e4),
}
_NOISE_FLOOR = 1e-6


def _to_vector(p: KernelParams) -> np.ndarray:
    return np.log([p.matern.variance, p.matern.length_scale, p.periodic.variance,
                   p.periodic.length_scale, p.periodic.period,
                   max(p.noise_variance, _NOISE_FLOOR)])


def _from_vector(v, template: KernelParams, free_idx=range(len(PARAM_NAMES))) -> KernelParams:
    e = np.exp(_to_vector(template))
    e[5] = template.noise_variance
    for i in free_idx:
        e[i] = math.exp(v[i])
    return KernelParams(
        matern=MaternParams(float(e[0]), float(e[1]), template.matern.smoothness),
        periodic=PeriodicParams(float(e[2]), float(e[3]), float(e[4])),
        noise_variance=float(e[5]),
        mean=template.mean,
        input_offset=template.input_offset,
        input_scale=template.input_scale,
    )


def optimize_hyperparameters(X, y, init: KernelParams, budget: int = 200, seed: int = 0,
                             free=PARAM_NAMES, fit_mean: bool = False,
                             standardize: bool = False, n_starts: int = 2) -> KernelParams:
    """Maximise the log marginal likelihood by derivative-free search.

    A quarter of ``budget`` goes to random points drawn uniformly in a
    log-space box around ``init``. The best ``n_starts`` points (``init``
    always among the candidates) are refined with bounded Powell line
    searches, which begin along the coordinate axes. With
    ``fit_mean``/``standardize`` the prior mean and the Matern input
    standardization are first set from the data. Returns the starting point
    unchanged unless a strictly better likelihood was found.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    X = _as_inputs(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if fit_mean:
        init = replace(init, mean=float(np.mean(y)))
    if standardize and X.shape[1] == len(MATERN_COLUMNS) + 2:
        offset, scale = standardization(X)
        init = replace(init, input_offset=offset, input_scale=scale)
    free_idx = [PARAM_NAMES.index(name) for name in free]
    if not free_idx:
        return init
    v0 = _to_vector(init)
    half = np.array([_LOG_HALF_WIDTH[PARAM_NAMES[i]] for i in free_idx])
    lo, hi = v0[free_idx] - half, v0[free_idx] + half

    evals = 0
    best = {"f": -math.inf, "u": v0[free_idx].copy()}

    class _Exhausted(Exception):
        pass

    def full(u):
        v = v0.copy()
        v[free_idx] = u
        return v

    def objective(u) -> float:
        nonlocal evals
        if evals >= budget:
            raise _Exhausted
        evals += 1
        try:
            f = log_marginal_likelihood(X, y, _from_vector(full(u), init, free_idx))
        except (NotPositiveDefinite, ValueError, np.linalg.LinAlgError):
            f = -math.inf
        if f > best["f"]:
            best["f"], best["u"] = f, np.array(u, dtype=np.float64)
        return f

    f_init = objective(v0[free_idx])
    rng = np.random.default_rng(seed)
    starts = [(f_init, 0, v0[free_idx].copy())]
    try:
        for k in range(budget // 4):
            u = rng.uniform(lo, hi)
            starts.append((objective(u), k + 1, u))
        starts.sort(key=lambda e: (-e[0], e[1]))
        for f_start, _, u in starts[:max(1, n_starts)]:
            if not math.isfinite(f_start):
                continue
            minimize(lambda w: -objective(w), u, method="Powell",
                     bounds=list(zip(lo, hi)), options={"xtol": 1e-3, "ftol": 1e-7})
        # leftover budget: polish the incumbent
        while evals < budget:
            minimize(lambda w: -objective(w), best["u"], method="Powell",
                     bounds=list(zip(lo, hi)), options={"xtol": 1e-4, "ftol": 1e-9})
            break
    except _Exhausted:
        pass

    if best["f"] > f_init:
        return _from_vector(full(best["u"]), init, free_idx)
    return init

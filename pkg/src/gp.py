"""
Scalar Gaussian-process regression (kriging) with a degree-one trend.

The model is ``Y(x) = h(x)^T beta + Z(x)`` with ``h(x) = (1, x_1, ..., x_d)``
and ``Z`` a centered stationary Gaussian process with variance ``sigma2``
and anisotropic correlation lengths ``theta``.  For a fixed ``theta`` the
trend and variance have closed-form estimators; ``theta`` itself is found
by minimizing the concentrated negative log-likelihood

    log det(R) + n log(sigma2_hat(theta))

with a multi-start, bounded, derivative-free search in log scale.

Inputs are expected to be normalized to [0, 1] per dimension; the
:class:`InputSpace` helper maps discrete engineering grids to that cube.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cholesky, lstsq, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import DomainError, DuplicateInputError, FitError, IllConditionedError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

NUGGET_START = 1e-8
NUGGET_MAX = 1e-4
THETA_BOUNDS = (1e-2, 10.0)
N_STARTS = 10
_PENALTY = 1e20


# ======================================================================
# Input space
# ======================================================================

@dataclass(frozen=True, eq=False)
class InputSpace:
    """Finite input set ``E`` given by discrete levels per dimension.

    Parameters
    ----------
    levels : sequence of sequences of float
        Admissible values of each input dimension.  Duplicates are removed
        and levels are sorted.

    Notes
    -----
    Normalization maps ``[min, max]`` of each dimension onto ``[0, 1]``.
    A dimension with a single level maps to 0.
    """

    levels: Tuple[Tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.levels) == 0:
            raise DomainError("an input space needs at least one dimension")
        cleaned = []
        for i, lv in enumerate(self.levels):
            arr = np.unique(np.asarray(lv, dtype=float))
            if arr.size == 0 or not np.all(np.isfinite(arr)):
                raise DomainError(f"dimension {i + 1} has no finite levels")
            cleaned.append(tuple(float(v) for v in arr))
        object.__setattr__(self, "levels", tuple(cleaned))
        lower = np.array([lv[0] for lv in cleaned])
        upper = np.array([lv[-1] for lv in cleaned])
        span = np.where(upper > lower, upper - lower, 1.0)
        for arr in (lower, upper, span):
            arr.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "_span", span)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "InputSpace":
        """Build the product space of the coordinates seen in ``points``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(tuple(tuple(points[:, j]) for j in range(points.shape[1])))

    @property
    def d(self) -> int:
        """Input dimension."""
        return len(self.levels)

    @property
    def size(self) -> int:
        """Number of points in the full product set."""
        return int(np.prod([len(lv) for lv in self.levels], dtype=float))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Map raw inputs to the unit cube."""
        return (np.asarray(x, dtype=float) - self.lower) / self._span

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        """Map unit-cube coordinates back to raw inputs."""
        return np.asarray(u, dtype=float) * self._span + self.lower

    def enumerate(self) -> np.ndarray:
        """All points of the space in lexicographic order, shape ``(size, d)``."""
        return np.array(list(itertools.product(*self.levels)), dtype=float)

    def contains(self, x: Sequence[float], tol: float = 1e-9) -> bool:
        """True iff every coordinate of ``x`` matches a level within ``tol``."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.d:
            return False
        return all(np.min(np.abs(np.asarray(lv) - xi)) <= tol for lv, xi in zip(self.levels, x))

    def sample(self, n: int, rng: np.random.Generator,
               exclude: Optional[np.ndarray] = None) -> np.ndarray:
        """Draw ``n`` distinct points uniformly without replacement.

        Parameters
        ----------
        n : int
            Number of points.
        rng : numpy.random.Generator
            Source of randomness.
        exclude : array, optional
            Points that must not be drawn.
        """
        excluded = set()
        if exclude is not None and len(exclude):
            excluded = {point_key(e) for e in np.atleast_2d(exclude)}
        if self.size <= 1_000_000:
            pool = self.enumerate()
            if excluded:
                keep = np.array([point_key(p) not in excluded for p in pool])
                pool = pool[keep]
            if n > len(pool):
                raise DomainError(f"cannot draw {n} distinct points from {len(pool)} available")
            return pool[rng.choice(len(pool), size=n, replace=False)]
        chosen: List[np.ndarray] = []
        seen = set(excluded)
        while len(chosen) < n:
            point = np.array([lv[rng.integers(len(lv))] for lv in self.levels])
            key = point_key(point)
            if key not in seen:
                seen.add(key)
                chosen.append(point)
        return np.array(chosen)

    def to_dict(self) -> Dict[str, List[List[float]]]:
        return {"levels": [list(lv) for lv in self.levels]}

    @classmethod
    def from_dict(cls, payload: Dict) -> "InputSpace":
        return cls(tuple(tuple(lv) for lv in payload["levels"]))


def point_key(x: Sequence[float], decimals: int = 9) -> Tuple[float, ...]:
    """Hashable key of an input point, rounded to absorb float noise."""
    return tuple(round(float(v), decimals) + 0.0 for v in np.asarray(x).ravel())


# ======================================================================
# Correlation kernels
# ======================================================================

def _scaled_distance(A: np.ndarray, B: np.ndarray, theta: np.ndarray) -> np.ndarray:
    diff = (A[:, np.newaxis, :] - B[np.newaxis, :, :]) / theta
    return np.sqrt(np.sum(diff * diff, axis=-1))


def matern52(A: np.ndarray, B: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Anisotropic Matérn 5/2 correlation matrix between rows of A and B."""
    h = np.sqrt(5.0) * _scaled_distance(A, B, theta)
    return (1.0 + h + h * h / 3.0) * np.exp(-h)


def squared_exponential(A: np.ndarray, B: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Anisotropic squared-exponential correlation matrix."""
    h = _scaled_distance(A, B, theta)
    return np.exp(-0.5 * h * h)


KERNELS: Dict[str, Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = {
    "matern52": matern52,
    "squared_exponential": squared_exponential,
}


def _kernel(name: str) -> Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    if name not in KERNELS:
        raise DomainError(f"Unknown kernel '{name}'. Available: {list(KERNELS.keys())}")
    return KERNELS[name]


def trend_matrix(X: np.ndarray) -> np.ndarray:
    """Degree-one polynomial regressors ``[1, x_1, ..., x_d]``."""
    X = np.atleast_2d(X)
    return np.hstack([np.ones((X.shape[0], 1)), X])


# ======================================================================
# Factorization and concentrated likelihood
# ======================================================================

def factorize(R: np.ndarray, nugget: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``R + nugget * I``.

    When ``nugget`` is None the jitter starts at 1e-8 and grows by a factor
    of ten up to 1e-4 until the factorization succeeds.

    Raises
    ------
    IllConditionedError
        If the matrix is not positive definite even with the largest nugget.
    """
    n = R.shape[0]
    if nugget is not None:
        try:
            return cholesky(R + nugget * np.eye(n), lower=True), float(nugget)
        except LinAlgError as exc:
            raise IllConditionedError(f"factorization failed with nugget {nugget:g}: {exc}")
    tau = NUGGET_START
    while tau <= NUGGET_MAX * (1 + 1e-9):
        try:
            L = cholesky(R + tau * np.eye(n), lower=True)
            if tau > NUGGET_START:
                logger.warning("Correlation matrix needed nugget %.1e to factorize", tau)
            return L, tau
        except LinAlgError:
            tau *= 10.0
    raise IllConditionedError(
        f"correlation matrix of size {n} is not positive definite even with nugget {NUGGET_MAX:g}")


@dataclass
class _Concentrated:
    chol: np.ndarray
    nugget: float
    beta: np.ndarray
    sigma2: float
    alpha: np.ndarray
    nll: float


def _sigma2_floor(y: np.ndarray) -> float:
    return 1e-12 * (1.0 + float(np.mean(y * y)))


def _concentrate(X: np.ndarray, y: np.ndarray, theta: np.ndarray, kernel: str,
                 nugget: Optional[float] = None) -> _Concentrated:
    n, d = X.shape
    R = _kernel(kernel)(X, X, theta)
    L, tau = factorize(R, nugget)
    H = trend_matrix(X)
    Ht = solve_triangular(L, H, lower=True)
    yt = solve_triangular(L, y, lower=True)
    beta = lstsq(Ht, yt)[0]
    rho = yt - Ht @ beta
    sigma2 = max(float(rho @ rho) / (n - (d + 1)), _sigma2_floor(y))
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    alpha = solve_triangular(L.T, rho, lower=False)
    return _Concentrated(L, tau, beta, sigma2, alpha, log_det + n * np.log(sigma2))


def neg_log_likelihood(X: np.ndarray, y: np.ndarray, theta: Sequence[float],
                       kernel: str = "matern52") -> float:
    """Concentrated criterion ``log det(R) + n log sigma2_hat`` at ``theta``.

    ``beta_hat(theta)`` and ``sigma2_hat(theta)`` are plugged in from their
    generalized-least-squares closed forms and the log-determinant is read
    from the Cholesky factor.

    Raises
    ------
    IllConditionedError
        If the correlation matrix cannot be factorized even with the
        largest nugget.
    """
    X, y = _as_design(X, y)
    return _concentrate(X, y, np.asarray(theta, dtype=float), kernel).nll


# ======================================================================
# Fitted model
# ======================================================================

@dataclass(frozen=True)
class GaussianPrediction:
    """Gaussian predictive law at one input."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise DomainError(f"variance must be non-negative, got {self.variance}")


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted kriging model; immutable and safe for concurrent prediction.

    Attributes
    ----------
    design : ndarray, shape (n, d)
        Normalized design points.
    observations : ndarray, shape (n,)
    beta : ndarray, shape (d + 1,)
        Trend coefficients.
    sigma2 : float
        Process variance.
    theta : ndarray, shape (d,)
        Correlation lengths.
    nugget : float
        Diagonal jitter added to the correlation matrix.
    kernel : str
        Name of the correlation family.
    chol : ndarray, shape (n, n)
        Lower Cholesky factor of ``R + nugget * I``.
    alpha : ndarray, shape (n,)
        ``(R + nugget * I)^{-1} (y - H beta)``.
    """

    design: np.ndarray
    observations: np.ndarray
    beta: np.ndarray
    sigma2: float
    theta: np.ndarray
    nugget: float
    kernel: str
    chol: np.ndarray
    alpha: np.ndarray
    diagnostics: Dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("design", "observations", "beta", "theta", "chol", "alpha"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.design.shape[0])

    @property
    def d(self) -> int:
        return int(self.design.shape[1])

    def trend(self, X: np.ndarray) -> np.ndarray:
        """Trend ``h(x)^T beta`` at normalized inputs."""
        return trend_matrix(np.atleast_2d(X)) @ self.beta

    def predict_many(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Kriging means and variances at normalized inputs ``X``.

        Variances are clamped at zero from below.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise DomainError(f"expected inputs of dimension {self.d}, got {X.shape[1]}")
        r = _kernel(self.kernel)(X, self.design, self.theta)
        mean = trend_matrix(X) @ self.beta + r @ self.alpha
        v = solve_triangular(self.chol, r.T, lower=True)
        raw = self.sigma2 * (1.0 - np.sum(v * v, axis=0))
        if raw.size and raw.min() < -1e-8 * self.sigma2:
            logger.warning("Kriging variance %.3e below tolerance before clamping", raw.min())
        return mean, np.maximum(raw, 0.0)

    def predict(self, x: Sequence[float]) -> GaussianPrediction:
        """Gaussian predictive law at one normalized input."""
        mean, var = self.predict_many(np.asarray(x, dtype=float).reshape(1, -1))
        return GaussianPrediction(float(mean[0]), float(var[0]))

    def to_dict(self) -> Dict:
        return {
            "kernel": self.kernel,
            "beta": [float(b) for b in self.beta],
            "sigma2": float(self.sigma2),
            "theta": [float(t) for t in self.theta],
            "nugget": float(self.nugget),
            "n": self.n,
            "d": self.d,
        }


def predict(model: GpModel, x: Sequence[float]) -> GaussianPrediction:
    """Kriging mean and variance of ``model`` at the normalized input ``x``."""
    return model.predict(x)


def _as_design(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise DomainError(f"{X.shape[0]} design points but {y.size} observations")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DomainError("design and observations must be finite")
    return X, y


def _check_distinct(X: np.ndarray) -> None:
    keys = [point_key(x, 12) for x in X]
    if len(set(keys)) != len(keys):
        seen = set()
        for x, key in zip(X, keys):
            if key in seen:
                raise DuplicateInputError(f"duplicate design point {list(key)}")
            seen.add(key)


def fit(X: np.ndarray, y: np.ndarray, kernel: str = "matern52",
        theta_bounds: Tuple[float, float] = THETA_BOUNDS, n_starts: int = N_STARTS,
        seed: int = 0, maxiter: int = 200, theta: Optional[Sequence[float]] = None) -> GpModel:
    """Fit a kriging model by maximum likelihood.

    Parameters
    ----------
    X : ndarray, shape (n, d)
        Normalized design points, pairwise distinct.
    y : ndarray, shape (n,)
        Observations.
    kernel : str
        ``"matern52"`` or ``"squared_exponential"``.
    theta_bounds : tuple of float
        Bounds on every correlation length.
    n_starts : int
        Number of Latin-hypercube starting points for the local search.
    seed : int
        Seed of the starting-point design.
    maxiter : int
        Iteration cap of each Nelder-Mead run.
    theta : sequence of float, optional
        If given, the correlation lengths are held fixed and only the
        closed-form estimators are recomputed.

    Returns
    -------
    GpModel

    Raises
    ------
    DomainError
        If ``n <= d + 1``.
    DuplicateInputError
        If two design points coincide.
    FitError
        If the likelihood cannot be evaluated at any start.
    """
    X, y = _as_design(X, y)
    n, d = X.shape
    if n <= d + 1:
        raise DomainError(f"need more than d+1={d + 1} design points, got {n}")
    _check_distinct(X)
    _kernel(kernel)

    if theta is not None:
        theta_hat = np.asarray(theta, dtype=float).ravel()
        if theta_hat.size != d or np.any(theta_hat <= 0):
            raise DomainError(f"theta must hold {d} positive lengths")
        diagnostics: Dict = {"fixed_theta": True}
    else:
        theta_hat, diagnostics = _search_theta(X, y, kernel, theta_bounds, n_starts, seed, maxiter)

    final = _concentrate(X, y, theta_hat, kernel)
    diagnostics["nll"] = float(final.nll)
    return GpModel(design=X, observations=y, beta=final.beta, sigma2=final.sigma2,
                   theta=theta_hat, nugget=final.nugget, kernel=kernel,
                   chol=final.chol, alpha=final.alpha, diagnostics=diagnostics)


def _search_theta(X: np.ndarray, y: np.ndarray, kernel: str, bounds: Tuple[float, float],
                  n_starts: int, seed: int, maxiter: int) -> Tuple[np.ndarray, Dict]:
    d = X.shape[1]
    lo, hi = np.log10(bounds[0]), np.log10(bounds[1])
    failures: List[str] = []

    def objective(log_theta: np.ndarray) -> float:
        try:
            value = _concentrate(X, y, 10.0 ** np.clip(log_theta, lo, hi), kernel).nll
        except IllConditionedError:
            return _PENALTY
        return value if np.isfinite(value) else _PENALTY

    starts = lo + (hi - lo) * qmc.LatinHypercube(d=d, seed=seed).random(max(n_starts, 1))
    best_x, best_f = None, np.inf
    for x0 in starts:
        try:
            res = minimize(objective, x0, method="Nelder-Mead",
                           bounds=[(lo, hi)] * d,
                           options={"maxiter": maxiter, "xatol": 1e-4, "fatol": 1e-8})
        except (ValueError, FloatingPointError) as exc:
            failures.append(str(exc))
            continue
        if res.fun < best_f:
            best_x, best_f = np.clip(res.x, lo, hi), float(res.fun)

    if best_x is None or best_f >= _PENALTY:
        raise FitError("likelihood could not be evaluated at any start",
                       diagnostics={"starts": n_starts, "failures": failures[:5]})
    logger.debug("theta search: best criterion %.6g over %d starts", best_f, len(starts))
    return 10.0 ** best_x, {"starts": int(len(starts)), "best_criterion": best_f}


# ======================================================================
# Persistence
# ======================================================================

def save_model(model: GpModel, directory: PathLike, name: str) -> None:
    """Write ``<name>.json`` (hyperparameters) and ``<name>.csv`` (data)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / f"{name}.json").open("w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (directory / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(model.d)] + ["y"])
        for x, yi in zip(model.design, model.observations):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(yi))])


def load_model(directory: PathLike, name: str) -> GpModel:
    """Reload a model written by :func:`save_model` and refactorize it."""
    directory = Path(directory)
    with (directory / f"{name}.json").open("r", encoding="utf-8") as fh:
        meta = json.load(fh)
    rows = []
    with (directory / f"{name}.csv").open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float)
    X, y = data[:, :-1], data[:, -1]
    theta = np.asarray(meta["theta"], dtype=float)
    beta = np.asarray(meta["beta"], dtype=float)
    R = _kernel(meta["kernel"])(X, X, theta)
    L, tau = factorize(R, meta["nugget"])
    alpha = solve_triangular(L.T, solve_triangular(L, y - trend_matrix(X) @ beta, lower=True),
                             lower=False)
    return GpModel(design=X, observations=y, beta=beta, sigma2=float(meta["sigma2"]),
                   theta=theta, nugget=tau, kernel=meta["kernel"], chol=L, alpha=alpha)


__all__ = [
    "InputSpace",
    "point_key",
    "KERNELS",
    "matern52",
    "squared_exponential",
    "trend_matrix",
    "factorize",
    "neg_log_likelihood",
    "GaussianPrediction",
    "GpModel",
    "predict",
    "fit",
    "save_model",
    "load_model",
]

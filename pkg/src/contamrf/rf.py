"""Random-feature ridge regression with a conjugate Gaussian read-out.

The hypothesis class is f(x) = sum_j a_j * act(<x, theta_j>/sqrt(d)), with
feature directions theta_j drawn uniformly from the radius-sqrt(d) sphere.
Training solves the penalized least-squares problem

    min_a ||y - Z a||^2 + d*psi1*psi2*lam * ||a||^2,
    Z[i, j] = act(<x_i, theta_j>/sqrt(d)),

whose minimizer a_hat is also the mean parameter of a Gaussian predictive:
at a new input x the predictive is N(z.a_hat, (1 + z'(Z'Z + L I)^-1 z)/phi)
with L = d*psi1*psi2*lam.  The same solve powers a scikit-learn estimator,
`RandomFeatureRidge`, so the model composes with the wider ecosystem.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg as sla
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = [
    "ACTIVATIONS",
    "ModelConfig",
    "Dataset",
    "FeatureBank",
    "FittedRF",
    "PredictiveGaussian",
    "RandomFeatureRidge",
    "sample_sphere",
    "feature_map",
    "ridge_fit",
    "posterior_predictive",
    "predictive_arrays",
    "gaussian_pdf",
]

# Relative tolerance on row norms for the sphere containers.
SPHERE_RTOL = 1e-10
# Cholesky pivot ratio below which the factorization falls back to an
# eigendecomposition-based pseudoinverse.
PIVOT_RTOL = 1e-12


def _relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": _relu,
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and hyperparameters of one random-feature model.

    The aspect ratios psi1 = N/d and psi2 = n/d are derived, never stored.
    """

    d: int
    n: int
    N: int
    lam: float
    phi: float
    activation: str = "relu"

    def __post_init__(self):
        if min(self.d, self.n, self.N) < 1:
            raise ValueError("d, n and N must all be >= 1")
        if self.lam < 0:
            raise ValueError("ridge penalty lam must be nonnegative")
        if self.phi <= 0:
            raise ValueError("noise precision phi must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")

    @property
    def psi1(self) -> float:
        return self.N / self.d

    @property
    def psi2(self) -> float:
        return self.n / self.d

    @property
    def effective_penalty(self) -> float:
        """The penalty actually added to the Gram matrix: d * psi1 * psi2 * lam."""
        return self.d * self.psi1 * self.psi2 * self.lam


def _check_sphere_rows(M: np.ndarray, what: str) -> None:
    d = M.shape[1]
    norms = np.linalg.norm(M, axis=1)
    target = np.sqrt(d)
    if not np.allclose(norms, target, rtol=SPHERE_RTOL, atol=0.0):
        worst = float(np.max(np.abs(norms - target)))
        raise ValueError(
            f"{what} rows must have norm sqrt(d)={target:.6g} (rtol {SPHERE_RTOL:g}); "
            f"worst deviation {worst:.3e}"
        )


@dataclass(frozen=True)
class Dataset:
    """Inputs on the radius-sqrt(d) sphere plus one response per row."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be (n, d) and y must be length n")
        _check_sphere_rows(X, "Dataset.X")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class FeatureBank:
    """Feature directions, one per row, all on the radius-sqrt(d) sphere."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValueError("theta must be an (N, d) matrix")
        _check_sphere_rows(theta, "FeatureBank.theta")
        object.__setattr__(self, "theta", theta)

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class PredictiveGaussian:
    """One-dimensional Gaussian predictive, N(mean, variance)."""

    mean: float
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not np.isfinite(self.variance):
            raise ValueError("predictive mean and variance must be finite")
        if self.variance <= 0:
            raise ValueError("predictive variance must be strictly positive")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


def gaussian_pdf(g: PredictiveGaussian, y_new):
    """Normal density of ``g`` evaluated at ``y_new`` (scalar or array)."""
    y = np.asarray(y_new, dtype=float)
    z2 = (y - g.mean) ** 2 / (2.0 * g.variance)
    out = np.exp(-z2) / np.sqrt(2.0 * np.pi * g.variance)
    return float(out) if np.isscalar(y_new) else out


def sample_sphere(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. points uniform on the sphere of radius sqrt(d).

    Standard normal draws rescaled row-wise to norm sqrt(d).
    """
    if count < 1 or d < 1:
        raise ValueError("count and d must both be >= 1")
    g = rng.standard_normal((count, d))
    norms = np.linalg.norm(g, axis=1)
    # A zero draw has probability zero but would poison the rescale.
    bad = norms < 1e-12
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
        bad = norms < 1e-12
    # divide first: g/||g|| is exact for d = 1, so those entries are exactly +-1
    return g / norms[:, None] * np.sqrt(d)


def feature_map(X: np.ndarray, theta: np.ndarray, activation: str) -> np.ndarray:
    """Z[i, j] = act(<x_i, theta_j> / sqrt(d))."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.asarray(theta, dtype=float)
    if X.shape[1] != T.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns but theta has {T.shape[1]}")
    act = ACTIVATIONS.get(activation)
    if act is None:
        raise ValueError(f"unknown activation {activation!r}")
    d = X.shape[1]
    return act(X @ T.T / np.sqrt(d))


class _GramSolver:
    """Cached solve / quadratic-form handle for (Z'Z + lam_eff I).

    Three routes share one interface:
      * "chol":  Cholesky factor of the N x N regularized Gram matrix.
      * "eigh":  eigendecomposition pseudoinverse (rank-deficient or
                 ill-pivoted matrices; gives the minimum-norm solution).
      * "dual":  Cholesky factor of the n x n matrix Z Z' + lam_eff I,
                 used when N > n; quadratic forms go through the
                 Woodbury identity
                 (Z'Z + L I)^-1 = (I - Z'(Z Z' + L I)^-1 Z)/L.
    """

    def __init__(self, kind: str, **data):
        self.kind = kind
        self._data = data

    @property
    def rank(self) -> int:
        if self.kind == "eigh":
            return int(self._data["keep"].sum())
        if self.kind == "chol":
            return self._data["G"].shape[0]
        return min(self._data["Z"].shape)

    def solve(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "chol":
            return sla.cho_solve(self._data["factor"], v)
        if self.kind == "eigh":
            V, inv_w = self._data["V"], self._data["inv_w"]
            return V @ (inv_w * (V.T @ v))
        raise NotImplementedError("dual solver caches only quadratic forms")

    def quad_many(self, M: np.ndarray) -> np.ndarray:
        """Row-wise v' (Z'Z + L I)^-1 v for each row v of M, clipped at 0."""
        M = np.atleast_2d(M)
        if self.kind == "chol":
            S = sla.cho_solve(self._data["factor"], M.T)
            q = np.einsum("ij,ji->i", M, S)
        elif self.kind == "eigh":
            T = self._data["V"].T @ M.T
            q = self._data["inv_w"] @ T**2
        else:
            Z, lam_eff, factor = self._data["Z"], self._data["lam_eff"], self._data["factor"]
            U = Z @ M.T
            q = (np.einsum("ij,ij->i", M, M) - np.einsum("ji,ji->i", U, sla.cho_solve(factor, U))) / lam_eff
        return np.maximum(q, 0.0)

    def quad(self, v: np.ndarray) -> float:
        return float(self.quad_many(v[None, :])[0])


@dataclass(frozen=True)
class FittedRF:
    """A trained random-feature model plus its cached Gram factorization."""

    config: ModelConfig
    bank: Optional[FeatureBank]
    Z: np.ndarray
    a_hat: np.ndarray
    solver: _GramSolver = field(repr=False)
    ridgeless_pinv: bool = False


def _eigh_solver(G: np.ndarray) -> _GramSolver:
    w, V = np.linalg.eigh(G)
    wmax = max(float(w.max()), 0.0)
    keep = w > PIVOT_RTOL * wmax if wmax > 0 else np.zeros_like(w, dtype=bool)
    inv_w = np.zeros_like(w)
    inv_w[keep] = 1.0 / w[keep]
    return _GramSolver("eigh", V=V, inv_w=inv_w, keep=keep)


def ridge_fit(Z: np.ndarray, y: np.ndarray, config: ModelConfig,
              bank: Optional[FeatureBank] = None) -> FittedRF:
    """Solve (Z'Z + d*psi1*psi2*lam I) a = Z'y.

    When N > n and the penalty is positive, the equivalent dual system
    a = Z'(Z Z' + L I)^-1 y is solved instead; the two routes agree.  A
    zero penalty with a rank-deficient Gram matrix returns the
    minimum-norm solution through the eigendecomposition pseudoinverse
    and flags the result with ``ridgeless_pinv=True``.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or y.ndim != 1 or Z.shape[0] != y.shape[0]:
        raise ValueError("Z must be (n, N) and y length n")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
        raise ValueError("ridge_fit requires finite inputs")
    n, N = Z.shape
    if (n, N) != (config.n, config.N):
        raise ValueError(f"Z is {Z.shape} but config says (n, N) = ({config.n}, {config.N})")
    if bank is not None and bank.N != N:
        raise ValueError("feature bank size disagrees with Z")

    lam_eff = config.effective_penalty
    ridgeless = False

    if lam_eff == 0.0:
        solver = _eigh_solver(Z.T @ Z)
        ridgeless = solver.rank < N
        a_hat = solver.solve(Z.T @ y)
    elif N > n:
        K = Z @ Z.T
        K[np.diag_indices_from(K)] += lam_eff
        factor = sla.cho_factor(K, lower=True, check_finite=False)
        a_hat = Z.T @ sla.cho_solve(factor, y)
        solver = _GramSolver("dual", factor=factor, Z=Z, lam_eff=lam_eff)
    else:
        G = Z.T @ Z
        G[np.diag_indices_from(G)] += lam_eff
        try:
            factor = sla.cho_factor(G, lower=True, check_finite=False)
            piv = np.diag(factor[0]) ** 2
            if piv.min() < PIVOT_RTOL * piv.max():
                solver = _eigh_solver(G)
            else:
                solver = _GramSolver("chol", factor=factor, G=G)
        except np.linalg.LinAlgError:
            solver = _eigh_solver(G)
        a_hat = solver.solve(Z.T @ y)

    return FittedRF(config=config, bank=bank, Z=Z, a_hat=a_hat,
                    solver=solver, ridgeless_pinv=ridgeless)


def refit_weights(model: FittedRF, y: np.ndarray) -> np.ndarray:
    """Weights for new targets on the same design, reusing the cached factor.

    Produces exactly the arithmetic ridge_fit would for (model.Z, y).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (model.Z.shape[0],):
        raise ValueError("y length disagrees with the fitted design")
    solver = model.solver
    if solver.kind == "dual":
        return model.Z.T @ sla.cho_solve(solver._data["factor"], y)
    return solver.solve(model.Z.T @ y)


def posterior_predictive(model: FittedRF, x_new: np.ndarray) -> PredictiveGaussian:
    """Gaussian predictive N(z.a_hat, (1 + z'(Z'Z + L I)^-1 z)/phi) at one input.

    Off-sphere inputs are allowed (corrupted test points may drift off the
    sphere); they trigger a warning, not an error.
    """
    if model.bank is None:
        raise ValueError("model was fitted without a feature bank; cannot embed new inputs")
    x = np.asarray(x_new, dtype=float).ravel()
    cfg = model.config
    if x.size != cfg.d:
        raise ValueError(f"x_new has length {x.size}, expected d = {cfg.d}")
    target = np.sqrt(cfg.d)
    if abs(np.linalg.norm(x) - target) > SPHERE_RTOL * target:
        warnings.warn("prediction input is off the training sphere", stacklevel=2)
    z = feature_map(x[None, :], model.bank.theta, cfg.activation)[0]
    mean = float(z @ model.a_hat)
    variance = (1.0 + model.solver.quad(z)) / cfg.phi
    return PredictiveGaussian(mean=mean, variance=variance)


def predictive_arrays(model: FittedRF, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predictive means and variances at the rows of X."""
    if model.bank is None:
        raise ValueError("model was fitted without a feature bank; cannot embed new inputs")
    cfg = model.config
    Zt = feature_map(X, model.bank.theta, cfg.activation)
    mean = Zt @ model.a_hat
    var = (1.0 + model.solver.quad_many(Zt)) / cfg.phi
    return mean, var


class RandomFeatureRidge(RegressorMixin, BaseEstimator):
    """Scikit-learn estimator around the random-feature ridge model.

    Parameters
    ----------
    n_features : number of random feature directions (ignored when
        ``features`` is given).
    penalty : the ridge parameter lam; the Gram matrix is regularized by
        d*psi1*psi2*penalty.
    noise_precision : observation-noise precision phi of the Gaussian
        read-out; the predictive variance floor is 1/phi.
    activation : "relu" or "tanh".
    features : optional explicit (N, d) matrix of feature directions on
        the radius-sqrt(d) sphere.
    use_pinv : force the exact minimum-norm (zero-penalty) solution.
    random_state : seed or Generator for drawing feature directions.
    """

    def __init__(self, n_features=128, penalty=1e-3, noise_precision=1.0,
                 activation="relu", features=None, use_pinv=False, random_state=None):
        self.n_features = n_features
        self.penalty = penalty
        self.noise_precision = noise_precision
        self.activation = activation
        self.features = features
        self.use_pinv = use_pinv
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        rng = np.random.default_rng(self.random_state)
        d = X.shape[1]
        if self.features is not None:
            theta = np.asarray(self.features, dtype=float)
        else:
            theta = sample_sphere(self.n_features, d, rng)
        bank = FeatureBank(theta)
        lam = 0.0 if self.use_pinv else float(self.penalty)
        config = ModelConfig(d=d, n=X.shape[0], N=bank.N, lam=lam,
                             phi=float(self.noise_precision), activation=self.activation)
        Z = feature_map(X, bank.theta, self.activation)
        self.model_ = ridge_fit(Z, y, config, bank=bank)
        self.coef_ = self.model_.a_hat
        self.n_features_in_ = d
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "model_")
        X = check_array(X)
        mean, var = predictive_arrays(self.model_, X)
        if return_std:
            return mean, np.sqrt(var)
        return mean

    def predictive(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Predictive means and variances at the rows of X."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        return predictive_arrays(self.model_, X)

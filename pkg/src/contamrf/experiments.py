"""Synthetic-teacher experiments: bias-variance sweeps over the
feature-to-dimension ratio, label-outlier corruption, and
contamination envelopes around the variance curve.

Every Monte-Carlo cell (grid point x trial) draws from its own random
stream derived from the master seed and the cell coordinates, so runs
are bit-reproducible and independent of execution order or thread
count.  Test labels never pass through the corruption step: test error
is always measured against the clean teacher signal.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .rf import (
    Dataset,
    FeatureBank,
    ModelConfig,
    PredictiveGaussian,
    feature_map,
    predictive_arrays,
    refit_weights,
    ridge_fit,
    sample_sphere,
)
from .robust import TruncationWindow, truncated_normal_variance

__all__ = [
    "TeacherConfig",
    "Teacher",
    "HuberCorruption",
    "SweepConfig",
    "SweepRow",
    "EnvelopeRow",
    "MisspecRow",
    "PeakReport",
    "derived_rng",
    "generate_teacher_data",
    "huber_contaminate",
    "bias_variance_sweep",
    "contamination_envelope_curves",
    "peak_report",
    "misspecification_sweep",
]

# Stream tags: every random draw in a sweep comes from a generator keyed by
# (master_seed, tag, *cell coordinates).  Tags never collide across purposes.
_S_TEACHER = 0
_S_TEST_POINTS = 1
_S_DATA = 2
_S_FEATURES = 3
_S_HUBER = 4


def derived_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the cell addressed by ``key``."""
    seq = np.random.SeedSequence(entropy=int(master_seed),
                                 spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class TeacherConfig:
    """Ground-truth function family for synthetic data.

    ``linear``:     f(x) = beta0 + <x, beta>
    ``rf_teacher``: f(x) = sum_j w_j * act(<x, t_j>/sqrt(d)) with frozen
                    directions t_j and weights w ~ N(0, 1/teacher_features).
    """

    d: int
    kind: str = "rf_teacher"
    beta0: float = 0.0
    beta: Optional[np.ndarray] = None
    teacher_features: Optional[int] = None
    teacher_activation: str = "tanh"
    noise_sd: float = 0.5

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.kind not in ("linear", "rf_teacher"):
            raise ValueError(f"unknown teacher kind {self.kind!r}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.beta is not None:
            beta = np.asarray(self.beta, dtype=float)
            if beta.shape != (self.d,):
                raise ValueError(f"beta must have shape ({self.d},)")
            object.__setattr__(self, "beta", beta)

    @property
    def n_teacher_features(self) -> int:
        return self.teacher_features if self.teacher_features is not None else 2 * self.d


@dataclass(frozen=True)
class Teacher:
    """A realized (frozen) teacher: config plus any sampled parameters."""

    config: TeacherConfig
    directions: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    @classmethod
    def realize(cls, config: TeacherConfig, rng: np.random.Generator) -> "Teacher":
        if config.kind == "linear":
            return cls(config=config)
        m = config.n_teacher_features
        directions = sample_sphere(m, config.d, rng)
        weights = rng.normal(0.0, np.sqrt(1.0 / m), size=m)
        return cls(config=config, directions=directions, weights=weights)

    def f(self, X: np.ndarray) -> np.ndarray:
        """Clean teacher signal at the rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cfg = self.config
        if cfg.kind == "linear":
            beta = cfg.beta if cfg.beta is not None else np.zeros(cfg.d)
            return cfg.beta0 + X @ beta
        Z = feature_map(X, self.directions, cfg.teacher_activation)
        return Z @ self.weights

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        """n sphere inputs with noisy responses y = f(x) + N(0, noise_sd^2)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        X = sample_sphere(n, self.config.d, rng)
        y = self.f(X)
        if self.config.noise_sd > 0:
            y = y + self.config.noise_sd * rng.standard_normal(n)
        return Dataset(X=X, y=y)


def generate_teacher_data(teacher: Teacher | TeacherConfig, n: int,
                          rng: np.random.Generator) -> Dataset:
    """Sample a dataset from a teacher.

    Passing a ``TeacherConfig`` realizes a fresh teacher from ``rng`` first;
    pass a realized ``Teacher`` to keep its parameters frozen across calls.
    """
    if isinstance(teacher, TeacherConfig):
        teacher = Teacher.realize(teacher, rng)
    return teacher.sample(n, rng)


@dataclass(frozen=True)
class HuberCorruption:
    """Shift each label by +amplitude independently with probability rho."""

    rho: float
    amplitude: float

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError("rho must lie in [0, 1]")


def huber_contaminate(y: np.ndarray, corr: HuberCorruption,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply label-outlier corruption; returns (corrupted y, shift mask).

    The mask is driven by uniform draws compared against rho, so replaying
    the same stream with a larger rho yields a superset mask.
    """
    y = np.asarray(y, dtype=float)
    mask = rng.random(y.shape) < corr.rho
    return y + corr.amplitude * mask, mask


@dataclass(frozen=True)
class SweepConfig:
    """Grid and replication plan for the ratio sweeps."""

    d: int
    psi2: float
    psi1_grid: tuple[float, ...]
    lam: float
    phi: float
    trials: int
    test_points: int
    master_seed: int
    eta_levels: tuple[float, ...] = (0.05, 0.1, 0.2)
    rho_levels: tuple[float, ...] = (0.0, 0.05, 0.1, 0.2)
    activation: str = "relu"
    truncation_k: float = 3.0

    def __post_init__(self):
        if self.d < 1 or self.psi2 <= 0:
            raise ValueError("need d >= 1 and psi2 > 0")
        grid = tuple(float(p) for p in self.psi1_grid)
        if len(grid) == 0 or any(p <= 0 for p in grid) or list(grid) != sorted(grid):
            raise ValueError("psi1_grid must be a sorted sequence of positive ratios")
        object.__setattr__(self, "psi1_grid", grid)
        object.__setattr__(self, "eta_levels", tuple(float(e) for e in self.eta_levels))
        object.__setattr__(self, "rho_levels", tuple(float(r) for r in self.rho_levels))
        if any(not 0.0 <= e <= 1.0 for e in self.eta_levels):
            raise ValueError("eta levels must lie in [0, 1]")
        if any(not 0.0 <= r <= 1.0 for r in self.rho_levels):
            raise ValueError("rho levels must lie in [0, 1]")
        if self.trials < 1 or self.test_points < 1:
            raise ValueError("trials and test_points must be >= 1")
        if self.lam < 0 or self.phi <= 0:
            raise ValueError("need lam >= 0 and phi > 0")
        if self.n < 1:
            raise ValueError("psi2 * d must round to at least one sample")

    @property
    def n(self) -> int:
        return max(1, int(round(self.psi2 * self.d)))

    def n_features_at(self, psi1: float) -> int:
        return max(1, int(round(psi1 * self.d)))


@dataclass(frozen=True)
class SweepRow:
    """Bias-variance summary at one grid ratio."""

    psi1: float
    N: int
    mse: float
    mse_se: float
    bias2: float
    variance: float
    failed_trials: int
    pred_variance: float  # mean Bayesian predictive variance over test points


@dataclass(frozen=True)
class EnvelopeRow:
    psi1: float
    eta: float
    base_variance: float
    lower_envelope: float
    upper_envelope: float
    argmax_flag: int


@dataclass(frozen=True)
class MisspecRow:
    psi1: float
    rho: float
    mse: float
    mse_se: float
    peak_flag: int


@dataclass(frozen=True)
class PeakReport:
    argmax_psi1: float
    max_value: float
    argmax_index: int


def _realize_teacher(sweep: SweepConfig, teacher: Teacher | TeacherConfig) -> Teacher:
    if isinstance(teacher, TeacherConfig):
        if teacher.d != sweep.d:
            raise ValueError("teacher dimension disagrees with sweep dimension")
        return Teacher.realize(teacher, derived_rng(sweep.master_seed, _S_TEACHER))
    if teacher.config.d != sweep.d:
        raise ValueError("teacher dimension disagrees with sweep dimension")
    return teacher


def _fit_cell(X: np.ndarray, y: np.ndarray, N: int, sweep: SweepConfig,
              rng_features: np.random.Generator):
    theta = sample_sphere(N, sweep.d, rng_features)
    config = ModelConfig(d=sweep.d, n=y.size, N=N, lam=sweep.lam, phi=sweep.phi,
                         activation=sweep.activation)
    Z = feature_map(X, theta, sweep.activation)
    return ridge_fit(Z, y, config, bank=FeatureBank(theta))


def _map_cells(fn, cells, threads: int):
    # Cells are tiny; worker threads carry the parallelism, so BLAS is pinned
    # to one thread in both modes to keep per-cell arithmetic identical.
    with threadpool_limits(limits=1):
        if threads <= 1:
            for c in cells:
                fn(c)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(fn, cells))


def _row_stats(preds: np.ndarray, f_star: np.ndarray) -> tuple[float, float, float, float, int]:
    """(mse, mse_se, bias2, variance, failed) from a (trials, points) matrix."""
    finite = np.all(np.isfinite(preds), axis=1)
    failed = int(preds.shape[0] - finite.sum())
    kept = preds[finite]
    if kept.shape[0] == 0:
        raise RuntimeError("every trial failed at this grid point")
    err = kept - f_star[None, :]
    per_trial_mse = np.mean(err**2, axis=1)
    mse = float(np.mean(per_trial_mse))
    if kept.shape[0] > 1:
        mse_se = float(np.std(per_trial_mse, ddof=1) / np.sqrt(kept.shape[0]))
    else:
        mse_se = 0.0
    mean_pred = np.mean(kept, axis=0)
    bias2 = float(np.mean((mean_pred - f_star) ** 2))
    variance = float(np.mean(np.var(kept, axis=0)))  # ddof=0: exact decomposition
    return mse, mse_se, bias2, variance, failed


def bias_variance_sweep(sweep: SweepConfig, teacher: Teacher | TeacherConfig,
                        threads: int = 1) -> list[SweepRow]:
    """Monte-Carlo bias-variance decomposition over the psi1 grid.

    Each trial draws fresh data and fresh features (teacher frozen), fits
    the ridge model, and evaluates it at a fixed set of test points.  Per
    test point, bias^2 uses the trial-mean prediction and variance is the
    trial spread (population form, so mse = bias2 + variance exactly).
    Trials with non-finite predictions are excluded and counted; more
    than 10% failures at one grid point is an error.
    """
    teacher = _realize_teacher(sweep, teacher)
    ms = sweep.master_seed
    X_test = sample_sphere(sweep.test_points, sweep.d, derived_rng(ms, _S_TEST_POINTS))
    f_star = teacher.f(X_test)
    n = sweep.n
    G, T, P = len(sweep.psi1_grid), sweep.trials, sweep.test_points
    preds = np.full((G, T, P), np.nan)
    pvars = np.full((G, T), np.nan)

    def run(cell):
        gi, t = cell
        N = sweep.n_features_at(sweep.psi1_grid[gi])
        ds = teacher.sample(n, derived_rng(ms, _S_DATA, gi, t))
        model = _fit_cell(ds.X, ds.y, N, sweep, derived_rng(ms, _S_FEATURES, gi, t))
        mean, var = predictive_arrays(model, X_test)
        preds[gi, t] = mean
        pvars[gi, t] = np.mean(var)

    _map_cells(run, [(gi, t) for gi in range(G) for t in range(T)], threads)

    rows = []
    for gi, psi1 in enumerate(sweep.psi1_grid):
        mse, mse_se, bias2, variance, failed = _row_stats(preds[gi], f_star)
        if failed > 0.1 * T:
            raise RuntimeError(f"{failed}/{T} trials failed at psi1={psi1}")
        pv = float(np.mean(pvars[gi][np.isfinite(pvars[gi])]))
        rows.append(SweepRow(psi1=psi1, N=sweep.n_features_at(psi1), mse=mse,
                             mse_se=mse_se, bias2=bias2, variance=variance,
                             failed_trials=failed, pred_variance=pv))
    return rows


def peak_report(curve: Sequence[tuple[float, float]]) -> PeakReport:
    """Global grid maximizer of a (psi1, value) curve; ties take the smallest psi1."""
    pts = sorted((float(p), float(v)) for p, v in curve)
    if len(pts) < 3:
        raise ValueError("peak_report needs at least 3 grid points")
    values = np.array([v for _, v in pts])
    idx = int(np.argmax(values))  # argmax returns the first (smallest-psi1) maximizer
    return PeakReport(argmax_psi1=pts[idx][0], max_value=pts[idx][1], argmax_index=idx)


def contamination_envelope_curves(base_variance_curve: Sequence[tuple[float, float]],
                                  eta_levels: Sequence[float],
                                  k: float = 3.0) -> list[EnvelopeRow]:
    """Variance envelopes (1-eta)*V and (1-eta)*V' + eta*(b-a)^2/12 per ratio.

    The window at each point is mean +/- k standard deviations of a
    Gaussian with the curve's variance, so both envelopes are positive
    affine images of the base curve and share its argmax exactly.
    """
    curve = sorted((float(p), float(v)) for p, v in base_variance_curve)
    if not curve:
        raise ValueError("base variance curve is empty")
    if len(curve) >= 3:
        argmax_idx = peak_report(curve).argmax_index
    else:
        argmax_idx = int(np.argmax([v for _, v in curve]))
    rows = []
    for i, (psi1, v) in enumerate(curve):
        flag = int(i == argmax_idx)
        for eta in eta_levels:
            if v <= 0.0:
                lower = upper = 0.0  # degenerate curve point (e.g. single-trial run)
            else:
                base = PredictiveGaussian(mean=0.0, variance=v)
                window = TruncationWindow.symmetric(base, k)
                vprime = truncated_normal_variance(base, window)
                lower = (1.0 - eta) * v
                upper = (1.0 - eta) * vprime + eta * window.uniform_variance
            rows.append(EnvelopeRow(psi1=psi1, eta=float(eta), base_variance=v,
                                    lower_envelope=lower, upper_envelope=upper,
                                    argmax_flag=flag))
    return rows


def misspecification_sweep(sweep: SweepConfig, teacher: Teacher | TeacherConfig,
                           corr_amplitude: float, threads: int = 1) -> list[MisspecRow]:
    """Test MSE over the psi1 grid under label-outlier corruption.

    Training labels are shifted through ``huber_contaminate`` at each rho
    level; test error is measured against the clean teacher signal at the
    shared test points.  Data, feature, and corruption streams are keyed
    by (grid point, trial) only, so the rho=0 column reproduces the clean
    sweep exactly and masks nest across rho levels.
    """
    teacher = _realize_teacher(sweep, teacher)
    ms = sweep.master_seed
    X_test = sample_sphere(sweep.test_points, sweep.d, derived_rng(ms, _S_TEST_POINTS))
    f_star = teacher.f(X_test)
    n = sweep.n
    G, T, P = len(sweep.psi1_grid), sweep.trials, sweep.test_points
    rhos = sweep.rho_levels
    preds = np.full((len(rhos), G, T, P), np.nan)

    def run(cell):
        gi, t = cell
        N = sweep.n_features_at(sweep.psi1_grid[gi])
        ds = teacher.sample(n, derived_rng(ms, _S_DATA, gi, t))
        assert ds.y.size == n  # corruption below only ever sees training labels
        # design, factorization and test embedding are shared across rho
        model = _fit_cell(ds.X, ds.y, N, sweep, derived_rng(ms, _S_FEATURES, gi, t))
        Zt = feature_map(X_test, model.bank.theta, sweep.activation)
        for ri, rho in enumerate(rhos):
            corr = HuberCorruption(rho=rho, amplitude=corr_amplitude)
            y_corr, _ = huber_contaminate(ds.y, corr, derived_rng(ms, _S_HUBER, gi, t))
            preds[ri, gi, t] = Zt @ refit_weights(model, y_corr)

    _map_cells(run, [(gi, t) for gi in range(G) for t in range(T)], threads)

    rows = []
    for ri, rho in enumerate(rhos):
        stats = []
        for gi, psi1 in enumerate(sweep.psi1_grid):
            mse, mse_se, _, _, failed = _row_stats(preds[ri, gi], f_star)
            if failed > 0.1 * T:
                raise RuntimeError(f"{failed}/{T} trials failed at psi1={psi1}, rho={rho}")
            stats.append((psi1, mse, mse_se))
        peak_idx = peak_report([(p, m) for p, m, _ in stats]).argmax_index if len(stats) >= 3 else 0
        for gi, (psi1, mse, mse_se) in enumerate(stats):
            rows.append(MisspecRow(psi1=psi1, rho=rho, mse=mse, mse_se=mse_se,
                                   peak_flag=int(gi == peak_idx)))
    # emitted sorted by (psi1, rho) for stable downstream files
    rows.sort(key=lambda r: (r.psi1, r.rho))
    return rows

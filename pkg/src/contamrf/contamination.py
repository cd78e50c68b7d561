"""Mixture-contamination credal sets and predictive density envelopes.

An epsilon-contamination neighborhood of a baseline probability P is the
set of mixtures (1-eps)*P + eps*Q over arbitrary Q.  Its lower/upper set
functions have closed forms, and pushing the point-mass extreme members
through the predictive yields pointwise density bounds around the
baseline Gaussian:

    lower(y) = (1-eta) * base(y)
    upper(y) = (1-eta) * base(y) + eta * u(y)

for any fixed contaminating density u.  These are bounds on the true
envelopes, not the envelopes themselves.  A brute-force discrete oracle
enumerates the point-mass extremes on a small grid to validate them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .rf import PredictiveGaussian, gaussian_pdf

__all__ = [
    "ContaminationBudget",
    "SpikeDensity",
    "ContaminatingDensity",
    "EventDensityBound",
    "EnvelopePair",
    "lower_set_prob",
    "upper_set_prob",
    "envelope_density",
    "predictive_envelopes",
    "envelope_mass",
    "discrete_envelope_oracle",
]

ORACLE_MAX_CELLS = 200


@dataclass(frozen=True)
class ContaminationBudget:
    """Contamination levels: epsilon for the prior, eta for the likelihood."""

    epsilon: float
    eta: float

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0 and 0.0 <= self.eta <= 1.0):
            raise ValueError("epsilon and eta must lie in [0, 1]")


@dataclass(frozen=True)
class SpikeDensity:
    """Uniform density on a small hyper-rectangle, standing in for a point mass.

    Bounded and normalized: value (2*half_width)^-dim inside the box,
    0 outside.
    """

    center: float | np.ndarray
    half_width: float

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def sup(self) -> float:
        return float((2.0 * self.half_width) ** (-self.dim))

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.dim == 1:
            inside = np.abs(y - self.center[0]) <= self.half_width
            out = np.where(inside, self.sup, 0.0)
            return float(out) if out.ndim == 0 else out
        pt = np.atleast_1d(y)
        if pt.shape[-1] != self.dim:
            raise ValueError(f"point has dim {pt.shape[-1]}, spike has dim {self.dim}")
        inside = np.all(np.abs(pt - self.center) <= self.half_width, axis=-1)
        out = np.where(inside, self.sup, 0.0)
        return float(out) if out.ndim == 0 else out

    def support(self) -> tuple[float, float]:
        if self.dim != 1:
            raise ValueError("interval support is only defined for 1-d spikes")
        c = float(self.center[0])
        return (c - self.half_width, c + self.half_width)


@dataclass(frozen=True)
class ContaminatingDensity:
    """A bounded, normalized density used as the contaminating component."""

    kind: str  # "uniform_window" | "spike"
    window: Optional[tuple[float, float]] = None
    spike: Optional[SpikeDensity] = None

    def __post_init__(self):
        if self.kind == "uniform_window":
            if self.window is None or not (self.window[0] < self.window[1]):
                raise ValueError("uniform_window needs an interval (a, b) with a < b")
        elif self.kind == "spike":
            if self.spike is None or self.spike.dim != 1:
                raise ValueError("spike kind needs a 1-d SpikeDensity")
        else:
            raise ValueError(f"unknown contaminant kind {self.kind!r}")

    @classmethod
    def uniform(cls, a: float, b: float) -> "ContaminatingDensity":
        return cls(kind="uniform_window", window=(float(a), float(b)))

    @classmethod
    def from_spike(cls, spike: SpikeDensity) -> "ContaminatingDensity":
        return cls(kind="spike", spike=spike)

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "uniform_window":
            a, b = self.window
            out = np.where((y >= a) & (y <= b), 1.0 / (b - a), 0.0)
            return float(out) if out.ndim == 0 else out
        return self.spike.pdf(y)

    def support(self) -> tuple[float, float]:
        if self.kind == "uniform_window":
            return self.window
        return self.spike.support()


def lower_set_prob(base_prob_of_A: float, epsilon: float, is_full_space: bool = False) -> float:
    """Lower probability of an event under epsilon-contamination.

    1 on the full space, else (1-eps) * P(A).
    """
    _check_prob_args(base_prob_of_A, epsilon)
    if is_full_space:
        return 1.0
    return (1.0 - epsilon) * base_prob_of_A


def upper_set_prob(base_prob_of_A: float, epsilon: float, is_empty: bool = False) -> float:
    """Upper probability of an event under epsilon-contamination.

    0 on the empty set, else (1-eps) * P(A) + eps.
    """
    _check_prob_args(base_prob_of_A, epsilon)
    if is_empty:
        return 0.0
    return (1.0 - epsilon) * base_prob_of_A + epsilon


def _check_prob_args(p: float, epsilon: float) -> None:
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"base probability {p!r} outside [0, 1]")
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon {epsilon!r} outside [0, 1]")


@dataclass(frozen=True)
class EventDensityBound:
    """Density of one extreme mixture member: (1-eps)*base + eps*spike.

    ``kind`` records the requested convention: "lower" callers place the
    spike outside the event of interest, "upper" callers inside it.
    """

    kind: str
    epsilon: float
    base_pdf_at: Callable
    contaminant: SpikeDensity

    def __call__(self, y):
        return (1.0 - self.epsilon) * np.asarray(self.base_pdf_at(y), dtype=float) \
            + self.epsilon * self.contaminant.pdf(y)


def envelope_density(kind: str, base_pdf_at: Callable, epsilon: float,
                     contaminant: SpikeDensity) -> EventDensityBound:
    """Build the extreme-mixture density y -> (1-eps)*base(y) + eps*spike(y)."""
    if kind not in ("lower", "upper"):
        raise ValueError("kind must be 'lower' or 'upper'")
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError("epsilon must lie in [0, 1]")
    return EventDensityBound(kind=kind, epsilon=epsilon,
                             base_pdf_at=base_pdf_at, contaminant=contaminant)


class EnvelopePair:
    """Pointwise bounds around a Gaussian predictive under contamination.

    lower_bound_at(y) = (1-eta)*base(y) is an upper bound on the lower
    predictive density; upper_bound_at(y) = (1-eta)*base(y) + eta*u(y) is
    a lower bound on the upper predictive density.  Both collapse onto
    the baseline when eta = 0.
    """

    def __init__(self, base: PredictiveGaussian, eta: float, u: ContaminatingDensity):
        self.base = base
        self.eta = float(eta)
        self.u = u

    def lower_bound_at(self, y):
        return (1.0 - self.eta) * gaussian_pdf(self.base, y)

    def upper_bound_at(self, y):
        return (1.0 - self.eta) * gaussian_pdf(self.base, y) + self.eta * self.u.pdf(y)

    def __repr__(self):
        return f"EnvelopePair(eta={self.eta}, base=N({self.base.mean:.4g}, {self.base.variance:.4g}))"


def predictive_envelopes(base: PredictiveGaussian, budget: ContaminationBudget,
                         u: ContaminatingDensity) -> EnvelopePair:
    """Assemble the pointwise predictive density bounds for one test input."""
    if budget.eta == 1.0:
        warnings.warn("eta = 1: the lower predictive bound is identically zero", stacklevel=2)
    return EnvelopePair(base=base, eta=budget.eta, u=u)


def _merged_segments(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    ivs = sorted((lo, hi) for lo, hi in intervals if hi > lo)
    merged: list[tuple[float, float]] = []
    for lo, hi in ivs:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def envelope_mass(pair: EnvelopePair, tail: float = 12.0) -> tuple[float, float]:
    """Quadrature masses of the two bounds over [mean +/- tail*s] union supp(u).

    Returns (integral of the lower bound, integral of the upper bound);
    these equal (1-eta, 1) up to Gaussian tail mass beyond ``tail``
    standard deviations.
    """
    m, s = pair.base.mean, pair.base.std
    u_lo, u_hi = pair.u.support()
    segments = _merged_segments([(m - tail * s, m + tail * s), (u_lo, u_hi)])
    breaks = [u_lo, u_hi, m]
    lower = upper = 0.0
    for lo, hi in segments:
        pts = sorted({p for p in breaks if lo < p < hi})
        lower += quad(pair.lower_bound_at, lo, hi, points=pts or None, limit=200)[0]
        upper += quad(pair.upper_bound_at, lo, hi, points=pts or None, limit=200)[0]
    return lower, upper


def discrete_envelope_oracle(grid: Sequence[float], base_cell_masses: Sequence[float],
                             epsilon: float, eta: float,
                             query_cells: Iterable[int]) -> tuple[float, float]:
    """Brute-force envelope masses on a small discrete grid.

    The baseline puts mass p_k on cell k.  Every contamination that moves
    the full epsilon (prior side) or eta (likelihood side) budget onto a
    single cell is an extreme point of the corresponding mixture set; the
    oracle enumerates all such pairs, pushes each through the predictive
    composition

        m_{i,j}(A) = (1-eta) * [(1-eps) * p(A) + eps * 1{i in A}] + eta * 1{j in A},

    and returns the min and max mass assigned to the query cells.  This is
    a validation harness, not a production path: grids beyond
    ``ORACLE_MAX_CELLS`` cells are refused.
    """
    grid = np.asarray(grid, dtype=float)
    masses = np.asarray(base_cell_masses, dtype=float)
    K = masses.size
    if K > ORACLE_MAX_CELLS:
        raise ValueError(f"oracle grid has {K} cells; the cap is {ORACLE_MAX_CELLS}")
    if grid.size != K + 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be K+1 strictly increasing cell boundaries")
    if np.any(masses < 0) or abs(float(masses.sum()) - 1.0) > 1e-12:
        raise ValueError("base_cell_masses must be nonnegative and sum to 1 within 1e-12")
    if not (0.0 <= epsilon <= 1.0 and 0.0 <= eta <= 1.0):
        raise ValueError("epsilon and eta must lie in [0, 1]")

    in_query = np.zeros(K, dtype=bool)
    for idx in query_cells:
        if not (0 <= idx < K):
            raise ValueError(f"query cell {idx} outside [0, {K})")
        in_query[idx] = True
    pA = float(masses[in_query].sum())

    lo, hi = np.inf, -np.inf
    for i in range(K):
        prior_side = (1.0 - epsilon) * pA + epsilon * (1.0 if in_query[i] else 0.0)
        for j in range(K):
            m = (1.0 - eta) * prior_side + eta * (1.0 if in_query[j] else 0.0)
            if m < lo:
                lo = m
            if m > hi:
                hi = m
    return float(lo), float(hi)

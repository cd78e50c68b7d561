"""Robust predictive uncertainty around a Gaussian predictive.

Three pieces:

* adjusted credible intervals: the smallest region whose lower predictive
  mass reaches 1-alpha is outer-approximated by the central Gaussian
  interval at level min{1, (1-alpha)/(1-eta)};
* truncated-normal moments, the closed form with pdf/cdf correction terms;
* the variance bound chain: (1-eta)*V is an upper bound on the lower
  predictive variance, and (1-eta)*V' + eta*(b-a)^2/12 (V' the truncated
  variance on [a, b]) approximates a lower bound on the upper predictive
  variance.  The exact chain

      (1-eta)*V  <=  V  <=  (1-eta)*V + eta*(b-a)^2/12

  holds whenever (b-a)^2/12 >= V; swapping V' into the last leg is only
  an approximation and can undershoot V for narrow windows or small eta,
  so the gap V - V' is reported rather than hidden.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .rf import PredictiveGaussian

__all__ = [
    "WindowMassUnderflow",
    "TruncationWindow",
    "IhdrResult",
    "VarianceChain",
    "normal_cdf",
    "normal_quantile",
    "ihdr_outer",
    "truncation_mass",
    "truncated_normal_variance",
    "lower_variance_bound",
    "upper_variance_bound",
    "variance_chain",
]


class WindowMassUnderflow(ArithmeticError):
    """The truncation window carries numerically zero baseline mass."""


def normal_cdf(x):
    """Standard normal CDF."""
    return ndtr(x)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF; absolute error well below 1e-9."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"quantile level must be in (0, 1), got {p!r}")
    return float(ndtri(p))


def _phi(t):
    return np.exp(-np.asarray(t, dtype=float) ** 2 / 2.0) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class TruncationWindow:
    """An interval [a, b]; symmetric windows are mean +/- k standard deviations."""

    a: float
    b: float
    k: Optional[float] = None

    def __post_init__(self):
        if not (self.a < self.b):
            raise ValueError("truncation window needs a < b")

    @classmethod
    def symmetric(cls, base: PredictiveGaussian, k: float) -> "TruncationWindow":
        if k <= 0:
            raise ValueError("k must be positive")
        h = k * base.std
        return cls(a=base.mean - h, b=base.mean + h, k=k)

    @property
    def width(self) -> float:
        return self.b - self.a

    @property
    def uniform_variance(self) -> float:
        """(b-a)^2 / 12, the variance of the uniform density on the window."""
        return self.width**2 / 12.0


@dataclass(frozen=True)
class IhdrResult:
    """Outer approximation of the robust highest-density region.

    ``whole_line`` is represented explicitly, never as infinite endpoints;
    CSV output writes it as the literal string "R".
    """

    kind: str  # "interval" | "whole_line"
    requested_alpha: float
    adjusted_level: float
    lo: Optional[float] = None
    hi: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("interval", "whole_line"):
            raise ValueError("kind must be 'interval' or 'whole_line'")
        if (self.kind == "whole_line") != (self.adjusted_level == 1.0):
            raise ValueError("kind is whole_line iff the adjusted level is 1")
        if self.kind == "interval" and (self.lo is None or self.hi is None or self.lo > self.hi):
            raise ValueError("interval results need lo <= hi")

    def to_json_value(self):
        if self.kind == "whole_line":
            return "R"
        return [self.lo, self.hi]


def ihdr_outer(base: PredictiveGaussian, alpha: float, eta: float) -> IhdrResult:
    """Adjusted-level credible interval covering the robust HDR.

    The adjusted level is min{1, (1-alpha)/(1-eta)}.  Below 1 the result
    is the central interval mean +/- z*s with z the standard normal
    quantile at (1+level)/2; at 1 the region is the whole line.
    """
    if not (0.0 <= alpha <= 1.0 and 0.0 <= eta <= 1.0):
        raise ValueError("alpha and eta must lie in [0, 1]")
    if eta >= 1.0:
        if alpha < 1.0:
            warnings.warn("eta = 1 forces a whole-line region for any alpha < 1", stacklevel=2)
        return IhdrResult(kind="whole_line", requested_alpha=alpha, adjusted_level=1.0)
    level = min(1.0, (1.0 - alpha) / (1.0 - eta))
    if level >= 1.0:
        return IhdrResult(kind="whole_line", requested_alpha=alpha, adjusted_level=1.0)
    if level <= 0.0:
        return IhdrResult(kind="interval", requested_alpha=alpha, adjusted_level=0.0,
                          lo=base.mean, hi=base.mean)
    z = normal_quantile((1.0 + level) / 2.0)
    h = z * base.std
    return IhdrResult(kind="interval", requested_alpha=alpha, adjusted_level=level,
                      lo=base.mean - h, hi=base.mean + h)


def _standardized(base: PredictiveGaussian, window: TruncationWindow):
    s = base.std
    return (window.a - base.mean) / s, (window.b - base.mean) / s


def truncation_mass(base: PredictiveGaussian, window: TruncationWindow) -> float:
    """Baseline Gaussian mass inside the window, by CDF difference."""
    at, bt = _standardized(base, window)
    return float(ndtr(bt) - ndtr(at))


def truncated_normal_variance(base: PredictiveGaussian, window: TruncationWindow) -> float:
    """Variance of the Gaussian restricted and renormalized to [a, b].

    Closed form: s^2 * [1 + (at*phi(at) - bt*phi(bt))/Z - ((phi(at)-phi(bt))/Z)^2]
    with at, bt the standardized endpoints and Z the window mass.
    """
    at, bt = _standardized(base, window)
    Z = float(ndtr(bt) - ndtr(at))
    if Z < 1e-300:
        raise WindowMassUnderflow(
            f"window [{window.a:.6g}, {window.b:.6g}] carries no baseline mass")
    pa, pb = float(_phi(at)), float(_phi(bt))
    correction = (at * pa - bt * pb) / Z - ((pa - pb) / Z) ** 2
    return base.variance * (1.0 + correction)


def lower_variance_bound(base: PredictiveGaussian, eta: float) -> float:
    """(1-eta) * V: an upper bound on the lower predictive variance."""
    if not (0.0 <= eta <= 1.0):
        raise ValueError("eta must lie in [0, 1]")
    return (1.0 - eta) * base.variance


def upper_variance_bound(base: PredictiveGaussian, eta: float,
                         window: TruncationWindow) -> float:
    """(1-eta) * V' + eta * (b-a)^2/12, approximating a lower bound on the
    upper predictive variance (V' the truncated variance on the window)."""
    if not (0.0 <= eta <= 1.0):
        raise ValueError("eta must lie in [0, 1]")
    return (1.0 - eta) * truncated_normal_variance(base, window) + eta * window.uniform_variance


@dataclass(frozen=True)
class VarianceChain:
    """All variance-bound quantities for one predictive and one window.

    ``condition_ok`` records (b-a)^2/12 >= base; under that condition the
    exact chain lower_bound <= base <= untruncated_upper_bound always
    holds, while ``upper_bound`` (which substitutes the truncated
    variance) may undershoot the base for narrow windows or small eta.
    ``ordering_ok`` reports the literal ordering of the emitted numbers.
    """

    lower_bound: float
    base: float
    truncated_base: float
    upper_bound: float
    condition_ok: bool
    eta: float
    window: TruncationWindow

    @property
    def untruncated_upper_bound(self) -> float:
        """(1-eta) * V + eta * (b-a)^2/12, the exact-chain upper leg."""
        return (1.0 - self.eta) * self.base + self.eta * self.window.uniform_variance

    @property
    def truncation_gap(self) -> float:
        """|V - V'|, the quality of the truncation approximation."""
        return abs(self.base - self.truncated_base)

    @property
    def ordering_ok(self) -> bool:
        return self.lower_bound <= self.base <= self.upper_bound

    @property
    def exact_chain_ok(self) -> bool:
        return self.lower_bound <= self.base <= self.untruncated_upper_bound


def variance_chain(base: PredictiveGaussian, eta: float,
                   window: TruncationWindow) -> VarianceChain:
    """Assemble the variance bound chain for one predictive Gaussian."""
    lower = lower_variance_bound(base, eta)
    truncated = truncated_normal_variance(base, window)
    upper = (1.0 - eta) * truncated + eta * window.uniform_variance
    return VarianceChain(
        lower_bound=lower,
        base=base.variance,
        truncated_base=truncated,
        upper_bound=upper,
        condition_ok=bool(window.uniform_variance >= base.variance),
        eta=eta,
        window=window,
    )

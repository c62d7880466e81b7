"""Integral linear functionals psi(F) = int a dF and their estimators.

Under exponential(rate lam) noise the efficient influence function of psi
is ``b(x) = a(x) - a'(x)/lam - psi(F0)``, so the naive estimator is the
sample average of ``a - a'/lam`` and its empirical standard deviation gives
the standard error. ``lam = 1`` is the textbook case (``X_bar - 1`` for the
mean).

Under Laplace noise there is no such transform in general. The one
exception handled here is an affine ``a``: zero-mean noise leaves
``E a(X) = psi(F)`` untouched, so the average of ``a(X_i)`` is used.
Indicator functionals (``cdf_at``, ``interval_prob``) have a plug-in point
estimate but no normal-theory interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import (DegenerateDerivative, DomainExceeded, InsufficientData,
                     NotDifferentiable)
from .model import DiscreteDistribution, NoiseKernel, Sample
from .stats import z_two_sided

A5_NOTE = "A5: not checked (discrete F0)"

_FAMILIES = ("mean", "moment", "mgf", "cdf_at", "interval_prob", "constant", "custom")


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    family: str
    params: Tuple[float, ...] = ()
    grid: Optional[np.ndarray] = field(default=None, repr=False)
    a_values: Optional[np.ndarray] = field(default=None, repr=False)
    adot_values: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown functional family {self.family!r}")
        if self.family == "mgf":
            (t,) = self.params
            if not 0.0 < abs(t) < 1.0:
                raise ValueError("mgf requires 0 < |t| < 1")
        if self.family == "moment":
            (r,) = self.params
            if r < 1 or int(r) != r:
                raise ValueError("moment order must be a positive integer")
        if self.family == "interval_prob":
            y1, y2 = self.params
            if not y1 < y2:
                raise ValueError("interval_prob needs y1 < y2")
        if self.family == "custom":
            _validate_table(self.grid, self.a_values, self.adot_values)

    # constructors -----------------------------------------------------
    @classmethod
    def mean(cls):
        return cls("mean")

    @classmethod
    def moment(cls, r: int):
        return cls("moment", (int(r),))

    @classmethod
    def mgf(cls, t: float):
        return cls("mgf", (float(t),))

    @classmethod
    def cdf_at(cls, y1: float):
        return cls("cdf_at", (float(y1),))

    @classmethod
    def interval_prob(cls, y1: float, y2: float):
        return cls("interval_prob", (float(y1), float(y2)))

    @classmethod
    def constant(cls, c: float):
        return cls("constant", (float(c),))

    @classmethod
    def custom(cls, grid, a, adot):
        g = np.array(grid, dtype=float)
        av = np.array(a, dtype=float)
        dv = np.array(adot, dtype=float)
        for arr in (g, av, dv):
            arr.setflags(write=False)
        return cls("custom", (), g, av, dv)

    # properties -------------------------------------------------------
    @property
    def regular_for_prop1(self) -> bool:
        """True when a is continuous with a bounded derivative on the working domain."""
        return self.family not in ("cdf_at", "interval_prob")

    @property
    def is_affine(self) -> bool:
        return self.family in ("mean", "constant") or (self.family == "moment" and self.params[0] == 1)

    @property
    def label(self) -> str:
        if self.family == "mean":
            return "mean"
        if self.family == "moment":
            return f"moment:{self.params[0]}"
        if self.family == "mgf":
            return f"mgf:{self.params[0]!r}"
        if self.family == "cdf_at":
            return f"cdf:{self.params[0]!r}"
        if self.family == "interval_prob":
            return f"interval:{self.params[0]!r},{self.params[1]!r}"
        if self.family == "constant":
            return f"const:{self.params[0]!r}"
        return f"custom[{self.grid.size}]"

    def a(self, y):
        y = np.asarray(y, dtype=float)
        f = self.family
        if f == "mean":
            return y.copy()
        if f == "moment":
            return y ** self.params[0]
        if f == "mgf":
            return np.exp(self.params[0] * y)
        if f == "cdf_at":
            return (y <= self.params[0]).astype(float)
        if f == "interval_prob":
            y1, y2 = self.params
            return ((y > y1) & (y <= y2)).astype(float)
        if f == "constant":
            return np.full(y.shape, self.params[0])
        return self._interp(y, self.a_values)

    def adot(self, y):
        y = np.asarray(y, dtype=float)
        f = self.family
        if not self.regular_for_prop1:
            raise NotDifferentiable(f"{self.label} is an indicator functional; a is not differentiable")
        if f == "mean":
            return np.ones(y.shape)
        if f == "moment":
            r = self.params[0]
            return r * y ** (r - 1)
        if f == "mgf":
            t = self.params[0]
            return t * np.exp(t * y)
        if f == "constant":
            return np.zeros(y.shape)
        return self._interp(y, self.adot_values)

    def _interp(self, y, values):
        g = self.grid
        if np.any(y < g[0]) or np.any(y > g[-1]):
            raise DomainExceeded(f"custom functional grid [{g[0]}, {g[-1]}] does not cover all points")
        return np.interp(y, g, values)


def _validate_table(grid, a, adot):
    if grid is None or a is None or adot is None:
        raise ValueError("custom functionals need grid, a and adot tables")
    if not (grid.ndim == a.ndim == adot.ndim == 1 and grid.size == a.size == adot.size >= 2):
        raise ValueError("custom tables must be 1-D of equal length >= 2")
    if not np.all(np.diff(grid) > 0):
        raise ValueError("custom grid must be strictly increasing")
    # slope of each cell against the trapezoid average of the tabulated derivative
    slope = np.diff(a) / np.diff(grid)
    avg = 0.5 * (adot[1:] + adot[:-1])
    scale = max(1.0, float(np.max(np.abs(adot))))
    if np.max(np.abs(slope - avg)) > 1e-4 * scale:
        raise ValueError("adot is inconsistent with finite differences of a (relative tol 1e-4)")


def parse_functional(text: str) -> FunctionalSpec:
    """Parse the ``name[:param]`` micro-grammar used by the CLI and configs.

    ``mean``, ``moment:r``, ``mgf:t``, ``cdf:y1``, ``interval:y1,y2``,
    ``const:c``.
    """
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    try:
        if name == "mean" and not arg:
            return FunctionalSpec.mean()
        if name == "moment":
            return FunctionalSpec.moment(int(arg))
        if name == "mgf":
            return FunctionalSpec.mgf(float(arg))
        if name in ("cdf", "cdf_at"):
            return FunctionalSpec.cdf_at(float(arg))
        if name in ("interval", "interval_prob"):
            y1, y2 = (float(v) for v in arg.split(","))
            return FunctionalSpec.interval_prob(y1, y2)
        if name in ("const", "constant"):
            return FunctionalSpec.constant(float(arg))
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad functional {text!r}: {exc}") from None
    raise ValueError(f"bad functional {text!r}")


@dataclass(frozen=True)
class EstimateReport:
    method: str
    psi_hat: float
    std_error: Optional[float]
    ci_level: float
    ci: Optional[Tuple[float, float]]
    n: int
    functional: str
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        lo, hi = self.ci if self.ci is not None else (None, None)
        return {
            "method": self.method,
            "psi_hat": self.psi_hat,
            "std_error": self.std_error,
            "ci_level": self.ci_level,
            "ci_lo": lo,
            "ci_hi": hi,
            "n": self.n,
            "functional": self.functional,
            "notes": list(self.notes),
        }


_STD_EXP = NoiseKernel.exponential(1.0)


def psi_of(spec: FunctionalSpec, F: DiscreteDistribution) -> float:
    return math.fsum(F.weights * spec.a(F.support))


def transformed(spec: FunctionalSpec, x, kernel: NoiseKernel = _STD_EXP) -> np.ndarray:
    """Values of the unbiased transform t with E[t(X) | Y] = a(Y)."""
    x = np.asarray(x, dtype=float)
    if not spec.regular_for_prop1:
        raise NotDifferentiable(f"{spec.label} has no influence function (indicator a)")
    if kernel.is_exponential:
        return spec.a(x) - spec.adot(x) / kernel.param
    if spec.is_affine:
        return spec.a(x)
    raise NotDifferentiable(
        f"{spec.label}: no sqrt(n) influence function under the Laplace kernel for non-affine a")


def influence_function(spec: FunctionalSpec, psi0: float, x, kernel: NoiseKernel = _STD_EXP):
    """b(x) = a(x) - a'(x)/lam - psi0 (efficient under exponential noise)."""
    v = transformed(spec, x, kernel) - psi0
    return float(v) if np.ndim(v) == 0 else v


def naive_estimate(spec: FunctionalSpec, sample: Sample, kernel: NoiseKernel = _STD_EXP) -> float:
    x = sample.observations
    if not spec.regular_for_prop1:
        raise NotDifferentiable(f"{spec.label} has no naive estimator (indicator a)")
    # keep the closed forms X_bar - 1/lam and (1 - t/lam) M_n(t) exact
    if kernel.is_exponential:
        lam = kernel.param
        if spec.family == "mean" or (spec.family == "moment" and spec.params[0] == 1):
            return float(np.mean(x)) - 1.0 / lam
        if spec.family == "mgf":
            t = spec.params[0]
            return (1.0 - t / lam) * float(np.mean(np.exp(t * x)))
    elif spec.family == "mean":
        return float(np.mean(x))
    return float(np.mean(transformed(spec, x, kernel)))


def variance_estimate(spec: FunctionalSpec, sample: Sample, kernel: NoiseKernel = _STD_EXP) -> float:
    """S_n^2 = P_n (t(X) - psi_tilde)^2, the plug-in variance of the influence values."""
    if sample.n < 2:
        raise InsufficientData("variance estimate needs n >= 2")
    v = transformed(spec, sample.observations, kernel)
    psi = naive_estimate(spec, sample, kernel)
    return float(np.mean((v - psi) ** 2))


def _notes(kernel: NoiseKernel) -> Tuple[str, ...]:
    return (A5_NOTE,) if kernel.is_exponential else ()


def confidence_interval(spec: FunctionalSpec, sample: Sample, level: float = 0.95,
                        kernel: NoiseKernel = _STD_EXP) -> EstimateReport:
    """Wald interval psi_tilde +- z_{alpha/2} S_n / sqrt(n)."""
    if not spec.regular_for_prop1:
        raise NotDifferentiable(f"{spec.label}: normal interval invalid for indicator functionals")
    psi = naive_estimate(spec, sample, kernel)
    se = math.sqrt(variance_estimate(spec, sample, kernel) / sample.n)
    half = z_two_sided(level) * se
    return EstimateReport("naive_influence", psi, se, level, (psi - half, psi + half),
                          sample.n, spec.label, _notes(kernel))


def plug_in_estimate(spec: FunctionalSpec, npmle) -> float:
    return psi_of(spec, npmle.estimate)


def plug_in_report(spec: FunctionalSpec, sample: Sample, npmle, level: float = 0.95,
                   kernel: NoiseKernel = _STD_EXP) -> EstimateReport:
    """psi(F_hat) with the influence-based standard error when one exists.

    The plug-in and naive estimators share their limit law under
    exponential noise, so S_n / sqrt(n) serves both. Indicator functionals
    and non-affine Laplace cases get no interval.
    """
    psi = plug_in_estimate(spec, npmle)
    notes = list(_notes(kernel))
    try:
        se = math.sqrt(variance_estimate(spec, sample, kernel) / sample.n)
    except (NotDifferentiable, InsufficientData) as exc:
        notes.append(f"no interval: {exc}")
        return EstimateReport("plug_in_npmle", psi, None, level, None, sample.n, spec.label, tuple(notes))
    half = z_two_sided(level) * se
    return EstimateReport("plug_in_npmle", psi, se, level, (psi - half, psi + half),
                          sample.n, spec.label, tuple(notes))


def delta_method(spec: FunctionalSpec, g: Callable[[float], float], gdot: Callable[[float], float],
                 sample: Sample, level: float = 0.95, kernel: NoiseKernel = _STD_EXP) -> EstimateReport:
    """Interval for g(psi) from the naive estimator and |g'(psi_tilde)| S_n / sqrt(n)."""
    base = confidence_interval(spec, sample, level, kernel)
    d = float(gdot(base.psi_hat))
    if d == 0.0:
        raise DegenerateDerivative("g'(psi_tilde) = 0; first-order delta method is invalid")
    if not math.isfinite(d):
        raise DegenerateDerivative("g'(psi_tilde) is not finite")
    est = float(g(base.psi_hat))
    se = abs(d) * base.std_error
    half = z_two_sided(level) * se
    return EstimateReport("naive_influence", est, se, level, (est - half, est + half),
                          sample.n, f"g({spec.label})", base.notes)

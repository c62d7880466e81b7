"""Convolution model X = Y + Z with exponential or Laplace noise.

Holds the core value types (kernel, discrete mixing distribution, sample,
mixture density), exact density and log-likelihood evaluation, seeded
inverse-CDF simulation and the one-column sample CSV format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import rng
from .errors import ZeroDensityAtObservation

MERGE_TOL = 1e-12
_LOG_TINY = 1e-300

EXPONENTIAL = "exponential"
LAPLACE = "laplace"


@dataclass(frozen=True)
class NoiseKernel:
    """Error density k.

    ``param`` is the rate lambda for the exponential kernel
    (k(z) = lambda exp(-lambda z) for z >= 0) and the scale s for the
    Laplace kernel (k(z) = exp(-|z|/s) / (2s)).
    """

    variant: str
    param: float = 1.0

    def __post_init__(self):
        if self.variant not in (EXPONENTIAL, LAPLACE):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if not (self.param > 0 and math.isfinite(self.param)):
            raise ValueError("kernel parameter must be positive and finite")
        object.__setattr__(self, "param", float(self.param))

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "NoiseKernel":
        return cls(EXPONENTIAL, rate)

    @classmethod
    def laplace(cls, scale: float = 1.0) -> "NoiseKernel":
        return cls(LAPLACE, scale)

    @property
    def is_exponential(self) -> bool:
        return self.variant == EXPONENTIAL

    @property
    def scale(self) -> float:
        """Length scale: 1/lambda or s."""
        return 1.0 / self.param if self.is_exponential else self.param

    @property
    def mean(self) -> float:
        return 1.0 / self.param if self.is_exponential else 0.0

    @property
    def variance(self) -> float:
        return self.param**-2 if self.is_exponential else 2.0 * self.param**2

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.is_exponential:
            lam = self.param
            return np.where(z >= 0, lam * np.exp(-lam * np.maximum(z, 0.0)), 0.0)
        s = self.param
        return np.exp(-np.abs(z) / s) / (2.0 * s)

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.is_exponential:
            lam = self.param
            with np.errstate(divide="ignore"):
                return np.where(z >= 0, math.log(lam) - lam * z, -np.inf)
        s = self.param
        return -np.abs(z) / s - math.log(2.0 * s)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.is_exponential:
            return np.where(z >= 0, -np.expm1(-self.param * np.maximum(z, 0.0)), 0.0)
        s = self.param
        return np.where(z < 0, 0.5 * np.exp(z / s), 1.0 - 0.5 * np.exp(-z / s))

    def ppf(self, u):
        """Inverse CDF; ``u`` must lie in the open unit interval."""
        u = np.asarray(u, dtype=float)
        if self.is_exponential:
            return -np.log1p(-u) / self.param
        d = u - 0.5
        return -self.param * np.sign(d) * np.log1p(-2.0 * np.abs(d))

    def tail_mass_outside(self, y: float, lo: float, hi: float) -> float:
        """Mass of k(. - y) falling outside [lo, hi]."""
        if self.is_exponential:
            if y < lo:
                return float(self.cdf(lo - y)) + math.exp(-self.param * (hi - y))
            return math.exp(-self.param * (hi - y))
        s = self.param
        left = 0.5 * math.exp(-(y - lo) / s) if y >= lo else 1.0 - 0.5 * math.exp(-(lo - y) / s)
        right = 0.5 * math.exp(-(hi - y) / s) if y <= hi else 1.0 - 0.5 * math.exp(-(y - hi) / s)
        return left + right

    def to_dict(self) -> dict:
        return {"variant": self.variant, "param": self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseKernel":
        return cls(_canonical_variant(d["variant"]), float(d["param"]))


def _canonical_variant(name: str) -> str:
    name = name.lower()
    if name in ("exp", "exponential"):
        return EXPONENTIAL
    if name in ("laplace", "double-exponential"):
        return LAPLACE
    raise ValueError(f"unknown kernel {name!r}")


def kernel_density(kernel: NoiseKernel, z: float) -> float:
    return float(kernel.pdf(z))


class DiscreteDistribution:
    """Finitely supported probability measure on the real line.

    Atoms closer than ``MERGE_TOL`` are merged (weights summed) and atoms of
    exactly zero weight are dropped, so ``support[0]`` is always a point
    carrying mass.
    """

    __slots__ = ("support", "weights")

    def __init__(self, support: Iterable[float], weights: Iterable[float]):
        y = np.asarray(list(support) if not isinstance(support, np.ndarray) else support, dtype=float).ravel()
        w = np.asarray(list(weights) if not isinstance(weights, np.ndarray) else weights, dtype=float).ravel()
        if y.size != w.size:
            raise ValueError("support and weights must have equal length")
        if y.size == 0:
            raise ValueError("a distribution needs at least one atom")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise ValueError("support and weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        order = np.argsort(y, kind="stable")
        y, w = y[order], w[order]
        keep = w > 0
        if not keep.any():
            raise ValueError("all weights are zero")
        y, w = y[keep], w[keep]
        # merge near-duplicate atoms
        gaps = np.diff(y) > MERGE_TOL
        starts = np.concatenate(([0], np.flatnonzero(gaps) + 1))
        y = y[starts]
        w = np.add.reduceat(w, starts)
        # leave already-normalised weights bit-identical so dict round trips are exact
        if abs(w.sum() - 1.0) > 1e-14:
            w = w / w.sum()
        y.setflags(write=False)
        w.setflags(write=False)
        self.support = y
        self.weights = w

    @classmethod
    def point_mass(cls, theta: float) -> "DiscreteDistribution":
        return cls([theta], [1.0])

    @classmethod
    def from_mapping(cls, atoms: dict) -> "DiscreteDistribution":
        return cls(list(atoms.keys()), list(atoms.values()))

    def __len__(self):
        return self.support.size

    def __repr__(self):
        return f"DiscreteDistribution(support={self.support.tolist()}, weights={self.weights.tolist()})"

    def __eq__(self, other):
        return (isinstance(other, DiscreteDistribution)
                and np.array_equal(self.support, other.support)
                and np.array_equal(self.weights, other.weights))

    @property
    def mean(self) -> float:
        return math.fsum(self.support * self.weights)

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum(self.weights * (self.support - m) ** 2)

    def cdf(self, y):
        c = np.cumsum(self.weights)
        idx = np.searchsorted(self.support, np.asarray(y, dtype=float), side="right")
        return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)

    def ppf(self, u):
        """Inverse CDF on the cumulative weight partition."""
        c = np.cumsum(self.weights)
        idx = np.searchsorted(c, np.asarray(u, dtype=float), side="right")
        return self.support[np.minimum(idx, self.support.size - 1)]

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDistribution":
        return cls(d["support"], d["weights"])


@dataclass(frozen=True)
class Sample:
    observations: np.ndarray
    master_seed: Optional[int] = None
    _sorted: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.array(self.observations, dtype=float).ravel()
        if x.size < 1:
            raise ValueError("a sample needs at least one observation")
        if not np.all(np.isfinite(x)):
            raise ValueError("observations must be finite")
        x.setflags(write=False)
        s = np.sort(x)
        s.setflags(write=False)
        object.__setattr__(self, "observations", x)
        object.__setattr__(self, "_sorted", s)

    @property
    def n(self) -> int:
        return self.observations.size

    @property
    def sorted(self) -> np.ndarray:
        return self._sorted

    def order_statistic(self, r: int) -> float:
        """X_{r:n}, 1-based."""
        if not 1 <= r <= self.n:
            raise IndexError(r)
        return float(self._sorted[r - 1])

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class MixtureDensity:
    """p_F(x) = sum_j w_j k(x - y_j)."""

    mixing: DiscreteDistribution
    kernel: NoiseKernel

    def __call__(self, x):
        return mixture_pdf(self.mixing, self.kernel, x)

    def logpdf(self, x):
        return mixture_logpdf(self.mixing, self.kernel, x)


def mixture_pdf(mixing: DiscreteDistribution, kernel: NoiseKernel, x):
    x = np.asarray(x, dtype=float)
    z = x[..., None] - mixing.support
    return kernel.pdf(z) @ mixing.weights


def mixture_logpdf(mixing: DiscreteDistribution, kernel: NoiseKernel, x):
    """log p_F(x); falls back to log-sum-exp where p_F underflows."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.ravel()
    p = mixture_pdf(mixing, kernel, x)
    out = np.empty_like(p)
    ok = p >= _LOG_TINY
    out[ok] = np.log(p[ok])
    if not ok.all():
        terms = kernel.logpdf(x[~ok, None] - mixing.support) + np.log(mixing.weights)
        m = terms.max(axis=1)
        lse = np.full(m.shape, -np.inf)
        fin = np.isfinite(m)
        lse[fin] = m[fin] + np.log(np.exp(terms[fin] - m[fin, None]).sum(axis=1))
        out[~ok] = lse
    return out.reshape(shape)


def mixture_density(md: MixtureDensity, x: float) -> float:
    return float(md(x))


def log_likelihood(md: MixtureDensity, sample: Sample) -> float:
    """Total log-likelihood sum_i log p_F(X_i) (not averaged)."""
    lp = md.logpdf(sample.observations)
    if not np.all(np.isfinite(lp)):
        bad = sample.observations[~np.isfinite(lp)]
        raise ZeroDensityAtObservation(
            f"p_F vanishes at {bad.size} observation(s), e.g. x={bad[0]!r}")
    return math.fsum(lp)


def simulate_matrix(mixing: DiscreteDistribution, kernel: NoiseKernel, n: int, seeds) -> np.ndarray:
    """Samples for many seeds at once, shape ``(len(seeds), n)``.

    Observation i of a stream uses draw 2i for Y and draw 2i+1 for Z.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    u = rng.uniforms(np.atleast_1d(np.asarray(seeds, dtype=object)), 2 * n)
    y = mixing.ppf(u[:, 0::2])
    z = kernel.ppf(u[:, 1::2])
    return y + z


def simulate(mixing: DiscreteDistribution, kernel: NoiseKernel, n: int, seed: int) -> Sample:
    x = simulate_matrix(mixing, kernel, n, [seed])[0]
    return Sample(x, master_seed=int(seed))


def write_sample_csv(path, sample: Sample | Sequence[float], header: bool = True) -> None:
    x = sample.observations if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    lines = (["x"] if header else []) + ["%.17g" % v for v in x]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sample_csv(path) -> Sample:
    rows = [r.strip() for r in Path(path).read_text(encoding="utf-8").splitlines()]
    rows = [r for r in rows if r]
    if rows and rows[0] == "x":
        rows = rows[1:]
    return Sample([float(r) for r in rows])

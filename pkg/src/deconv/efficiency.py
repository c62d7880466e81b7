"""Score operator, its adjoint, and distance diagnostics on explicit grids.

Everything here is composite trapezoid quadrature. Kernel integrals insert
the kink of k (at x = y) as an extra node, with the integrand there
linearly interpolated from its neighbours, so piecewise-smooth integrands
keep second-order accuracy.

``A_F h(x) = E[h(Y) | X = x]`` maps functions of y to functions of x, and
``A* b(y) = E[b(X) | Y = y]`` maps back. A functional psi(F) = int a dF is
differentiable at F0 when ``A* b = a - psi(F0)`` has a solution b in
L2(P0). Under exponential noise ``b = a - a'/lam - psi`` solves it.
``solve_adjoint`` attacks the equation numerically for either kernel and
reports how the least-squares residual behaves under grid refinement. A
shrinking residual is evidence of a solution, not a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (DomainExceeded, IllConditioned, InsufficientPoints, NotACdf,
                     NotAbsolutelyContinuous, WindowTooNarrow, ZeroMixtureDensity)
from .functionals import FunctionalSpec
from .model import DiscreteDistribution, NoiseKernel, mixture_pdf
from .stats import loglog_slope

TAIL_TOL = 1e-10
WINDOW_SCALES = 40.0
SV_CUTOFF = 1e-10
N_TEST_POINTS = 64


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    d = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=float).ravel()
        v = np.array(self.values, dtype=float).ravel()
        if g.size != v.size:
            raise ValueError("grid and values must have equal length")
        if g.size < 2 or not np.all(np.diff(g) > 0):
            raise ValueError("grid must be strictly increasing with at least 2 nodes")
        g.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid, fn) -> "GridFunction":
        g = np.asarray(grid, dtype=float)
        return cls(g, fn(g))

    @classmethod
    def uniform_density(cls, lo: float, hi: float, m: int) -> "GridFunction":
        g = np.linspace(lo, hi, m)
        return cls(g, np.full(m, 1.0 / (hi - lo)))

    def __len__(self):
        return self.grid.size

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.grid[0]) or np.any(x > self.grid[-1]):
            raise DomainExceeded("point outside the grid")
        return np.interp(x, self.grid, self.values)

    def integral(self) -> float:
        return float(trapezoid_weights(self.grid) @ self.values)


def _kernel_rows(nodes: np.ndarray, kernel: NoiseKernel, points: np.ndarray) -> np.ndarray:
    """W with (W @ phi(nodes))[p] ~ int phi(t) k(t - points[p]) dt over the node range."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    dx = np.diff(nodes)
    kv = kernel.pdf(nodes[None, :] - points[:, None])
    # segment index containing each point: nodes[i] <= p < nodes[i+1]
    i = np.searchsorted(nodes, points, side="right") - 1
    seg = np.arange(dx.size)
    if kernel.is_exponential:
        full = seg[None, :] > i[:, None]
    else:
        full = seg[None, :] != i[:, None]
    c = 0.5 * dx[None, :] * full
    W = np.zeros_like(kv)
    W[:, :-1] += c * kv[:, :-1]
    W[:, 1:] += c * kv[:, 1:]
    k0 = kernel.param if kernel.is_exponential else 0.5 / kernel.param
    rows = np.arange(points.size)
    ok = (i >= 0) & (i < dx.size)
    r, j = rows[ok], i[ok]
    dl = points[ok] - nodes[j]
    d = dx[j]
    dr = d - dl
    t = dl / d
    if not kernel.is_exponential:
        W[r, j] += 0.5 * dl * (kv[r, j] + k0 * (1.0 - t))
        W[r, j + 1] += 0.5 * dl * k0 * t
    W[r, j] += 0.5 * dr * k0 * (1.0 - t)
    W[r, j + 1] += 0.5 * dr * (k0 * t + kv[r, j + 1])
    return W


def _posterior_rows(nodes: np.ndarray, kernel: NoiseKernel, points: np.ndarray) -> np.ndarray:
    """Same as ``_kernel_rows`` but for int phi(y) k(x - y) dy (y is the variable)."""
    return _kernel_rows(-nodes[::-1], kernel, -np.atleast_1d(np.asarray(points, dtype=float)))[:, ::-1]


def _check_density(F: GridFunction, tol: float = 1e-6):
    if np.any(F.values < 0):
        raise ValueError("density has negative values")
    mass = F.integral()
    if abs(mass - 1.0) > tol:
        raise ValueError(f"density integrates to {mass!r}, expected 1")


def _on_grid(F: GridFunction, h: GridFunction) -> np.ndarray:
    if h.grid.size == F.grid.size and np.array_equal(h.grid, F.grid):
        return h.values
    return h(F.grid)


def operator_a(F: GridFunction, kernel: NoiseKernel, h: GridFunction, x):
    """E[h(Y) | X = x] for Y with density F."""
    _check_density(F)
    hv = _on_grid(F, h)
    W = _posterior_rows(F.grid, kernel, x)
    den = W @ F.values
    if np.any(den <= 0):
        raise ZeroMixtureDensity("p_F(x) = 0 at a requested point")
    out = (W @ (hv * F.values)) / den
    return float(out[0]) if np.ndim(x) == 0 else out


def adjoint_apply(b: GridFunction, kernel: NoiseKernel, y):
    """E[b(X) | Y = y] = int b(x) k(x - y) dx over the grid of b."""
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    lo, hi = b.grid[0], b.grid[-1]
    for v in ys:
        if kernel.tail_mass_outside(float(v), lo, hi) > TAIL_TOL:
            raise WindowTooNarrow(f"kernel mass outside [{lo}, {hi}] exceeds {TAIL_TOL} at y={v!r}")
    out = _kernel_rows(b.grid, kernel, ys) @ b.values
    return float(out[0]) if np.ndim(y) == 0 else out


def _psi_density(spec: FunctionalSpec, F0: GridFunction) -> float:
    return float(trapezoid_weights(F0.grid) @ (spec.a(F0.grid) * F0.values))


def check_exponential_influence(spec: FunctionalSpec, F0: GridFunction, y_probes: Sequence[float],
                                kernel: NoiseKernel = NoiseKernel.exponential(1.0),
                                step: float = 5e-4) -> float:
    """max over probes of |A* b(y) - (a(y) - psi(F0))| with b = a - a'/lam - psi(F0)."""
    if not kernel.is_exponential:
        raise ValueError("the closed-form influence function needs the exponential kernel")
    lam = kernel.param
    psi = _psi_density(spec, F0)
    probes = np.asarray(y_probes, dtype=float)
    lo = min(F0.grid[0], float(probes.min()))
    top = max(F0.grid[-1], float(probes.max()))
    # widen until the weighted tail of b is negligible
    length = WINDOW_SCALES / lam
    while True:
        hi = top + length
        tail = abs(float(spec.a(hi) - spec.adot(hi) / lam - psi)) * math.exp(-lam * length) / lam
        if tail <= 1e-12 or length > 1e4 / lam:
            break
        length *= 1.5
    m = int(math.ceil((hi - lo) / step)) + 1
    xg = np.linspace(lo, hi, m)
    b = GridFunction(xg, spec.a(xg) - spec.adot(xg) / lam - psi)
    fitted = adjoint_apply(b, kernel, probes)
    return float(np.max(np.abs(fitted - (spec.a(probes) - psi))))


@dataclass(frozen=True, eq=False)
class AdjointSolveReport:
    kernel: NoiseKernel
    functional: FunctionalSpec
    grid_sizes: List[int]
    residuals: List[float]
    solution_b: GridFunction
    b_l2_p0_norm: float
    b_norms: List[float] = field(default_factory=list)
    ranks: List[int] = field(default_factory=list)
    notes: Tuple[str, ...] = ()

    @property
    def ratios(self) -> List[float]:
        r = self.residuals
        return [r[k + 1] / r[k] if r[k] > 0 else float("nan") for k in range(len(r) - 1)]

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "functional": self.functional.label,
            "grid_sizes": list(self.grid_sizes),
            "residuals": list(self.residuals),
            "b_grid": self.solution_b.grid.tolist(),
            "b_values": self.solution_b.values.tolist(),
            "b_norm": self.b_l2_p0_norm,
            "b_norms": list(self.b_norms),
            "ranks": list(self.ranks),
            "notes": list(self.notes),
        }


def _extension(h: float, scale: float, length: float) -> np.ndarray:
    """Offsets beyond the core, spacing growing like h * exp(d / (3 scale))."""
    if length <= 0:
        return np.empty(0)
    pts = []
    d = 0.0
    while d < length:
        d = min(d + h * math.exp(d / (3.0 * scale)), length)
        pts.append(d)
    return np.array(pts)


def _default_window(kernel: NoiseKernel, lo: float, hi: float) -> Tuple[float, float]:
    reach = WINDOW_SCALES * kernel.scale
    return (lo if kernel.is_exponential else lo - reach), hi + reach


def solve_adjoint(spec: FunctionalSpec, kernel: NoiseKernel,
                  F0: Union[DiscreteDistribution, GridFunction],
                  x_window: Optional[Tuple[float, float]] = None,
                  grid_sizes: Sequence[int] = (129, 257, 513)) -> AdjointSolveReport:
    """Least-squares solution of int b(x) k(x - y) dx = a(y) - psi(F0) on refining grids.

    For grid size m the x-grid has m equispaced nodes across the support of
    F0, continued to the window with geometrically growing spacing. The
    equation is collocated at the 2m - 1 nodes and midpoints of that
    support (the atoms themselves for a discrete F0) and weighted by the
    F0 mass of each collocation point. The residual is the weighted
    discrete L2 norm of the misfit; singular values below 1e-10 of the
    largest are discarded.
    """
    sizes = [int(m) for m in grid_sizes]
    if not sizes or any(m < 3 for m in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("grid_sizes must be increasing counts >= 3")
    discrete = isinstance(F0, DiscreteDistribution)
    if discrete:
        lo, hi = float(F0.support[0]), float(F0.support[-1])
        if hi - lo < kernel.scale:
            mid = 0.5 * (lo + hi)
            lo, hi = mid - 0.5 * kernel.scale, mid + 0.5 * kernel.scale
    else:
        _check_density(F0)
        lo, hi = float(F0.grid[0]), float(F0.grid[-1])
    need = _default_window(kernel, lo, hi)
    win = need if x_window is None else (float(x_window[0]), float(x_window[1]))
    if win[0] > need[0] + 1e-12 or win[1] < need[1] - 1e-12:
        raise WindowTooNarrow(f"window {win} must cover {need}")

    residuals, norms, ranks = [], [], []
    b_fn = None
    for m in sizes:
        h = (hi - lo) / (m - 1)
        core = np.linspace(lo, hi, m)
        left = lo - _extension(h, kernel.scale, lo - win[0])[::-1]
        right = hi + _extension(h, kernel.scale, win[1] - hi)
        xg = np.concatenate((left, core, right))
        if discrete:
            y, mu = F0.support.astype(float), F0.weights.astype(float)
        else:
            y = np.linspace(F0.grid[0], F0.grid[-1], 2 * m - 1)
            mu = trapezoid_weights(y) * np.interp(y, F0.grid, F0.values)
            mu = mu / mu.sum()
        psi = float(mu @ spec.a(y))
        w = np.sqrt(mu)
        A = w[:, None] * _kernel_rows(xg, kernel, y)
        rhs = w * (spec.a(y) - psi)
        U, S, Vt = np.linalg.svd(A, full_matrices=False)
        keep = S > SV_CUTOFF * S[0] if S.size and S[0] > 0 else np.zeros(S.size, bool)
        if not keep.any():
            raise IllConditioned("singular-value cutoff removed every mode")
        bv = Vt[keep].T @ ((U[:, keep].T @ rhs) / S[keep])
        residuals.append(float(np.linalg.norm(A @ bv - rhs)))
        p0 = kernel.pdf(xg[:, None] - y[None, :]) @ mu
        norms.append(math.sqrt(max(float(trapezoid_weights(xg) @ (bv ** 2 * p0)), 0.0)))
        ranks.append(int(keep.sum()))
        b_fn = GridFunction(xg, bv)

    notes = ["residuals are numerical evidence about solvability, not a proof"]
    if discrete:
        notes.append("discrete F0: collocation only at atoms, a small residual is expected")
    elif (not kernel.is_exponential and spec.family != "constant"
          and residuals[-1] <= 1e-6 and (len(residuals) < 2 or residuals[-1] < residuals[0])):
        notes.append("apparent counterexample: small-residual solution found under the Laplace kernel "
                     "for a non-constant functional")
    return AdjointSolveReport(kernel, spec, sizes, residuals, b_fn, norms[-1], norms, ranks, tuple(notes))


@dataclass(frozen=True, eq=False)
class SubdirectionReport:
    alpha: float
    h: GridFunction
    mean_under_Falpha: float
    max_abs_ah_minus_b: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "h_grid": self.h.grid.tolist(),
            "h_values": self.h.values.tolist(),
            "mean_under_Falpha": self.mean_under_Falpha,
            "max_abs_ah_minus_b": self.max_abs_ah_minus_b,
        }


def worst_subdirection(spec: FunctionalSpec, F: GridFunction, F0: GridFunction,
                       alpha: float) -> SubdirectionReport:
    """h(y) = a(y) - g'(y)/f_a(y) - psi(F_a), g(y) = a'(y) int_{u<=y} e^{-(y-u)} f_a(u) du.

    Standard exponential noise. ``f_a = alpha f + (1 - alpha) f0`` must be
    strictly positive on the common grid. The gap to b = a - a' - psi(F_a)
    is measured at 64 cell-centred points of the grid range.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if not np.array_equal(F.grid, F0.grid):
        raise ValueError("F and F0 must share a grid")
    y = F0.grid
    fa = F0.values if alpha == 0.0 else alpha * F.values + (1.0 - alpha) * F0.values
    if np.any(fa <= 0) or (alpha > 0 and np.any(F.values < 0)):
        raise NotAbsolutelyContinuous("mixed density must be strictly positive on the grid")
    Fa = GridFunction(y, fa)
    _check_density(Fa)
    tw = trapezoid_weights(y)
    psi = float(tw @ (spec.a(y) * fa))
    adot = spec.adot(y)
    # running integral of e^{-(y-u)} f(u) over u <= y
    d = np.diff(y)
    e = np.exp(-d)
    run = np.zeros(y.size)
    for j in range(1, y.size):
        run[j] = e[j - 1] * (run[j - 1] + 0.5 * d[j - 1] * fa[j - 1]) + 0.5 * d[j - 1] * fa[j]
    g = adot * run
    gprime = np.gradient(g, y, edge_order=2)
    hv = spec.a(y) - gprime / fa - psi
    h = GridFunction(y, hv)
    mean = float(tw @ (hv * fa))
    lo, hi = y[0], y[-1]
    xs = lo + (hi - lo) * (np.arange(N_TEST_POINTS) + 0.5) / N_TEST_POINTS
    ah = operator_a(Fa, NoiseKernel.exponential(1.0), h, xs)
    b = spec.a(xs) - spec.adot(xs) - psi
    return SubdirectionReport(float(alpha), h, mean, float(np.max(np.abs(ah - b))))


def hellinger(p: GridFunction, q: GridFunction) -> float:
    """sqrt(int (sqrt p - sqrt q)^2); disjoint densities give sqrt(2)."""
    if not np.array_equal(p.grid, q.grid):
        raise ValueError("densities must share a grid")
    if np.any(p.values < 0) or np.any(q.values < 0):
        raise ValueError("densities must be nonnegative")
    diff = (np.sqrt(p.values) - np.sqrt(q.values)) ** 2
    return math.sqrt(max(float(trapezoid_weights(p.grid) @ diff), 0.0))


def _check_cdf(F: GridFunction, tol: float = 1e-9):
    v = F.values
    if np.any(np.diff(v) < -tol) or v[0] < -tol or v[-1] > 1.0 + tol or np.any(v < -tol) or np.any(v > 1 + tol):
        raise NotACdf("values must be nondecreasing within [0, 1]")


def wasserstein1(F: GridFunction, G: GridFunction) -> float:
    """int |F - G| for two CDFs tabulated on a common grid."""
    if not np.array_equal(F.grid, G.grid):
        raise ValueError("CDFs must share a grid")
    _check_cdf(F)
    _check_cdf(G)
    return float(trapezoid_weights(F.grid) @ np.abs(F.values - G.values))


def mixing_wasserstein1(F: DiscreteDistribution, G: DiscreteDistribution) -> float:
    """Exact W1 between two discrete distributions (area between step CDFs)."""
    pts = np.union1d(F.support, G.support)
    gap = np.abs(F.cdf(pts[:-1]) - G.cdf(pts[:-1]))
    return math.fsum(gap * np.diff(pts))


def mixture_hellinger(F: DiscreteDistribution, G: DiscreteDistribution, kernel: NoiseKernel,
                      points: int = 20001) -> float:
    """Hellinger distance between p_F and p_G on a fine grid covering both."""
    s = kernel.scale
    lo = min(F.support[0], G.support[0]) - (0.0 if kernel.is_exponential else 30.0 * s)
    hi = max(F.support[-1], G.support[-1]) + 30.0 * s
    # atoms are kinks (jumps for the exponential kernel); put them on the grid
    grid = np.union1d(np.linspace(lo, hi, points), np.union1d(F.support, G.support))
    p = mixture_pdf(F, kernel, grid)
    q = mixture_pdf(G, kernel, grid)
    if kernel.is_exponential:
        # right-continuous densities: split each cell at its left node
        sp, sq = np.sqrt(p), np.sqrt(q)
        d = np.diff(grid)
        left = (sp[:-1] - sq[:-1]) ** 2
        pl = mixture_pdf(F, kernel, grid[1:] - 1e-13 * np.maximum(1.0, np.abs(grid[1:])))
        ql = mixture_pdf(G, kernel, grid[1:] - 1e-13 * np.maximum(1.0, np.abs(grid[1:])))
        right = (np.sqrt(pl) - np.sqrt(ql)) ** 2
        return math.sqrt(max(math.fsum(0.5 * d * (left + right)), 0.0))
    return hellinger(GridFunction(grid, p), GridFunction(grid, q))


@dataclass(frozen=True)
class RateDiagnostic:
    slope: float
    std_error: float
    wh_ratios: Tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {"slope": self.slope, "se": self.std_error, "wh_ratios": list(self.wh_ratios)}


def wasserstein_hellinger_ratio(w1: float, d_h: float) -> float:
    """W1 / (sqrt(d_H) log^{3/4}(1/d_H)), defined for 0 < d_H < 1."""
    if not 0.0 < d_h < 1.0:
        return float("nan")
    return w1 / (math.sqrt(d_h) * math.log(1.0 / d_h) ** 0.75)


def hellinger_rate_diagnostic(mc_results: Sequence[Tuple[float, ...]]) -> RateDiagnostic:
    """Slope of log mean d_H on log n; entries are (n, d_H) or (n, d_H, W1)."""
    ns = [float(r[0]) for r in mc_results]
    if len(set(ns)) < 3:
        raise InsufficientPoints("need at least 3 distinct sample sizes")
    slope, se = loglog_slope(ns, [float(r[1]) for r in mc_results])
    ratios = tuple(wasserstein_hellinger_ratio(float(r[2]), float(r[1])) for r in mc_results if len(r) > 2)
    return RateDiagnostic(slope, se, ratios)

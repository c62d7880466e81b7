"""Seeded replication studies.

Replicate r at sample size n draws its data from the stream
``derive_seed(master_seed, n, r)``, so any subset of replicates can be
recomputed in any order, or in worker processes, with identical results.
Aggregates are compensated sums over replicates in index order.

Estimators
----------
``naive``          psi_tilde = P_n t(X) with t the unbiased transform of a
``plug_in_npmle``  psi(F_hat) with the NPMLE F_hat (constrained Newton solver)
``mean``           X_bar - E Z, a location estimator for the mean of F
``median``         sample median - median(Z), Laplace location model only

The first two share the standard error S_n / sqrt(n). The mean uses the
sample standard deviation and the median the known asymptotic s / sqrt(n).
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .efficiency import mixing_wasserstein1, mixture_hellinger, hellinger_rate_diagnostic
from .errors import DeconvError, InsufficientData, InsufficientPoints, NotDifferentiable, StudyAborted
from .functionals import FunctionalSpec, naive_estimate, parse_functional, psi_of, transformed
from .jsonio import dump
from .model import DiscreteDistribution, NoiseKernel, Sample, simulate_matrix
from .npmle import NpmleConfig, fit_npmle
from .stats import loglog_slope, norm_cdf, z_two_sided

ESTIMATORS = ("naive", "plug_in_npmle", "mean", "median")
COVERAGE_LEVELS = (0.90, 0.95, 0.99)
MAX_FAILURE_RATE = 0.05
_CHUNK_FIT = 64
_CHUNK_CHEAP = 4096


@dataclass(frozen=True, eq=False)
class StudyConfig:
    scenario_name: str
    mixing_true: DiscreteDistribution
    kernel: NoiseKernel
    functional: FunctionalSpec
    sample_sizes: Tuple[int, ...]
    replications: int
    ci_level: float = 0.95
    master_seed: int = 0
    estimator_set: Tuple[str, ...] = ("naive",)
    npmle_tol: float = 1e-8
    npmle_method: str = "cnm"
    distances: bool = False

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sample_sizes)
        object.__setattr__(self, "sample_sizes", sizes)
        object.__setattr__(self, "estimator_set", tuple(self.estimator_set))
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not sizes or any(n < 2 for n in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sample_sizes must be distinct, increasing and >= 2")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        unknown = set(self.estimator_set) - set(ESTIMATORS)
        if unknown or not self.estimator_set:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if "naive" in self.estimator_set:
            # fail at configuration time rather than on every replicate
            transformed(self.functional, np.zeros(1), self.kernel)
        if ("mean" in self.estimator_set or "median" in self.estimator_set) and self.functional.family != "mean":
            raise ValueError("mean and median estimators target the mean functional")
        if "median" in self.estimator_set and self.kernel.is_exponential:
            raise ValueError("the median estimator is for the Laplace location model")
        if self.distances and "plug_in_npmle" not in self.estimator_set:
            raise ValueError("distances are computed from NPMLE fits; add plug_in_npmle")

    def to_dict(self) -> dict:
        return {
            "scenario_name": self.scenario_name,
            "mixing_true": self.mixing_true.to_dict(),
            "kernel": self.kernel.to_dict(),
            "functional": self.functional.label,
            "sample_sizes": list(self.sample_sizes),
            "replications": self.replications,
            "ci_level": self.ci_level,
            "master_seed": int(self.master_seed),
            "estimator_set": list(self.estimator_set),
            "npmle_tol": self.npmle_tol,
            "npmle_method": self.npmle_method,
            "distances": self.distances,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        if "scenario" in d and "mixing_true" not in d:
            base = builtin_scenario(d["scenario"]).to_dict()
            base.update({k: v for k, v in d.items() if k != "scenario"})
            d = base
        return cls(
            scenario_name=d["scenario_name"],
            mixing_true=DiscreteDistribution.from_dict(d["mixing_true"]),
            kernel=NoiseKernel.from_dict(d["kernel"]),
            functional=parse_functional(d["functional"]),
            sample_sizes=tuple(d["sample_sizes"]),
            replications=int(d["replications"]),
            ci_level=float(d.get("ci_level", 0.95)),
            master_seed=int(d.get("master_seed", 0)),
            estimator_set=tuple(d.get("estimator_set", ("naive",))),
            npmle_tol=float(d.get("npmle_tol", 1e-8)),
            npmle_method=d.get("npmle_method", "cnm"),
            distances=bool(d.get("distances", False)),
        )


def theoretical_variance(spec: FunctionalSpec, mixing: DiscreteDistribution, kernel: NoiseKernel,
                         step: float = 1e-3) -> float:
    """int (t(x) - psi)^2 p0(x) dx, atom by atom, with t = a - a'/lam (or a for affine Laplace cases)."""
    psi = psi_of(spec, mixing)
    s = kernel.scale
    length = 40.0 * s
    while True:
        probe = mixing.support[:, None] + np.array([length, -length])[None, :]
        if kernel.is_exponential:
            probe = probe[:, :1]
        edge = float(np.max((transformed(spec, probe, kernel) - psi) ** 2 * kernel.pdf(np.full(probe.shape, length)))) * s
        if edge <= 1e-10 or length > 2000.0 * s:
            break
        length *= 1.5
    lo = 0.0 if kernel.is_exponential else -length
    z = np.linspace(lo, length, int(math.ceil((length - lo) / (step * s))) + 1)
    if not kernel.is_exponential:
        z = np.union1d(z, [0.0])
    w = np.zeros(z.size)
    d = np.diff(z)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    kz = kernel.pdf(z) * w
    total = []
    for y, p in zip(mixing.support, mixing.weights):
        v = transformed(spec, y + z, kernel) - psi
        total.append(p * float((v * v) @ kz))
    return math.fsum(total)


def _estimator_variance(name: str, config: StudyConfig) -> Optional[float]:
    try:
        if name in ("naive", "plug_in_npmle"):
            return theoretical_variance(config.functional, config.mixing_true, config.kernel)
    except NotDifferentiable:
        return None
    if name == "mean":
        return config.mixing_true.variance + config.kernel.variance
    if name == "median" and len(config.mixing_true) == 1:
        return config.kernel.scale ** 2
    return None


def _noise_median(kernel: NoiseKernel) -> float:
    return math.log(2.0) / kernel.param if kernel.is_exponential else 0.0


def _one_replicate(config: StudyConfig, x: np.ndarray, psi0: float, npmle_cfg: NpmleConfig) -> dict:
    n = x.size
    out: Dict[str, tuple] = {}
    spec, kernel = config.functional, config.kernel
    naive_se = None
    psi_t = None
    if "naive" in config.estimator_set or "plug_in_npmle" in config.estimator_set:
        sample = Sample(x)
        try:
            t = transformed(spec, x, kernel)
            psi_t = naive_estimate(spec, sample, kernel)
            naive_se = math.sqrt(float(np.mean((t - psi_t) ** 2)) / n)
        except NotDifferentiable:
            pass
        if "naive" in config.estimator_set:
            out["naive"] = (psi_t, naive_se)
    extra = {}
    if "plug_in_npmle" in config.estimator_set:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = fit_npmle(sample, kernel, npmle_cfg, raise_on_failure=True)
            est = psi_of(spec, fit.estimate)
            out["plug_in_npmle"] = (est, naive_se)
            if psi_t is not None:
                extra["plugin_naive_gap"] = math.sqrt(n) * abs(est - psi_t)
            if config.distances:
                extra["hellinger"] = mixture_hellinger(fit.estimate, config.mixing_true, kernel)
                extra["w1"] = mixing_wasserstein1(fit.estimate, config.mixing_true)
        except DeconvError:
            out["plug_in_npmle"] = None
    if "mean" in config.estimator_set:
        sd = float(np.std(x))
        out["mean"] = (float(np.mean(x)) - kernel.mean, sd / math.sqrt(n))
    if "median" in config.estimator_set:
        out["median"] = (float(np.median(x)) - _noise_median(kernel), kernel.scale / math.sqrt(n))
    return {"est": out, "extra": extra}


def _run_chunk(args):
    config, n, r0, r1 = args
    seeds = rng.derive_seeds(config.master_seed, (n,), np.arange(r0, r1))
    X = simulate_matrix(config.mixing_true, config.kernel, n, seeds)
    psi0 = psi_of(config.functional, config.mixing_true)
    npmle_cfg = NpmleConfig(tol_gradient=config.npmle_tol, method=config.npmle_method)
    return [_one_replicate(config, X[i], psi0, npmle_cfg) for i in range(X.shape[0])]


def thread_count() -> int:
    raw = os.environ.get("DECONV_THREADS")
    if raw is None:
        return 1
    try:
        k = int(raw)
    except ValueError:
        raise ValueError("DECONV_THREADS must be a positive integer") from None
    if k < 1:
        raise ValueError("DECONV_THREADS must be a positive integer")
    return k


def ks_normal(standardized: Sequence[float]) -> float:
    """sup_u |F_m(u) - Phi(u)| for the empirical CDF F_m of the inputs."""
    u = np.sort(np.asarray(standardized, dtype=float))
    m = u.size
    if m < 10:
        raise InsufficientData("ks_normal needs at least 10 values")
    phi = np.array([norm_cdf(float(v)) for v in u])
    # the ECDF jumps at each distinct value: compare Phi with both one-sided limits
    right = np.searchsorted(u, u, side="right") / m
    left = np.searchsorted(u, u, side="left") / m
    return float(max(np.max(np.abs(right - phi)), np.max(np.abs(phi - left))))


def rate_regression(points: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """OLS slope of log rmse on log n, with its standard error."""
    if len(points) < 3:
        raise InsufficientPoints("rate regression needs at least 3 points")
    return loglog_slope([p[0] for p in points], [p[1] for p in points])


@dataclass
class StudyReport:
    config: StudyConfig
    rows: List[dict]
    rate_slopes: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    extras: Dict[str, object] = field(default_factory=dict)

    def row(self, n: int, estimator: str) -> dict:
        for r in self.rows:
            if r["n"] == n and r["estimator"] == estimator:
                return r
        raise KeyError((n, estimator))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rows": self.rows,
            "rate_slopes": {k: {"slope": v[0], "se": v[1]} for k, v in self.rate_slopes.items()},
            "extras": self.extras,
        }

    CSV_COLUMNS = ("n", "estimator", "replications_ok", "failures", "bias", "rmse",
                   "empirical_variance_of_root_n_error", "theoretical_variance", "coverage_0.90",
                   "coverage_0.95", "coverage_0.99", "coverage", "ks_distance_to_normal",
                   "ks_standardization", "ks_studentized")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.rows:
            cells = []
            for c in self.CSV_COLUMNS:
                v = r.get(c)
                if v is None or (isinstance(v, float) and not math.isfinite(v)):
                    cells.append("")
                elif isinstance(v, float):
                    cells.append("%.17g" % v)
                else:
                    cells.append(str(v))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump(self, out / "report.json")
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")


def _fmean(v) -> float:
    return math.fsum(v) / len(v) if len(v) else float("nan")


def _aggregate(n: int, name: str, recs: list, psi0: float, level: float, theo: Optional[float]) -> dict:
    ok = [r for r in recs if r is not None and r[0] is not None]
    errs = [r[0] - psi0 for r in ok]
    row = {"n": n, "estimator": name, "replications_ok": len(ok), "failures": len(recs) - len(ok)}
    if not ok:
        return row
    bias = _fmean(errs)
    var = _fmean([(e - bias) ** 2 for e in errs])
    mse = _fmean([e * e for e in errs])
    row.update(bias=bias, rmse=math.sqrt(mse), empirical_variance_of_root_n_error=n * var,
               theoretical_variance=theo)
    ses = [r[1] for r in ok]
    have_se = all(s is not None for s in ses)
    for lv in sorted(set(COVERAGE_LEVELS) | {level}):
        key = "coverage_%.2f" % lv
        if have_se:
            z = z_two_sided(lv)
            row[key] = sum(1 for e, s in zip(errs, ses) if abs(e) <= z * s) / len(errs)
        else:
            row[key] = None
    row["coverage"] = row["coverage_%.2f" % level]
    if len(errs) >= 10:
        if theo is not None and theo > 0:
            row["ks_distance_to_normal"] = ks_normal([math.sqrt(n) * e / math.sqrt(theo) for e in errs])
            row["ks_standardization"] = "theoretical"
        elif have_se and all(s > 0 for s in ses):
            row["ks_distance_to_normal"] = ks_normal([e / s for e, s in zip(errs, ses)])
            row["ks_standardization"] = "studentized"
        if have_se and all(s > 0 for s in ses):
            row["ks_studentized"] = ks_normal([e / s for e, s in zip(errs, ses)])
    return row


def run_study(config: StudyConfig, threads: Optional[int] = None) -> StudyReport:
    """Run every (n, replicate) work item and aggregate per (n, estimator)."""
    threads = thread_count() if threads is None else max(1, int(threads))
    psi0 = psi_of(config.functional, config.mixing_true)
    theo = {e: _estimator_variance(e, config) for e in config.estimator_set}
    R = config.replications
    chunk = _CHUNK_FIT if "plug_in_npmle" in config.estimator_set else _CHUNK_CHEAP
    jobs = [(config, n, r0, min(r0 + chunk, R)) for n in config.sample_sizes for r0 in range(0, R, chunk)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    by_n: Dict[int, list] = {n: [] for n in config.sample_sizes}
    for job, part in zip(jobs, parts):
        by_n[job[1]].extend(part)

    rows, extras = [], {"psi_true": psi0, "notes": []}
    gaps, dists = {}, []
    for n in config.sample_sizes:
        reps = by_n[n]
        for name in config.estimator_set:
            recs = [rep["est"].get(name) for rep in reps]
            row = _aggregate(n, name, recs, psi0, config.ci_level, theo[name])
            if row["failures"] > MAX_FAILURE_RATE * R:
                raise StudyAborted(f"{name} failed on {row['failures']} of {R} replicates at n={n}")
            rows.append(row)
        g = [rep["extra"]["plugin_naive_gap"] for rep in reps if "plugin_naive_gap" in rep["extra"]]
        if g:
            gaps[str(n)] = _fmean(g)
        if config.distances:
            h = [rep["extra"]["hellinger"] for rep in reps if "hellinger" in rep["extra"]]
            w = [rep["extra"]["w1"] for rep in reps if "w1" in rep["extra"]]
            dists.append((n, _fmean(h), _fmean(w)))
    if gaps:
        extras["plugin_naive_gap"] = gaps
    slopes = {}
    if len(config.sample_sizes) >= 3:
        for name in config.estimator_set:
            pts = [(r["n"], r["rmse"]) for r in rows if r["estimator"] == name and "rmse" in r]
            if len(pts) >= 3 and all(p[1] > 0 for p in pts):
                slopes[name] = rate_regression(pts)
    if config.distances:
        extras["distances"] = [{"n": n, "hellinger": h, "w1": w} for n, h, w in dists]
        if len(dists) >= 3:
            diag = hellinger_rate_diagnostic(dists)
            extras["hellinger_rate"] = diag.to_dict()
    if config.kernel.is_exponential:
        extras["notes"].append("A5: not checked (discrete F0)")
    elif "naive" in config.estimator_set or "plug_in_npmle" in config.estimator_set:
        extras["notes"].append("Laplace kernel: no theoretical rate target for mixing functionals")
    return StudyReport(config, rows, slopes, extras)


def _steam_generator_mixing(tau: float = 1.0, atoms: int = 64) -> DiscreteDistribution:
    edges = np.linspace(0.0, 5.0 * tau, atoms + 1)
    mass = np.exp(-edges[:-1] / tau) - np.exp(-edges[1:] / tau)
    return DiscreteDistribution(0.5 * (edges[:-1] + edges[1:]), mass / mass.sum())


def _uniform_atoms(lo: float, hi: float, atoms: int) -> DiscreteDistribution:
    return DiscreteDistribution(lo + (hi - lo) * (np.arange(atoms) + 0.5) / atoms, np.full(atoms, 1.0 / atoms))


def builtin_scenario(name: str) -> StudyConfig:
    """Named, ready-to-run study configurations."""
    two_point = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])
    exp1 = NoiseKernel.exponential(1.0)
    lap1 = NoiseKernel.laplace(1.0)
    mean = FunctionalSpec.mean()
    table = {
        "exp-mean": lambda: StudyConfig("exp-mean", two_point, exp1, mean, (1600,), 2000,
                                        master_seed=20240501, estimator_set=("naive",)),
        "exp-rate": lambda: StudyConfig("exp-rate", two_point, exp1, mean, (100, 400, 1600, 6400), 500,
                                        master_seed=20240502, estimator_set=("naive",)),
        "exp-plugin": lambda: StudyConfig("exp-plugin", two_point, exp1, mean, (100, 400, 1600), 100,
                                          master_seed=20240503, estimator_set=("naive", "plug_in_npmle")),
        "exp-hellinger": lambda: StudyConfig("exp-hellinger", _uniform_atoms(0.0, 1.0, 64), exp1, mean,
                                             (100, 400, 1600), 200, master_seed=20240504,
                                             estimator_set=("plug_in_npmle",), distances=True),
        "laplace-median": lambda: StudyConfig("laplace-median", DiscreteDistribution.point_mass(0.0), lap1,
                                              mean, (1001,), 5000, master_seed=20240505,
                                              estimator_set=("median", "mean")),
        "laplace-median-small": lambda: StudyConfig("laplace-median-small", DiscreteDistribution.point_mass(0.0),
                                                    lap1, mean, (5,), 200_000, master_seed=20240506,
                                                    estimator_set=("median",)),
        "steam-generator": lambda: StudyConfig("steam-generator", _steam_generator_mixing(), lap1, mean,
                                               (100, 400, 1600), 200, master_seed=20240507,
                                               estimator_set=("mean", "plug_in_npmle")),
    }
    if name not in table:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(table)}")
    return table[name]()


BUILTIN_SCENARIOS = ("exp-mean", "exp-rate", "exp-plugin", "exp-hellinger", "laplace-median",
                     "laplace-median-small", "steam-generator")

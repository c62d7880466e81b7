import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deconv.errors import InstanceTooLarge, NotConverged
from deconv.model import (DiscreteDistribution, MixtureDensity, NoiseKernel, Sample, log_likelihood,
                          simulate)
from deconv.npmle import (N_PROBES, NpmleConfig, candidate_support, fit_npmle, gradient_function,
                          npmle_bruteforce, probe_points)

KERNELS = [NoiseKernel.exponential(1.0), NoiseKernel.laplace(1.0)]
CNM = NpmleConfig(method="cnm")


def lattice_slack(sample, kernel, fit, step):
    """Upper bound on fit - (best lattice point) from rounding the fitted weights to the lattice."""
    x = sample.observations
    p = MixtureDensity(fit.estimate, kernel)(x)
    delta = step * kernel.pdf(x[:, None] - np.unique(sample.sorted)[None, :]).sum(axis=1)
    if np.any(delta >= p):
        return math.inf
    return math.fsum(np.log(p / (p - delta)))


def certificate(sample, kernel, fit):
    md = MixtureDensity(fit.estimate, kernel)
    pts = np.concatenate([sample.sorted, probe_points(sample, kernel)])
    return float(np.max(gradient_function(md, sample, pts)))


def test_single_observation_is_point_mass(exp1):
    fit = fit_npmle(Sample([3.25]), exp1)
    assert fit.estimate.support.tolist() == [3.25]
    assert fit.estimate.weights.tolist() == [1.0]
    assert fit.converged


@pytest.mark.parametrize("kernel,method", [(KERNELS[0], "em"), (KERNELS[0], "cnm"), (KERNELS[1], "cnm")],
                         ids=["exp-em", "exp-cnm", "laplace-cnm"])
def test_certificate_and_dense_likelihood(kernel, method, two_point):
    s = simulate(two_point, kernel, 150, 11)
    fit = fit_npmle(s, kernel, NpmleConfig(method=method))
    assert fit.converged and fit.gradient_sup <= 1e-8
    assert certificate(s, kernel, fit) <= s.n * (1 + 1e-8)
    dense = log_likelihood(MixtureDensity(fit.estimate, kernel), s)
    assert fit.final_log_likelihood == pytest.approx(dense, rel=1e-11)


def test_em_and_cnm_agree(two_point):
    kernel = KERNELS[0]
    s = simulate(two_point, kernel, 120, 5)
    a = fit_npmle(s, kernel, NpmleConfig(method="em"))
    b = fit_npmle(s, kernel, CNM)
    assert a.final_log_likelihood == pytest.approx(b.final_log_likelihood, abs=1e-6)
    # same mixture density even if atoms are split differently
    xs = np.linspace(s.sorted[0], s.sorted[-1], 50)
    pa = MixtureDensity(a.estimate, kernel)(xs)
    pb = MixtureDensity(b.estimate, kernel)(xs)
    assert np.max(np.abs(pa - pb)) < 1e-3


@pytest.mark.parametrize("kernel", KERNELS, ids=["exp", "laplace"])
def test_trace_nondecreasing(kernel, two_point):
    for seed in range(5):
        s = simulate(two_point, kernel, 60, seed)
        for method in ("em", "cnm"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                t = fit_npmle(s, kernel, NpmleConfig(method=method, max_iterations=3000)).loglik_trace
            assert t.size >= 2
            assert np.all(np.diff(t) >= -1e-12 * np.abs(t[:-1]).clip(1.0))


def test_laplace_em_slow_but_agrees_with_cnm(lap1, two_point):
    # EM creeps towards the optimum; its likelihood never beats the certified CNM fit
    s = simulate(two_point, lap1, 60, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        em = fit_npmle(s, lap1, NpmleConfig(max_iterations=5000))
    cnm = fit_npmle(s, lap1, CNM)
    assert em.final_log_likelihood <= cnm.final_log_likelihood + 1e-9
    assert em.final_log_likelihood >= cnm.final_log_likelihood - 1e-2


@pytest.mark.parametrize("kernel", KERNELS, ids=["exp", "laplace"])
@pytest.mark.parametrize("seed", range(4))
def test_matches_bruteforce(kernel, seed, two_point):
    n = 2 + seed % 3
    s = simulate(two_point, kernel, n, 1000 + seed)
    fit = fit_npmle(s, kernel)
    oracle = npmle_bruteforce(s, kernel, 0.01)
    assert fit.final_log_likelihood >= oracle.final_log_likelihood - 1e-6
    assert fit.final_log_likelihood - oracle.final_log_likelihood <= lattice_slack(s, kernel, fit, 0.01) + 1e-12


def test_bruteforce_refuses_large(exp1):
    with pytest.raises(InstanceTooLarge):
        npmle_bruteforce(Sample(np.arange(6.0)), exp1)


def test_not_converged(exp1, two_point):
    s = simulate(two_point, exp1, 200, 1)
    cfg = NpmleConfig(max_iterations=2)
    with pytest.raises(NotConverged) as info:
        fit_npmle(s, exp1, cfg, raise_on_failure=True)
    assert not info.value.result.converged
    with pytest.warns(RuntimeWarning):
        res = fit_npmle(s, exp1, cfg)
    assert res.iterations == 2


def test_probe_layout(exp1):
    s = Sample([0.0, 1.0])
    p = probe_points(s, exp1)
    assert p.size == N_PROBES and p[0] == -2.0 and p[-1] == 3.0


def test_grid_candidates(exp1):
    s = Sample([0.0, 1.0, 2.0])
    c = candidate_support(s, exp1, NpmleConfig(candidate_support_mode="observations_plus_grid", grid_points=11))
    assert np.all(np.diff(c) > 0) and c[0] == -2.0 and set(s.sorted) <= set(c)
    fit = fit_npmle(s, exp1, NpmleConfig(candidate_support_mode="observations_plus_grid", grid_points=11))
    assert fit.converged


def test_exponential_atoms_below_minimum(exp1):
    # under one-sided noise every atom must lie at or below the smallest observation that uses it
    s = simulate(DiscreteDistribution([0, 2], [0.5, 0.5]), exp1, 100, 3)
    fit = fit_npmle(s, exp1, CNM)
    assert fit.estimate.support[0] <= s.sorted[0]


def test_separated_laplace_clusters(lap1):
    s = Sample(np.r_[np.full(5, -100.0), np.full(5, 100.0)])
    fit = fit_npmle(s, lap1)
    assert fit.estimate.cdf(0.0) == pytest.approx(0.5, abs=1e-9)


def test_underflow_safe(lap1):
    s = Sample([0.0, 1.0, 2000.0, 2001.0])
    fit = fit_npmle(s, lap1)
    assert fit.converged and math.isfinite(fit.final_log_likelihood)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=12, unique=True), st.floats(-50, 50),
       st.sampled_from(KERNELS))
def test_translation_equivariance(xs, c, kernel):
    a = fit_npmle(Sample(xs), kernel, CNM)
    b = fit_npmle(Sample(np.array(xs) + c), kernel, CNM)
    assert a.final_log_likelihood == pytest.approx(b.final_log_likelihood, abs=1e-6)
    assert a.estimate.mean + c == pytest.approx(b.estimate.mean, abs=1e-4)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.sampled_from(KERNELS))
def test_certificate_property(xs, kernel):
    s = Sample(xs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_npmle(s, kernel, CNM)
    if fit.converged:
        assert certificate(s, kernel, fit) <= s.n * (1 + 1e-8)
    assert len(fit.estimate) <= s.n


def test_result_json_keys(exp1):
    d = fit_npmle(Sample([1.0, 2.0]), exp1).to_dict()
    assert list(d) == ["support", "weights", "loglik", "gradient_sup", "iterations", "converged"]


def _pava_exponential_npmle(x):
    """Exact NPMLE for standard exponential noise.

    H(x) = e^x p(x) is nondecreasing with jumps only at the data, so the fit
    reduces to max sum log m_k subject to sum c_k m_k = 1, m nondecreasing,
    c_k = e^{-x_(k)} - e^{-x_(k+1)}: pool adjacent violators on |B| / sum_B c.
    """
    x = np.sort(x)
    n = x.size
    e = np.exp(-(x - x[0]))
    c = e - np.append(e[1:], 0.0)
    blocks = []
    for ck in c:
        blocks.append([1, ck])
        while len(blocks) > 1 and blocks[-2][0] / blocks[-2][1] > blocks[-1][0] / blocks[-1][1]:
            cnt, tot = blocks.pop()
            blocks[-1][0] += cnt
            blocks[-1][1] += tot
    m = np.concatenate([np.full(k, k / (n * s)) for k, s in blocks])
    w = e * np.diff(np.concatenate(([0.0], m)))
    return x, w


@pytest.mark.parametrize("n,seed", [(50, 1), (400, 2), (1600, 3)])
def test_cnm_matches_isotonic_oracle(n, seed, exp1, two_point):
    s = simulate(two_point, exp1, n, seed)
    x, w = _pava_exponential_npmle(s.observations)
    res = fit_npmle(s, exp1, NpmleConfig(method="cnm"))
    assert res.converged
    assert float(res.estimate.support @ res.estimate.weights) == pytest.approx(float(x @ w), abs=1e-8)
    oracle_ll = float(np.sum(np.log(np.cumsum(w * np.exp(x))[np.arange(n)]) - x))
    assert res.final_log_likelihood == pytest.approx(oracle_ll, abs=1e-8 * n)

import math

import numpy as np
import pytest

from mud.density_evolution import (
    DeParams,
    Population,
    de_ber,
    de_run,
    de_step,
    gexit_bp_mc,
    initial_population,
    max_sigmas,
    symmetry_test,
)
from mud.dense_limit import ber_dense, gexit_dense
from mud.ensemble import DegreeDistribution


def _params(**kw):
    defaults = dict(
        dist=DegreeDistribution.regular(4),
        alpha=1.0,
        sigma2=0.5,
        pop_size=20_000,
        seed=0,
    )
    defaults.update(kw)
    return DeParams(**defaults)


class TestPopulations:
    def test_initial_population(self):
        pop = initial_population(_params())
        assert pop.iteration == 0 and pop.kind == "variable"
        assert np.all(pop.samples == 0.0)

    def test_kind_validation(self):
        with pytest.raises(ValueError):
            Population(samples=np.zeros(3), iteration=0, kind="other")
        with pytest.raises(ValueError):
            Population(samples=np.array([np.inf]), iteration=0, kind="variable")
        with pytest.raises(ValueError):
            de_step(Population(samples=np.zeros(3), iteration=1, kind="function"), _params())

    def test_param_validation(self):
        with pytest.raises(ValueError):
            _params(sigma2=0.0)
        with pytest.raises(ValueError):
            _params(alpha=-0.1)
        with pytest.raises(ValueError):
            _params(pop_size=0)


class TestDeStep:
    def test_alpha_zero_closed_form(self):
        # no interference: u = 1/(sigma2 lbar) + s0 w / (sigma2 sqrt(lbar)),
        # i.e. N(m, m) with m = 1/(sigma2 lbar)
        p = _params(alpha=0.0, sigma2=0.5, pop_size=200_000)
        pop_u, _ = de_step(initial_population(p), p)
        m = 1.0 / (0.5 * 4.0)
        se = math.sqrt(m) / math.sqrt(p.pop_size)
        assert abs(pop_u.samples.mean() - m) < 4 * se
        assert abs(pop_u.samples.var() - m) / m < 0.02

    def test_iteration_counter_and_kinds(self):
        p = _params(pop_size=2000)
        traj = de_run(p, 3)
        for t, (pop_u, pop_v) in enumerate(traj, start=1):
            assert pop_u.iteration == t and pop_u.kind == "function"
            assert pop_v.iteration == t and pop_v.kind == "variable"
            assert len(pop_v.samples) == p.pop_size

    def test_deterministic(self):
        p = _params(pop_size=2000)
        a = de_run(p, 2)
        b = de_run(p, 2)
        for (ua, va), (ub, vb) in zip(a, b):
            assert np.array_equal(ua.samples, ub.samples)
            assert np.array_equal(va.samples, vb.samples)

    def test_variable_side_sums_residual_degree(self):
        # regular(1): residual degree 0, so v is identically zero forever
        p = _params(dist=DegreeDistribution.regular(1), pop_size=5000)
        pop_u, pop_v = de_step(initial_population(p), p)
        assert np.any(pop_u.samples != 0.0)
        assert np.all(pop_v.samples == 0.0)

    def test_cap_overflow_raises(self):
        # Poisson mean just below the degree cap: a visible fraction of draws
        # exceeds it and the step must abort rather than resample silently
        p = _params(
            dist=DegreeDistribution.regular(4),
            alpha=1000.0,
            pop_size=500,
        )
        with pytest.raises(RuntimeError, match="cap resample"):
            de_step(initial_population(p), p)

    def test_snr_improves_over_iterations(self):
        # at benign noise the message means must grow towards the fixed point
        p = _params(sigma2=0.3, alpha=1.0, pop_size=30_000, seed=2)
        traj = de_run(p, 4)
        means = [pop_v.samples.mean() for _, pop_v in traj]
        assert means[0] > 0
        assert all(b > a * 0.99 for a, b in zip(means, means[1:]))


class TestDeBer:
    def test_gaussian_population_matches_q_function(self):
        # hand-built symmetric Gaussian u-population, regular(1) node law:
        # BER = P(N(m, m) < 0) = ber_dense(m)
        m = 1.5
        rng = np.random.default_rng(5)
        pop_u = Population(
            samples=rng.normal(m, math.sqrt(m), 400_000), iteration=1, kind="function"
        )
        got = de_ber(pop_u, DegreeDistribution.regular(1), samples=400_000, seed=1)
        want = ber_dense(m)
        se = math.sqrt(want * (1 - want) / 400_000)
        assert abs(got - want) < 4 * se

    def test_zero_population_guesses(self):
        pop_u = Population(samples=np.zeros(1000), iteration=1, kind="function")
        assert de_ber(pop_u, DegreeDistribution.regular(3), samples=5000) == 0.5

    def test_requires_function_side(self):
        with pytest.raises(ValueError):
            de_ber(
                Population(samples=np.zeros(10), iteration=0, kind="variable"),
                DegreeDistribution.regular(2),
                samples=10,
            )


class TestSymmetry:
    def test_symmetric_gaussian_passes(self):
        # N(m, 2m) with 2m variance is NOT symmetric; N(m, m) is
        rng = np.random.default_rng(7)
        m = 1.0
        pop = Population(
            samples=rng.normal(m, math.sqrt(m), 200_000), iteration=1, kind="function"
        )
        report = symmetry_test(pop)
        assert max_sigmas(report) < 4.0

    def test_shifted_population_fails(self):
        rng = np.random.default_rng(8)
        pop = Population(
            samples=rng.normal(1.5, 1.0, 200_000), iteration=1, kind="function"
        )
        assert max_sigmas(symmetry_test(pop)) > 5.0

    def test_de_population_is_symmetric(self):
        p = _params(sigma2=0.5, alpha=1.0, pop_size=50_000, seed=3)
        traj = de_run(p, 2)
        _, pop_v = traj[-1]
        assert max_sigmas(symmetry_test(pop_v)) < 4.0


class TestGexitBpMc:
    def test_iteration_zero_matches_dense_limit(self):
        p = _params(
            dist=DegreeDistribution.regular(30), alpha=1.3, sigma2=0.25, pop_size=1000
        )
        est, se = gexit_bp_mc(initial_population(p), p, mc_samples=20_000, seed=1)
        want = gexit_dense(0.0, 0.25, 1.3)
        assert abs(est - want) < max(3 * se, 0.02 * want)

    def test_perfect_knowledge_gives_zero(self):
        # v -> +inf (clamped): interferers fully known, <T> = sum s_i exactly,
        # so k - <T>^2 averages to k - E[T^2] with T = sum of known signs; with
        # all interference resolved the GEXIT value collapses towards the
        # single-user one, far below the uninformed value
        p = _params(dist=DegreeDistribution.regular(4), alpha=1.0, sigma2=0.5, pop_size=100)
        pop_hi = Population(samples=np.full(100, 30.0), iteration=1, kind="variable")
        hi, se_hi = gexit_bp_mc(pop_hi, p, mc_samples=5000, seed=2)
        lo, se_lo = gexit_bp_mc(initial_population(p), p, mc_samples=5000, seed=2)
        assert hi < 0.2 * lo
        assert abs(hi) < 5 * se_hi + 1e-6

    def test_requires_variable_side_and_positive_alpha(self):
        p = _params()
        with pytest.raises(ValueError):
            gexit_bp_mc(
                Population(samples=np.zeros(10), iteration=1, kind="function"), p, 10
            )
        p0 = _params(alpha=0.0)
        with pytest.raises(ValueError):
            gexit_bp_mc(initial_population(p0), p0, 10)

    def test_deterministic(self):
        p = _params(pop_size=500)
        pop = initial_population(p)
        assert gexit_bp_mc(pop, p, 2000, seed=9) == gexit_bp_mc(pop, p, 2000, seed=9)

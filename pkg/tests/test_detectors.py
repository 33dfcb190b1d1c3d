import itertools
import math

import numpy as np
import pytest

from mud import detectors
from mud.detectors import (
    InvariantViolation,
    ber_monte_carlo,
    bp_detect,
    bp_detect_multi,
    chip_message,
    chip_messages_batch,
    decide,
    log_interference_coeffs,
    log_interference_coeffs_batch,
    log_posterior_batch,
    map_exact,
    matched_filter,
)
from mud.ensemble import (
    DegreeDistribution,
    SparseSignatureMatrix,
    generate_signatures,
    transmit,
)


def enum_chip_message(v_list, s_list, s0, y, sigma2, lbar):
    """O(2^k) direct-summation oracle for the chip update."""
    v = np.asarray(v_list, float)
    s = np.asarray(s_list, float)
    k = v.size
    w = {+1: 0.0, -1: 0.0}
    for xi in itertools.product((1, -1), repeat=k):
        xi = np.array(xi, float)
        prior = math.exp(float(np.dot(v, xi)))
        for x0 in (+1, -1):
            mean = (x0 * s0 + float(np.dot(s, xi))) / math.sqrt(lbar)
            w[x0] += prior * math.exp(-((y - mean) ** 2) / (2 * sigma2))
    return 0.5 * math.log(w[+1] / w[-1])


def is_forest(sig: SparseSignatureMatrix) -> bool:
    """Union-find acyclicity check on the user/chip bipartite graph."""
    parent = list(range(sig.n_users + sig.n_chips))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, nbrs in enumerate(sig.user_neighbors):
        for a in nbrs:
            ru, rc = find(i), find(sig.n_users + int(a))
            if ru == rc:
                return False
            parent[ru] = rc
    return True


class TestChipMessage:
    def test_matches_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(0, 9))
            v = rng.normal(0, 2, k)
            s = rng.choice([-1, 1], k)
            s0 = int(rng.choice([-1, 1]))
            y = float(rng.normal(0, 2))
            sigma2 = float(rng.uniform(0.1, 2.0))
            lbar = float(rng.uniform(1.0, 8.0))
            got = chip_message(v, s, s0, y, sigma2, lbar)
            want = enum_chip_message(v, s, s0, y, sigma2, lbar)
            assert got == pytest.approx(want, abs=1e-12)

    def test_degree_zero_closed_form(self):
        # no interferers: u = s0 * y / (sigma2 * sqrt(lbar))
        got = chip_message([], [], 1, 0.7, 0.5, 4.0)
        assert got == pytest.approx(0.7 / (0.5 * math.sqrt(4.0)))
        got = chip_message([], [], -1, 0.7, 0.5, 4.0)
        assert got == pytest.approx(-0.7 / (0.5 * math.sqrt(4.0)))

    def test_clamped(self):
        got = chip_message([], [], 1, 100.0, 0.01, 1.0)
        assert got == detectors.MSG_CLAMP

    def test_antisymmetric_in_y_at_zero_priors(self):
        v = np.zeros(3)
        s = np.array([1, -1, 1])
        a = chip_message(v, s, 1, 1.3, 0.4, 3.0)
        b = chip_message(v, s, 1, -1.3, 0.4, 3.0)
        assert a == pytest.approx(-b, abs=1e-12)

    def test_gauge_symmetry(self):
        # flipping an interferer's sign and prior together leaves u unchanged
        rng = np.random.default_rng(1)
        for _ in range(50):
            k = int(rng.integers(1, 7))
            v = rng.normal(0, 1.5, k)
            s = rng.choice([-1, 1], k)
            y = float(rng.normal(0, 1))
            base = chip_message(v, s, 1, y, 0.5, 3.0)
            flip = rng.integers(0, 2, k) * 2 - 1
            assert chip_message(v * flip, s * flip, 1, y, 0.5, 3.0) == pytest.approx(
                base, abs=1e-12
            )

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            chip_message([0.1], [], 1, 0.0, 1.0, 1.0)

    def test_degree_cap(self):
        with pytest.raises(ValueError):
            chip_message(np.zeros(5), np.ones(5), 1, 0.0, 1.0, 1.0, max_degree=4)


class TestInterferenceCoeffs:
    def test_zero_weights_binomial(self):
        logc = log_interference_coeffs(np.zeros(5))
        want = np.log([math.comb(5, j) for j in range(6)])
        assert np.allclose(logc, want, atol=1e-12)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(2)
        a = rng.normal(0, 3, (20, 6))
        batch = log_interference_coeffs_batch(a)
        for row, got in zip(a, batch):
            assert np.allclose(got, log_interference_coeffs(row), atol=1e-10)

    def test_batch_extreme_weights_stable(self):
        a = np.array([[25.0, -25.0, 25.0, -25.0]])
        got = log_interference_coeffs_batch(a)[0]
        want = log_interference_coeffs(a[0])
        assert np.allclose(got, want, atol=1e-8)

    def test_batch_chip_messages_match_scalar(self):
        rng = np.random.default_rng(3)
        k = 5
        a = rng.normal(0, 2, (30, k))
        s0 = rng.choice([-1, 1], 30)
        y = rng.normal(0, 1.5, 30)
        got = chip_messages_batch(a, s0, y, 0.4, 3.0)
        for m in range(30):
            # gauge a_i = v_i s_i with all s_i = +1
            want = chip_message(a[m], np.ones(k), int(s0[m]), float(y[m]), 0.4, 3.0)
            assert got[m] == pytest.approx(want, abs=1e-10)


class TestExactPosterior:
    def test_matches_direct_enumeration(self):
        rng = np.random.default_rng(4)
        B, N, K = 8, 5, 4
        S = rng.normal(0, 1, (B, N, K))
        y = rng.normal(0, 1, (B, N))
        marg, log_z, log_pp = log_posterior_batch(S, y, 0.7)
        for b in range(B):
            ws = {}
            for xi in itertools.product((1, -1), repeat=K):
                x = np.array(xi, float)
                ws[xi] = math.exp(-float(((y[b] - S[b] @ x) ** 2).sum()) / (2 * 0.7))
            z = sum(ws.values())
            for i in range(K):
                want = sum(w * xi[i] for xi, w in ws.items()) / z
                assert marg[b, i] == pytest.approx(want, abs=1e-10)
            assert log_z[b] == pytest.approx(math.log(z), abs=1e-10)
            assert log_pp[b] == pytest.approx(math.log(ws[(1,) * K] / z), abs=1e-10)

    def test_rejects_large_k(self):
        with pytest.raises(ValueError):
            log_posterior_batch(np.zeros((1, 2, 21)), np.zeros((1, 2)), 1.0)


class TestBp:
    def test_single_user_closed_form_and_map(self):
        d = DegreeDistribution.regular(3)
        sig = generate_signatures(6, 1, d, seed=0)
        inst = transmit(sig, sigma2=0.5, seed=1)
        bp, _ = bp_detect(inst, 2)
        oracle = map_exact(inst)
        assert bp.marginals[0] == pytest.approx(oracle.marginals[0], abs=1e-12)
        # closed form: each chip contributes s0 * y / (sigma2 * sqrt(lbar))
        tot = sum(
            int(s) * inst.y[int(a)] / (0.5 * math.sqrt(3.0))
            for a, s in zip(sig.user_neighbors[0], sig.signs[0])
        )
        assert bp.marginals[0] == pytest.approx(math.tanh(tot), abs=1e-12)

    def test_exact_on_trees(self):
        d = DegreeDistribution.from_probs({1: 0.5, 2: 0.5})
        found = 0
        seed = 0
        while found < 20:
            seed += 1
            sig = generate_signatures(7, 5, d, seed=seed)
            if not is_forest(sig):
                continue
            found += 1
            inst = transmit(sig, sigma2=0.6, seed=seed + 1000)
            bp, _ = bp_detect(inst, 12)  # diameter bound for 12 vertices
            oracle = map_exact(inst)
            assert np.allclose(bp.marginals, oracle.marginals, atol=1e-10)

    def test_iteration_zero_is_uninformative(self):
        d = DegreeDistribution.regular(2)
        sig = generate_signatures(6, 4, d, seed=3)
        inst = transmit(sig, sigma2=0.5, seed=4)
        bp, msgs = bp_detect(inst, 0)
        assert np.all(bp.marginals == 0.0)
        assert np.all(bp.decisions == 1)  # tie rule sign(0) := +1
        assert msgs.iteration == 0

    def test_multi_snapshot_consistency(self):
        d = DegreeDistribution.regular(3)
        sig = generate_signatures(10, 6, d, seed=5)
        inst = transmit(sig, sigma2=0.4, seed=6)
        multi = bp_detect_multi(inst, [1, 3, 5])
        for t in (1, 3, 5):
            single, _ = bp_detect(inst, t)
            assert np.allclose(multi[t][0].marginals, single.marginals, atol=0)

    def test_deterministic(self):
        d = DegreeDistribution.poisson(3.0)
        sig = generate_signatures(30, 8, d, seed=7)
        inst = transmit(sig, sigma2=0.5, seed=8)
        a, _ = bp_detect(inst, 6)
        b, _ = bp_detect(inst, 6)
        assert np.array_equal(a.marginals, b.marginals)

    def test_negative_t_rejected(self):
        d = DegreeDistribution.regular(2)
        sig = generate_signatures(4, 2, d, seed=0)
        inst = transmit(sig, sigma2=1.0, seed=0)
        with pytest.raises(ValueError):
            bp_detect(inst, -1)


class TestDecisionsAndBaselines:
    def test_decide_tie_rule(self):
        assert np.array_equal(decide(np.array([-0.2, 0.0, 0.3])), [-1, 1, 1])

    def test_matched_filter_hand_example(self):
        # two users, two chips; user 0 on chip 0 with +, user 1 on both chips
        sig = SparseSignatureMatrix(
            n_chips=2,
            n_users=2,
            user_neighbors=(np.array([0]), np.array([0, 1])),
            signs=(np.array([1]), np.array([1, -1])),
            scale=1.0,
        )
        inst = transmit(sig, sigma2=1.0, x=np.array([1.0, 1.0]), noise=np.array([0.5, -0.25]))
        # y = (1+1+0.5, -1-0.25) = (2.5, -1.25)
        res = matched_filter(inst)
        assert res.marginals[0] == pytest.approx(math.tanh(2.5))
        assert res.marginals[1] == pytest.approx(math.tanh(2.5 + 1.25))
        assert np.array_equal(res.decisions, [1, 1])

    def test_map_log_z_and_input_prob(self):
        d = DegreeDistribution.regular(2)
        sig = generate_signatures(5, 3, d, seed=9)
        inst = transmit(sig, sigma2=0.8, seed=10)
        res = map_exact(inst)
        assert res.log_p_input <= 0.0
        assert np.isfinite(res.log_z)

    def test_marginal_invariant(self):
        with pytest.raises(InvariantViolation):
            detectors.DetectionResult(
                marginals=np.array([1.5]), decisions=np.array([1]), method="x"
            )


class TestBerMonteCarlo:
    def test_deterministic_given_seed(self):
        d = DegreeDistribution.regular(2)
        a = ber_monte_carlo("bp", 8, 6, d, 0.5, 4, 40, seed=11)
        b = ber_monte_carlo("bp", 8, 6, d, 0.5, 4, 40, seed=11)
        assert a == b

    def test_map_beats_matched_filter(self):
        d = DegreeDistribution.regular(3)
        kw = dict(n_chips=8, n_users=8, dist=d, sigma2=0.5, t_max=0, trials=400, seed=12)
        ber_map, se_map = ber_monte_carlo("map", **kw)
        ber_mf, se_mf = ber_monte_carlo("mf", **kw)
        assert ber_map <= ber_mf + 3 * math.hypot(se_map, se_mf)

    def test_low_noise_low_ber(self):
        d = DegreeDistribution.regular(3)
        ber, _ = ber_monte_carlo("bp", 12, 8, d, 0.05, 8, 100, seed=13)
        assert ber < 0.02

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            ber_monte_carlo("zf", 4, 2, DegreeDistribution.regular(2), 1.0, 1, 1, 0)

    def test_degree_zero_counts_half(self):
        d = DegreeDistribution.from_probs({0: 0.5, 2: 0.5})
        # with essentially no noise, all connected users decode; degree-0 users
        # contribute exactly 1/2, so BER ~ P(deg 0)/2 = 0.25
        ber, se = ber_monte_carlo("bp", 10, 10, d, 1e-4, 6, 200, seed=14)
        assert abs(ber - 0.25) < 5 * max(se, 1e-3)

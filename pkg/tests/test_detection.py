# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
import itertools
import math
import unittest
from unittest import TestCase

import numpy as np
from hypothesis import given, settings, strategies as st

from cloudcluster.detection import *

W1 = math.log(3.5)
W0 = math.log(8.0 / 3.0)


def homogeneous_cluster(n, p_fa=0.2, p_md=0.3, p_com=0.0, gamma=None):
    return ClusterSpec([SensorSpec(p_fa, p_md, p_com)] * n, gamma)


def random_cluster(rng, n, p_com=None, gamma=None):
    sensors = [SensorSpec(rng.uniform(0.05, 0.45), rng.uniform(0.05, 0.45),
                          rng.uniform(0.0, 1.0) if p_com is None else p_com) for _ in range(n)]
    cluster = ClusterSpec(sensors)
    if gamma is None:
        gamma = rng.uniform(cluster.l_min, cluster.l_max)
    return cluster.with_gamma(gamma)


## Independent oracle: walk every (tau, z) pair of the fusion center.
def brute_force_fc(system, cluster_errors):
    n = system.cluster_count
    p_coms = system.com_probs
    weights = [cluster_weights(p) for p in cluster_errors]
    p_fa = p_md = total = 0.0
    for tau in itertools.product((0, 1), repeat=n):
        p_tau = np.prod([p if t else 1.0 - p for t, p in zip(tau, p_coms)])
        total += p_tau
        talking = [j for j in range(n) if tau[j]]
        for z in itertools.product((0, 1), repeat=len(talking)):
            stat, like_h0, like_h1 = 0.0, 1.0, 1.0
            for j, zj in zip(talking, z):
                pair = cluster_errors[j]
                stat += weights[j].w1 if zj else -weights[j].w0
                like_h0 *= pair.p_fa if zj else 1.0 - pair.p_fa
                like_h1 *= 1.0 - pair.p_md if zj else pair.p_md
            if stat >= system.gamma:
                p_fa += p_tau * like_h0
            else:
                p_md += p_tau * like_h1
    return p_fa, p_md, total


class TestFusionWeights(TestCase):
    def test_reference_sensor(self):
        weights = fusion_weights(0.2, 0.3)
        self.assertAlmostEqual(weights.w1, 1.252763, places=6)
        self.assertAlmostEqual(weights.w0, 0.980829, places=6)

    def test_symmetric_sensor(self):
        weights = fusion_weights(0.15, 0.15)
        self.assertEqual(weights.w1, weights.w0)

    def test_near_uninformative_sensor(self):
        weights = fusion_weights(0.4999, 0.4999)
        self.assertAlmostEqual(weights.w1, math.log(0.5001 / 0.4999), places=12)
        self.assertAlmostEqual(weights.w1, 4.0e-4, places=7)

    def test_rejects_out_of_range(self):
        for p_fa, p_md in [(0.0, 0.2), (0.2, 0.5), (0.6, 0.1), (-0.1, 0.2)]:
            with self.assertRaises(InvalidSensorSpec):
                fusion_weights(p_fa, p_md)

    def test_sensor_spec_validates(self):
        with self.assertRaises(InvalidSensorSpec):
            SensorSpec(0.2, 0.3, 1.5)
        with self.assertRaises(InvalidSensorSpec):
            SensorSpec(0.5, 0.3)


class TestClusterSpec(TestCase):
    def test_range(self):
        cluster = homogeneous_cluster(3)
        self.assertAlmostEqual(cluster.l_min, -3 * W0)
        self.assertAlmostEqual(cluster.l_max, 3 * W1)
        self.assertAlmostEqual(cluster.gamma, 1.5 * (W1 - W0))

    def test_empty_cluster(self):
        with self.assertRaises(InvalidClusterSpec):
            ClusterSpec([])

    def test_threshold_outside_range(self):
        with self.assertRaises(InvalidClusterSpec):
            homogeneous_cluster(2, gamma=10.0)

    def test_homogeneity_is_bitwise(self):
        self.assertTrue(homogeneous_cluster(4).is_homogeneous)
        cluster = ClusterSpec([SensorSpec(0.2, 0.3), SensorSpec(0.2 + 1e-15, 0.3)])
        self.assertFalse(cluster.is_homogeneous)

    def test_system_threshold(self):
        system = SystemSpec([homogeneous_cluster(2)], 0.4, 150.0, 100.0)
        self.assertAlmostEqual(system.gamma, math.log(2.25))
        self.assertAlmostEqual(system.p0, 0.6)

    def test_invalid_system(self):
        with self.assertRaises(InvalidSystemSpec):
            SystemSpec([homogeneous_cluster(2)], 1.0, 150.0, 100.0)
        with self.assertRaises(InvalidSystemSpec):
            SystemSpec([homogeneous_cluster(2)], 0.4, 0.0, 100.0)
        with self.assertRaises(InvalidSystemSpec):
            SystemSpec([], 0.4, 150.0, 100.0)


class TestClusterComProb(TestCase):
    def test_two_half_links(self):
        self.assertAlmostEqual(cluster_com_prob(homogeneous_cluster(2, p_com=0.5)), 0.75)

    def test_no_links(self):
        self.assertEqual(cluster_com_prob(homogeneous_cluster(7, p_com=0.0)), 0.0)

    def test_fifty_sensors(self):
        self.assertAlmostEqual(cluster_com_prob(homogeneous_cluster(50, p_com=0.1)), 1 - 0.9 ** 50, places=12)
        self.assertAlmostEqual(cluster_com_prob(homogeneous_cluster(50, p_com=0.1)), 0.99485, places=5)

    def test_adding_a_sensor_increases(self):
        sensors = [SensorSpec(0.2, 0.3, 0.3), SensorSpec(0.1, 0.2, 0.05)]
        before = cluster_com_prob(ClusterSpec(sensors))
        after = cluster_com_prob(ClusterSpec(sensors + [SensorSpec(0.2, 0.2, 0.01)]))
        self.assertGreater(after, before)


class TestClusterDecide(TestCase):
    def test_all_ones_at_upper_end(self):
        cluster = homogeneous_cluster(3)
        self.assertEqual(cluster_decide([1, 1, 1], cluster.with_gamma(cluster.l_max)), 1)

    def test_all_zeros(self):
        cluster = homogeneous_cluster(3)
        self.assertEqual(cluster_decide([0, 0, 0], cluster.with_gamma(cluster.l_min + 1e-6)), 0)

    def test_mixed_pair(self):
        cluster = homogeneous_cluster(2, gamma=1.0)
        self.assertAlmostEqual(float(cluster_statistic([1, 0], cluster)), 0.271934, places=6)
        self.assertEqual(cluster_decide([1, 0], cluster), 0)

    def test_length_mismatch(self):
        with self.assertRaises(MalformedMeasurement):
            cluster_decide([1, 0, 1], homogeneous_cluster(2))

    def test_non_binary(self):
        with self.assertRaises(ValueError):
            cluster_decide([1, 2], homogeneous_cluster(2))

    def test_stacked_statistic(self):
        cluster = homogeneous_cluster(2)
        stats = cluster_statistic(np.array([[1, 1], [0, 0]]), cluster)
        np.testing.assert_allclose(stats, [2 * W1, -2 * W0])


class TestClusterErrorProbs(TestCase):
    def test_single_sensor_pass_through(self):
        errors = cluster_error_probs_exact(homogeneous_cluster(1, gamma=0.0))
        self.assertAlmostEqual(errors.p_fa, 0.2, places=12)
        self.assertAlmostEqual(errors.p_md, 0.3, places=12)

    def test_pair(self):
        errors = cluster_error_probs_enumerated(homogeneous_cluster(2, gamma=1.0))
        self.assertAlmostEqual(errors.p_fa, 0.04, places=12)
        self.assertAlmostEqual(errors.p_md, 0.51, places=12)

    def test_majority_triple(self):
        cluster = homogeneous_cluster(3)
        gamma = 1.5 * (W1 + W0) - 3 * W0
        errors = cluster_error_probs_exact(cluster.with_gamma(gamma))
        self.assertAlmostEqual(errors.p_fa, 0.104, places=12)
        self.assertAlmostEqual(errors.p_md, 0.216, places=12)

    def test_cap(self):
        rng = np.random.default_rng(3)
        cluster = random_cluster(rng, 6)
        with self.assertRaises(EnumerationCapExceeded):
            cluster_error_probs_exact(cluster, cap=5)

    def test_homogeneous_ignores_cap(self):
        errors = cluster_error_probs_exact(homogeneous_cluster(200), cap=20)
        self.assertEqual(errors.method, Method.EXACT)

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(st.integers(1, 12), st.floats(0.01, 0.49), st.floats(0.01, 0.49), st.floats(0.0, 1.0))
    def test_binomial_matches_enumeration(self, n, p_fa, p_md, u):
        cluster = homogeneous_cluster(n, p_fa, p_md)
        cluster = cluster.with_gamma(cluster.l_min + u * (cluster.l_max - cluster.l_min))
        binomial = cluster_error_probs_binomial(cluster)
        enumerated = cluster_error_probs_enumerated(cluster)
        self.assertAlmostEqual(binomial.p_fa, enumerated.p_fa, delta=1e-12)
        self.assertAlmostEqual(binomial.p_md, enumerated.p_md, delta=1e-12)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(11)
        cluster = random_cluster(rng, 8)
        gammas = np.linspace(cluster.l_min, cluster.l_max, 400)
        p_fa, p_md = cluster_error_curve(cluster, gammas)
        self.assertTrue(np.all(np.diff(p_fa) <= 1e-15))
        self.assertTrue(np.all(np.diff(p_md) >= -1e-15))

    def test_curve_matches_pointwise(self):
        rng = np.random.default_rng(5)
        cluster = random_cluster(rng, 7)
        gammas = np.linspace(cluster.l_min, cluster.l_max, 50)
        p_fa, p_md = cluster_error_curve(cluster, gammas)
        for g, a, b in zip(gammas, p_fa, p_md):
            pair = cluster_error_probs_exact(cluster.with_gamma(g))
            self.assertAlmostEqual(a, pair.p_fa, delta=1e-12)
            self.assertAlmostEqual(b, pair.p_md, delta=1e-12)


class TestFusionCenter(TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(17)

    def test_pass_through(self):
        cluster = homogeneous_cluster(1, p_com=1.0)
        system = SystemSpec([cluster], 0.4, 150.0, 100.0)
        pair = ErrorPair(0.2, 0.3)
        errors = fc_error_probs_exact(system, [pair])
        self.assertAlmostEqual(errors.p_fa, 0.2, places=12)
        self.assertAlmostEqual(errors.p_md, 0.3, places=12)

    def test_disconnected(self):
        system = SystemSpec([homogeneous_cluster(3, p_com=0.0)], 0.4, 150.0, 100.0)
        errors = fc_error_probs_exact(system, [ErrorPair(0.1, 0.2)])
        self.assertEqual(errors.p_fa, 0.0)
        self.assertEqual(errors.p_md, 1.0)

    def test_two_identical_clusters(self):
        cluster = ClusterSpec([SensorSpec(0.2, 0.3, 0.5)])
        system = SystemSpec([cluster, cluster], 0.5, 100.0, 100.0)
        self.assertEqual(system.gamma, 0.0)
        pairs = [ErrorPair(0.1, 0.2)] * 2
        errors = fc_error_probs_exact(system, pairs)
        p_fa, p_md, _ = brute_force_fc(system, pairs)
        self.assertAlmostEqual(errors.p_fa, p_fa, delta=1e-12)
        self.assertAlmostEqual(errors.p_md, p_md, delta=1e-12)

    def test_cap(self):
        clusters = [random_cluster(self.rng, 2) for _ in range(4)]
        system = SystemSpec(clusters, 0.4, 150.0, 100.0)
        pairs = [cluster_error_probs_exact(c) for c in clusters]
        with self.assertRaises(EnumerationCapExceeded):
            fc_error_probs_exact(system, pairs, cap=3)

    def test_wrong_number_of_pairs(self):
        system = SystemSpec([homogeneous_cluster(2)] * 2, 0.4, 150.0, 100.0)
        with self.assertRaises(MalformedMeasurement):
            fc_error_probs_exact(system, [ErrorPair(0.1, 0.1)])

    @settings(max_examples=40, deadline=None, derandomize=True)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        clusters = [random_cluster(rng, int(rng.integers(1, 5))) for _ in range(int(rng.integers(1, 6)))]
        system = SystemSpec(clusters, rng.uniform(0.1, 0.9), rng.uniform(1, 200), rng.uniform(1, 200))
        pairs = [cluster_error_probs_exact(c) for c in clusters]
        errors = fc_error_probs_exact(system, pairs)
        p_fa, p_md, total = brute_force_fc(system, pairs)
        self.assertAlmostEqual(total, 1.0, delta=1e-12)
        self.assertAlmostEqual(errors.p_fa, p_fa, delta=1e-12)
        self.assertAlmostEqual(errors.p_md, p_md, delta=1e-12)

    def test_realization_weighted_sum(self):
        clusters = [random_cluster(self.rng, 3) for _ in range(4)]
        system = SystemSpec(clusters, 0.4, 150.0, 100.0)
        pairs = [cluster_error_probs_exact(c) for c in clusters]
        p_fa = p_md = total = 0.0
        for tau in itertools.product((0, 1), repeat=4):
            p_tau = realization_probability(tau, system.com_probs)
            given_tau = fc_error_probs_given_tau(system, pairs, tau)
            total += p_tau
            p_fa += p_tau * given_tau.p_fa
            p_md += p_tau * given_tau.p_md
        errors = fc_error_probs_exact(system, pairs)
        self.assertAlmostEqual(total, 1.0, delta=1e-12)
        self.assertAlmostEqual(errors.p_fa, p_fa, delta=1e-12)
        self.assertAlmostEqual(errors.p_md, p_md, delta=1e-12)

    def test_exchangeable_matches_realization_sum(self):
        cluster = homogeneous_cluster(3, p_com=0.2)
        system = SystemSpec([cluster] * 5, 0.4, 150.0, 100.0)
        pairs = [cluster_error_probs_exact(cluster)] * 5
        p_fa = p_md = 0.0
        for tau in itertools.product((0, 1), repeat=5):
            p_tau = realization_probability(tau, system.com_probs)
            given_tau = fc_error_probs_given_tau(system, pairs, tau)
            p_fa += p_tau * given_tau.p_fa
            p_md += p_tau * given_tau.p_md
        errors = fc_error_probs_exact(system, pairs, cap=0)
        self.assertAlmostEqual(errors.p_fa, p_fa, delta=1e-12)
        self.assertAlmostEqual(errors.p_md, p_md, delta=1e-12)

    def test_silent_fc_statistic_is_zero(self):
        pairs = [ErrorPair(0.1, 0.2), ErrorPair(0.3, 0.1)]
        self.assertEqual(float(fc_statistic([0, 0], [1, 0], pairs)), 0.0)

    def test_likelihood_ratio_rule_agrees(self):
        for _ in range(10):
            clusters = [random_cluster(self.rng, 2) for _ in range(4)]
            system = SystemSpec(clusters, self.rng.uniform(0.1, 0.9), 150.0, 100.0)
            pairs = [cluster_error_probs_exact(c) for c in clusters]
            for tau in itertools.product((0, 1), repeat=4):
                for z in itertools.product((0, 1), repeat=4):
                    z = tuple(zj if t else 0 for zj, t in zip(z, tau))
                    self.assertEqual(fc_decide(tau, z, system, pairs),
                                     likelihood_ratio_decide(tau, z, system, pairs))


class TestExpectedLoss(TestCase):
    def setUp(self) -> None:
        self.system = SystemSpec([homogeneous_cluster(2)], 0.4, 150.0, 100.0)

    def test_reference_values(self):
        self.assertAlmostEqual(expected_loss(self.system, ErrorPair(0.1, 0.2)), 17.0, places=12)

    def test_perfect_detector(self):
        self.assertEqual(expected_loss(self.system, ErrorPair(0.0, 0.0)), 0.0)

    def test_always_wrong(self):
        self.assertAlmostEqual(expected_loss(self.system, ErrorPair(1.0, 1.0)), 0.6 * 150 + 0.4 * 100)


if __name__ == '__main__':
    unittest.main()

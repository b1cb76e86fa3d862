# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.stats import binom

__all__ = [
    "CLUSTER_ENUMERATION_CAP", "FC_ENUMERATION_CAP", "TIE_TOLERANCE", "LOG_SPACE_SIZE",
    "Method", "SensorSpec", "FusionWeights", "ClusterSpec", "SystemSpec", "ErrorPair",
    "InvalidSensorSpec", "InvalidClusterSpec", "InvalidSystemSpec", "MalformedMeasurement",
    "EnumerationCapExceeded",
    "fusion_weights", "cluster_weights", "cluster_com_prob", "decides_h1",
    "cluster_statistic", "cluster_decide", "cluster_error_probs_enumerated",
    "cluster_error_probs_binomial", "cluster_error_probs_exact", "cluster_error_curve",
    "realization_probability", "fc_statistic", "fc_decide", "likelihood_ratio_decide",
    "fc_error_probs_given_tau", "fc_error_probs_exact", "expected_loss",
]

CLUSTER_ENUMERATION_CAP = 20
FC_ENUMERATION_CAP = 10

## Relative slack used when comparing a statistic with its threshold.
# Every decision path (enumeration, binomial, exchangeability, simulation)
# goes through decides_h1() so floating point ties resolve identically.
TIE_TOLERANCE = 1e-12

## Pattern probabilities are accumulated in log space above this cluster size.
LOG_SPACE_SIZE = 30

_PATTERN_CHUNK = 1 << 16


class Method(str, Enum):
    EXACT = "exact"
    BENNETT = "bennett"
    MONTE_CARLO = "monte_carlo"


## Exception indicating a sensor whose error probabilities are not in (0, 0.5)
# or whose communication probability is not in [0, 1].
class InvalidSensorSpec(Exception):
    def __init__(self, p_fa, p_md, p_com=None):
        self.p_fa, self.p_md, self.p_com = p_fa, p_md, p_com

    def __str__(self):
        return "Invalid sensor specification: p_fa=" + str(self.p_fa) \
               + ", p_md=" + str(self.p_md) + ", p_com=" + str(self.p_com) + "\n" \
               "Sensor error probabilities must lie in (0, 0.5) and p_com in [0, 1]."


class InvalidClusterSpec(Exception):
    def __init__(self, reason):
        self.reason = reason

    def __str__(self):
        return "Invalid cluster specification: " + self.reason


class InvalidSystemSpec(Exception):
    def __init__(self, reason):
        self.reason = reason

    def __str__(self):
        return "Invalid system specification: " + self.reason


## Exception indicating a measurement vector whose length does not match the
# number of sensors (or clusters) it is evaluated against.
class MalformedMeasurement(Exception):
    def __init__(self, expected, received):
        self.expected = expected
        self.received = received

    def __str__(self):
        return "Malformed measurement vector: expected " + str(self.expected) \
               + " entries, received " + str(self.received)


## Exception raised when exhaustive enumeration would exceed its cap.
# Callers should fall back to the concentration bounds instead.
class EnumerationCapExceeded(Exception):
    def __init__(self, size, cap, level):
        self.size = size
        self.cap = cap
        self.level = level

    def __str__(self):
        return "Exact " + self.level + " computation requested for size " + str(self.size) \
               + " but the enumeration cap is " + str(self.cap) + ". Use the bound instead."


@dataclass(frozen=True)
class FusionWeights:
    w1: float
    w0: float


## Per-sensor noise and connectivity.
# p_fa = Pr(y=1 | H0), p_md = Pr(y=0 | H1), p_com = Pr(sensor reaches the FC).
@dataclass(frozen=True)
class SensorSpec:
    p_fa: float
    p_md: float
    p_com: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.p_fa < 0.5 and 0.0 < self.p_md < 0.5) or not 0.0 <= self.p_com <= 1.0:
            raise InvalidSensorSpec(self.p_fa, self.p_md, self.p_com)

    @property
    def weights(self) -> FusionWeights:
        return fusion_weights(self.p_fa, self.p_md)


## A cluster fuses its members' bits with a weighted likelihood ratio test.
# If no threshold is given the midpoint of [l_min, l_max] is used.
@dataclass(frozen=True)
class ClusterSpec:
    sensors: tuple
    gamma: float = None

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if not self.sensors:
            raise InvalidClusterSpec("a cluster needs at least one sensor")
        if self.gamma is None:
            object.__setattr__(self, "gamma", 0.5 * (self.l_min + self.l_max))
        slack = TIE_TOLERANCE * max(1.0, abs(self.l_min), abs(self.l_max))
        if not self.l_min - slack <= self.gamma <= self.l_max + slack:
            raise InvalidClusterSpec("threshold " + str(self.gamma) + " outside ["
                                     + str(self.l_min) + ", " + str(self.l_max) + "]")

    def __len__(self) -> int:
        return len(self.sensors)

    @property
    def size(self) -> int:
        return len(self.sensors)

    @cached_property
    def w1(self) -> np.ndarray:
        return np.array([s.weights.w1 for s in self.sensors])

    @cached_property
    def w0(self) -> np.ndarray:
        return np.array([s.weights.w0 for s in self.sensors])

    @cached_property
    def p_fa(self) -> np.ndarray:
        return np.array([s.p_fa for s in self.sensors])

    @cached_property
    def p_md(self) -> np.ndarray:
        return np.array([s.p_md for s in self.sensors])

    @cached_property
    def p_com(self) -> np.ndarray:
        return np.array([s.p_com for s in self.sensors])

    @cached_property
    def l_min(self) -> float:
        return -float(np.sum(self.w0))

    @cached_property
    def l_max(self) -> float:
        return float(np.sum(self.w1))

    ## Homogeneous means every member has bitwise equal (p_fa, p_md).
    @cached_property
    def is_homogeneous(self) -> bool:
        first = self.sensors[0]
        return all(s.p_fa == first.p_fa and s.p_md == first.p_md for s in self.sensors)

    @property
    def com_prob(self) -> float:
        return cluster_com_prob(self)

    def with_gamma(self, gamma: float) -> "ClusterSpec":
        return replace(self, gamma=float(gamma))


@dataclass(frozen=True)
class SystemSpec:
    clusters: tuple
    p1: float
    loss_fa: float
    loss_md: float

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if not self.clusters:
            raise InvalidSystemSpec("a system needs at least one cluster")
        if not 0.0 < self.p1 < 1.0:
            raise InvalidSystemSpec("prior p1=" + str(self.p1) + " must lie in (0, 1)")
        if not (self.loss_fa > 0 and self.loss_md > 0):
            raise InvalidSystemSpec("losses must be positive")
        if not math.isfinite(self.gamma):
            raise InvalidSystemSpec("fusion center threshold is not finite")

    @property
    def p0(self) -> float:
        return 1.0 - self.p1

    ## FC threshold ln(L10 p0 / (L01 p1)).
    @property
    def gamma(self) -> float:
        return math.log(self.loss_fa * self.p0 / (self.loss_md * self.p1))

    @property
    def cluster_count(self) -> int:
        return len(self.clusters)

    @property
    def thresholds(self) -> list:
        return [c.gamma for c in self.clusters]

    @property
    def com_probs(self) -> np.ndarray:
        return np.array([c.com_prob for c in self.clusters])

    def with_thresholds(self, gammas) -> "SystemSpec":
        return replace(self, clusters=tuple(c.with_gamma(g) for c, g in zip(self.clusters, gammas)))

    def with_threshold(self, index: int, gamma: float) -> "SystemSpec":
        clusters = list(self.clusters)
        clusters[index] = clusters[index].with_gamma(gamma)
        return replace(self, clusters=tuple(clusters))


@dataclass(frozen=True)
class ErrorPair:
    p_fa: float
    p_md: float
    method: Method = Method.EXACT

    def __post_init__(self):
        for name in ("p_fa", "p_md"):
            value = float(getattr(self, name))
            if not -1e-9 <= value <= 1.0 + 1e-9:
                raise ValueError(name + "=" + str(value) + " is not a probability")
            object.__setattr__(self, name, min(max(value, 0.0), 1.0))


def fusion_weights(p_fa: float, p_md: float) -> FusionWeights:
    if not (0.0 < p_fa < 0.5 and 0.0 < p_md < 0.5):
        raise InvalidSensorSpec(p_fa, p_md)
    return FusionWeights(math.log((1.0 - p_md) / p_fa), math.log((1.0 - p_fa) / p_md))


## FC-level weights of a cluster verdict.
# Degenerate pairs give infinite weights; 0/0 is mapped to 0 (verdict carries no
# information). Atoms carrying such weights have zero probability under the
# hypothesis they would mislead, so the FC sums remain well defined.
def cluster_weights(pair: ErrorPair) -> FusionWeights:
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = np.log1p(-pair.p_md) - np.log(pair.p_fa)
        w0 = np.log1p(-pair.p_fa) - np.log(pair.p_md)
    return FusionWeights(float(np.nan_to_num(w1, nan=0.0, posinf=np.inf, neginf=-np.inf)),
                         float(np.nan_to_num(w0, nan=0.0, posinf=np.inf, neginf=-np.inf)))


def cluster_com_prob(cluster: ClusterSpec) -> float:
    return float(1.0 - np.prod(1.0 - cluster.p_com))


def decides_h1(statistic, gamma):
    return np.asarray(statistic) >= gamma - TIE_TOLERANCE * max(1.0, abs(gamma))


def _as_bits(bits, expected: int) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim == 0 or bits.shape[-1] != expected:
        raise MalformedMeasurement(expected, 0 if bits.ndim == 0 else bits.shape[-1])
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("measurement bits must be 0 or 1")
    return bits.astype(bool)


## Weighted statistic sum_i [w1 y_i - w0 (1 - y_i)].
# Works on a single bit vector or on a stack of them (last axis = sensors).
def cluster_statistic(bits, cluster: ClusterSpec):
    bits = _as_bits(bits, cluster.size)
    return np.sum(np.where(bits, cluster.w1, -cluster.w0), axis=-1)


def cluster_decide(bits, cluster: ClusterSpec) -> int:
    return int(decides_h1(cluster_statistic(bits, cluster), cluster.gamma))


def _pattern_probability(bits: np.ndarray, p_one: np.ndarray) -> np.ndarray:
    if bits.shape[-1] > LOG_SPACE_SIZE:
        return np.exp(np.sum(np.where(bits, np.log(p_one), np.log1p(-p_one)), axis=-1))
    return np.prod(np.where(bits, p_one, 1.0 - p_one), axis=-1)


## Statistic and pattern probabilities under H0/H1 for all 2^n bit patterns.
def _enumerate_patterns(cluster: ClusterSpec):
    n = cluster.size
    stats, p_h0, p_h1 = [], [], []
    for start in range(0, 1 << n, _PATTERN_CHUNK):
        codes = np.arange(start, min(start + _PATTERN_CHUNK, 1 << n), dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
        stats.append(np.sum(np.where(bits, cluster.w1, -cluster.w0), axis=-1))
        p_h0.append(_pattern_probability(bits, cluster.p_fa))
        p_h1.append(_pattern_probability(bits, 1.0 - cluster.p_md))
    return np.concatenate(stats), np.concatenate(p_h0), np.concatenate(p_h1)


## The binomial shortcut: the statistic only depends on the number of ones.
def _binomial_patterns(cluster: ClusterSpec):
    if not cluster.is_homogeneous:
        raise InvalidClusterSpec("the binomial shortcut needs a homogeneous cluster")
    n = cluster.size
    w1, w0 = cluster.w1[0], cluster.w0[0]
    ones = np.arange(n + 1)
    stats = ones * w1 - (n - ones) * w0
    return stats, binom.pmf(ones, n, cluster.p_fa[0]), binom.pmf(ones, n, 1.0 - cluster.p_md[0])


def _error_pair(stats, p_h0, p_h1, gamma, method=Method.EXACT) -> ErrorPair:
    h1 = decides_h1(stats, gamma)
    return ErrorPair(float(np.sum(p_h0[h1])), float(np.sum(p_h1[~h1])), method)


def cluster_error_probs_enumerated(cluster: ClusterSpec, cap: int = CLUSTER_ENUMERATION_CAP) -> ErrorPair:
    if cap is not None and cluster.size > cap:
        raise EnumerationCapExceeded(cluster.size, cap, "cluster")
    return _error_pair(*_enumerate_patterns(cluster), cluster.gamma)


def cluster_error_probs_binomial(cluster: ClusterSpec) -> ErrorPair:
    return _error_pair(*_binomial_patterns(cluster), cluster.gamma)


## Exact cluster error probabilities.
# Homogeneous clusters use the binomial shortcut at any size; the cap only
# guards exhaustive enumeration of heterogeneous clusters.
def cluster_error_probs_exact(cluster: ClusterSpec, cap: int = CLUSTER_ENUMERATION_CAP) -> ErrorPair:
    if cluster.is_homogeneous:
        return cluster_error_probs_binomial(cluster)
    return cluster_error_probs_enumerated(cluster, cap)


## Exact error probabilities of one cluster for many thresholds at once.
# Statistics are sorted once; each threshold becomes a binary search into
# the tail sums. Returns two arrays aligned with gammas.
def cluster_error_curve(cluster: ClusterSpec, gammas, cap: int = CLUSTER_ENUMERATION_CAP):
    if cluster.is_homogeneous:
        stats, p_h0, p_h1 = _binomial_patterns(cluster)
    elif cap is not None and cluster.size > cap:
        raise EnumerationCapExceeded(cluster.size, cap, "cluster")
    else:
        stats, p_h0, p_h1 = _enumerate_patterns(cluster)

    order = np.argsort(stats, kind="stable")
    stats = stats[order]
    tail_h0 = np.append(np.cumsum(p_h0[order][::-1])[::-1], 0.0)
    head_h1 = np.insert(np.cumsum(p_h1[order]), 0, 0.0)

    gammas = np.asarray(gammas, dtype=float)
    cuts = gammas - TIE_TOLERANCE * np.maximum(1.0, np.abs(gammas))
    index = np.searchsorted(stats, cuts, side="left")
    return np.clip(tail_h0[index], 0.0, 1.0), np.clip(head_h1[index], 0.0, 1.0)


def realization_probability(tau, p_coms) -> float:
    tau = np.asarray(tau, dtype=bool)
    p_coms = np.asarray(p_coms, dtype=float)
    if tau.shape != p_coms.shape:
        raise MalformedMeasurement(p_coms.size, tau.size)
    return float(np.prod(np.where(tau, p_coms, 1.0 - p_coms)))


def _verdict_values(cluster_errors):
    weights = [cluster_weights(pair) for pair in cluster_errors]
    return np.array([w.w1 for w in weights]), np.array([w.w0 for w in weights])


## FC statistic sum_j tau_j [w1_j z_j - w0_j (1 - z_j)].
# z_j of silent clusters is ignored (the artifact fixes it to 0).
def fc_statistic(tau, verdicts, cluster_errors):
    n = len(cluster_errors)
    tau, verdicts = _as_bits(tau, n), _as_bits(verdicts, n)
    w1, w0 = _verdict_values(cluster_errors)
    with np.errstate(invalid="ignore"):
        return np.sum(np.where(tau, np.where(verdicts, w1, -w0), 0.0), axis=-1)


def fc_decide(tau, verdicts, system: SystemSpec, cluster_errors) -> int:
    return int(decides_h1(fc_statistic(tau, verdicts, cluster_errors), system.gamma))


## The likelihood ratio form of the FC rule, Pr(z|H1,tau)/Pr(z|H0,tau) >= L10 p0 / (L01 p1).
# Kept as an independent check on the weighted sum rule.
def likelihood_ratio_decide(tau, verdicts, system: SystemSpec, cluster_errors) -> int:
    n = len(cluster_errors)
    tau, verdicts = _as_bits(tau, n), _as_bits(verdicts, n)
    like_h1, like_h0 = 1.0, 1.0
    for on, z, pair in zip(tau, verdicts, cluster_errors):
        if not on:
            continue
        like_h1 *= (1.0 - pair.p_md) if z else pair.p_md
        like_h0 *= pair.p_fa if z else (1.0 - pair.p_fa)
    ratio_threshold = system.loss_fa * system.p0 / (system.loss_md * system.p1)
    return int(like_h1 >= ratio_threshold * like_h0)


## Merge independent per-cluster atoms into the joint FC statistic distribution.
# Each atom list is (values, probabilities under H0, probabilities under H1).
def _combine_atoms(atoms):
    stats, p_h0, p_h1 = np.zeros(1), np.ones(1), np.ones(1)
    with np.errstate(invalid="ignore"):
        for values, q_h0, q_h1 in atoms:
            stats = (stats[:, None] + np.asarray(values)[None, :]).ravel()
            p_h0 = (p_h0[:, None] * np.asarray(q_h0)[None, :]).ravel()
            p_h1 = (p_h1[:, None] * np.asarray(q_h1)[None, :]).ravel()
    return stats, p_h0, p_h1


## Atoms of tau_j [w1 z_j - w0 (1 - z_j)]: silent, verdict 1, verdict 0.
def _verdict_atoms(pair: ErrorPair, p_com: float):
    w = cluster_weights(pair)
    values = (0.0, w.w1, -w.w0)
    q_h0 = (1.0 - p_com, p_com * pair.p_fa, p_com * (1.0 - pair.p_fa))
    q_h1 = (1.0 - p_com, p_com * (1.0 - pair.p_md), p_com * pair.p_md)
    return values, q_h0, q_h1


def _check_cluster_errors(system: SystemSpec, cluster_errors):
    if len(cluster_errors) != system.cluster_count:
        raise MalformedMeasurement(system.cluster_count, len(cluster_errors))


## Per-realization P_FA(tau), P_MD(tau) by enumerating the verdicts of the
# communicating clusters.
def fc_error_probs_given_tau(system: SystemSpec, cluster_errors, tau) -> ErrorPair:
    _check_cluster_errors(system, cluster_errors)
    tau = _as_bits(tau, system.cluster_count)
    atoms = []
    for on, pair in zip(tau, cluster_errors):
        if on:
            values, q_h0, q_h1 = _verdict_atoms(pair, 1.0)
            atoms.append((values[1:], q_h0[1:], q_h1[1:]))
    return _error_pair(*_combine_atoms(atoms), system.gamma)


def _exchangeable(system: SystemSpec, cluster_errors) -> bool:
    first, p_coms = cluster_errors[0], system.com_probs
    return all(p.p_fa == first.p_fa and p.p_md == first.p_md for p in cluster_errors) \
        and bool(np.all(p_coms == p_coms[0]))


## Exact FC errors for identical clusters: condition on the number k of
# communicating clusters and the number m of ones among them.
def _fc_error_probs_exchangeable(system: SystemSpec, pair: ErrorPair, p_com: float) -> ErrorPair:
    n = system.cluster_count
    w = cluster_weights(pair)
    ones, talking = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    feasible = ones <= talking
    zeros = talking - ones
    with np.errstate(invalid="ignore"):
        stats = np.where(ones > 0, ones * w.w1, 0.0) - np.where(zeros > 0, zeros * w.w0, 0.0)
    h1 = decides_h1(stats, system.gamma) & feasible
    h0 = ~decides_h1(stats, system.gamma) & feasible

    p_talking = binom.pmf(talking, n, p_com)
    p_ones_h0 = binom.pmf(ones, talking, pair.p_fa) * p_talking
    p_ones_h1 = binom.pmf(ones, talking, 1.0 - pair.p_md) * p_talking
    return ErrorPair(float(np.sum(p_ones_h0[h1])), float(np.sum(p_ones_h1[h0])))


## Aggregate FC errors sum_tau P(tau) P_FA(tau) and sum_tau P(tau) P_MD(tau).
# The tau sum and the verdict sums are taken jointly: every cluster contributes
# the three atoms (silent, 1, 0) and the joint distribution is enumerated.
# Identical clusters go through the exchangeability shortcut.
def fc_error_probs_exact(system: SystemSpec, cluster_errors, cap: int = FC_ENUMERATION_CAP) -> ErrorPair:
    _check_cluster_errors(system, cluster_errors)
    p_coms = system.com_probs
    if _exchangeable(system, cluster_errors):
        return _fc_error_probs_exchangeable(system, cluster_errors[0], float(p_coms[0]))
    if cap is not None and system.cluster_count > cap:
        raise EnumerationCapExceeded(system.cluster_count, cap, "fusion center")
    atoms = [_verdict_atoms(pair, p) for pair, p in zip(cluster_errors, p_coms)]
    return _error_pair(*_combine_atoms(atoms), system.gamma)


def expected_loss(system: SystemSpec, fc_errors: ErrorPair) -> float:
    return system.p0 * fc_errors.p_fa * system.loss_fa + system.p1 * fc_errors.p_md * system.loss_md

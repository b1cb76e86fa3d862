# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
import logging
from dataclasses import dataclass, field

import numpy as np

from cloudcluster.concentration import *
from cloudcluster.concentration import _fc_bounds_from_moments
from cloudcluster.detection import *
from cloudcluster.detection import _combine_atoms, _verdict_atoms, _fc_error_probs_exchangeable

__all__ = [
    "POINTS_PER_SENSOR", "GS_TOL", "GS_MAX_SWEEPS", "DEFAULT_CAPS", "HeterogeneousSystem",
    "ThresholdGrid", "SystemMethods", "OptimizationReport", "MajorityRule",
    "UNINFORMATIVE", "admissible", "fusable", "select_method", "build_grid", "evaluate_cluster", "evaluate_fc",
    "evaluate_system", "system_loss",
    "line_search_losses", "line_search", "gauss_seidel", "equal_threshold_losses",
    "homogeneous_equal_threshold_search", "initial_thresholds", "majority_threshold",
]

logger = logging.getLogger(__name__)

POINTS_PER_SENSOR = 75
GS_TOL = 1e-9
GS_MAX_SWEEPS = 50
DEFAULT_CAPS = (CLUSTER_ENUMERATION_CAP, FC_ENUMERATION_CAP)


## Exception for the equal-threshold search when clusters are not identical.
class HeterogeneousSystem(Exception):
    def __init__(self, reason):
        self.reason = reason

    def __str__(self):
        return "Equal-threshold search needs identical clusters: " + self.reason


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    points: np.ndarray
    cluster_index: int = 0

    def __len__(self):
        return len(self.points)


## Which computation (exact or Bennett) is used at each level of a system.
@dataclass(frozen=True)
class SystemMethods:
    clusters: tuple
    fc: Method

    @classmethod
    def select(cls, system: SystemSpec, caps=DEFAULT_CAPS) -> "SystemMethods":
        methods = [select_method(c.size, system.cluster_count, caps) for c in system.clusters]
        return cls(tuple(m[0] for m in methods), methods[0][1])

    @classmethod
    def uniform(cls, system: SystemSpec, method: Method) -> "SystemMethods":
        return cls((method,) * system.cluster_count, method)

    @property
    def uses_bennett(self) -> bool:
        return self.fc == Method.BENNETT or Method.BENNETT in self.clusters


@dataclass
class OptimizationReport:
    thresholds: list
    loss: float
    sweeps: int
    method_per_cluster: list
    converged: bool
    fc_method: Method = Method.EXACT
    initial_loss: float = float("nan")
    history: list = field(default_factory=list)


def select_method(cluster_size: int, cluster_count: int, caps=DEFAULT_CAPS):
    cluster_cap, fc_cap = caps
    return (Method.EXACT if cluster_size <= cluster_cap else Method.BENNETT,
            Method.EXACT if cluster_count <= fc_cap else Method.BENNETT)


def build_grid(cluster: ClusterSpec, points_per_sensor: int = POINTS_PER_SENSOR,
               cluster_index: int = 0) -> ThresholdGrid:
    if points_per_sensor < 2:
        raise ValueError("points_per_sensor must be at least 2, got " + str(points_per_sensor))
    points = np.linspace(cluster.l_min, cluster.l_max, points_per_sensor * cluster.size)
    return ThresholdGrid(points, cluster_index)


def evaluate_cluster(cluster: ClusterSpec, method: Method, cap=CLUSTER_ENUMERATION_CAP) -> ErrorPair:
    if method == Method.BENNETT:
        return cluster_error_bounds(cluster)
    return cluster_error_probs_exact(cluster, cap)


def evaluate_fc(system: SystemSpec, cluster_errors, method: Method, cap=FC_ENUMERATION_CAP) -> ErrorPair:
    if method == Method.BENNETT:
        return fc_error_bounds(system, cluster_errors)
    return fc_error_probs_exact(system, cluster_errors, cap)


## A bounded cluster pair may be fused only if p_fa + p_md < 1.
# The FC loss computed from admissible pairs bounds the true loss. Trivial
# bounds (value 1) are never admissible.
def admissible(p_fa, p_md, method: Method = Method.BENNETT):
    if method == Method.EXACT:
        return np.ones(np.shape(p_fa), dtype=bool)
    return np.asarray(p_fa) + np.asarray(p_md) < 1.0


## Pair with zero FC weights; the FC ignores a cluster reporting it.
UNINFORMATIVE = ErrorPair(0.5, 0.5, Method.BENNETT)


## The pair the FC fuses for a cluster: inadmissible bounds become UNINFORMATIVE.
def fusable(pair: ErrorPair, method: Method) -> ErrorPair:
    return pair if admissible(pair.p_fa, pair.p_md, method) else UNINFORMATIVE


## Cluster error pairs (as fused) and the FC error pair of a system under the given methods.
def evaluate_system(system: SystemSpec, methods: SystemMethods = None, caps=DEFAULT_CAPS):
    methods = methods or SystemMethods.select(system, caps)
    cluster_errors = [fusable(evaluate_cluster(c, m, caps[0]), m)
                      for c, m in zip(system.clusters, methods.clusters)]
    return cluster_errors, evaluate_fc(system, cluster_errors, methods.fc, caps[1])


def system_loss(system: SystemSpec, methods: SystemMethods = None, caps=DEFAULT_CAPS) -> float:
    return expected_loss(system, evaluate_system(system, methods, caps)[1])


def _cluster_curve(cluster: ClusterSpec, gammas, method: Method, cap):
    if method == Method.EXACT:
        return cluster_error_curve(cluster, gammas, cap)
    pairs = [cluster_error_bounds(cluster.with_gamma(g)) for g in gammas]
    p_fa, p_md = np.array([p.p_fa for p in pairs]), np.array([p.p_md for p in pairs])
    keep = admissible(p_fa, p_md)
    return np.where(keep, p_fa, UNINFORMATIVE.p_fa), np.where(keep, p_md, UNINFORMATIVE.p_md)


## Exact FC errors for every candidate pair of one cluster, others held fixed.
# The remaining clusters are merged once into a sorted statistic; each candidate
# then only adds its own three atoms.
def _fc_curve_exact(system, index, others, p_fa, p_md, cap):
    if cap is not None and system.cluster_count > cap:
        raise EnumerationCapExceeded(system.cluster_count, cap, "fusion center")
    p_coms = system.com_probs
    atoms = [_verdict_atoms(pair, p) for j, (pair, p) in enumerate(zip(others, p_coms)) if j != index]
    stats, q_h0, q_h1 = _combine_atoms(atoms)
    reachable = (q_h0 > 0) | (q_h1 > 0)
    stats, q_h0, q_h1 = stats[reachable], q_h0[reachable], q_h1[reachable]

    order = np.argsort(stats, kind="stable")
    stats = stats[order]
    tail_h0 = np.append(np.cumsum(q_h0[order][::-1])[::-1], 0.0)
    head_h1 = np.insert(np.cumsum(q_h1[order]), 0, 0.0)

    gamma = system.gamma
    cut = gamma - TIE_TOLERANCE * max(1.0, abs(gamma))
    fc_fa, fc_md = np.zeros(len(p_fa)), np.zeros(len(p_fa))
    p_com = p_coms[index]
    for k, (a, b) in enumerate(zip(p_fa, p_md)):
        values, r_h0, r_h1 = _verdict_atoms(ErrorPair(a, b), p_com)
        with np.errstate(invalid="ignore"):
            where = np.searchsorted(stats, cut - np.asarray(values), side="left")
        fc_fa[k] = np.dot(r_h0, tail_h0[where])
        fc_md[k] = np.dot(r_h1, head_h1[where])
    return np.clip(fc_fa, 0.0, 1.0), np.clip(fc_md, 0.0, 1.0)


def _fc_curve_bennett(system, index, others, p_fa, p_md):
    p_coms = system.com_probs
    moments = [None if pair is None else verdict_moments(pair, p) for pair, p in zip(others, p_coms)]
    fc_fa, fc_md = np.zeros(len(p_fa)), np.zeros(len(p_fa))
    for k, (a, b) in enumerate(zip(p_fa, p_md)):
        moments[index] = verdict_moments(ErrorPair(a, b), p_coms[index])
        fa, md = _fc_bounds_from_moments(system, moments)
        fc_fa[k], fc_md[k] = fa.value, md.value
    return fc_fa, fc_md


## Expected loss of the full system at every grid point of one cluster's threshold.
def line_search_losses(system: SystemSpec, cluster_index: int, grid: ThresholdGrid,
                       methods: SystemMethods = None, caps=DEFAULT_CAPS) -> np.ndarray:
    methods = methods or SystemMethods.select(system, caps)
    cluster = system.clusters[cluster_index]
    others = [None if j == cluster_index else fusable(evaluate_cluster(c, m, caps[0]), m)
              for j, (c, m) in enumerate(zip(system.clusters, methods.clusters))]

    p_fa, p_md = _cluster_curve(cluster, grid.points, methods.clusters[cluster_index], caps[0])
    if methods.fc == Method.EXACT:
        fc_fa, fc_md = _fc_curve_exact(system, cluster_index, others, p_fa, p_md, caps[1])
    else:
        fc_fa, fc_md = _fc_curve_bennett(system, cluster_index, others, p_fa, p_md)
    return system.p0 * fc_fa * system.loss_fa + system.p1 * fc_md * system.loss_md


## Best threshold of one cluster on its grid, all other thresholds held fixed.
# Ties go to the smallest threshold.
def line_search(system: SystemSpec, cluster_index: int, grid: ThresholdGrid,
                methods: SystemMethods = None, caps=DEFAULT_CAPS):
    losses = line_search_losses(system, cluster_index, grid, methods, caps)
    best = int(np.argmin(losses))
    return float(grid.points[best]), float(losses[best])


## Gauss-Seidel coordinate search over the cluster thresholds.
# Starts from the thresholds stored in the system. A threshold is only replaced
# when its line search strictly lowers the loss, so the loss never increases.
# Stops when a sweep changes nothing, improves by less than tol, or after
# max_sweeps sweeps.
def gauss_seidel(system: SystemSpec, grids, tol: float = GS_TOL, max_sweeps: int = GS_MAX_SWEEPS,
                 methods: SystemMethods = None, caps=DEFAULT_CAPS) -> OptimizationReport:
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be at least 1")
    methods = methods or SystemMethods.select(system, caps)
    loss = system_loss(system, methods, caps)
    history = [loss]
    converged, sweeps = False, 0

    while sweeps < max_sweeps:
        sweeps += 1
        start, changed = loss, False
        for j, grid in enumerate(grids):
            gamma, candidate = line_search(system, j, grid, methods, caps)
            if candidate < loss and gamma != system.clusters[j].gamma:
                system = system.with_threshold(j, gamma)
                loss, changed = candidate, True
            assert loss <= history[-1], "coordinate update increased the loss"
            history.append(loss)
        logger.debug("sweep %d: loss %.12g", sweeps, loss)
        if not changed or start - loss < tol or len(grids) == 1:
            converged = True
            break

    final = system_loss(system, methods, caps)
    logger.info("gauss-seidel finished after %d sweeps, loss %.12g (initial %.12g)", sweeps, final, history[0])
    return OptimizationReport(system.thresholds, final, sweeps, list(methods.clusters), converged,
                              methods.fc, history[0], history)


def _check_identical(system: SystemSpec):
    first = system.clusters[0]
    for j, cluster in enumerate(system.clusters[1:], start=1):
        if cluster.sensors != first.sensors:
            raise HeterogeneousSystem("cluster " + str(j) + " differs from cluster 0")


## Expected loss at every grid point when all clusters share the threshold.
def equal_threshold_losses(system: SystemSpec, grid: ThresholdGrid,
                           methods: SystemMethods = None, caps=DEFAULT_CAPS) -> np.ndarray:
    _check_identical(system)
    methods = methods or SystemMethods.select(system, caps)
    cluster = system.clusters[0]
    p_com = float(system.com_probs[0])
    p_fa, p_md = _cluster_curve(cluster, grid.points, methods.clusters[0], caps[0])

    losses = np.zeros(len(grid))
    for k, pair in enumerate(map(ErrorPair, p_fa, p_md)):
        if methods.fc == Method.EXACT:
            fc = _fc_error_probs_exchangeable(system, pair, p_com)
        else:
            fc = fc_error_bounds(system, [pair] * system.cluster_count)
        losses[k] = expected_loss(system, fc)
    return losses


## One shared threshold for identical clusters, swept over the grid.
def homogeneous_equal_threshold_search(system: SystemSpec, grid: ThresholdGrid,
                                       methods: SystemMethods = None, caps=DEFAULT_CAPS):
    losses = equal_threshold_losses(system, grid, methods, caps)
    best = int(np.argmin(losses))
    return float(grid.points[best]), float(losses[best])


## Starting thresholds for a heterogeneous system.
# Cluster j gets the shared threshold that is optimal when every cluster looks
# like cluster j with its members' noise replaced by their average.
def initial_thresholds(system: SystemSpec, points_per_sensor: int = POINTS_PER_SENSOR,
                       caps=DEFAULT_CAPS) -> list:
    thresholds = []
    for cluster in system.clusters:
        p_fa, p_md = float(np.mean(cluster.p_fa)), float(np.mean(cluster.p_md))
        proxy = ClusterSpec([SensorSpec(p_fa, p_md, s.p_com) for s in cluster.sensors])
        proxy_system = SystemSpec([proxy] * system.cluster_count, system.p1, system.loss_fa, system.loss_md)
        gamma, _ = homogeneous_equal_threshold_search(proxy_system, build_grid(proxy, points_per_sensor),
                                                      caps=caps)
        thresholds.append(min(max(gamma, cluster.l_min), cluster.l_max))
    return thresholds


## Count-domain majority rule: H1 iff at least floor(n/2) + 1 bits are 1.
@dataclass(frozen=True)
class MajorityRule:
    count_threshold: int
    size: int

    def decide(self, bits) -> int:
        bits = np.asarray(bits)
        if bits.shape[-1] != self.size:
            raise MalformedMeasurement(self.size, bits.shape[-1])
        return int(np.sum(bits) >= self.count_threshold)

    ## Weighted threshold reproducing the rule on a homogeneous cluster.
    # Placed halfway between the statistic at k*-1 and at k* ones.
    def weighted_threshold(self, cluster: ClusterSpec) -> float:
        if not cluster.is_homogeneous:
            raise InvalidClusterSpec("the majority rule has no weighted threshold on a heterogeneous cluster")
        w1, w0 = float(cluster.w1[0]), float(cluster.w0[0])
        return (self.count_threshold - 0.5) * (w1 + w0) - self.size * w0

    def apply(self, cluster: ClusterSpec) -> ClusterSpec:
        return cluster.with_gamma(self.weighted_threshold(cluster))

    ## Exact error pair of the count rule (Poisson-binomial count distribution).
    def error_probs(self, cluster: ClusterSpec) -> ErrorPair:
        count_h0, count_h1 = np.ones(1), np.ones(1)
        for p_fa, p_md in zip(cluster.p_fa, cluster.p_md):
            count_h0 = np.convolve(count_h0, [1.0 - p_fa, p_fa])
            count_h1 = np.convolve(count_h1, [p_md, 1.0 - p_md])
        k = self.count_threshold
        return ErrorPair(float(np.sum(count_h0[k:])), float(np.sum(count_h1[:k])))


def majority_threshold(cluster: ClusterSpec) -> MajorityRule:
    return MajorityRule(cluster.size // 2 + 1, cluster.size)

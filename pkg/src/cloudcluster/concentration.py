# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
import math
from dataclasses import dataclass

import numpy as np

from cloudcluster.detection import *

__all__ = [
    "LAMBERT_MAX_ITER", "LambertDomainError", "MalformedBennettInput",
    "BennettInput", "BoundResult", "lambert_w0", "lambert_w0_of_exp", "bennett_u",
    "cluster_bound_results", "cluster_error_bounds", "fc_bound_results", "fc_error_bounds",
    "verdict_moments", "bound_from_moments",
]

LAMBERT_MAX_ITER = 100
_BRANCH_POINT = -math.exp(-1.0)
_EXP_OVERFLOW = 700.0


class LambertDomainError(Exception):
    def __init__(self, x):
        self.x = x

    def __str__(self):
        return "Lambert W0 is real only for x >= -1/e, got x=" + str(self.x)


class MalformedBennettInput(Exception):
    def __init__(self, bennett_input):
        self.bennett_input = bennett_input

    def __str__(self):
        return "Malformed Bennett input " + str(self.bennett_input) + "\n" \
               "The bound needs n >= 1, M > 0 and sigma^2 > 0."


## Principal branch of the Lambert W function, w exp(w) = x.
# Halley iteration from log(x) - log(log(x)) for large x, from the branch point
# series near -1/e and from log1p(x) elsewhere. Falls back to bisection if the
# iteration leaves [-1, inf) or does not settle within LAMBERT_MAX_ITER steps.
def lambert_w0(x: float) -> float:
    x = float(x)
    if math.isnan(x) or x < _BRANCH_POINT - 1e-15:
        raise LambertDomainError(x)
    if x == 0.0 or math.isinf(x):
        return x
    if x <= _BRANCH_POINT:
        return -1.0

    if x > math.e:
        log_x = math.log(x)
        w = log_x - math.log(log_x)
    elif x < -0.25:
        p = math.sqrt(2.0 * (math.e * x + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    else:
        w = math.log1p(x)

    for _ in range(LAMBERT_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denominator = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denominator == 0.0 or not math.isfinite(denominator):
            break
        step = f / denominator
        w_next = w - step
        if not math.isfinite(w_next) or w_next < -1.0:
            break
        w = w_next
        if abs(step) <= 4e-16 * (1.0 + abs(w)):
            return w
    return _lambert_w0_bisect(x)


def _lambert_w0_bisect(x: float) -> float:
    low, high = -1.0, max(1.0, math.log(x)) if x > 0 else 0.0
    for _ in range(200):
        mid = 0.5 * (low + high)
        if mid * math.exp(mid) < x:
            low = mid
        else:
            high = mid
        if high - low <= 2e-16 * max(1.0, abs(mid)):
            break
    return 0.5 * (low + high)


## W0(exp(log_x)) for arguments that would overflow a double.
# Newton on w + log(w) = log_x, which is well conditioned for large log_x.
def lambert_w0_of_exp(log_x: float) -> float:
    if log_x < _EXP_OVERFLOW:
        return lambert_w0(math.exp(log_x))
    w = log_x - math.log(log_x)
    for _ in range(LAMBERT_MAX_ITER):
        step = (w + math.log(w) - log_x) / (1.0 + 1.0 / w)
        w -= step
        if abs(step) <= 4e-16 * w:
            break
    return w


@dataclass(frozen=True)
class BennettInput:
    n: int
    alpha: float
    m: float
    sigma2: float

    def __post_init__(self):
        if self.n < 1 or not self.m > 0 or not self.sigma2 > 0:
            raise MalformedBennettInput(self)

    @property
    def is_valid(self) -> bool:
        return 0.0 < self.alpha < self.n * self.m


@dataclass(frozen=True)
class BoundResult:
    value: float
    valid: bool
    lam: float = 0.0
    a: float = math.nan
    b: float = math.nan
    raw: float = 1.0


_TRIVIAL = BoundResult(1.0, False)


## log(1 + ratio (e^lam - 1 - lam)) without overflowing for large lam.
def _log1p_excess(ratio: float, lam: float) -> float:
    if lam < _EXP_OVERFLOW:
        return math.log1p(ratio * (math.expm1(lam) - lam))
    log_c = math.log(ratio) + lam + math.log1p(-(1.0 + lam) * math.exp(-lam))
    return log_c + math.log1p(math.exp(-log_c))


## Improved Bennett tail bound U(n, alpha, M, sigma^2) on Pr(sum x_i >= alpha).
# A = M^2/sigma^2 + nM/alpha - 1, B = nM/alpha - 1, Lambda = A - W0(B e^A).
# Outside 0 < alpha < nM the trivial bound 1 is returned with valid=False.
# The value is clamped to 1; the unclamped value is kept in raw.
def bennett_u(bennett_input: BennettInput) -> BoundResult:
    if not bennett_input.is_valid:
        return _TRIVIAL
    n, alpha, m, sigma2 = bennett_input.n, bennett_input.alpha, bennett_input.m, bennett_input.sigma2

    ratio = n * m / alpha
    a = m * m / sigma2 + ratio - 1.0
    b = ratio - 1.0
    lam = max(a - lambert_w0_of_exp(math.log(b) + a), 0.0)

    log_u = -lam * alpha / m + n * _log1p_excess(sigma2 / (m * m), lam)
    raw = math.exp(log_u) if log_u < _EXP_OVERFLOW else math.inf
    return BoundResult(min(raw, 1.0), True, lam, a, b, raw)


## Bound from summed means, averaged variances and the range M.
# Non-finite moments (infinite verdict weights) or a degenerate range give
# the trivial bound.
def bound_from_moments(n: int, alpha: float, m: float, sigma2: float) -> BoundResult:
    if not (math.isfinite(alpha) and math.isfinite(m) and math.isfinite(sigma2)):
        return _TRIVIAL
    if m <= 0.0 or sigma2 <= 0.0:
        return _TRIVIAL
    return bennett_u(BennettInput(n, alpha, m, sigma2))


def _atom_moments(values, probs):
    kept = [(v, p) for v, p in zip(values, probs) if p > 0.0]
    if any(not math.isfinite(v) for v, _ in kept):
        return math.nan, math.nan, math.inf
    mean = sum(p * v for v, p in kept)
    var = max(sum(p * (v - mean) ** 2 for v, p in kept), 0.0)
    return mean, var, max(abs(v - mean) for v, _ in kept)


def cluster_bound_results(cluster: ClusterSpec):
    w1, w0, p_fa, p_md = cluster.w1, cluster.w0, cluster.p_fa, cluster.p_md
    spread = (w1 + w0) ** 2

    mean_h0 = w1 * p_fa - w0 * (1.0 - p_fa)
    var_h0 = p_fa * (1.0 - p_fa) * spread
    m_h0 = np.maximum(np.abs(w1 - mean_h0), np.abs(w0 + mean_h0))

    mean_h1 = w1 * (1.0 - p_md) - w0 * p_md
    var_h1 = p_md * (1.0 - p_md) * spread
    m_h1 = np.maximum(np.abs(w1 - mean_h1), np.abs(w0 + mean_h1))

    n = cluster.size
    fa = bound_from_moments(n, cluster.gamma - float(np.sum(mean_h0)), float(np.max(m_h0)), float(np.mean(var_h0)))
    md = bound_from_moments(n, float(np.sum(mean_h1)) - cluster.gamma, float(np.max(m_h1)), float(np.mean(var_h1)))
    return fa, md


## Bennett bounds on a cluster's false alarm and missed detection probabilities.
def cluster_error_bounds(cluster: ClusterSpec) -> ErrorPair:
    fa, md = cluster_bound_results(cluster)
    return ErrorPair(fa.value, md.value, Method.BENNETT)


## Mean, variance and range of one cluster's FC contribution under H0 and H1.
# M is taken over the atoms with positive probability: with every atom present
# it is max(|w1 - E|, |w0 + E|); a cluster that never talks contributes M = 0.
def verdict_moments(pair: ErrorPair, p_com: float):
    w = cluster_weights(pair)
    values = (0.0, w.w1, -w.w0)
    h0 = _atom_moments(values, (1.0 - p_com, p_com * pair.p_fa, p_com * (1.0 - pair.p_fa)))
    h1 = _atom_moments(values, (1.0 - p_com, p_com * (1.0 - pair.p_md), p_com * pair.p_md))
    return h0, h1


def _fc_bounds_from_moments(system: SystemSpec, moments):
    n = len(moments)
    mean_h0 = sum(h0[0] for h0, _ in moments)
    mean_h1 = sum(h1[0] for _, h1 in moments)
    fa = bound_from_moments(n, system.gamma - mean_h0,
                            max(h0[2] for h0, _ in moments), sum(h0[1] for h0, _ in moments) / n)
    md = bound_from_moments(n, mean_h1 - system.gamma,
                            max(h1[2] for _, h1 in moments), sum(h1[1] for _, h1 in moments) / n)
    return fa, md


def fc_bound_results(system: SystemSpec, cluster_errors):
    if len(cluster_errors) != system.cluster_count:
        raise MalformedMeasurement(system.cluster_count, len(cluster_errors))
    moments = [verdict_moments(pair, p) for pair, p in zip(cluster_errors, system.com_probs)]
    return _fc_bounds_from_moments(system, moments)


## Bennett bounds on the FC false alarm and missed detection probabilities.
def fc_error_bounds(system: SystemSpec, cluster_errors) -> ErrorPair:
    fa, md = fc_bound_results(system, cluster_errors)
    return ErrorPair(fa.value, md.value, Method.BENNETT)

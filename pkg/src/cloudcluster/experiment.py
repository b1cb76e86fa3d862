# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import yaml
from joblib import Parallel, delayed

from cloudcluster.detection import *
from cloudcluster.noise_model import HeterogeneousNoise, HomogeneousNoise, build_system
from cloudcluster.optimizer import *
from cloudcluster.simulation import run_trials

logger = logging.getLogger(__name__)

HOMOGENEOUS_CURVES = ("exact", "majority", "bennett_optimized", "bennett_loss_homogeneous")
HETEROGENEOUS_CURVE = "bennett_loss_heterogeneous"
MONTE_CARLO_CURVE = "exact_monte_carlo"
ALL_CURVES = HOMOGENEOUS_CURVES + (HETEROGENEOUS_CURVE, MONTE_CARLO_CURVE)
SKIPPED = "skipped"
CSV_HEADER = ("x", "curve", "loss", "p_fa", "p_md", "method")


## Exception for a rejected config field.
class ConfigError(Exception):
    def __init__(self, field_name, message):
        self.field_name = field_name
        self.message = message

    def __str__(self):
        return "Invalid config field '" + str(self.field_name) + "': " + self.message


## Exception for a CSV that could not be written.
class OutputError(Exception):
    def __init__(self, path, reason):
        self.path = path
        self.reason = reason

    def __str__(self):
        return "Could not write " + str(self.path) + ": " + str(self.reason)


@dataclass(frozen=True)
class SensorNoiseConfig:
    kind: str = "homogeneous"
    p_fa: float = 0.2
    p_md: float = 0.3
    deviation: float = 0.2
    realizations: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    total_sensors: int = 60
    cluster_count: tuple = ()
    p_com: tuple = (0.1,)
    prior_p1: float = 0.4
    loss_fa: float = 150.0
    loss_md: float = 100.0
    sensor_noise: SensorNoiseConfig = field(default_factory=SensorNoiseConfig)
    points_per_sensor: int = POINTS_PER_SENSOR
    curves: tuple = ()
    seed: int = 0
    caps: tuple = DEFAULT_CAPS
    trials: int = 0
    n_jobs: int = 1

    ## The swept variable: whichever of cluster_count and p_com is a list.
    @property
    def sweep_field(self) -> str:
        return "cluster_count" if len(self.cluster_count) > 1 else "p_com"

    @property
    def sweep_values(self) -> tuple:
        return getattr(self, self.sweep_field)

    def system_args(self, x):
        if self.sweep_field == "cluster_count":
            return int(x), self.p_com[0]
        return self.cluster_count[0], float(x)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")

        total = _integer(data, "total_sensors", 60, minimum=1)
        count_list = "cluster_count" in data and isinstance(data["cluster_count"], (list, tuple))
        p_com_list = "p_com" in data and isinstance(data["p_com"], (list, tuple))
        if count_list and p_com_list:
            raise ConfigError("p_com", "only one of cluster_count and p_com may be a sweep list")

        if "cluster_count" not in data or data["cluster_count"] == "divisors":
            if p_com_list:
                raise ConfigError("cluster_count", "a p_com sweep needs a fixed cluster_count")
            counts = tuple(d for d in range(1, total + 1) if total % d == 0)
        else:
            counts = tuple(_as_list(data, "cluster_count", int))
            if any(c < 1 for c in counts):
                raise ConfigError("cluster_count", "cluster counts must be positive")
            if not count_list and total % counts[0]:
                raise ConfigError("cluster_count", str(total) + " sensors cannot form "
                                  + str(counts[0]) + " equal clusters")

        p_coms = tuple(_as_list(data, "p_com", float)) if "p_com" in data else (0.1,)
        if any(not 0.0 <= p <= 1.0 for p in p_coms):
            raise ConfigError("p_com", "communication probabilities must lie in [0, 1]")
        if not p_coms or not counts:
            raise ConfigError("p_com" if not p_coms else "cluster_count", "empty sweep")

        prior = _real(data, "prior_p1", 0.4)
        if not 0.0 < prior < 1.0:
            raise ConfigError("prior_p1", "prior must lie in (0, 1)")
        loss_fa, loss_md = _real(data, "loss_fa", 150.0), _real(data, "loss_md", 100.0)
        if not loss_fa > 0:
            raise ConfigError("loss_fa", "loss must be positive")
        if not loss_md > 0:
            raise ConfigError("loss_md", "loss must be positive")

        noise = _noise_config(data.get("sensor_noise") or {})
        points = _integer(data, "points_per_sensor", POINTS_PER_SENSOR, minimum=2)
        trials = _integer(data, "trials", 0, minimum=0)
        n_jobs = _integer(data, "n_jobs", 1)
        if n_jobs == 0:
            raise ConfigError("n_jobs", "n_jobs must be nonzero")
        seed = _integer(data, "seed", 0, minimum=0)

        caps = data.get("caps", DEFAULT_CAPS)
        if isinstance(caps, dict):
            caps = (caps.get("cluster", DEFAULT_CAPS[0]), caps.get("fc", DEFAULT_CAPS[1]))
        try:
            caps = tuple(int(c) for c in caps)
        except (TypeError, ValueError):
            raise ConfigError("caps", "caps must be two integers (cluster_cap, fc_cap)")
        if len(caps) != 2 or min(caps) < 0:
            raise ConfigError("caps", "caps must be two nonnegative integers (cluster_cap, fc_cap)")

        curves = _curves(data.get("curves"), noise, trials)
        return cls(total, counts, p_coms, prior, loss_fa, loss_md, noise, points, curves, seed, caps,
                   trials, n_jobs)


def _as_list(data, name, kind):
    value = data[name]
    values = value if isinstance(value, (list, tuple)) else [value]
    try:
        return [kind(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(name, "expected " + kind.__name__ + " values, got " + repr(value))


def _real(data, name, default):
    try:
        value = float(data.get(name, default))
    except (TypeError, ValueError):
        raise ConfigError(name, "expected a number, got " + repr(data.get(name)))
    if not math.isfinite(value):
        raise ConfigError(name, "expected a finite number")
    return value


def _integer(data, name, default, minimum=None):
    value = data.get(name, default)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(name, "expected an integer, got " + repr(value))
    if minimum is not None and value < minimum:
        raise ConfigError(name, "must be at least " + str(minimum))
    return int(value)


def _noise_config(data: dict) -> SensorNoiseConfig:
    if not isinstance(data, dict):
        raise ConfigError("sensor_noise", "expected a mapping")
    unknown = set(data) - set(SensorNoiseConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError("sensor_noise." + sorted(unknown)[0], "unknown field")
    kind = data.get("kind", "homogeneous")
    if kind not in ("homogeneous", "heterogeneous"):
        raise ConfigError("sensor_noise.kind", "must be 'homogeneous' or 'heterogeneous'")
    p_fa, p_md = _real(data, "p_fa", 0.2), _real(data, "p_md", 0.3)
    deviation = _real(data, "deviation", 0.2)
    realizations = _integer(data, "realizations", 5, minimum=1)
    if not (0.0 < p_fa < 0.5 and 0.0 < p_md < 0.5):
        raise ConfigError("sensor_noise", "p_fa and p_md must lie in (0, 0.5)")
    if kind == "heterogeneous" and not (0.0 <= deviation < 1.0 and p_fa * (1.0 + deviation) < 0.5
                                        and p_md * (1.0 + deviation) < 0.5):
        raise ConfigError("sensor_noise.deviation", "sampled probabilities would leave (0, 0.5)")
    return SensorNoiseConfig(kind, p_fa, p_md, deviation, realizations)


def _curves(requested, noise: SensorNoiseConfig, trials: int) -> tuple:
    if requested is None:
        curves = list(HOMOGENEOUS_CURVES)
        if noise.kind == "heterogeneous":
            curves.append(HETEROGENEOUS_CURVE)
    else:
        curves = [requested] if isinstance(requested, str) else list(requested)
        for name in curves:
            if name not in ALL_CURVES:
                raise ConfigError("curves", "unknown curve " + repr(name))
        if HETEROGENEOUS_CURVE in curves and noise.kind != "heterogeneous":
            raise ConfigError("curves", HETEROGENEOUS_CURVE + " needs heterogeneous sensor_noise")
    if MONTE_CARLO_CURVE in curves and trials == 0:
        raise ConfigError("trials", MONTE_CARLO_CURVE + " needs a positive trial count")
    if trials > 0 and MONTE_CARLO_CURVE not in curves:
        curves.append(MONTE_CARLO_CURVE)
    return tuple(dict.fromkeys(curves))


## Raw mapping of a YAML config file; an empty file is an empty mapping.
def read_config(filename: str) -> dict:
    with open(filename) as file:
        data = yaml.safe_load(file)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "the config file must hold a mapping")
    return data


def load_config(filename: str) -> ExperimentConfig:
    return ExperimentConfig.from_dict(read_config(filename))


## One CSV row: a curve evaluated at one sweep value.
@dataclass(frozen=True)
class CurvePoint:
    x: float
    curve: str
    loss: float
    p_fa: float
    p_md: float
    method: str


def _point(config, x, curve, pair: ErrorPair, method) -> CurvePoint:
    loss = config.prior_p1 * pair.p_md * config.loss_md + (1.0 - config.prior_p1) * pair.p_fa * config.loss_fa
    return CurvePoint(x, curve, loss, pair.p_fa, pair.p_md, getattr(method, "value", method))


def _label(methods: SystemMethods) -> Method:
    return Method.BENNETT if methods.uses_bennett else Method.EXACT


def _homogeneous_points(config: ExperimentConfig, x, system: SystemSpec) -> list:
    points = []
    exact = SystemMethods.uniform(system, Method.EXACT)
    grid = build_grid(system.clusters[0], config.points_per_sensor)
    curves = config.curves

    if "exact" in curves or MONTE_CARLO_CURVE in curves:
        gamma, _ = homogeneous_equal_threshold_search(system, grid, exact, config.caps)
        exact_system = system.with_thresholds([gamma] * system.cluster_count)
        cluster_errors, fc = evaluate_system(exact_system, exact, config.caps)
        if "exact" in curves:
            points.append(_point(config, x, "exact", fc, Method.EXACT))
        if MONTE_CARLO_CURVE in curves:
            summary = run_trials(exact_system, config.trials, config.seed, cluster_errors, caps=config.caps)
            loss = (1.0 - config.prior_p1) * summary.empirical_p_fa * config.loss_fa \
                + config.prior_p1 * summary.empirical_p_md * config.loss_md
            points.append(CurvePoint(x, MONTE_CARLO_CURVE, loss, summary.empirical_p_fa,
                                     summary.empirical_p_md, Method.MONTE_CARLO.value))

    if "majority" in curves:
        rule = majority_threshold(system.clusters[0])
        majority_system = system.with_thresholds([rule.weighted_threshold(c) for c in system.clusters])
        points.append(_point(config, x, "majority", evaluate_system(majority_system, exact, config.caps)[1],
                             Method.EXACT))

    if "bennett_optimized" in curves or "bennett_loss_homogeneous" in curves:
        methods = SystemMethods.select(system, config.caps)
        gamma, _ = homogeneous_equal_threshold_search(system, grid, methods, config.caps)
        bound_system = system.with_thresholds([gamma] * system.cluster_count)
        if "bennett_optimized" in curves:
            points.append(_point(config, x, "bennett_optimized",
                                 evaluate_system(bound_system, exact, config.caps)[1], _label(methods)))
        if "bennett_loss_homogeneous" in curves:
            points.append(_point(config, x, "bennett_loss_homogeneous",
                                 evaluate_system(bound_system, methods, config.caps)[1], _label(methods)))
    return points


## Average over sensor realizations of the loss the optimizer reports for a
# heterogeneous system. Realization r always draws from the stream
# (seed, r), so every sweep value sees the same sensors.
def _heterogeneous_point(config: ExperimentConfig, x, cluster_count: int, p_com: float) -> CurvePoint:
    noise_config = config.sensor_noise
    p_fa, p_md, labels = [], [], set()
    for r in range(noise_config.realizations):
        rng = np.random.default_rng([config.seed, r])
        noise = HeterogeneousNoise(noise_config.p_fa, noise_config.p_md, noise_config.deviation, rng)
        system = build_system(noise, config.total_sensors, cluster_count, p_com,
                              config.prior_p1, config.loss_fa, config.loss_md)
        methods = SystemMethods.select(system, config.caps)
        system = system.with_thresholds(initial_thresholds(system, config.points_per_sensor, config.caps))
        grids = [build_grid(c, config.points_per_sensor, j) for j, c in enumerate(system.clusters)]
        report = gauss_seidel(system, grids, methods=methods, caps=config.caps)
        fc = evaluate_system(system.with_thresholds(report.thresholds), methods, config.caps)[1]
        p_fa.append(fc.p_fa)
        p_md.append(fc.p_md)
        labels.add(_label(methods))
    method = Method.BENNETT if Method.BENNETT in labels else Method.EXACT
    return _point(config, x, HETEROGENEOUS_CURVE, ErrorPair(float(np.mean(p_fa)), float(np.mean(p_md))), method)


## All requested curves at one sweep value.
def evaluate_point(config: ExperimentConfig, x) -> list:
    cluster_count, p_com = config.system_args(x)
    if config.total_sensors % cluster_count:
        logger.warning("skipping %s=%s: %d sensors cannot form %d equal clusters",
                       config.sweep_field, x, config.total_sensors, cluster_count)
        return [CurvePoint(x, curve, math.nan, math.nan, math.nan, SKIPPED) for curve in config.curves]

    points = []
    if set(config.curves) - {HETEROGENEOUS_CURVE}:
        noise = HomogeneousNoise(config.sensor_noise.p_fa, config.sensor_noise.p_md)
        system = build_system(noise, config.total_sensors, cluster_count, p_com,
                              config.prior_p1, config.loss_fa, config.loss_md)
        points += _homogeneous_points(config, x, system)
    if HETEROGENEOUS_CURVE in config.curves:
        points.append(_heterogeneous_point(config, x, cluster_count, p_com))
    logger.info("%s=%s done (%d curves)", config.sweep_field, x, len(points))
    return points


def _sort_key(point: CurvePoint):
    return point.curve, point.x


## Evaluate every requested curve at every sweep value.
# Sweep values are independent and run through joblib; rows are sorted by
# (curve, x) afterwards so the output does not depend on n_jobs.
def run_experiment(config: ExperimentConfig) -> list:
    values = config.sweep_values
    if config.n_jobs == 1:
        results = [evaluate_point(config, x) for x in values]
    else:
        results = Parallel(n_jobs=config.n_jobs)(delayed(evaluate_point)(config, x) for x in values)
    return sorted((p for points in results for p in points), key=_sort_key)


def _format(value) -> str:
    return "{:.12g}".format(value)


def emit_csv(points, filename: str) -> None:
    try:
        with open(filename, "w", newline="") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for p in sorted(points, key=_sort_key):
                writer.writerow((_format(p.x), p.curve, _format(p.loss), _format(p.p_fa), _format(p.p_md),
                                 p.method))
    except OSError as error:
        raise OutputError(filename, error.strerror or error)

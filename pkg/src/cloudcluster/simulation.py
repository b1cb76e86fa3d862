# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
import json
import logging
import math
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np
from joblib import Parallel, delayed

from cloudcluster.detection import *
from cloudcluster.optimizer import DEFAULT_CAPS, SystemMethods, evaluate_cluster, fusable

logger = logging.getLogger(__name__)

## Trials per RNG block. Block b always draws from the same stream, so the
# result does not depend on how blocks are distributed over workers.
BLOCK_SIZE = 8192


## Exception indicating a trial record that does not fit the system it is
# replayed against.
class ShapeMismatch(Exception):
    def __init__(self, record, system):
        self.record = record
        self.system = system

    def __str__(self):
        sizes = [c.size for c in self.system.clusters]
        return "Trial record does not match the system.\n" \
               "Cluster sizes expected: " + str(sizes) + "\n" \
               "Record sensor bits: " + str([len(b) for b in self.record.sensor_bits]) \
               + ", tau: " + str(len(self.record.tau)) + ", verdicts: " + str(len(self.record.verdicts))


class ReplayResult(str, Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"


## One realization of the generative process.
# Silent clusters (tau_j = 0) carry verdict 0.
@dataclass(frozen=True)
class TrialRecord:
    truth: int
    sensor_bits: tuple
    tau: tuple
    verdicts: tuple
    fc_decision: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrialRecord":
        return cls(int(data["truth"]), tuple(tuple(int(y) for y in bits) for bits in data["sensor_bits"]),
                   tuple(int(t) for t in data["tau"]), tuple(int(z) for z in data["verdicts"]),
                   int(data["fc_decision"]))


@dataclass(frozen=True)
class SimSummary:
    trials: int
    empirical_p_fa: float
    empirical_p_md: float
    empirical_loss: float
    seed: int
    h0_trials: int = 0
    h1_trials: int = 0
    tau_frequency: tuple = ()

    ## Binomial standard errors of the two conditional rates.
    @property
    def standard_errors(self):
        def se(p, n):
            return math.sqrt(p * (1.0 - p) / n) if n else math.nan
        return se(self.empirical_p_fa, self.h0_trials), se(self.empirical_p_md, self.h1_trials)


## Cluster pairs the FC fuses, as evaluate_system chooses them.
def default_cluster_errors(system: SystemSpec, caps=DEFAULT_CAPS) -> list:
    methods = SystemMethods.select(system, caps)
    return [fusable(evaluate_cluster(c, m, caps[0]), m) for c, m in zip(system.clusters, methods.clusters)]


def _block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


## Draw one block of trials.
# Returns truth, per-cluster sensor bits, tau, verdicts and FC decisions as arrays
# with the trial index along the first axis.
def _simulate_block(system: SystemSpec, cluster_errors, seed: int, block: int, count: int):
    rng = _block_generator(seed, block)
    truth = rng.random(count) < system.p1

    sensor_bits, tau, verdicts = [], np.zeros((count, system.cluster_count), dtype=bool), \
        np.zeros((count, system.cluster_count), dtype=bool)
    for j, cluster in enumerate(system.clusters):
        p_one = np.where(truth[:, None], 1.0 - cluster.p_md, cluster.p_fa)
        bits = rng.random((count, cluster.size)) < p_one
        links = rng.random((count, cluster.size)) < cluster.p_com
        tau[:, j] = links.any(axis=1)
        verdicts[:, j] = tau[:, j] & decides_h1(cluster_statistic(bits, cluster), cluster.gamma)
        sensor_bits.append(bits)

    decisions = decides_h1(fc_statistic(tau, verdicts, cluster_errors), system.gamma)
    return truth, sensor_bits, tau, verdicts, decisions


def _block_counts(system, cluster_errors, seed, block, count):
    truth, _, tau, _, decisions = _simulate_block(system, cluster_errors, seed, block, count)
    return (int(np.sum(~truth)), int(np.sum(truth)), int(np.sum(decisions & ~truth)),
            int(np.sum(~decisions & truth)), tau.sum(axis=0))


def _block_sizes(trials: int, block_size: int):
    return [min(block_size, trials - start) for start in range(0, trials, block_size)]


## This class provides the main interface for running a Monte Carlo simulation.
# The FC fuses verdicts with the weights of cluster_errors, which default to the
# exact (or bounded, above the caps) cluster error probabilities.
class MonteCarloSimulation:

    def __init__(self, system: SystemSpec, seed: int, cluster_errors=None,
                 block_size: int = BLOCK_SIZE, caps=DEFAULT_CAPS) -> None:
        if block_size < 1:
            raise ValueError("block_size must be positive")
        self.system = system
        self.seed = int(seed)
        self.block_size = block_size
        self.cluster_errors = list(cluster_errors) if cluster_errors is not None \
            else default_cluster_errors(system, caps)
        if len(self.cluster_errors) != system.cluster_count:
            raise MalformedMeasurement(system.cluster_count, len(self.cluster_errors))

    ## Run the given number of trials and aggregate conditional error rates.
    # The loss uses the configured prior, not the empirical hypothesis counts.
    def run(self, trials: int, n_jobs: int = 1) -> SimSummary:
        if trials < 1:
            raise ValueError("trials must be at least 1, got " + str(trials))
        sizes = _block_sizes(trials, self.block_size)
        args = [(self.system, self.cluster_errors, self.seed, b, count) for b, count in enumerate(sizes)]
        if n_jobs == 1:
            counts = [_block_counts(*a) for a in args]
        else:
            counts = Parallel(n_jobs=n_jobs)(delayed(_block_counts)(*a) for a in args)

        h0 = sum(c[0] for c in counts)
        h1 = sum(c[1] for c in counts)
        false_alarms = sum(c[2] for c in counts)
        misses = sum(c[3] for c in counts)
        tau_counts = np.sum([c[4] for c in counts], axis=0)
        assert h0 + h1 == trials

        p_fa = false_alarms / h0 if h0 else math.nan
        p_md = misses / h1 if h1 else math.nan
        loss = self.system.p0 * p_fa * self.system.loss_fa + self.system.p1 * p_md * self.system.loss_md
        logger.info("simulated %d trials (seed %d): p_fa=%.6g p_md=%.6g loss=%.6g",
                    trials, self.seed, p_fa, p_md, loss)
        return SimSummary(trials, p_fa, p_md, loss, self.seed, h0, h1,
                          tuple(float(t) for t in tau_counts / trials))

    ## Stream the same trials run() counts, one record at a time.
    def records(self, trials: int):
        for block, count in enumerate(_block_sizes(trials, self.block_size)):
            truth, bits, tau, verdicts, decisions = _simulate_block(
                self.system, self.cluster_errors, self.seed, block, count)
            for t in range(count):
                yield TrialRecord(int(truth[t]), tuple(tuple(int(y) for y in b[t]) for b in bits),
                                  tuple(int(x) for x in tau[t]), tuple(int(z) for z in verdicts[t]),
                                  int(decisions[t]))


def run_trials(system: SystemSpec, trials: int, seed: int, cluster_errors=None, n_jobs: int = 1,
               caps=DEFAULT_CAPS) -> SimSummary:
    return MonteCarloSimulation(system, seed, cluster_errors, caps=caps).run(trials, n_jobs)


def iter_trials(system: SystemSpec, trials: int, seed: int, cluster_errors=None, caps=DEFAULT_CAPS):
    return MonteCarloSimulation(system, seed, cluster_errors, caps=caps).records(trials)


def _check_shape(record: TrialRecord, system: SystemSpec):
    n = system.cluster_count
    if len(record.sensor_bits) != n or len(record.tau) != n or len(record.verdicts) != n:
        raise ShapeMismatch(record, system)
    if any(len(bits) != c.size for bits, c in zip(record.sensor_bits, system.clusters)):
        raise ShapeMismatch(record, system)


## Recompute verdicts and the FC decision from the raw bits of a record.
# Uses the same vectorized arithmetic as the simulator, on a one-row stack.
def replay(record: TrialRecord, system: SystemSpec, cluster_errors=None, caps=DEFAULT_CAPS) -> ReplayResult:
    _check_shape(record, system)
    cluster_errors = cluster_errors if cluster_errors is not None else default_cluster_errors(system, caps)

    tau = np.asarray(record.tau, dtype=bool)
    verdicts = np.zeros(system.cluster_count, dtype=bool)
    for j, (bits, cluster) in enumerate(zip(record.sensor_bits, system.clusters)):
        if tau[j]:
            statistic = cluster_statistic(np.asarray(bits)[None, :], cluster)[0]
            verdicts[j] = bool(decides_h1(statistic, cluster.gamma))

    decision = bool(decides_h1(fc_statistic(tau[None, :], verdicts[None, :], cluster_errors)[0], system.gamma))
    if tuple(int(z) for z in verdicts) != tuple(record.verdicts) or int(decision) != record.fc_decision:
        return ReplayResult.INCONSISTENT
    return ReplayResult.CONSISTENT


## Dumps trial records as line-delimited JSON.
def save_trace(records, filename: str) -> int:
    assert filename, "Error: Output filename not specified"
    written = 0
    with open(filename, "w") as file:
        for record in records:
            file.write(json.dumps(record.to_dict()) + "\n")
            written += 1
    return written


## Loads a trace written by save_trace().
def load_trace(filename: str) -> list:
    assert filename, "Error: Output filename not specified"
    with open(filename) as file:
        return [TrialRecord.from_dict(json.loads(line)) for line in file if line.strip()]

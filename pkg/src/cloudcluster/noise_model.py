# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
from abc import ABC, abstractmethod

import numpy as np

from cloudcluster.detection import *


## This class provides the basic interface for a model of sensor noise.
# It should do one thing: produce the error probabilities of a sensor.
# The index is the position of the sensor in the network and can be useful
# in looking up sensor specific data.
class SensorNoiseModel(ABC):

    ## Initialize noise model with the nominal error probabilities.
    def __init__(self, p_fa: float, p_md: float) -> None:
        SensorSpec(p_fa, p_md)
        self.p_fa = p_fa
        self.p_md = p_md

    @abstractmethod
    def sensor(self, p_com: float, sensor_id: int) -> SensorSpec:
        return SensorSpec(self.p_fa, self.p_md, p_com)

    ## Generate n sensors sharing a link probability.
    def generate(self, n_sensors: int, p_com: float) -> list:
        return [self.sensor(p_com, n) for n in range(n_sensors)]


## Every sensor has the nominal error probabilities.
class HomogeneousNoise(SensorNoiseModel):

    def sensor(self, p_com: float, sensor_id: int) -> SensorSpec:
        return super().sensor(p_com, sensor_id)


## Each sensor draws p_fa ~ U[p_fa(1-d), p_fa(1+d)] and p_md likewise.
# The draws are made in sensor order, two per sensor, from the given generator.
class HeterogeneousNoise(SensorNoiseModel):

    def __init__(self, p_fa: float, p_md: float, deviation: float, rng: np.random.Generator) -> None:
        super().__init__(p_fa, p_md)
        if not 0.0 <= deviation < 1.0:
            raise ValueError("deviation must lie in [0, 1), got " + str(deviation))
        if not (p_fa * (1.0 + deviation) < 0.5 and p_md * (1.0 + deviation) < 0.5):
            raise InvalidSensorSpec(p_fa * (1.0 + deviation), p_md * (1.0 + deviation))
        self.deviation = deviation
        self.rng = rng

    def sensor(self, p_com: float, sensor_id: int) -> SensorSpec:
        d = self.deviation
        p_fa = self.rng.uniform(self.p_fa * (1.0 - d), self.p_fa * (1.0 + d))
        p_md = self.rng.uniform(self.p_md * (1.0 - d), self.p_md * (1.0 + d))
        return SensorSpec(float(p_fa), float(p_md), p_com)


## Split total_sensors sensors into equal clusters at their midpoint thresholds.
def build_system(noise: SensorNoiseModel, total_sensors: int, cluster_count: int, p_com: float,
                 p1: float, loss_fa: float, loss_md: float) -> SystemSpec:
    if cluster_count < 1 or total_sensors % cluster_count:
        raise InvalidSystemSpec(str(total_sensors) + " sensors cannot form "
                                + str(cluster_count) + " equal clusters")
    sensors = noise.generate(total_sensors, p_com)
    size = total_sensors // cluster_count
    clusters = [ClusterSpec(sensors[j * size:(j + 1) * size]) for j in range(cluster_count)]
    return SystemSpec(clusters, p1, loss_fa, loss_md)

#!/usr/bin/env python3
"""
Emulated vision sensors.

Each incoming lane has a sensor watching the last ``coverage_length`` metres
before the stop line; each crossing has a pedestrian sensor that sees every
waiting pedestrian and the push-button bit. Vehicles upstream of the
coverage area are invisible to the agent and to sensor-based rewards.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .config_loader import ConfigError
from .simulation import JunctionConfig, SimConfig, ThroughputCounter, WorldState, take_throughput

logger = logging.getLogger(__name__)

__all__ = [
    'SensorConfig', 'LaneSensorSnapshot', 'PedSensorSnapshot', 'SensorFrame',
    'collect_snapshot', 'empty_frame', 'ThroughputCounter', 'take_throughput',
]


@dataclass
class SensorConfig:
    """Sensor placement for one junction."""
    lanes: List[str]
    crossings: List[str]
    coverage: Dict[str, float]
    lane_length: float
    vehicle_spacing: float
    wait_speed_threshold: float

    @classmethod
    def from_dict(cls, data: Dict, sim_config: SimConfig, junction: JunctionConfig) -> 'SensorConfig':
        default = float(data.get('coverage_length', 50.0))
        overrides = data.get('lane_coverage') or {}
        config = cls(
            lanes=list(junction.lanes),
            crossings=list(junction.crossings),
            coverage={lane: float(overrides.get(lane, default)) for lane in junction.lanes},
            lane_length=sim_config.lane_length,
            vehicle_spacing=sim_config.vehicle_spacing,
            wait_speed_threshold=sim_config.wait_speed_threshold,
        )
        config.validate()
        return config

    def validate(self):
        for lane, length in self.coverage.items():
            if length <= 0 or length > self.lane_length:
                raise ConfigError(f"Coverage of lane {lane} ({length} m) must lie in (0, {self.lane_length}]")

    def capacity(self, lane: str) -> float:
        """Vehicles that fit in the coverage area when stopped nose to tail."""
        return self.coverage[lane] / self.vehicle_spacing

    def covers(self, lane: str, position: float) -> bool:
        return self.lane_length - position <= self.coverage[lane]


@dataclass(frozen=True)
class LaneSensorSnapshot:
    lane: str
    queue: int
    count: int
    occupancy: float
    sum_wait: float
    speeds: Tuple[float, ...]
    flow: int

    def to_dict(self) -> Dict:
        return {
            'lane': self.lane,
            'queue': self.queue,
            'count': self.count,
            'occupancy': self.occupancy,
            'sum_wait': self.sum_wait,
            'speeds': list(self.speeds),
            'flow': self.flow,
        }


@dataclass(frozen=True)
class PedSensorSnapshot:
    crossing: str
    queue: int
    sum_wait: float
    button: bool

    def to_dict(self) -> Dict:
        return {'crossing': self.crossing, 'queue': self.queue,
                'sum_wait': self.sum_wait, 'button': self.button}


@dataclass(frozen=True)
class SensorFrame:
    """Every lane and pedestrian snapshot taken at one instant."""
    step: int
    time: float
    lanes: Tuple[LaneSensorSnapshot, ...] = field(default_factory=tuple)
    peds: Tuple[PedSensorSnapshot, ...] = field(default_factory=tuple)

    @property
    def vehicle_queue(self) -> int:
        return sum(s.queue for s in self.lanes)

    @property
    def ped_queue(self) -> int:
        return sum(s.queue for s in self.peds)

    @property
    def ped_wait(self) -> float:
        return sum(s.sum_wait for s in self.peds)

    @property
    def speeds(self) -> List[float]:
        return [speed for s in self.lanes for speed in s.speeds]

    @property
    def occupancies(self) -> List[float]:
        return [s.occupancy for s in self.lanes]

    @property
    def buttons(self) -> List[bool]:
        return [s.button for s in self.peds]

    def lane(self, name: str) -> LaneSensorSnapshot:
        for snapshot in self.lanes:
            if snapshot.lane == name:
                return snapshot
        raise KeyError(name)

    def crossing(self, name: str) -> PedSensorSnapshot:
        for snapshot in self.peds:
            if snapshot.crossing == name:
                return snapshot
        raise KeyError(name)

    def to_dict(self) -> Dict:
        return {
            'step': self.step,
            'time': self.time,
            'lanes': [s.to_dict() for s in self.lanes],
            'peds': [s.to_dict() for s in self.peds],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'SensorFrame':
        lanes = tuple(LaneSensorSnapshot(lane=s['lane'], queue=s['queue'], count=s['count'],
                                         occupancy=s['occupancy'], sum_wait=s['sum_wait'],
                                         speeds=tuple(s['speeds']), flow=s['flow'])
                      for s in data['lanes'])
        peds = tuple(PedSensorSnapshot(**s) for s in data['peds'])
        return cls(step=data['step'], time=data['time'], lanes=lanes, peds=peds)


def collect_snapshot(world: WorldState, sensors: SensorConfig) -> SensorFrame:
    """Read every sensor from the raw world state."""
    lanes = []
    for lane in sensors.lanes:
        visible = [v for v in world.lanes.get(lane, []) if sensors.covers(lane, v.position)]
        count = len(visible)
        lanes.append(LaneSensorSnapshot(
            lane=lane,
            queue=sum(1 for v in visible if v.speed < sensors.wait_speed_threshold),
            count=count,
            occupancy=min(count / sensors.capacity(lane), 1.0),
            sum_wait=sum(v.accumulated_wait for v in visible),
            speeds=tuple(v.speed for v in visible),
            flow=world.last_step_exits.get(lane, 0),
        ))

    waiting: Dict[str, List[float]] = {crossing: [] for crossing in sensors.crossings}
    for ped in world.waiting_pedestrians:
        waiting.setdefault(ped.crossing, []).append(ped.accumulated_wait)
    peds = tuple(
        PedSensorSnapshot(crossing=crossing, queue=len(waits), sum_wait=sum(waits), button=bool(waits))
        for crossing, waits in ((c, waiting[c]) for c in sensors.crossings)
    )

    return SensorFrame(step=world.step, time=world.clock, lanes=tuple(lanes), peds=peds)


def empty_frame(sensors: SensorConfig, step: int = 0, delta_t: float = 0.6) -> SensorFrame:
    """Frame of an empty network, used as the snapshot before the first action."""
    lanes = tuple(LaneSensorSnapshot(lane=lane, queue=0, count=0, occupancy=0.0, sum_wait=0.0,
                                     speeds=(), flow=0) for lane in sensors.lanes)
    peds = tuple(PedSensorSnapshot(crossing=c, queue=0, sum_wait=0.0, button=False) for c in sensors.crossings)
    return SensorFrame(step=step, time=step * delta_t, lanes=lanes, peds=peds)

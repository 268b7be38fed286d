#!/usr/bin/env python3
"""
Microscopic simulation of a four-arm signalised junction.

Vehicles move along six incoming lanes under a deterministic safe-speed
car-following rule and leave the network when they cross the stop line on
green. Pedestrians wait at four crossings until their phase turns green,
cross for a fixed duration and then depart. Time advances in fixed steps of
``delta_t`` seconds and is stored as an integer step counter.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config_loader import ConfigError, is_step_multiple

logger = logging.getLogger(__name__)

HOUR = 3600.0


@dataclass
class SimConfig:
    """Physical and numerical parameters of the simulation."""
    delta_t: float = 0.6
    lane_length: float = 150.0
    s_max: float = 13.89
    vehicle_spacing: float = 7.5
    accel: float = 2.6
    decel: float = 4.5
    startup_lost_time: float = 1.2
    wait_speed_threshold: float = 0.1
    crossing_duration: float = 8.4
    rng_seed: int = 0
    arrival_process: str = 'poisson'

    @classmethod
    def from_dict(cls, data: Dict) -> 'SimConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        config.validate()
        return config

    def validate(self):
        for name in ('delta_t', 'lane_length', 's_max', 'vehicle_spacing', 'accel', 'decel',
                     'wait_speed_threshold', 'crossing_duration'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"SimConfig.{name} must be strictly positive")
        if not is_step_multiple(self.crossing_duration, self.delta_t):
            raise ConfigError("crossing_duration must be a multiple of delta_t")
        if self.arrival_process not in ('poisson', 'uniform-headway'):
            raise ConfigError(f"Unknown arrival process: {self.arrival_process}")

    def steps(self, seconds: float) -> int:
        """Convert a duration to a whole number of simulation steps."""
        return int(round(seconds / self.delta_t))


@dataclass
class JunctionConfig:
    """Geometry of the junction: arms, lanes, crossings and the stage table."""
    arms: Dict[str, List[str]]
    crossings: List[str]
    turning_ratios: Dict[str, Dict[str, float]]
    stages: Dict[int, List[str]]
    movement_to_phase: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict) -> 'JunctionConfig':
        config = cls(
            arms={arm: list(lanes) for arm, lanes in data['arms'].items()},
            crossings=list(data['crossings']),
            turning_ratios={lane: dict(r) for lane, r in data['turning_ratios'].items()},
            stages={int(stage): list(phases) for stage, phases in data['stages'].items()},
            movement_to_phase=dict(data.get('movement_to_phase') or {}),
        )
        config.validate()
        return config

    @property
    def lanes(self) -> List[str]:
        return [lane for arm_lanes in self.arms.values() for lane in arm_lanes]

    @property
    def phases(self) -> List[str]:
        seen = []
        for movement in self.lanes + self.crossings:
            phase = self.phase_of(movement)
            if phase not in seen:
                seen.append(phase)
        return seen

    def phase_of(self, movement: str) -> str:
        """Phase (signal group) that greens a lane or crossing."""
        return self.movement_to_phase.get(movement, movement)

    def conflicts(self, phase_a: str, phase_b: str) -> bool:
        """Two distinct phases conflict when no stage greens both."""
        if phase_a == phase_b:
            return False
        return not any(phase_a in p and phase_b in p for p in self.stages.values())

    def validate(self):
        for lane in self.lanes:
            ratios = self.turning_ratios.get(lane)
            if not ratios:
                raise ConfigError(f"Lane {lane} has no turning ratios")
            if abs(sum(ratios.values()) - 1.0) > 1e-9:
                raise ConfigError(f"Turning ratios of lane {lane} must sum to 1")
        greened = {phase for phases in self.stages.values() for phase in phases}
        for movement in self.lanes + self.crossings:
            if self.phase_of(movement) not in greened:
                raise ConfigError(f"Movement {movement} is not greened by any stage")
        unknown = greened - set(self.phases)
        if unknown:
            raise ConfigError(f"Stages reference unknown phases: {sorted(unknown)}")


@dataclass
class DemandSchedule:
    """Arrival rates for one run."""
    vehicle_rate: float
    ped_rate: float
    d_hat_reference: float = 1714.0
    arm_split: Dict[str, float] = field(default_factory=lambda: {'N': 0.3, 'S': 0.3, 'E': 0.2, 'W': 0.2})
    d_hat_floor: float = 0.05

    @classmethod
    def from_dict(cls, data: Dict) -> 'DemandSchedule':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        schedule = cls(**known)
        schedule.validate()
        return schedule

    def validate(self):
        if self.vehicle_rate < 0 or self.ped_rate < 0:
            raise ConfigError("Demand rates must be >= 0")
        if self.d_hat_reference <= 0:
            raise ConfigError("d_hat_reference must be > 0")
        if self.d_hat_floor <= 0:
            raise ConfigError("d_hat_floor must be > 0")
        if any(w < 0 for w in self.arm_split.values()):
            raise ConfigError("arm_split weights must be >= 0")
        if self.vehicle_rate > 0 and sum(self.arm_split.values()) <= 0:
            raise ConfigError("arm_split must give some arm a positive weight")


def demand_estimate(schedule: DemandSchedule) -> float:
    """Dimensionless demand estimate d_hat = vehicle_rate / reference rate.

    Rates may be zero but d_hat divides some rewards, so it never drops below
    ``d_hat_floor``.
    """
    if schedule.d_hat_reference <= 0:
        raise ConfigError("d_hat_reference must be > 0")
    return max(schedule.vehicle_rate / schedule.d_hat_reference, schedule.d_hat_floor)


@dataclass
class Vehicle:
    id: int
    lane: str
    position: float
    speed: float
    entry_time: float
    destination: str
    accumulated_wait: float = 0.0
    accumulated_delay: float = 0.0


@dataclass
class Pedestrian:
    id: int
    crossing: str
    entry_time: float
    accumulated_wait: float = 0.0
    button_pressed: bool = True
    state: str = 'waiting'
    crossing_steps_left: int = 0


@dataclass
class ThroughputCounter:
    """Entities that crossed the junction since the last reset."""
    rho_v: int = 0
    rho_p: int = 0


def take_throughput(counter: ThroughputCounter) -> Tuple[int, int]:
    """Return counts since the previous call and reset the counter."""
    counts = (counter.rho_v, counter.rho_p)
    counter.rho_v = 0
    counter.rho_p = 0
    return counts


@dataclass
class WorldState:
    """Every entity in the network plus the simulation clock."""
    delta_t: float
    rng: np.random.Generator
    step: int = 0
    lanes: Dict[str, List[Vehicle]] = field(default_factory=dict)
    pedestrians: List[Pedestrian] = field(default_factory=list)
    holding: Dict[str, List[Tuple[float, str]]] = field(default_factory=dict)
    vehicles_entered: int = 0
    vehicles_exited: int = 0
    peds_entered: int = 0
    peds_exited: int = 0
    vehicles_generated: int = 0
    peds_generated: int = 0
    throughput: ThroughputCounter = field(default_factory=ThroughputCounter)
    green_steps: Dict[str, int] = field(default_factory=dict)
    last_step_exits: Dict[str, int] = field(default_factory=dict)
    completed_vehicle_waits: List[float] = field(default_factory=list)
    served_ped_waits: List[float] = field(default_factory=list)
    vehicle_arrival_index: int = 0
    ped_arrival_index: int = 0
    next_vehicle_id: int = 0
    next_ped_id: int = 0

    @property
    def clock(self) -> float:
        return self.step * self.delta_t

    @property
    def vehicles(self) -> List[Vehicle]:
        return [v for lane_vehicles in self.lanes.values() for v in lane_vehicles]

    @property
    def waiting_pedestrians(self) -> List[Pedestrian]:
        return [p for p in self.pedestrians if p.state == 'waiting']

    @property
    def vehicles_in_network(self) -> int:
        return sum(len(lane_vehicles) for lane_vehicles in self.lanes.values())

    def vehicle_waits(self) -> List[float]:
        """Waiting times of every vehicle that entered: exited ones plus those still present."""
        return self.completed_vehicle_waits + [v.accumulated_wait for v in self.vehicles]

    def pedestrian_waits(self) -> List[float]:
        """Waiting times of every pedestrian that entered: served ones plus those still waiting."""
        return self.served_ped_waits + [p.accumulated_wait for p in self.waiting_pedestrians]


class Simulator:
    """Advances a WorldState one step at a time for a given junction and demand."""

    def __init__(self, sim_config: SimConfig, junction: JunctionConfig, demand: DemandSchedule):
        self.config = sim_config
        self.junction = junction
        self.demand = demand
        self.crossing_steps = sim_config.steps(sim_config.crossing_duration)
        self._arm_names = list(junction.arms)
        self._lane_phase = {lane: junction.phase_of(lane) for lane in junction.lanes}
        self._crossing_phase = {c: junction.phase_of(c) for c in junction.crossings}

    def new_world(self, seed: Optional[int] = None) -> WorldState:
        """Create an empty network with its own RNG stream."""
        seed = self.config.rng_seed if seed is None else seed
        world = WorldState(delta_t=self.config.delta_t, rng=np.random.default_rng(seed))
        for lane in self.junction.lanes:
            world.lanes[lane] = []
            world.holding[lane] = []
            world.last_step_exits[lane] = 0
        for phase in self.junction.phases:
            world.green_steps[phase] = 0
        logger.debug(f"New world created with seed {seed}")
        return world

    def advance(self, world: WorldState, signal_state: Dict[str, bool]) -> WorldState:
        """One full step: move vehicles and pedestrians, tick the clock, then admit arrivals."""
        dt = self.config.delta_t
        self.step_vehicles(world, signal_state, dt)
        self.step_pedestrians(world, signal_state, dt)
        for phase in world.green_steps:
            world.green_steps[phase] = world.green_steps[phase] + 1 if signal_state.get(phase, False) else 0
        world.step += 1
        self.spawn_arrivals(world, self.demand, dt)
        return world

    # ------------------------------------------------------------------
    # Arrivals
    # ------------------------------------------------------------------

    def spawn_arrivals(self, world: WorldState, demand: DemandSchedule, dt: float) -> WorldState:
        """Generate arrivals over the interval (clock - dt, clock] and insert them where there is room."""
        t_end = world.clock
        t_start = t_end - dt

        for lane in self.junction.lanes:
            self._drain_holding(world, lane)

        for arrival_time in self._vehicle_arrival_times(world, demand, t_start, t_end):
            arm = self._sample_arm(world, demand)
            lanes = self.junction.arms[arm]
            lane = lanes[int(world.rng.integers(len(lanes)))] if len(lanes) > 1 else lanes[0]
            destination = self._sample_destination(world, lane)
            world.vehicles_generated += 1
            world.holding[lane].append((arrival_time, destination))
            self._drain_holding(world, lane)

        for crossing, arrival_time in self._ped_arrivals(world, demand, t_start, t_end):
            world.pedestrians.append(Pedestrian(id=world.next_ped_id, crossing=crossing, entry_time=arrival_time))
            world.next_ped_id += 1
            world.peds_entered += 1
            world.peds_generated += 1

        return world

    def _vehicle_arrival_times(self, world: WorldState, demand: DemandSchedule,
                               t_start: float, t_end: float) -> List[float]:
        if demand.vehicle_rate <= 0:
            return []
        if self.config.arrival_process == 'poisson':
            count = int(world.rng.poisson(demand.vehicle_rate * (t_end - t_start) / HOUR))
            return [t_end] * count
        headway = HOUR / demand.vehicle_rate
        times = []
        while (world.vehicle_arrival_index + 1) * headway <= t_end + 1e-9:
            world.vehicle_arrival_index += 1
            times.append(world.vehicle_arrival_index * headway)
        return times

    def _ped_arrivals(self, world: WorldState, demand: DemandSchedule,
                      t_start: float, t_end: float) -> List[Tuple[str, float]]:
        if demand.ped_rate <= 0:
            return []
        arrivals = []
        if self.config.arrival_process == 'poisson':
            lam = demand.ped_rate * (t_end - t_start) / HOUR
            for crossing in self.junction.crossings:
                arrivals.extend((crossing, t_end) for _ in range(int(world.rng.poisson(lam))))
            return arrivals
        headway = HOUR / demand.ped_rate
        while (world.ped_arrival_index + 1) * headway <= t_end + 1e-9:
            world.ped_arrival_index += 1
            arrival_time = world.ped_arrival_index * headway
            arrivals.extend((crossing, arrival_time) for crossing in self.junction.crossings)
        return arrivals

    def _sample_arm(self, world: WorldState, demand: DemandSchedule) -> str:
        weights = np.array([demand.arm_split.get(arm, 0.0) for arm in self._arm_names], dtype=float)
        cumulative = np.cumsum(weights / weights.sum())
        draw = world.rng.random()
        index = int(np.searchsorted(cumulative, draw, side='right'))
        return self._arm_names[min(index, len(self._arm_names) - 1)]

    def _sample_destination(self, world: WorldState, lane: str) -> str:
        ratios = self.junction.turning_ratios[lane]
        if len(ratios) == 1:
            return next(iter(ratios))
        draw = world.rng.random()
        cumulative = 0.0
        for destination, probability in ratios.items():
            cumulative += probability
            if draw < cumulative:
                return destination
        return destination

    def _drain_holding(self, world: WorldState, lane: str):
        """Insert held vehicles while the lane entry has room (FIFO)."""
        buffer = world.holding[lane]
        while buffer:
            queue = world.lanes[lane]
            tail = queue[-1] if queue else None
            if tail is not None:
                gap = tail.position - self.config.vehicle_spacing
                if gap < 0:
                    break
                speed = min(self.config.s_max, self.safe_speed(gap, tail.speed))
            else:
                speed = self.config.s_max
            arrival_time, destination = buffer.pop(0)
            queue.append(Vehicle(id=world.next_vehicle_id, lane=lane, position=0.0, speed=speed,
                                 entry_time=world.clock, destination=destination))
            world.next_vehicle_id += 1
            world.vehicles_entered += 1
            if world.clock - arrival_time > 1e-9:
                logger.debug(f"Deferred arrival inserted on {lane} after {world.clock - arrival_time:.1f}s")

    # ------------------------------------------------------------------
    # Vehicle dynamics
    # ------------------------------------------------------------------

    def safe_speed(self, gap: float, leader_speed: float) -> float:
        """Largest speed from which the vehicle can still stop behind an obstacle ``gap`` metres ahead."""
        b_dt = self.config.decel * self.config.delta_t
        radicand = b_dt * b_dt + 2.0 * self.config.decel * max(gap, 0.0) + leader_speed * leader_speed
        return max(0.0, -b_dt + math.sqrt(radicand))

    def step_vehicles(self, world: WorldState, signal_state: Dict[str, bool], dt: float) -> WorldState:
        """Update speeds head-first, move vehicles, accrue wait and delay, and remove those that cleared."""
        cfg = self.config
        lost_steps = cfg.steps(cfg.startup_lost_time)

        for lane in self.junction.lanes:
            phase = self._lane_phase[lane]
            green = signal_state.get(phase, False)
            stop_line_open = green and world.green_steps.get(phase, 0) >= lost_steps
            world.last_step_exits[lane] = 0

            survivors: List[Vehicle] = []
            leader: Optional[Vehicle] = None
            for vehicle in world.lanes[lane]:
                limit = min(vehicle.speed + cfg.accel * dt, cfg.s_max)
                if leader is not None:
                    gap = leader.position - cfg.vehicle_spacing - vehicle.position
                    limit = min(limit, self.safe_speed(gap, leader.speed), max(gap, 0.0) / dt)
                if not stop_line_open:
                    gap = cfg.lane_length - vehicle.position
                    limit = min(limit, self.safe_speed(gap, 0.0), max(gap, 0.0) / dt)
                new_speed = max(0.0, limit)

                vehicle.speed = new_speed
                vehicle.position += new_speed * dt
                if new_speed < cfg.wait_speed_threshold:
                    vehicle.accumulated_wait += dt
                delay = dt * (1.0 - new_speed / cfg.s_max)
                vehicle.accumulated_delay += delay

                if vehicle.position > cfg.lane_length:
                    world.vehicles_exited += 1
                    world.throughput.rho_v += 1
                    world.last_step_exits[lane] += 1
                    world.completed_vehicle_waits.append(vehicle.accumulated_wait)
                    continue
                survivors.append(vehicle)
                leader = vehicle

            world.lanes[lane] = survivors
        return world

    # ------------------------------------------------------------------
    # Pedestrian dynamics
    # ------------------------------------------------------------------

    def step_pedestrians(self, world: WorldState, signal_state: Dict[str, bool], dt: float) -> WorldState:
        """Waiting pedestrians start crossing on green, crossing ones depart after the crossing duration."""
        remaining: List[Pedestrian] = []
        for ped in world.pedestrians:
            if ped.state == 'waiting':
                if signal_state.get(self._crossing_phase[ped.crossing], False):
                    ped.state = 'crossing'
                    ped.button_pressed = False
                    ped.crossing_steps_left = self.crossing_steps
                    world.served_ped_waits.append(ped.accumulated_wait)
                else:
                    ped.accumulated_wait += dt
                remaining.append(ped)
            elif ped.state == 'crossing':
                ped.crossing_steps_left -= 1
                if ped.crossing_steps_left <= 0:
                    ped.state = 'departed'
                    world.peds_exited += 1
                    world.throughput.rho_p += 1
                    continue
                remaining.append(ped)
        world.pedestrians = remaining
        return world

    def button_state(self, world: WorldState, crossing: str) -> bool:
        """Push-button bit for a crossing: pressed while anyone waits there."""
        return any(p.crossing == crossing and p.state == 'waiting' for p in world.pedestrians)

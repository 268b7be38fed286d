#!/usr/bin/env python3
"""
Decision-point environment.

Couples the simulator, the signal controller, the sensors and the state
encoder. ``reset`` and ``step`` move the world from one controller decision
point to the next and return the observation, the reward for the interval
just closed and the DecisionContext it was computed from. An episode is a
fixed number of simulation steps; its last interval is closed by a truncated
transition at the episode end.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np

from .config_loader import ConfigLoader
from .rewards import (DecisionContext, PedestrianRecord, RewardSpec, VehicleRecord,
                      compute_all, compute_reward)
from .sensors import SensorConfig, SensorFrame, collect_snapshot, empty_frame
from .signal_controller import ControllerConfig, ControllerMode, ControllerState, SignalController
from .simulation import (DemandSchedule, JunctionConfig, SimConfig, Simulator, WorldState,
                         demand_estimate, take_throughput)
from .state_encoder import EncoderConfig, StateEncoder

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when the world breaks a safety or conservation invariant."""


@dataclass
class ActionSnapshot:
    """What the rewards need to remember about one decision instant."""
    step: int
    time: float
    frame: SensorFrame
    delays: Dict[int, float] = field(default_factory=dict)
    vehicle_wait: float = 0.0
    ped_wait: float = 0.0


@dataclass
class SafetyReport:
    conflicting_green_steps: int = 0
    min_green_violations: int = 0
    conservation_violations: int = 0
    collisions: int = 0
    speed_violations: int = 0

    @property
    def clean(self) -> bool:
        return not any((self.conflicting_green_steps, self.min_green_violations,
                        self.conservation_violations, self.collisions, self.speed_violations))

    def to_dict(self) -> Dict:
        return {
            'conflicting_green_steps': self.conflicting_green_steps,
            'min_green_violations': self.min_green_violations,
            'conservation_violations': self.conservation_violations,
            'collisions': self.collisions,
            'speed_violations': self.speed_violations,
        }


class SafetyMonitor:
    """Checks every simulated step against the controller and world invariants."""

    def __init__(self, controller: SignalController, sim_config: SimConfig, strict: bool = True):
        self.controller = controller
        self.sim_config = sim_config
        self.strict = strict
        self.report = SafetyReport()
        self._previous_mode: Optional[ControllerMode] = None
        self._green_run = 0

    def reset(self):
        self.report = SafetyReport()
        self._previous_mode = None
        self._green_run = 0

    def _fail(self, message: str):
        if self.strict:
            raise SimulationError(message)
        logger.warning(message)

    def check(self, world: WorldState, ctrl: ControllerState, signal_state: Dict[str, bool],
              mode_during_step: ControllerMode):
        conflicts = self.controller.conflicting_greens(signal_state)
        if conflicts:
            self.report.conflicting_green_steps += 1
            self._fail(f"Conflicting greens {conflicts} at step {world.step}")

        if mode_during_step == ControllerMode.GREEN:
            self._green_run += 1
        elif self._previous_mode == ControllerMode.GREEN:
            if self._green_run < self.controller.min_green_steps:
                self.report.min_green_violations += 1
                self._fail(f"Green lasted {self._green_run} steps, below the minimum "
                           f"{self.controller.min_green_steps} (step {world.step})")
            self._green_run = 0
        self._previous_mode = mode_during_step

        in_network = world.vehicles_in_network
        waiting_or_crossing = len(world.pedestrians)
        if (world.vehicles_entered != world.vehicles_exited + in_network
                or world.peds_entered != world.peds_exited + waiting_or_crossing):
            self.report.conservation_violations += 1
            self._fail(f"Conservation broken at step {world.step}")

        spacing = self.sim_config.vehicle_spacing
        for lane, vehicles in world.lanes.items():
            for leader, follower in zip(vehicles, vehicles[1:]):
                if leader.position - follower.position < spacing - 1e-9:
                    self.report.collisions += 1
                    self._fail(f"Vehicles {leader.id} and {follower.id} overlap on {lane} at step {world.step}")
            for vehicle in vehicles:
                if not 0.0 <= vehicle.speed <= self.sim_config.s_max + 1e-12:
                    self.report.speed_violations += 1
                    self._fail(f"Vehicle {vehicle.id} speed {vehicle.speed} out of bounds")


@dataclass
class EpisodeMetrics:
    """Waiting-time and throughput totals for one finished episode."""
    mean_vehicle_wait: float
    mean_ped_wait: float
    vehicles_entered: int
    vehicles_exited: int
    peds_entered: int
    peds_exited: int
    decisions: int
    green_shares: Dict[int, float]

    @property
    def combined_wait(self) -> float:
        return 0.5 * (self.mean_vehicle_wait + self.mean_ped_wait)

    def to_dict(self) -> Dict:
        return {
            'mean_vehicle_wait': self.mean_vehicle_wait,
            'mean_ped_wait': self.mean_ped_wait,
            'combined_wait': self.combined_wait,
            'vehicles_entered': self.vehicles_entered,
            'vehicles_exited': self.vehicles_exited,
            'peds_entered': self.peds_entered,
            'peds_exited': self.peds_exited,
            'decisions': self.decisions,
            **{f"green_share_stage{stage}": share for stage, share in self.green_shares.items()},
        }


class TrafficEnvironment:
    """One junction, one controller, stepped from decision point to decision point."""

    def __init__(self, sim_config: SimConfig, junction: JunctionConfig, demand: DemandSchedule,
                 controller_config: ControllerConfig, sensor_config: SensorConfig,
                 encoder_config: EncoderConfig, reward_spec: Optional[RewardSpec] = None,
                 episode_steps: int = 3000, strict_safety: bool = True):
        self.sim_config = sim_config
        self.junction = junction
        self.demand = demand
        self.simulator = Simulator(sim_config, junction, demand)
        self.controller = SignalController(controller_config, junction, sim_config.delta_t)
        self.sensor_config = sensor_config
        self.encoder = StateEncoder(encoder_config, len(junction.lanes), len(junction.crossings))
        self.reward_spec = reward_spec
        self.episode_steps = episode_steps
        self.d_hat = demand_estimate(demand)
        self.monitor = SafetyMonitor(self.controller, sim_config, strict=strict_safety)

        self.world: Optional[WorldState] = None
        self.ctrl: Optional[ControllerState] = None
        self.frame: Optional[SensorFrame] = None
        self.decisions = 0
        self.done = True
        self._snapshots: Deque[ActionSnapshot] = deque(maxlen=2)

    @classmethod
    def from_config(cls, config: ConfigLoader, reward_spec: Optional[RewardSpec] = None,
                    demand_overrides: Optional[Dict] = None, episode_steps: Optional[int] = None,
                    strict_safety: bool = True) -> 'TrafficEnvironment':
        sim_config = SimConfig.from_dict(config.get('simulation', {}))
        junction = JunctionConfig.from_dict(config.get('junction', {}))
        demand_data = dict(config.get('demand', {}))
        demand_data.update(demand_overrides or {})
        demand = DemandSchedule.from_dict(demand_data)
        return cls(
            sim_config=sim_config,
            junction=junction,
            demand=demand,
            controller_config=ControllerConfig.from_dict(config.get('controller', {}), sim_config.delta_t),
            sensor_config=SensorConfig.from_dict(config.get('sensors', {}), sim_config, junction),
            encoder_config=EncoderConfig.from_dict(config.get('encoder', {})),
            reward_spec=reward_spec,
            episode_steps=episode_steps or config.get('harness.episode_steps', 3000),
            strict_safety=strict_safety,
        )

    def set_demand(self, demand: DemandSchedule):
        """Swap the arrival rates used from the next reset on."""
        self.demand = demand
        self.simulator.demand = demand
        self.d_hat = demand_estimate(demand)

    @property
    def observation_size(self) -> int:
        return self.encoder.observation_size

    @property
    def time(self) -> float:
        return self.world.clock if self.world is not None else 0.0

    def _take_snapshot(self) -> ActionSnapshot:
        world = self.world
        return ActionSnapshot(
            step=world.step,
            time=world.clock,
            frame=self.frame,
            delays={v.id: v.accumulated_delay for v in world.vehicles},
            vehicle_wait=sum(v.accumulated_wait for v in world.vehicles),
            ped_wait=sum(p.accumulated_wait for p in world.waiting_pedestrians),
        )

    def _advance_one_step(self):
        mode = self.ctrl.mode
        self.ctrl, signal_state = self.controller.tick(self.ctrl, self.sim_config.delta_t)
        self.world = self.simulator.advance(self.world, signal_state)
        self.monitor.check(self.world, self.ctrl, signal_state, mode)
        self.frame = collect_snapshot(self.world, self.sensor_config)
        in_transition = self.ctrl.mode != ControllerMode.GREEN
        stage = self.encoder.stage_for(self.ctrl.active_stage, self.ctrl.target_stage, in_transition)
        self.encoder.push(stage, self.frame)

    def _run_to_decision(self):
        while self.world.step < self.episode_steps and not self.controller.is_decision_point(self.ctrl):
            self._advance_one_step()
        self.done = self.world.step >= self.episode_steps

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        """Empty network at t = 0, advanced to the first decision point."""
        self.world = self.simulator.new_world(seed)
        self.ctrl = self.controller.initial_state()
        self.encoder.reset()
        self.monitor.reset()
        self.decisions = 0
        self.frame = empty_frame(self.sensor_config, 0, self.sim_config.delta_t)
        start = ActionSnapshot(step=0, time=0.0, frame=self.frame)
        self._snapshots.clear()
        self._snapshots.extend([start, start])
        self._run_to_decision()
        return self.encoder.encode()

    def build_context(self) -> DecisionContext:
        """Context for the interval closed at the current instant."""
        world = self.world
        previous2, previous = self._snapshots[0], self._snapshots[1]
        rho_v, rho_p = take_throughput(world.throughput)
        vehicles = [
            VehicleRecord(id=v.id, lane=v.lane, speed=v.speed, wait=v.accumulated_wait,
                          delay=v.accumulated_delay,
                          delay_prev=previous.delays.get(v.id, 0.0),
                          delay_prev2=previous2.delays.get(v.id, 0.0))
            for v in world.vehicles
        ]
        pedestrians = [PedestrianRecord(id=p.id, crossing=p.crossing, wait=p.accumulated_wait)
                       for p in world.waiting_pedestrians]
        return DecisionContext(
            t=world.clock, t_prev=previous.time, t_prev2=previous2.time,
            frame=self.frame, frame_prev=previous.frame,
            vehicles=vehicles, pedestrians=pedestrians,
            vehicle_wait_prev=previous.vehicle_wait, ped_wait_prev=previous.ped_wait,
            rho_v=rho_v, rho_p=rho_p, d_hat=self.d_hat, s_max=self.sim_config.s_max,
        )

    def step(self, stage: int) -> Tuple[np.ndarray, Optional[float], bool, Dict]:
        """Apply ``stage`` at the current decision point and run to the next one (or the episode end)."""
        if self.done:
            raise SimulationError("step() called on a finished episode; call reset() first")
        if self.decisions == 0:
            take_throughput(self.world.throughput)
        self.ctrl = self.controller.request_stage(self.ctrl, stage)
        self._snapshots.append(self._take_snapshot())
        self.decisions += 1

        self._advance_one_step()
        self._run_to_decision()

        context = self.build_context()
        reward = compute_reward(self.reward_spec, context) if self.reward_spec else None
        info = {'context': context, 'truncated': self.done, 'step': self.world.step}
        return self.encoder.encode(), reward, self.done, info

    def all_rewards(self, context: DecisionContext, literal_mode: Optional[bool] = None) -> Dict[str, float]:
        spec = self.reward_spec
        tau_max = spec.tau_max if spec else 120.0
        p_max = spec.p_max if spec else 10.0
        literal = spec.literal_mode if (spec and literal_mode is None) else bool(literal_mode)
        return compute_all(context, tau_max, p_max, literal)

    def metrics(self) -> EpisodeMetrics:
        world = self.world
        vehicle_waits: List[float] = world.vehicle_waits()
        ped_waits: List[float] = world.pedestrian_waits()
        return EpisodeMetrics(
            mean_vehicle_wait=float(np.mean(vehicle_waits)) if vehicle_waits else 0.0,
            mean_ped_wait=float(np.mean(ped_waits)) if ped_waits else 0.0,
            vehicles_entered=world.vehicles_entered,
            vehicles_exited=world.vehicles_exited,
            peds_entered=world.peds_entered,
            peds_exited=world.peds_exited,
            decisions=self.decisions,
            green_shares=self.controller.green_shares(self.ctrl),
        )

#!/usr/bin/env python3
"""
Reference stage policies.

Maximum Occupancy requests the stage serving the longest queue. Vehicle
Actuated (System D style) holds the active stage while its detectors see
vehicles, in fixed extension units up to a maximum green, and otherwise
rotates to the next stage with demand. A seeded random policy is included
for traces. All policies answer at controller decision points only.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config_loader import ConfigError, duration_steps
from .sensors import SensorFrame
from .signal_controller import (SELECTABLE_STAGES, TRANSIT_STAGE, TRANSIT_TARGET,
                                ControllerState, SignalController)

logger = logging.getLogger(__name__)


class StagePolicy:
    """Common interface of everything that can drive the signal controller."""

    name = 'policy'

    def reset(self, seed: Optional[int] = None):
        pass

    def act(self, observation: np.ndarray, frame: SensorFrame, ctrl: ControllerState) -> int:
        raise NotImplementedError


def served_movements(controller: SignalController, routed: bool = True) -> Dict[int, Dict[str, List[str]]]:
    """Lanes and crossings each selectable stage serves.

    With ``routed`` set, Stage 2 also serves the Stage 1 lanes, since a request
    for it from another stage runs through the transit stage first.
    """
    junction = controller.junction
    served = {}
    for stage in SELECTABLE_STAGES:
        phases = set(controller.stages[stage].green_phases)
        if routed and stage == TRANSIT_TARGET and TRANSIT_STAGE in controller.stages:
            phases |= controller.stages[TRANSIT_STAGE].green_phases
        served[stage] = {
            'lanes': [lane for lane in junction.lanes if junction.phase_of(lane) in phases],
            'crossings': [c for c in junction.crossings if junction.phase_of(c) in phases],
        }
    return served


class StageCoverage:
    """Which lanes count for a stage, given the stage that is green now.

    A Stage 2 request from Stage 2 is an extension, so the lanes only the
    transit stage greens are not served by it. While Stage 2 is active those
    lanes count for the other vehicle stages, since leaving is the only way
    back to the transit.
    """

    def __init__(self, controller: SignalController):
        self.own = served_movements(controller, routed=False)
        self.routed = served_movements(controller, routed=True)
        self.transit_only = [lane for lane in self.routed.get(TRANSIT_TARGET, {}).get('lanes', [])
                             if lane not in self.own[TRANSIT_TARGET]['lanes']]

    def reachable(self, stage: int, active: int) -> List[str]:
        """Lanes a request for ``stage`` actually turns green."""
        if stage == active:
            return self.own[stage]['lanes']
        return self.routed[stage]['lanes']

    def lanes(self, stage: int, active: int) -> List[str]:
        lanes = self.reachable(stage, active)
        if active == TRANSIT_TARGET and stage != active and self.own[stage]['lanes']:
            return lanes + self.transit_only
        return lanes

    def crossings(self, stage: int) -> List[str]:
        return self.own[stage]['crossings']

    def stranded(self, active: int, frame: SensorFrame) -> bool:
        """Vehicles on lanes the active stage can only reach by leaving."""
        return active == TRANSIT_TARGET and any(frame.lane(lane).count > 0 for lane in self.transit_only)


class MaximumOccupancy(StagePolicy):
    """Longest queue first."""

    name = 'mo'

    def __init__(self, controller: SignalController):
        self.coverage = StageCoverage(controller)

    def stage_queue_sums(self, frame: SensorFrame, active: int) -> Dict[int, int]:
        sums = {}
        for stage in SELECTABLE_STAGES:
            sums[stage] = (sum(frame.lane(lane).queue for lane in self.coverage.lanes(stage, active))
                           + sum(frame.crossing(c).queue for c in self.coverage.crossings(stage)))
        return sums

    def decide(self, frame: SensorFrame, ctrl: ControllerState) -> int:
        sums = self.stage_queue_sums(frame, ctrl.active_stage)
        best = max(sums.values())
        if sums.get(ctrl.active_stage) == best:
            return ctrl.active_stage
        return min(stage for stage, total in sums.items() if total == best)

    def act(self, observation, frame, ctrl):
        return self.decide(frame, ctrl)


@dataclass
class VAConfig:
    extension: float = 1.5
    max_green: float = 60.0
    rotation: List[int] = field(default_factory=lambda: [2, 4, 3])

    @classmethod
    def from_dict(cls, data: Dict) -> 'VAConfig':
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        if config.extension <= 0 or config.max_green <= 0:
            raise ConfigError("va.extension and va.max_green must be > 0")
        if sorted(config.rotation) != sorted(SELECTABLE_STAGES):
            raise ConfigError(f"va.rotation must be a permutation of {SELECTABLE_STAGES}")
        return config


class VehicleActuated(StagePolicy):
    """Detector-triggered green extensions with a maximum green and a fixed stage rotation."""

    name = 'va'

    def __init__(self, controller: SignalController, config: Optional[VAConfig] = None):
        self.config = config or VAConfig()
        self.delta_t = controller.delta_t
        self.coverage = StageCoverage(controller)
        self.extension_holds = duration_steps(self.config.extension, self.delta_t)
        self.max_green_steps = max(duration_steps(self.config.max_green, self.delta_t),
                                   controller.min_green_steps)
        self.holds_remaining = 0

    def reset(self, seed: Optional[int] = None):
        self.holds_remaining = 0

    def has_demand(self, stage: int, active: int, frame: SensorFrame) -> bool:
        return (any(frame.lane(lane).count > 0 for lane in self.coverage.reachable(stage, active))
                or any(frame.crossing(c).button for c in self.coverage.crossings(stage)))

    def detects(self, stage: int, frame: SensorFrame) -> bool:
        """Presence on the lanes the stage itself greens."""
        return any(frame.lane(lane).count > 0 for lane in self.coverage.own[stage]['lanes'])

    def _rotation_after(self, stage: int) -> List[int]:
        order = self.config.rotation
        start = order.index(stage) + 1
        return [order[(start + i) % len(order)] for i in range(len(order) - 1)]

    def next_stage(self, frame: SensorFrame, active: int, forced: bool) -> int:
        candidates = self._rotation_after(active)
        for stage in candidates:
            if self.has_demand(stage, active, frame):
                return stage
        if forced or self.coverage.stranded(active, frame):
            for stage in candidates:
                if self.coverage.own[stage]['lanes']:
                    return stage
            return candidates[0]
        return active

    def decide(self, frame: SensorFrame, ctrl: ControllerState) -> int:
        active = ctrl.active_stage
        if ctrl.elapsed_steps + 1 > self.max_green_steps:
            self.holds_remaining = 0
            return self.next_stage(frame, active, forced=True)

        if self.detects(active, frame):
            self.holds_remaining = self.extension_holds
        if self.holds_remaining > 0:
            self.holds_remaining -= 1
            return active

        choice = self.next_stage(frame, active, forced=False)
        if choice != active:
            self.holds_remaining = 0
        return choice

    def act(self, observation, frame, ctrl):
        return self.decide(frame, ctrl)


class RandomPolicy(StagePolicy):
    """Uniform over the selectable stages, from its own seeded stream."""

    name = 'random'

    def __init__(self, seed: int = 0, stages: Sequence[int] = SELECTABLE_STAGES):
        self.stages = list(stages)
        self.rng = np.random.default_rng(seed)

    def reset(self, seed: Optional[int] = None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)

    def act(self, observation, frame, ctrl):
        return self.stages[int(self.rng.integers(len(self.stages)))]


def make_baseline(name: str, controller: SignalController, config: Optional[Dict] = None,
                  seed: int = 0) -> StagePolicy:
    config = config or {}
    if name == 'mo':
        return MaximumOccupancy(controller)
    if name == 'va':
        return VehicleActuated(controller, VAConfig.from_dict(config.get('va', {})))
    if name == 'random':
        return RandomPolicy(seed)
    raise ConfigError(f"Unknown baseline controller '{name}'; choose mo, va or random")

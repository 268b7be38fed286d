#!/usr/bin/env python3
"""
Emulated traffic signal controller.

Enforces minimum greens, intergreen transitions and the rule that Stage 2
is reached through the transitional Stage 1 whenever it is requested from
another stage. Requests are only accepted at decision points.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple

from .config_loader import ConfigError, duration_steps
from .simulation import JunctionConfig

logger = logging.getLogger(__name__)

SELECTABLE_STAGES = (2, 3, 4)
TRANSIT_STAGE = 1
TRANSIT_TARGET = 2


class StageRequestError(ValueError):
    """Raised when a stage request violates the controller's rules."""


class ControllerMode(str, Enum):
    GREEN = 'green'
    INTERGREEN = 'intergreen'
    STAGE1_TRANSIT = 'stage1-transit'


@dataclass(frozen=True)
class StageDefinition:
    id: int
    green_phases: FrozenSet[str]
    selectable: bool


@dataclass
class ControllerConfig:
    min_green: float = 6.0
    intergreen: float = 5.0
    stage1_fixed_duration: float = 6.0
    max_green: Optional[float] = None
    intergreen_overrides: Dict[str, float] = field(default_factory=dict)
    initial_stage: int = 2

    @classmethod
    def from_dict(cls, data: Dict, delta_t: float) -> 'ControllerConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        config.intergreen_overrides = dict(config.intergreen_overrides or {})
        config.validate(delta_t)
        return config

    def validate(self, delta_t: float):
        for name in ('min_green', 'intergreen', 'stage1_fixed_duration'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ControllerConfig.{name} must be strictly positive")
        if self.max_green is not None and self.max_green < self.min_green:
            raise ConfigError("max_green must be >= min_green")
        if self.initial_stage not in SELECTABLE_STAGES:
            raise ConfigError(f"initial_stage must be one of {SELECTABLE_STAGES}")

    def intergreen_for(self, from_stage: int, to_stage: int) -> float:
        return float(self.intergreen_overrides.get(f"{from_stage}-{to_stage}", self.intergreen))


@dataclass
class ControllerState:
    mode: ControllerMode
    active_stage: int
    target_stage: int
    delta_t: float
    step: int = 0
    elapsed_steps: int = 0
    stage_start_step: int = 0
    intergreen_from: Optional[int] = None
    intergreen_to: Optional[int] = None
    route: List[int] = field(default_factory=list)
    extensions: int = 0
    green_steps_by_stage: Dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0, 4: 0})

    @property
    def elapsed_in_mode(self) -> float:
        return self.elapsed_steps * self.delta_t

    @property
    def stage_start_time(self) -> float:
        return self.stage_start_step * self.delta_t

    def to_dict(self) -> Dict:
        return {
            'mode': self.mode.value,
            'active_stage': self.active_stage,
            'target_stage': self.target_stage,
            'elapsed_in_mode': self.elapsed_in_mode,
            'stage_start_time': self.stage_start_time,
        }


class SignalController:
    """Stage controller for the reference junction."""

    def __init__(self, config: ControllerConfig, junction: JunctionConfig, delta_t: float):
        self.config = config
        self.junction = junction
        self.delta_t = delta_t
        self.stages: Dict[int, StageDefinition] = {
            stage_id: StageDefinition(id=stage_id, green_phases=frozenset(phases),
                                      selectable=stage_id in SELECTABLE_STAGES)
            for stage_id, phases in junction.stages.items()
        }
        self.min_green_steps = self._steps(config.min_green)
        self.stage1_steps = self._steps(config.stage1_fixed_duration)
        self.max_green_steps = None if config.max_green is None else self._steps(config.max_green)
        self._check_stage_safety()

    def _steps(self, seconds: float) -> int:
        return duration_steps(seconds, self.delta_t)

    def _check_stage_safety(self):
        for stage in self.stages.values():
            phases = sorted(stage.green_phases)
            for i, a in enumerate(phases):
                for b in phases[i + 1:]:
                    if self.junction.conflicts(a, b):
                        raise ConfigError(f"Stage {stage.id} greens conflicting phases {a} and {b}")

    def initial_state(self) -> ControllerState:
        stage = self.config.initial_stage
        return ControllerState(mode=ControllerMode.GREEN, active_stage=stage, target_stage=stage,
                               delta_t=self.delta_t)

    def is_decision_point(self, ctrl: ControllerState) -> bool:
        """True in green once the minimum green has elapsed (inclusive), then at every step."""
        return ctrl.mode == ControllerMode.GREEN and ctrl.elapsed_steps >= self.min_green_steps

    def request_stage(self, ctrl: ControllerState, requested: int) -> ControllerState:
        """Extend the active stage by one step or start the transition toward ``requested``."""
        if requested not in SELECTABLE_STAGES:
            raise StageRequestError(f"Stage {requested} is not selectable; choose one of {SELECTABLE_STAGES}")
        if not self.is_decision_point(ctrl):
            raise StageRequestError(
                f"Stage request outside a decision point (mode={ctrl.mode.value}, "
                f"elapsed={ctrl.elapsed_in_mode:.1f}s)")

        if requested == ctrl.active_stage:
            if self.max_green_steps is not None and ctrl.elapsed_steps + 1 > self.max_green_steps:
                raise StageRequestError(f"Extending stage {requested} would exceed max_green")
            ctrl.extensions += 1
            return ctrl

        if requested == TRANSIT_TARGET and TRANSIT_STAGE in self.stages:
            route = [TRANSIT_STAGE, TRANSIT_TARGET]
        else:
            route = [requested]
        ctrl.target_stage = requested
        ctrl.route = route
        self._enter_intergreen(ctrl, ctrl.active_stage, route[0])
        logger.debug(f"Stage request {ctrl.active_stage} -> {requested} via {route} at t={ctrl.step * self.delta_t:.1f}")
        return ctrl

    def _enter_intergreen(self, ctrl: ControllerState, from_stage: int, to_stage: int):
        ctrl.mode = ControllerMode.INTERGREEN
        ctrl.intergreen_from = from_stage
        ctrl.intergreen_to = to_stage
        ctrl.elapsed_steps = 0

    def signal_state(self, ctrl: ControllerState) -> Dict[str, bool]:
        """Red/green per phase for the current mode."""
        if ctrl.mode == ControllerMode.INTERGREEN:
            green = (self.stages[ctrl.intergreen_from].green_phases
                     & self.stages[ctrl.intergreen_to].green_phases)
        else:
            green = self.stages[ctrl.active_stage].green_phases
        return {phase: phase in green for phase in self.junction.phases}

    def tick(self, ctrl: ControllerState, dt: float) -> Tuple[ControllerState, Dict[str, bool]]:
        """Advance timers by one step and perform any transition that falls due on this step."""
        state = self.signal_state(ctrl)
        if ctrl.mode in (ControllerMode.GREEN, ControllerMode.STAGE1_TRANSIT):
            ctrl.green_steps_by_stage[ctrl.active_stage] = ctrl.green_steps_by_stage.get(ctrl.active_stage, 0) + 1
        ctrl.step += 1
        ctrl.elapsed_steps += 1

        if ctrl.mode == ControllerMode.INTERGREEN:
            duration = self._steps(self.config.intergreen_for(ctrl.intergreen_from, ctrl.intergreen_to))
            if ctrl.elapsed_steps >= duration:
                next_stage = ctrl.route.pop(0)
                ctrl.active_stage = next_stage
                ctrl.elapsed_steps = 0
                ctrl.stage_start_step = ctrl.step
                ctrl.intergreen_from = ctrl.intergreen_to = None
                if next_stage == TRANSIT_STAGE and ctrl.route:
                    ctrl.mode = ControllerMode.STAGE1_TRANSIT
                else:
                    ctrl.mode = ControllerMode.GREEN
        elif ctrl.mode == ControllerMode.STAGE1_TRANSIT:
            if ctrl.elapsed_steps >= self.stage1_steps:
                self._enter_intergreen(ctrl, ctrl.active_stage, ctrl.route[0])

        return ctrl, state

    def green_shares(self, ctrl: ControllerState) -> Dict[int, float]:
        """Fraction of green time spent in each stage so far."""
        total = sum(ctrl.green_steps_by_stage.values())
        if total == 0:
            return {stage: 0.0 for stage in sorted(ctrl.green_steps_by_stage)}
        return {stage: steps / total for stage, steps in sorted(ctrl.green_steps_by_stage.items())}

    def conflicting_greens(self, state: Dict[str, bool]) -> List[Tuple[str, str]]:
        """Pairs of simultaneously green phases that conflict (empty when the state is safe)."""
        green = sorted(p for p, on in state.items() if on)
        return [(a, b) for i, a in enumerate(green) for b in green[i + 1:] if self.junction.conflicts(a, b)]

#!/usr/bin/env python3
"""
Reward catalogue.

Thirty named reward configurations over five families (queue, wait, delay,
average speed and throughput). Every reward is a pure function of a
DecisionContext, which carries the sensor frames and per-entity records at
the current decision time ``t``, the previous one ``t_prev`` and the one
before that ``t_prev2``.

Three of the reference formulas carry sign or binding anomalies. The default
evaluation uses the symmetric reading; ``literal_mode`` keeps the asymmetric
form.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .config_loader import ConfigError
from .sensors import SensorFrame

logger = logging.getLogger(__name__)

LITERAL_SUFFIX = '_literal'

WEIGHTS = {
    'p50': (0.5, 0.5),
    'p80': (0.2, 0.8),
    'p95': (0.05, 0.95),
}


class RewardCatalogueError(KeyError):
    """Raised for reward names that are not in the catalogue."""

    def __str__(self):
        return str(self.args[0]) if self.args else ''


@dataclass(frozen=True)
class RewardSpec:
    name: str
    label: str
    family: str
    variant: str
    a: float = 0.5
    b: float = 0.5
    demand_adjusted: bool = False
    tau_max: float = 120.0
    p_max: float = 10.0
    literal_mode: bool = False

    def __post_init__(self):
        if abs(self.a + self.b - 1.0) > 1e-9 or not (0.0 <= self.a <= 1.0):
            raise ConfigError(f"Modal weights of {self.name} must be in [0, 1] and sum to 1")
        if self.tau_max <= 0 or self.p_max <= 0:
            raise ConfigError("tau_max and p_max must be > 0")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class VehicleRecord:
    """One vehicle in an incoming lane at decision time t."""
    id: int
    lane: str
    speed: float
    wait: float
    delay: float
    delay_prev: float = 0.0
    delay_prev2: float = 0.0


@dataclass(frozen=True)
class PedestrianRecord:
    """One pedestrian waiting at decision time t."""
    id: int
    crossing: str
    wait: float


@dataclass
class DecisionContext:
    """Everything a reward needs about the interval (t_prev, t]."""
    t: float
    t_prev: float
    t_prev2: float
    frame: SensorFrame
    frame_prev: SensorFrame
    vehicles: List[VehicleRecord] = field(default_factory=list)
    pedestrians: List[PedestrianRecord] = field(default_factory=list)
    vehicle_wait_prev: float = 0.0
    ped_wait_prev: float = 0.0
    rho_v: int = 0
    rho_p: int = 0
    d_hat: float = 1.0
    s_max: float = 13.89

    @property
    def phase_length(self) -> float:
        return self.t - self.t_prev

    @property
    def vehicle_wait(self) -> float:
        return sum(v.wait for v in self.vehicles)

    @property
    def ped_wait(self) -> float:
        return sum(p.wait for p in self.pedestrians)

    @property
    def vehicle_delay(self) -> float:
        """Delay accumulated since entry by every vehicle present at t."""
        return sum(v.delay for v in self.vehicles)

    @property
    def vehicle_delay_current(self) -> float:
        """Delay accumulated over [t_prev, t] by the vehicles present at t."""
        return sum(v.delay - v.delay_prev for v in self.vehicles)

    @property
    def vehicle_delay_previous(self) -> float:
        """Delay accumulated over [t_prev2, t_prev] by the vehicles present at t."""
        return sum(v.delay_prev - v.delay_prev2 for v in self.vehicles)

    def to_dict(self) -> Dict:
        return {
            't': self.t,
            't_prev': self.t_prev,
            't_prev2': self.t_prev2,
            'frame': self.frame.to_dict(),
            'frame_prev': self.frame_prev.to_dict(),
            'vehicles': [asdict(v) for v in self.vehicles],
            'pedestrians': [asdict(p) for p in self.pedestrians],
            'vehicle_wait_prev': self.vehicle_wait_prev,
            'ped_wait_prev': self.ped_wait_prev,
            'rho_v': self.rho_v,
            'rho_p': self.rho_p,
            'd_hat': self.d_hat,
            's_max': self.s_max,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'DecisionContext':
        return cls(
            t=data['t'], t_prev=data['t_prev'], t_prev2=data['t_prev2'],
            frame=SensorFrame.from_dict(data['frame']),
            frame_prev=SensorFrame.from_dict(data['frame_prev']),
            vehicles=[VehicleRecord(**v) for v in data['vehicles']],
            pedestrians=[PedestrianRecord(**p) for p in data['pedestrians']],
            vehicle_wait_prev=data['vehicle_wait_prev'], ped_wait_prev=data['ped_wait_prev'],
            rho_v=data['rho_v'], rho_p=data['rho_p'], d_hat=data['d_hat'], s_max=data['s_max'],
        )


def _phase_length(ctx: DecisionContext) -> float:
    length = ctx.phase_length
    if length <= 0:
        raise ValueError(f"Phase length must be positive (t={ctx.t}, t_prev={ctx.t_prev})")
    return length


def _check_demand(ctx: DecisionContext):
    if ctx.d_hat <= 0:
        raise ConfigError(f"Demand estimate must be > 0, got {ctx.d_hat}")


# ----------------------------------------------------------------------
# Families
# ----------------------------------------------------------------------

def reward_queue(ctx: DecisionContext, variant: str, literal_mode: bool = False) -> float:
    qv, qp = ctx.frame.vehicle_queue, ctx.frame.ped_queue
    if variant == 'plain':
        return float(-qv - qp)
    if variant == 'squared':
        return float(-(qv ** 2) - qp ** 2)
    if variant == 'pln':
        length = _phase_length(ctx)
        if literal_mode:
            return -qv / length - qp
        return -(qv + qp) / length

    dv = ctx.frame_prev.vehicle_queue - qv
    dp = ctx.frame_prev.ped_queue - qp
    if variant == 'delta':
        return float(dv + dp)
    if variant == 'delta_pln':
        length = _phase_length(ctx)
        if literal_mode:
            return -(dv - dp) / length
        return (dv + dp) / length
    raise ValueError(f"Unknown queue variant: {variant}")


def reward_wait(ctx: DecisionContext, spec: RewardSpec, variant: str) -> float:
    if variant == 'delta':
        return (spec.a * (ctx.vehicle_wait_prev - ctx.vehicle_wait)
                + spec.b * (ctx.ped_wait_prev - ctx.ped_wait))
    penalty = -(spec.a * ctx.vehicle_wait + spec.b * ctx.ped_wait)
    if variant == 'plain':
        return penalty
    if variant == 'ad':
        _check_demand(ctx)
        return penalty / ctx.d_hat
    raise ValueError(f"Unknown wait variant: {variant}")


def reward_delay(ctx: DecisionContext, spec: RewardSpec, variant: str) -> float:
    if variant == 'plain':
        return -(spec.a * ctx.vehicle_delay + spec.b * ctx.ped_wait)
    if variant == 'delta':
        return (spec.a * (ctx.vehicle_delay_previous - ctx.vehicle_delay_current)
                + spec.b * (ctx.ped_wait_prev - ctx.ped_wait))
    if variant == 'ad':
        _check_demand(ctx)
        return -(spec.a * ctx.vehicle_delay_current + spec.b * ctx.ped_wait) / ctx.d_hat
    raise ValueError(f"Unknown delay variant: {variant}")


def mean_relative_speed(frame: SensorFrame, s_max: float) -> float:
    """Mean of s/s_max over covered vehicles (1.0 for an empty coverage area)."""
    speeds = frame.speeds
    if not speeds:
        return 1.0
    return sum(s / s_max for s in speeds) / len(speeds)


def reward_avg_speed(ctx: DecisionContext, spec: RewardSpec, variant: str,
                     demand_adjusted: bool = False) -> float:
    vehicle_term = mean_relative_speed(ctx.frame, ctx.s_max)
    if variant == 'wait':
        ped_term = min(ctx.frame.ped_wait / spec.tau_max, 1.0)
    elif variant == 'occ':
        ped_term = min(ctx.frame.ped_queue / spec.p_max, 1.0)
    else:
        raise ValueError(f"Unknown average speed variant: {variant}")

    reward = vehicle_term + (ped_term if spec.literal_mode else 1.0 - ped_term)
    if demand_adjusted:
        _check_demand(ctx)
        reward *= ctx.d_hat
    return reward


def reward_throughput(ctx: DecisionContext, spec: RewardSpec) -> float:
    return spec.a * ctx.rho_v + spec.b * ctx.rho_p


def compute_reward(spec: RewardSpec, ctx: DecisionContext) -> float:
    """Evaluate one catalogue configuration on a decision context."""
    if spec.family == 'queue':
        return reward_queue(ctx, spec.variant, spec.literal_mode)
    if spec.family == 'wait':
        return reward_wait(ctx, spec, spec.variant)
    if spec.family == 'delay':
        return reward_delay(ctx, spec, spec.variant)
    if spec.family == 'avg_speed':
        return reward_avg_speed(ctx, spec, spec.variant, spec.demand_adjusted)
    if spec.family == 'throughput':
        return reward_throughput(ctx, spec)
    raise ValueError(f"Unknown reward family: {spec.family}")


# ----------------------------------------------------------------------
# Catalogue
# ----------------------------------------------------------------------

def _build_catalogue() -> Dict[str, Tuple[str, str, str, Tuple[float, float], bool]]:
    """name -> (label, family, variant, (a, b), demand_adjusted)"""
    even = WEIGHTS['p50']
    entries = {
        'queues': ('Queues', 'queue', 'plain', even, False),
        'queues_sq': ('Queues Sq.', 'queue', 'squared', even, False),
        'queues_pln': ('Queues PLN', 'queue', 'pln', even, False),
        'delta_queues': ('Delta Queues', 'queue', 'delta', even, False),
        'delta_queues_pln': ('Delta Queues PLN', 'queue', 'delta_pln', even, False),
        'avg_speed_wait': ('Average Speed - Wait', 'avg_speed', 'wait', even, False),
        'avg_speed_occ': ('Average Speed - Occ', 'avg_speed', 'occ', even, False),
        'avg_speed_ad_wait': ('Average Speed AD - Wait', 'avg_speed', 'wait', even, True),
        'avg_speed_ad_occ': ('Average Speed AD - Occ', 'avg_speed', 'occ', even, True),
    }
    weighted = [
        ('wait_time', 'Wait Time', 'wait', 'plain'),
        ('wait_time_ad', 'Wait Time AD', 'wait', 'ad'),
        ('delta_wait_time', 'Delta Wait Time', 'wait', 'delta'),
        ('delay', 'Delay', 'delay', 'plain'),
        ('delay_ad', 'Delay AD', 'delay', 'ad'),
        ('delta_delay', 'Delta Delay', 'delay', 'delta'),
        ('throughput', 'Throughput', 'throughput', 'plain'),
    ]
    for base, label, family, variant in weighted:
        entries[base] = (label, family, variant, WEIGHTS['p50'], False)
        entries[f"{base}_p80"] = (f"{label} P80", family, variant, WEIGHTS['p80'], False)
        entries[f"{base}_p95"] = (f"{label} P95", family, variant, WEIGHTS['p95'], False)
    return entries


CATALOGUE = _build_catalogue()
REWARD_NAMES: List[str] = list(CATALOGUE)


def list_rewards() -> List[Tuple[str, str]]:
    """(name, table label) for every catalogue entry, in catalogue order."""
    return [(name, CATALOGUE[name][0]) for name in REWARD_NAMES]


def named_spec(name: str, tau_max: float = 120.0, p_max: float = 10.0,
               literal_mode: bool = False) -> RewardSpec:
    """Fully populated RewardSpec for a catalogue name (``_literal`` suffix forces literal mode)."""
    base = name
    if name.endswith(LITERAL_SUFFIX):
        base = name[:-len(LITERAL_SUFFIX)]
        literal_mode = True
    if base not in CATALOGUE:
        raise RewardCatalogueError(
            f"Unknown reward '{name}'. Valid names: {', '.join(REWARD_NAMES)}")
    label, family, variant, (a, b), demand_adjusted = CATALOGUE[base]
    return RewardSpec(name=name, label=label, family=family, variant=variant, a=a, b=b,
                      demand_adjusted=demand_adjusted, tau_max=tau_max, p_max=p_max,
                      literal_mode=literal_mode)


def spec_from_config(name: str, rewards_config: Dict) -> RewardSpec:
    """named_spec with tau_max, p_max and literal mode taken from the ``rewards`` config section."""
    spec = named_spec(name, tau_max=rewards_config.get('tau_max', 120.0),
                      p_max=rewards_config.get('p_max', 10.0),
                      literal_mode=rewards_config.get('literal_mode', False))
    weights = (rewards_config.get('weights') or {}).get(name)
    if weights:
        spec = replace(spec, a=float(weights['a']), b=float(weights['b']))
    return spec


def compute_all(ctx: DecisionContext, tau_max: float = 120.0, p_max: float = 10.0,
                literal_mode: bool = False,
                names: Optional[List[str]] = None) -> Dict[str, float]:
    """Every catalogue reward evaluated on the same context."""
    return {name: compute_reward(named_spec(name, tau_max, p_max, literal_mode), ctx)
            for name in (names or REWARD_NAMES)}

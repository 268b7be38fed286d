#!/usr/bin/env python3
"""
Configuration loader for JunctionMind RL.
Handles loading, merging and validation of configuration from YAML file.
"""

import copy
import hashlib
import json
import math
import os
import logging
from typing import Dict, Any, Optional

import yaml

logger = logging.getLogger(__name__)

# Off-grid durations already reported in this process
_reported_durations = set()

# Alternative names accepted for the built-in profiles
PROFILE_ALIASES = {'paper': 'full'}


class ConfigError(ValueError):
    """Raised when a configuration value is missing or invalid."""


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Merge ``override`` into a copy of ``base`` (nested dicts are merged, everything else replaced)."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def is_step_multiple(value: float, delta_t: float) -> bool:
    """True when ``value`` is a positive integral multiple of the simulation step."""
    if value <= 0:
        return False
    steps = value / delta_t
    return abs(steps - round(steps)) < 1e-9


def duration_steps(value: float, delta_t: float) -> int:
    """Number of whole steps needed to cover ``value`` seconds (rounded up onto the step grid)."""
    return max(1, math.ceil(value / delta_t - 1e-9))


class ConfigLoader:
    """Configuration loader for JunctionMind RL."""

    def __init__(self, config_path: str = "config.yaml", profile: Optional[str] = None):
        self.config_path = config_path
        self.config = self._load_config()
        if profile:
            self.apply_profile(profile)
        self._validate_config()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ConfigLoader':
        """Build a loader from an already resolved configuration tree (no file access)."""
        loader = cls.__new__(cls)
        loader.config_path = None
        loader.config = _deep_merge(loader._get_default_config(), data)
        loader._validate_config()
        return loader

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file, merged over the defaults."""
        defaults = self._get_default_config()
        if not self.config_path or not os.path.exists(self.config_path):
            logger.warning(f"Config file {self.config_path} not found, using defaults")
            return defaults

        try:
            with open(self.config_path, 'r') as f:
                loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse {self.config_path}: {e}") from e

        if not isinstance(loaded, dict):
            raise ConfigError(f"{self.config_path} must contain a mapping at top level")

        logger.info(f"Loaded configuration from {self.config_path}")
        return _deep_merge(defaults, loaded)

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration."""
        return {
            'app': {
                'name': 'JunctionMind RL',
                'debug': False
            },
            'logging': {
                'level': 'INFO'
            },
            'simulation': {
                'delta_t': 0.6,
                'lane_length': 150.0,
                's_max': 13.89,
                'vehicle_spacing': 7.5,
                'accel': 2.6,
                'decel': 4.5,
                'startup_lost_time': 1.2,
                'wait_speed_threshold': 0.1,
                'crossing_duration': 8.4,
                'rng_seed': 0,
                'arrival_process': 'poisson'
            },
            'junction': {
                'arms': {
                    'N': ['N1', 'N2'],
                    'S': ['S1', 'S2'],
                    'E': ['E1'],
                    'W': ['W1']
                },
                'crossings': ['PN', 'PS', 'PE', 'PW'],
                'turning_ratios': {
                    'N1': {'ahead': 0.8, 'left': 0.2},
                    'N2': {'right': 1.0},
                    'S1': {'ahead': 0.8, 'left': 0.2},
                    'S2': {'ahead': 0.6, 'right': 0.4},
                    'E1': {'ahead': 0.6, 'left': 0.2, 'right': 0.2},
                    'W1': {'ahead': 0.6, 'left': 0.2, 'right': 0.2}
                },
                'movement_to_phase': {},
                'stages': {
                    1: ['N1', 'N2'],
                    2: ['N1', 'S1', 'S2'],
                    3: ['PN', 'PS', 'PE', 'PW'],
                    4: ['E1', 'W1']
                }
            },
            'demand': {
                'vehicle_rate': 1714.0,
                'ped_rate': 360.0,
                'd_hat_reference': 1714.0,
                'd_hat_floor': 0.05,
                'arm_split': {'N': 0.3, 'S': 0.3, 'E': 0.2, 'W': 0.2}
            },
            'controller': {
                'min_green': 6.0,
                'intergreen': 5.0,
                'intergreen_overrides': {},
                'stage1_fixed_duration': 6.0,
                'max_green': None,
                'initial_stage': 2
            },
            'sensors': {
                'coverage_length': 50.0,
                'lane_coverage': {}
            },
            'encoder': {
                'history_length': 20,
                'encode_target_stage': True
            },
            'rewards': {
                'tau_max': 120.0,
                'p_max': 10.0,
                'literal_mode': False,
                'weights': {}
            },
            'baselines': {
                'va': {
                    'extension': 1.5,
                    'max_green': 60.0,
                    'rotation': [2, 4, 3]
                }
            },
            'network': {
                'hidden_sizes': [500, 1000],
                'dtype': 'float64'
            },
            'agent': {
                'gamma': 0.8,
                'learning_rate': 1e-5,
                'adam_beta1': 0.9,
                'adam_beta2': 0.999,
                'adam_epsilon': 1e-8,
                'replay_capacity': 100000,
                'target_sync_period': 10,
                'minibatch_size': 512,
                'updates_per_episode': 1,
                'epsilon_start': 1.0,
                'epsilon_end': 0.05,
                'epsilon_decay_fraction': 0.6
            },
            'harness': {
                'episodes': 1500,
                'replicas': 10,
                'episode_steps': 3000,
                'curriculum': {
                    'start_rate': 1200.0,
                    'end_rate': 2571.0
                },
                'ped_rate_base': 360.0,
                'ped_rate_reference': 1714.0,
                'selection_scenario': 'peak',
                'selection_replications': 3,
                'replications': 100,
                'seed': 0,
                'parallel_workers': None,
                'log_every': 10,
                'checkpoint_every': 50,
                'selection_seed_offset': 100000,
                'progress': True,
                'output_dir': './runs',
                'scenarios': {
                    'normal': {'vehicle_rate': 1714.0},
                    'peak': {'vehicle_rate': 2117.0},
                    'oversaturated': {'vehicle_rate': 2400.0}
                }
            },
            'profiles': {
                'desk': {
                    'agent': {
                        'learning_rate': 1e-4,
                        'minibatch_size': 128,
                        'updates_per_episode': 100,
                        'replay_capacity': 50000
                    },
                    'harness': {
                        'episodes': 150,
                        'replicas': 2,
                        'replications': 20
                    }
                },
                'full': {
                    'harness': {
                        'episodes': 1500,
                        'replicas': 10,
                        'replications': 100
                    }
                }
            },
            'storage': {
                'results_db': './data/results.sqlite'
            }
        }

    def apply_profile(self, name: str):
        """Overlay a named profile (e.g. ``desk`` or ``full``) onto the configuration."""
        name = PROFILE_ALIASES.get(name, name)
        profiles = self.config.get('profiles', {})
        if name not in profiles:
            raise ConfigError(f"Unknown profile '{name}'. Available: {', '.join(sorted(profiles))}")
        overlay = {k: v for k, v in profiles[name].items()}
        self.config = _deep_merge(self.config, overlay)
        self.config.setdefault('app', {})['profile'] = name
        logger.info(f"Applied profile: {name}")

    def _validate_config(self):
        """Validate configuration values."""
        sim = self.config['simulation']
        for key in ('delta_t', 'lane_length', 's_max', 'vehicle_spacing', 'accel', 'decel',
                    'wait_speed_threshold', 'crossing_duration'):
            if not isinstance(sim.get(key), (int, float)) or sim[key] <= 0:
                raise ConfigError(f"simulation.{key} must be strictly positive, got {sim.get(key)!r}")
        if sim.get('startup_lost_time', 0) < 0:
            raise ConfigError("simulation.startup_lost_time must be >= 0")
        if sim['arrival_process'] not in ('poisson', 'uniform-headway'):
            raise ConfigError(f"simulation.arrival_process must be 'poisson' or 'uniform-headway', "
                              f"got {sim['arrival_process']!r}")

        coverage = self.config['sensors']['coverage_length']
        lane_cover = self.config['sensors'].get('lane_coverage') or {}
        for length in [coverage, *lane_cover.values()]:
            if length <= 0 or length >= sim['lane_length']:
                raise ConfigError(f"sensor coverage {length} must be positive and shorter than "
                                  f"lane_length {sim['lane_length']}")

        demand = self.config['demand']
        if demand['vehicle_rate'] < 0 or demand['ped_rate'] < 0:
            raise ConfigError("demand rates must be >= 0")
        if demand['d_hat_reference'] <= 0:
            raise ConfigError("demand.d_hat_reference must be > 0")
        if demand.get('d_hat_floor', 0.05) <= 0:
            raise ConfigError("demand.d_hat_floor must be > 0")

        junction = self.config['junction']
        for lane, ratios in junction['turning_ratios'].items():
            if abs(sum(ratios.values()) - 1.0) > 1e-9:
                raise ConfigError(f"turning ratios for lane {lane} sum to {sum(ratios.values())}, expected 1")

        delta_t = sim['delta_t']
        ctrl = self.config['controller']
        durations = {key: ctrl[key] for key in ('min_green', 'intergreen', 'stage1_fixed_duration')}
        durations.update({f"intergreen_overrides.{pair}": value
                          for pair, value in (ctrl.get('intergreen_overrides') or {}).items()})
        for key, value in durations.items():
            if not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"controller.{key} must be strictly positive, got {value!r}")
            if not is_step_multiple(value, delta_t) and (key, value, delta_t) not in _reported_durations:
                _reported_durations.add((key, value, delta_t))
                logger.warning(f"controller.{key}={value}s is not a multiple of delta_t={delta_t}s; "
                               f"it runs for {duration_steps(value, delta_t) * delta_t:.1f}s")

        agent = self.config['agent']
        if not 0.0 <= agent['gamma'] <= 1.0:
            raise ConfigError(f"agent.gamma must lie in [0, 1], got {agent['gamma']}")
        if agent['replay_capacity'] < agent['minibatch_size']:
            raise ConfigError("agent.replay_capacity must be >= agent.minibatch_size")

        rewards = self.config['rewards']
        if rewards['tau_max'] <= 0 or rewards['p_max'] <= 0:
            raise ConfigError("rewards.tau_max and rewards.p_max must be > 0")

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key (supports dot notation)."""
        keys = key.split('.')
        value = self.config

        try:
            for k in keys:
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def get_simulation_config(self) -> Dict[str, Any]:
        """Get simulation-specific configuration."""
        return self.config.get('simulation', {})

    def get_agent_config(self) -> Dict[str, Any]:
        """Get agent-specific configuration."""
        return self.config.get('agent', {})

    def get_harness_config(self) -> Dict[str, Any]:
        """Get harness-specific configuration."""
        return self.config.get('harness', {})

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved configuration."""
        canonical = json.dumps(self.config, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def section_hash(self, *sections: str) -> str:
        """SHA-256 over the named sections only (used to check that runs are comparable)."""
        subset = {name: self.config.get(name) for name in sections}
        canonical = json.dumps(subset, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def save_config(self, path: Optional[str] = None):
        """Save current configuration to file."""
        target = path or self.config_path
        with open(target, 'w') as f:
            yaml.dump(self.config, f, default_flow_style=False, indent=2)
        logger.info(f"Configuration saved to {target}")

    def __getitem__(self, key: str) -> Any:
        """Allow dictionary-style access."""
        return self.get(key)

    def __setitem__(self, key: str, value: Any):
        """Allow dictionary-style assignment."""
        keys = key.split('.')
        config = self.config

        for k in keys[:-1]:
            if k not in config:
                config[k] = {}
            config = config[k]

        config[keys[-1]] = value

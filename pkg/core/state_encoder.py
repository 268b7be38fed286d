#!/usr/bin/env python3
"""
Agent observation builder.

A frame is the controller stage one-hot, the lane occupancies and the
pedestrian button bits. The observation is the concatenation of the last
``history_length`` frames, oldest first, zero-padded at episode start.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence

import numpy as np

from .config_loader import ConfigError
from .sensors import SensorFrame

logger = logging.getLogger(__name__)

STAGE_IDS = (1, 2, 3, 4)


@dataclass
class EncoderConfig:
    history_length: int = 20
    encode_target_stage: bool = True

    @classmethod
    def from_dict(cls, data: Dict) -> 'EncoderConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        if config.history_length < 1:
            raise ConfigError("encoder.history_length must be >= 1")
        return config


def measurement_frame(stage: int, occupancies: Sequence[float], buttons: Iterable[bool]) -> np.ndarray:
    """One frame: stage one-hot, occupancies, button bits."""
    if stage not in STAGE_IDS:
        raise ValueError(f"Unknown stage {stage}")
    onehot = [1.0 if s == stage else 0.0 for s in STAGE_IDS]
    return np.array(onehot + [float(o) for o in occupancies] + [1.0 if b else 0.0 for b in buttons],
                    dtype=np.float64)


def frame_from_sensors(stage: int, frame: SensorFrame) -> np.ndarray:
    return measurement_frame(stage, frame.occupancies, frame.buttons)


class HistoryBuffer:
    """Fixed-length ring of measurement frames."""

    def __init__(self, history_length: int, frame_width: int):
        self.history_length = history_length
        self.frame_width = frame_width
        self._frames = np.zeros((history_length, frame_width), dtype=np.float64)
        self._head = 0
        self.pushes = 0

    @property
    def observation_size(self) -> int:
        return self.history_length * self.frame_width

    def reset(self):
        self._frames.fill(0.0)
        self._head = 0
        self.pushes = 0

    def push(self, frame: np.ndarray) -> 'HistoryBuffer':
        """Store ``frame`` as the newest entry, evicting the oldest once full."""
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.frame_width,):
            raise ValueError(f"Frame width {frame.shape} does not match buffer width {self.frame_width}")
        self._frames[self._head] = frame
        self._head = (self._head + 1) % self.history_length
        self.pushes += 1
        return self

    def frames(self) -> np.ndarray:
        """Frames oldest-first (unfilled slots are zeros and come first)."""
        return np.roll(self._frames, -self._head, axis=0)

    def encode(self) -> np.ndarray:
        return self.frames().reshape(-1).copy()


class StateEncoder:
    """Turns controller state and sensor frames into the fixed-size observation."""

    def __init__(self, config: EncoderConfig, lanes: int = 6, crossings: int = 4):
        self.config = config
        self.frame_width = len(STAGE_IDS) + lanes + crossings
        self.buffer = HistoryBuffer(config.history_length, self.frame_width)

    @property
    def observation_size(self) -> int:
        return self.buffer.observation_size

    def reset(self):
        self.buffer.reset()

    def stage_for(self, active_stage: int, target_stage: int, in_transition: bool) -> int:
        if in_transition and self.config.encode_target_stage:
            return target_stage
        return active_stage

    def push(self, stage: int, frame: SensorFrame):
        self.buffer.push(frame_from_sensors(stage, frame))

    def encode(self) -> np.ndarray:
        return self.buffer.encode()

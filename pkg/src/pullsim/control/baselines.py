"""Feedback-free and proportional-derivative voltage policies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import V_MAX, V_MIN


@dataclass(frozen=True)
class PdConfig:
    """PD gains on the position error ``x - x*`` and the velocity.

    ``error_scale`` converts metres into the unit the gains expect (1e3 for
    millimetres).  ``incremental`` treats the PD output as a voltage change per
    step, with negative output (coin short of a target in ``-x``) raising the
    voltage; otherwise the output is the voltage itself.
    """

    k_p: float = -0.5
    k_d: float = 5.0
    error_scale: float = 1e3
    incremental: bool = True


def pd_act(config: PdConfig, x: float, u: float, x_target: float,
           prev_voltage: float = 0.0) -> float:
    out = config.k_p * (x - x_target) * config.error_scale + config.k_d * (-u)
    V = prev_voltage - out if config.incremental else out
    return float(np.clip(V, V_MIN, V_MAX))


class PdPolicy:
    def __init__(self, config: PdConfig = PdConfig(), x_target: float = -1e-3):
        self.config = config
        self.x_target = x_target
        self.reset()

    def reset(self):
        self.voltage = 0.0

    def act(self, obs, phi=None) -> float:
        self.voltage = pd_act(self.config, obs[0], obs[1], self.x_target, self.voltage)
        return self.voltage


class HeuristicPolicy:
    """Ramps the voltage by a fixed increment every step, ignoring observations."""

    def __init__(self, increment: float = 0.5):
        self.increment = increment
        self.reset()

    def reset(self):
        self.steps = 0

    def act(self, obs=None, phi=None) -> float:
        V = min(self.increment * self.steps, V_MAX)
        self.steps += 1
        return float(max(V, V_MIN))

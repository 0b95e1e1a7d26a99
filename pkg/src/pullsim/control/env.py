"""Closed-loop coin-pulling environment and the shared quadratic objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import PhysicsModel

V_MIN, V_MAX = 0.0, 300.0


def mpc_cost(x: float, V: float, x_target: float, w_s: float = 1.0, w_a: float = 0.001,
             x_scale: float = 1.0, v_scale: float = 1.0) -> float:
    """``0.5 * (w_s * ((x - x*) / x_scale)^2 + w_a * (V / v_scale)^2)``.

    Position only; velocity is not penalised.  With unit scales this is the
    plain SI objective.  Controllers use ``x_scale = 1e-3`` (millimetres) and
    ``v_scale = 300`` so that both terms matter.
    """
    dx = (x - x_target) / x_scale
    dv = V / v_scale
    return 0.5 * (w_s * dx * dx + w_a * dv * dv)


@dataclass(frozen=True)
class CostScales:
    w_s: float = 1.0
    w_a: float = 0.001
    x_scale: float = 1e-3
    v_scale: float = 300.0


def reward(x: float, V: float, x_target: float, scales: CostScales = CostScales()) -> float:
    """Negative control objective, so every policy optimises the same quantity."""
    return -mpc_cost(x, V, x_target, scales.w_s, scales.w_a, scales.x_scale, scales.v_scale)


@dataclass(frozen=True)
class EnvConfig:
    sigma_obs: float = 1e-3
    x_target: float = -1e-3
    tol: float = 1e-5
    dt: float = 1e-3
    max_iters: int = 20000
    x0: float = 0.0
    u0: float = 0.0

    def __post_init__(self):
        if self.sigma_obs < 0:
            raise ValueError("sigma_obs must be non-negative")
        if not self.tol > 0 or not self.dt > 0:
            raise ValueError("tol and dt must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


class Environment:
    """Simulated pulling task driven by a trained truth model.

    Observations are ``(x + noise, u)``; termination is judged on the true
    position so that observation noise cannot end an episode early.
    """

    def __init__(self, truth: PhysicsModel, config: EnvConfig, rng: np.random.Generator):
        self.truth = truth
        self.config = config
        self.rng = rng
        self.reset()

    def reset(self) -> np.ndarray:
        self.x, self.u = self.config.x0, self.config.u0
        self.last_forces = (0.0, 0.0)
        return self.observe()

    @property
    def state(self) -> tuple[float, float]:
        return self.x, self.u

    def observe(self) -> np.ndarray:
        noise = self.rng.normal(0.0, self.config.sigma_obs) if self.config.sigma_obs > 0 else 0.0
        return np.array([self.x + noise, self.u])

    def at_target(self) -> bool:
        return abs(self.x - self.config.x_target) < self.config.tol

    def step(self, V: float):
        """Apply voltage ``V`` for one control interval; returns ``(obs, done)``."""
        if not V_MIN <= V <= V_MAX:
            raise ValueError(f"voltage {V} outside [{V_MIN}, {V_MAX}]")
        x, u, fx, fy = self.truth.step(self.x, self.u, float(V), self.config.dt)
        if not (np.isfinite(x) and np.isfinite(u)):
            raise FloatingPointError(f"environment produced a non-finite state at V={V}")
        self.x, self.u = x, u
        self.last_forces = (fx, fy)
        return self.observe(), self.at_target()

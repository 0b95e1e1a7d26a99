"""Online estimation of coin mass and ground friction from observed transitions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..dynamics import GRAVITY, dynamics_step
from ..nets import AdamState, adam_step

MIN_MASS = 1e-9
MAX_MU = 2.0


@dataclass(frozen=True)
class InferenceConfig:
    m_c_init: float = 1e-6
    mu_b_init: float = 0.2
    lr_m_c: float = 1e-5
    lr_mu_b: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.9
    batch_size: int = 256
    every: int = 1
    x_scale: float = 1e-5
    u_scale: float = 1e-3

    def __post_init__(self):
        if not self.m_c_init > 0 or not 0 <= self.mu_b_init <= MAX_MU:
            raise ValueError("initial parameters must be feasible")
        if self.batch_size < 1 or self.every < 1:
            raise ValueError("batch_size and every must be at least 1")


def project(m_c: float, mu_b: float) -> tuple[float, float]:
    """Clamp to the feasible set ``m_c > 0``, ``0 <= mu_b <= 2``."""
    return max(float(m_c), MIN_MASS), float(np.clip(mu_b, 0.0, MAX_MU))


def inference_loss(m_c, mu_b, batch: dict, V_T: float, scales=(1e-5, 1e-3), g=GRAVITY):
    """Mean scaled squared error of predicted next states over a batch.

    ``batch`` holds ``s`` (x, u), ``a`` (V, dt), ``z`` (cached forces) and ``s2``.
    """
    s, a, z, s2 = batch["s"], batch["a"], batch["z"], batch["s2"]
    x_next, u_next = dynamics_step(z[:, 0], z[:, 1], s[:, 0], s[:, 1], a[:, 0], a[:, 1],
                                   m_c, mu_b, V_T, g)
    rx = (x_next - s2[:, 0:1]) * (1.0 / scales[0])
    ru = (u_next - s2[:, 1:2]) * (1.0 / scales[1])
    return ad.mean(ad.square(rx) + ad.square(ru))


def inference_grad(m_c: float, mu_b: float, batch: dict, V_T: float, scales=(1e-5, 1e-3),
                   g=GRAVITY):
    """Loss value and gradient with respect to ``(m_c, mu_b)``."""
    value, (gm, gmu) = ad.grad(lambda m, mu: inference_loss(m, mu, batch, V_T, scales, g),
                               np.array([[m_c]]), np.array([[mu_b]]))
    return value, np.array([gm[0, 0], gmu[0, 0]])


@dataclass
class ParamEstimator:
    """Adam on ``(m_c, mu_b)`` with per-parameter step sizes and projection."""

    V_T: float
    config: InferenceConfig = field(default_factory=InferenceConfig)
    g: float = GRAVITY

    def __post_init__(self):
        self.m_c, self.mu_b = project(self.config.m_c_init, self.config.mu_b_init)
        self.adam = AdamState([self.config.lr_m_c, self.config.lr_mu_b],
                              self.config.beta1, self.config.beta2)
        self.updates = 0
        self.last_loss = float("nan")

    @property
    def phi(self) -> tuple[float, float, float]:
        return self.m_c, self.mu_b, self.V_T

    def update(self, batch: dict) -> tuple[float, float]:
        scales = (self.config.x_scale, self.config.u_scale)
        self.last_loss, grads = inference_grad(self.m_c, self.mu_b, batch, self.V_T, scales, self.g)
        new = adam_step(self.adam, [np.array(self.m_c), np.array(self.mu_b)],
                        [np.array(grads[0]), np.array(grads[1])], ["m_c", "mu_b"])
        self.m_c, self.mu_b = project(float(new[0]), float(new[1]))
        self.updates += 1
        return self.m_c, self.mu_b


def infer_params(phi, batch: dict, V_T: float, adam: AdamState,
                 scales=(1e-5, 1e-3), g=GRAVITY) -> tuple[float, float]:
    """One projected Adam step on ``phi = (m_c, mu_b)``; the network stays frozen."""
    m_c, mu_b = phi
    _, grads = inference_grad(m_c, mu_b, batch, V_T, scales, g)
    new = adam_step(adam, [np.array(m_c), np.array(mu_b)],
                    [np.array(grads[0]), np.array(grads[1])], ["m_c", "mu_b"])
    return project(float(new[0]), float(new[1]))

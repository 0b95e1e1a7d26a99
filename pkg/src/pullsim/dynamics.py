"""Two-stage friction dynamics mapping interaction forces to the next coin state.

All functions take column vectors (``(n, 1)`` arrays) or tape Vars so one code
path serves batched numpy simulation and differentiable evaluation.  Regime
switches (stick, slip, decay, zero crossing) are decided on forward values;
only the taken branch carries gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

GRAVITY = 9.8
CONTACT_LOSS_V = 300.0


@dataclass(frozen=True)
class State:
    x: float
    u: float


@dataclass(frozen=True)
class Action:
    V: float
    dt: float

    def __post_init__(self):
        if self.V < 0:
            raise ValueError(f"voltage must be non-negative, got {self.V}")
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")


@dataclass(frozen=True)
class InteractionForces:
    Fx: float
    Fy: float


@dataclass(frozen=True)
class DynamicsParams:
    """Coin parameters used by the analytic dynamics (SI units)."""

    m_c: float
    mu_b: float
    V_T: float
    V_loss: float = CONTACT_LOSS_V
    g: float = GRAVITY

    def __post_init__(self):
        if not self.m_c > 0:
            raise ValueError(f"m_c must be positive, got {self.m_c}")
        if not self.mu_b >= 0:
            raise ValueError(f"mu_b must be non-negative, got {self.mu_b}")
        if not 0 < self.V_T < self.V_loss:
            raise ValueError(f"need 0 < V_T < V_loss, got V_T={self.V_T}, V_loss={self.V_loss}")


def _col(v):
    return v if ad.is_var(v) else np.asarray(v, dtype=np.float64).reshape(-1, 1)


def normal_force(Fy, m_c, g=GRAVITY):
    """Ground reaction ``Fy + m g`` clamped at zero."""
    n = Fy + m_c * g
    return ad.where(ad.value(n) > 0.0, n, 0.0)


def friction_force(Fy, V, m_c, mu_b, V_T, g=GRAVITY):
    """Friction bound: full Coulomb above ``V_T``, growing linearly in ``V`` below."""
    full = mu_b * normal_force(_col(Fy), m_c, g)
    V = _col(V)
    below = ad.value(V) < ad.value(V_T)
    return ad.where(below, full * (V / V_T), full)


def dynamics_step(Fx, Fy, x, u, V, dt, m_c, mu_b, V_T, g=GRAVITY):
    """Next ``(x, u)`` for a batch of rows.

    Regimes, decided per row on forward values:

    * actuator off (``V == 0``): the coin decelerates at ``mu_b g`` or stays at rest;
    * at rest with ``|Fx|`` within the friction bound: stick;
    * otherwise ``A = (Fx - sign * F_mu) / m`` with the sign of ``u``, or of
      ``Fx`` when starting from rest.

    If friction would reverse the velocity within the step the coin stops
    exactly, at the position implied by constant deceleration.
    """
    Fx, Fy, x, u, V, dt = (_col(a) for a in (Fx, Fy, x, u, V, dt))
    dt_val = ad.value(dt)
    if np.any(dt_val <= 0):
        raise ValueError("time step must be positive")
    u_val, v_val, fx_val = ad.value(u), ad.value(V), ad.value(Fx)
    f_mu = friction_force(Fy, V, m_c, mu_b, V_T, g)
    at_rest = u_val == 0.0
    off = v_val == 0.0
    stick = (at_rest & (np.abs(fx_val) <= ad.value(f_mu))) | (at_rest & off)
    direction = np.where(at_rest, np.sign(fx_val), np.sign(u_val))
    slide = (Fx - direction * f_mu) / m_c
    decay = -np.sign(u_val) * (mu_b * g)
    acc = ad.where(stick, 0.0, ad.where(off, decay, slide))
    u_free = u + acc * dt
    cross = (~at_rest) & (u_val * ad.value(u_free) <= 0.0)
    safe_acc = ad.where(cross, acc, 1.0)
    x_stop = x - ad.square(u) / (2.0 * safe_acc)
    x_free = x + u * dt + 0.5 * acc * ad.square(dt)
    x_next = ad.where(cross, x_stop, x_free)
    u_next = ad.where(cross, 0.0 * u_val, u_free)
    return x_next, u_next

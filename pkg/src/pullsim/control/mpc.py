"""Receding-horizon iLQR with a box-constrained scalar voltage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..model import PhysicsModel


class JacobianError(FloatingPointError):
    """The dynamics linearisation contained non-finite entries."""


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    lqr_iters: int = 20
    w_s: float = 1.0
    w_a: float = 0.001
    v_min: float = 0.0
    v_max: float = 300.0
    x_scale: float = 1e-3
    v_scale: float = 300.0
    tol: float = 1e-9
    reg: float = 1e-9
    alphas: tuple = (1.0, 0.5, 0.25, 0.1, 0.03, 0.01)
    probe_step_v: float = 5.0
    seed_voltages: tuple = tuple(float(v) for v in np.linspace(0.0, 300.0, 31))

    def __post_init__(self):
        if self.horizon < 1 or self.lqr_iters < 0:
            raise ValueError("horizon must be >= 1 and lqr_iters >= 0")
        if self.w_s < 0 or self.w_a < 0:
            raise ValueError("cost weights must be non-negative")
        if not self.v_min < self.v_max:
            raise ValueError("need v_min < v_max")


class ModelDynamics:
    """Adapter exposing a :class:`PhysicsModel` as batched, linearisable dynamics."""

    def __init__(self, model: PhysicsModel, phi, dt: float = 1e-3):
        self.model = model
        self.phi = tuple(float(p) for p in phi)
        self.dt = dt

    def _rows(self, S, V):
        n = len(V)
        return np.column_stack([S[:, 0], S[:, 1], V, np.full(n, self.dt)])

    def step(self, S: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Next states for rows of ``S`` (``(n, 2)``) under voltages ``V`` (``(n,)``)."""
        _, x_next, u_next = self.model._transition(self._rows(S, V), self.phi)
        return np.hstack([x_next, u_next])

    def jacobians(self, S: np.ndarray, V: np.ndarray):
        """Per-row ``(A, B)``: ``A[t] = d s'/d s`` (2x2), ``B[t] = d s'/d V`` (2,)."""
        tape = ad.Tape()
        X = tape.leaf(self._rows(S, V))
        _, x_next, u_next = self.model._transition(X, self.phi)
        gx = tape.backward(ad.sum(x_next))[X]
        gu = tape.backward(ad.sum(u_next))[X]
        A = np.stack([gx[:, 0:2], gu[:, 0:2]], axis=1)
        B = np.stack([gx[:, 2], gu[:, 2]], axis=1)
        return A, B


class LinearDynamics:
    """``s' = A s + B V`` for every row; used for analytic checks."""

    def __init__(self, A, B):
        self.A = np.asarray(A, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)

    def step(self, S, V):
        return S @ self.A.T + np.outer(V, self.B)

    def jacobians(self, S, V):
        n = len(V)
        return np.repeat(self.A[None], n, axis=0), np.repeat(self.B[None], n, axis=0)


@dataclass
class PlanInfo:
    costs: list = field(default_factory=list)
    iterations: int = 0
    seed_index: int = 0


class IlqrPlanner:
    """Finite-horizon iLQR over scaled position and voltage errors.

    Objective over a plan ``V_0 .. V_{T-1}`` and predicted states ``s_1 .. s_T``::

        sum_t 0.5 w_a (V_t / v_scale)^2 + sum_t 0.5 w_s ((x_t - x*) / x_scale)^2
    """

    def __init__(self, config: MpcConfig = MpcConfig()):
        self.config = config

    # -- pieces --------------------------------------------------------------------

    def rollout(self, dynamics, s0, V):
        """States ``(B, T + 1, 2)`` for a batch of plans ``V`` of shape ``(B, T)``."""
        V = np.atleast_2d(V)
        n, T = V.shape
        states = np.empty((n, T + 1, 2))
        states[:, 0] = s0
        for t in range(T):
            states[:, t + 1] = dynamics.step(states[:, t], V[:, t])
        return states

    def cost(self, states, V, x_target):
        c = self.config
        dx = (states[..., 1:, 0] - x_target) / c.x_scale
        dv = np.atleast_2d(V) / c.v_scale
        return 0.5 * (c.w_s * np.sum(dx * dx, axis=-1) + c.w_a * np.sum(dv * dv, axis=-1))

    def _backward(self, A, B, states, V, x_target):
        c = self.config
        T = len(V)
        wx = c.w_s / c.x_scale ** 2
        wv = c.w_a / c.v_scale ** 2
        k = np.zeros(T)
        K = np.zeros((T, 2))
        Vx = np.array([wx * (states[T, 0] - x_target), 0.0])
        Vxx = np.diag([wx, 0.0])
        for t in range(T - 1, -1, -1):
            fx, fu = A[t], B[t]
            if t > 0:
                lx = np.array([wx * (states[t, 0] - x_target), 0.0])
                lxx = np.diag([wx, 0.0])
            else:
                lx, lxx = np.zeros(2), np.zeros((2, 2))
            Qx = lx + fx.T @ Vx
            Qu = wv * V[t] + fu @ Vx
            Qxx = lxx + fx.T @ Vxx @ fx
            Quu = wv + fu @ Vxx @ fu + c.reg
            Qux = fu @ Vxx @ fx
            kt = -Qu / Quu
            target = V[t] + kt
            if target > c.v_max or target < c.v_min:
                kt = np.clip(target, c.v_min, c.v_max) - V[t]
                Kt = np.zeros(2)
            else:
                Kt = -Qux / Quu
            k[t], K[t] = kt, Kt
            Vx = Qx + Kt * Quu * kt + Kt * Qu + Qux * kt
            Vxx = Qxx + Quu * np.outer(Kt, Kt) + np.outer(Kt, Qux) + np.outer(Qux, Kt)
            Vxx = 0.5 * (Vxx + Vxx.T)
        return k, K

    def _line_search(self, dynamics, s0, states, V, k, K):
        c = self.config
        alphas = np.asarray(c.alphas)
        n, T = len(alphas), len(V)
        new_states = np.empty((n, T + 1, 2))
        new_V = np.empty((n, T))
        new_states[:, 0] = s0
        for t in range(T):
            dv = (new_states[:, t] - states[t]) @ K[t]
            new_V[:, t] = np.clip(V[t] + alphas * k[t] + dv, c.v_min, c.v_max)
            new_states[:, t + 1] = dynamics.step(new_states[:, t], new_V[:, t])
        return new_states, new_V

    # -- main entry --------------------------------------------------------------------

    def plan(self, dynamics, s0, x_target: float, warm_start=None):
        """Optimise a voltage plan from state ``s0``; returns ``(V, states, info)``."""
        c = self.config
        s0 = np.asarray(s0, dtype=np.float64)
        seeds = [np.full(c.horizon, v) for v in c.seed_voltages]
        if warm_start is not None:
            seeds.insert(0, np.clip(np.asarray(warm_start, dtype=np.float64), c.v_min, c.v_max))
        seeds = np.array(seeds)
        seed_states = self.rollout(dynamics, s0, seeds)
        seed_costs = self.cost(seed_states, seeds, x_target)
        best = int(np.argmin(seed_costs))
        V, states = seeds[best].copy(), seed_states[best]
        info = PlanInfo(costs=[float(seed_costs[best])], seed_index=best)
        for it in range(c.lqr_iters):
            A, B = dynamics.jacobians(states[:-1], V)
            bad = ~(np.all(np.isfinite(A), axis=(1, 2)) & np.all(np.isfinite(B), axis=1))
            if np.any(bad):
                raise JacobianError(f"non-finite dynamics Jacobian at timestep {int(np.argmax(bad))}")
            k, K = self._backward(A, B, states, V, x_target)
            cand_states, cand_V = self._line_search(dynamics, s0, states, V, k, K)
            cand_costs = self.cost(cand_states, cand_V, x_target)
            j = int(np.argmin(cand_costs))
            info.iterations = it + 1
            if not cand_costs[j] < info.costs[-1]:
                break
            improvement = info.costs[-1] - cand_costs[j]
            V, states = cand_V[j], cand_states[j]
            info.costs.append(float(cand_costs[j]))
            if improvement < c.tol:
                break
        return V, states, info


class MpcPolicy:
    """Receding-horizon controller: replan every step, apply the first voltage.

    Static friction makes the model flat in the voltage while the coin rests,
    and an uncertain model may predict that any breakaway voltage overshoots.
    The optimal plan is then to do nothing, which also teaches the parameter
    estimator nothing.  When the coin rests away from the target and the plan
    predicts no motion, the policy instead applies a probe voltage that rises
    by ``probe_step_v`` per step until the coin moves.
    """

    def __init__(self, model: PhysicsModel, config: MpcConfig = MpcConfig(),
                 x_target: float = -1e-3, dt: float = 1e-3, tol: float = 1e-5):
        self.model = model
        self.config = config
        self.planner = IlqrPlanner(config)
        self.x_target = x_target
        self.dt = dt
        self.tol = tol
        self.reset()

    def reset(self):
        self.plan = None
        self.last_info = None
        self.probe_voltage = self.config.v_min

    def act(self, obs, phi) -> float:
        warm = None
        if self.plan is not None:
            warm = np.append(self.plan[1:], self.plan[-1])
        dynamics = ModelDynamics(self.model, phi, self.dt)
        V, states, info = self.planner.plan(dynamics, obs, self.x_target, warm)
        self.plan, self.last_info = V, info
        resting = obs[1] == 0.0 and abs(obs[0] - self.x_target) >= self.tol
        static = np.max(np.abs(states[:, 0] - states[0, 0])) < 0.1 * self.tol
        if resting and static:
            self.probe_voltage = min(self.probe_voltage + self.config.probe_step_v,
                                     self.config.v_max)
            return float(max(V[0], self.probe_voltage))
        return float(V[0])


def mpc_plan(model: PhysicsModel, state, phi, config: MpcConfig = MpcConfig(),
             x_target: float = -1e-3, dt: float = 1e-3, warm_start=None) -> float:
    """First voltage of an optimised plan from ``state``."""
    V, _, _ = IlqrPlanner(config).plan(ModelDynamics(model, phi, dt), state, x_target, warm_start)
    return float(V[0])

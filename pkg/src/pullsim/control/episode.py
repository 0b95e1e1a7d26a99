"""Closed-loop episodes: act, step, store, infer, learn."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .env import CostScales, Environment, reward
from .inference import ParamEstimator
from .replay import ReplayBuffer

LOG_HEADER = ("iter", "t", "x_true", "x_obs", "u", "V", "reward", "mc_hat", "mub_hat")


@dataclass
class EpisodeLog:
    rows: list = field(default_factory=list)
    iterations_to_terminal: int | None = None
    resets: int = 0
    wall_time_s: float = 0.0

    @property
    def converged(self) -> bool:
        return self.iterations_to_terminal is not None

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[LOG_HEADER.index(name)] for r in self.rows], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_HEADER)
            for r in self.rows:
                writer.writerow([r[0]] + [f"{v:.17g}" for v in r[1:]])


def first_within(values: np.ndarray, truth: float, rel_tol: float = 0.1) -> int | None:
    """1-based index of the first entry within ``rel_tol`` relative error of ``truth``."""
    hits = np.flatnonzero(np.abs(values - truth) <= rel_tol * abs(truth))
    return int(hits[0]) + 1 if len(hits) else None


def run_episode(env: Environment, policy, *, estimator: ParamEstimator | None = None,
                phi=None, rng: np.random.Generator | None = None,
                max_iters: int | None = None, continue_after_terminal: bool = False,
                reset_on_overshoot: bool = True, scales: CostScales = CostScales(),
                buffer_capacity: int = 1_000_000, stop_when=None) -> EpisodeLog:
    """Run one control episode.

    The policy sees noisy observations and the current parameter estimate.
    With an ``estimator`` the parameters are refined from replayed
    transitions every ``estimator.config.every`` steps; otherwise ``phi`` is
    passed through unchanged.  Because the coin can only move towards ``-x``,
    a coin past the target band is unrecoverable, so the task restarts from
    the initial state while the iteration count keeps running.  Reaching the
    iteration limit is reported as non-convergence, not raised.
    ``stop_when(log)`` may end the run early once it returns True.
    """
    cfg = env.config
    max_iters = cfg.max_iters if max_iters is None else max_iters
    rng = rng if rng is not None else np.random.default_rng(0)
    model = getattr(policy, "model", None)
    if estimator is not None and model is None:
        raise ValueError("inference needs a policy that carries a physics model")
    buffer = ReplayBuffer(buffer_capacity, {"s": 2, "a": 2, "z": 2, "s2": 2}) if estimator else None

    log = EpisodeLog()
    start = time.perf_counter()
    obs = env.reset()
    if hasattr(policy, "reset"):
        policy.reset()
    for it in range(max_iters):
        current_phi = estimator.phi if estimator is not None else phi
        V = float(policy.act(obs, current_phi))
        next_obs, done = env.step(V)
        r = reward(next_obs[0], V, cfg.x_target, scales)
        if hasattr(policy, "observe"):
            policy.observe(obs, V, r, next_obs, done)
        if estimator is not None:
            z = model.material(np.array([[obs[0], obs[1], V, cfg.dt]]))[0]
            buffer.add(s=obs, a=[V, cfg.dt], z=z, s2=next_obs)
            if (it + 1) % estimator.config.every == 0:
                estimator.update(buffer.sample(estimator.config.batch_size, rng))
        m_hat, mu_hat = (estimator.m_c, estimator.mu_b) if estimator is not None else (
            (phi[0], phi[1]) if phi is not None else (float("nan"), float("nan")))
        log.rows.append((it + 1, (it + 1) * cfg.dt, env.x, float(next_obs[0]), env.u, V, r,
                         m_hat, mu_hat))
        obs = next_obs
        if done and log.iterations_to_terminal is None:
            log.iterations_to_terminal = it + 1
        if stop_when is not None and stop_when(log):
            break
        overshoot = env.x < cfg.x_target - cfg.tol
        if done or (reset_on_overshoot and overshoot):
            if done and not continue_after_terminal:
                break
            obs = env.reset()
            log.resets += 1
            if hasattr(policy, "reset_task"):
                policy.reset_task()
            elif hasattr(policy, "reset"):
                policy.reset()
    log.wall_time_s = time.perf_counter() - start
    return log

"""Soft actor-critic with twin critics and a tanh-squashed Gaussian actor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..nets import AdamState, DivergenceError, Mlp, adam_step
from .replay import ReplayBuffer

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_SQUASH_EPS = 1e-6


@dataclass(frozen=True)
class SacConfig:
    """Hyperparameters; the action is squashed into ``[action_low, action_high]``.

    ``obs_scale`` divides each observation component before it reaches the
    networks.  Random actions are taken for the first ``warmup_steps`` steps
    and a gradient update runs every ``update_every`` environment steps once
    the buffer holds a full batch.
    """

    hidden: tuple = (256, 256)
    tau: float = 0.005
    gamma: float = 0.99
    batch_size: int = 256
    capacity: int = 1_000_000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    alpha_init: float = 1.0
    target_entropy: float = -1.0
    action_low: float = 0.0
    action_high: float = 300.0
    obs_scale: tuple = (1e-3, 1e-2)
    warmup_steps: int = 1000
    update_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= capacity")
        if not self.action_low < self.action_high:
            raise ValueError("need action_low < action_high")
        if self.alpha_init <= 0 or self.update_every < 1 or self.warmup_steps < 0:
            raise ValueError("alpha_init must be positive, update_every >= 1, warmup_steps >= 0")

    @property
    def obs_dim(self) -> int:
        return len(self.obs_scale)


def soft_update(target: list, online: list, tau: float) -> list:
    """``tau * online + (1 - tau) * target`` for every parameter block."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return [tau * o + (1.0 - tau) * t for t, o in zip(target, online)]


def _actor_heads(out):
    """Split raw actor output into mean and a bounded log standard deviation."""
    mu = out[:, 0:1]
    log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (ad.tanh(out[:, 1:2]) + 1.0)
    return mu, log_std


def _sample(actor: Mlp, params, obs, eps):
    """Reparameterised squashed sample in ``[-1, 1]`` and its log-density there."""
    mu, log_std = _actor_heads(actor.forward(obs, params))
    pre = mu + ad.exp(log_std) * eps
    a = ad.tanh(pre)
    logp = -0.5 * eps * eps - log_std - _HALF_LOG_2PI - ad.log(1.0 - ad.square(a) + _SQUASH_EPS)
    return a, logp


@dataclass
class SacState:
    """Networks, target critics, optimiser moments and the entropy temperature."""

    actor: Mlp
    critics: tuple
    targets: tuple
    log_alpha: float
    actor_opt: AdamState
    critic_opts: tuple
    alpha_opt: AdamState
    updates: int = 0

    @classmethod
    def init(cls, config: SacConfig, rng: np.random.Generator) -> "SacState":
        hidden = tuple(config.hidden)
        actor = Mlp.init((config.obs_dim, *hidden, 2), rng)
        critics = tuple(Mlp.init((config.obs_dim + 1, *hidden, 1), rng) for _ in range(2))
        targets = tuple(c.with_params([p.copy() for p in c.params()]) for c in critics)
        return cls(actor, critics, targets, float(np.log(config.alpha_init)),
                   AdamState(config.actor_lr),
                   (AdamState(config.critic_lr), AdamState(config.critic_lr)),
                   AdamState(config.alpha_lr))

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


def _check(name: str, value: float) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite SAC {name} loss")
    return value


def sac_update(config: SacConfig, state: SacState, batch: dict,
               rng: np.random.Generator) -> dict:
    """One SAC step on a batch of ``s`` (scaled), ``a`` (in [-1, 1]), ``r``, ``s2``, ``d``.

    Updates both critics towards the clipped double-Q soft target, then the
    actor, then the temperature, then blends the target critics by ``tau``.
    Returns the losses.
    """
    s, a, r, s2, d = batch["s"], batch["a"], batch["r"], batch["s2"], batch["d"]
    n = len(s)
    alpha = state.alpha

    eps2 = rng.standard_normal((n, 1))
    a2, logp2 = _sample(state.actor, state.actor.params(), s2, eps2)
    sa2 = np.hstack([s2, a2])
    q_next = np.minimum(state.targets[0].forward(sa2), state.targets[1].forward(sa2))
    y = r + config.gamma * (1.0 - d) * (q_next - alpha * logp2)

    sa = np.hstack([s, a])
    losses = {}
    new_critics = []
    for i, (critic, opt) in enumerate(zip(state.critics, state.critic_opts)):
        value, grads = ad.grad(lambda *p, c=critic: ad.mean(ad.square(c.forward(sa, p) - y)),
                               *critic.params())
        losses[f"critic{i + 1}"] = _check(f"critic{i + 1}", value)
        new_critics.append(critic.with_params(adam_step(opt, critic.params(), grads,
                                                        critic.param_names())))
    state.critics = tuple(new_critics)

    eps = rng.standard_normal((n, 1))
    q1, q2 = state.critics
    logp_seen = []

    def actor_loss(*p):
        act, logp = _sample(state.actor, p, s, eps)
        logp_seen.append(ad.value(logp))
        sa_pi = ad.concat([s, act], axis=1)
        v1, v2 = q1.forward(sa_pi), q2.forward(sa_pi)
        q_min = ad.where(ad.value(v1) <= ad.value(v2), v1, v2)
        return ad.mean(alpha * logp - q_min)

    value, grads = ad.grad(actor_loss, *state.actor.params())
    losses["actor"] = _check("actor", value)
    state.actor = state.actor.with_params(adam_step(state.actor_opt, state.actor.params(), grads,
                                                    state.actor.param_names()))

    entropy_gap = float(np.mean(logp_seen[0])) + config.target_entropy
    losses["alpha"] = _check("alpha", -state.log_alpha * entropy_gap)
    (state.log_alpha,) = adam_step(state.alpha_opt, [np.array(state.log_alpha)],
                                   [np.array(-entropy_gap)], ["log_alpha"])
    state.log_alpha = float(state.log_alpha)

    state.targets = tuple(
        t.with_params(soft_update(t.params(), c.params(), config.tau))
        for t, c in zip(state.targets, state.critics)
    )
    state.updates += 1
    return losses


class SacPolicy:
    """Online SAC agent that learns from every transition it is shown.

    The networks persist across task restarts within an episode; a new
    episode builds a new policy from a fresh seed.
    """

    def __init__(self, config: SacConfig = SacConfig(), rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state = SacState.init(config, self.rng)
        self.buffer = ReplayBuffer(config.capacity,
                                   {"s": config.obs_dim, "a": 1, "r": 1, "s2": config.obs_dim,
                                    "d": 1})
        self.steps = 0
        self.last_losses: dict = {}

    @property
    def _half_range(self) -> float:
        return 0.5 * (self.config.action_high - self.config.action_low)

    def _scale_obs(self, obs) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64).reshape(1, -1) / np.asarray(self.config.obs_scale)

    def to_unit(self, V: float) -> float:
        return (V - self.config.action_low) / self._half_range - 1.0

    def from_unit(self, a: float) -> float:
        V = self.config.action_low + self._half_range * (a + 1.0)
        return float(np.clip(V, self.config.action_low, self.config.action_high))

    def mean_action(self, obs) -> float:
        """Deterministic action: the squashed actor mean."""
        mu, _ = _actor_heads(self.state.actor.forward(self._scale_obs(obs)))
        return self.from_unit(float(np.tanh(mu[0, 0])))

    def act(self, obs, phi=None) -> float:
        if self.steps < self.config.warmup_steps:
            return self.from_unit(float(self.rng.uniform(-1.0, 1.0)))
        a, _ = _sample(self.state.actor, self.state.actor.params(), self._scale_obs(obs),
                       self.rng.standard_normal((1, 1)))
        return self.from_unit(float(a[0, 0]))

    def observe(self, obs, V, r, next_obs, done) -> None:
        self.buffer.add(s=self._scale_obs(obs), a=[self.to_unit(V)], r=[r],
                        s2=self._scale_obs(next_obs), d=[float(done)])
        self.steps += 1
        if (len(self.buffer) >= self.config.batch_size
                and self.steps % self.config.update_every == 0):
            batch = self.buffer.sample(self.config.batch_size, self.rng)
            self.last_losses = sac_update(self.config, self.state, batch, self.rng)

    def reset_task(self) -> None:
        """Task restarts keep the learned networks and the replay buffer."""

"""Physics-informed coin model: a material network for contact forces composed
with analytic friction dynamics.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .dynamics import CONTACT_LOSS_V, GRAVITY, DynamicsParams, dynamics_step
from .losses import learning_loss
from .nets import AdamState, EarlyStop, Mlp, mlp_from_dict, mlp_to_dict, train_loop
from .validation import check_features, check_phi, check_targets, safe_scale

BUNDLE_FORMAT = "pullsim.model"
BUNDLE_VERSION = 1


class _Batch:
    """Arrays for one loss evaluation."""

    def __init__(self, X, forces, state, phi):
        self.X, self.forces, self.state, self.phi = X, forces, state, phi

    def __len__(self):
        return self.X.shape[0]


class PhysicsModel(RegressorMixin, BaseEstimator):
    """Material network ``m(x, u, V, dt) -> (Fx, Fy)`` composed with friction dynamics.

    ``fit`` takes rows ``X = (x, u, V, dt)`` and targets ``y = (Fx, Fy, x', u')``;
    ``predict`` returns the same four columns.  Dynamics parameters
    ``(m_c, mu_b, V_T)`` come from the constructor or from a per-row ``phi``
    array, which lets one material network train across several setups.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
    learning_rate : float
        Adam step size for the network weights.
    max_iter : int
        Full-batch iterations.
    patience, min_delta :
        Early stopping on the validation loss; patience counts evaluations.
    validation_interval : int
        Iterations between validation evaluations.
    velocity_jitter : float
        Log-normal spread of the velocity jitter applied to copies of the
        sliding rows (0 disables it).  The copies keep the recorded forces and
        take their next states from the analytic dynamics, which teaches the
        network that contact forces do not depend on small velocity changes.
    random_state : int
        Seed for weight initialisation and the jitter.
    m_c, mu_b, V_T : float or None
        Default dynamics parameters (kg, -, V).
    V_loss : float
        Voltage at and above which the actuator loses contact.
    """

    def __init__(self, hidden_layer_sizes=(128, 128, 128), learning_rate=1e-3, max_iter=1000,
                 patience=50, min_delta=0.0, validation_interval=10, velocity_jitter=0.1,
                 random_state=0, m_c=None, mu_b=None, V_T=None, V_loss=CONTACT_LOSS_V,
                 g=GRAVITY):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.patience = patience
        self.min_delta = min_delta
        self.validation_interval = validation_interval
        self.velocity_jitter = velocity_jitter
        self.random_state = random_state
        self.m_c = m_c
        self.mu_b = mu_b
        self.V_T = V_T
        self.V_loss = V_loss
        self.g = g

    # -- parameters ---------------------------------------------------------------

    @property
    def params_(self) -> DynamicsParams:
        if None in (self.m_c, self.mu_b, self.V_T):
            raise ValueError("dynamics parameters m_c, mu_b and V_T are not all set")
        return DynamicsParams(float(self.m_c), float(self.mu_b), float(self.V_T),
                              float(self.V_loss), float(self.g))

    def _phi(self, phi, n):
        if phi is None:
            p = self.params_
            phi = [p.m_c, p.mu_b, p.V_T]
        return check_phi(phi, n)

    def with_params(self, **params) -> "PhysicsModel":
        """Copy sharing the fitted network, with some constructor parameters replaced."""
        other = copy.copy(self)
        other.set_params(**params)
        return other

    # -- fitting ------------------------------------------------------------------

    def _jitter(self, X, y, phi, rng):
        """Append sliding rows with scaled velocities and dynamics-consistent targets."""
        moving = X[:, 1] != 0.0
        if self.velocity_jitter <= 0 or not np.any(moving):
            return X, y, phi
        Xa = X[moving].copy()
        Xa[:, 1] *= np.exp(self.velocity_jitter * rng.standard_normal(len(Xa)))
        z, p = y[moving, 0:2], phi[moving]
        x_next, u_next = dynamics_step(z[:, 0:1], z[:, 1:2], Xa[:, 0:1], Xa[:, 1:2], Xa[:, 2:3],
                                       Xa[:, 3:4], p[:, 0:1], p[:, 1:2], p[:, 2:3], self.g)
        return (np.vstack([X, Xa]), np.vstack([y, np.hstack([z, x_next, u_next])]),
                np.vstack([phi, p]))

    def fit(self, X, y, phi=None, X_val=None, y_val=None, phi_val=None):
        if self.velocity_jitter < 0:
            raise ValueError("velocity_jitter must be non-negative")
        X = check_features(X)
        y = check_targets(y, X.shape[0], 4, "y")
        phi = self._phi(phi, X.shape[0])
        if X_val is None:
            X_val, y_val, phi_val = X, y, phi
        else:
            X_val = check_features(X_val)
            y_val = check_targets(y_val, X_val.shape[0], 4, "y_val")
            phi_val = self._phi(phi_val, X_val.shape[0])

        increments = y[:, 2:4] - X[:, 0:2]
        self.stats_ = {
            "x_mean": X.mean(axis=0, keepdims=True),
            "x_scale": safe_scale(X),
            "z_mean": y[:, 0:2].mean(axis=0, keepdims=True),
            "z_scale": safe_scale(y[:, 0:2]),
            "s_scale": safe_scale(increments),
        }
        rng = np.random.default_rng(self.random_state)
        sizes = (4, *self.hidden_layer_sizes, 2)
        net = Mlp.init(sizes, rng, zero_output=True)
        jitter_seed = None if self.random_state is None else [self.random_state, 1]
        X, y, phi = self._jitter(X, y, phi, np.random.default_rng(jitter_seed))

        def loss_fn(params, batch):
            forces, x_next, u_next = self._transition(batch.X, batch.phi, params, net)
            return learning_loss(forces, batch.forces, ad.concat([x_next, u_next]), batch.state,
                                 self.stats_["z_scale"], self.stats_["s_scale"])

        train = _Batch(X, y[:, 0:2], y[:, 2:4], phi)
        val = _Batch(X_val, y_val[:, 0:2], y_val[:, 2:4], phi_val)
        best, history = train_loop(
            net.params(), loss_fn, train, val, max_iters=self.max_iter,
            early_stop=EarlyStop(self.patience, self.min_delta),
            optimizer=AdamState(self.learning_rate), names=net.param_names(),
            eval_every=self.validation_interval)
        self.net_ = net.with_params(best)
        self.history_ = np.asarray(history, dtype=np.float64)
        self.n_features_in_ = 4
        return self

    # -- evaluation -----------------------------------------------------------------

    def material(self, X, params=None, net=None):
        """Interaction forces for rows ``X``; arrays or Vars.  Zero past contact loss."""
        net = self.net_ if net is None else net
        s = self.stats_
        Xs = (X - s["x_mean"]) / s["x_scale"]
        forces = net.forward(Xs, params) * s["z_scale"] + s["z_mean"]
        lost = ad.value(X)[:, 2:3] >= self.V_loss
        return ad.where(lost, 0.0, forces)

    def _transition(self, X, phi, params=None, net=None):
        forces = self.material(X, params, net)
        if isinstance(phi, np.ndarray) and phi.ndim == 2:
            m_c, mu_b, V_T = phi[:, 0:1], phi[:, 1:2], phi[:, 2:3]
        else:
            m_c, mu_b, V_T = phi
        x_next, u_next = dynamics_step(forces[:, 0:1], forces[:, 1:2], X[:, 0:1], X[:, 1:2],
                                       X[:, 2:3], X[:, 3:4], m_c, mu_b, V_T, self.g)
        return forces, x_next, u_next

    def transition(self, X, phi=None):
        """Differentiable one-step model ``(forces, x', u')``.

        ``X`` may be a Var of shape ``(n, 4)``; ``phi`` a tuple
        ``(m_c, mu_b, V_T)`` of floats or Vars.  Defaults to the model's
        parameters.
        """
        check_is_fitted(self, "net_")
        if phi is None:
            p = self.params_
            phi = (p.m_c, p.mu_b, p.V_T)
        return self._transition(X, phi)

    def forces(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self.material(check_features(X))

    def predict(self, X, phi=None) -> np.ndarray:
        """Columns ``(Fx, Fy, x', u')`` for each row of ``X``."""
        check_is_fitted(self, "net_")
        X = check_features(X)
        forces, x_next, u_next = self._transition(X, self._phi(phi, X.shape[0]))
        return np.hstack([forces, x_next, u_next])

    def score(self, X, y, sample_weight=None):
        from sklearn.metrics import r2_score
        return r2_score(y, self.predict(X), sample_weight=sample_weight)

    def step(self, x: float, u: float, V: float, dt: float):
        """Single transition on floats; returns ``(x', u', Fx, Fy)``."""
        check_is_fitted(self, "net_")
        p = self.params_
        X = np.array([[x, u, V, dt]], dtype=np.float64)
        forces, x_next, u_next = self._transition(X, (p.m_c, p.mu_b, p.V_T))
        return float(x_next[0, 0]), float(u_next[0, 0]), float(forces[0, 0]), float(forces[0, 1])

    def rollout(self, s0, actions):
        """Recursive simulation from ``s0 = (x, u)`` under rows of ``(V, dt)``.

        Returns ``(states, forces)`` of shapes ``(T + 1, 2)`` and ``(T, 2)``.
        """
        check_is_fitted(self, "net_")
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
        if len(actions) == 0:
            raise ValueError("rollout needs at least one action")
        if np.any(actions[:, 0] < 0) or np.any(actions[:, 1] <= 0):
            raise ValueError("actions need V >= 0 and dt > 0")
        p = self.params_
        phi = (p.m_c, p.mu_b, p.V_T)
        states = np.empty((len(actions) + 1, 2))
        forces = np.empty((len(actions), 2))
        states[0] = s0
        row = np.empty((1, 4))
        for t, (V, dt) in enumerate(actions):
            row[0] = (states[t, 0], states[t, 1], V, dt)
            f, x_next, u_next = self._transition(row, phi)
            forces[t] = f[0]
            states[t + 1] = (x_next[0, 0], u_next[0, 0])
        if not np.all(np.isfinite(states)):
            raise FloatingPointError("rollout produced non-finite states")
        return states, forces

    # -- persistence --------------------------------------------------------------------

    def to_dict(self, metadata: dict | None = None) -> dict:
        check_is_fitted(self, "net_")
        hyper = self.get_params()
        hyper["hidden_layer_sizes"] = list(hyper["hidden_layer_sizes"])
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "hyperparameters": hyper,
            "material": mlp_to_dict(self.net_, self.stats_),
            "metadata": metadata or {},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhysicsModel":
        if data.get("format") != BUNDLE_FORMAT or data.get("version") != BUNDLE_VERSION:
            raise ValueError("not a physics model bundle of a supported version")
        hyper = dict(data["hyperparameters"])
        hyper["hidden_layer_sizes"] = tuple(hyper["hidden_layer_sizes"])
        model = cls(**hyper)
        model.net_, stats = mlp_from_dict(data["material"])
        model.stats_ = {k: v.reshape(1, -1) for k, v in stats.items()}
        model.n_features_in_ = 4
        model.metadata_ = data.get("metadata", {})
        return model

    def save(self, path, metadata: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(metadata), indent=1, allow_nan=False))

    @classmethod
    def load(cls, path) -> "PhysicsModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"model bundle not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))

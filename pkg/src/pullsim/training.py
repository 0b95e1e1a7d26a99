"""Datasets, material-network learning, and the direct-regression baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .model import PhysicsModel
from .nets import AdamState, EarlyStop, Mlp, mlp_from_dict, mlp_to_dict, train_loop
from .surrogate import Transition, read_transitions_csv, transitions_to_array
from .validation import check_features, check_targets, safe_scale


@dataclass
class Dataset:
    """Transitions from one setup together with that setup's true dynamics parameters.

    ``rows`` has columns ``t, x, u, V, dt, Fx, Fy, x_next, u_next``.
    """

    setup_id: str
    rows: np.ndarray
    m_c: float
    mu_b: float
    V_T: float

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, 9)
        if len(self.rows) == 0:
            raise ValueError(f"dataset {self.setup_id} is empty")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError(f"dataset {self.setup_id} contains non-finite values")
        if np.any(np.diff(self.rows[:, 0]) <= 0):
            raise ValueError(f"dataset {self.setup_id} timestamps are not increasing")

    @classmethod
    def from_transitions(cls, setup_id, transitions: Sequence[Transition], m_c, mu_b, V_T):
        return cls(setup_id, transitions_to_array(transitions), m_c, mu_b, V_T)

    @classmethod
    def from_csv(cls, setup_id, path, m_c, mu_b, V_T):
        return cls.from_transitions(setup_id, read_transitions_csv(path), m_c, mu_b, V_T)

    def __len__(self):
        return len(self.rows)

    @property
    def X(self) -> np.ndarray:
        return self.rows[:, 1:5]

    @property
    def forces(self) -> np.ndarray:
        return self.rows[:, 5:7]

    @property
    def next_state(self) -> np.ndarray:
        return self.rows[:, 7:9]

    @property
    def y(self) -> np.ndarray:
        return self.rows[:, 5:9]

    @property
    def phi(self) -> np.ndarray:
        return np.tile([self.m_c, self.mu_b, self.V_T], (len(self), 1))

    @property
    def actions(self) -> np.ndarray:
        return self.rows[:, 3:5]

    @property
    def x_trajectory(self) -> np.ndarray:
        """Positions at every sample time plus the final state."""
        return np.concatenate([self.rows[:1, 1], self.rows[:, 7]])


def stack(datasets: Sequence[Dataset]):
    """Concatenate datasets into ``(X, y, phi)`` arrays."""
    if not datasets:
        raise ValueError("no datasets given")
    return (np.vstack([d.X for d in datasets]), np.vstack([d.y for d in datasets]),
            np.vstack([d.phi for d in datasets]))


@dataclass
class LearningConfig:
    learning_rate: float = 1e-3
    max_iters: int = 1000
    min_delta: float = 0.0
    patience: int = 50
    validation_interval: int = 10
    hidden_layer_sizes: tuple = (128, 128, 128)
    velocity_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


def learn_material(train: Sequence[Dataset], val: Sequence[Dataset],
                   config: LearningConfig | None = None) -> PhysicsModel:
    """Fit one material network across setups, each with its own fixed dynamics parameters."""
    config = config or LearningConfig()
    overlap = {d.setup_id for d in train} & {d.setup_id for d in val}
    if overlap:
        raise ValueError(f"training and validation setups overlap: {sorted(overlap)}")
    X, y, phi = stack(train)
    Xv, yv, phiv = stack(val)
    model = PhysicsModel(hidden_layer_sizes=tuple(config.hidden_layer_sizes),
                         learning_rate=config.learning_rate, max_iter=config.max_iters,
                         patience=config.patience, min_delta=config.min_delta,
                         validation_interval=config.validation_interval,
                         velocity_jitter=config.velocity_jitter, random_state=config.seed)
    return model.fit(X, y, phi, Xv, yv, phiv)


class BaselineNN(RegressorMixin, BaseEstimator):
    """Plain network regressing the next state ``(x', u')`` from ``(x, u, V, dt)``."""

    def __init__(self, hidden_layer_sizes=(128, 128, 128), learning_rate=1e-3, max_iter=1000,
                 patience=50, min_delta=0.0, validation_interval=10, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.patience = patience
        self.min_delta = min_delta
        self.validation_interval = validation_interval
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_features(X)
        y = check_targets(y, X.shape[0], 2, "y")
        if X_val is None:
            X_val, y_val = X, y
        else:
            X_val = check_features(X_val)
            y_val = check_targets(y_val, X_val.shape[0], 2, "y_val")
        self.stats_ = {
            "x_mean": X.mean(axis=0, keepdims=True),
            "x_scale": safe_scale(X),
            "y_mean": y.mean(axis=0, keepdims=True),
            "y_scale": safe_scale(y),
        }
        s = self.stats_
        net = Mlp.init((4, *self.hidden_layer_sizes, 2), np.random.default_rng(self.random_state),
                       zero_output=True)

        def loss_fn(params, data):
            Xd, yd = data
            pred = net.forward((Xd - s["x_mean"]) / s["x_scale"], params)
            return ad.mean(ad.sum(ad.square(pred - (yd - s["y_mean"]) / s["y_scale"]), axis=1))

        best, history = train_loop(
            net.params(), loss_fn, _Pair(X, y), _Pair(X_val, y_val), max_iters=self.max_iter,
            early_stop=EarlyStop(self.patience, self.min_delta),
            optimizer=AdamState(self.learning_rate), names=net.param_names(),
            eval_every=self.validation_interval)
        self.net_ = net.with_params(best)
        self.history_ = np.asarray(history, dtype=np.float64)
        self.n_features_in_ = 4
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self._predict(check_features(X))

    def _predict(self, X):
        s = self.stats_
        return self.net_.forward((X - s["x_mean"]) / s["x_scale"]) * s["y_scale"] + s["y_mean"]

    def rollout(self, s0, actions) -> np.ndarray:
        """Feed predictions back as inputs; returns states of shape ``(T + 1, 2)``."""
        check_is_fitted(self, "net_")
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
        states = np.empty((len(actions) + 1, 2))
        states[0] = s0
        row = np.empty((1, 4))
        for t, (V, dt) in enumerate(actions):
            row[0] = (states[t, 0], states[t, 1], V, dt)
            states[t + 1] = self._predict(row)[0]
        return states

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        hyper = self.get_params()
        hyper["hidden_layer_sizes"] = list(hyper["hidden_layer_sizes"])
        data = {"format": "pullsim.baseline", "version": 1, "hyperparameters": hyper,
                "network": mlp_to_dict(self.net_, self.stats_)}
        Path(path).write_text(json.dumps(data, indent=1, allow_nan=False))

    @classmethod
    def load(cls, path) -> "BaselineNN":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"baseline model not found: {path}")
        data = json.loads(path.read_text())
        if data.get("format") != "pullsim.baseline":
            raise ValueError(f"{path} is not a baseline model file")
        hyper = dict(data["hyperparameters"])
        hyper["hidden_layer_sizes"] = tuple(hyper["hidden_layer_sizes"])
        model = cls(**hyper)
        model.net_, stats = mlp_from_dict(data["network"])
        model.stats_ = {k: v.reshape(1, -1) for k, v in stats.items()}
        model.n_features_in_ = 4
        return model


@dataclass
class _Pair:
    X: np.ndarray
    y: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.X)

    def __iter__(self):
        return iter((self.X, self.y))


def loss_history_rows(history: np.ndarray) -> list:
    return [(int(it), float(tr), float(va)) for it, tr, va in history]

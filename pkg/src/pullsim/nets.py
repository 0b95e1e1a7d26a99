"""ReLU multilayer perceptrons, Adam, and an early-stopping training loop."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

CHECKPOINT_FORMAT = "pullsim.mlp"
CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class Mlp:
    """Fully connected net: ReLU on hidden layers, identity on the output layer.

    ``weights[i]`` has shape ``(layer_sizes[i], layer_sizes[i + 1])`` and
    ``biases[i]`` has shape ``(1, layer_sizes[i + 1])``; inputs are row vectors.
    """

    layer_sizes: tuple
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if np.shape(w) != expected or np.shape(b) != (1, expected[1]):
                raise ValueError(
                    f"layer {i}: expected weight {expected} and bias (1, {expected[1]}), "
                    f"got {np.shape(w)} and {np.shape(b)}"
                )

    @classmethod
    def init(cls, layer_sizes: Sequence[int], rng: np.random.Generator,
             zero_output: bool = False) -> "Mlp":
        """He-style uniform init, weights in +-sqrt(6 / fan_in), zero biases."""
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(6.0 / n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(np.zeros((1, n_out)))
        if zero_output:
            weights[-1][:] = 0.0
        return cls(tuple(layer_sizes), weights, biases)

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return int(sum(a * b + b for a, b in zip(s[:-1], s[1:])))

    def params(self) -> list:
        """Flat parameter list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def param_names(self) -> list:
        names = []
        for i in range(len(self.weights)):
            names.extend([f"W{i}", f"b{i}"])
        return names

    def with_params(self, params: Sequence) -> "Mlp":
        params = [np.array(p, dtype=np.float64) for p in params]
        return Mlp(self.layer_sizes, params[0::2], params[1::2])

    def forward(self, X, params: Sequence | None = None):
        """Evaluate on rows of ``X``.  Pass ``params`` as Vars to record on a tape."""
        params = self.params() if params is None else params
        n_in = ad.value(X).shape[-1]
        if n_in != self.layer_sizes[0]:
            raise ValueError(f"input has {n_in} features, network expects {self.layer_sizes[0]}")
        h = X
        n_layers = len(params) // 2
        for i in range(n_layers):
            h = h @ params[2 * i] + params[2 * i + 1]
            if i < n_layers - 1:
                h = ad.relu(h)
        return h

    __call__ = forward


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Forward pass for a single input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = net.forward(x.reshape(1, -1) if single else x)
    return out[0] if single else out


# -- optimisation --------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments for a list of parameter arrays.

    ``learning_rate`` may be a scalar or one rate per parameter block.
    """

    learning_rate: float | Sequence[float] = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def _rates(self, n):
        if np.isscalar(self.learning_rate):
            return [float(self.learning_rate)] * n
        rates = [float(r) for r in self.learning_rate]
        if len(rates) != n:
            raise ValueError(f"got {len(rates)} learning rates for {n} parameter blocks")
        return rates


def adam_step(state: AdamState, params: Sequence, grads: Sequence,
              names: Sequence[str] | None = None) -> list:
    """One bias-corrected Adam update; returns new parameter arrays."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameter blocks but {len(grads)} gradients")
    names = list(names) if names is not None else [f"param[{i}]" for i in range(len(params))]
    for name, p, g in zip(names, params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name}")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    new = []
    for i, (p, g, lr) in enumerate(zip(params, grads, state._rates(len(params)))):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        new.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return new


@dataclass
class EarlyStop:
    """Tracks the best validation loss and stops after ``patience`` stale evaluations."""

    patience: int = 50
    min_delta: float = 0.0
    best_loss: float = np.inf
    best_params: list | None = None
    best_iter: int = -1
    stale: int = 0

    def update(self, loss: float, params: Sequence, iteration: int = 0) -> bool:
        """Record an evaluation; returns True when training should stop."""
        if loss < self.best_loss - self.min_delta:
            self.best_loss = float(loss)
            self.best_params = [np.array(p, copy=True) for p in params]
            self.best_iter = iteration
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _scalar(x) -> float:
    return float(np.asarray(ad.value(x)).reshape(-1)[0])


def train_loop(params: Sequence, loss_fn: Callable, train_data, val_data=None, *,
               max_iters: int = 1000, early_stop: EarlyStop | None = None,
               optimizer: AdamState | None = None, names: Sequence[str] | None = None,
               eval_every: int = 1):
    """Full-batch gradient training with validation-based early stopping.

    ``loss_fn(params, data)`` must work on both plain arrays and tape Vars.
    The validation loss is evaluated every ``eval_every`` iterations and
    patience counts evaluations.  Returns ``(best_params, history)`` where
    history rows are ``(iteration, train_loss, val_loss)`` at each evaluation
    and ``best_params`` are those with the lowest validation loss seen.
    """
    if eval_every < 1:
        raise ValueError("eval_every must be at least 1")
    if train_data is None or len(train_data) == 0:
        raise ValueError("training data is empty")
    if val_data is not None and len(val_data) == 0:
        raise ValueError("validation data is empty")
    val_data = train_data if val_data is None else val_data
    early_stop = early_stop if early_stop is not None else EarlyStop()
    optimizer = optimizer if optimizer is not None else AdamState()
    params = [np.array(p, dtype=np.float64) for p in params]
    history = []
    for it in range(max_iters + 1):
        tape = ad.Tape()
        leaves = [tape.leaf(p) for p in params]
        loss = loss_fn(leaves, train_data)
        train_loss = _scalar(loss)
        if not np.isfinite(train_loss):
            raise DivergenceError(f"non-finite training loss at iteration {it}")
        if it % eval_every == 0 or it == max_iters:
            val_loss = _scalar(loss_fn(params, val_data))
            if not np.isfinite(val_loss):
                raise DivergenceError(f"non-finite validation loss at iteration {it}")
            history.append((it, train_loss, val_loss))
            if early_stop.update(val_loss, params, it) or it == max_iters:
                break
        grads = tape.backward(loss)
        params = adam_step(optimizer, params, [grads[v] for v in leaves], names)
    return [np.array(p, copy=True) for p in early_stop.best_params], history


# -- checkpoints --------------------------------------------------------------

def mlp_to_dict(net: Mlp, stats: dict | None = None) -> dict:
    flat = np.concatenate([np.ravel(p) for p in net.params()])
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "params": [float(v) for v in flat],
        "stats": {k: np.asarray(v, dtype=float).tolist() for k, v in (stats or {}).items()},
    }


def mlp_from_dict(data: dict) -> tuple[Mlp, dict]:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not an MLP checkpoint (format={data.get('format')!r})")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    sizes = [int(n) for n in data["layer_sizes"]]
    flat = np.asarray(data["params"], dtype=np.float64)
    params, pos = [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        for shape in ((n_in, n_out), (1, n_out)):
            size = shape[0] * shape[1]
            params.append(flat[pos:pos + size].reshape(shape))
            pos += size
    if pos != flat.size:
        raise ValueError(f"checkpoint has {flat.size} parameters, layout needs {pos}")
    net = Mlp(tuple(sizes), params[0::2], params[1::2])
    stats = {k: np.asarray(v, dtype=np.float64) for k, v in data.get("stats", {}).items()}
    return net, stats


def save_mlp(path, net: Mlp, stats: dict | None = None) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(net, stats), indent=1, allow_nan=False))


def load_mlp(path) -> tuple[Mlp, dict]:
    return mlp_from_dict(json.loads(Path(path).read_text()))


def clone_params(params: Sequence) -> list:
    return copy.deepcopy([np.asarray(p) for p in params])

"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

N_FEATURES = 4  # x, u, V, dt


def check_features(X) -> np.ndarray:
    """Rows of ``(x, u, V, dt)``; voltages non-negative, steps positive."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} columns (x, u, V, dt), got {X.shape[1]}")
    if np.any(X[:, 2] < 0):
        raise ValueError("voltages must be non-negative")
    if np.any(X[:, 3] <= 0):
        raise ValueError("time steps must be positive")
    return X


def check_targets(y, n_rows: int, n_cols: int, what: str) -> np.ndarray:
    y = check_array(y, dtype=np.float64, ensure_2d=True)
    if y.shape != (n_rows, n_cols):
        raise ValueError(f"{what} must have shape ({n_rows}, {n_cols}), got {y.shape}")
    return y


def check_phi(phi, n_rows: int) -> np.ndarray:
    """Per-row dynamics parameters ``(m_c, mu_b, V_T)``; a single row broadcasts."""
    phi = check_array(np.atleast_2d(phi), dtype=np.float64)
    if phi.shape[1] != 3:
        raise ValueError(f"phi needs columns (m_c, mu_b, V_T), got {phi.shape[1]}")
    if phi.shape[0] == 1:
        phi = np.repeat(phi, n_rows, axis=0)
    if phi.shape[0] != n_rows:
        raise ValueError(f"phi has {phi.shape[0]} rows, expected {n_rows}")
    if np.any(phi[:, 0] <= 0) or np.any(phi[:, 1] < 0) or np.any(phi[:, 2] <= 0):
        raise ValueError("phi requires m_c > 0, mu_b >= 0 and V_T > 0")
    return phi


def safe_scale(values: np.ndarray) -> np.ndarray:
    """Column standard deviations with degenerate columns mapped to 1."""
    std = np.std(values, axis=0, keepdims=True)
    return np.where(std > 1e-12 * np.maximum(1.0, np.abs(values).max(axis=0, keepdims=True)),
                    std, 1.0)

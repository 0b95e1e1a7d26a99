"""Physics-informed learning loss."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def learning_loss(forces_hat, forces, state_hat, state, force_scale=1.0, state_scale=1.0):
    """Mean squared force error plus mean squared next-state error.

    Squared errors sum over components (``Fx, Fy`` and ``x, u``) and average
    over rows.  Each residual column is divided by its scale first, so the two
    terms are comparable in magnitude.  Works on arrays or tape Vars.
    """
    n = ad.value(forces_hat).shape[0]
    if n == 0:
        raise ValueError("loss needs at least one row")
    rf = (forces_hat - forces) / np.asarray(force_scale, dtype=np.float64)
    rs = (state_hat - state) / np.asarray(state_scale, dtype=np.float64)
    return ad.mean(ad.sum(ad.square(rf), axis=1)) + ad.mean(ad.sum(ad.square(rs), axis=1))

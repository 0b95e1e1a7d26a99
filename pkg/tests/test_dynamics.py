import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pullsim import autodiff as ad
from pullsim.dynamics import Action, DynamicsParams, dynamics_step, friction_force, normal_force

G = 9.8


def step(Fx, Fy, x, u, V, dt=1e-3, m_c=1.37e-3, mu_b=0.2, V_T=150.0):
    xn, un = dynamics_step(Fx, Fy, x, u, V, dt, m_c, mu_b, V_T, G)
    return float(xn[0, 0]), float(un[0, 0])


def test_friction_upper_branch_value():
    f = friction_force(0.01, 200.0, 1.37e-3, 0.2, 150.0, G)
    assert f[0, 0] == pytest.approx(4.6852e-3, rel=1e-12)


def test_friction_zero_voltage():
    assert friction_force(0.01, 0.0, 1.37e-3, 0.2, 150.0, G)[0, 0] == 0.0


def test_friction_half_threshold_is_half():
    full = friction_force(0.01, 150.0, 1.37e-3, 0.2, 150.0, G)[0, 0]
    half = friction_force(0.01, 75.0, 1.37e-3, 0.2, 150.0, G)[0, 0]
    assert half == 0.5 * full


def test_normal_force_clamped():
    assert normal_force(np.array([[-1.0]]), 1e-3, G)[0, 0] == 0.0


def test_rest_stays_at_rest():
    assert step(0.0, 0.03, 0.0, 0.0, 0.0) == (0.0, 0.0)


def test_breakaway_from_rest():
    x, u = step(-0.01, 0.01, 0.0, 0.0, 200.0)
    A = (-0.01 + 4.6852e-3) / 1.37e-3
    assert A == pytest.approx(-3.879, rel=1e-3)
    assert u == pytest.approx(A * 1e-3, rel=1e-12)
    assert x == pytest.approx(-1.9397e-6, rel=1e-4)


def test_velocity_decay_stops_exactly():
    x, u = 0.0, -0.01
    us = []
    while u != 0.0:
        x_prev, u_prev = x, u
        x, u = step(0.0, 0.0, x, u, 0.0)
        us.append(u)
        assert u <= 0.0
    np.testing.assert_allclose(np.diff([-0.01] + us[:-1]), 1.96e-3, rtol=1e-9)
    assert x == pytest.approx(x_prev - u_prev ** 2 / (2 * 0.2 * G * 1.0), rel=1e-12)
    assert step(0.0, 0.0, x, 0.0, 0.0) == (x, 0.0)


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        step(0.0, 0.0, 0.0, 0.0, 0.0, dt=0.0)


def test_parameter_validation():
    with pytest.raises(ValueError):
        DynamicsParams(m_c=0.0, mu_b=0.2, V_T=150.0)
    with pytest.raises(ValueError):
        DynamicsParams(m_c=1e-3, mu_b=0.2, V_T=400.0)
    with pytest.raises(ValueError):
        Action(V=-1.0, dt=1e-3)


@given(st.floats(0.0, 300.0), st.floats(-0.01, 0.05), st.floats(0.0, 2.0), st.floats(-1e-3, 0))
def test_stick_is_fixed_point(V, Fy, mu_b, x):
    f_mu = friction_force(Fy, V, 1.37e-3, mu_b, 150.0, G)[0, 0]
    Fx = -0.999 * f_mu
    assert step(Fx, Fy, x, 0.0, V, mu_b=mu_b) == (x, 0.0)


@given(st.floats(0.0, 300.0), st.floats(-0.05, 0.05), st.floats(0.0, 2.0))
def test_friction_non_negative(V, Fy, mu_b):
    assert friction_force(Fy, V, 1.37e-3, mu_b, 150.0, G)[0, 0] >= 0.0


def test_friction_continuous_at_threshold():
    V_T = 150.0
    below = friction_force(0.02, V_T - 1e-9, 1.37e-3, 0.25, V_T, G)[0, 0]
    at = friction_force(0.02, V_T, 1.37e-3, 0.25, V_T, G)[0, 0]
    assert abs(below - at) < 1e-12


def test_sliding_coin_keeps_direction():
    x, u = step(-0.02, 0.01, -1e-4, -0.01, 200.0)
    assert u < -0.01 and x < -1e-4


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-7
    for _ in range(100):
        args = [rng.uniform(-0.03, -0.015), rng.uniform(0.0, 0.03), rng.uniform(-1e-3, 0),
                rng.uniform(-0.05, -0.01), rng.uniform(160.0, 290.0), 1e-3]
        phi = (rng.uniform(1e-3, 2e-3), rng.uniform(0.1, 0.3), 150.0)
        for out in (0, 1):
            def f(*a):
                return ad.sum(dynamics_step(*a, *phi, G)[out])

            _, grads = ad.grad(f, *[np.array([[a]]) for a in args])
            for i in range(5):
                lo, hi = list(args), list(args)
                lo[i] -= h * max(1.0, abs(args[i]))
                hi[i] += h * max(1.0, abs(args[i]))
                fd = (float(f(*hi)[0, 0]) - float(f(*lo)[0, 0])) / (hi[i] - lo[i])
                g = grads[i][0, 0]
                assert abs(g - fd) / max(1e-6, abs(fd)) < 1e-3 or abs(g - fd) < 1e-9

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pullsim.surrogate import (MOVE_THRESHOLD_M, BeamParams, ImmovableSetupError, RampSchedule, SetupConfig,
                               SetupParams, SurrogateError, calibrate_threshold, coin_mass,
                               constant_schedule, maxwell_stress, read_transitions_csv,
                               simulate_episode, tip_forces, tip_forces_numeric,
                               transitions_to_array, write_transitions_csv)

BEAM = BeamParams()


def setup(mu_b=0.2, mu_t=0.5, rho=7700.0, threshold=None):
    return SetupParams(coin_mass(rho, 0.015, 0.001), mu_b, mu_t, rho, threshold)


def test_maxwell_zero_voltage():
    assert maxwell_stress(0.0, 50e-6) == 0.0


def test_maxwell_default_value():
    assert maxwell_stress(400.0, 50e-6, 4.7, 8.854e-12) == pytest.approx(2.663e3, rel=1e-3)


@given(st.floats(0.0, 1e4))
def test_maxwell_quadratic(V):
    assert maxwell_stress(2 * V, 50e-6) == pytest.approx(4 * maxwell_stress(V, 50e-6), rel=1e-14)


def test_maxwell_rejects_bad_thickness():
    with pytest.raises(ValueError):
        maxwell_stress(10.0, 0.0)


def test_coin_mass_matches_stated_masses():
    assert coin_mass(7700, 0.015, 0.001) == pytest.approx(1.36e-3, rel=5e-3)
    assert coin_mass(7800, 0.015, 0.001) == pytest.approx(1.38e-3, rel=5e-3)


def test_beam_params_validation():
    with pytest.raises(ValueError):
        BeamParams(poisson_ratio=0.6)
    with pytest.raises(ValueError):
        BeamParams(length_m=0.0)
    with pytest.raises(ValueError):
        SetupParams(1e-3, 2.5, 0.5, 7700)


def test_inactive_actuator_forces():
    fx, fy = tip_forces(BEAM, setup(), 0.0)
    assert fx == 0.0
    assert fy == BEAM.rest_load_n >= 0


def test_pull_grows_with_voltage():
    volts = np.linspace(0.0, 299.0, 300)
    pull = [-tip_forces(BEAM, setup(), v)[0] for v in volts]
    assert np.all(np.diff(pull) >= 0)


def test_forces_match_dense_integration():
    s = setup()
    for V in np.linspace(1.0, 299.0, 60):
        fx, fy = tip_forces(BEAM, s, V)
        rx, ry = tip_forces_numeric(BEAM, s, V, segments=2000)
        assert fy == pytest.approx(ry, rel=1e-3)
        assert fx == pytest.approx(rx, rel=1e-3, abs=1e-12)


def test_contact_lost_at_limit():
    assert tip_forces(BEAM, setup(), 300.0) == (0.0, 0.0)


def test_zero_voltage_schedule_never_moves():
    path = simulate_episode(BEAM, setup(), constant_schedule(0.0))
    assert all(tr.x == 0.0 and tr.x_next == 0.0 for tr in path)


def test_ramp_two_stage_behaviour(datasets):
    d = datasets["C1"]
    assert 1000 <= len(d) <= 2000
    assert d.rows[-1, 7] < 0
    onset = np.flatnonzero(np.abs(d.rows[:, 7]) >= MOVE_THRESHOLD_M)[0]
    assert d.rows[onset, 3] >= d.V_T
    first = np.flatnonzero(d.rows[:, 7] != 0.0)[0]
    static = d.rows[:first]
    assert np.all(static[:, 1] == 0.0)
    assert np.all(np.diff(static[:, 6]) >= 0)


def test_coin_never_moves_forward_and_contact_is_compressive(datasets):
    for d in datasets.values():
        assert np.all(np.diff(d.x_trajectory) <= 0)
        assert np.all(d.rows[:, 6] + d.m_c * 9.8 >= 0)


def test_stick_keeps_velocity_zero(datasets):
    d = datasets["C2"]
    friction = d.mu_b * (d.rows[:, 6] + d.m_c * 9.8)
    stuck = (d.rows[:, 2] == 0.0) & (np.abs(d.rows[:, 5]) <= friction)
    assert stuck.any()
    assert np.all(d.rows[stuck, 8] == 0.0)


def test_sliding_coin_decelerates_to_rest():
    path = simulate_episode(BEAM, setup(), constant_schedule(0.0), total_time=0.05, u0=-0.05)
    speeds = [abs(tr.u_next) for tr in path]
    stop = speeds.index(0.0)
    assert np.all(np.diff(speeds[: stop + 1]) < 0)
    assert all(v == 0.0 for v in speeds[stop:])


def test_step_halving_converges():
    s = setup()
    coarse = simulate_episode(BEAM, s, RampSchedule(), dt_ground=5e-4)[-1].x_next
    fine = simulate_episode(BEAM, s, RampSchedule(), dt_ground=2.5e-4)[-1].x_next
    assert abs(fine - coarse) / abs(fine) < 5e-3


def test_unstable_integration_raises():
    light = SetupParams(1e-9, 0.2, 0.5, 1.0)
    with pytest.raises(SurrogateError, match="unstable integration at step"):
        simulate_episode(BEAM, light, constant_schedule(250.0), total_time=0.1)


def test_heavier_coin_needs_at_least_as_much_voltage():
    assert calibrate_threshold(BEAM, setup(rho=7800)) >= calibrate_threshold(BEAM, setup())


def test_frictionless_threshold_is_near_zero():
    vt = calibrate_threshold(BEAM, setup(mu_b=0.0))
    assert vt < 0.02 * calibrate_threshold(BEAM, setup())
    assert tip_forces(BEAM, setup(mu_b=0.0), 1e-3)[0] < 0


def test_immovable_setup():
    with pytest.raises(ImmovableSetupError, match="setup immovable"):
        calibrate_threshold(BEAM, SetupParams(0.5, 2.0, 0.5, 7700))


def test_config_thresholds_reproduce(experiment):
    cfg = experiment.setups["C1"]
    fresh = calibrate_threshold(cfg.beam, cfg.setup.__class__(
        cfg.setup.mass_kg, cfg.setup.mu_b, cfg.setup.mu_t, cfg.setup.density_kg_m3))
    assert abs(fresh - cfg.setup.threshold_v) <= 0.5


def test_simulation_is_bit_exact():
    a = transitions_to_array(simulate_episode(BEAM, setup(), RampSchedule()))
    b = transitions_to_array(simulate_episode(BEAM, setup(), RampSchedule()))
    np.testing.assert_array_equal(a, b)


def test_csv_roundtrip_is_exact(tmp_path):
    path = simulate_episode(BEAM, setup(), RampSchedule())
    write_transitions_csv(tmp_path / "d.csv", path)
    assert read_transitions_csv(tmp_path / "d.csv") == path
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "t,x,u,V,dt,Fx,Fy,x_next,u_next"


def test_csv_header_checked(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="unexpected header"):
        read_transitions_csv(tmp_path / "bad.csv")


def test_setup_config_roundtrip():
    cfg = SetupConfig("C9", BEAM, setup(threshold=150.0))
    again = SetupConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_setup_config_missing_field():
    with pytest.raises(ValueError, match="invalid setup config"):
        SetupConfig.from_dict({"setup_id": "C1"})


def test_setup_grid_in_shipped_configs(experiment):
    combos = {(c.setup.mu_b, c.setup.mu_t, c.setup.density_kg_m3)
              for c in experiment.setups.values()}
    assert combos == {(mb, mt, rho) for mb in (0.2, 0.25) for mt in (0.5, 0.55)
                      for rho in (7700, 7800)}
    for c in experiment.setups.values():
        assert math.isclose(c.setup.mass_kg, coin_mass(c.setup.density_kg_m3, 0.015, 0.001))

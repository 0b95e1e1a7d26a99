import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pullsim.harness import ExperimentConfig
from pullsim.training import Dataset

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "experiment.json"


ACCEPTANCE: dict = {}


def tiny_config(dest, **control):
    """Copy of the shipped experiment shrunk to seconds of compute."""
    shutil.copytree(ROOT / "configs", dest)
    path = dest / "experiment.json"
    data = json.loads(path.read_text())
    data["rotations"] = data["rotations"][:2]
    data["learning"].update(max_iters=20, hidden_layer_sizes=[8, 8])
    data["control"].update(episodes=2, max_iters=150, infer_max_iters=60, **control)
    path.write_text(json.dumps(data))
    return path


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def acceptance():
    """Registry of criterion outcomes printed at the end of the run."""
    return ACCEPTANCE


@pytest.fixture(scope="session")
def experiment():
    return ExperimentConfig.load(CONFIG)


@pytest.fixture(scope="session")
def datasets(experiment):
    """Surrogate datasets for every setup, simulated once per session."""
    out = {}
    for sid, cfg in experiment.setups.items():
        s = cfg.setup
        out[sid] = Dataset.from_transitions(sid, cfg.simulate(), s.mass_kg, s.mu_b, s.threshold_v)
    return out


@pytest.fixture(scope="session")
def trained_model(datasets):
    """Small physics model fitted on C1 (validated on C3) with no default parameters."""
    from pullsim.model import PhysicsModel
    d, v = datasets["C1"], datasets["C3"]
    return PhysicsModel(hidden_layer_sizes=(64, 64), max_iter=1000, random_state=0).fit(
        d.X, d.y, d.phi[:1], v.X, v.y, v.phi[:1])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

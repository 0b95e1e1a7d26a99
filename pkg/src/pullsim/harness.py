"""Experiment harness: datasets, model training, simulation accuracy, control and inference.

Every entry point is a pure function of an experiment config and a master
seed.  Deterministic outputs (CSV and JSON summaries) are separated from wall
clock measurements, which go to ``timing.json``.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .control.baselines import HeuristicPolicy, PdConfig, PdPolicy
from .control.env import CostScales, EnvConfig, Environment
from .control.episode import LOG_HEADER, EpisodeLog, first_within, run_episode
from .control.inference import InferenceConfig, ParamEstimator
from .control.mpc import MpcConfig, MpcPolicy
from .control.sac import SacConfig, SacPolicy
from .model import PhysicsModel
from .surrogate import SetupConfig, calibrate_threshold, write_transitions_csv
from .training import BaselineNN, Dataset, LearningConfig, learn_material, loss_history_rows

POLICIES = ("mpc", "sac", "pd", "heur")

# spawn keys that separate the independent random streams of one master seed
_KEY_TRAIN, _KEY_BASELINE, _KEY_CONTROL_MODEL, _KEY_TRUTH, _KEY_EPISODE, _KEY_INFER = range(6)


class ConfigError(ValueError):
    """Invalid or missing experiment input."""


# -- configuration ---------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSet:
    """Setups used for training, early stopping, and testing one model."""

    train: str
    val: str
    test: str

    def __post_init__(self):
        if len({self.train, self.val, self.test}) != 3:
            raise ConfigError(f"experiment set setups must be distinct: {self}")


@dataclass(frozen=True)
class ControlSettings:
    train_setups: tuple = ("C3", "C4", "C5", "C6", "C7")
    val_setups: tuple = ("C8",)
    test_setups: tuple = ("C1", "C2")
    episodes: int = 10
    sigma_obs_m: float = 1e-3
    x_target_m: float = -1e-3
    tol_m: float = 1e-5
    dt_s: float = 1e-3
    max_iters: int = 20000
    infer_max_iters: int = 2000

    def env_config(self, sigma_obs_m: float | None = None,
                   max_iters: int | None = None) -> EnvConfig:
        return EnvConfig(sigma_obs=self.sigma_obs_m if sigma_obs_m is None else sigma_obs_m,
                         x_target=self.x_target_m, tol=self.tol_m, dt=self.dt_s,
                         max_iters=self.max_iters if max_iters is None else max_iters)


@dataclass
class ExperimentConfig:
    setups: dict
    rotations: list
    learning: LearningConfig = field(default_factory=LearningConfig)
    control: ControlSettings = field(default_factory=ControlSettings)

    def __post_init__(self):
        known = set(self.setups)
        used = {s for r in self.rotations for s in (r.train, r.val, r.test)}
        used |= set(self.control.train_setups) | set(self.control.val_setups)
        used |= set(self.control.test_setups)
        missing = used - known
        if missing:
            raise ConfigError(f"experiment refers to unknown setups {sorted(missing)}")
        if set(self.control.test_setups) & (set(self.control.train_setups)
                                            | set(self.control.val_setups)):
            raise ConfigError("control test setups must not be used to train the control model")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read an experiment JSON; setup files are resolved relative to it."""
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        try:
            setups = {}
            for sid, rel in data["setups"].items():
                setup_path = path.parent / rel
                try:
                    setup_data = json.loads(setup_path.read_text())
                except FileNotFoundError:
                    raise ConfigError(f"setup file not found: {setup_path}") from None
                cfg = SetupConfig.from_dict(setup_data)
                if cfg.setup_id != sid:
                    raise ConfigError(f"{setup_path} declares setup {cfg.setup_id}, expected {sid}")
                setups[sid] = cfg
            rotations = [ExperimentSet(*r) for r in data.get("rotations", [])]
            learning = data.get("learning", {})
            if "hidden_layer_sizes" in learning:
                learning = {**learning, "hidden_layer_sizes": tuple(learning["hidden_layer_sizes"])}
            control = data.get("control", {})
            control = {k: tuple(v) if isinstance(v, list) else v for k, v in control.items()}
            return cls(setups, rotations, LearningConfig(**learning), ControlSettings(**control))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config {path}: {exc}") from exc

    def with_hidden(self, width: int) -> "ExperimentConfig":
        """Same experiment with every hidden layer resized to ``width``."""
        sizes = tuple(width for _ in self.learning.hidden_layer_sizes)
        return replace(self, learning=replace(self.learning, hidden_layer_sizes=sizes))


def sub_seed(seed: int, *key: int) -> np.random.SeedSequence:
    """Independent stream for one task of a command, derived from the master seed."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def _int_seed(seed: int, *key: int) -> int:
    return int(sub_seed(seed, *key).generate_state(1)[0])


# -- file helpers ----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _setup_index(cfg: ExperimentConfig, setup_id: str) -> int:
    return list(cfg.setups).index(setup_id)


# -- datasets ------------------------------------------------------------------------

def data_path(out, setup_id: str) -> Path:
    return Path(out) / "data" / f"{setup_id}.csv"


def resolve_threshold(setup: SetupConfig) -> SetupConfig:
    """Fill in the threshold voltage by calibration when the config leaves it open."""
    if setup.setup.threshold_v is not None:
        return setup
    return setup.with_threshold(calibrate_threshold(setup.beam, setup.setup,
                                                    setup.schedule.total_time,
                                                    setup.dt_ground_s))


def generate(cfg: ExperimentConfig, out, setup_ids=None) -> dict:
    """Simulate every setup and write ``data/<id>.csv``; returns row counts."""
    counts = {}
    for sid in setup_ids or list(cfg.setups):
        setup = resolve_threshold(cfg.setups[sid])
        transitions = setup.simulate()
        path = data_path(out, sid)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_transitions_csv(path, transitions)
        counts[sid] = len(transitions)
    write_json(Path(out) / "data" / "manifest.json",
               {sid: {"rows": n, **_phi_dict(resolve_threshold(cfg.setups[sid]))}
                for sid, n in counts.items()})
    return counts


def _phi_dict(setup: SetupConfig) -> dict:
    s = setup.setup
    return {"mass_kg": s.mass_kg, "mu_b": s.mu_b, "threshold_v": s.threshold_v}


def load_dataset(cfg: ExperimentConfig, out, setup_id: str) -> Dataset:
    path = data_path(out, setup_id)
    if not path.exists():
        raise ConfigError(f"dataset for {setup_id} missing: {path} (run `pullsim generate`)")
    s = resolve_threshold(cfg.setups[setup_id]).setup
    return Dataset.from_csv(setup_id, path, s.mass_kg, s.mu_b, s.threshold_v)


# -- training ------------------------------------------------------------------------

def rotation_dir(out, k: int) -> Path:
    return Path(out) / "models" / f"rotation{k + 1}"


def control_dir(out) -> Path:
    return Path(out) / "models" / "control"


def _learning(cfg: ExperimentConfig, seed: int) -> LearningConfig:
    return replace(cfg.learning, seed=seed)


def train_rotation(cfg: ExperimentConfig, out, k: int, seed: int) -> tuple:
    """Fit the physics-informed model and the baseline for rotation ``k`` (0-based)."""
    rot = cfg.rotations[k]
    train, val = load_dataset(cfg, out, rot.train), load_dataset(cfg, out, rot.val)
    model = learn_material([train], [val], _learning(cfg, _int_seed(seed, _KEY_TRAIN, k)))
    lc = cfg.learning
    baseline = BaselineNN(hidden_layer_sizes=tuple(lc.hidden_layer_sizes),
                          learning_rate=lc.learning_rate, max_iter=lc.max_iters,
                          patience=lc.patience, min_delta=lc.min_delta,
                          validation_interval=lc.validation_interval,
                          random_state=_int_seed(seed, _KEY_BASELINE, k))
    baseline.fit(train.X, train.next_state, val.X, val.next_state)
    d = rotation_dir(out, k)
    d.mkdir(parents=True, exist_ok=True)
    model.save(d / "physics.json", metadata={"train": rot.train, "val": rot.val,
                                              "test": rot.test})
    baseline.save(d / "baseline.json")
    header = ("iteration", "train_loss", "val_loss")
    write_csv(d / "loss_physics.csv", header, loss_history_rows(model.history_))
    write_csv(d / "loss_baseline.csv", header, loss_history_rows(baseline.history_))
    return model, baseline


def train_control_models(cfg: ExperimentConfig, out, seed: int) -> tuple:
    """The control model on the training setups and one truth model per test setup.

    The control model never sees the test setups.  Its threshold voltage is
    not inferred online, so it uses the mean threshold of its training setups.
    """
    c = cfg.control
    train = [load_dataset(cfg, out, s) for s in c.train_setups]
    val = [load_dataset(cfg, out, s) for s in c.val_setups]
    model = learn_material(train, val, _learning(cfg, _int_seed(seed, _KEY_CONTROL_MODEL)))
    model.set_params(V_T=float(np.mean([d.V_T for d in train])))
    d = control_dir(out)
    d.mkdir(parents=True, exist_ok=True)
    model.save(d / "control_model.json", metadata={"train": list(c.train_setups),
                                                    "val": list(c.val_setups)})
    header = ("iteration", "train_loss", "val_loss")
    write_csv(d / "loss_control_model.csv", header, loss_history_rows(model.history_))
    truths = {}
    for sid in c.test_setups:
        ds = load_dataset(cfg, out, sid)
        lc = cfg.learning
        truth = PhysicsModel(hidden_layer_sizes=tuple(lc.hidden_layer_sizes),
                             learning_rate=lc.learning_rate, max_iter=lc.max_iters,
                             patience=lc.patience, min_delta=lc.min_delta,
                             validation_interval=lc.validation_interval,
                             velocity_jitter=lc.velocity_jitter,
                             random_state=_int_seed(seed, _KEY_TRUTH, _setup_index(cfg, sid)))
        truth.fit(ds.X, ds.y, ds.phi[:1])
        truth.set_params(m_c=ds.m_c, mu_b=ds.mu_b, V_T=ds.V_T)
        truth.save(d / f"truth_{sid}.json", metadata={"setup": sid})
        write_csv(d / f"loss_truth_{sid}.csv", header, loss_history_rows(truth.history_))
        truths[sid] = truth
    return model, truths


def load_control_models(cfg: ExperimentConfig, out) -> tuple:
    d = control_dir(out)
    try:
        model = PhysicsModel.load(d / "control_model.json")
        truths = {sid: PhysicsModel.load(d / f"truth_{sid}.json")
                  for sid in cfg.control.test_setups}
    except FileNotFoundError as exc:
        raise ConfigError(f"{exc} (run `pullsim train`)") from None
    return model, truths


# -- simulation accuracy ----------------------------------------------------------------

ROLLOUT_HEADER = ("t", "x_true", "x_f", "x_nn", "u_true", "u_f", "u_nn",
                  "Fx_true", "Fx_f", "Fy_true", "Fy_f")
ERROR_KEYS = ("e_x_f", "e_x_nn", "e_u_f", "e_u_nn", "e_Fx_f", "e_Fy_f")


@dataclass
class ErrorReport:
    """Mean absolute rollout errors for one test setup.

    ``peak_x`` is the largest ``|x|`` on the true trajectory; the relative
    errors are the mean position errors as a percentage of it.
    """

    rotation: int
    test: str
    n_points: int
    peak_x: float
    errors: dict

    @property
    def rel_x_f(self) -> float:
        return 100.0 * self.errors["e_x_f"] / self.peak_x

    @property
    def rel_x_nn(self) -> float:
        return 100.0 * self.errors["e_x_nn"] / self.peak_x

    @classmethod
    def from_rows(cls, rotation: int, test: str, rows: np.ndarray) -> "ErrorReport":
        """Recompute from rollout rows laid out as :data:`ROLLOUT_HEADER`."""
        col = {k: rows[:, i] for i, k in enumerate(ROLLOUT_HEADER)}
        errors = {
            "e_x_f": np.mean(np.abs(col["x_f"] - col["x_true"])),
            "e_x_nn": np.mean(np.abs(col["x_nn"] - col["x_true"])),
            "e_u_f": np.mean(np.abs(col["u_f"] - col["u_true"])),
            "e_u_nn": np.mean(np.abs(col["u_nn"] - col["u_true"])),
            "e_Fx_f": np.mean(np.abs(col["Fx_f"] - col["Fx_true"])),
            "e_Fy_f": np.mean(np.abs(col["Fy_f"] - col["Fy_true"])),
        }
        peak = float(np.max(np.abs(col["x_true"])))
        return cls(rotation, test, len(rows), peak, {k: float(v) for k, v in errors.items()})

    def as_row(self) -> tuple:
        return (self.rotation, self.test, self.n_points, self.peak_x,
                *(self.errors[k] for k in ERROR_KEYS), self.rel_x_f, self.rel_x_nn)


def rollout_rows(model: PhysicsModel, baseline: BaselineNN, test: Dataset) -> np.ndarray:
    """Recursive rollouts of both models over the test schedule, one row per predicted step."""
    f = model.with_params(m_c=test.m_c, mu_b=test.mu_b, V_T=test.V_T)
    states, forces = f.rollout(test.rows[0, 1:3], test.actions)
    nn_states = baseline.rollout(test.rows[0, 1:3], test.actions)
    r = test.rows
    t_next = r[:, 0] + r[:, 4]
    return np.column_stack([t_next, r[:, 7], states[1:, 0], nn_states[1:, 0],
                            r[:, 8], states[1:, 1], nn_states[1:, 1],
                            r[:, 5], forces[:, 0], r[:, 6], forces[:, 1]])


def aggregate_reports(reports: list) -> dict:
    """Both aggregations: mean of per-set means, and mean over all points."""
    weights = np.array([r.n_points for r in reports], dtype=np.float64)
    per_set = {k: float(np.mean([r.errors[k] for r in reports])) for k in ERROR_KEYS}
    per_point = {k: float(np.average([r.errors[k] for r in reports], weights=weights))
                 for k in ERROR_KEYS}
    per_set["rel_x_f"] = float(np.mean([r.rel_x_f for r in reports]))
    per_set["rel_x_nn"] = float(np.mean([r.rel_x_nn for r in reports]))
    return {"per_set_mean": per_set, "per_point_mean": per_point}


def eval_sim(cfg: ExperimentConfig, out, rotations=None) -> tuple:
    """Evaluate trained rotations; writes rollouts, an error table and a summary."""
    rotations = range(len(cfg.rotations)) if rotations is None else rotations
    reports, timing = [], {}
    for k in rotations:
        d = rotation_dir(out, k)
        try:
            model = PhysicsModel.load(d / "physics.json")
            baseline = BaselineNN.load(d / "baseline.json")
        except FileNotFoundError as exc:
            raise ConfigError(f"{exc} (run `pullsim train`)") from None
        test = load_dataset(cfg, out, cfg.rotations[k].test)
        start = time.perf_counter()
        rows = rollout_rows(model, baseline, test)
        timing[f"rotation{k + 1}_rollout_s"] = time.perf_counter() - start
        write_csv(Path(out) / "eval" / f"rotation{k + 1}_rollout.csv", ROLLOUT_HEADER, rows)
        reports.append(ErrorReport.from_rows(k + 1, test.setup_id, rows))
    write_csv(Path(out) / "eval" / "errors.csv",
              ("rotation", "test", "n_points", "peak_x", *ERROR_KEYS, "rel_x_f_pct",
               "rel_x_nn_pct"), [r.as_row() for r in reports])
    summary = aggregate_reports(reports)
    write_json(Path(out) / "eval" / "summary.json", summary)
    write_json(Path(out) / "eval" / "timing.json", timing)
    return reports, summary


# -- control and inference ---------------------------------------------------------------

def make_policy(name: str, model: PhysicsModel, control: ControlSettings,
                rng: np.random.Generator):
    """Fresh policy and, for MPC, the online parameter estimator it plans with."""
    if name == "mpc":
        policy = MpcPolicy(model, MpcConfig(), control.x_target_m, control.dt_s, control.tol_m)
        return policy, ParamEstimator(model.V_T, InferenceConfig())
    if name == "sac":
        return SacPolicy(SacConfig(), rng), None
    if name == "pd":
        return PdPolicy(PdConfig(), control.x_target_m), None
    if name == "heur":
        return HeuristicPolicy(), None
    raise ConfigError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


def episode_streams(seed: int, policy: str, setup_index: int, episode: int):
    """Generators for the environment noise, the policy, and replay sampling."""
    key = (_KEY_EPISODE, POLICIES.index(policy), setup_index, episode)
    return [np.random.default_rng(s) for s in sub_seed(seed, *key).spawn(3)]


def run_policy_episode(cfg: ExperimentConfig, model: PhysicsModel, truth: PhysicsModel,
                       policy_name: str, setup_id: str, episode: int, seed: int, *,
                       sigma_obs_m: float | None = None, max_iters: int | None = None,
                       continue_after_terminal: bool = False, stop_when=None) -> EpisodeLog:
    env_rng, policy_rng, replay_rng = episode_streams(seed, policy_name,
                                                      _setup_index(cfg, setup_id), episode)
    env_cfg = cfg.control.env_config(sigma_obs_m, max_iters)
    env = Environment(truth, env_cfg, env_rng)
    policy, estimator = make_policy(policy_name, model, cfg.control, policy_rng)
    return run_episode(env, policy, estimator=estimator, rng=replay_rng,
                       max_iters=env_cfg.max_iters,
                       continue_after_terminal=continue_after_terminal,
                       scales=CostScales(), stop_when=stop_when)


def terminal_iteration(rows: np.ndarray, x_target: float, tol: float) -> int | None:
    """First logged iteration whose true position lies within ``tol`` of the target."""
    hits = np.flatnonzero(np.abs(rows[:, LOG_HEADER.index("x_true")] - x_target) < tol)
    return int(rows[hits[0], 0]) if len(hits) else None


def summarize_iterations(counts: list, cap: int) -> dict:
    """Iterations-to-terminal statistics; non-converged episodes count as ``cap``."""
    values = np.array([cap if c is None else c for c in counts], dtype=np.float64)
    return {
        "iterations": [None if c is None else int(c) for c in counts],
        "converged": int(sum(c is not None for c in counts)),
        "episodes": len(counts),
        "cap": int(cap),
        "mean": float(np.mean(values)),
        "q25": float(np.percentile(values, 25)),
        "q75": float(np.percentile(values, 75)),
    }


def _log_array(log: EpisodeLog) -> np.ndarray:
    return np.array(log.rows, dtype=np.float64).reshape(-1, len(LOG_HEADER))


def run_control(cfg: ExperimentConfig, out, policy_name: str, setup_id: str, seed: int,
                episodes: int | None = None, sigma_obs_m: float | None = None,
                max_iters: int | None = None) -> dict:
    """Closed-loop episodes of one policy on one test setup; writes logs and a summary."""
    if policy_name not in POLICIES:
        raise ConfigError(f"unknown policy {policy_name!r}; choose from {', '.join(POLICIES)}")
    if setup_id not in cfg.control.test_setups:
        raise ConfigError(f"{setup_id} is not a control test setup")
    model, truths = load_control_models(cfg, out)
    episodes = cfg.control.episodes if episodes is None else episodes
    env_cfg = cfg.control.env_config(sigma_obs_m, max_iters)
    d = Path(out) / "control" / f"{policy_name}_{setup_id}"
    counts, timing = [], {}
    for e in range(episodes):
        log = run_policy_episode(cfg, model, truths[setup_id], policy_name, setup_id, e, seed,
                                 sigma_obs_m=sigma_obs_m, max_iters=max_iters)
        path = d / f"episode_{e:02d}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        log.write_csv(path)
        counts.append(terminal_iteration(_log_array(log), env_cfg.x_target, env_cfg.tol))
        timing[f"episode_{e:02d}"] = {"wall_time_s": log.wall_time_s,
                                      "per_step_s": log.wall_time_s / max(log.iterations, 1)}
    summary = {"policy": policy_name, "setup": setup_id, "sigma_obs_m": env_cfg.sigma_obs,
               **summarize_iterations(counts, env_cfg.max_iters)}
    write_json(d / "summary.json", summary)
    write_json(d / "timing.json", timing)
    return summary


def inference_summary(rows: np.ndarray, m_c: float, mu_b: float, rel_tol: float = 0.1) -> dict:
    """First iterations at which the estimates come within ``rel_tol`` of the truth."""
    m = rows[:, LOG_HEADER.index("mc_hat")]
    mu = rows[:, LOG_HEADER.index("mub_hat")]
    return {
        "m_c_first_within": first_within(m, m_c, rel_tol),
        "mu_b_first_within": first_within(mu, mu_b, rel_tol),
        "m_c_final": float(m[-1]),
        "mu_b_final": float(mu[-1]),
        "m_c_final_rel_err": float(abs(m[-1] - m_c) / m_c),
        "mu_b_final_rel_err": float(abs(mu[-1] - mu_b) / mu_b),
    }


def run_inference(cfg: ExperimentConfig, out, setup_id: str, seed: int,
                  episodes: int | None = None, sigma_obs_m: float | None = None,
                  max_iters: int | None = None) -> dict:
    """MPC episodes with online inference that keep running past the target."""
    if setup_id not in cfg.control.test_setups:
        raise ConfigError(f"{setup_id} is not a control test setup")
    model, truths = load_control_models(cfg, out)
    truth = truths[setup_id]
    episodes = cfg.control.episodes if episodes is None else episodes
    max_iters = cfg.control.infer_max_iters if max_iters is None else max_iters
    d = Path(out) / "infer" / setup_id
    results, timing = [], {}
    for e in range(episodes):
        log = run_policy_episode(cfg, model, truth, "mpc", setup_id, e,
                                 _int_seed(seed, _KEY_INFER), sigma_obs_m=sigma_obs_m,
                                 max_iters=max_iters, continue_after_terminal=True)
        d.mkdir(parents=True, exist_ok=True)
        log.write_csv(d / f"episode_{e:02d}.csv")
        results.append(inference_summary(_log_array(log), truth.m_c, truth.mu_b))
        timing[f"episode_{e:02d}"] = {"wall_time_s": log.wall_time_s}
    summary = {"setup": setup_id, "m_c_true": truth.m_c, "mu_b_true": truth.mu_b,
               "max_iters": max_iters, "episodes": results}
    write_json(d / "summary.json", summary)
    write_json(d / "timing.json", timing)
    return summary

"""Ground-truth coin-pulling simulator.

A dielectric-elastomer unimorph is modelled as a cantilever bent to a uniform
curvature by the Maxwell-stress strain of its active layer.  The tip rests on
the coin through a compliant pad: beam deflection loads the pad normally
(``Fy``) and the tip rotation rolls the pad backwards, dragging the coin in
``-x`` through a tangential spring that slips once it exceeds ``mu_t * Fy``.
The coin slides on the ground with Coulomb friction ``mu_b``.

The lumped pad constants (rest load, stiffnesses, pad radius) are engineering
defaults chosen so that forces, onset voltage and travel are of the order seen
in the reference experiments; they are configuration, not measured values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

GRAVITY = 9.8
VACUUM_PERMITTIVITY = 8.854e-12
MOVE_THRESHOLD_M = 1e-5
MAX_SPEED = 10.0
CSV_HEADER = ("t", "x", "u", "V", "dt", "Fx", "Fy", "x_next", "u_next")


class SurrogateError(RuntimeError):
    """Numerical failure inside the ground-truth simulator."""


class ImmovableSetupError(ValueError):
    """The coin does not move for any admissible voltage."""


@dataclass(frozen=True)
class BeamParams:
    """Actuator geometry, material, and lumped contact constants (SI units)."""

    length_m: float = 0.04
    width_m: float = 0.01
    active_thickness_m: float = 50e-6
    passive_thickness_m: float = 50e-6
    youngs_modulus_pa: float = 0.56e6
    poisson_ratio: float = 0.5
    rel_permittivity: float = 4.7
    vacuum_permittivity: float = VACUUM_PERMITTIVITY
    rest_load_n: float = 0.03
    normal_stiffness_n_per_m: float = 0.65
    tangential_stiffness_n_per_m: float = 13.0
    pad_radius_m: float = 3.5e-3
    contact_loss_v: float = 300.0

    def __post_init__(self):
        for name in ("length_m", "width_m", "active_thickness_m", "passive_thickness_m",
                     "youngs_modulus_pa", "pad_radius_m", "contact_loss_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.poisson_ratio <= 0.5:
            raise ValueError(f"poisson_ratio must be in (0, 0.5], got {self.poisson_ratio}")
        if self.rel_permittivity < 1:
            raise ValueError(f"rel_permittivity must be >= 1, got {self.rel_permittivity}")
        for name in ("rest_load_n", "normal_stiffness_n_per_m", "tangential_stiffness_n_per_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class SetupParams:
    """One coin setup.  ``threshold_v`` is filled in by :func:`calibrate_threshold`."""

    mass_kg: float
    mu_b: float
    mu_t: float
    density_kg_m3: float
    threshold_v: float | None = None
    g: float = GRAVITY

    def __post_init__(self):
        if not self.mass_kg > 0:
            raise ValueError(f"mass_kg must be positive, got {self.mass_kg}")
        for name in ("mu_b", "mu_t"):
            if not 0 <= getattr(self, name) <= 2:
                raise ValueError(f"{name} must lie in [0, 2], got {getattr(self, name)}")
        if self.threshold_v is not None and not self.threshold_v > 0:
            raise ValueError(f"threshold_v must be positive, got {self.threshold_v}")


@dataclass(frozen=True)
class Transition:
    t: float
    x: float
    u: float
    V: float
    dt: float
    Fx: float
    Fy: float
    x_next: float
    u_next: float

    def as_row(self) -> tuple:
        return (self.t, self.x, self.u, self.V, self.dt, self.Fx, self.Fy,
                self.x_next, self.u_next)


def coin_mass(density_kg_m3: float, diameter_m: float, thickness_m: float) -> float:
    return density_kg_m3 * math.pi * (0.5 * diameter_m) ** 2 * thickness_m


# -- constitutive pieces ---------------------------------------------------------

def maxwell_stress(V: float, z: float, e_r: float = 4.7,
                   e_0: float = VACUUM_PERMITTIVITY) -> float:
    """Electrostatic pressure on a membrane of thickness ``z`` under voltage ``V``."""
    if not z > 0:
        raise ValueError(f"membrane thickness must be positive, got {z}")
    return e_0 * e_r * (V / z) ** 2


def curvature(beam: BeamParams, V: float) -> float:
    """Uniform bending curvature of the unimorph at voltage ``V`` (1/m).

    The Maxwell pressure squeezes the active layer, which expands in-plane by
    ``nu * p / E``.  For equal layer moduli the bilayer strip formula gives
    ``kappa = 6 eps z_a z_p (z_a + z_p) / (z_a^4 + 4 z_a^3 z_p + 6 z_a^2 z_p^2
    + 4 z_a z_p^3 + z_p^4)``, which is ``3 eps / (2 h)`` for equal layers.
    """
    p = maxwell_stress(V, beam.active_thickness_m, beam.rel_permittivity,
                       beam.vacuum_permittivity)
    strain = beam.poisson_ratio * p / beam.youngs_modulus_pa
    a, b = beam.active_thickness_m, beam.passive_thickness_m
    return 6.0 * strain * a * b * (a + b) / (a + b) ** 4


def arc_tip(kappa: float, length: float) -> tuple[float, float]:
    """Tip slope and transverse deflection of a uniformly curved beam."""
    theta = kappa * length
    if abs(theta) < 1e-4:
        # series of (1 - cos(k L)) / k avoids cancellation near zero curvature
        deflection = 0.5 * kappa * length ** 2 * (1.0 - theta ** 2 / 12.0)
    else:
        deflection = (1.0 - math.cos(theta)) / kappa
    return theta, deflection


def arc_tip_numeric(kappa: float, length: float, segments: int = 2000) -> tuple[float, float]:
    """Same quantity as :func:`arc_tip` by integrating slope along the beam."""
    ds = length / segments
    s_mid = (np.arange(segments) + 0.5) * ds
    theta_mid = kappa * s_mid
    return kappa * length, float(np.sum(np.sin(theta_mid)) * ds)


def _forces_from_tip(beam, setup, theta, deflection, x_coin):
    fy = beam.rest_load_n + beam.normal_stiffness_n_per_m * deflection
    stretch = max(beam.pad_radius_m * theta + x_coin, 0.0)
    fx = -min(beam.tangential_stiffness_n_per_m * stretch, setup.mu_t * fy)
    return fx, fy


def tip_forces(beam: BeamParams, setup: SetupParams, V: float,
               x_coin: float = 0.0) -> tuple[float, float]:
    """Forces ``(Fx, Fy)`` the actuator tip exerts on the coin.

    ``Fx`` is the pull (non-positive), ``Fy`` presses the coin down.  Contact
    is lost at and above ``beam.contact_loss_v``.
    """
    if V < 0:
        raise ValueError(f"voltage must be non-negative, got {V}")
    if V >= beam.contact_loss_v:
        return 0.0, 0.0
    contact_length = beam.length_m + x_coin
    theta, deflection = arc_tip(curvature(beam, V), contact_length)
    return _forces_from_tip(beam, setup, theta, deflection, x_coin)


def tip_forces_numeric(beam: BeamParams, setup: SetupParams, V: float,
                       x_coin: float = 0.0, segments: int = 2000) -> tuple[float, float]:
    """Reference forces using a dense segment integration of the bent beam."""
    if V >= beam.contact_loss_v:
        return 0.0, 0.0
    theta, deflection = arc_tip_numeric(curvature(beam, V), beam.length_m + x_coin, segments)
    return _forces_from_tip(beam, setup, theta, deflection, x_coin)


# -- schedules ---------------------------------------------------------------------

@dataclass(frozen=True)
class RampSchedule:
    """Linear voltage ramp, optionally held at ``hold_v`` once reached."""

    v_start: float = 0.0
    v_end: float = 400.0
    total_time: float = 1.0
    hold_v: float | None = None

    def __call__(self, t: float) -> float:
        v = self.v_start + (self.v_end - self.v_start) * t / self.total_time
        if self.hold_v is not None:
            v = min(v, self.hold_v)
        return max(v, 0.0)


def constant_schedule(V: float) -> Callable[[float], float]:
    return lambda t: V


# -- time integration ----------------------------------------------------------

def _ground_step(beam, setup, x, u, V, dt):
    fx, fy = tip_forces(beam, setup, V, x)
    m = setup.mass_kg
    friction = setup.mu_b * max(fy + m * setup.g, 0.0)
    if u == 0.0:
        if abs(fx) <= friction:
            return fx, fy, x, 0.0
        acc = (fx - math.copysign(friction, fx)) / m
    else:
        acc = (fx - math.copysign(friction, u)) / m
    u_next = u + acc * dt
    if u != 0.0 and u * u_next <= 0.0:
        # friction may stop the coin within the step but never reverses it
        stop = -u / acc
        return fx, fy, x + 0.5 * u * stop, 0.0
    return fx, fy, x + u_next * dt, u_next


def simulate_episode(beam: BeamParams, setup: SetupParams,
                     voltage_schedule: Callable[[float], float],
                     total_time: float = 1.0, dt_ground: float = 5e-4,
                     x0: float = 0.0, u0: float = 0.0) -> list[Transition]:
    """Integrate the coin with semi-implicit Euler and emit transitions.

    Every ground step is emitted while the coin moves.  Two consecutive
    resting steps are merged into one transition of duration ``2 * dt_ground``
    so that sampling intervals vary the way logged experimental data does.
    """
    if not dt_ground > 0 or not total_time > 0:
        raise ValueError("dt_ground and total_time must be positive")
    n_steps = int(round(total_time / dt_ground))
    out = []
    x, u = float(x0), float(u0)
    k = 0
    while k < n_steps:
        t = k * dt_ground
        V = float(voltage_schedule(t))
        fx, fy, x1, u1 = _ground_step(beam, setup, x, u, V, dt_ground)
        if not (math.isfinite(x1) and math.isfinite(u1)) or abs(u1) > MAX_SPEED:
            raise SurrogateError(f"unstable integration at step {k} (t={t:.6g} s, u={u1:.6g} m/s)")
        at_rest = u == 0.0 and u1 == 0.0 and x1 == x
        if at_rest and k + 1 < n_steps:
            V2 = float(voltage_schedule(t + dt_ground))
            _, _, x2, u2 = _ground_step(beam, setup, x, 0.0, V2, dt_ground)
            if u2 == 0.0 and x2 == x:
                out.append(Transition(t, x, u, V, 2 * dt_ground, fx, fy, x, 0.0))
                k += 2
                continue
        out.append(Transition(t, x, u, V, dt_ground, fx, fy, x1, u1))
        x, u = x1, u1
        k += 1
    return out


def calibrate_threshold(beam: BeamParams, setup: SetupParams, total_time: float = 1.0,
                        dt_ground: float = 5e-4, v_max: float = 400.0,
                        tol: float = 0.5) -> float:
    """Smallest hold voltage that displaces the coin by at least 1e-5 m.

    Each probe ramps at the dataset ramp rate up to the hold voltage and holds
    it until ``total_time``; bisection stops when the bracket is below ``tol``.
    """
    v_limit = min(v_max, np.nextafter(beam.contact_loss_v, 0.0))

    def moved(v_hold):
        sched = RampSchedule(0.0, v_max, total_time, hold_v=v_hold)
        path = simulate_episode(beam, setup, sched, total_time, dt_ground)
        return any(abs(tr.x_next) >= MOVE_THRESHOLD_M for tr in path)

    if not moved(v_limit):
        raise ImmovableSetupError("setup immovable: no displacement up to the maximum voltage")
    lo, hi = 0.0, float(v_limit)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if moved(mid):
            hi = mid
        else:
            lo = mid
    return hi


# -- dataset IO --------------------------------------------------------------------

def transitions_to_array(transitions: Sequence[Transition]) -> np.ndarray:
    return np.array([tr.as_row() for tr in transitions], dtype=np.float64).reshape(-1, 9)


def write_transitions_csv(path, transitions: Sequence[Transition]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for tr in transitions:
            writer.writerow([f"{v:.17g}" for v in tr.as_row()])


def read_transitions_csv(path) -> list[Transition]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [Transition(*(float(v) for v in row)) for row in reader if row]


# -- setup configs -----------------------------------------------------------------

@dataclass
class SetupConfig:
    """Everything needed to regenerate one setup's dataset."""

    setup_id: str
    beam: BeamParams = field(default_factory=BeamParams)
    setup: SetupParams | None = None
    schedule: RampSchedule = field(default_factory=RampSchedule)
    dt_ground_s: float = 5e-4
    coin_diameter_m: float = 0.015
    coin_thickness_m: float = 0.001

    def to_dict(self) -> dict:
        s = self.setup
        return {
            "setup_id": self.setup_id,
            "beam": asdict(self.beam),
            "coin": {
                "density_kg_m3": s.density_kg_m3,
                "diameter_m": self.coin_diameter_m,
                "thickness_m": self.coin_thickness_m,
                "mass_kg": s.mass_kg,
                "mu_b": s.mu_b,
                "mu_t": s.mu_t,
                "threshold_v": s.threshold_v,
                "g_m_per_s2": s.g,
            },
            "schedule": {
                "v_start_v": self.schedule.v_start,
                "v_end_v": self.schedule.v_end,
                "total_time_s": self.schedule.total_time,
            },
            "dt_ground_s": self.dt_ground_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SetupConfig":
        try:
            coin = data["coin"]
            beam = BeamParams(**data.get("beam", {}))
            diameter = float(coin.get("diameter_m", 0.015))
            thickness = float(coin.get("thickness_m", 0.001))
            density = float(coin["density_kg_m3"])
            mass = float(coin.get("mass_kg") or coin_mass(density, diameter, thickness))
            setup = SetupParams(mass_kg=mass, mu_b=float(coin["mu_b"]), mu_t=float(coin["mu_t"]),
                                density_kg_m3=density, threshold_v=coin.get("threshold_v"),
                                g=float(coin.get("g_m_per_s2", GRAVITY)))
            sched = data.get("schedule", {})
            schedule = RampSchedule(float(sched.get("v_start_v", 0.0)),
                                    float(sched.get("v_end_v", 400.0)),
                                    float(sched.get("total_time_s", 1.0)))
            return cls(str(data["setup_id"]), beam, setup, schedule,
                       float(data.get("dt_ground_s", 5e-4)), diameter, thickness)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid setup config: {exc}") from exc

    def with_threshold(self, threshold_v: float) -> "SetupConfig":
        return replace(self, setup=replace(self.setup, threshold_v=float(threshold_v)))

    def simulate(self) -> list[Transition]:
        return simulate_episode(self.beam, self.setup, self.schedule,
                                self.schedule.total_time, self.dt_ground_s)

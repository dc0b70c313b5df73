"""SE(3) quadrotor: rigid-body plant, geometric tracking controller, residual learning hooks.

Conventions: inertial z points down, so gravity is ``+g e3`` and thrust acts
along ``-R e3``. ``R`` maps body to inertial coordinates.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation

from .residual import CHANNELS, ResidualDataset

E3 = np.array([0.0, 0.0, 1.0])
GRAVITY = 9.81
SKEW_TOLERANCE = 1e-8
ORTHO_TOLERANCE = 1e-9
FLAT_STEP = 1e-5
DEGENERATE_NORM = 1e-6


class ContractError(ValueError):
    pass


class DegenerateFlatnessError(ValueError):
    pass


class SimulationDivergedError(RuntimeError):
    def __init__(self, t: float, message: str = "", log=None) -> None:
        self.t = t
        # partial flight log, attached by the closed-loop runner
        self.log = log
        super().__init__(f"Simulation diverged at t={t:.4f}s{': ' + message if message else ''}")


def hat(a) -> np.ndarray:
    x, y, z = np.asarray(a, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3) or np.linalg.norm(A + A.T) >= SKEW_TOLERANCE:
        raise ContractError("vee expects a skew-symmetric 3x3 matrix")
    return np.array([A[2, 1], A[0, 2], A[1, 0]])


def _skew_part(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A - A.T)


def _vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ContractError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


# --- domain types ---


@dataclass(frozen=True)
class QuadState:
    r: np.ndarray
    v: np.ndarray
    R: np.ndarray
    Omega: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "r", _vec3(self.r, "r"))
        object.__setattr__(self, "v", _vec3(self.v, "v"))
        object.__setattr__(self, "Omega", _vec3(self.Omega, "Omega"))
        R = np.asarray(self.R, dtype=float)
        if R.shape != (3, 3):
            raise ContractError(f"R must be 3x3, got {R.shape}")
        object.__setattr__(self, "R", R)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.r, self.v, self.R, self.Omega))

    def orthonormality_error(self) -> float:
        return float(np.linalg.norm(self.R.T @ self.R - np.eye(3)))

    @classmethod
    def hover(cls, r=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(np.asarray(r, dtype=float), np.zeros(3), np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class QuadParams:
    m: float = 1.25
    J: np.ndarray = field(default_factory=lambda: np.diag([1.1, 1.1, 2.2]))
    g: float = GRAVITY

    def __post_init__(self) -> None:
        J = np.asarray(self.J, dtype=float)
        if J.shape == (3,):
            J = np.diag(J)
        if self.m <= 0:
            raise ContractError(f"Mass must be positive, got {self.m}")
        if J.shape != (3, 3) or not np.allclose(J, J.T):
            raise ContractError("Inertia must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(J) <= 0):
            raise ContractError("Inertia must be positive definite")
        object.__setattr__(self, "J", J)


@dataclass(frozen=True)
class ControlInput:
    F: float
    M: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "F", float(self.F))
        object.__setattr__(self, "M", _vec3(self.M, "M"))


@dataclass(frozen=True)
class ActuatorLimits:
    thrust_min: float | None = None
    thrust_max: float | None = None
    moment_max: float | None = None

    def apply(self, u: ControlInput) -> ControlInput:
        F = u.F
        if self.thrust_min is not None:
            F = max(F, self.thrust_min)
        if self.thrust_max is not None:
            F = min(F, self.thrust_max)
        M = u.M if self.moment_max is None else np.clip(u.M, -self.moment_max, self.moment_max)
        return ControlInput(F, M)


@dataclass(frozen=True)
class MassStep:
    t_start: float
    t_end: float
    multiplier: float


@dataclass(frozen=True)
class InertiaStep:
    t_start: float
    t_end: float
    delta: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", _vec3(self.delta, "inertia delta"))


def _check_steps(steps: Sequence, t0: float, tf: float, channel: str) -> None:
    ordered = sorted(steps, key=lambda s: s.t_start)
    for step in ordered:
        if not (t0 <= step.t_start < step.t_end <= tf):
            raise ContractError(
                f"{channel} step [{step.t_start}, {step.t_end}) lies outside [{t0}, {tf}]"
            )
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.t_start < prev.t_end:
            raise ContractError(
                f"{channel} steps overlap: [{prev.t_start}, {prev.t_end}) and "
                f"[{nxt.t_start}, {nxt.t_end})"
            )


@dataclass(frozen=True)
class DisturbanceSchedule:
    """Mass/inertia steps active on ``[t_start, t_end)`` plus constant wind in units of g."""

    mass_steps: tuple[MassStep, ...] = ()
    inertia_steps: tuple[InertiaStep, ...] = ()
    wind: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass_steps", tuple(self.mass_steps))
        object.__setattr__(self, "inertia_steps", tuple(self.inertia_steps))
        object.__setattr__(self, "wind", _vec3(self.wind, "wind"))

    def validate(self, t0: float, tf: float) -> None:
        _check_steps(self.mass_steps, t0, tf, "mass")
        _check_steps(self.inertia_steps, t0, tf, "inertia")

    def mass_at(self, t: float, m: float) -> float:
        for step in self.mass_steps:
            if step.t_start <= t < step.t_end:
                return m * step.multiplier
        return m

    def inertia_at(self, t: float, J: np.ndarray) -> np.ndarray:
        for step in self.inertia_steps:
            if step.t_start <= t < step.t_end:
                return J + np.diag(step.delta)
        return J


@dataclass(frozen=True)
class Gains:
    k_r: np.ndarray
    k_v: np.ndarray
    k_R: np.ndarray
    k_Omega: np.ndarray

    def __post_init__(self) -> None:
        for name in ("k_r", "k_v", "k_R", "k_Omega"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape == (3, 3):
                value = np.diag(value)
            value = _vec3(value, name)
            if np.any(value <= 0):
                raise ContractError(f"Gain {name} must have a positive diagonal")
            object.__setattr__(self, name, value)

    @classmethod
    def defaults(cls) -> "Gains":
        return cls(
            k_r=np.array([5.0, 5.0, 5.0]),
            k_v=np.array([0.5, 0.5, 2.0]),
            k_R=np.array([30.0, 30.0, 30.0]),
            k_Omega=np.array([5.0, 10.0, 20.0]),
        )


@dataclass(frozen=True)
class TrajectoryConfig:
    amplitude: np.ndarray = field(default_factory=lambda: np.array([4.0, 5.0, 2.0]))
    frequency: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.4, 0.4]))
    phase: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: str = "atan2"
    yaw_rad: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "amplitude", _vec3(self.amplitude, "amplitude"))
        object.__setattr__(self, "frequency", _vec3(self.frequency, "frequency"))
        object.__setattr__(self, "phase", _vec3(self.phase, "phase"))
        if self.yaw not in ("atan2", "fixed"):
            raise ContractError(f"Unknown yaw mode '{self.yaw}'")


@dataclass(frozen=True)
class DesiredState:
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    R: np.ndarray
    Omega: np.ndarray
    Omega_dot: np.ndarray
    psi: float
    jerk: np.ndarray = field(default_factory=lambda: np.zeros(3))
    snap: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi_dot: float = 0.0
    psi_ddot: float = 0.0


@dataclass(frozen=True)
class StateDerivative:
    r_dot: np.ndarray
    v_dot: np.ndarray
    R_dot: np.ndarray
    Omega_dot: np.ndarray


class ResidualPredictor(Protocol):
    def predict_means(self, q: np.ndarray) -> np.ndarray: ...


# --- plant ---


def true_dynamics(
    state: QuadState,
    u: ControlInput,
    params: QuadParams,
    schedule: DisturbanceSchedule,
    t: float,
) -> StateDerivative:
    m = schedule.mass_at(t, params.m)
    J = schedule.inertia_at(t, params.J)
    v_dot = params.g * E3 - (u.F / m) * (state.R @ E3) + schedule.wind * params.g
    Omega_dot = np.linalg.solve(J, u.M - np.cross(state.Omega, J @ state.Omega))
    return StateDerivative(state.v.copy(), v_dot, state.R @ hat(state.Omega), Omega_dot)


def nominal_accelerations(
    state: QuadState, u: ControlInput, params: QuadParams
) -> tuple[np.ndarray, np.ndarray]:
    """Translational and angular accelerations of the undisturbed model."""
    a = params.g * E3 - (u.F / params.m) * (state.R @ E3)
    alpha = np.linalg.solve(params.J, u.M - np.cross(state.Omega, params.J @ state.Omega))
    return a, alpha


def _exp_so3(omega: np.ndarray, dt: float) -> np.ndarray:
    return Rotation.from_rotvec(omega * dt).as_matrix()


def step(
    state: QuadState,
    u: ControlInput,
    params: QuadParams,
    schedule: DisturbanceSchedule,
    t: float,
    dt: float,
) -> QuadState:
    """One RK4 step on (r, v, Omega); the attitude moves on SO(3) through the exponential map."""
    if dt <= 0:
        raise ContractError(f"dt must be positive, got {dt}")

    def stage(r, v, Omega, h, omega_rot, tau):
        R = state.R @ _exp_so3(omega_rot, h)
        return true_dynamics(QuadState(r, v, R, Omega), u, params, schedule, tau)

    k1 = true_dynamics(state, u, params, schedule, t)
    O1 = state.Omega
    half = 0.5 * dt
    r2, v2, O2 = state.r + half * k1.r_dot, state.v + half * k1.v_dot, O1 + half * k1.Omega_dot
    k2 = stage(r2, v2, O2, half, O1, t + half)
    r3, v3, O3 = state.r + half * k2.r_dot, state.v + half * k2.v_dot, O1 + half * k2.Omega_dot
    k3 = stage(r3, v3, O3, half, O2, t + half)
    r4, v4, O4 = state.r + dt * k3.r_dot, state.v + dt * k3.v_dot, O1 + dt * k3.Omega_dot
    k4 = stage(r4, v4, O4, dt, O3, t + dt)

    def combine(x, a, b, c, d):
        return x + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)

    r = combine(state.r, k1.r_dot, k2.r_dot, k3.r_dot, k4.r_dot)
    v = combine(state.v, k1.v_dot, k2.v_dot, k3.v_dot, k4.v_dot)
    Omega = combine(state.Omega, k1.Omega_dot, k2.Omega_dot, k3.Omega_dot, k4.Omega_dot)
    Omega_avg = (O1 + 2.0 * O2 + 2.0 * O3 + O4) / 6.0
    R = state.R @ _exp_so3(Omega_avg, dt)
    if np.linalg.norm(R.T @ R - np.eye(3)) > ORTHO_TOLERANCE:
        R, _ = polar(R)

    nxt = QuadState(r, v, R, Omega)
    if not nxt.is_finite():
        raise SimulationDivergedError(t + dt, "non-finite state")
    return nxt


# --- reference trajectory ---


def attitude_from_thrust(b3, psi: float) -> np.ndarray:
    """Rotation whose third column is ``b3`` and whose heading follows ``psi``."""
    b3 = _vec3(b3, "b3")
    norm = np.linalg.norm(b3)
    if norm < DEGENERATE_NORM:
        raise DegenerateFlatnessError("Thrust direction has zero length")
    b3 = b3 / norm
    b1d = np.array([math.cos(psi), math.sin(psi), 0.0])
    b2 = np.cross(b3, b1d)
    n2 = np.linalg.norm(b2)
    if n2 < DEGENERATE_NORM:
        raise DegenerateFlatnessError(f"Heading psi={psi:.4f} is parallel to the thrust axis")
    b2 = b2 / n2
    b1 = np.cross(b2, b3)
    return np.column_stack((b1, b2, b3))


def _unit_with_rates(
    x: np.ndarray, x_dot: np.ndarray, x_ddot: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = float(np.linalg.norm(x))
    u = x / n
    n_dot = float(u @ x_dot)
    u_dot = (x_dot - n_dot * u) / n
    n_ddot = float(u_dot @ x_dot + u @ x_ddot)
    u_ddot = (x_ddot - n_ddot * u - 2.0 * n_dot * u_dot) / n
    return u, u_dot, u_ddot


def commanded_attitude(
    b, b_dot, b_ddot, psi: float, psi_dot: float = 0.0, psi_ddot: float = 0.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Attitude built from the force vector ``b`` and heading ``psi``, with its body rate and rate derivative.

    The rates follow analytically from the first two time derivatives of ``b``
    and ``psi``, so a constant force vector and heading give exactly zero.
    """
    R = attitude_from_thrust(b, psi)
    b3, b3_dot, b3_ddot = _unit_with_rates(
        _vec3(b, "b"), _vec3(b_dot, "b_dot"), _vec3(b_ddot, "b_ddot")
    )
    cos, sin = math.cos(psi), math.sin(psi)
    b1d = np.array([cos, sin, 0.0])
    b1d_dot = psi_dot * np.array([-sin, cos, 0.0])
    b1d_ddot = psi_ddot * np.array([-sin, cos, 0.0]) - psi_dot**2 * b1d

    c = np.cross(b3, b1d)
    c_dot = np.cross(b3_dot, b1d) + np.cross(b3, b1d_dot)
    c_ddot = np.cross(b3_ddot, b1d) + 2.0 * np.cross(b3_dot, b1d_dot) + np.cross(b3, b1d_ddot)
    b2, b2_dot, b2_ddot = _unit_with_rates(c, c_dot, c_ddot)

    b1_dot = np.cross(b2_dot, b3) + np.cross(b2, b3_dot)
    b1_ddot = np.cross(b2_ddot, b3) + 2.0 * np.cross(b2_dot, b3_dot) + np.cross(b2, b3_ddot)
    R_dot = np.column_stack((b1_dot, b2_dot, b3_dot))
    R_ddot = np.column_stack((b1_ddot, b2_ddot, b3_ddot))
    # R^T R_dot is skew; the skew part of R^T R_ddot is hat(Omega_dot)
    Omega = vee(_skew_part(R.T @ R_dot))
    Omega_dot = vee(_skew_part(R.T @ R_ddot))
    return R, Omega, Omega_dot


def _flat_outputs(t: float, traj: TrajectoryConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    arg = traj.frequency * t + traj.phase
    r = traj.amplitude * np.sin(arg)
    v = traj.amplitude * traj.frequency * np.cos(arg)
    a = -traj.amplitude * traj.frequency**2 * np.sin(arg)
    return r, v, a


def _flat_jerk_snap(t: float, traj: TrajectoryConfig) -> tuple[np.ndarray, np.ndarray]:
    arg = traj.frequency * t + traj.phase
    jerk = -traj.amplitude * traj.frequency**3 * np.cos(arg)
    snap = traj.amplitude * traj.frequency**4 * np.sin(arg)
    return jerk, snap


def _heading(r: np.ndarray, v: np.ndarray, traj: TrajectoryConfig) -> float:
    if traj.yaw == "fixed":
        return traj.yaw_rad
    if math.hypot(r[0], r[1]) > 1e-9:
        return math.atan2(r[1], r[0])
    # at the origin take the limiting direction of travel
    if math.hypot(v[0], v[1]) > 1e-9:
        return math.atan2(v[1], v[0])
    return traj.yaw_rad


def _flat_frame(
    t: float, traj: TrajectoryConfig, g: float, heading_ref: np.ndarray | None = None
) -> tuple[np.ndarray, float, np.ndarray]:
    r, v, a = _flat_outputs(t, traj)
    b3 = g * E3 - a
    if np.linalg.norm(b3) < DEGENERATE_NORM:
        raise DegenerateFlatnessError(f"Desired acceleration cancels gravity at t={t:.4f}s")
    psi = _heading(r, v, traj)
    heading = np.array([math.cos(psi), math.sin(psi), 0.0])
    if heading_ref is not None and heading @ heading_ref < 0:
        # atan2 headings jump by pi where the path crosses the z axis
        heading = -heading
        psi += math.pi
    return attitude_from_thrust(b3, psi), psi, heading


def _flat_rate(t: float, traj: TrajectoryConfig, g: float, heading_ref: np.ndarray) -> np.ndarray:
    h = FLAT_STEP
    R, _, heading = _flat_frame(t, traj, g, heading_ref)
    R_plus, _, _ = _flat_frame(t + h, traj, g, heading)
    R_minus, _, _ = _flat_frame(t - h, traj, g, heading)
    return vee(_skew_part(R.T @ (R_plus - R_minus) / (2.0 * h)))


def _turn(a: np.ndarray, b: np.ndarray) -> float:
    return math.atan2(a[0] * b[1] - a[1] * b[0], float(a @ b))


def _heading_rates(t: float, traj: TrajectoryConfig, g: float, heading: np.ndarray) -> tuple[float, float]:
    if traj.yaw == "fixed":
        return 0.0, 0.0
    h = FLAT_STEP
    _, _, ahead = _flat_frame(t + h, traj, g, heading)
    _, _, behind = _flat_frame(t - h, traj, g, heading)
    turn_ahead, turn_behind = _turn(heading, ahead), _turn(heading, behind)
    return (turn_ahead - turn_behind) / (2.0 * h), (turn_ahead + turn_behind) / h**2


def flat_to_desired(t: float, traj: TrajectoryConfig, *, g: float = GRAVITY) -> DesiredState:
    r, v, a = _flat_outputs(t, traj)
    jerk, snap = _flat_jerk_snap(t, traj)
    R, _, heading = _flat_frame(t, traj, g)
    psi = _heading(r, v, traj)
    psi_dot, psi_ddot = _heading_rates(t, traj, g, heading)
    h = FLAT_STEP
    Omega = _flat_rate(t, traj, g, heading)
    Omega_dot = (_flat_rate(t + h, traj, g, heading) - _flat_rate(t - h, traj, g, heading)) / (2.0 * h)
    return DesiredState(r, v, a, R, Omega, Omega_dot, psi, jerk, snap, psi_dot, psi_ddot)


# --- control ---


def attitude_error(R: np.ndarray, R_d: np.ndarray) -> np.ndarray:
    return 0.5 * vee(_skew_part(R_d.T @ R - R.T @ R_d))


def augmented_controller(
    nominal: ControlInput, R: np.ndarray, mu: np.ndarray, params: QuadParams
) -> ControlInput:
    """Thrust and moment corrected by learned accelerations ``mu`` (6-vector)."""
    mu = np.asarray(mu, dtype=float).reshape(6)
    F = nominal.F - params.m * float(mu[:3] @ (R @ E3))
    M = nominal.M - params.J @ mu[3:]
    return ControlInput(F, M)


def geometric_controller(
    state: QuadState,
    desired: DesiredState,
    gains: Gains,
    params: QuadParams,
    *,
    mu: np.ndarray | None = None,
    attitude_feedback: bool = True,
    accel: np.ndarray | None = None,
) -> ControlInput:
    """Geometric SE(3) tracking law with the nominal mass and inertia.

    With ``attitude_feedback`` the commanded attitude follows the commanded force
    vector (including the learned translational correction), and its body rate
    and rate derivative are fed forward. Those come from the force vector's time
    derivatives, which need the vehicle's acceleration: ``accel`` is the measured
    (accelerometer) value, and without it the nominal model's prediction is used.
    Otherwise the flat reference attitude is tracked directly.
    """
    R, Omega, J, m = state.R, state.Omega, params.J, params.m
    e_r = state.r - desired.r
    e_v = state.v - desired.v
    b = gains.k_r * e_r + gains.k_v * e_v + m * params.g * E3 - m * desired.a
    Re3 = R @ E3
    F = float(b @ Re3)

    R_c, Omega_c, Omega_c_dot = desired.R, desired.Omega, desired.Omega_dot
    if attitude_feedback:
        mu_t = np.zeros(3) if mu is None else np.asarray(mu[:3], dtype=float)
        b_cmd = b - m * mu_t
        if np.linalg.norm(b_cmd) >= DEGENERATE_NORM:
            F_cmd = float(b_cmd @ Re3)
            a = params.g * E3 - (F_cmd / m) * Re3 - mu_t if accel is None else _vec3(accel, "accel")
            # the learned correction is held constant between ticks
            b_dot = gains.k_r * e_v + gains.k_v * (a - desired.a) - m * desired.jerk
            Re3_dot = R @ hat(Omega) @ E3
            F_dot = float(b_dot @ Re3 + b_cmd @ Re3_dot)
            jerk = -(F_dot * Re3 + F_cmd * Re3_dot) / m
            b_ddot = gains.k_r * (a - desired.a) + gains.k_v * (jerk - desired.jerk) - m * desired.snap
            psi = desired.psi
            if attitude_from_thrust(b_cmd, psi)[:, 0] @ R[:, 0] < 0:
                psi += math.pi
            R_c, Omega_c, Omega_c_dot = commanded_attitude(
                b_cmd, b_dot, b_ddot, psi, desired.psi_dot, desired.psi_ddot
            )

    e_R = attitude_error(R, R_c)
    RtRc = R.T @ R_c
    e_Omega = Omega - RtRc @ Omega_c
    M = (
        -gains.k_R * e_R
        - gains.k_Omega * e_Omega
        + np.cross(Omega, J @ Omega)
        - J @ (hat(Omega) @ RtRc @ Omega_c - RtRc @ Omega_c_dot)
    )
    nominal = ControlInput(F, M)
    if mu is None:
        return nominal
    return augmented_controller(nominal, R, mu, params)


# --- learning hooks ---


def regressor_input(state: QuadState) -> np.ndarray:
    return np.concatenate((state.r, state.v, state.Omega))


@dataclass(frozen=True)
class LogSample:
    t: float
    state: QuadState
    u: ControlInput
    derivative: StateDerivative


def residual_targets(
    log: Sequence[LogSample],
    params_nominal: QuadParams,
    *,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ResidualDataset:
    """Inputs ``q = [r, v, Omega]`` and the six model-mismatch targets of a flight log."""
    if not log:
        raise ContractError("Residual extraction needs a non-empty log")
    inputs = np.empty((len(log), 9))
    targets = np.empty((len(log), len(CHANNELS)))
    for i, sample in enumerate(log):
        a_nom, alpha_nom = nominal_accelerations(sample.state, sample.u, params_nominal)
        inputs[i] = regressor_input(sample.state)
        targets[i, :3] = params_nominal.m * (sample.derivative.v_dot - a_nom)
        targets[i, 3:] = params_nominal.J @ (sample.derivative.Omega_dot - alpha_nom)
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        targets = targets + rng.normal(0.0, noise_sigma, size=targets.shape)
    return ResidualDataset(inputs, targets)


def learned_correction(
    state: QuadState, model: ResidualPredictor, params: QuadParams
) -> np.ndarray | None:
    """Map predicted residual forces/moments to the accelerations the controller cancels."""
    try:
        y_hat = np.asarray(model.predict_means(regressor_input(state)), dtype=float).reshape(6)
    except Exception as e:
        print(f"  WARN [learned correction] prediction failed, using nominal input: {e}", file=sys.stderr)
        return None
    if not np.all(np.isfinite(y_hat)):
        print("  WARN [learned correction] non-finite prediction, using nominal input", file=sys.stderr)
        return None
    return np.concatenate((-y_hat[:3] / params.m, np.linalg.solve(params.J, y_hat[3:])))

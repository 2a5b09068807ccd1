"""Two-link planar arm in the sagittal plane driven by six muscle actuators.

Angle convention: the shoulder angle is measured from the downward vertical
(0 = arm hanging), the elbow angle is interior flexion (0 = straight). Both
rotate counter-clockwise in a frame with +x forward and +y up, so the
forearm's absolute angle from the downward vertical is ``q1 + q2``.

Every function broadcasts over leading batch dimensions: joint quantities
have a trailing axis of length 2 and muscle quantities a trailing axis of
length 6. Batched evaluation of many arms is the normal use during training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import math

import numpy as np

N_JOINTS = 2
N_MUSCLES = 6

# Muscle order. Each antagonist pair is (flexor, extensor); the flexor is the
# agonist for the upward reach used in evaluation.
MUSCLE_NAMES = ("S_flex", "S_ext", "E_flex", "E_ext", "B_flex", "B_ext")
PAIRS = {"S": (0, 1), "E": (2, 3), "B": (4, 5)}


class PlantFault(FloatingPointError):
    """Raised when the integrated state stops being finite."""


def _default_moment_arms() -> list[list[float]]:
    mono, bi = 0.04, 0.03
    return [
        [mono, 0.0],
        [-mono, 0.0],
        [0.0, mono],
        [0.0, -mono],
        [bi, bi],
        [-bi, -bi],
    ]


@dataclass
class ArmParams:
    """Physical parameters of the arm. SI units throughout."""

    L1: float = 0.35
    L2: float = 0.35
    m1: float = 2.0
    m2: float = 1.5
    lc1: float | None = None
    lc2: float | None = None
    I1: float | None = None
    I2: float | None = None
    g: float = 9.81
    b1: float = 0.05
    b2: float = 0.05
    q1_min: float = math.radians(-60.0)
    q1_max: float = math.radians(150.0)
    q2_min: float = 0.0
    q2_max: float = math.radians(150.0)
    tau_act: float = 0.01
    tau_deact: float = 0.04
    f_max: list[float] = field(default_factory=lambda: [300.0] * N_MUSCLES)
    moment_arms: list[list[float]] = field(default_factory=_default_moment_arms)

    def __post_init__(self) -> None:
        # Unset c.o.m. offsets default to mid-link, inertias to uniform rods.
        if self.lc1 is None:
            self.lc1 = self.L1 / 2
        if self.lc2 is None:
            self.lc2 = self.L2 / 2
        if self.I1 is None:
            self.I1 = self.m1 * self.L1**2 / 12
        if self.I2 is None:
            self.I2 = self.m2 * self.L2**2 / 12
        self.f_max = [float(f) for f in self.f_max]
        self.moment_arms = [[float(r) for r in row] for row in self.moment_arms]
        self.validate()

    def validate(self) -> None:
        positive = ("L1", "L2", "m1", "m2", "lc1", "lc2", "I1", "I2", "tau_act", "tau_deact")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"ArmParams.{name} must be strictly positive")
        if self.g < 0 or self.b1 < 0 or self.b2 < 0:
            raise ValueError("gravity and damping must be nonnegative")
        if len(self.f_max) != N_MUSCLES or min(self.f_max) <= 0:
            raise ValueError("f_max needs six strictly positive entries")
        R = np.asarray(self.moment_arms)
        if R.shape != (N_MUSCLES, N_JOINTS):
            raise ValueError("moment_arms must be 6x2")
        if not (self.q1_min < self.q1_max and self.q2_min < self.q2_max):
            raise ValueError("joint limits must satisfy min < max")
        s, e, b = (R[list(PAIRS[k])] for k in "SEB")
        if s[0, 1] != 0 or s[1, 1] != 0 or e[0, 0] != 0 or e[1, 0] != 0:
            raise ValueError("monoarticular muscles must span a single joint")
        if not np.all(b != 0):
            raise ValueError("biarticular muscles need nonzero moment arms on both joints")
        for pair, joints in ((s, [0]), (e, [1]), (b, [0, 1])):
            for j in joints:
                if not pair[0, j] * pair[1, j] < 0:
                    raise ValueError("antagonists must have opposite-signed moment arms")

    # array views; the dataclass fields stay plain lists for serialization
    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.moment_arms, dtype=float)

    @property
    def F(self) -> np.ndarray:
        return np.asarray(self.f_max, dtype=float)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([self.q1_min, self.q2_min])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([self.q1_max, self.q2_max])

    @property
    def reach(self) -> float:
        return self.L1 + self.L2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArmParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ArmParams keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ArmState:
    q: np.ndarray
    qd: np.ndarray
    act: np.ndarray
    t: float = 0.0

    def copy(self) -> "ArmState":
        return ArmState(self.q.copy(), self.qd.copy(), self.act.copy(), self.t)


@dataclass
class HandState:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray


def initial_state(q=(0.0, math.pi / 2)) -> ArmState:
    """Resting arm: given pose, zero velocities, zero activation."""
    return ArmState(np.array(q, dtype=float), np.zeros(N_JOINTS), np.zeros(N_MUSCLES), 0.0)


def _check_unit_interval(x: np.ndarray, name: str) -> None:
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(np.isnan(x)):
        raise ValueError(f"{name} must lie in [0, 1]")


def activation_step(act, u, dt: float, params: ArmParams) -> np.ndarray:
    """Advance first-order activation dynamics by ``dt`` with ``u`` held.

    Uses the exact solution of ``da/dt = (u - a)/tau`` with ``tau_act`` when
    rising and ``tau_deact`` when falling, so the result always lies between
    ``act`` and ``u``.
    """
    act = np.asarray(act, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_unit_interval(act, "activation")
    _check_unit_interval(u, "stimulation")
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau = np.where(u > act, params.tau_act, params.tau_deact)
    return act + (u - act) * -np.expm1(-dt / tau)


def muscle_forces(act, params: ArmParams) -> np.ndarray:
    return np.asarray(act, dtype=float) * params.F


def muscle_torques(act, params: ArmParams) -> np.ndarray:
    """Joint torques (shoulder, elbow) from activations; linear in ``act``."""
    act = np.asarray(act, dtype=float)
    _check_unit_interval(act, "activation")
    return muscle_forces(act, params) @ params.R


def mass_matrix(q, params: ArmParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    p = params
    c2 = np.cos(q[..., 1])
    m11 = p.m1 * p.lc1**2 + p.I1 + p.m2 * (p.L1**2 + p.lc2**2 + 2 * p.L1 * p.lc2 * c2) + p.I2
    m12 = p.m2 * (p.lc2**2 + p.L1 * p.lc2 * c2) + p.I2
    m22 = np.broadcast_to(p.m2 * p.lc2**2 + p.I2, c2.shape)
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def coriolis(q, qd, params: ArmParams) -> np.ndarray:
    """Velocity-product torques C(q, qd) qd."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    h = params.m2 * params.L1 * params.lc2 * np.sin(q[..., 1])
    w1, w2 = qd[..., 0], qd[..., 1]
    return np.stack([-h * (2 * w1 * w2 + w2**2), h * w1**2], -1)


def gravity(q, params: ArmParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    p = params
    s1 = np.sin(q[..., 0])
    s12 = np.sin(q[..., 0] + q[..., 1])
    g2 = p.m2 * p.g * p.lc2 * s12
    g1 = (p.m1 * p.lc1 + p.m2 * p.L1) * p.g * s1 + g2
    return np.stack([g1, g2], -1)


def _solve2(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    a, b, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 1]
    det = a * d - b * b
    x1 = (d * rhs[..., 0] - b * rhs[..., 1]) / det
    x2 = (a * rhs[..., 1] - b * rhs[..., 0]) / det
    return np.stack([x1, x2], -1)


def forward_dynamics(q, qd, torques, params: ArmParams, check: bool = True) -> np.ndarray:
    """Joint accelerations from M qdd + C qd + G + B qd = tau."""
    qd = np.asarray(qd, dtype=float)
    # non-finite states are reported below, not through numpy warnings
    with np.errstate(invalid="ignore", over="ignore"):
        damping = qd * np.array([params.b1, params.b2])
        rhs = np.asarray(torques, dtype=float) - coriolis(q, qd, params) - gravity(q, params) - damping
        qdd = _solve2(mass_matrix(q, params), rhs)
    if check and not np.all(np.isfinite(qdd)):
        raise PlantFault("non-finite joint acceleration")
    return qdd


def step_arrays(q, qd, act, u, dt: float, params: ArmParams, check: bool = True):
    """One semi-implicit Euler step on raw arrays; returns (q, qd, act, qdd).

    Activations advance first, the resulting torques drive the velocity
    update, and the new velocity drives the position update. Positions are
    clamped to the joint limits and any velocity pushing further into a
    limit is zeroed. With ``check=False`` non-finite rows are returned
    instead of raising, so batched callers can isolate them.
    """
    act = activation_step(act, u, dt, params)
    qdd = forward_dynamics(q, qd, muscle_forces(act, params) @ params.R, params, check=check)
    qd = qd + dt * qdd
    q = q + dt * qd
    lo, hi = params.q_min, params.q_max
    below, above = q < lo, q > hi
    q = np.clip(q, lo, hi)
    qd = np.where((below & (qd < 0)) | (above & (qd > 0)), 0.0, qd)
    if check and not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise PlantFault("non-finite arm state")
    return q, qd, act, qdd


def step(state: ArmState, u, dt: float, params: ArmParams) -> ArmState:
    """Advance the arm by ``dt`` holding stimulation ``u``. Pure function."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q, qd, act, _ = step_arrays(state.q, state.qd, state.act, u, dt, params)
    return ArmState(q, qd, act, state.t + dt)


def forward_kinematics(q, params: ArmParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    t1, t12 = q[..., 0], q[..., 0] + q[..., 1]
    x = params.L1 * np.sin(t1) + params.L2 * np.sin(t12)
    y = -params.L1 * np.cos(t1) - params.L2 * np.cos(t12)
    return np.stack([x, y], -1)


def jacobian(q, params: ArmParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    t1, t12 = q[..., 0], q[..., 0] + q[..., 1]
    L1, L2 = params.L1, params.L2
    row_x = np.stack([L1 * np.cos(t1) + L2 * np.cos(t12), L2 * np.cos(t12)], -1)
    row_y = np.stack([L1 * np.sin(t1) + L2 * np.sin(t12), L2 * np.sin(t12)], -1)
    return np.stack([row_x, row_y], -2)


def hand_kinematics(q, qd, qdd, params: ArmParams):
    """Hand position, velocity and acceleration as arrays (p, v, a)."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    t1, t12 = q[..., 0], q[..., 0] + q[..., 1]
    w1, w12 = qd[..., 0], qd[..., 0] + qd[..., 1]
    L1, L2 = params.L1, params.L2
    J = jacobian(q, params)
    v = np.einsum("...ij,...j->...i", J, qd)
    # Jdot qd
    jdx = -L1 * np.sin(t1) * w1**2 - L2 * np.sin(t12) * w12**2
    jdy = L1 * np.cos(t1) * w1**2 + L2 * np.cos(t12) * w12**2
    a = np.einsum("...ij,...j->...i", J, qdd) + np.stack([jdx, jdy], -1)
    return forward_kinematics(q, params), v, a


def hand_state(state: ArmState, qdd, params: ArmParams) -> HandState:
    return HandState(*hand_kinematics(state.q, state.qd, qdd, params))


def instantaneous_power(qd, torques) -> np.ndarray:
    """Sum over joints of |joint velocity * joint torque| (W)."""
    return np.sum(np.abs(np.asarray(qd, dtype=float) * np.asarray(torques, dtype=float)), axis=-1)


def mechanical_energy(q, qd, params: ArmParams) -> np.ndarray:
    """Kinetic plus potential energy, zero at the hanging rest pose."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    p = params
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", qd, mass_matrix(q, p), qd)
    c1 = np.cos(q[..., 0])
    c12 = np.cos(q[..., 0] + q[..., 1])
    height1 = p.lc1 * (1 - c1)
    height2 = p.L1 * (1 - c1) + p.lc2 * (1 - c12)
    return kinetic + p.g * (p.m1 * height1 + p.m2 * height2)


def inverse_kinematics(p, params: ArmParams) -> np.ndarray | None:
    """Joint angles placing the hand at ``p``, or None outside the limits.

    The elbow only flexes (nonnegative interior angle), so the solution is
    unique when it exists.
    """
    x, y = float(p[0]), float(p[1])
    L1, L2 = params.L1, params.L2
    r2 = x * x + y * y
    c2 = (r2 - L1**2 - L2**2) / (2 * L1 * L2)
    if not -1.0 <= c2 <= 1.0:
        return None
    q2 = math.acos(c2)
    phi = math.atan2(x, -y)
    q1 = phi - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))
    # wrap into the shoulder range where possible
    for shift in (0.0, 2 * math.pi, -2 * math.pi):
        if params.q1_min <= q1 + shift <= params.q1_max:
            q1 += shift
            break
    q = np.array([q1, q2])
    if np.all(q >= params.q_min - 1e-12) and np.all(q <= params.q_max + 1e-12):
        return q
    return None

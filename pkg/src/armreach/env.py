"""Episodic reaching task on the six-muscle arm.

One control step holds the (possibly noise-corrupted) stimulation for
``substeps`` physics steps, then scores the post-step state. The step reward
is ``c1 * r_sparse - c2 * r_optimal`` where ``r_sparse`` is 0 once the hand
is inside the goal tolerance with the task requirement met and -1 otherwise.

:class:`BatchReacher` runs many episodes in lockstep on stacked arrays and
is what training and evaluation use. :class:`ReachEnv` is a single episode
built on top of it, so both paths share every line of reward and physics
code.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np

from . import dynamics as dyn
from .config import ConfigError, EnvConfig, GoalSpec, NoiseParams, RewardWeights
from .dynamics import HandState

OBS_SIZE = 42
# index map of the observation vector
OBS_INDEX = {
    "hand_p": slice(0, 2),
    "hand_v": slice(2, 4),
    "hand_a": slice(4, 6),
    "q": slice(6, 8),
    "qd": slice(8, 10),
    "qdd": slice(10, 12),
    "q_jerk": slice(12, 14),
    "act": slice(14, 20),
    "force": slice(20, 26),
    "muscle_len": slice(26, 32),
    "muscle_vel": slice(32, 38),
    "work": slice(38, 39),
    "hand_jerk": slice(39, 40),
    "goal": slice(40, 42),
}

# Typical magnitude of each observation entry; the policy divides by it.
OBS_SCALE = np.concatenate(
    [
        [0.5] * 2,
        [2.0] * 2,
        [20.0] * 2,
        [1.5] * 2,
        [10.0] * 2,
        [100.0] * 2,
        [1e4] * 2,
        [1.0] * 6,
        [300.0] * 6,
        [0.05] * 6,
        [0.3] * 6,
        [10.0],
        [1e3],
        [0.5] * 2,
    ]
)


# ---------------------------------------------------------------------------
# reward terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskRequirement:
    kind: str = "pos"
    v_tol: float = 0.20
    a_tol: float = 0.10

    def __post_init__(self) -> None:
        if self.kind not in ("pos", "pos-vel", "pos-vel-acc"):
            raise ConfigError(f"unknown task requirement {self.kind!r}")
        if self.v_tol <= 0 or self.a_tol <= 0:
            raise ConfigError("tolerances must be strictly positive")

    @classmethod
    def from_config(cls, config: EnvConfig) -> "TaskRequirement":
        return cls(config.requirement, config.v_tol, config.a_tol)


def _requirement_mask(v, a, req: TaskRequirement) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    ok = np.ones(v.shape[:-1], dtype=bool)
    if req.kind in ("pos-vel", "pos-vel-acc"):
        ok &= np.linalg.norm(v, axis=-1) <= req.v_tol
    if req.kind == "pos-vel-acc":
        ok &= np.linalg.norm(np.asarray(a, dtype=float), axis=-1) <= req.a_tol
    return ok


def task_requirement_met(hand: HandState, req: TaskRequirement):
    return _requirement_mask(hand.v, hand.a, req)[()]


def _sparse(p, v, a, goal, p_tol: float, req: TaskRequirement) -> np.ndarray:
    inside = np.linalg.norm(np.asarray(p) - np.asarray(goal), axis=-1) <= p_tol
    return np.where(inside & _requirement_mask(v, a, req), 0.0, -1.0)


def sparse_reward(hand: HandState, p_goal, p_tol: float, req: TaskRequirement):
    """0 if the hand is within ``p_tol`` of the goal and ``req`` holds, else -1."""
    return _sparse(hand.p, hand.v, hand.a, p_goal, p_tol, req)[()]


def optimal_reward(effort, jerk, work, weights: RewardWeights):
    """Weighted mean of the three cost terms; jerk and work pre-normalized."""
    w = weights
    return (w.c3 * np.asarray(effort) + w.c4 * np.asarray(jerk) + w.c5 * np.asarray(work)) / (
        w.c3 + w.c4 + w.c5
    )


def total_reward(r_sparse, r_optimal, weights: RewardWeights, optimality_enabled: bool = True):
    if not optimality_enabled:
        r_optimal = 0.0
    return weights.c1 * np.asarray(r_sparse) - weights.c2 * np.asarray(r_optimal)


def jerk_estimate(a_now, a_prev, dt_control: float):
    """Finite-difference jerk magnitude; 0 when there is no previous sample."""
    if dt_control <= 0:
        raise ValueError("dt_control must be positive")
    if a_prev is None:
        return 0.0
    return np.linalg.norm(np.asarray(a_now) - np.asarray(a_prev), axis=-1) / dt_control


def index_of_difficulty(distance: float, p_tol: float) -> float:
    """log2(D / W + 1) with target width W = 2 * p_tol."""
    if distance <= 0 or p_tol <= 0:
        raise ValueError("distance and p_tol must be positive")
    return math.log2(distance / (2 * p_tol) + 1)


def apply_execution_noise(u, noise: NoiseParams, rng: np.random.Generator, clamp: bool = True):
    """Corrupt stimulation as ``(1 + eta1) * u + eta2`` with fresh Gaussian draws."""
    u = np.asarray(u, dtype=float)
    eta1 = rng.normal(0.0, noise.sigma1, u.shape)
    eta2 = rng.normal(0.0, noise.sigma2, u.shape)
    u_f = (1.0 + eta1) * u + eta2
    return np.clip(u_f, 0.0, 1.0) if clamp else u_f


# ---------------------------------------------------------------------------
# goals
# ---------------------------------------------------------------------------


def initial_hand_position(config: EnvConfig) -> np.ndarray:
    return dyn.forward_kinematics(np.array(config.initial_q), config.arm)


def evaluation_goal(config: EnvConfig) -> np.ndarray:
    goal = initial_hand_position(config) + np.array(config.goal.eval_offset)
    if dyn.inverse_kinematics(goal, config.arm) is None:
        raise ConfigError(f"evaluation goal {goal.tolist()} is not reachable")
    return goal


def sample_goal(config: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample over the reachable part of the training annulus sector."""
    g: GoalSpec = config.goal
    reach = config.arm.reach
    r_lo, r_hi = g.r_min * reach, g.r_max * reach
    for _ in range(10_000):
        r = math.sqrt(rng.uniform(r_lo**2, r_hi**2))
        phi = math.radians(rng.uniform(g.angle_min, g.angle_max))
        p = np.array([r * math.sin(phi), -r * math.cos(phi)])
        if dyn.inverse_kinematics(p, config.arm) is not None:
            return p
    raise ConfigError("goal sampling region contains no reachable point")


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------


class BatchReacher:
    """Lockstep simulation of ``n`` episodes sharing one :class:`EnvConfig`.

    Each episode draws goals and noise from one of the supplied random
    streams; ``stream_of[i]`` names the stream of episode ``i``. Episodes
    mapped to the same stream see identical goals and noise (common random
    numbers). Finished episodes are frozen in place.
    """

    def __init__(
        self,
        config: EnvConfig,
        streams: Sequence[np.random.Generator],
        stream_of: Sequence[int] | None = None,
    ):
        config.validate()
        self.config = config
        self.streams = list(streams)
        if stream_of is None:
            stream_of = range(len(self.streams))
        self.stream_of = np.asarray(stream_of, dtype=int)
        self.n = len(self.stream_of)
        if self.n == 0 or self.stream_of.min() < 0 or self.stream_of.max() >= len(self.streams):
            raise ValueError("stream_of must index into streams")
        self.req = TaskRequirement.from_config(config)
        p = config.arm
        self._R = p.R
        self._F = p.F

    # -- episode boundaries -------------------------------------------------

    def reset(self) -> np.ndarray:
        cfg = self.config
        n = self.n
        if cfg.mode == "eval":
            goals = np.tile(evaluation_goal(cfg), (len(self.streams), 1))
        else:
            goals = np.stack([sample_goal(cfg, rng) for rng in self.streams])
        self.goal = goals[self.stream_of]
        self.q = np.tile(np.array(cfg.initial_q, dtype=float), (n, 1))
        self.qd = np.zeros((n, 2))
        self.act = np.zeros((n, 6))
        self.steps = np.zeros(n, dtype=int)
        self.work = np.zeros(n)
        self.done = np.zeros(n, dtype=bool)
        self.success = np.zeros(n, dtype=bool)
        self.fault = np.zeros(n, dtype=bool)
        self.returns = np.zeros(n)
        self.min_violation = np.full(n, np.inf)
        self.min_shortfall = np.full(n, np.inf)
        self._eta = None
        self._control_steps = 0
        self.qdd = dyn.forward_dynamics(self.q, self.qd, self._torques(self.act), cfg.arm)
        self.p, self.v, self.a = dyn.hand_kinematics(self.q, self.qd, self.qdd, cfg.arm)
        self.a_prev = None
        self.q_jerk = np.zeros((n, 2))
        self.hand_jerk = np.zeros(n)
        return self.observe()

    def _torques(self, act):
        return (act * self._F) @ self._R

    def observe(self) -> np.ndarray:
        R = self._R
        return np.concatenate(
            [
                self.p,
                self.v,
                self.a,
                self.q,
                self.qd,
                self.qdd,
                self.q_jerk,
                self.act,
                self.act * self._F,
                self.q @ R.T,
                self.qd @ R.T,
                self.work[:, None],
                self.hand_jerk[:, None],
                self.goal,
            ],
            axis=1,
        )

    # -- dynamics -----------------------------------------------------------

    def _noise(self, u: np.ndarray) -> np.ndarray:
        cfg = self.config
        if not cfg.noise_enabled:
            return u
        if self._eta is None or self._control_steps % cfg.noise.cadence == 0:
            s1, s2 = cfg.noise.sigma1, cfg.noise.sigma2
            draws = [(rng.normal(0.0, s1, 6), rng.normal(0.0, s2, 6)) for rng in self.streams]
            eta1 = np.stack([d[0] for d in draws])[self.stream_of]
            eta2 = np.stack([d[1] for d in draws])[self.stream_of]
            self._eta = (eta1, eta2)
        eta1, eta2 = self._eta
        return np.clip((1.0 + eta1) * u + eta2, 0.0, 1.0)

    def step(self, u) -> dict[str, np.ndarray]:
        """Advance every unfinished episode by one control step.

        Returns per-episode arrays: ``obs``, ``u``, ``u_f``, reward terms,
        ``active`` (episodes that took this step), ``success``, ``done`` and
        ``fault``.
        """
        cfg = self.config
        arm = cfg.arm
        w = cfg.reward
        u = np.clip(np.nan_to_num(np.asarray(u, dtype=float), nan=0.0), 0.0, 1.0)
        u_f = self._noise(u)
        self._control_steps += 1
        active = ~self.done

        q, qd, act, work = self.q, self.qd, self.act, self.work
        with np.errstate(all="ignore"):
            for _ in range(cfg.substeps):
                q, qd, act, _ = dyn.step_arrays(q, qd, act, u_f, cfg.dt, arm, check=False)
                work = work + dyn.instantaneous_power(qd, self._torques(act)) * cfg.dt
            torques = self._torques(act)
            qdd = dyn.forward_dynamics(q, qd, torques, arm, check=False)
            p, v, a = dyn.hand_kinematics(q, qd, qdd, arm)
        finite = np.all(np.isfinite(np.concatenate([q, qd, qdd, p, v, a], axis=1)), axis=1)
        newly_faulted = active & ~finite
        take = active & finite

        def upd(old, new):
            mask = take.reshape((-1,) + (1,) * (np.ndim(old) - 1))
            return np.where(mask, new, old)

        dtc = cfg.control_dt
        if self.a_prev is None:
            hand_jerk = np.zeros(self.n)
            q_jerk = np.zeros((self.n, 2))
        else:
            hand_jerk = np.linalg.norm(a - self.a, axis=-1) / dtc
            q_jerk = (qdd - self.qdd) / dtc

        self.a_prev = self.a
        self.q, self.qd, self.act, self.work = upd(self.q, q), upd(self.qd, qd), upd(self.act, act), upd(self.work, work)
        self.qdd, self.p, self.v, self.a = upd(self.qdd, qdd), upd(self.p, p), upd(self.v, v), upd(self.a, a)
        self.q_jerk, self.hand_jerk = upd(self.q_jerk, q_jerk), upd(self.hand_jerk, hand_jerk)
        self.steps = self.steps + take

        r_sparse = _sparse(self.p, self.v, self.a, self.goal, cfg.goal.p_tol, self.req)
        r_effort = u.mean(axis=1)
        r_jerk = self.hand_jerk / w.jerk_max
        r_work = dyn.instantaneous_power(self.qd, self._torques(self.act)) / w.work_max
        r_optimal = optimal_reward(r_effort, r_jerk, r_work, w) if cfg.optimality_enabled else np.zeros(self.n)
        r_total = total_reward(r_sparse, r_optimal, w)

        success = take & (r_sparse == 0.0)
        self.success |= success
        self.fault |= newly_faulted
        self.returns = self.returns + np.where(take, r_total, 0.0)
        self.min_violation = np.where(take, np.minimum(self.min_violation, self.violation()), self.min_violation)
        self.min_shortfall = np.where(take, np.minimum(self.min_shortfall, self.shortfall()), self.min_shortfall)
        self.done = self.done | success | newly_faulted | (self.steps >= cfg.horizon)
        return {
            "obs": self.observe(),
            "u": u,
            "u_f": u_f,
            "r_sparse": r_sparse,
            "r_effort": r_effort,
            "r_jerk": r_jerk,
            "r_work": r_work,
            "r_optimal": r_optimal,
            "r_total": r_total,
            "active": take,
            "success": success,
            "done": self.done.copy(),
            "fault": newly_faulted,
        }

    def _ratios(self) -> list[np.ndarray]:
        ratios = [np.linalg.norm(self.p - self.goal, axis=1) / self.config.goal.p_tol]
        if self.req.kind in ("pos-vel", "pos-vel-acc"):
            ratios.append(np.linalg.norm(self.v, axis=1) / self.req.v_tol)
        if self.req.kind == "pos-vel-acc":
            ratios.append(np.linalg.norm(self.a, axis=1) / self.req.a_tol)
        return ratios

    def shortfall(self) -> np.ndarray:
        """Sum over goal conditions of log(tolerance ratio), counting only
        unmet ones; 0 exactly when the goal condition holds."""
        return np.sum([np.log(np.maximum(r, 1.0)) for r in self._ratios()], axis=0)

    def violation(self) -> np.ndarray:
        """Largest tolerance ratio of the current state (<= 1 means success)."""
        return np.max(self._ratios(), axis=0)


# ---------------------------------------------------------------------------
# single episode
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    observation: np.ndarray
    r_sparse: float
    r_effort: float
    r_jerk: float
    r_work: float
    r_optimal: float
    r_total: float
    done: bool
    info: dict


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class ReachEnv:
    """Single reaching episode with a gym-like ``reset``/``step`` interface."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self._batch: BatchReacher | None = None

    def reset(self, seed=None) -> np.ndarray:
        self._batch = BatchReacher(self.config, [make_rng(seed)])
        return self._batch.reset()[0]

    @property
    def goal(self) -> np.ndarray:
        return self._batch.goal[0]

    @property
    def state(self) -> dyn.ArmState:
        b = self._batch
        return dyn.ArmState(b.q[0].copy(), b.qd[0].copy(), b.act[0].copy(), b.steps[0] * self.config.control_dt)

    @property
    def hand(self) -> HandState:
        b = self._batch
        return HandState(b.p[0].copy(), b.v[0].copy(), b.a[0].copy())

    def step(self, u) -> StepResult:
        if self._batch is None:
            raise RuntimeError("call reset() before step()")
        if self._batch.done[0]:
            raise RuntimeError("episode is over; call reset()")
        out = self._batch.step(np.asarray(u, dtype=float)[None, :])
        b = self._batch
        info = {
            "t_req": bool(_requirement_mask(b.v, b.a, b.req)[0]),
            "position": bool(np.linalg.norm(b.p[0] - b.goal[0]) <= self.config.goal.p_tol),
            "u": out["u"][0],
            "u_f": out["u_f"][0],
            "success": bool(out["success"][0]),
            "fault": bool(out["fault"][0]),
            "steps": int(b.steps[0]),
        }
        return StepResult(
            observation=out["obs"][0],
            r_sparse=float(out["r_sparse"][0]),
            r_effort=float(out["r_effort"][0]),
            r_jerk=float(out["r_jerk"][0]),
            r_work=float(out["r_work"][0]),
            r_optimal=float(out["r_optimal"][0]),
            r_total=float(out["r_total"][0]),
            done=bool(out["done"][0]),
            info=info,
        )

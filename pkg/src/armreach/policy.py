"""Feed-forward stimulation policy and batched rollouts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import EnvConfig
from .env import OBS_SCALE, OBS_SIZE, BatchReacher, make_rng
from .trajectory import Trajectory

N_OUTPUTS = 6


class PolicyFault(FloatingPointError):
    pass


@dataclass(frozen=True)
class MLPPolicy:
    """tanh MLP from the 42-entry observation to six logistic outputs.

    Parameters live in one flat vector laid out layer by layer as
    ``W (in x out, row-major), b (out)``. Observations are divided by
    :data:`OBS_SCALE` before the first layer.
    """

    hidden: tuple[int, ...] = (64, 64)
    n_inputs: int = OBS_SIZE
    n_outputs: int = N_OUTPUTS

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.n_inputs, *self.hidden, self.n_outputs)

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split ``theta`` of shape (..., n_params) into (W, b) per layer."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape[-1]}")
        lead = theta.shape[:-1]
        layers, i = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = theta[..., i : i + a * b].reshape(*lead, a, b)
            i += a * b
            layers.append((W, theta[..., i : i + b]))
            i += b
        return layers

    def initial_params(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform hidden weights; zero biases and output layer.

        The zero output layer makes every initial stimulation 0.5 while the
        random hidden layers already carry a usable state encoding.
        """
        parts = []
        pairs = list(zip(self.sizes[:-1], self.sizes[1:]))
        for k, (a, b) in enumerate(pairs):
            if k < len(pairs) - 1:
                lim = np.sqrt(6.0 / (a + b))
                parts.append(rng.uniform(-lim, lim, a * b))
            else:
                parts.append(np.zeros(a * b))
            parts.append(np.zeros(b))
        return np.concatenate(parts)

    def forward(self, theta: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Stimulations in (0, 1).

        ``theta`` is (P,) with ``obs`` (..., 42), or (N, P) with ``obs``
        (N, K, 42) to run N parameter vectors on K observations each.
        """
        obs = np.asarray(obs, dtype=float)
        if not np.all(np.isfinite(obs)):
            raise PolicyFault("non-finite observation")
        theta = np.asarray(theta, dtype=float)
        x = obs / OBS_SCALE
        layers = self.unpack(theta)
        batched = theta.ndim == 2
        for k, (W, b) in enumerate(layers):
            x = x @ W + (b[:, None, :] if batched else b)
            if k < len(layers) - 1:
                x = np.tanh(x)
        # logistic via tanh: stable for large |x|
        return 0.5 * (1.0 + np.tanh(0.5 * x))


def policy_forward(params: np.ndarray, obs: np.ndarray, policy: MLPPolicy | None = None) -> np.ndarray:
    return (policy or MLPPolicy()).forward(params, obs)


@dataclass
class BatchResult:
    returns: np.ndarray  # (N, K); -inf for faulted episodes
    success: np.ndarray  # (N, K)
    steps: np.ndarray  # (N, K)
    violation: np.ndarray  # (N, K) smallest tolerance ratio reached
    shortfall: np.ndarray  # (N, K) smallest summed log tolerance excess reached
    trajectories: list[list[Trajectory]] | None = None


def run_batch(
    policy: MLPPolicy,
    thetas: np.ndarray,
    config: EnvConfig,
    seeds: Sequence,
    record: bool = False,
) -> BatchResult:
    """Roll out N parameter vectors on the K episodes given by ``seeds``.

    Every parameter vector sees the same K goals and noise sequences.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    N, K = len(thetas), len(seeds)
    streams = [make_rng(s) for s in seeds]
    env = BatchReacher(config, streams, np.tile(np.arange(K), N))
    obs = env.reset()
    log: dict[str, list] = {}
    if record:
        zeros6 = np.zeros((N * K, 6))
        zeros1 = np.zeros(N * K)
        _append(log, env, {"u_f": zeros6, **{k: zeros1 for k in _REWARDS}})
    for _ in range(config.horizon):
        u = policy.forward(thetas, obs.reshape(N, K, -1)).reshape(N * K, -1)
        out = env.step(u)
        obs = out["obs"]
        if record:
            _append(log, env, out)
        if env.done.all():
            break
    returns = np.where(env.fault, -np.inf, env.returns).reshape(N, K)
    result = BatchResult(
        returns=returns,
        success=env.success.reshape(N, K),
        steps=env.steps.reshape(N, K),
        violation=env.min_violation.reshape(N, K),
        shortfall=env.min_shortfall.reshape(N, K),
    )
    if record:
        result.trajectories = _split(log, env, config, seeds, N, K)
    return result


_REWARDS = ("r_sparse", "r_effort", "r_jerk", "r_work", "r_total")


def _append(log: dict, env: BatchReacher, out: dict) -> None:
    rows = {
        "q": env.q,
        "qd": env.qd,
        "p": env.p,
        "v": env.v,
        "a": env.a,
        "act": env.act,
        "u_f": out["u_f"],
        **{k: out[k] for k in _REWARDS},
    }
    for k, v in rows.items():
        log.setdefault(k, []).append(np.array(v, copy=True))


def _split(log, env: BatchReacher, config: EnvConfig, seeds, N: int, K: int) -> list[list[Trajectory]]:
    arrays = {k: np.stack(v, axis=1) for k, v in log.items()}  # (B, T, ...)
    dtc = config.control_dt
    out: list[list[Trajectory]] = []
    for n in range(N):
        row = []
        for k in range(K):
            b = n * K + k
            T = int(env.steps[b]) + 1
            ch = {name: arrays[name][b, :T] for name in arrays}
            row.append(
                Trajectory(
                    t=np.arange(T) * dtc,
                    speed=np.linalg.norm(ch["v"], axis=1),
                    success=bool(env.success[b]),
                    faulted=bool(env.fault[b]),
                    goal=env.goal[b].copy(),
                    seed=seeds[k] if isinstance(seeds[k], (int, np.integer)) else None,
                    **ch,
                )
            )
        out.append(row)
    return out


def rollout(params: np.ndarray, config: EnvConfig, seed, policy: MLPPolicy | None = None):
    """Single episode; returns (Trajectory, return). Faults return -inf."""
    res = run_batch(policy or MLPPolicy(), params, config, [seed], record=True)
    return res.trajectories[0][0], float(res.returns[0, 0])

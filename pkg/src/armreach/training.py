"""CEM training loop and the trained-agent artifact."""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
import time
from typing import Callable

import numpy as np

from .cem import CEM
from .config import EnvConfig, OptimizerConfig
from .policy import MLPPolicy, run_batch

log = logging.getLogger(__name__)

AGENT_SCHEMA = 1
VALIDATION_GOALS = 16


class AgentFormatError(ValueError):
    pass


@dataclass
class TrainedAgent:
    params: np.ndarray
    env_config: EnvConfig
    opt_config: OptimizerConfig
    curve: list[dict] = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    reaching: bool = True
    wall_time: float = 0.0

    @property
    def policy(self) -> MLPPolicy:
        return MLPPolicy(hidden=self.opt_config.hidden)

    def header(self) -> dict:
        return {
            "schema_version": AGENT_SCHEMA,
            "env_config": self.env_config.to_dict(),
            "opt_config": self.opt_config.to_dict(),
            "curve": self.curve,
            "seeds": self.seeds,
            "reaching": self.reaching,
            "n_params": int(self.params.size),
        }

    def dumps(self) -> str:
        """JSON header on the first line, then one parameter per line."""
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [repr(float(x)) for x in self.params]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def loads(cls, text: str) -> "TrainedAgent":
        first, _, rest = text.partition("\n")
        header = json.loads(first)
        if header.get("schema_version") != AGENT_SCHEMA:
            raise AgentFormatError(f"agent schema version {header.get('schema_version')!r} != {AGENT_SCHEMA}")
        params = np.array([float(x) for x in rest.split()], dtype=float)
        if params.size != header["n_params"]:
            raise AgentFormatError(f"expected {header['n_params']} parameters, found {params.size}")
        return cls(
            params=params,
            env_config=EnvConfig.from_dict(header["env_config"]),
            opt_config=OptimizerConfig.from_dict(header["opt_config"]),
            curve=header["curve"],
            seeds=header["seeds"],
            reaching=header["reaching"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "TrainedAgent":
        return cls.loads(Path(path).read_text())


def _episode_seeds(rng: np.random.Generator, k: int) -> list[int]:
    return [int(s) for s in rng.integers(0, 2**62, size=k)]


def train(
    env_config: EnvConfig,
    opt_config: OptimizerConfig,
    init_mean: np.ndarray | None = None,
    progress: Callable[[dict], None] | None = None,
    validate_every: int = 10,
) -> TrainedAgent:
    """Train a policy with CEM on randomly placed training goals.

    Each iteration scores every candidate by its mean return over the same
    K seeded episodes. Candidates with equal return are ranked by how close
    they came to satisfying the goal condition. Every ``validate_every``
    iterations the distribution mean is scored on a fixed set of training
    goals and the best-scoring mean becomes the returned agent.
    """
    started = time.perf_counter()
    env_config = env_config.with_(mode="train")
    policy = MLPPolicy(hidden=opt_config.hidden)
    root = np.random.SeedSequence(opt_config.seed)
    opt_ss, ep_ss, val_ss, init_ss = root.spawn(4)
    if init_mean is None:
        mean0 = policy.initial_params(np.random.default_rng(init_ss))
    else:
        mean0 = np.asarray(init_mean, dtype=float)
    if mean0.shape != (policy.n_params,):
        raise ValueError("init_mean does not match the policy size")
    cem = CEM(
        mean0,
        opt_config.sigma_init,
        opt_config.population,
        opt_config.elite_frac,
        opt_config.sigma_floor,
        np.random.default_rng(opt_ss),
    )
    ep_rng = np.random.default_rng(ep_ss)
    val_seeds = _episode_seeds(np.random.default_rng(val_ss), VALIDATION_GOALS)
    K = opt_config.episodes_for(env_config)

    curve: list[dict] = []
    best_params, best_val = mean0.copy(), -np.inf
    running_best = -np.inf
    ever_reached = False
    for it in range(opt_config.iterations):
        seeds = _episode_seeds(ep_rng, K)
        samples = cem.ask()
        res = run_batch(policy, samples, env_config, seeds)
        scores = res.returns.mean(axis=1)
        closeness = -res.shortfall.mean(axis=1)
        elites = cem.tell(scores, tiebreak=closeness)
        ever_reached |= bool(res.success.any())
        elite_score = float(scores[elites].mean())
        running_best = max(running_best, elite_score)
        row = {
            "iteration": it,
            "mean_return": float(np.mean(scores[np.isfinite(scores)])) if np.isfinite(scores).any() else None,
            "elite_return": elite_score,
            "best_elite_return": running_best,
            "success_rate": float(res.success.mean()),
            "std": float(cem.dist.std.mean()),
        }
        last = it == opt_config.iterations - 1
        if (it + 1) % validate_every == 0 or last:
            val = run_batch(policy, cem.dist.mean, env_config, val_seeds)
            val_score = float(val.returns.mean())
            row["validation_return"] = val_score
            row["validation_success"] = float(val.success.mean())
            ever_reached |= bool(val.success.any())
            if val_score > best_val:
                best_val, best_params = val_score, cem.dist.mean.copy()
        curve.append(row)
        if progress is not None:
            progress(row)
    return TrainedAgent(
        params=best_params,
        env_config=env_config,
        opt_config=opt_config,
        curve=curve,
        seeds={"optimizer": opt_config.seed, "validation": val_seeds},
        reaching=ever_reached,
        wall_time=time.perf_counter() - started,
    )

"""Roll a trained agent out at the evaluation goal and score the batch."""

from __future__ import annotations

import numpy as np

from .env import evaluation_goal, initial_hand_position
from .metrics import MetricsReport, NormalizedTrajectory, score_rollouts
from .policy import run_batch
from .training import TrainedAgent
from .trajectory import Trajectory

# rollouts per lockstep batch; fixed so results do not depend on n_rollouts
CHUNK = 250


def evaluation_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64) >> np.uint64(2)]


def rollouts(agent: TrainedAgent, n_rollouts: int, seed: int = 0) -> list[Trajectory]:
    """``n_rollouts`` recorded episodes at the fixed evaluation goal."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    cfg = agent.env_config.with_(mode="eval")
    seeds = evaluation_seeds(seed, n_rollouts)
    out: list[Trajectory] = []
    for i in range(0, n_rollouts, CHUNK):
        chunk = seeds[i : i + CHUNK]
        res = run_batch(agent.policy, agent.params, cfg, chunk, record=True)
        out.extend(res.trajectories[0])
    return out


def evaluate_agent(
    agent: TrainedAgent,
    n_rollouts: int = 1000,
    seed: int = 0,
    fence: float = 0.0,
    delta: str = "slope",
) -> tuple[MetricsReport, NormalizedTrajectory | None]:
    """Metrics report over ``n_rollouts`` evaluation episodes and the mean
    normalized trajectory behind it."""
    cfg = agent.env_config
    trajs = rollouts(agent, n_rollouts, seed)
    report, mean = score_rollouts(trajs, initial_hand_position(cfg), evaluation_goal(cfg), fence, delta)
    report.meta.update(
        {
            "variant": cfg.variant,
            "requirement": cfg.requirement,
            "p_tol": cfg.goal.p_tol,
            "eval_seed": seed,
            "success_rate": report.n_success / n_rollouts,
        }
    )
    return report, mean

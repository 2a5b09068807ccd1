"""Recorded episodes and their CSV + JSON sidecar file format."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
from pathlib import Path

import numpy as np

TRAJECTORY_SCHEMA = 1

COLUMNS = (
    ["t", "q1", "q2", "qd1", "qd2", "hand_x", "hand_y", "hand_vx", "hand_vy", "hand_ax", "hand_ay", "speed"]
    + [f"u{i}" for i in range(1, 7)]
    + [f"a{i}" for i in range(1, 7)]
    + ["r_sparse", "r_effort", "r_jerk", "r_work", "r_total"]
)

# column groups: name -> (first column, width)
_CHANNELS = {
    "t": ("t", 1),
    "q": ("q1", 2),
    "qd": ("qd1", 2),
    "p": ("hand_x", 2),
    "v": ("hand_vx", 2),
    "a": ("hand_ax", 2),
    "speed": ("speed", 1),
    "u_f": ("u1", 6),
    "act": ("a1", 6),
    "r_sparse": ("r_sparse", 1),
    "r_effort": ("r_effort", 1),
    "r_jerk": ("r_jerk", 1),
    "r_work": ("r_work", 1),
    "r_total": ("r_total", 1),
}
CHANNELS = tuple(_CHANNELS)


class TrajectoryFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    """One episode sampled every control step, including the initial state.

    Row ``k`` holds the state after ``k`` control steps together with the
    stimulation applied and the rewards earned during step ``k``; row 0 is
    the initial state with zero stimulation and reward.
    """

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    speed: np.ndarray
    u_f: np.ndarray
    act: np.ndarray
    r_sparse: np.ndarray
    r_effort: np.ndarray
    r_jerk: np.ndarray
    r_work: np.ndarray
    r_total: np.ndarray
    success: bool = False
    faulted: bool = False
    goal: np.ndarray | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.t)
        for name in CHANNELS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"channel {name} has length {len(getattr(self, name))}, expected {n}")

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def mt(self) -> float:
        """Movement time: control steps until the episode ended, in seconds."""
        return float(self.t[-1])

    @property
    def episode_return(self) -> float:
        if self.faulted:
            return -np.inf
        return float(np.sum(self.r_total))

    def table(self) -> np.ndarray:
        cols = []
        for name in CHANNELS:
            x = np.asarray(getattr(self, name), dtype=float)
            cols.append(x.reshape(len(self.t), -1))
        return np.concatenate(cols, axis=1)

    @classmethod
    def from_table(cls, table: np.ndarray, **meta) -> "Trajectory":
        out = {}
        for name in CHANNELS:
            first, width = _CHANNELS[name]
            j = COLUMNS.index(first)
            block = table[:, j : j + width]
            out[name] = block[:, 0].copy() if width == 1 else block.copy()
        return cls(**out, **meta)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory(traj: Trajectory, path: str | Path, config: dict | None = None) -> tuple[Path, Path]:
    """Write ``path`` (CSV) and ``path`` with ``.json`` suffix (sidecar)."""
    path = Path(path)
    table = traj.table()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for row in table:
            w.writerow([_fmt(x) for x in row])
    sidecar = {
        "schema_version": TRAJECTORY_SCHEMA,
        "seed": traj.seed,
        "success": bool(traj.success),
        "faulted": bool(traj.faulted),
        "mt": traj.mt,
        "n_steps": traj.n_steps,
        "goal": None if traj.goal is None else [float(g) for g in traj.goal],
        "env_config": config,
        "meta": traj.meta,
    }
    side = path.with_suffix(".json")
    side.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path, side


def read_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    version = side.get("schema_version")
    if version != TRAJECTORY_SCHEMA:
        raise TrajectoryFormatError(f"trajectory schema version {version!r} != {TRAJECTORY_SCHEMA}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TrajectoryFormatError(f"{path}: empty file")
    header = rows[0]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise TrajectoryFormatError(f"{path}: missing column {missing[0]!r}")
    order = [header.index(c) for c in COLUMNS]
    table = np.array([[float(r[j]) for j in order] for r in rows[1:]], dtype=float).reshape(-1, len(COLUMNS))
    goal = side.get("goal")
    return Trajectory.from_table(
        table,
        success=side["success"],
        faulted=side["faulted"],
        goal=None if goal is None else np.array(goal),
        seed=side.get("seed"),
        meta=side.get("meta", {}),
    )

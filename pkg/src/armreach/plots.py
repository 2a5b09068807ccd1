"""SVG figures for a run, each with a CSV of the plotted data beside it."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import RunConfig  # noqa: E402
from .dynamics import MUSCLE_NAMES, PAIRS  # noqa: E402
from .env import evaluation_goal, index_of_difficulty, initial_hand_position  # noqa: E402

# keep SVG output free of run-dependent ids and timestamps
plt.rcParams["svg.hashsalt"] = "armreach"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _columns(run: RunConfig):
    for v in run.grid.variants:
        for r in run.grid.requirements:
            yield v, r, [(v, r, p) for p in run.grid.p_tols]


def _label(run: RunConfig, cell) -> str:
    return f"ID {index_of_difficulty(run.env.goal.distance, cell[2]):.0f}"


def trajectories(run, means, v, r, cells, out: Path) -> list[Path]:
    start, goal = initial_hand_position(run.env), evaluation_goal(run.env)
    fig, ax = plt.subplots(figsize=(4, 4))
    rows = []
    for c in cells:
        if c in means:
            m = means[c]
            ax.plot(m["hand_x"], m["hand_y"], label=_label(run, c))
            rows += [[c[2], x, y] for x, y in zip(m["hand_x"], m["hand_y"])]
    ax.plot(*zip(start, goal), "k:", lw=0.8)
    ax.plot(*start, "ko", ms=4)
    ax.plot(*goal, "k*", ms=8)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{v} / {r}: mean hand path")
    ax.legend(fontsize=7)
    stem = out / f"trajectories_{v}_{r}"
    return [_save(fig, stem.with_suffix(".svg")), _write_csv(stem.with_suffix(".csv"), ["p_tol", "hand_x", "hand_y"], rows)]


def speeds(run, reports, means, v, r, cells, out: Path) -> list[Path]:
    fig, ax = plt.subplots(figsize=(5, 3))
    rows = []
    for c in cells:
        if c not in means:
            continue
        m = means[c]
        (line,) = ax.plot(m["s"], m["speed"], label=_label(run, c))
        g = reports[c]["meta"].get("gaussian")
        fitted = np.full_like(m["s"], np.nan)
        if g is not None:
            fitted = m["speed"].max() * np.exp(-((m["s"] - g["mu"]) ** 2) / (2 * g["sigma"] ** 2))
            ax.plot(m["s"], fitted, "--", color=line.get_color(), lw=0.9)
        rows += [[c[2], s, sp, f] for s, sp, f in zip(m["s"], m["speed"], fitted)]
    ax.set_xlabel("normalized time")
    ax.set_ylabel("speed [m/s]")
    ax.set_title(f"{v} / {r}: mean speed (dashed: Gaussian fit)")
    ax.legend(fontsize=7)
    stem = out / f"speed_{v}_{r}"
    return [_save(fig, stem.with_suffix(".svg")), _write_csv(stem.with_suffix(".csv"), ["p_tol", "s", "speed", "gaussian"], rows)]


def activations(run, means, v, r, cells, out: Path) -> list[Path]:
    fig, axes = plt.subplots(len(PAIRS), 1, figsize=(5, 6), sharex=True)
    rows = []
    for ax, (pair, (i, j)) in zip(axes, PAIRS.items()):
        for c in cells:
            if c not in means:
                continue
            m = means[c]
            ag, ant = m[f"a{i + 1}"], m[f"a{j + 1}"]
            (line,) = ax.plot(m["s"], ag, label=_label(run, c))
            ax.plot(m["s"], ant, "--", color=line.get_color())
            rows += [[c[2], pair, s, x, y] for s, x, y in zip(m["s"], ag, ant)]
        ax.set_ylabel(f"{pair}\n{MUSCLE_NAMES[i]} / {MUSCLE_NAMES[j]}", fontsize=7)
    axes[0].set_title(f"{v} / {r}: activations (solid agonist, dashed antagonist)")
    axes[0].legend(fontsize=7)
    axes[-1].set_xlabel("normalized time")
    stem = out / f"activations_{v}_{r}"
    return [
        _save(fig, stem.with_suffix(".svg")),
        _write_csv(stem.with_suffix(".csv"), ["p_tol", "pair", "s", "agonist", "antagonist"], rows),
    ]


def fitts(fitts_rows: list[dict], out: Path) -> list[Path]:
    fig, ax = plt.subplots(figsize=(5, 4))
    rows = []
    for f in fitts_rows:
        if not f["ids"]:
            continue
        label = f"{f['variant']} / {f['requirement']}"
        if f["r"] is not None:
            label += f" (R={f['r']:.2f})"
        pts = ax.plot(f["ids"], f["mts"], "o", label=label)
        if f["slope"] is not None:
            x = np.array([min(f["ids"]), max(f["ids"])])
            ax.plot(x, f["intercept"] + f["slope"] * x, "-", color=pts[0].get_color(), lw=0.9)
        rows += [[f["variant"], f["requirement"], i, mt] for i, mt in zip(f["ids"], f["mts"])]
    ax.set_xlabel("index of difficulty [bits]")
    ax.set_ylabel("mean movement time [s]")
    ax.set_title("movement time against index of difficulty")
    if rows:
        ax.legend(fontsize=6)
    stem = out / "fitts"
    return [_save(fig, stem.with_suffix(".svg")), _write_csv(stem.with_suffix(".csv"), ["variant", "requirement", "ID", "mean_mt"], rows)]


def write_all(run: RunConfig, reports: dict, means: dict, fitts_rows: list[dict], out: Path) -> list[Path]:
    written = []
    for v, r, cells in _columns(run):
        if not any(c in means for c in cells):
            continue
        written += trajectories(run, means, v, r, cells, out)
        written += speeds(run, reports, means, v, r, cells, out)
        written += activations(run, means, v, r, cells, out)
    written += fitts(fitts_rows, out)
    return written

"""Train, evaluate and report over a variant x requirement x tolerance grid.

A run directory holds ``config.txt``, ``agents/``, ``metrics/``,
``report/`` and ``manifest.jsonl``. The manifest is append-only: one JSON
object per event, each naming the files it produced, so a run can be resumed
and audited. Every file under the run directory other than the manifest
itself is listed in some event.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
import dataclasses
import json
import logging
import math
from pathlib import Path
import time
from typing import Callable

import numpy as np

from . import __version__
from .config import REQUIREMENTS, VARIANTS, ConfigError, EnvConfig, RunConfig
from .env import index_of_difficulty
from .evaluation import evaluate_agent
from .metrics import METRICS_SCHEMA, fitts_fit
from .training import AGENT_SCHEMA, TrainedAgent, train

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
CONFIG_FILE = "config.txt"
SCALE_UP_FACTOR = 10
DONE = ("trained", "non-reaching")

Cell = tuple[str, str, float]


class RunError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------


def cell_id(cell: Cell) -> str:
    variant, requirement, p_tol = cell
    return f"{variant}__{requirement}__ptol{p_tol:g}"


def cell_seed(global_seed: int, cell: Cell) -> int:
    """Seed that depends only on the global seed and the cell coordinates."""
    variant, requirement, p_tol = cell
    key = (VARIANTS.index(variant), REQUIREMENTS.index(requirement), int(round(p_tol * 1e9)))
    ss = np.random.SeedSequence(global_seed, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(2))


def cell_env(run: RunConfig, cell: Cell) -> EnvConfig:
    variant, requirement, p_tol = cell
    goal = dataclasses.replace(run.env.goal, p_tol=p_tol)
    return run.env.with_(variant=variant, requirement=requirement, goal=goal, mode="train")


def parent_cell(run: RunConfig, cell: Cell) -> Cell | None:
    """Cell whose trained agent initializes ``cell`` (next looser tolerance)."""
    if not run.grid.warm_start:
        return None
    variant, requirement, p_tol = cell
    looser = [p for p in run.grid.p_tols if p > p_tol]
    if not looser:
        return None
    return (variant, requirement, min(looser))


def cell_index(run: RunConfig, cell: Cell) -> float:
    return index_of_difficulty(run.env.goal.distance, cell[2])


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


class Manifest:
    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / MANIFEST
        self.events: list[dict] = []
        if self.path.exists():
            with open(self.path) as fh:
                self.events = [json.loads(line) for line in fh if line.strip()]

    def append(self, event: dict) -> None:
        self.events.append(event)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def cell_status(self) -> dict[str, dict]:
        """Latest training event per cell id."""
        out = {}
        for e in self.events:
            if e["event"] == "cell":
                out[e["cell"]] = e
        return out

    def files(self) -> set[str]:
        return {f for e in self.events for f in e.get("files", [])}


def _rel(run_dir: Path, path: Path) -> str:
    return path.relative_to(run_dir).as_posix()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def scaled(run: RunConfig, paper_scale: bool) -> RunConfig:
    if not paper_scale:
        return run
    opt = dataclasses.replace(run.opt, iterations=run.opt.iterations * SCALE_UP_FACTOR)
    return dataclasses.replace(run, opt=opt)


def _train_cell(run_dir: str, run: RunConfig, cell: Cell, parent_file: str | None) -> dict:
    """Worker entry point: train one cell and write its agent file."""
    run_dir = Path(run_dir)
    started = time.perf_counter()
    seed = cell_seed(run.grid.seed, cell)
    event = {
        "event": "cell",
        "cell": cell_id(cell),
        "variant": cell[0],
        "requirement": cell[1],
        "p_tol": cell[2],
        "seed": seed,
        "parent": parent_file,
        "files": [],
    }
    try:
        init = TrainedAgent.load(run_dir / parent_file).params if parent_file else None
        opt = dataclasses.replace(run.opt, seed=seed)
        agent = train(cell_env(run, cell), opt, init_mean=init)
        path = run_dir / "agents" / f"{cell_id(cell)}.agent"
        agent.save(path)
        event.update(status="trained" if agent.reaching else "non-reaching", files=[_rel(run_dir, path)])
    except Exception as exc:  # recorded; the grid carries on
        log.exception("cell %s failed", cell_id(cell))
        event.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    event["wall_time"] = time.perf_counter() - started
    return event


def train_grid(
    run: RunConfig,
    run_dir: str | Path,
    workers: int = 1,
    paper_scale: bool = False,
    progress: Callable[[dict], None] | None = None,
) -> Manifest:
    """Train every pending cell of the grid; resumes from the manifest.

    Cells run in waves: a cell is ready once its warm-start parent has
    finished. Within a wave, cells are trained concurrently and their
    manifest events are appended in grid order, so the manifest does not
    depend on the worker count apart from wall-clock fields.
    """
    run_dir = Path(run_dir)
    run = scaled(run, paper_scale)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "agents").mkdir(exist_ok=True)
    manifest = Manifest(run_dir)
    config_path = run_dir / CONFIG_FILE
    text = run.dumps()
    if manifest.events:
        if config_path.read_text() != text:
            raise ConfigError(f"{run_dir} was created with a different configuration")
    else:
        config_path.write_text(text)
        manifest.append(
            {
                "event": "init",
                "code_version": __version__,
                "agent_schema": AGENT_SCHEMA,
                "metrics_schema": METRICS_SCHEMA,
                "paper_scale": paper_scale,
                "files": [CONFIG_FILE],
            }
        )

    cells = run.grid.cells()
    status = {k: v["status"] for k, v in manifest.cell_status().items()}
    pending = [c for c in cells if status.get(cell_id(c)) not in DONE]
    skipped = len(cells) - len(pending)
    if skipped:
        log.info("skipping %d finished cells", skipped)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while pending:
            wave = [c for c in pending if _parent_settled(run, c, pending)]
            jobs = [(str(run_dir), run, c, _parent_file(run, c, manifest)) for c in wave]
            # lazy map: sequential runs record each cell as soon as it finishes
            events = map(_train_cell, *zip(*jobs)) if pool is None else pool.map(_train_cell, *zip(*jobs))
            for e in events:
                manifest.append(e)
                if progress is not None:
                    progress(e)
            pending = [c for c in pending if c not in wave]
    finally:
        if pool is not None:
            pool.shutdown()
    return manifest


def _parent_settled(run: RunConfig, cell: Cell, pending: list[Cell]) -> bool:
    parent = parent_cell(run, cell)
    return parent is None or parent not in pending


def _parent_file(run: RunConfig, cell: Cell, manifest: Manifest) -> str | None:
    parent = parent_cell(run, cell)
    if parent is None:
        return None
    event = manifest.cell_status().get(cell_id(parent))
    if event is None or event["status"] not in DONE:
        return None
    return event["files"][0]


def grid_failed(run: RunConfig, manifest: Manifest) -> list[str]:
    status = manifest.cell_status()
    return [cell_id(c) for c in run.grid.cells() if status.get(cell_id(c), {}).get("status") not in DONE]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

MEAN_COLUMNS = ["s", "hand_x", "hand_y", "speed"] + [f"a{i}" for i in range(1, 7)] + [f"u{i}" for i in range(1, 7)]


def _write_mean(path: Path, mean) -> None:
    table = np.column_stack([mean.s, mean["p"], mean["speed"], mean["act"], mean["u_f"]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEAN_COLUMNS)
        for row in table:
            w.writerow([repr(float(x)) for x in row])


def read_mean(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    table = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: table[:, j] for j, name in enumerate(rows[0])}


def load_run(run_dir: str | Path) -> tuple[RunConfig, Manifest]:
    run_dir = Path(run_dir)
    manifest = Manifest(run_dir)
    if not manifest.events or not (run_dir / CONFIG_FILE).exists():
        raise RunError(f"{run_dir} is not a run directory (no manifest)")
    return RunConfig.load(run_dir / CONFIG_FILE), manifest


def evaluate_run(
    run_dir: str | Path,
    n_rollouts: int = 1000,
    progress: Callable[[str], None] | None = None,
) -> tuple[Manifest, list[str]]:
    """Score every trained agent; returns the manifest and skipped cell ids."""
    run_dir = Path(run_dir)
    run, manifest = load_run(run_dir)
    out = run_dir / "metrics"
    out.mkdir(exist_ok=True)
    status = manifest.cell_status()
    written, skipped = [], []
    reports: dict[Cell, dict] = {}
    for cell in run.grid.cells():
        cid = cell_id(cell)
        event = status.get(cid)
        if event is None or event["status"] not in DONE or not (run_dir / event["files"][0]).exists():
            log.warning("no agent for %s; skipped", cid)
            skipped.append(cid)
            continue
        agent = TrainedAgent.load(run_dir / event["files"][0])
        report, mean = evaluate_agent(agent, n_rollouts, seed=cell_seed(run.grid.seed, cell))
        d = report.to_dict()
        d["cell"] = cid
        d["id"] = cell_index(run, cell)
        path = out / f"{cid}.json"
        path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
        written.append(path)
        if mean is not None:
            mpath = out / f"{cid}_mean.csv"
            _write_mean(mpath, mean)
            written.append(mpath)
        reports[cell] = d
        if progress is not None:
            progress(cid)
    fitts = fitts_table(run, reports)
    fpath = out / "fitts.json"
    fpath.write_text(json.dumps(fitts, indent=2, sort_keys=True) + "\n")
    written.append(fpath)
    manifest.append(
        {
            "event": "evaluate",
            "n_rollouts": n_rollouts,
            "skipped": skipped,
            "files": [_rel(run_dir, p) for p in written],
        }
    )
    return manifest, skipped


def fitts_table(run: RunConfig, reports: dict[Cell, dict]) -> list[dict]:
    """One regression of mean MT on ID per (variant, requirement) column."""
    rows = []
    for v in run.grid.variants:
        for r in run.grid.requirements:
            pts = [
                (cell_index(run, c), reports[c]["mean_mt"])
                for c in run.grid.cells()
                if c[:2] == (v, r) and c in reports and reports[c]["mean_mt"] is not None
            ]
            pts.sort()
            row = {"variant": v, "requirement": r, "ids": [p[0] for p in pts], "mts": [p[1] for p in pts]}
            try:
                fit = fitts_fit(row["ids"], row["mts"])
                row.update(intercept=fit.intercept, slope=fit.slope, r=fit.r)
            except ValueError:
                row.update(intercept=None, slope=None, r=None)
            mts = row["mts"]
            row["mt_increasing"] = len(mts) >= 2 and all(b > a for a, b in zip(mts, mts[1:]))
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

TABLE_METRICS = ("success_rate", "mean_mt", "p_line", "v_bell", "u_triphasic")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA"
    return repr(float(x)) if isinstance(x, float) else str(x)


def load_reports(run: RunConfig, run_dir: Path) -> dict[Cell, dict]:
    out = {}
    for cell in run.grid.cells():
        path = run_dir / "metrics" / f"{cell_id(cell)}.json"
        if path.exists():
            out[cell] = json.loads(path.read_text())
    return out


def table_rows(run: RunConfig, reports: dict[Cell, dict], fitts: list[dict]) -> list[list[str]]:
    """Long-format table: metric, requirement, model, ID, value ("NA" = gap)."""
    rows = []
    for metric in TABLE_METRICS:
        for r in run.grid.requirements:
            for v in run.grid.variants:
                for p in run.grid.p_tols:
                    d = reports.get((v, r, p))
                    if d is None:
                        value = None
                    elif metric == "success_rate":
                        value = d["meta"].get("success_rate")
                    elif metric == "u_triphasic":
                        value = d["u_triphasic"]["any"]
                    else:
                        value = d[metric]
                    rows.append([metric, r, v, f"{cell_index(run, (v, r, p)):.2f}", _fmt(value)])
    for r in run.grid.requirements:
        for v in run.grid.variants:
            f = next((x for x in fitts if x["variant"] == v and x["requirement"] == r), None)
            rows.append(["R_F", r, v, "all", _fmt(None if f is None else f["r"])])
    return rows


def report_run(run_dir: str | Path) -> tuple[Manifest, list[Path]]:
    """Write the results table and the four plot families."""
    from . import plots  # matplotlib is only needed here

    run_dir = Path(run_dir)
    run, manifest = load_run(run_dir)
    reports = load_reports(run, run_dir)
    fitts_path = run_dir / "metrics" / "fitts.json"
    if not reports or not fitts_path.exists():
        raise RunError(f"{run_dir}: no metrics to report; run evaluate first")
    fitts = json.loads(fitts_path.read_text())
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    written = []
    table = out / "table.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "requirement", "model", "ID", "value"])
        w.writerows(table_rows(run, reports, fitts))
    written.append(table)
    means = {}
    for cell in reports:
        path = run_dir / "metrics" / f"{cell_id(cell)}_mean.csv"
        if path.exists():
            means[cell] = read_mean(path)
    written += plots.write_all(run, reports, means, fitts, out)
    manifest.append({"event": "report", "files": [_rel(run_dir, p) for p in written]})
    return manifest, written


def unlisted_files(run_dir: str | Path) -> tuple[set[str], set[str]]:
    """(files on disk not in the manifest, manifest entries missing on disk)."""
    run_dir = Path(run_dir)
    manifest = Manifest(run_dir)
    on_disk = {_rel(run_dir, p) for p in run_dir.rglob("*") if p.is_file() and p.name != MANIFEST}
    listed = manifest.files()
    return on_disk - listed, listed - on_disk

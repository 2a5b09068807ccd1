"""Stereotypy metrics for batches of reaching rollouts.

Four characteristics are scored: straightness of the mean hand path
(``p_line``), bell shape of the mean speed profile (``v_bell``), a triphasic
agonist/antagonist activation pattern per muscle pair (``u_triphasic``), and
the linearity of movement time against index of difficulty (``R_F``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Sequence

import numpy as np

from .dynamics import PAIRS
from .trajectory import CHANNELS, Trajectory

log = logging.getLogger(__name__)

METRICS_SCHEMA = 1
N_NORMALIZED = 101
TRIPHASIC_REL = 0.25
TRIPHASIC_ABS = 1.5e-3


# ---------------------------------------------------------------------------
# batch preprocessing
# ---------------------------------------------------------------------------


def path_integral(traj: Trajectory) -> float:
    """Distance travelled by the hand: trapezoidal integral of speed over time."""
    return float(np.trapezoid(traj.speed, traj.t))


def filter_outliers(batch: Sequence[Trajectory], fence: float = 0.0) -> list[Trajectory]:
    """Keep rollouts whose speed integral lies within the interquartile fences.

    The fences are ``[Q25 - fence * IQR, Q75 + fence * IQR]`` with linearly
    interpolated percentiles; ``fence = 0`` keeps the interquartile range
    itself.
    """
    batch = list(batch)
    if len(batch) < 4:
        log.warning("outlier filter needs at least 4 rollouts, got %d; keeping all", len(batch))
        return batch
    integrals = np.array([path_integral(t) for t in batch])
    return [batch[i] for i in np.flatnonzero(iqr_mask(integrals, fence))]


def iqr_mask(values, fence: float = 0.0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    q25, q75 = np.percentile(values, [25, 75])
    iqr = q75 - q25
    return (values >= q25 - fence * iqr) & (values <= q75 + fence * iqr)


@dataclass
class NormalizedTrajectory:
    """All trajectory channels resampled onto ``s`` in [0, 1]."""

    s: np.ndarray
    channels: dict[str, np.ndarray]
    mt: float = float("nan")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]


def _resample(x: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        out = np.interp(dst, src, x)
    else:
        out = np.stack([np.interp(dst, src, x[:, j]) for j in range(x.shape[1])], axis=1)
    out[0], out[-1] = x[0], x[-1]
    return out


def time_normalize(traj: Trajectory, n: int = N_NORMALIZED) -> NormalizedTrajectory:
    """Linearly resample every channel onto ``n`` points over [0, MT]."""
    if len(traj.t) < 2:
        raise ValueError("need at least two samples to normalize")
    src = (traj.t - traj.t[0]) / (traj.t[-1] - traj.t[0])
    dst = np.linspace(0.0, 1.0, n)
    channels = {name: _resample(getattr(traj, name), src, dst) for name in CHANNELS if name != "t"}
    return NormalizedTrajectory(dst, channels, traj.mt)


def mean_trajectory(batch: Sequence[NormalizedTrajectory]) -> NormalizedTrajectory:
    batch = list(batch)
    if not batch:
        raise ValueError("cannot average an empty batch")
    names = batch[0].channels
    channels = {k: np.mean([b.channels[k] for b in batch], axis=0) for k in names}
    return NormalizedTrajectory(batch[0].s.copy(), channels, float(np.mean([b.mt for b in batch])))


# ---------------------------------------------------------------------------
# (i) straight line
# ---------------------------------------------------------------------------


def metric_line_r2(path, start, goal) -> float | None:
    """R-squared of the hand path against its projection on the start-goal segment.

    Returns None when start and goal coincide.
    """
    path = np.asarray(path, dtype=float)
    if len(path) < 3:
        raise ValueError("need at least three points")
    start, goal = np.asarray(start, dtype=float), np.asarray(goal, dtype=float)
    d = goal - start
    L2 = float(d @ d)
    if L2 == 0.0:
        return None
    s = np.clip((path - start) @ d / L2, 0.0, 1.0)
    proj = start + s[:, None] * d
    ss_res = np.sum((path - proj) ** 2)
    ss_tot = np.sum((path - path.mean(axis=0)) ** 2)
    if ss_tot == 0.0:
        return None
    return float(1.0 - ss_res / ss_tot)


# ---------------------------------------------------------------------------
# (ii) bell-shaped speed
# ---------------------------------------------------------------------------


@dataclass
class GaussianFit:
    mu: float
    sigma: float
    r2: float
    converged: bool
    iterations: int


def _r2(y, yhat) -> float:
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0.0:
        return 1.0 if np.allclose(y, yhat) else -np.inf
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


def fit_gaussian_fixed_amplitude(t, speed, v_max: float | None = None, max_iter: int = 200, tol: float = 1e-9) -> GaussianFit:
    """Fit ``v_max * exp(-(t - mu)^2 / (2 sigma^2))`` by damped Gauss-Newton.

    The amplitude is pinned to the peak; only ``mu`` and ``sigma`` move.
    Starts from the time of the peak and a quarter of the window, and stops
    once a step is shorter than ``tol``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(speed, dtype=float)
    if v_max is None:
        v_max = float(y.max())
    if v_max <= 0:
        raise ValueError("peak speed must be positive")

    def model(theta):
        mu, sigma = theta
        z = (t - mu) / sigma
        g = v_max * np.exp(-0.5 * z * z)
        return g, z

    def cost(theta):
        g, _ = model(theta)
        return float(np.sum((y - g) ** 2))

    theta = np.array([t[int(np.argmax(y))], (t[-1] - t[0]) / 4 or 1.0])
    damping = 1e-3
    current = cost(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, z = model(theta)
        r = y - g
        # d g / d mu = g z / sigma ; d g / d sigma = g z^2 / sigma
        J = np.stack([g * z / theta[1], g * z * z / theta[1]], axis=1)
        A = J.T @ J
        rhs = J.T @ r
        while True:
            try:
                delta = np.linalg.solve(A + damping * np.diag(np.diag(A) + 1e-12), rhs)
            except np.linalg.LinAlgError:
                delta = np.zeros(2)
            trial = theta + delta
            trial[1] = abs(trial[1]) or theta[1]
            new = cost(trial)
            if new <= current or damping > 1e12:
                break
            damping *= 10.0
        if new <= current:
            step = float(np.max(np.abs(trial - theta)))
            theta, current = trial, new
            damping = max(damping / 10.0, 1e-12)
            if step < tol:
                converged = True
                break
        else:
            # no descent direction left
            converged = True
            break
    g, _ = model(theta)
    return GaussianFit(float(theta[0]), float(abs(theta[1])), _r2(y, g), converged, it)


@dataclass
class BellResult:
    r2: float | None
    onset: int | None = None
    offset: int | None = None
    fit: GaussianFit | None = None


def bell_window(speed, threshold: float = 0.1) -> tuple[int, int] | None:
    """Onset and offset indices of the above-threshold movement, or None.

    None when the speed never exceeds the threshold or is still above it at
    the end of the record (the hand never slowed down).
    """
    speed = np.asarray(speed, dtype=float)
    v_max = float(speed.max()) if speed.size else 0.0
    if v_max <= 0:
        return None
    above = np.flatnonzero(speed > threshold * v_max)
    onset, offset = int(above[0]), int(above[-1])
    if offset == len(speed) - 1:
        return None
    return onset, offset


def metric_bell(t, speed, threshold: float = 0.1) -> BellResult:
    window = bell_window(speed, threshold)
    if window is None:
        return BellResult(None)
    a, b = window
    t = np.asarray(t, dtype=float)
    speed = np.asarray(speed, dtype=float)
    fit = fit_gaussian_fixed_amplitude(t[a : b + 1], speed[a : b + 1], float(speed.max()))
    return BellResult(fit.r2, a, b, fit)


# ---------------------------------------------------------------------------
# (iii) triphasic activation
# ---------------------------------------------------------------------------


@dataclass
class MusclePairSignal:
    pair: str
    agonist: np.ndarray
    antagonist: np.ndarray

    def __post_init__(self) -> None:
        self.agonist = np.asarray(self.agonist, dtype=float)
        self.antagonist = np.asarray(self.antagonist, dtype=float)
        if self.agonist.shape != self.antagonist.shape:
            raise ValueError("agonist and antagonist series must have equal length")


def moving_average(x, width: int = 5) -> np.ndarray:
    """Centered moving average with edge samples repeated."""
    x = np.asarray(x, dtype=float)
    half = width // 2
    padded = np.pad(x, half, mode="edge")
    return np.convolve(padded, np.ones(width) / width, mode="valid")


@dataclass
class PhaseScan:
    phases: list[str]  # leading muscle per phase, starting with "ag"
    boundaries: list[int]  # sample index where each new phase starts

    @property
    def triphasic(self) -> int:
        return int(len(self.phases) >= 3)


def scan_phases(pair: MusclePairSignal, smooth: int = 5, delta: str = "slope") -> PhaseScan:
    """Detect phases of an agonist/antagonist pair.

    The movement starts in an agonist phase. A new phase begins at a sample
    where the two smoothed slopes have opposite signs that disagree with the
    current leader (agonist falling while antagonist rises, or the reverse)
    and the difference ``delta`` exceeds both ``0.25 * max(delta)`` and
    ``1.5e-3``. ``delta`` is the slope difference by default; ``"activation"``
    uses the activation difference instead.
    """
    if len(pair.agonist) < 5:
        raise ValueError("need at least five samples")
    ag = moving_average(pair.agonist, smooth)
    ant = moving_average(pair.antagonist, smooth)
    s_ag, s_ant = np.gradient(ag), np.gradient(ant)
    if delta == "slope":
        d = np.abs(s_ag - s_ant)
    elif delta == "activation":
        d = np.abs(ag - ant)
    else:
        raise ValueError(f"unknown delta mode {delta!r}")
    d_max = float(d.max())
    strong = (d > TRIPHASIC_REL * d_max) & (d > TRIPHASIC_ABS)
    leader = np.where((s_ag > 0) & (s_ant < 0), 1, np.where((s_ag < 0) & (s_ant > 0), -1, 0))
    phases, boundaries = ["ag"], [0]
    current = 1
    for i in np.flatnonzero(strong & (leader != 0)):
        if leader[i] != current:
            current = int(leader[i])
            phases.append("ag" if current == 1 else "ant")
            boundaries.append(int(i))
    return PhaseScan(phases, boundaries)


def metric_triphasic(pair: MusclePairSignal, **kwargs) -> int:
    """1 if the pair goes through agonist, antagonist, agonist phases."""
    return scan_phases(pair, **kwargs).triphasic


def muscle_pairs(act: np.ndarray) -> list[MusclePairSignal]:
    act = np.asarray(act, dtype=float)
    return [MusclePairSignal(name, act[:, i], act[:, j]) for name, (i, j) in PAIRS.items()]


# ---------------------------------------------------------------------------
# (iv) Fitts's law
# ---------------------------------------------------------------------------


@dataclass
class FittsFit:
    intercept: float
    slope: float
    r: float | None


def fitts_fit(ids, mts) -> FittsFit:
    """Least-squares line MT = a + b ID and the Pearson correlation."""
    x = np.asarray(ids, dtype=float)
    y = np.asarray(mts, dtype=float)
    if x.shape != y.shape or len(np.unique(x)) < 3:
        raise ValueError("need MTs for at least three distinct IDs")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (y - ym)))
    syy = float(np.sum((y - ym) ** 2))
    slope = sxy / sxx
    r = None if syy == 0.0 else sxy / math.sqrt(sxx * syy)
    return FittsFit(float(ym - slope * xm), slope, r)


# ---------------------------------------------------------------------------
# per-agent report
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    n_rollouts: int
    n_success: int
    n_kept: int
    n_excluded: int
    mean_mt: float | None
    p_line: float | None
    v_bell: float | None
    u_triphasic: dict[str, int] = field(default_factory=dict)
    flagged: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def u_triphasic_any(self) -> int | None:
        if not self.u_triphasic:
            return None
        return int(max(self.u_triphasic.values()))

    def to_dict(self) -> dict:
        return {
            "schema_version": METRICS_SCHEMA,
            "n_rollouts": self.n_rollouts,
            "n_success": self.n_success,
            "n_kept": self.n_kept,
            "n_excluded": self.n_excluded,
            "mean_mt": self.mean_mt,
            "p_line": self.p_line,
            "v_bell": self.v_bell,
            "u_triphasic": {"pairs": dict(self.u_triphasic), "any": self.u_triphasic_any},
            "flagged": self.flagged,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("schema_version") != METRICS_SCHEMA:
            raise ValueError(f"metrics schema version {d.get('schema_version')!r} != {METRICS_SCHEMA}")
        return cls(
            n_rollouts=d["n_rollouts"],
            n_success=d["n_success"],
            n_kept=d["n_kept"],
            n_excluded=d["n_excluded"],
            mean_mt=d["mean_mt"],
            p_line=d["p_line"],
            v_bell=d["v_bell"],
            u_triphasic=dict(d["u_triphasic"]["pairs"]),
            flagged=d["flagged"],
            meta=d.get("meta", {}),
        )


def score_rollouts(
    rollouts: Sequence[Trajectory],
    start,
    goal,
    fence: float = 0.0,
    delta: str = "slope",
) -> tuple[MetricsReport, NormalizedTrajectory | None]:
    """Metrics over the successful rollouts of one agent.

    Returns the report and the mean normalized trajectory it was computed
    from (None when no rollout succeeded).
    """
    rollouts = list(rollouts)
    ok = [r for r in rollouts if r.success and not r.faulted and len(r.t) >= 2]
    if not ok:
        report = MetricsReport(len(rollouts), 0, 0, 0, None, None, None, {}, flagged=True)
        return report, None
    kept = filter_outliers(ok, fence)
    mean = mean_trajectory([time_normalize(r) for r in kept])
    bell = metric_bell(mean.s, mean["speed"])
    report = MetricsReport(
        n_rollouts=len(rollouts),
        n_success=len(ok),
        n_kept=len(kept),
        n_excluded=len(ok) - len(kept),
        mean_mt=float(np.mean([r.mt for r in kept])),
        p_line=metric_line_r2(mean["p"], start, goal),
        v_bell=bell.r2,
        u_triphasic={p.pair: metric_triphasic(p, delta=delta) for p in muscle_pairs(mean["act"])},
    )
    if bell.fit is not None:
        report.meta["gaussian"] = {"mu": bell.fit.mu, "sigma": bell.fit.sigma, "converged": bell.fit.converged}
    return report, mean

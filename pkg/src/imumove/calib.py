"""Monte-Carlo threshold calibration for the window-pair metrics.

A sweep simulates many window pairs per movement magnitude. Magnitudes are
integers in units of ``pi / 200`` rad, and unit 0 is the no-movement
population. From a sweep, :func:`optimal_threshold` lowers a threshold
greedily from the largest no-movement value. It keeps doing so while at
least 90% of no-movement pairs stay at or below it, then reports the
smallest magnitude that is detected in at least 95% of runs.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .axisest import EstimatorOptions, NoConvergence, NotEnoughExcitation, Window
from .kinsim import (
    DEFAULT_RATE,
    GaitTrajectory,
    MountingConfig,
    MovementEvent,
    apply_movement,
    gen_gait,
    gen_movement,
    load_trajectory,
)
from .metrics import METRIC_IDS, WindowPair, compute_all

log = logging.getLogger(__name__)

UNIT = np.pi / 200


def unit_to_rad(unit: float) -> float:
    """Magnitude in radians of ``unit`` grid steps of ``pi / 200``."""
    return float(unit) * np.pi / 200


STEP = 5e-3
THRESHOLD_NORMAL = 0.9
THRESHOLD_MOVING = 0.95
GAIT_STREAM = 0x6A17


@dataclass
class SweepConfig:
    """Everything a sweep needs, so ``(config, seed)`` reproduces it.

    ``interval`` is the offset between the two window starts; the movement
    happens in the gap ``[window, interval]`` samples after the first start.
    ``n_gaits`` distinct gait realizations are cycled over the runs, standing
    in for a pool of recorded subjects. ``trajectory`` replaces them with one
    trajectory CSV.
    """

    phi_units: tuple[int, ...] = tuple(range(201))
    runs: int = 1000
    window: int = 2000
    interval: int = 3000
    duration_s: float = 120.0
    rate: float = DEFAULT_RATE
    n_gaits: int = 10
    noise_std_acc: float = 0.05
    noise_std_gyr: float = 0.005
    strict_hinge: bool = False
    side: str = "thigh"
    seed: int = 0
    trajectory: str | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        self.phi_units = tuple(int(u) for u in self.phi_units)
        if self.window <= 0 or self.interval < self.window:
            raise ValueError(f"need 0 < window <= interval, got {self.window}, {self.interval}")
        if self.runs <= 0 or self.n_gaits <= 0:
            raise ValueError("runs and n_gaits must be positive")
        if 0 not in self.phi_units:
            raise ValueError("the magnitude grid must contain 0 (the no-movement population)")
        if any(u < 0 or u > 200 for u in self.phi_units):
            raise ValueError("magnitudes must lie in [0, 200] units of pi/200")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phi_units"] = list(self.phi_units)
        return d


@lru_cache(maxsize=16)
def _gait(seed: int, index: int, duration_s: float, rate: float, strict: bool, path: str | None) -> GaitTrajectory:
    if path is not None:
        return load_trajectory(path)
    rng = np.random.default_rng([seed, GAIT_STREAM, index])
    return gen_gait(duration_s, rate, rng, strict_hinge=strict)


def sweep_trajectory(cfg: SweepConfig, index: int) -> GaitTrajectory:
    return _gait(cfg.seed, index % cfg.n_gaits, cfg.duration_s, cfg.rate, cfg.strict_hinge, cfg.trajectory)


def simulate_pair(cfg: SweepConfig, phi_mag: float, rng: np.random.Generator, gait_index: int):
    """One Monte-Carlo draw: random mounting, start, movement and window pair.

    ``phi_mag == 0`` gives the no-movement case: neither rotation nor shift.

    Returns the pair, the movement event (relative to the pair start) and
    the mounting.
    """
    traj = sweep_trajectory(cfg, gait_index)
    span = cfg.window + cfg.interval
    if len(traj) < span:
        raise ValueError(f"trajectory of {len(traj)} samples is shorter than window + interval = {span}")
    mount = MountingConfig.random(rng, cfg.noise_std_acc, cfg.noise_std_gyr)
    t0 = int(rng.integers(0, len(traj) - span + 1))
    t_move = int(rng.integers(cfg.window, cfg.interval + 1)) if cfg.interval > cfg.window else cfg.window
    event = gen_movement(phi_mag, rng, t_move)
    if phi_mag == 0.0:
        # the no-movement population has no shift either; the draw above
        # still runs so that later random numbers match other magnitudes
        event = MovementEvent.identity(t_move)
    seg = traj.slice(t0, t0 + span)
    thigh, shank = apply_movement(seg, mount, event, rng)
    pair = WindowPair(
        Window.from_streams(thigh, shank, 0, cfg.window, offset=t0),
        Window.from_streams(thigh, shank, cfg.interval, cfg.window, offset=t0),
    )
    return pair, event, mount


def _run_one(cfg: SweepConfig, mag_index: int, run: int, opts: EstimatorOptions | None):
    rng = np.random.default_rng([cfg.seed, cfg.interval, mag_index, run])
    try:
        pair, _, _ = simulate_pair(cfg, unit_to_rad(cfg.phi_units[mag_index]), rng, run)
        return compute_all(pair, side=cfg.side, opts=opts).as_array(), False
    except (NotEnoughExcitation, NoConvergence) as exc:
        log.debug("run (%d, %d) failed: %s", mag_index, run, exc)
        return np.full(len(METRIC_IDS), np.nan), True


def _run_chunk(args):
    cfg, opts, jobs = args
    return [(m, r, *_run_one(cfg, m, r, opts)) for m, r in jobs]


@dataclass
class SweepResult:
    """Metric samples indexed by ``(magnitude, run, metric)``."""

    phi_units: NDArray[np.int64]
    values: NDArray[np.float64]
    failed: NDArray[np.bool_]
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.phi_units = np.asarray(self.phi_units, dtype=int)
        if 0 not in self.phi_units:
            raise ValueError("sweep lacks the no-movement population")
        if self.values.shape[:2] != self.failed.shape or self.values.shape[0] != len(self.phi_units):
            raise ValueError("inconsistent sweep array shapes")

    @property
    def runs(self) -> int:
        return self.values.shape[1]

    @property
    def failed_fraction(self) -> float:
        return float(self.failed.mean())

    def population(self, metric_id: str, unit: int) -> NDArray[np.float64]:
        """Successful-run values of one metric at one magnitude."""
        (idx,) = np.flatnonzero(self.phi_units == unit)
        col = METRIC_IDS.index(metric_id)
        return self.values[idx, ~self.failed[idx], col]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phi_mag", "run", *METRIC_IDS, "failed"])
            for i, u in enumerate(self.phi_units):
                for r in range(self.runs):
                    row = self.values[i, r]
                    w.writerow([repr(unit_to_rad(u)), r, *(repr(float(v)) for v in row), int(self.failed[i, r])])

    @classmethod
    def from_csv(cls, path) -> "SweepResult":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty sweep file")
        missing = {"phi_mag", "run", "failed", *METRIC_IDS} - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        units = sorted({int(round(float(r["phi_mag"]) / UNIT)) for r in rows})
        runs = max(int(r["run"]) for r in rows) + 1
        values = np.full((len(units), runs, len(METRIC_IDS)), np.nan)
        failed = np.ones((len(units), runs), dtype=bool)
        pos = {u: i for i, u in enumerate(units)}
        for r in rows:
            i = pos[int(round(float(r["phi_mag"]) / UNIT))]
            k = int(r["run"])
            values[i, k] = [float(r[m]) for m in METRIC_IDS]
            failed[i, k] = bool(int(r["failed"]))
        return cls(np.array(units), values, failed)


def run_sweep(cfg: SweepConfig, opts: EstimatorOptions | None = None) -> SweepResult:
    """Simulate ``cfg.runs`` window pairs per magnitude and compute all metrics.

    Every run draws from its own generator seeded by ``(seed, interval,
    magnitude index, run)``. Results are therefore identical for any worker
    count and completion order.
    """
    n_mag = len(cfg.phi_units)
    values = np.empty((n_mag, cfg.runs, len(METRIC_IDS)))
    failed = np.zeros((n_mag, cfg.runs), dtype=bool)
    jobs = [(m, r) for m in range(n_mag) for r in range(cfg.runs)]
    if cfg.workers > 1:
        chunks = [jobs[i :: cfg.workers * 4] for i in range(cfg.workers * 4)]
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = [x for part in pool.map(_run_chunk, [(cfg, opts, c) for c in chunks]) for x in part]
    else:
        results = _run_chunk((cfg, opts, jobs))
    for m, r, vals, bad in results:
        values[m, r] = vals
        failed[m, r] = bad
    if failed.any():
        log.warning("%d of %d sweep runs failed", int(failed.sum()), failed.size)
    return SweepResult(np.array(cfg.phi_units), values, failed, cfg.to_dict())


# ---------------------------------------------------------------------------
# greedy threshold search


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    min_move: int | None
    r_normal: float
    r_moving: dict[int, float]
    steps: int


def _frac_le(sorted_vals: NDArray[np.float64], alpha: float) -> float:
    return np.searchsorted(sorted_vals, alpha, side="right") / len(sorted_vals)


def _frac_ge(sorted_vals: NDArray[np.float64], alpha: float) -> float:
    return (len(sorted_vals) - np.searchsorted(sorted_vals, alpha, side="left")) / len(sorted_vals)


def optimal_threshold(
    sweep: SweepResult,
    metric_id: str,
    threshold_normal: float = THRESHOLD_NORMAL,
    threshold_moving: float = THRESHOLD_MOVING,
    step: float = STEP,
    relative: bool = False,
) -> ThresholdResult:
    """Greedy threshold search and minimum detectable magnitude.

    The candidate ``alpha_k = max0 - k * step`` (``max0`` is the largest
    no-movement value) is lowered while the fraction of no-movement values
    ``<= alpha_k`` stays ``>= threshold_normal``. The last admissible
    candidate is returned. ``min_move`` is the smallest non-zero grid
    magnitude with a fraction ``>= threshold_moving`` of values ``>=``
    the threshold, or ``None``.

    With ``relative`` the step is ``step * max0``, which makes the result
    scale-homogeneous.
    """
    if metric_id not in METRIC_IDS:
        raise ValueError(f"unknown metric {metric_id!r}")
    normal = np.sort(sweep.population(metric_id, 0))
    if len(normal) == 0:
        raise ValueError("empty no-movement population")
    top = float(normal[-1])
    if not np.isfinite(top):
        raise ValueError(f"non-finite no-movement value for {metric_id}")
    delta = step * top if relative else step
    k = 0
    if delta > 0:
        while _frac_le(normal, top - (k + 1) * delta) >= threshold_normal:
            k += 1
    alpha = top - k * delta
    r_moving = {}
    min_move = None
    for unit in sorted(int(u) for u in sweep.phi_units if u > 0):
        moved = np.sort(sweep.population(metric_id, unit))
        if len(moved) == 0:
            continue
        r_moving[unit] = float(_frac_ge(moved, alpha))
        if min_move is None and r_moving[unit] >= threshold_moving:
            min_move = unit
    return ThresholdResult(alpha, min_move, float(_frac_le(normal, alpha)), r_moving, k)


def relative_step_mode(sweep: SweepResult, metric_id: str, **kwargs) -> float:
    """Threshold from the greedy search with a step relative to the no-movement maximum."""
    return optimal_threshold(sweep, metric_id, relative=True, **kwargs).threshold


@dataclass(frozen=True)
class ThresholdEntry:
    metric: str
    interval: int
    threshold: float
    min_move: int | None
    step_mode: str = "absolute"


@dataclass
class ThresholdTable:
    entries: list[ThresholdEntry] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def get(self, metric: str, interval: int) -> ThresholdEntry:
        for e in self.entries:
            if e.metric == metric and e.interval == interval:
                return e
        raise KeyError(f"no threshold for {metric} at interval {interval}")

    def thresholds(self, interval: int) -> dict[str, float]:
        return {e.metric: e.threshold for e in self.entries if e.interval == interval}

    def intervals(self) -> list[int]:
        return sorted({e.interval for e in self.entries})

    def to_json(self) -> str:
        doc = {"config": self.config, "entries": [asdict(e) for e in self.entries]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "ThresholdTable":
        doc = json.loads(text)
        raw = doc["entries"] if isinstance(doc, dict) else doc
        entries = []
        for e in raw:
            mm = e.get("min_move")
            entries.append(
                ThresholdEntry(
                    str(e["metric"]),
                    int(e["interval"]),
                    float(e["threshold"]),
                    None if mm is None else int(mm),
                    str(e.get("step_mode", "absolute")),
                )
            )
        return cls(entries, doc.get("config", {}) if isinstance(doc, dict) else {})

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        return cls.from_json(Path(path).read_text())

    def format(self) -> str:
        """Plain-text table: one row per metric, one column pair per interval."""
        ivs = self.intervals()
        metrics = sorted({e.metric for e in self.entries}, key=METRIC_IDS.index)
        head = "metric " + "".join(f"| thr@{i:<6d} min_move " for i in ivs)
        lines = [head]
        for m in metrics:
            cells = []
            for i in ivs:
                e = self.get(m, i)
                mm = "none" if e.min_move is None else str(e.min_move)
                cells.append(f"| {e.threshold:<10.4g} {mm:>8s} ")
            lines.append(f"{m:<7s}" + "".join(cells))
        return "\n".join(lines)


def build_table(
    sweeps: dict[int, SweepResult],
    relative_metrics: tuple[str, ...] = ("m2",),
    metrics: tuple[str, ...] = METRIC_IDS,
) -> ThresholdTable:
    """Threshold table from one sweep per interval."""
    entries = []
    for interval in sorted(sweeps):
        for m in metrics:
            rel = m in relative_metrics
            res = optimal_threshold(sweeps[interval], m, relative=rel)
            entries.append(ThresholdEntry(m, interval, res.threshold, res.min_move, "relative" if rel else "absolute"))
    return ThresholdTable(entries)

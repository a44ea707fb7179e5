"""Online sensor-movement detection and buffer-restart correction.

Paired thigh/shank samples are pushed into a bounded buffer. Every ``hop``
samples the detector compares the window ending at the newest sample with the
window that started ``interval`` samples earlier. It fires when an enabled
metric exceeds its threshold. A correction throws away everything buffered,
fits new hinge axes on the next full window and restarts angle integration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .axisest import AxisEstimate, EstimatorOptions, NoConvergence, NotEnoughExcitation, Window, estimate_axes
from .calib import SweepConfig, sweep_trajectory, unit_to_rad
from .kinsim import DEFAULT_RATE, ImuStream, MountingConfig, apply_movement, gen_movement
from .metrics import METRIC_IDS, WindowPair, compute_metric

Mode = Literal["tracking", "recalibrating"]


@dataclass
class DetectorConfig:
    window: int = 2000
    interval: int = 3000
    hop: int = 200
    metrics: tuple[str, ...] = ("m4", "m5")
    thresholds: dict[str, float] = field(default_factory=dict)
    side: str = "thigh"
    rate: float = DEFAULT_RATE
    auto_correct: bool = True

    def __post_init__(self) -> None:
        self.metrics = tuple(self.metrics)
        unknown = set(self.metrics) - set(METRIC_IDS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        if self.window <= 0 or self.interval < self.window or self.hop <= 0:
            raise ValueError("need window > 0, interval >= window and hop > 0")
        missing = [m for m in self.metrics if m not in self.thresholds]
        if missing:
            raise ValueError(f"no threshold given for {missing}")

    @property
    def span(self) -> int:
        return self.window + self.interval


@dataclass(frozen=True)
class Evaluation:
    """One window-pair comparison. ``end`` is exclusive; the pair spans ``[start, end)``."""

    start: int
    end: int
    values: dict[str, float]
    fired: tuple[str, ...]

    @property
    def t_detect(self) -> int:
        return self.end - 1


@dataclass(frozen=True)
class DetectionEvent:
    t_detect: int
    values: dict[str, float]
    fired: tuple[str, ...]


class _SampleBuffer:
    """Bounded store of paired samples addressed by absolute index.

    Storage is twice the capacity so windows are always contiguous slices;
    the newest ``capacity`` samples are moved to the front when it fills.
    """

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self._data = np.empty((2 * capacity, 12))
        self._len = 0
        self.first = 0  # absolute index of _data[0]

    @property
    def stop(self) -> int:
        return self.first + self._len

    def clear(self, at: int) -> None:
        self._len = 0
        self.first = at

    def extend(self, rows: NDArray[np.float64]) -> None:
        n = len(rows)
        if n > self.capacity:
            self.clear(self.stop + n - self.capacity)
            rows = rows[-self.capacity :]
            n = self.capacity
        if self._len + n > len(self._data):
            keep = self.capacity - n
            self._data[:keep] = self._data[self._len - keep : self._len]
            self.first += self._len - keep
            self._len = keep
        self._data[self._len : self._len + n] = rows
        self._len += n

    def window(self, start: int, length: int) -> Window:
        i = start - self.first
        if i < 0 or start + length > self.stop:
            raise IndexError(f"samples [{start}, {start + length}) not buffered")
        d = self._data[i : i + length]
        return Window(start, d[:, 0:3], d[:, 3:6], d[:, 6:9], d[:, 9:12])


class Detector:
    """Single-writer state machine over a paired sample stream.

    Without an initial estimate the detector starts in recalibrating mode and
    fits the axes on the first full window.
    """

    def __init__(self, config: DetectorConfig, estimate: AxisEstimate | None = None,
                 opts: EstimatorOptions | None = None) -> None:
        self.config = config
        self.opts = opts or EstimatorOptions()
        self.buffer = _SampleBuffer(2 * config.window + config.interval)
        self.estimate = estimate
        self.mode: Mode = "tracking" if estimate is not None else "recalibrating"
        self.n_seen = 0
        self.restart = 0  # absolute index from which buffered data is valid
        self.evaluations: list[Evaluation] = []
        self.events: list[DetectionEvent] = []
        self.recalibrations: list[tuple[int, AxisEstimate]] = []
        self.failed_recalibrations: list[int] = []
        self._cache: dict[int, AxisEstimate] = {}
        self._theta = 0.0
        self._last_rate: float | None = None
        self._angles: list[NDArray[np.float64]] = []
        self._provisional: list[NDArray[np.bool_]] = []

    # -- stream input -----------------------------------------------------

    def push(self, thigh_sample, shank_sample) -> DetectionEvent | None:
        """Add one sample pair ``(acc, gyr)`` per sensor; return an event if one fired."""
        ta, tg = thigh_sample
        sa, sg = shank_sample
        row = np.concatenate([ta, tg, sa, sg]).reshape(1, 12)
        events = self._extend_rows(row)
        return events[0] if events else None

    def extend(self, thigh: ImuStream, shank: ImuStream) -> list[DetectionEvent]:
        """Push whole streams; equivalent to calling :meth:`push` per sample."""
        if len(thigh) != len(shank):
            raise ValueError("thigh and shank streams differ in length")
        rows = np.hstack([thigh.acc, thigh.gyr, shank.acc, shank.gyr])
        return self._extend_rows(rows)

    def _due(self) -> int:
        """Sample count at which the next action is due; always ``> n_seen``."""
        cfg = self.config
        if self.mode == "recalibrating":
            return self.restart + cfg.window
        first = self.restart + cfg.span
        if self.n_seen < first:
            return first
        return first + ((self.n_seen - first) // cfg.hop + 1) * cfg.hop

    def _extend_rows(self, rows: NDArray[np.float64]) -> list[DetectionEvent]:
        fired = []
        i = 0
        while i < len(rows):
            due = self._due()
            chunk = rows[i : i + due - self.n_seen]
            self.buffer.extend(chunk)
            self._integrate(chunk)
            self.n_seen += len(chunk)
            i += len(chunk)
            if self.n_seen == due:
                ev = self._act()
                if ev is not None:
                    fired.append(ev)
        return fired

    # -- actions ------------------------------------------------------------

    def _act(self) -> DetectionEvent | None:
        if self.mode == "recalibrating":
            self._recalibrate()
            return None
        return self._evaluate_pair()

    def _estimate(self, win: Window) -> AxisEstimate:
        est = self._cache.get(win.start)
        if est is None:
            est = estimate_axes(win, self.opts)
            self._cache[win.start] = est
        return est

    def _evaluate_pair(self) -> DetectionEvent | None:
        cfg = self.config
        end = self.n_seen
        start = end - cfg.span
        pair = WindowPair(self.buffer.window(start, cfg.window), self.buffer.window(end - cfg.window, cfg.window))
        estimates = None
        if "m6" in cfg.metrics:
            try:
                estimates = (self._estimate(pair.w1), self._estimate(pair.w2))
            except (NotEnoughExcitation, NoConvergence):
                estimates = None
        values = {}
        for m in cfg.metrics:
            if m == "m6" and estimates is None:
                values[m] = float("nan")
                continue
            values[m] = compute_metric(m, pair, cfg.side, self.opts, estimates)
        self._cache = {s: e for s, e in self._cache.items() if s >= start}
        fired = tuple(m for m in cfg.metrics if values[m] > cfg.thresholds[m])
        self.evaluations.append(Evaluation(start, end, values, fired))
        if not fired:
            return None
        event = DetectionEvent(end - 1, values, fired)
        self.events.append(event)
        if cfg.auto_correct:
            self.correct()
        return event

    def _recalibrate(self) -> None:
        win = self.buffer.window(self.n_seen - self.config.window, self.config.window)
        try:
            est = estimate_axes(win, self.opts)
        except (NotEnoughExcitation, NoConvergence):
            # stay recalibrating and collect the next full window
            self.failed_recalibrations.append(self.n_seen)
            self.restart = self.n_seen
            return
        self.estimate = est
        self.mode = "tracking"
        self.recalibrations.append((self.n_seen, est))
        self._theta = 0.0
        self._last_rate = None
        self._cache = {win.start: est}

    def correct(self, thigh: ImuStream | None = None, shank: ImuStream | None = None) -> AxisEstimate | None:
        """Drop buffered samples and refit the axes on the next full window.

        When follow-up streams are given they are pushed immediately and
        the new estimate is returned if one was obtained; otherwise the fit
        happens as samples arrive and ``None`` is returned.
        """
        self.mode = "recalibrating"
        self.restart = self.n_seen
        self.buffer.clear(self.n_seen)
        self._cache.clear()
        if thigh is None or shank is None:
            return None
        before = len(self.recalibrations)
        self.extend(thigh, shank)
        return self.recalibrations[-1][1] if len(self.recalibrations) > before else None

    # -- angle output -------------------------------------------------------

    def _integrate(self, chunk: NDArray[np.float64]) -> None:
        n = len(chunk)
        provisional = np.full(n, self.mode == "recalibrating")
        if self.estimate is None:
            self._angles.append(np.full(n, np.nan))
            self._provisional.append(provisional)
            return
        rel = chunk[:, 3:6] @ self.estimate.j_thigh - chunk[:, 9:12] @ self.estimate.j_shank
        prev = np.concatenate([[rel[0] if self._last_rate is None else self._last_rate], rel[:-1]])
        theta = self._theta + np.cumsum(0.5 * (prev + rel)) / self.config.rate
        self._theta = float(theta[-1])
        self._last_rate = float(rel[-1])
        self._angles.append(theta)
        self._provisional.append(provisional)

    def angles(self) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        """Angle (rad) per pushed sample and its provisional flag."""
        if not self._angles:
            return np.empty(0), np.empty(0, dtype=bool)
        return np.concatenate(self._angles), np.concatenate(self._provisional)

    def report(self, t_moves=(), metric: str | None = None) -> "DetectionReport":
        return evaluate(self.evaluations, t_moves, metric)


# ---------------------------------------------------------------------------
# offline evaluation


@dataclass
class DetectionReport:
    events: list[dict]
    r_det: float
    r_mis: float
    n_windows: int
    n_movements: int
    n_detected: int
    n_misdetections: int
    delays: list[int]

    def delay_percentiles(self) -> dict[str, float | None]:
        if not self.delays:
            return {"p50": None, "p90": None, "max": None}
        d = np.asarray(self.delays, dtype=float)
        return {"p50": float(np.percentile(d, 50)), "p90": float(np.percentile(d, 90)), "max": float(d.max())}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["delay_percentiles"] = self.delay_percentiles()
        return out


def straddles(ev: Evaluation, t_move: int) -> bool:
    """True when part of the pair was recorded before and part after ``t_move``."""
    return ev.start < t_move < ev.end


def evaluate(evaluations, t_moves, metric: str | None = None, thresholds: dict[str, float] | None = None) -> DetectionReport:
    """Detection and misdetection rates from an evaluation log.

    A movement is detected if any pair straddling it fired. R_det is the
    share of movements with at least one straddling pair that were
    detected. R_mis is fired non-straddling pairs over all pairs. With
    ``metric`` only that metric's decisions count; ``thresholds`` re-applies
    new thresholds to the logged values.
    """
    t_moves = sorted(int(t) for t in t_moves)

    def fired(ev: Evaluation) -> bool:
        names = [metric] if metric is not None else list(ev.values)
        if thresholds is not None:
            return any(ev.values[m] > thresholds[m] for m in names if m in thresholds)
        return any(m in ev.fired for m in names)

    n_mov = n_det = n_mis = 0
    delays = []
    for t in t_moves:
        hits = [ev for ev in evaluations if straddles(ev, t)]
        if not hits:
            continue
        n_mov += 1
        firing = [ev for ev in hits if fired(ev)]
        if firing:
            n_det += 1
            delays.append(min(ev.t_detect for ev in firing) - t)
    events = []
    for ev in evaluations:
        if not fired(ev):
            continue
        if not any(straddles(ev, t) for t in t_moves):
            n_mis += 1
        events.append({"t_detect": ev.t_detect, "values": dict(ev.values), "fired": list(ev.fired)})
    n_win = len(evaluations)
    return DetectionReport(
        events=events,
        r_det=n_det / n_mov if n_mov else 0.0,
        r_mis=n_mis / n_win if n_win else 0.0,
        n_windows=n_win,
        n_movements=n_mov,
        n_detected=n_det,
        n_misdetections=n_mis,
        delays=delays,
    )


def merge_reports(reports: list[DetectionReport]) -> DetectionReport:
    """Pool counts from several runs into one report."""
    n_mov = sum(r.n_movements for r in reports)
    n_det = sum(r.n_detected for r in reports)
    n_win = sum(r.n_windows for r in reports)
    n_mis = sum(r.n_misdetections for r in reports)
    return DetectionReport(
        events=[e for r in reports for e in r.events],
        r_det=n_det / n_mov if n_mov else 0.0,
        r_mis=n_mis / n_win if n_win else 0.0,
        n_windows=n_win,
        n_movements=n_mov,
        n_detected=n_det,
        n_misdetections=n_mis,
        delays=[d for r in reports for d in r.delays],
    )


# ---------------------------------------------------------------------------
# held-out detection sweep


@dataclass
class DetectionSweepConfig:
    """Streams with one thigh-sensor movement each, scored by the detector.

    Movement magnitudes are drawn uniformly from ``phi_units`` (units of
    ``pi / 200``) and the movement time uniformly from ``t_move_range``.
    """

    runs: int = 200
    duration_s: float = 90.0
    rate: float = DEFAULT_RATE
    window: int = 2000
    interval: int = 3000
    hop: int = 1000
    phi_units: tuple[int, int] = (50, 200)
    t_move_range: tuple[int, int] = (6000, 7333)
    n_gaits: int = 10
    noise_std_acc: float = 0.05
    noise_std_gyr: float = 0.005
    side: str = "thigh"
    seed: int = 1

    def gait_config(self) -> SweepConfig:
        return SweepConfig(
            phi_units=(0,), runs=1, window=self.window, interval=self.interval, duration_s=self.duration_s,
            rate=self.rate, n_gaits=self.n_gaits, noise_std_acc=self.noise_std_acc,
            noise_std_gyr=self.noise_std_gyr, seed=self.seed,
        )


def detection_run(cfg: DetectionSweepConfig, run: int, metrics=METRIC_IDS):
    """Simulate one stream and log every window-pair comparison.

    Thresholds are irrelevant here (``auto_correct`` is off and all values
    are logged); score the log with :func:`evaluate` and ``thresholds``.
    """
    rng = np.random.default_rng([cfg.seed, 0xDE7, run])
    traj = sweep_trajectory(cfg.gait_config(), run)
    mount = MountingConfig.random(rng, cfg.noise_std_acc, cfg.noise_std_gyr)
    lo, hi = cfg.phi_units
    phi = unit_to_rad(rng.uniform(lo, hi))
    t_move = int(rng.integers(cfg.t_move_range[0], cfg.t_move_range[1] + 1))
    event = gen_movement(phi, rng, t_move)
    thigh, shank = apply_movement(traj, mount, event, rng)
    dcfg = DetectorConfig(cfg.window, cfg.interval, cfg.hop, tuple(metrics), {m: np.inf for m in metrics},
                          cfg.side, cfg.rate, auto_correct=False)
    det = Detector(dcfg, estimate=AxisEstimate(*mount.true_axes(), 0.0, 0, True))
    det.extend(thigh, shank)
    return det.evaluations, event, mount


def detection_sweep(cfg: DetectionSweepConfig, thresholds: dict[str, float], metrics=None) -> dict[str, DetectionReport]:
    """Per-metric pooled detection reports over ``cfg.runs`` streams."""
    metrics = tuple(metrics or thresholds)
    per_metric: dict[str, list[DetectionReport]] = {m: [] for m in metrics}
    for run in range(cfg.runs):
        evals, event, _ = detection_run(cfg, run, metrics)
        for m in metrics:
            per_metric[m].append(evaluate(evals, [event.t_move], m, thresholds))
    return {m: merge_reports(r) for m, r in per_metric.items()}


"""Window-pair metrics for spotting a sensor that moved on its segment.

Each metric compares two equally long windows sample by sample (``w2[k] -
w1[k]``) and is small when the sensor did not move between them:

====  ==================================================================
m1    mean over windows of ``sum |dw|^2 / sum |w|^2``
m2    ``sum |dw|^2 / (sum_w1 |w| * sum_w2 |w|)``
m3    ``| mean da |`` (m/s^2)
m4    ``| mean da / |da| |``
m5    ``| mean (a1 / |a1| - a2 / |a2|) |``
m6    ``| j2 - j1 |`` for per-window hinge-axis estimates
====  ==================================================================
"""

from __future__ import annotations

import time
from dataclasses import astuple, dataclass, fields
from typing import Callable, Literal

import numpy as np
from numpy.typing import NDArray

from .axisest import AxisEstimate, EstimatorOptions, Window, estimate_axes

NORM_GUARD = 1e-9
METRIC_IDS = ("m1", "m2", "m3", "m4", "m5", "m6")
Side = Literal["thigh", "both"]


@dataclass
class WindowPair:
    """Two equally long windows; ``w2`` is the later one."""

    w1: Window
    w2: Window

    def __post_init__(self) -> None:
        if self.w1.length != self.w2.length:
            raise ValueError(f"window lengths differ: {self.w1.length} vs {self.w2.length}")

    @property
    def gap(self) -> int:
        """Samples between the end of ``w1`` and the start of ``w2``."""
        return self.w2.start - self.w1.stop

    @property
    def offset(self) -> int:
        """Samples between the two window starts."""
        return self.w2.start - self.w1.start


@dataclass(frozen=True)
class MetricVector:
    m1: float
    m2: float
    m3: float
    m4: float
    m5: float
    m6: float

    def as_array(self) -> NDArray[np.float64]:
        return np.array(astuple(self), dtype=float)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __getitem__(self, key: str) -> float:
        if key not in METRIC_IDS:
            raise KeyError(key)
        return getattr(self, key)


def _channel(win: Window, channel: str, segment: str) -> NDArray[np.float64]:
    try:
        return getattr(win, {"acc": "acc_", "gyr": "gyr_"}[channel] + segment)
    except (KeyError, AttributeError):
        raise ValueError(f"unknown channel/segment {channel!r}/{segment!r}") from None


def delta_series(pair: WindowPair, channel: str = "gyr", segment: str = "thigh") -> NDArray[np.float64]:
    """Sample-wise difference ``w2[k] - w1[k]`` of one sensor channel."""
    x1 = _channel(pair.w1, channel, segment)
    x2 = _channel(pair.w2, channel, segment)
    if x1.shape != x2.shape:
        raise ValueError(f"window shapes differ: {x1.shape} vs {x2.shape}")
    return x2 - x1


def _sq(x):
    return np.einsum("ij,ij->i", x, x)


def _ratio(num: float, den: float) -> float:
    return num / den if den > NORM_GUARD else 0.0 if num <= NORM_GUARD else np.inf


def metric1(pair: WindowPair, segment: str = "thigh") -> float:
    d = float(np.sum(_sq(delta_series(pair, "gyr", segment))))
    w1 = float(np.sum(_sq(_channel(pair.w1, "gyr", segment))))
    w2 = float(np.sum(_sq(_channel(pair.w2, "gyr", segment))))
    return 0.5 * (_ratio(d, w1) + _ratio(d, w2))


def metric2(pair: WindowPair, segment: str = "thigh") -> float:
    d = float(np.sum(_sq(delta_series(pair, "gyr", segment))))
    n1 = float(np.sum(np.linalg.norm(_channel(pair.w1, "gyr", segment), axis=1)))
    n2 = float(np.sum(np.linalg.norm(_channel(pair.w2, "gyr", segment), axis=1)))
    return _ratio(d, n1 * n2)


def metric3(pair: WindowPair, segment: str = "thigh") -> float:
    return float(np.linalg.norm(delta_series(pair, "acc", segment).mean(axis=0)))


def _mean_unit(x: NDArray[np.float64], keep: NDArray[np.bool_]) -> NDArray[np.float64]:
    if not keep.any():
        return np.zeros(3)
    return (x[keep] / np.linalg.norm(x[keep], axis=1, keepdims=True)).mean(axis=0)


def metric4(pair: WindowPair, segment: str = "thigh") -> float:
    d = delta_series(pair, "acc", segment)
    keep = np.linalg.norm(d, axis=1) >= NORM_GUARD
    return float(np.linalg.norm(_mean_unit(d, keep)))


def metric5(pair: WindowPair, segment: str = "thigh") -> float:
    a1 = _channel(pair.w1, "acc", segment)
    a2 = _channel(pair.w2, "acc", segment)
    n1 = np.linalg.norm(a1, axis=1, keepdims=True)
    n2 = np.linalg.norm(a2, axis=1, keepdims=True)
    keep = (n1[:, 0] >= NORM_GUARD) & (n2[:, 0] >= NORM_GUARD)
    if not keep.any():
        return 0.0
    diff = a1[keep] / n1[keep] - a2[keep] / n2[keep]
    return float(np.linalg.norm(diff.mean(axis=0)))


def axis_change(j1: NDArray[np.float64], j2: NDArray[np.float64]) -> float:
    """``|j2 - j1|`` after flipping ``j2`` onto the hemisphere of ``j1``."""
    if np.dot(j1, j2) < 0:
        j2 = -j2
    return float(np.linalg.norm(j2 - j1))


def metric6(
    pair: WindowPair,
    opts: EstimatorOptions | None = None,
    segment: str = "thigh",
    estimates: tuple[AxisEstimate, AxisEstimate] | None = None,
) -> float:
    """Change of the estimated hinge axis between the windows.

    ``estimates`` lets a caller reuse axis fits it already has.

    Raises
    ------
    NotEnoughExcitation
        If either window lacks rotation.
    """
    e1, e2 = estimates if estimates is not None else (estimate_axes(pair.w1, opts), estimate_axes(pair.w2, opts))
    attr = "j_thigh" if segment == "thigh" else "j_shank"
    return axis_change(getattr(e1, attr), getattr(e2, attr))


_SIMPLE: dict[str, Callable[..., float]] = {
    "m1": metric1,
    "m2": metric2,
    "m3": metric3,
    "m4": metric4,
    "m5": metric5,
}


def compute_metric(
    metric_id: str,
    pair: WindowPair,
    side: Side = "thigh",
    opts: EstimatorOptions | None = None,
    estimates: tuple[AxisEstimate, AxisEstimate] | None = None,
) -> float:
    """One metric on the thigh sensor, or the larger of thigh and shank."""
    segments = ("thigh",) if side == "thigh" else ("thigh", "shank")
    if metric_id == "m6":
        if estimates is None:
            estimates = (estimate_axes(pair.w1, opts), estimate_axes(pair.w2, opts))
        return max(metric6(pair, segment=s, estimates=estimates) for s in segments)
    try:
        fn = _SIMPLE[metric_id]
    except KeyError:
        raise ValueError(f"unknown metric {metric_id!r}; expected one of {METRIC_IDS}") from None
    return max(fn(pair, s) for s in segments)


def compute_all(
    pair: WindowPair,
    side: Side = "thigh",
    opts: EstimatorOptions | None = None,
    estimates: tuple[AxisEstimate, AxisEstimate] | None = None,
) -> MetricVector:
    """All six metrics for a window pair."""
    vals = [compute_metric(m, pair, side, opts, estimates) for m in METRIC_IDS]
    return MetricVector(*vals)


def time_metrics(pair: WindowPair, repeats: int = 20, opts: EstimatorOptions | None = None) -> dict[str, tuple[float, float]]:
    """Mean and std wall time (ms) per metric evaluation on one pair.

    Metric6 includes both axis fits, matching what a detector has to do for
    a fresh window pair.
    """
    out = {}
    for m in METRIC_IDS:
        compute_metric(m, pair, opts=opts)
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            compute_metric(m, pair, opts=opts)
            samples.append((time.perf_counter() - t0) * 1e3)
        out[m] = (float(np.mean(samples)), float(np.std(samples)))
    return out


# ---------------------------------------------------------------------------
# analytic identity checks on zero-interval pairs (w2 = moved copy of w1)


def rate_ratio(pair: WindowPair, segment: str = "thigh") -> float:
    """``sum |dw|^2 / sum |w1|^2`` with the first window as reference."""
    d = float(np.sum(_sq(delta_series(pair, "gyr", segment))))
    return _ratio(d, float(np.sum(_sq(_channel(pair.w1, "gyr", segment)))))


def check_rate_identity(pair: WindowPair, j_before, j_after) -> float:
    """``|dj|^2 - sum |dw|^2 / sum |w|^2`` for the true axis change.

    On a strict hinge the angular rate is parallel to the axis, so both terms
    agree and the result vanishes up to round-off.
    """
    dj = np.asarray(j_after, dtype=float) - np.asarray(j_before, dtype=float)
    return float(np.dot(dj, dj)) - rate_ratio(pair)


@dataclass(frozen=True)
class AccelIdentityCheck:
    normalized: float
    raw: float


def check_accel_identity(pair: WindowPair, j_before, j_after) -> AccelIdentityCheck:
    """``sum_k dj . da(k)`` raw and divided by ``sum |a| * |dj|``."""
    dj = np.asarray(j_after, dtype=float) - np.asarray(j_before, dtype=float)
    da = delta_series(pair, "acc", "thigh")
    raw = float(np.sum(da @ dj))
    scale = float(np.sum(np.linalg.norm(pair.w1.acc_thigh, axis=1))) * float(np.linalg.norm(dj))
    return AccelIdentityCheck(raw / scale if scale > NORM_GUARD else 0.0, raw)

"""
Rate-distortion curves and Bjontegaard delta rate.

Curves are interpolated as log-rate over quality with PCHIP; the BD-Rate is
``exp(E[r_test - r_anchor]) - 1`` where the expectation runs over the shared
quality range. Negative values mean the test curve saves bitrate.
"""

import csv
import logging
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cache
from typing import Any, TextIO

import numpy as np
from scipy.interpolate import PchipInterpolator

from .constants import QP_MAX, QP_MIN
from .errors import CurveError, NoOverlapError

logger = logging.getLogger(__name__)

GAUSS_LEGENDRE_NODES = 64
CSV_FIELDS = ("qp", "bitrate_bps", "quality", "metric")


@dataclass(frozen=True)
class RdPoint:
    rate: float
    quality: float
    qp: int

    def __post_init__(self) -> None:
        if not self.rate > 0 or not math.isfinite(self.rate):
            raise CurveError(f"invalid rd point; rate must be positive, got {self.rate}")
        if not math.isfinite(self.quality):
            raise CurveError(f"invalid rd point; quality must be finite, got {self.quality}")
        if not QP_MIN <= self.qp <= QP_MAX:
            raise CurveError(f"invalid rd point; qp {self.qp} outside [{QP_MIN}, {QP_MAX}]")

    @property
    def log_rate(self) -> float:
        return math.log(self.rate)


def _normalise(points: Iterable[RdPoint]) -> tuple[RdPoint, ...]:
    by_quality: dict[float, RdPoint] = {}
    for p in points:
        kept = by_quality.get(p.quality)
        if kept is None:
            by_quality[p.quality] = p
            continue
        logger.warning(
            "duplicate quality %g at qp %d and %d; keeping the higher rate",
            p.quality,
            kept.qp,
            p.qp,
        )
        if p.rate > kept.rate:
            by_quality[p.quality] = p
    return tuple(sorted(by_quality.values(), key=lambda p: p.quality))


@dataclass(frozen=True)
class RdCurve:
    """Operating points for one clip and configuration under one metric.

    Points are sorted by quality on construction; points sharing a quality
    value (typically at the metric cap) collapse to the highest rate.
    """

    points: tuple[RdPoint, ...]
    metric: str
    clip: str = ""
    tag: str = ""

    def __post_init__(self) -> None:
        points = _normalise(self.points)
        if len(points) < 2:
            raise CurveError(
                f"invalid curve {self.id}; need at least 2 distinct qualities, got {len(points)}"
            )
        object.__setattr__(self, "points", points)

    @property
    def id(self) -> str:
        return ":".join(p for p in (self.clip, self.tag, self.metric) if p)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    @property
    def log_rates(self) -> np.ndarray:
        return np.array([p.log_rate for p in self.points])

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip": self.clip,
            "tag": self.tag,
            "metric": self.metric,
            "points": [
                {"qp": p.qp, "bitrate_bps": p.rate, "quality": p.quality}
                for p in sorted(self.points, key=lambda p: p.qp)
            ],
        }

    @classmethod
    def from_dict(cls, value: dict[str, Any]) -> "RdCurve":
        try:
            points = tuple(
                RdPoint(float(p["bitrate_bps"]), float(p["quality"]), int(p["qp"]))
                for p in value["points"]
            )
            return cls(points, value["metric"], value.get("clip", ""), value.get("tag", ""))
        except (KeyError, TypeError) as e:
            raise CurveError(f"invalid curve document; {e}") from e


@dataclass(frozen=True)
class BdRateResult:
    delta: float
    overlap: tuple[float, float]
    anchor: str = ""
    test: str = ""
    log_delta: float = field(default=0.0)

    @property
    def percent(self) -> float:
        return 100.0 * self.delta


def pchip_fit(qualities: Sequence[float], log_rates: Sequence[float]) -> PchipInterpolator:
    q = np.asarray(qualities, dtype=np.float64)
    r = np.asarray(log_rates, dtype=np.float64)
    if q.shape != r.shape or q.ndim != 1:
        raise CurveError("invalid knots; qualities and log rates must be equal-length vectors")
    if q.size < 2:
        raise CurveError("invalid knots; need at least 2 points")
    if np.any(np.diff(q) <= 0):
        raise CurveError("invalid knots; qualities must be strictly increasing")
    return PchipInterpolator(q, r, extrapolate=False)


def pchip_eval(interp: PchipInterpolator, quality: float | np.ndarray) -> np.ndarray:
    return interp(quality)


def overlap_range(anchor: RdCurve, test: RdCurve) -> tuple[float, float]:
    q1 = max(anchor.points[0].quality, test.points[0].quality)
    q2 = min(anchor.points[-1].quality, test.points[-1].quality)
    if q1 >= q2:
        raise NoOverlapError(
            f"quality ranges do not overlap; {anchor.id or 'anchor'} and {test.id or 'test'}"
        )
    return q1, q2


@cache
def _gauss_legendre() -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(GAUSS_LEGENDRE_NODES)


def integrate_difference(
    anchor: PchipInterpolator,
    test: PchipInterpolator,
    breakpoints: np.ndarray,
) -> float:
    """Integral of test - anchor over consecutive breakpoints.

    Each interval lies inside a single cubic piece of both interpolants, so
    the fixed Gauss-Legendre rule is exact up to rounding.
    """
    nodes, weights = _gauss_legendre()
    total = []
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        half = 0.5 * (hi - lo)
        x = lo + half * (nodes + 1.0)
        total.append(half * float(np.dot(weights, test(x) - anchor(x))))
    return math.fsum(total)


def bd_rate(anchor: RdCurve, test: RdCurve) -> BdRateResult:
    q1, q2 = overlap_range(anchor, test)
    fa = pchip_fit(anchor.qualities, anchor.log_rates)
    ft = pchip_fit(test.qualities, test.log_rates)

    knots = np.concatenate([anchor.qualities, test.qualities, [q1, q2]])
    breakpoints = np.unique(knots[(knots >= q1) & (knots <= q2)])
    mean = integrate_difference(fa, ft, breakpoints) / (q2 - q1)
    return BdRateResult(math.expm1(mean), (q1, q2), anchor.id, test.id, mean)


def write_curve_csv(curve: RdCurve, sink: TextIO) -> None:
    writer = csv.DictWriter(sink, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for p in sorted(curve.points, key=lambda p: p.qp):
        writer.writerow(
            {"qp": p.qp, "bitrate_bps": p.rate, "quality": p.quality, "metric": curve.metric}
        )


def save_curve_csv(curve: RdCurve, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        write_curve_csv(curve, f)


def read_curve_csv(source: TextIO, *, clip: str = "", tag: str = "") -> RdCurve:
    reader = csv.DictReader(source)
    missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise CurveError(f"invalid curve csv; missing column(s) {', '.join(sorted(missing))}")

    points, metrics = [], set()
    for row in reader:
        try:
            points.append(
                RdPoint(float(row["bitrate_bps"]), float(row["quality"]), int(row["qp"]))
            )
        except ValueError as e:
            if isinstance(e, CurveError):
                raise
            raise CurveError(f"invalid curve csv; line {reader.line_num}: {e}") from e
        metrics.add(row["metric"])
    if len(metrics) > 1:
        raise CurveError(f"invalid curve csv; mixed metrics {', '.join(sorted(metrics))}")
    return RdCurve(tuple(points), metrics.pop() if metrics else "", clip, tag)


def load_curve_csv(path: str | os.PathLike) -> RdCurve:
    with open(path, newline="") as f:
        return read_curve_csv(f, clip=os.path.splitext(os.path.basename(path))[0])

"""
Powell's conjugate-direction search and the BD-Rate cost functions it
minimises.

The search is deterministic: evaluated points are memoised, ties between equal
costs go to the earliest evaluation, and the evaluation budget is enforced
inside line searches.
"""

import json
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, TextIO

import numpy as np

from .constants import (
    CHROMA_OFFSET_C,
    CHROMA_OFFSET_K,
    CHROMA_OFFSET_L,
    DEFAULT_QPS,
    INFEASIBLE_PENALTY,
    POWELL_MAX_EVALUATIONS,
    POWELL_MAX_ITERATIONS,
    POWELL_STEP,
    POWELL_STEP_TOLERANCE,
    POWELL_TOLERANCE,
)
from .errors import ConfigurationError, CurveError, HdrRdoError
from .harness import ALL_INTRA, RANDOM_ACCESS, Harness
from .params import ChromaOffsetPolicy
from .rd import bd_rate

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MAX_DOUBLINGS = 40

Point = tuple[float, ...]


class ConvergenceReason(StrEnum):
    TOLERANCE = "tolerance"
    MAX_ITER = "max-iter"
    STALL = "stall"


@dataclass(frozen=True)
class SearchOptions:
    start: Point = (1.0, 1.0)
    # per-axis initial step, in search space
    step: Point | float = POWELL_STEP
    tolerance: float = POWELL_TOLERANCE
    max_iterations: int = POWELL_MAX_ITERATIONS
    max_evaluations: int = POWELL_MAX_EVALUATIONS
    step_tolerance: float = POWELL_STEP_TOLERANCE
    # per-axis (lo, hi) in search space
    bounds: tuple[tuple[float, float], ...] | None = None
    penalty: float = INFEASIBLE_PENALTY
    # search over ln(point); points handed to the cost stay in natural units
    log_space: bool = False

    def __post_init__(self) -> None:
        if not self.start:
            raise ConfigurationError("invalid search; start point is empty")
        if self.tolerance <= 0:
            raise ConfigurationError("invalid search; tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("invalid search; max_iterations must be at least 1")
        if self.max_evaluations < 1:
            raise ConfigurationError("invalid search; max_evaluations must be at least 1")
        if self.step_tolerance <= 0:
            raise ConfigurationError("invalid search; step_tolerance must be positive")
        if self.log_space and any(v <= 0 for v in self.start):
            raise ConfigurationError("invalid search; log-space start must be positive")
        steps = self.steps
        if len(steps) != len(self.start) or any(s <= 0 for s in steps):
            raise ConfigurationError("invalid search; need one positive step per axis")
        if self.bounds is not None and len(self.bounds) != len(self.start):
            raise ConfigurationError("invalid search; need one bound pair per axis")

    @property
    def steps(self) -> Point:
        if isinstance(self.step, (int, float)):
            return (float(self.step),) * len(self.start)
        return tuple(float(s) for s in self.step)

    def to_search(self, point: Sequence[float]) -> np.ndarray:
        x = np.asarray(point, dtype=np.float64)
        return np.log(x) if self.log_space else x

    def from_search(self, x: np.ndarray) -> Point:
        v = np.exp(x) if self.log_space else x
        return tuple(float(c) for c in v)


@dataclass(frozen=True)
class Evaluation:
    index: int
    point: Point
    cost: float

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "point": list(self.point), "cost": self.cost}


@dataclass
class OptimizationTrace:
    evaluations: list[Evaluation] = field(default_factory=list)
    reason: ConvergenceReason = ConvergenceReason.MAX_ITER
    iterations: int = 0
    encodes_per_evaluation: int = 0
    baseline_encodes: int = 0

    @property
    def best(self) -> Evaluation:
        if not self.evaluations:
            raise HdrRdoError("empty trace has no best point")
        # min() keeps the first of equal costs
        return min(self.evaluations, key=lambda e: e.cost)

    @property
    def best_point(self) -> Point:
        return self.best.point

    @property
    def best_cost(self) -> float:
        return self.best.cost

    @property
    def evaluation_count(self) -> int:
        return len(self.evaluations)

    @property
    def encodes(self) -> int:
        return self.encodes_per_evaluation * self.evaluation_count + self.baseline_encodes

    def summary(self) -> dict[str, Any]:
        return {
            "best_point": list(self.best_point),
            "best_cost": self.best_cost,
            "reason": str(self.reason),
            "iterations": self.iterations,
            "evaluations": self.evaluation_count,
            "encodes": self.encodes,
            "encodes_per_evaluation": self.encodes_per_evaluation,
            "baseline_encodes": self.baseline_encodes,
        }


class _BudgetExhausted(Exception):
    pass


class _Objective:
    """Memoising, budget-enforcing wrapper in search space."""

    def __init__(
        self,
        cost: Callable[[Point], float],
        opts: SearchOptions,
        trace: OptimizationTrace,
        seed: Iterable[Evaluation] = (),
    ) -> None:
        self.cost = cost
        self.opts = opts
        self.trace = trace
        self.memo: dict[Point, float] = {}
        self.replay = {e.point: e.cost for e in seed}

    def __call__(self, x: np.ndarray) -> float:
        point = self.opts.from_search(x)
        if point in self.memo:
            return self.memo[point]
        if self.trace.evaluation_count >= self.opts.max_evaluations:
            raise _BudgetExhausted()
        if point in self.replay:
            value = self.replay[point]
        else:
            value = float(self.cost(point))
        if not math.isfinite(value):
            logger.warning("cost %s at %s is not finite; using penalty", value, point)
            value = self.opts.penalty
        self.memo[point] = value
        self.trace.evaluations.append(Evaluation(self.trace.evaluation_count, point, value))
        return value


def _step_limits(
    origin: np.ndarray, direction: np.ndarray, bounds: tuple[tuple[float, float], ...] | None
) -> tuple[float, float]:
    lo, hi = -math.inf, math.inf
    if bounds is None:
        return lo, hi
    for x, d, (b_lo, b_hi) in zip(origin, direction, bounds):
        if d > 0:
            lo, hi = max(lo, (b_lo - x) / d), min(hi, (b_hi - x) / d)
        elif d < 0:
            lo, hi = max(lo, (b_hi - x) / d), min(hi, (b_lo - x) / d)
    return min(lo, 0.0), max(hi, 0.0)


def _line_search(
    f: Callable[[np.ndarray], float],
    origin: np.ndarray,
    direction: np.ndarray,
    opts: SearchOptions,
    f0: float | None = None,
) -> tuple[float, float]:
    norm = float(np.linalg.norm(direction))
    if norm == 0:
        raise ConfigurationError("invalid line search; direction is zero")
    t_lo, t_hi = _step_limits(origin, direction, opts.bounds)
    tol = opts.step_tolerance / norm
    best = [0.0, f(origin) if f0 is None else f0]

    def g(t: float) -> float:
        t = min(max(t, t_lo), t_hi)
        value = f(origin + t * direction)
        if value < best[1]:
            best[0], best[1] = t, value
        return value

    def clamp(t: float) -> float:
        return min(max(t, t_lo), t_hi)

    fa = best[1]
    b = clamp(1.0)
    fb = g(b) if b != 0 else fa
    if fb >= fa:
        c = clamp(-1.0)
        fc = g(c) if c != 0 else fa
        if fc >= fa:
            # minimum bracketed by [-1, 1] around the origin
            _golden(g, c, 0.0, b, fa, tol)
            return best[0], best[1]
        b, fb = c, fc
    # expand by doubling while the cost keeps falling
    a = 0.0
    for _ in range(MAX_DOUBLINGS):
        c = clamp(2.0 * b)
        if c == b:
            # bound reached while still descending
            return best[0], best[1]
        fc = g(c)
        if fc >= fb:
            break
        a, b, fb = b, c, fc
    else:
        return best[0], best[1]
    _golden(g, a, b, c, fb, tol)
    return best[0], best[1]


def _golden(
    g: Callable[[float], float], a: float, b: float, c: float, fb: float, tol: float
) -> None:
    """Golden-section reduction of the bracket (a, b, c) to width ``tol``."""
    lo, hi = min(a, c), max(a, c)
    if hi - b > b - lo:
        x1, f1 = b, fb
        x2 = b + (1.0 - GOLDEN) * (hi - b)
        f2 = g(x2)
    else:
        x2, f2 = b, fb
        x1 = b - (1.0 - GOLDEN) * (b - lo)
        f1 = g(x1)
    while hi - lo > tol:
        if f2 < f1:
            lo, x1, f1 = x1, x2, f2
            x2 = GOLDEN * x1 + (1.0 - GOLDEN) * hi
            f2 = g(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = GOLDEN * x2 + (1.0 - GOLDEN) * lo
            f1 = g(x1)


def line_minimize(
    cost: Callable[[np.ndarray], float],
    origin: Sequence[float],
    direction: Sequence[float],
    opts: SearchOptions = SearchOptions(),
) -> float:
    """Step along ``direction`` (in its own units) to the best point seen."""
    step, _ = _line_search(
        cost,
        np.asarray(origin, dtype=np.float64),
        np.asarray(direction, dtype=np.float64),
        opts,
    )
    return step


def _accept_direction(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    displacement: np.ndarray,
    opts: SearchOptions,
    f_start: float,
    f_end: float,
    drop: float,
) -> bool:
    """Whether the cycle displacement should replace the direction of largest decrease."""
    extrapolated = x + displacement
    if opts.bounds is not None:
        lo, hi = zip(*opts.bounds)
        extrapolated = np.clip(extrapolated, lo, hi)
    f_ext = f(extrapolated)
    if f_ext >= f_start:
        return False
    curvature = 2.0 * (f_start - 2.0 * f_end + f_ext) * (f_start - f_end - drop) ** 2
    return curvature < drop * (f_start - f_ext) ** 2


def powell_minimize(
    cost: Callable[[Point], float],
    opts: SearchOptions = SearchOptions(),
    *,
    seed: Iterable[Evaluation] = (),
) -> OptimizationTrace:
    """Minimise ``cost`` with Powell's direction-set method.

    ``seed`` replays recorded evaluations instead of calling ``cost`` for
    points already in it.
    """
    trace = OptimizationTrace()
    f = _Objective(cost, opts, trace, seed)
    dims = len(opts.start)
    directions = [np.eye(dims)[i] * s for i, s in enumerate(opts.steps)]
    x = opts.to_search(opts.start)

    try:
        fx = f(x)
        for _ in range(opts.max_iterations):
            trace.iterations += 1
            x_start, f_start = x.copy(), fx
            drop, drop_idx = 0.0, 0
            for i, d in enumerate(directions):
                t, ft = _line_search(f, x, d, opts, fx)
                if fx - ft > drop:
                    drop, drop_idx = fx - ft, i
                x, fx = x + t * d, ft

            if f_start - fx < opts.tolerance:
                trace.reason = ConvergenceReason.TOLERANCE
                break

            displacement = x - x_start
            if np.all(np.abs(displacement) < opts.step_tolerance):
                trace.reason = ConvergenceReason.STALL
                break
            if _accept_direction(f, x, displacement, opts, f_start, fx, drop):
                t, ft = _line_search(f, x, displacement, opts, fx)
                x, fx = x + t * displacement, ft
                del directions[drop_idx]
                directions.append(displacement)
        else:
            trace.reason = ConvergenceReason.MAX_ITER
    except _BudgetExhausted:
        logger.info("evaluation budget of %d exhausted", opts.max_evaluations)
        trace.reason = ConvergenceReason.MAX_ITER

    logger.info(
        "powell finished (%s) after %d cycle(s), %d evaluation(s); best %.6g at %s",
        trace.reason,
        trace.iterations,
        trace.evaluation_count,
        trace.best_cost,
        trace.best_point,
    )
    return trace


def lambda_cost(
    clip: str,
    point: Sequence[float],
    metric: str,
    harness: Harness,
    *,
    qps: Sequence[int] = DEFAULT_QPS,
    chroma_policy: ChromaOffsetPolicy | None = None,
    penalty: float = INFEASIBLE_PENALTY,
    preset: str = RANDOM_ACCESS,
) -> float:
    """BD-Rate of (k1, k2) against (1, 1) for one clip; lower is better."""
    k1, k2 = point
    anchor = harness.rd_points_for(
        clip, 1.0, 1.0, qps, metric, chroma_policy=chroma_policy, preset=preset
    )
    test = harness.rd_points_for(
        clip, k1, k2, qps, metric, chroma_policy=chroma_policy, preset=preset
    )
    try:
        return bd_rate(anchor, test).delta
    except CurveError as e:
        logger.warning("infeasible point %s for clip %s; %s", tuple(point), clip, e)
        return penalty


OFFSET_COST_METRICS = ("de100", "wpsnr-y")


def offset_cost(
    point: Sequence[float],
    corpus: Sequence[str],
    harness: Harness,
    *,
    qps: Sequence[int] = DEFAULT_QPS,
    c: float = CHROMA_OFFSET_C,
    penalty: float = INFEASIBLE_PENALTY,
) -> float:
    """Mean over the corpus of BD-Rate(DE100) + BD-Rate(wPSNR-Y) of all-intra
    encodes with chroma offsets against the same encodes without them."""
    k_offset, l_offset = point
    policy = ChromaOffsetPolicy(c, k_offset, l_offset)
    costs = []
    for clip in corpus:
        base = harness.rd_curves_for(clip, 1.0, 1.0, OFFSET_COST_METRICS, qps, preset=ALL_INTRA)
        test = harness.rd_curves_for(
            clip, 1.0, 1.0, OFFSET_COST_METRICS, qps, chroma_policy=policy, preset=ALL_INTRA
        )
        try:
            costs.append(math.fsum(bd_rate(base[m], test[m]).delta for m in OFFSET_COST_METRICS))
        except CurveError as e:
            logger.warning("infeasible offsets %s for clip %s; %s", tuple(point), clip, e)
            costs.append(penalty)
    return math.fsum(costs) / len(costs)


def optimize_lambdas(
    clip: str,
    metric: str,
    harness: Harness,
    opts: SearchOptions | None = None,
    chroma_policy: ChromaOffsetPolicy | None = None,
    *,
    qps: Sequence[int] = DEFAULT_QPS,
    seed: Iterable[Evaluation] = (),
) -> OptimizationTrace:
    opts = opts or SearchOptions(start=(1.0, 1.0), log_space=True)
    logger.info("optimising lambda modifiers for %s under %s", clip, metric)
    trace = powell_minimize(
        lambda p: lambda_cost(
            clip, p, metric, harness, qps=qps, chroma_policy=chroma_policy, penalty=opts.penalty
        ),
        opts,
        seed=seed,
    )
    trace.encodes_per_evaluation = len(qps)
    trace.baseline_encodes = len(qps)
    return trace


DEFAULT_OFFSET_SEARCH = SearchOptions(
    start=(CHROMA_OFFSET_K, CHROMA_OFFSET_L),
    step=(0.02, 0.5),
    bounds=((-1.0, 0.0), (0.0, 20.0)),
)


def optimize_offsets(
    corpus: Sequence[str],
    harness: Harness,
    opts: SearchOptions | None = None,
    *,
    qps: Sequence[int] = DEFAULT_QPS,
    seed: Iterable[Evaluation] = (),
) -> OptimizationTrace:
    if not corpus:
        raise ConfigurationError("invalid corpus; no clips given")
    opts = opts or DEFAULT_OFFSET_SEARCH
    if opts.log_space:
        opts = replace(opts, log_space=False)
    logger.info("searching chroma offsets over %d clip(s)", len(corpus))
    trace = powell_minimize(
        lambda p: offset_cost(p, corpus, harness, qps=qps, penalty=opts.penalty),
        opts,
        seed=seed,
    )
    trace.encodes_per_evaluation = len(qps) * len(corpus)
    trace.baseline_encodes = len(qps) * len(corpus)
    return trace


def write_trace_jsonl(trace: OptimizationTrace, sink: TextIO) -> None:
    for e in trace.evaluations:
        sink.write(json.dumps({"kind": "evaluation", **e.to_dict()}, sort_keys=True) + "\n")
    sink.write(json.dumps({"kind": "summary", **trace.summary()}, sort_keys=True) + "\n")


def read_trace_jsonl(source: TextIO) -> OptimizationTrace:
    trace = OptimizationTrace()
    for n, line in enumerate(source, 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            kind = doc["kind"]
            if kind == "evaluation":
                trace.evaluations.append(
                    Evaluation(int(doc["index"]), tuple(doc["point"]), float(doc["cost"]))
                )
            elif kind == "summary":
                trace.reason = ConvergenceReason(doc["reason"])
                trace.iterations = int(doc["iterations"])
                trace.encodes_per_evaluation = int(doc["encodes_per_evaluation"])
                trace.baseline_encodes = int(doc["baseline_encodes"])
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigurationError(f"invalid trace; line {n}: {e}") from e
    return trace

"""
Corpus campaigns: optimise the lambda modifiers of every clip under each
optimisation metric, then score every optimised configuration under every
evaluation metric.

A campaign writes one directory holding ``result.json`` and one Powell trace
per clip and column. Encodes go through the harness cache, so an interrupted
campaign resumes where it stopped and a complete one reruns without encoding.
"""

import json
import logging
import math
import os
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import StrEnum
from typing import Any

from .constants import DEFAULT_QPS, VERSION
from .errors import ConfigurationError, HdrRdoError
from .harness import Clip, EncodeCache, Harness, default_cache_dir
from .metrics import metric_info
from .optimizer import (
    OptimizationTrace,
    SearchOptions,
    optimize_lambdas,
    read_trace_jsonl,
    write_trace_jsonl,
)
from .params import ChromaOffsetPolicy
from .rd import RdCurve, bd_rate
from .utils import digest

logger = logging.getLogger(__name__)

RESULT_FILE = "result.json"
TRACE_DIR = "traces"
DEFAULT_COLUMN = "default+"


class ChromaOffsetMode(StrEnum):
    OFF = "off"
    ON = "on"
    BOTH = "both"


@dataclass(frozen=True)
class Column:
    """One optimisation configuration of the cross-metric matrix."""

    key: str
    label: str
    # None for the unoptimised encoder
    metric: str | None
    chroma_offsets: bool = False

    @property
    def anchor(self) -> str:
        # chroma-offset columns are measured against the chroma-offset default
        if self.chroma_offsets and self.metric is not None:
            return "co-default"
        return "default"

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "label": self.label,
            "metric": self.metric,
            "chroma_offsets": self.chroma_offsets,
            "anchor": self.anchor,
        }

    @classmethod
    def from_dict(cls, value: Mapping[str, Any]) -> "Column":
        return cls(value["key"], value["label"], value["metric"], bool(value["chroma_offsets"]))


def _clip_from(value: str | Mapping[str, Any]) -> Clip:
    if isinstance(value, str):
        return Clip(value)
    try:
        return Clip(str(value["id"]), value.get("path"))
    except (KeyError, AttributeError) as e:
        raise ConfigurationError(f"invalid clip entry {value!r}") from e


def _check_metrics(kind: str, names: Sequence[str]) -> None:
    if not names:
        raise ConfigurationError(f"invalid campaign; {kind} is empty")
    for name in names:
        try:
            metric_info(name)
        except HdrRdoError as e:
            raise ConfigurationError(f"invalid campaign; {kind}: {e}") from None


@dataclass(frozen=True)
class CampaignConfig:
    clips: tuple[Clip, ...]
    opt_metrics: tuple[str, ...]
    eval_metrics: tuple[str, ...]
    chroma_offsets: ChromaOffsetMode = ChromaOffsetMode.OFF
    # optimisation metrics that also get a chroma-offset column
    co_metrics: tuple[str, ...] | None = None
    adapter: str = "mock"
    adapter_params: Mapping[str, Any] = field(default_factory=dict)
    qps: tuple[int, ...] = DEFAULT_QPS
    output: str = "campaign"
    workers: int = 1
    search: Mapping[str, Any] = field(default_factory=dict)
    chroma_policy: ChromaOffsetPolicy = ChromaOffsetPolicy()

    def __post_init__(self) -> None:
        if not self.clips:
            raise ConfigurationError("invalid campaign; clips is empty")
        ids = [c.id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("invalid campaign; clip ids must be unique")
        _check_metrics("opt_metrics", self.opt_metrics)
        _check_metrics("eval_metrics", self.eval_metrics)
        if self.co_metrics:
            _check_metrics("co_metrics", self.co_metrics)
            stray = [m for m in self.co_metrics if m not in self.opt_metrics]
            if stray:
                raise ConfigurationError(
                    f"invalid campaign; co_metrics not optimised: {', '.join(stray)}"
                )
        if len(self.qps) < 2:
            raise ConfigurationError("invalid campaign; need at least 2 qps")
        if self.workers < 1:
            raise ConfigurationError("invalid campaign; workers must be at least 1")
        self.search_options()

    @property
    def columns(self) -> tuple[Column, ...]:
        columns = []
        if self.chroma_offsets in (ChromaOffsetMode.OFF, ChromaOffsetMode.BOTH):
            for m in self.opt_metrics:
                columns.append(Column(m, metric_info(m).label, m))
        if self.chroma_offsets in (ChromaOffsetMode.ON, ChromaOffsetMode.BOTH):
            columns.append(Column(DEFAULT_COLUMN, "Default+", None, True))
            co = self.opt_metrics[:2] if self.co_metrics is None else self.co_metrics
            for m in co:
                columns.append(Column(f"{m}+", f"{metric_info(m).label}+", m, True))
        return tuple(columns)

    def search_options(self) -> SearchOptions:
        known = {f.name for f in fields(SearchOptions)}
        unknown = sorted(set(self.search) - known)
        if unknown:
            raise ConfigurationError(f"invalid search option(s); found {', '.join(unknown)}")
        values = {"log_space": True, **self.search}
        for key in ("start", "step"):
            if isinstance(values.get(key), list):
                values[key] = tuple(values[key])
        if isinstance(values.get("bounds"), list):
            values["bounds"] = tuple(tuple(b) for b in values["bounds"])
        return SearchOptions(**values)

    def to_dict(self) -> dict[str, Any]:
        return {
            "clips": [c.to_dict() for c in self.clips],
            "opt_metrics": list(self.opt_metrics),
            "eval_metrics": list(self.eval_metrics),
            "chroma_offsets": str(self.chroma_offsets),
            "co_metrics": None if self.co_metrics is None else list(self.co_metrics),
            "adapter": self.adapter,
            "adapter_params": dict(self.adapter_params),
            "qps": list(self.qps),
            "output": self.output,
            "workers": self.workers,
            "search": dict(self.search),
            "chroma_policy": self.chroma_policy._dict(),
        }

    def digest(self) -> str:
        # output location and parallelism do not change results
        doc = self.to_dict()
        del doc["output"], doc["workers"]
        return digest(doc)

    @classmethod
    def from_dict(cls, value: Mapping[str, Any]) -> "CampaignConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(value) - known)
        if unknown:
            raise ConfigurationError(f"invalid campaign; unknown key(s) {', '.join(unknown)}")
        missing = [k for k in ("clips", "opt_metrics", "eval_metrics") if k not in value]
        if missing:
            raise ConfigurationError(f"invalid campaign; missing key(s) {', '.join(missing)}")

        kwargs = dict(value)
        kwargs["clips"] = tuple(_clip_from(c) for c in value["clips"])
        kwargs["opt_metrics"] = tuple(value["opt_metrics"])
        kwargs["eval_metrics"] = tuple(value["eval_metrics"])
        if "co_metrics" in value and value["co_metrics"] is not None:
            kwargs["co_metrics"] = tuple(value["co_metrics"])
        if "qps" in value:
            kwargs["qps"] = tuple(int(q) for q in value["qps"])
        if "chroma_offsets" in value:
            try:
                kwargs["chroma_offsets"] = ChromaOffsetMode(value["chroma_offsets"])
            except ValueError:
                raise ConfigurationError(
                    f"invalid chroma_offsets {value['chroma_offsets']!r}; expected off, on or both"
                ) from None
        if "chroma_policy" in value:
            kwargs["chroma_policy"] = ChromaOffsetPolicy._from_dict(value["chroma_policy"])
        return cls(**kwargs)


def load_config(path: str | os.PathLike) -> CampaignConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid campaign file {os.fspath(path)}; {e}") from e
    if not isinstance(doc, dict):
        raise ConfigurationError(f"invalid campaign file {os.fspath(path)}; expected an object")
    return CampaignConfig.from_dict(doc)


@dataclass
class CampaignResult:
    config_digest: str
    columns: tuple[Column, ...]
    eval_metrics: tuple[str, ...]
    # clip -> column key -> (k1, k2)
    best: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    # clip -> column key -> metric -> BD-Rate in percent
    per_clip: dict[str, dict[str, dict[str, float | None]]] = field(default_factory=dict)
    # clip -> column key -> trace path relative to the campaign directory
    traces: dict[str, dict[str, str]] = field(default_factory=dict)
    failures: list[dict[str, str]] = field(default_factory=list)
    version: str = VERSION

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def clips(self) -> list[str]:
        return sorted(self.per_clip)

    def cell(self, metric: str, column: str) -> float | None:
        """Mean BD-Rate (%) over the clips that produced a value."""
        values = [
            v
            for clip in self.clips
            if (v := self.per_clip[clip].get(column, {}).get(metric)) is not None
        ]
        if not values:
            return None
        return math.fsum(values) / len(values)

    @property
    def matrix(self) -> dict[str, dict[str, float | None]]:
        return {
            m: {c.key: self.cell(m, c.key) for c in self.columns} for m in self.eval_metrics
        }

    def samples(self) -> dict[str, list[float]]:
        """Per-metric BD-Rate vectors over every (clip, column) scored by all metrics."""
        out: dict[str, list[float]] = {m: [] for m in self.eval_metrics}
        for clip in self.clips:
            for column in self.columns:
                row = self.per_clip[clip].get(column.key)
                if row is None or any(row.get(m) is None for m in self.eval_metrics):
                    continue
                for m in self.eval_metrics:
                    out[m].append(row[m])
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "provenance": {"config_digest": self.config_digest, "version": self.version},
            "columns": [c.to_dict() for c in self.columns],
            "eval_metrics": list(self.eval_metrics),
            "best": {
                clip: {col: list(k) for col, k in cols.items()}
                for clip, cols in self.best.items()
            },
            "per_clip": self.per_clip,
            "matrix": self.matrix,
            "traces": self.traces,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, value: Mapping[str, Any]) -> "CampaignResult":
        try:
            provenance = value["provenance"]
            return cls(
                config_digest=provenance["config_digest"],
                version=provenance["version"],
                columns=tuple(Column.from_dict(c) for c in value["columns"]),
                eval_metrics=tuple(value["eval_metrics"]),
                best={
                    clip: {col: (float(k[0]), float(k[1])) for col, k in cols.items()}
                    for clip, cols in value["best"].items()
                },
                per_clip=value["per_clip"],
                traces=value.get("traces", {}),
                failures=list(value.get("failures", [])),
            )
        except (KeyError, TypeError, IndexError) as e:
            raise ConfigurationError(f"invalid campaign result; {e}") from e


def write_result(result: CampaignResult, directory: str | os.PathLike) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, RESULT_FILE)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(result.to_json())
    os.replace(tmp, path)
    return path


def load_result(directory: str | os.PathLike) -> CampaignResult:
    path = os.path.join(directory, RESULT_FILE)
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid campaign result {path}; {e}") from e
    return CampaignResult.from_dict(doc)


def trace_path(clip: str, column: Column) -> str:
    return os.path.join(TRACE_DIR, clip, f"{column.key.replace('+', '-co')}.jsonl")


def _load_seed(path: str) -> OptimizationTrace | None:
    if not os.path.isfile(path):
        return None
    try:
        with open(path) as f:
            return read_trace_jsonl(f)
    except ConfigurationError as e:
        logger.warning("ignoring unreadable trace %s; %s", path, e)
        return None


def make_harness(config: CampaignConfig, cache: EncodeCache | None = None) -> Harness:
    from .adapters import load_adapter

    module = load_adapter(config.adapter)
    return Harness.from_clips(
        config.clips,
        adapter=config.adapter,
        params=module.Params._from_dict(config.adapter_params),
        cache=cache or EncodeCache(default_cache_dir()),
    )


class _ClipRun:
    """Every column of one clip; records failures instead of raising them."""

    def __init__(self, config: CampaignConfig, harness: Harness, clip: str) -> None:
        self.config = config
        self.harness = harness
        self.clip = clip
        self.best: dict[str, tuple[float, float]] = {}
        self.scores: dict[str, dict[str, float | None]] = {}
        self.traces: dict[str, str] = {}
        self.failures: list[dict[str, str]] = []

    def fail(self, column: Column, error: Exception, metric: str = "") -> None:
        logger.error("clip %s, column %s failed; %s", self.clip, column.label, error)
        entry = {"clip": self.clip, "column": column.key, "error": str(error)}
        if metric:
            entry["metric"] = metric
        self.failures.append(entry)

    def curves(self, k: tuple[float, float], chroma_offsets: bool) -> dict[str, RdCurve]:
        return self.harness.rd_curves_for(
            self.clip,
            k[0],
            k[1],
            self.config.eval_metrics,
            self.config.qps,
            chroma_policy=self.config.chroma_policy if chroma_offsets else None,
        )

    def optimise(self, column: Column, directory: str) -> tuple[float, float]:
        if column.metric is None:
            return (1.0, 1.0)
        rel = trace_path(self.clip, column)
        path = os.path.join(directory, rel)
        seed = _load_seed(path)
        trace = optimize_lambdas(
            self.clip,
            column.metric,
            self.harness,
            self.config.search_options(),
            self.config.chroma_policy if column.chroma_offsets else None,
            qps=self.config.qps,
            seed=() if seed is None else seed.evaluations,
        )
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w") as f:
            write_trace_jsonl(trace, f)
        self.traces[column.key] = rel
        k1, k2 = trace.best_point
        return (k1, k2)

    def run(self, directory: str) -> None:
        anchors: dict[str, dict[str, RdCurve]] = {}
        for column in self.config.columns:
            try:
                k = self.optimise(column, directory)
                if column.anchor not in anchors:
                    anchors[column.anchor] = self.curves((1.0, 1.0), column.anchor == "co-default")
                test = self.curves(k, column.chroma_offsets)
            except HdrRdoError as e:
                self.fail(column, e)
                continue

            self.best[column.key] = k
            row: dict[str, float | None] = {}
            for metric in self.config.eval_metrics:
                try:
                    row[metric] = bd_rate(anchors[column.anchor][metric], test[metric]).percent
                except HdrRdoError as e:
                    self.fail(column, e, metric)
                    row[metric] = None
            self.scores[column.key] = row
            logger.info("clip %s, column %s: k=(%.4g, %.4g)", self.clip, column.label, *k)


def run_campaign(
    config: CampaignConfig,
    harness: Harness | None = None,
    *,
    output: str | os.PathLike | None = None,
) -> CampaignResult:
    """Optimise and score every clip, then write ``result.json``.

    Clips run concurrently on ``config.workers`` threads; per-clip failures
    are recorded in the result and do not stop the campaign.
    """
    harness = harness or make_harness(config)
    directory = os.fspath(output if output is not None else config.output)
    columns = config.columns
    logger.info(
        "campaign over %d clip(s) and %d column(s)", len(config.clips), len(columns)
    )

    runs = [_ClipRun(config, harness, c.id) for c in config.clips]
    if config.workers > 1 and len(runs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(lambda r: r.run(directory), runs))
    else:
        for r in runs:
            r.run(directory)

    result = CampaignResult(config.digest(), columns, config.eval_metrics)
    for r in sorted(runs, key=lambda r: r.clip):
        result.best[r.clip] = r.best
        result.per_clip[r.clip] = r.scores
        result.traces[r.clip] = r.traces
        result.failures.extend(r.failures)
    write_result(result, directory)
    if result.failures:
        logger.warning("campaign finished with %d failure(s)", len(result.failures))
    return result

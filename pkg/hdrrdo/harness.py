"""
Encode orchestration: specs, results, the on-disk encode cache and the
harness that turns (clip, k1, k2) into RD curves through an adapter.
"""

import json
import logging
import os
import tempfile
import threading
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

from .constants import (
    CACHE_ENV_VAR,
    CHROMA_OFFSET_MAX,
    CHROMA_OFFSET_MIN,
    DEFAULT_CACHE_DIR,
    DEFAULT_QPS,
    QP_MAX,
    QP_MIN,
)
from .errors import ConfigurationError, EncodeError, MetricError
from .params import ChromaOffsetPolicy, NormalisationPolicy, ParamsBase
from .rd import RdCurve, RdPoint
from .utils import digest, flatten_params

logger = logging.getLogger(__name__)

RANDOM_ACCESS = "random-access"
ALL_INTRA = "all-intra"


def round_half_away(value: float) -> int:
    if value >= 0:
        return int(value + 0.5)
    return -int(-value + 0.5)


def chroma_qp_offset(qp: int, policy: ChromaOffsetPolicy = ChromaOffsetPolicy()) -> int:
    """Chroma qp offset for Cb and Cr: clip(round(c(k qp + l)), -12, 0)."""
    if not QP_MIN <= qp <= QP_MAX:
        raise ConfigurationError(f"invalid qp {qp}; expected [{QP_MIN}, {QP_MAX}]")
    offset = round_half_away(policy.c * (policy.k_offset * qp + policy.l_offset))
    return min(max(offset, CHROMA_OFFSET_MIN), CHROMA_OFFSET_MAX)


@dataclass(frozen=True)
class Clip:
    id: str
    # source Y4M; only adapters that run real encoders need it
    path: str | None = None

    def __post_init__(self) -> None:
        # ids name trace directories under the campaign output
        seps = {"/", os.sep, os.altsep} - {None}
        if not self.id or self.id.startswith(".") or any(s in self.id for s in seps):
            raise ConfigurationError(
                f"invalid clip id {self.id!r}; expected a plain name without separators"
            )

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "path": self.path}


@dataclass(frozen=True)
class EncodeSpec:
    clip: str
    qp: int
    k1: float = 1.0
    k2: float = 1.0
    chroma_policy: ChromaOffsetPolicy | None = None
    adapter: str = "mock"
    preset: str = RANDOM_ACCESS

    def __post_init__(self) -> None:
        if not QP_MIN <= self.qp <= QP_MAX:
            raise ConfigurationError(f"invalid qp {self.qp}; expected [{QP_MIN}, {QP_MAX}]")
        if not (self.k1 > 0 and self.k2 > 0):
            raise ConfigurationError(
                f"invalid lambda modifiers; k1 and k2 must be positive, got ({self.k1}, {self.k2})"
            )

    @property
    def cb_offset(self) -> int:
        if self.chroma_policy is None:
            return 0
        return chroma_qp_offset(self.qp, self.chroma_policy)

    @property
    def cr_offset(self) -> int:
        # one policy drives both chroma planes
        return self.cb_offset

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip": self.clip,
            "qp": self.qp,
            "k1": self.k1,
            "k2": self.k2,
            "chroma_policy": (
                None if self.chroma_policy is None else self.chroma_policy._dict()
            ),
            "adapter": self.adapter,
            "preset": self.preset,
        }


@dataclass(frozen=True)
class EncodeResult:
    bitrate_bps: float
    frames: int
    adapter: str
    spec_digest: str = ""
    wall_ms: float = 0.0
    log_digest: str = ""
    # mock adapters report qualities directly instead of a decoded sequence
    qualities: dict[str, float] | None = None
    decoded: str | None = None

    def __post_init__(self) -> None:
        if not self.bitrate_bps > 0:
            raise EncodeError(f"invalid encode result; bitrate must be positive, got {self.bitrate_bps}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "bitrate_bps": self.bitrate_bps,
            "frames": self.frames,
            "wall_ms": self.wall_ms,
            "adapter": self.adapter,
            "spec_digest": self.spec_digest,
            "log_digest": self.log_digest,
            "qualities": self.qualities,
            "decoded": self.decoded,
        }

    @classmethod
    def from_dict(cls, value: Mapping[str, Any]) -> "EncodeResult":
        return cls(
            bitrate_bps=float(value["bitrate_bps"]),
            frames=int(value["frames"]),
            adapter=value["adapter"],
            spec_digest=value.get("spec_digest", ""),
            wall_ms=float(value.get("wall_ms", 0.0)),
            log_digest=value.get("log_digest", ""),
            qualities=value.get("qualities"),
            decoded=value.get("decoded"),
        )


def default_cache_dir() -> str:
    return os.environ.get(CACHE_ENV_VAR) or DEFAULT_CACHE_DIR


class EncodeCache:
    """Content-addressed JSON documents, keyed by digest.

    With ``root=None`` documents live in memory only and artifacts go to a
    temporary directory removed by ``close``. Concurrent lookups of the same
    key run the compute function once.
    """

    def __init__(self, root: str | os.PathLike | None = None) -> None:
        self.root = None if root is None else os.fspath(root)
        self.invocations = 0
        self._memory: dict[str, dict[str, Any]] = {}
        # key -> (lock, number of callers holding or waiting on it)
        self._locks: dict[str, tuple[threading.Lock, int]] = {}
        self._guard = threading.Lock()
        self._scratch: tempfile.TemporaryDirectory | None = None

    def path_for(self, key: str) -> str:
        if self.root is None:
            raise ConfigurationError("in-memory cache has no paths")
        return os.path.join(self.root, key[:2], f"{key}.json")

    def artifact_dir(self, key: str) -> str:
        """Directory for encoded and decoded files; created by the adapter."""
        if self.root is None:
            with self._guard:
                if self._scratch is None:
                    self._scratch = tempfile.TemporaryDirectory(prefix="hdrrdo-artifacts-")
            return os.path.join(self._scratch.name, key)
        return os.path.join(self.root, "artifacts", key[:2], key)

    def close(self) -> None:
        with self._guard:
            scratch, self._scratch = self._scratch, None
        if scratch is not None:
            scratch.cleanup()

    def __enter__(self) -> "EncodeCache":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    @contextmanager
    def _key_lock(self, key: str) -> Iterator[None]:
        with self._guard:
            lock, users = self._locks.get(key, (threading.Lock(), 0))
            self._locks[key] = (lock, users + 1)
        try:
            with lock:
                yield
        finally:
            with self._guard:
                lock, users = self._locks[key]
                if users == 1:
                    del self._locks[key]
                else:
                    self._locks[key] = (lock, users - 1)

    def get(self, key: str) -> dict[str, Any] | None:
        if key in self._memory:
            return self._memory[key]
        if self.root is None:
            return None
        try:
            with open(self.path_for(key)) as f:
                doc = json.load(f)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("ignoring corrupt cache entry %s", key)
            return None
        self._memory[key] = doc
        return doc

    def put(self, key: str, doc: dict[str, Any]) -> None:
        self._memory[key] = doc
        if self.root is None:
            return
        path = self.path_for(key)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = f"{path}.{os.getpid()}.{threading.get_ident()}.tmp"
        with open(tmp, "w") as f:
            json.dump(doc, f, sort_keys=True, indent=2)
        os.replace(tmp, path)

    def get_or_compute(
        self, key: str, compute: Callable[[], dict[str, Any]], *, count: bool = True
    ) -> dict[str, Any]:
        with self._key_lock(key):
            doc = self.get(key)
            if doc is not None:
                return doc
            doc = compute()
            if count:
                with self._guard:
                    self.invocations += 1
            self.put(key, doc)
            return doc


def config_tag(k1: float, k2: float, policy: ChromaOffsetPolicy | None = None) -> str:
    tag = f"k1={k1:.6g},k2={k2:.6g}"
    if policy is not None:
        tag += f",co={policy.k_offset:.6g}/{policy.l_offset:.6g}"
    return tag


@dataclass
class Harness:
    """Adapter plus cache plus metric evaluation.

    ``encode`` is safe to call from many threads; ``rd_points_for`` fans the
    qp encodes of one curve out over ``workers`` threads.
    """

    adapter: str = "mock"
    params: ParamsBase | None = None
    clips: Mapping[str, Clip] = field(default_factory=dict)
    cache: EncodeCache = field(default_factory=EncodeCache)
    workers: int = len(DEFAULT_QPS)
    policy: NormalisationPolicy = field(default_factory=NormalisationPolicy)

    def __post_init__(self) -> None:
        # deferred; adapters import this module
        from .adapters import load_adapter

        self.module = load_adapter(self.adapter)
        if self.params is None:
            self.params = self.module.Params()
        if not isinstance(self.params, self.module.Params):
            raise ConfigurationError(
                f"invalid adapter params; expected {self.adapter}.Params, got {type(self.params).__name__}"
            )
        if validate := getattr(self.module, "validate", None):
            validate(self.params)
        self.params_digest = digest(flatten_params(self.params))

    @classmethod
    def from_clips(cls, clips: Iterable[Clip], **kwargs) -> "Harness":
        return cls(clips={c.id: c for c in clips}, **kwargs)

    @property
    def invocations(self) -> int:
        return self.cache.invocations

    def clip(self, clip_id: str) -> Clip:
        return self.clips.get(clip_id) or Clip(clip_id)

    def cache_key(self, spec: EncodeSpec) -> str:
        return digest(
            {
                "kind": "encode",
                "spec": spec.to_dict(),
                "adapter": self.adapter,
                "params": self.params_digest,
                "clip": self.clip(spec.clip).to_dict(),
            }
        )

    def encode(self, spec: EncodeSpec) -> EncodeResult:
        if spec.adapter != self.adapter:
            raise ConfigurationError(
                f"adapter mismatch; spec wants {spec.adapter}, harness runs {self.adapter}"
            )
        key = self.cache_key(spec)

        def compute() -> dict[str, Any]:
            logger.debug("encoding %s qp=%d k=(%g, %g)", spec.clip, spec.qp, spec.k1, spec.k2)
            try:
                result = self.module.encode(
                    self.params, spec, self.clip(spec.clip), workdir=self.cache.artifact_dir(key)
                )
            except OSError as e:
                raise EncodeError(f"encode failed for clip {spec.clip} qp {spec.qp}; {e}") from e
            doc = result.to_dict()
            doc["spec_digest"] = key
            return doc

        return EncodeResult.from_dict(self.cache.get_or_compute(key, compute))

    def quality(self, spec: EncodeSpec, result: EncodeResult, metric: str) -> float:
        if result.qualities is not None:
            try:
                return float(result.qualities[metric])
            except KeyError:
                raise MetricError(
                    f"adapter {self.adapter} does not report metric {metric!r}"
                ) from None

        key = digest(
            {
                "kind": "metric",
                "encode": self.cache_key(spec),
                "metric": metric,
                "policy": self.policy._dict(),
            }
        )

        def compute() -> dict[str, Any]:
            from .metrics import compute_all
            from .y4m import read_y4m

            clip = self.clip(spec.clip)
            if clip.path is None or result.decoded is None:
                raise MetricError(f"clip {spec.clip} has no reference or decoded sequence")
            _, ref = read_y4m(clip.path)
            _, test = read_y4m(result.decoded)
            report = compute_all(ref, test, [metric], policy=self.policy)
            return {"metric": metric, "value": report[metric]}

        return float(self.cache.get_or_compute(key, compute, count=False)["value"])

    def _specs(
        self,
        clip: str,
        k1: float,
        k2: float,
        qps: Sequence[int],
        chroma_policy: ChromaOffsetPolicy | None,
        preset: str,
    ) -> list[EncodeSpec]:
        return [
            EncodeSpec(clip, qp, k1, k2, chroma_policy, self.adapter, preset) for qp in qps
        ]

    def _run(self, specs: list[EncodeSpec]) -> list[EncodeResult]:
        if self.workers > 1 and len(specs) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(self.encode, specs))
        return [self.encode(s) for s in specs]

    def rd_curves_for(
        self,
        clip: str,
        k1: float,
        k2: float,
        metrics: Iterable[str],
        qps: Sequence[int] = DEFAULT_QPS,
        *,
        chroma_policy: ChromaOffsetPolicy | None = None,
        preset: str = RANDOM_ACCESS,
    ) -> dict[str, RdCurve]:
        """One curve per metric, all built from the same set of encodes."""
        specs = self._specs(clip, k1, k2, qps, chroma_policy, preset)
        results = self._run(specs)
        tag = config_tag(k1, k2, chroma_policy)
        curves = {}
        for metric in metrics:
            points = tuple(
                RdPoint(r.bitrate_bps, self.quality(s, r, metric), s.qp)
                for s, r in zip(specs, results)
            )
            curves[metric] = RdCurve(points, metric, clip, tag)
        return curves

    def rd_points_for(
        self,
        clip: str,
        k1: float,
        k2: float,
        qps: Sequence[int] = DEFAULT_QPS,
        metric: str = "psnr-y",
        *,
        chroma_policy: ChromaOffsetPolicy | None = None,
        preset: str = RANDOM_ACCESS,
    ) -> RdCurve:
        return self.rd_curves_for(
            clip, k1, k2, [metric], qps, chroma_policy=chroma_policy, preset=preset
        )[metric]

"""
Objective quality metrics for (reference, test) frame sequences.

Every dB score is capped at 100 dB for zero error so RD points stay finite.
Sequence scores pool per-frame scores by the arithmetic mean, except HDR-VQM,
which maps the temporally pooled distortion through the similarity transform.
"""

import json
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property
from typing import Any

import colour
import numpy as np
from scipy import ndimage

from .colorimetry import (
    D65,
    LabColour,
    ciede2000,
    frame_luminance,
    frame_to_lab,
    primaries_matrix,
    pu_encode,
    ycbcr_to_rgb,
)
from .constants import (
    HDRVQM_PU_MSE_SCALE,
    HDRVQM_Q_LIMIT,
    LAB_NORMALISATION_FACTOR,
    METRIC_CAP_DB,
    MS_SSIM_K1,
    MS_SSIM_K2,
    MS_SSIM_MIN_SIZE,
    MS_SSIM_SIGMA,
    MS_SSIM_WEIGHTS,
    WPSNR_DELTA_MAX,
    WPSNR_DELTA_MIN,
    WPSNR_INTERCEPT,
    WPSNR_SLOPE,
)
from .errors import DimensionMismatchError, DomainError, HdrRdoError, MetricError
from .params import NormalisationPolicy
from .y4m import PlanarFrame, upsample_chroma_444

logger = logging.getLogger(__name__)

WEIGHT_FUNCTION_ID = "wpsnr-pow2-clip-v1"
DEFAULT_HDRVQM_BACKEND = "pu-mse"


class DynamicRange(StrEnum):
    SDR = "SDR"
    HDR = "HDR"


class Plane(StrEnum):
    LUMA = "Luma"
    CHROMA = "Chroma"
    ALL = "All"


@dataclass(frozen=True)
class MetricInfo:
    name: str
    label: str
    dynamic_range: DynamicRange
    plane: Plane
    unit: str = "dB"
    # scores that depend on chroma react to chroma qp offsets
    chroma_sensitive: bool = False


def _info(name, label, dr, plane, unit="dB") -> MetricInfo:
    return MetricInfo(name, label, dr, plane, unit, plane is not Plane.LUMA)


METRICS: dict[str, MetricInfo] = {
    m.name: m
    for m in (
        _info("ms-ssim", "MS-SSIM", DynamicRange.SDR, Plane.LUMA, ""),
        _info("ciede2000", "CIEDE2000", DynamicRange.SDR, Plane.ALL),
        _info("psnrl100", "PSNRL100", DynamicRange.HDR, Plane.LUMA),
        _info("de100", "DE100", DynamicRange.HDR, Plane.ALL),
        _info("wpsnr-y", "wPSNR-Y", DynamicRange.HDR, Plane.LUMA),
        _info("wpsnr-u", "wPSNR-U", DynamicRange.HDR, Plane.CHROMA),
        _info("wpsnr-v", "wPSNR-V", DynamicRange.HDR, Plane.CHROMA),
        _info("wpsnr-avg", "wPSNR-AVG", DynamicRange.HDR, Plane.ALL),
        _info("hdr-vqm", "HDR-VQM", DynamicRange.HDR, Plane.LUMA),
        _info("psnr-y", "PSNR-Y", DynamicRange.SDR, Plane.LUMA),
        _info("psnr-u", "PSNR-U", DynamicRange.SDR, Plane.CHROMA),
        _info("psnr-v", "PSNR-V", DynamicRange.SDR, Plane.CHROMA),
        _info("psnr-avg", "PSNR-AVG", DynamicRange.SDR, Plane.ALL),
    )
}


def metric_info(name: str) -> MetricInfo:
    try:
        return METRICS[name]
    except KeyError:
        raise MetricError(f"unknown metric {name!r}") from None


def _check_planes(ref: np.ndarray, test: np.ndarray) -> None:
    if ref.shape != test.shape:
        raise DimensionMismatchError(
            f"plane dimensions differ; {ref.shape} vs {test.shape}"
        )


def _check_frames(ref: PlanarFrame, test: PlanarFrame) -> None:
    if not ref.info.same_format(test.info):
        raise DimensionMismatchError(
            "frame formats differ; reference and test must share size, depth and subsampling"
        )


def mse_to_db(mse: float, peak: float) -> float:
    if mse <= 0.0:
        return METRIC_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), METRIC_CAP_DB)


def _squared_error(ref: np.ndarray, test: np.ndarray) -> np.ndarray:
    _check_planes(ref, test)
    diff = ref.astype(np.float64) - test.astype(np.float64)
    return diff * diff


def plane_mse(ref: np.ndarray, test: np.ndarray) -> float:
    err = _squared_error(ref, test)
    return float(np.sum(err) / err.size)


def psnr_plane(ref: np.ndarray, test: np.ndarray, peak: float) -> float:
    return mse_to_db(plane_mse(ref, test), peak)


def psnr_avg(ref: PlanarFrame, test: PlanarFrame) -> float:
    """PSNR of the plane MSEs pooled 4:1:1 (4:2:0) or 1:1:1 (4:4:4)."""
    _check_frames(ref, test)
    luma_weight_ = 4.0 if ref.info.subsampling == 420 else 1.0
    mses = [plane_mse(r, t) for r, t in zip(ref.planes, test.planes)]
    pooled = (luma_weight_ * mses[0] + mses[1] + mses[2]) / (luma_weight_ + 2.0)
    return mse_to_db(pooled, ref.info.max_code)


def luma_weight(code: np.ndarray | float, bit_depth: int = 10) -> np.ndarray:
    """wMSE weight of a reference luma code; 1 at mid-gray, in [0.5, 4]."""
    code10 = np.asarray(code, dtype=np.float64) * (1 << (10 - bit_depth))
    delta = np.clip(
        WPSNR_SLOPE * code10 + WPSNR_INTERCEPT, WPSNR_DELTA_MIN, WPSNR_DELTA_MAX
    )
    return np.power(2.0, delta / 3.0)


def weight_table() -> np.ndarray:
    return luma_weight(np.arange(1024), 10)


def _block_mean(plane: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    padded = np.pad(
        plane.astype(np.float64),
        ((0, 2 * h - plane.shape[0]), (0, 2 * w - plane.shape[1])),
        mode="edge",
    )
    return padded.reshape(h, 2, w, 2).mean(axis=(1, 3))


def wpsnr_weights(ref: PlanarFrame) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel weights for the luma plane and for the chroma planes."""
    info = ref.info
    luma = luma_weight(ref.y, info.bit_depth)
    if info.subsampling == 444:
        return luma, luma
    return luma, luma_weight(_block_mean(ref.y, info.chroma_shape), info.bit_depth)


def wpsnr_plane(
    ref: np.ndarray, test: np.ndarray, weights: np.ndarray, peak: float
) -> float:
    err = _squared_error(ref, test)
    _check_planes(ref, weights)
    wmse = float(np.sum(weights * err) / np.sum(weights))
    return mse_to_db(wmse, peak)


def wpsnr_frame(ref: PlanarFrame, test: PlanarFrame) -> tuple[float, float, float]:
    _check_frames(ref, test)
    luma, chroma = wpsnr_weights(ref)
    peak = ref.info.max_code
    return (
        wpsnr_plane(ref.y, test.y, luma, peak),
        wpsnr_plane(ref.cb, test.cb, chroma, peak),
        wpsnr_plane(ref.cr, test.cr, chroma, peak),
    )


def wpsnr_avg(ref: PlanarFrame, test: PlanarFrame) -> float:
    return math.fsum(wpsnr_frame(ref, test)) / 3.0


def _check_colour(ref: PlanarFrame, test: PlanarFrame) -> None:
    _check_frames(ref, test)
    if ref.info.colour_tags != test.info.colour_tags:
        raise MetricError(
            f"colour tags differ; {ref.info.colour_tags} vs {test.info.colour_tags}"
        )


def de100_from_lab(ref: LabColour, test: LabColour) -> float:
    delta = ciede2000(ref, test)
    return mse_to_db(float(np.mean(delta * delta)), LAB_NORMALISATION_FACTOR)


def psnrl100_from_lab(ref: LabColour, test: LabColour) -> float:
    mae = float(np.mean(np.abs(np.asarray(ref.L) - np.asarray(test.L))))
    if mae <= 0.0:
        return METRIC_CAP_DB
    return min(20.0 * math.log10(LAB_NORMALISATION_FACTOR / mae), METRIC_CAP_DB)


def de100(
    ref: PlanarFrame, test: PlanarFrame, policy: NormalisationPolicy = NormalisationPolicy()
) -> float:
    _check_colour(ref, test)
    return de100_from_lab(frame_to_lab(ref, policy), frame_to_lab(test, policy))


def psnrl100(
    ref: PlanarFrame, test: PlanarFrame, policy: NormalisationPolicy = NormalisationPolicy()
) -> float:
    _check_colour(ref, test)
    return psnrl100_from_lab(frame_to_lab(ref, policy), frame_to_lab(test, policy))


def display_lab(frame: PlanarFrame) -> LabColour:
    """CIELAB of the display-referred picture, relative to a unit white."""
    full = upsample_chroma_444(frame)
    rgb = ycbcr_to_rgb(full)
    linear = colour.models.eotf_BT1886(rgb, L_B=0, L_W=1)
    xyz = colour.algebra.vector_dot(
        primaries_matrix(full.info.colour_tags.primaries), linear
    )
    return LabColour.from_array(colour.XYZ_to_Lab(xyz, D65))


def ciede2000_score_from_lab(ref: LabColour, test: LabColour) -> float:
    mean = float(np.mean(ciede2000(ref, test)))
    if mean <= 0.0:
        return METRIC_CAP_DB
    return min(45.0 - 20.0 * math.log10(mean), METRIC_CAP_DB)


def ciede2000_score(ref: PlanarFrame, test: PlanarFrame) -> float:
    _check_colour(ref, test)
    return ciede2000_score_from_lab(display_lab(ref), display_lab(test))


def _ssim_components(
    x: np.ndarray, y: np.ndarray, c1: float, c2: float
) -> tuple[float, float]:
    def blur(v: np.ndarray) -> np.ndarray:
        # 11x11 window
        return ndimage.gaussian_filter(v, MS_SSIM_SIGMA, mode="reflect", truncate=3.5)

    mu_x, mu_y = blur(x), blur(y)
    sxx = blur(x * x) - mu_x * mu_x
    syy = blur(y * y) - mu_y * mu_y
    sxy = blur(x * y) - mu_x * mu_y
    cs = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(v: np.ndarray) -> np.ndarray:
    h, w = (v.shape[0] // 2) * 2, (v.shape[1] // 2) * 2
    return v[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(ref: np.ndarray, test: np.ndarray, peak: float) -> float:
    _check_planes(ref, test)
    if min(ref.shape) < MS_SSIM_MIN_SIZE:
        raise DimensionMismatchError(
            f"plane too small for ms-ssim; need at least {MS_SSIM_MIN_SIZE} pixels per side"
        )
    c1 = (MS_SSIM_K1 * peak) ** 2
    c2 = (MS_SSIM_K2 * peak) ** 2
    x, y = ref.astype(np.float64), test.astype(np.float64)

    score = 1.0
    last = len(MS_SSIM_WEIGHTS) - 1
    for scale, weight in enumerate(MS_SSIM_WEIGHTS):
        ssim, cs = _ssim_components(x, y, c1, c2)
        value = ssim if scale == last else cs
        score *= max(value, 0.0) ** weight
        if scale != last:
            x, y = _downsample(x), _downsample(y)
    return score


def ms_ssim_y(ref: PlanarFrame, test: PlanarFrame) -> float:
    _check_frames(ref, test)
    return ms_ssim(ref.y, test.y, ref.info.max_code)


@dataclass(frozen=True)
class HdrVqmScore:
    Q: float
    s: float
    dB: float
    saturated: bool = False


def hdrvqm_to_db(q: float) -> HdrVqmScore:
    if q < 0.0 or math.isnan(q):
        raise DomainError(f"hdr-vqm distortion must be non-negative, got {q}")
    s = 4.0 / (1.0 + math.exp(q)) - 1.0
    if q >= HDRVQM_Q_LIMIT:
        return HdrVqmScore(q, s, 0.0, saturated=True)
    # 1 - s, without cancellation near q = 0
    gap = 2.0 * math.expm1(q) / (1.0 + math.exp(q))
    if gap <= 0.0:
        return HdrVqmScore(q, s, METRIC_CAP_DB)
    return HdrVqmScore(q, s, max(min(-10.0 * math.log10(gap), METRIC_CAP_DB), 0.0))


def pu_mse_distortion(ref: PlanarFrame, test: PlanarFrame) -> float:
    """Per-frame MSE of PU-encoded luminance, scaled to the Q range."""
    _check_colour(ref, test)
    diff = pu_encode(frame_luminance(ref)) - pu_encode(frame_luminance(test))
    return float(np.mean(diff * diff)) / HDRVQM_PU_MSE_SCALE


HdrVqmBackend = Callable[[PlanarFrame, PlanarFrame], float]

HDRVQM_BACKENDS: dict[str, HdrVqmBackend] = {
    DEFAULT_HDRVQM_BACKEND: pu_mse_distortion,
}


def register_hdrvqm_backend(name: str, backend: HdrVqmBackend) -> None:
    if name in HDRVQM_BACKENDS:
        raise MetricError(f"hdr-vqm backend {name!r} already registered")
    HDRVQM_BACKENDS[name] = backend


def _hdrvqm_backend(name: str) -> HdrVqmBackend:
    try:
        return HDRVQM_BACKENDS[name]
    except KeyError:
        raise MetricError(f"unknown hdr-vqm backend {name!r}") from None


def _check_sequences(ref_seq: Sequence[PlanarFrame], test_seq: Sequence[PlanarFrame]) -> None:
    if len(ref_seq) != len(test_seq):
        raise DimensionMismatchError(
            f"sequence lengths differ; {len(ref_seq)} vs {len(test_seq)}"
        )
    if not ref_seq:
        raise DimensionMismatchError("sequences are empty")
    for ref, test in zip(ref_seq, test_seq):
        _check_frames(ref, test)


def hdrvqm_distortion(
    ref_seq: Sequence[PlanarFrame],
    test_seq: Sequence[PlanarFrame],
    backend: str = DEFAULT_HDRVQM_BACKEND,
) -> float:
    _check_sequences(ref_seq, test_seq)
    fn = _hdrvqm_backend(backend)
    return math.fsum(fn(r, t) for r, t in zip(ref_seq, test_seq)) / len(ref_seq)


class _FramePair:
    """Shared intermediates for one (reference, test) frame pair."""

    def __init__(
        self,
        ref: PlanarFrame,
        test: PlanarFrame,
        policy: NormalisationPolicy,
        backend: str,
    ) -> None:
        self.ref = ref
        self.test = test
        self.policy = policy
        self.backend = backend

    @cached_property
    def peak(self) -> int:
        return self.ref.info.max_code

    @cached_property
    def labs(self) -> tuple[LabColour, LabColour]:
        _check_colour(self.ref, self.test)
        return frame_to_lab(self.ref, self.policy), frame_to_lab(self.test, self.policy)

    @cached_property
    def wpsnr(self) -> tuple[float, float, float]:
        return wpsnr_frame(self.ref, self.test)

    @cached_property
    def hdrvqm_q(self) -> float:
        return _hdrvqm_backend(self.backend)(self.ref, self.test)


_FRAME_METRICS: dict[str, Callable[[_FramePair], float]] = {
    "psnr-y": lambda p: psnr_plane(p.ref.y, p.test.y, p.peak),
    "psnr-u": lambda p: psnr_plane(p.ref.cb, p.test.cb, p.peak),
    "psnr-v": lambda p: psnr_plane(p.ref.cr, p.test.cr, p.peak),
    "psnr-avg": lambda p: psnr_avg(p.ref, p.test),
    "wpsnr-y": lambda p: p.wpsnr[0],
    "wpsnr-u": lambda p: p.wpsnr[1],
    "wpsnr-v": lambda p: p.wpsnr[2],
    "wpsnr-avg": lambda p: math.fsum(p.wpsnr) / 3.0,
    "de100": lambda p: de100_from_lab(*p.labs),
    "psnrl100": lambda p: psnrl100_from_lab(*p.labs),
    "ms-ssim": lambda p: ms_ssim(p.ref.y, p.test.y, p.peak),
    "ciede2000": lambda p: ciede2000_score(p.ref, p.test),
    "hdr-vqm": lambda p: p.hdrvqm_q,
}


@dataclass(frozen=True)
class MetricScore:
    aggregate: float
    per_frame: tuple[float, ...]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "aggregate": self.aggregate,
            "per_frame": list(self.per_frame),
            "metadata": self.metadata,
        }


@dataclass(frozen=True)
class MetricReport:
    scores: dict[str, MetricScore]
    frames: int

    def __getitem__(self, name: str) -> float:
        return self.scores[name].aggregate

    def __contains__(self, name: str) -> bool:
        return name in self.scores

    def to_dict(self) -> dict[str, Any]:
        return {name: score.to_dict() for name, score in self.scores.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _metadata(name: str, policy: NormalisationPolicy, backend: str) -> dict[str, Any]:
    info = METRICS[name]
    meta: dict[str, Any] = {
        "unit": info.unit,
        "dynamic_range": str(info.dynamic_range),
        "plane": str(info.plane),
        "pooling": "mean",
    }
    if name in ("de100", "psnrl100"):
        meta["normalisation"] = {"factor": policy.factor, "peak": policy.peak}
    if name.startswith("wpsnr"):
        meta["weight_function"] = WEIGHT_FUNCTION_ID
    if name == "wpsnr-avg":
        meta["plane_pooling"] = "mean-of-db"
    if name == "psnr-avg":
        meta["plane_pooling"] = "mse-4:1:1"
    if name == "ciede2000":
        meta["score"] = "45-20log10(mean)"
    if name == "hdr-vqm":
        meta["backend"] = backend
        meta["pooling"] = "db-of-mean-q"
    return meta


def compute_all(
    ref_seq: Sequence[PlanarFrame],
    test_seq: Sequence[PlanarFrame],
    metric_set: Iterable[str] | None = None,
    *,
    policy: NormalisationPolicy = NormalisationPolicy(),
    backend: str = DEFAULT_HDRVQM_BACKEND,
    workers: int = 1,
) -> MetricReport:
    """Score a test sequence against its reference under every requested metric.

    Frames are evaluated independently, optionally on a thread pool; pooling
    runs in frame order so the result does not depend on ``workers``.
    """
    names = list(metric_set) if metric_set is not None else list(METRICS)
    for name in names:
        metric_info(name)
    _check_sequences(ref_seq, test_seq)
    if "hdr-vqm" in names:
        _hdrvqm_backend(backend)

    def evaluate(index: int) -> dict[str, float]:
        pair = _FramePair(ref_seq[index], test_seq[index], policy, backend)
        values = {}
        for name in names:
            try:
                values[name] = _FRAME_METRICS[name](pair)
            except HdrRdoError as e:
                raise MetricError(f"metric {name} failed on frame {index}; {e}") from e
        return values

    indices = range(len(ref_seq))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, indices))
    else:
        rows = [evaluate(i) for i in indices]

    scores = {}
    for name in names:
        series = [row[name] for row in rows]
        meta = _metadata(name, policy, backend)
        if name == "hdr-vqm":
            pooled = hdrvqm_to_db(math.fsum(series) / len(series))
            meta["Q"] = pooled.Q
            meta["s"] = pooled.s
            meta["saturated"] = pooled.saturated
            meta["q_per_frame"] = series
            per_frame = tuple(hdrvqm_to_db(q).dB for q in series)
            aggregate = pooled.dB
        else:
            per_frame = tuple(series)
            aggregate = math.fsum(series) / len(series)
        scores[name] = MetricScore(aggregate, per_frame, meta)
        logger.debug("%s: %.4f over %d frame(s)", name, aggregate, len(series))

    return MetricReport(scores, len(rows))

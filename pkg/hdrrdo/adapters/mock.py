"""
Deterministic stand-in codec with a planted lambda optimum.

Rate follows R0 * 2^(-qp/d) * P(k1, k2) with P minimal (and equal to 1) at
the planted (k1*, k2*). Quality is linear in qp and, with the default
parameters, independent of k, so the BD-Rate of (k1, k2) against (1, 1) is
exactly P(k1, k2) / P(1, 1) - 1.

Optional terms move quality by an amount equivalent to a log-rate penalty:
a metric-specific optimum (``metric_eta``) and the squared error between the
applied chroma qp offset and a planted offset model.
"""

import hashlib
import math
from collections.abc import Callable

from ..constants import (
    AV1_CHROMA_OFFSET_K,
    CHROMA_OFFSET_L,
    LAMBDA_A_MAX,
    LAMBDA_A_MIN,
)
from ..errors import ConfigurationError
from ..harness import ALL_INTRA, Clip, EncodeResult, EncodeSpec, chroma_qp_offset
from ..metrics import METRICS
from ..params import ChromaOffsetPolicy, ParamsBase
from ..utils import unit_hash

# (intercept, slope) of quality over qp, per metric
QUALITY_MODEL: dict[str, tuple[float, float]] = {
    "psnr-y": (52.0, 0.32),
    "psnr-u": (56.0, 0.30),
    "psnr-v": (56.5, 0.30),
    "psnr-avg": (53.5, 0.31),
    "wpsnr-y": (54.0, 0.34),
    "wpsnr-u": (57.0, 0.31),
    "wpsnr-v": (57.5, 0.31),
    "wpsnr-avg": (56.0, 0.32),
    "de100": (48.0, 0.28),
    "psnrl100": (62.0, 0.36),
    "ms-ssim": (0.98, 0.004),
    "ciede2000": (50.0, 0.30),
    "hdr-vqm": (40.0, 0.45),
}


class Params(ParamsBase):
    rate_base: float = 8e6
    rate_decay: float = 6.0
    # per-clip spread of log R0, and of the quality intercepts in qp units
    rate_spread: float = 0.25
    quality_spread: float = 4.0
    k1_opt: float = 1.3
    k2_opt: float = 1.6
    gamma1: float = 0.3
    gamma2: float = 0.2
    clip_spread: float = 0.0
    metric_eta: float = 0.0
    metric_spread: float = 0.0
    offset_k_opt: float = AV1_CHROMA_OFFSET_K
    offset_l_opt: float = CHROMA_OFFSET_L
    offset_sensitivity: float = 0.002
    lambda_scale: float = 3.7
    frames: int = 10
    fps: float = 24.0


MockCodecModel = Params


def default_q_dc(q_i: int) -> float:
    # libaom derives q_dc from a per-bit-depth lookup table; not reproduced
    return float(max(q_i, 4))


q_dc_lookup: Callable[[int], float] = default_q_dc


def validate(params: Params) -> None:
    if not LAMBDA_A_MIN <= params.lambda_scale <= LAMBDA_A_MAX:
        raise ConfigurationError(
            f"invalid lambda_scale {params.lambda_scale}; expected [{LAMBDA_A_MIN}, {LAMBDA_A_MAX}]"
        )
    if params.rate_base <= 0 or params.rate_decay <= 0:
        raise ConfigurationError("invalid rate model; rate_base and rate_decay must be positive")
    if params.gamma1 <= 0 or params.gamma2 <= 0:
        raise ConfigurationError("invalid rate model; gamma1 and gamma2 must be positive")
    if params.k1_opt <= 0 or params.k2_opt <= 0:
        raise ConfigurationError("invalid planted optimum; k1_opt and k2_opt must be positive")
    if params.frames < 1 or params.fps <= 0:
        raise ConfigurationError("invalid clip timing; frames and fps must be positive")
    if params.metric_eta < 0 or params.offset_sensitivity < 0:
        raise ConfigurationError("invalid quality model; sensitivities must be non-negative")


def planted_optimum(model: Params, clip: str) -> tuple[float, float]:
    spread = model.clip_spread
    return (
        model.k1_opt * math.exp(spread * unit_hash(clip, "k1")),
        model.k2_opt * math.exp(spread * unit_hash(clip, "k2")),
    )


def metric_optimum(model: Params, clip: str, metric: str) -> tuple[float, float]:
    k1, k2 = planted_optimum(model, clip)
    spread = model.metric_spread
    return (
        k1 * math.exp(spread * unit_hash(clip, metric, "k1")),
        k2 * math.exp(spread * unit_hash(clip, metric, "k2")),
    )


def _sq_log_distance(k1: float, k2: float, opt: tuple[float, float]) -> tuple[float, float]:
    return (math.log(k1) - math.log(opt[0])) ** 2, (math.log(k2) - math.log(opt[1])) ** 2


def rate_penalty(model: Params, clip: str, k1: float, k2: float) -> float:
    """P(k1, k2) >= 1, equal to 1 at the planted optimum."""
    d1, d2 = _sq_log_distance(k1, k2, planted_optimum(model, clip))
    return 1.0 + model.gamma1 * d1 + model.gamma2 * d2


def metric_penalty(model: Params, clip: str, metric: str, k1: float, k2: float) -> float:
    """Log-rate equivalent of the quality lost away from the metric's optimum."""
    if model.metric_eta == 0:
        return 0.0
    d1, d2 = _sq_log_distance(k1, k2, metric_optimum(model, clip, metric))
    return math.log1p(model.metric_eta * (d1 + d2))


def offset_penalty(model: Params, qp: int, offset: int) -> float:
    """Zero without offsets; minimal where the offset matches the planted model."""
    planted = chroma_qp_offset(
        qp, ChromaOffsetPolicy(1.0, model.offset_k_opt, model.offset_l_opt)
    )
    return model.offset_sensitivity * ((offset - planted) ** 2 - planted**2)


def lambda_log(model: Params, spec: EncodeSpec) -> str:
    q_i = 4 * spec.qp
    q_dc = q_dc_lookup(q_i)
    lambda0 = model.lambda_scale * q_dc * q_dc
    return (
        f"qp={spec.qp} q_i={q_i} q_dc={q_dc:g} lambda0={lambda0:.6g} "
        f"lambda_kf={spec.k1 * lambda0:.6g} lambda_gf={spec.k2 * lambda0:.6g} "
        f"cb_offset={spec.cb_offset} cr_offset={spec.cr_offset} preset={spec.preset}"
    )


def mock_encode(spec: EncodeSpec, model: Params) -> EncodeResult:
    validate(model)
    clip, qp, d = spec.clip, spec.qp, model.rate_decay
    base = model.rate_base * math.exp(model.rate_spread * unit_hash(clip, "rate"))
    rate = base * 2.0 ** (-qp / d) * rate_penalty(model, clip, spec.k1, spec.k2)

    chroma = offset_penalty(model, qp, spec.cb_offset)
    qualities = {}
    for metric, (a, b) in QUALITY_MODEL.items():
        shift = metric_penalty(model, clip, metric, spec.k1, spec.k2)
        if METRICS[metric].chroma_sensitive:
            shift += chroma
        intercept = a + b * model.quality_spread * unit_hash(clip, metric, "quality")
        qualities[metric] = intercept - b * qp - b * (d / math.log(2.0)) * shift

    log = lambda_log(model, spec)
    return EncodeResult(
        bitrate_bps=rate,
        frames=1 if spec.preset == ALL_INTRA else model.frames,
        adapter="mock",
        log_digest=hashlib.sha256(log.encode("utf-8")).hexdigest(),
        qualities=qualities,
    )


def encode(params: Params, spec: EncodeSpec, clip: Clip, *, workdir: str = "") -> EncodeResult:
    return mock_encode(spec, params)

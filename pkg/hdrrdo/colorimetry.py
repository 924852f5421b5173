"""
Transfer functions and colour conversions behind the HDR metrics.

The chain from a decoded picture to CIELAB is
Y'CbCr 4:2:0 -> Y'CbCr 4:4:4 -> R'G'B' -> linear RGB (cd/m^2) -> XYZ -> L*a*b*.
Absolute luminance is normalised by the PQ peak and scaled by the factor 100
before the L* law, so the PQ peak white maps to L* = 100.
"""

import logging
from dataclasses import dataclass
from functools import cache

import colour
import numpy as np

from .constants import PQ_PEAK_NITS, SDR_WHITE_NITS
from .errors import DomainError
from .params import NormalisationPolicy
from .y4m import ColourRange, ColourTags, PlanarFrame, upsample_chroma_444

logger = logging.getLogger(__name__)

D65 = colour.CCS_ILLUMINANTS["CIE 1931 2 Degree Standard Observer"]["D65"]

# PU21 banding + glare fit, absolute luminance in [0.005, 10000] cd/m^2
_PU21 = (
    0.353487901,
    0.3734658629,
    8.277049286e-05,
    0.9062562627,
    0.09150303166,
    0.9099517204,
    596.3148142,
)
PU_MIN_NITS = 0.005


@dataclass(frozen=True, eq=False)
class LinearRgbFrame:
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    primaries: str

    def __post_init__(self) -> None:
        for plane in (self.r, self.g, self.b):
            if plane.size and plane.min() < 0:
                raise DomainError("invalid linear rgb; values must be non-negative")

    @property
    def height(self) -> int:
        return self.r.shape[0]

    @property
    def width(self) -> int:
        return self.r.shape[1]

    @property
    def rgb(self) -> np.ndarray:
        return np.stack([self.r, self.g, self.b], axis=-1)


@dataclass(frozen=True, eq=False)
class LabColour:
    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_array(cls, lab: np.ndarray) -> "LabColour":
        lab = np.asarray(lab, dtype=np.float64)
        return cls(lab[..., 0], lab[..., 1], lab[..., 2])

    @property
    def C(self) -> np.ndarray:
        return np.hypot(self.a, self.b)

    @property
    def h(self) -> np.ndarray:
        return np.mod(np.degrees(np.arctan2(self.b, self.a)), 360.0)

    @property
    def lab(self) -> np.ndarray:
        return np.stack(
            [np.asarray(self.L), np.asarray(self.a), np.asarray(self.b)], axis=-1
        ).astype(np.float64)


def pq_eotf(code: np.ndarray | float) -> np.ndarray:
    """ST 2084 EOTF: normalised code value to absolute luminance in cd/m^2."""
    code = np.asarray(code, dtype=np.float64)
    if code.size and (code.min() < 0.0 or code.max() > 1.0):
        logger.warning("pq code value(s) outside [0, 1]; clamped")
        code = np.clip(code, 0.0, 1.0)
    return colour.models.eotf_ST2084(code, L_p=PQ_PEAK_NITS)


def pq_inverse_eotf(luminance: np.ndarray | float) -> np.ndarray:
    luminance = np.asarray(luminance, dtype=np.float64)
    if luminance.size and luminance.min() < 0.0:
        raise DomainError("pq inverse eotf is undefined for negative luminance")
    if luminance.size and luminance.max() > PQ_PEAK_NITS:
        logger.warning("luminance above %g cd/m^2; clamped", PQ_PEAK_NITS)
        luminance = np.minimum(luminance, PQ_PEAK_NITS)
    return colour.models.eotf_inverse_ST2084(luminance, L_p=PQ_PEAK_NITS)


def _tags(tags: ColourTags | str) -> ColourTags:
    try:
        return ColourTags(tags)
    except ValueError:
        raise DomainError(f"unknown matrix tag {tags!r}") from None


def ycbcr_to_rgb(
    frame: PlanarFrame, colour_range: ColourRange | None = None
) -> np.ndarray:
    """Y'CbCr codes of a 4:4:4 frame to non-linear R'G'B' in [0, 1]."""
    info = frame.info
    if info.subsampling != 444:
        raise DomainError("ycbcr_to_rgb requires 4:4:4 input; upsample chroma first")
    tags = _tags(info.colour_tags)
    colour_range = colour_range or info.colour_range

    ycbcr = np.stack(frame.planes, axis=-1).astype(np.float64)
    rgb = colour.YCbCr_to_RGB(
        ycbcr,
        K=colour.WEIGHTS_YCBCR[tags.matrix],
        in_bits=info.bit_depth,
        in_legal=colour_range == ColourRange.LIMITED,
        in_int=True,
    )
    return np.clip(rgb, 0.0, 1.0)


def rgb_to_ycbcr(
    rgb: np.ndarray,
    tags: ColourTags | str,
    bit_depth: int,
    colour_range: ColourRange = ColourRange.LIMITED,
) -> np.ndarray:
    """Non-linear R'G'B' in [0, 1] to integer Y'CbCr codes, stacked last."""
    tags = _tags(tags)
    codes = colour.RGB_to_YCbCr(
        np.asarray(rgb, dtype=np.float64),
        K=colour.WEIGHTS_YCBCR[tags.matrix],
        out_bits=bit_depth,
        out_legal=colour_range == ColourRange.LIMITED,
        out_int=True,
    )
    return np.clip(codes, 0, (1 << bit_depth) - 1).astype(np.int64)


def linearise(rgb: np.ndarray, tags: ColourTags | str) -> LinearRgbFrame:
    tags = _tags(tags)
    if tags is ColourTags.BT2020_PQ:
        linear = pq_eotf(rgb)
    else:
        linear = colour.models.eotf_BT1886(rgb, L_B=0, L_W=SDR_WHITE_NITS)
    linear = np.maximum(linear, 0.0)
    return LinearRgbFrame(linear[..., 0], linear[..., 1], linear[..., 2], tags.primaries)


@cache
def primaries_matrix(primaries: str) -> np.ndarray:
    space = colour.RGB_COLOURSPACES[primaries]
    return colour.normalised_primary_matrix(space.primaries, space.whitepoint)


def rgb_to_xyz(rgb: np.ndarray | LinearRgbFrame, primaries: str | None = None) -> np.ndarray:
    if isinstance(rgb, LinearRgbFrame):
        primaries = primaries or rgb.primaries
        rgb = rgb.rgb
    if primaries is None:
        raise DomainError("rgb_to_xyz requires a primaries tag")
    return colour.algebra.vector_dot(primaries_matrix(primaries), rgb)


def xyz_to_lab(
    xyz: np.ndarray,
    white: np.ndarray = D65,
    policy: NormalisationPolicy = NormalisationPolicy(),
) -> LabColour:
    """Absolute XYZ (cd/m^2) to CIELAB on the factor-100 normalised scale."""
    xyz = np.asarray(xyz, dtype=np.float64)
    if xyz.size and xyz.min() < -1e-9 * policy.peak:
        raise DomainError("xyz_to_lab is undefined for negative tristimulus values")
    scaled = np.maximum(xyz, 0.0) * (policy.factor / policy.peak)
    with colour.domain_range_scale("100"):
        lab = colour.XYZ_to_Lab(scaled, white)
    return LabColour.from_array(lab)


# |h2' - h1'| this close to 180 degrees counts as exactly opposite hues
HUE_TIE_DEGREES = 1e-9


def _prime(c: LabColour, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = (1.0 + g) * c.a
    return np.hypot(a, c.b), np.mod(np.degrees(np.arctan2(c.b, a)), 360.0)


def ciede2000(c1: LabColour, c2: LabColour) -> np.ndarray:
    """CIEDE2000 colour difference with unit weighting factors.

    Hue pairs that are opposite up to rounding take the ``<= 180`` branch
    for both the hue difference and the mean hue, so the result does not
    depend on floating-point noise in the hue angles.
    """
    c7 = np.power((c1.C + c2.C) / 2.0, 7)
    g = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0**7)))
    cp1, hp1 = _prime(c1, g)
    cp2, hp2 = _prime(c2, g)

    dh = hp2 - hp1
    tie = np.isclose(np.abs(dh), 180.0, rtol=0.0, atol=HUE_TIE_DEGREES)
    dh = np.where(tie, np.copysign(180.0, dh), dh)
    near = np.abs(dh) <= 180.0
    chromatic = cp1 * cp2 != 0.0

    dhp = np.where(near, dh, dh - np.copysign(360.0, dh))
    dhp = np.where(chromatic, dhp, 0.0)
    d_lp = np.asarray(c2.L, dtype=np.float64) - c1.L
    d_cp = cp2 - cp1
    d_hp = 2.0 * np.sqrt(cp1 * cp2) * np.sin(np.radians(dhp / 2.0))

    hsum = hp1 + hp2
    h_bar = np.where(near, hsum / 2.0, np.where(hsum < 360.0, hsum + 360.0, hsum - 360.0) / 2.0)
    h_bar = np.where(chromatic, h_bar, hsum)
    l_bar = (np.asarray(c1.L, dtype=np.float64) + c2.L) / 2.0
    cp_bar = (cp1 + cp2) / 2.0

    t = (
        1.0
        - 0.17 * np.cos(np.radians(h_bar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * h_bar))
        + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0))
    )
    d_theta = 30.0 * np.exp(-np.square((h_bar - 275.0) / 25.0))
    cp7 = np.power(cp_bar, 7)
    r_c = 2.0 * np.sqrt(cp7 / (cp7 + 25.0**7))
    l50 = np.square(l_bar - 50.0)
    s_l = 1.0 + 0.015 * l50 / np.sqrt(20.0 + l50)
    s_c = 1.0 + 0.045 * cp_bar
    s_h = 1.0 + 0.015 * cp_bar * t
    r_t = -np.sin(np.radians(2.0 * d_theta)) * r_c

    lt, ct, ht = d_lp / s_l, d_cp / s_c, d_hp / s_h
    return np.sqrt(np.maximum(lt * lt + ct * ct + ht * ht + r_t * ct * ht, 0.0))


def frame_to_linear_rgb(frame: PlanarFrame) -> LinearRgbFrame:
    full = upsample_chroma_444(frame)
    return linearise(ycbcr_to_rgb(full), full.info.colour_tags)


def frame_to_lab(
    frame: PlanarFrame, policy: NormalisationPolicy = NormalisationPolicy()
) -> LabColour:
    linear = frame_to_linear_rgb(frame)
    return xyz_to_lab(rgb_to_xyz(linear), D65, policy)


def frame_luminance(frame: PlanarFrame) -> np.ndarray:
    """Absolute luminance in cd/m^2, the Y row of the RGB to XYZ matrix."""
    linear = frame_to_linear_rgb(frame)
    return rgb_to_xyz(linear)[..., 1]


def pu_encode(luminance: np.ndarray | float) -> np.ndarray:
    """Perceptually uniform encoding of absolute luminance."""
    p = _PU21
    y = np.clip(np.asarray(luminance, dtype=np.float64), PU_MIN_NITS, PQ_PEAK_NITS)
    yp = np.power(y, p[3])
    v = p[6] * (np.power((p[0] + p[1] * yp) / (1.0 + p[2] * yp), p[4]) - p[5])
    return np.maximum(v, 0.0)

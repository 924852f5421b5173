"""
Y4M container I/O and planar frame plumbing.

Frames are held as immutable numpy planes: ``uint8`` for 8-bit streams and
``uint16`` for 10-bit streams, which are stored on disk as little-endian
16-bit words. Only progressive 4:2:0 and 4:4:4 content is supported.

Y4M carries no colour metadata of its own; an ``XCOLORSPACE`` extension tag
names the colour tags and ``XCOLORRANGE`` (the ffmpeg convention) the range.
"""

import logging
import math
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field, replace
from enum import StrEnum
from fractions import Fraction
from typing import BinaryIO

import numpy as np
from scipy import sparse

from .constants import LANCZOS_ORDER
from .errors import TruncatedFrameError, Y4mError

logger = logging.getLogger(__name__)

MAGIC = b"YUV4MPEG2"
FRAME_MARKER = b"FRAME"
_MAX_HEADER = 4096

_COLOURSPACE_TOKENS: dict[str, tuple[int, int]] = {
    "420": (420, 8),
    "420jpeg": (420, 8),
    "420mpeg2": (420, 8),
    "420paldv": (420, 8),
    "420p10": (420, 10),
    "444": (444, 8),
    "444p10": (444, 10),
}


class ColourTags(StrEnum):
    BT2020_PQ = "BT2020_PQ"
    BT709_GAMMA = "BT709_GAMMA"

    @property
    def primaries(self) -> str:
        return "ITU-R BT.2020" if self is ColourTags.BT2020_PQ else "ITU-R BT.709"

    @property
    def transfer(self) -> str:
        return "SMPTE2084" if self is ColourTags.BT2020_PQ else "BT1886"

    @property
    def matrix(self) -> str:
        return self.primaries


class ColourRange(StrEnum):
    LIMITED = "LIMITED"
    FULL = "FULL"


@dataclass(frozen=True)
class StreamInfo:
    width: int
    height: int
    fps_num: int = 24
    fps_den: int = 1
    bit_depth: int = 8
    subsampling: int = 420
    colour_tags: ColourTags | None = None
    colour_range: ColourRange = ColourRange.LIMITED
    aspect: str | None = None
    extra_tags: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise Y4mError(
                f"invalid stream; dimensions must be positive, got {self.width}x{self.height}"
            )
        if self.bit_depth not in (8, 10):
            raise Y4mError(f"invalid stream; unsupported bit depth {self.bit_depth}")
        if self.subsampling not in (420, 444):
            raise Y4mError(f"invalid stream; unsupported subsampling {self.subsampling}")
        if self.fps_den <= 0 or self.fps_num <= 0:
            raise Y4mError("invalid stream; frame rate must be positive")
        if self.colour_tags is None:
            tags = ColourTags.BT2020_PQ if self.bit_depth == 10 else ColourTags.BT709_GAMMA
            object.__setattr__(self, "colour_tags", tags)

    @property
    def fps(self) -> Fraction:
        return Fraction(self.fps_num, self.fps_den)

    @property
    def max_code(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.uint16 if self.bit_depth > 8 else np.uint8)

    @property
    def luma_shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def chroma_shape(self) -> tuple[int, int]:
        if self.subsampling == 420:
            return (math.ceil(self.height / 2), math.ceil(self.width / 2))
        return self.luma_shape

    @property
    def frame_bytes(self) -> int:
        ch, cw = self.chroma_shape
        samples = self.width * self.height + 2 * ch * cw
        return samples * self.dtype.itemsize

    @property
    def colourspace_token(self) -> str:
        base = str(self.subsampling)
        if self.bit_depth == 10:
            return f"{base}p10"
        return "420jpeg" if self.subsampling == 420 else base

    def same_format(self, other: "StreamInfo") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.bit_depth == other.bit_depth
            and self.subsampling == other.subsampling
        )


@dataclass(frozen=True, eq=False)
class PlanarFrame:
    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray
    info: StreamInfo

    def __post_init__(self) -> None:
        info = self.info
        for name, plane, shape in (
            ("y", self.y, info.luma_shape),
            ("cb", self.cb, info.chroma_shape),
            ("cr", self.cr, info.chroma_shape),
        ):
            if plane.shape != shape:
                raise Y4mError(
                    f"invalid frame; plane {name} is {plane.shape}, expected {shape}"
                )
            if plane.dtype != info.dtype:
                raise Y4mError(
                    f"invalid frame; plane {name} has dtype {plane.dtype}, expected {info.dtype}"
                )
            if plane.size and int(plane.max()) > info.max_code:
                raise Y4mError(
                    f"invalid frame; plane {name} exceeds {info.bit_depth}-bit range"
                )
            plane.setflags(write=False)

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.y, self.cb, self.cr)


def frame_from_planes(
    info: StreamInfo, y: np.ndarray, cb: np.ndarray, cr: np.ndarray
) -> PlanarFrame:
    """Build a frame from arbitrary integer arrays, casting to the stream dtype."""
    planes = []
    for plane in (y, cb, cr):
        arr = np.asarray(plane)
        if arr.size and (arr.min() < 0 or arr.max() > info.max_code):
            raise Y4mError(f"invalid frame; samples outside [0, {info.max_code}]")
        planes.append(np.array(arr, dtype=info.dtype, copy=True))
    return PlanarFrame(planes[0], planes[1], planes[2], info)


def _parse_int(value: str, token: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise Y4mError(f"malformed integer in {token!r}") from None


def _parse_rational(value: str, token: str) -> tuple[int, int]:
    try:
        num, den = value.split(":")
        return int(num), int(den)
    except ValueError:
        raise Y4mError(f"malformed rational in {token!r}") from None


def parse_y4m_header(data: bytes) -> tuple[StreamInfo, int]:
    """Parse the stream header, returning it and the offset of the first frame."""
    if not data.startswith(MAGIC):
        raise Y4mError("invalid y4m; missing YUV4MPEG2 magic")
    end = data.find(b"\n", 0, _MAX_HEADER)
    if end < 0:
        raise Y4mError("invalid y4m; unterminated stream header")

    try:
        tokens = data[len(MAGIC) : end].decode("ascii").split()
    except UnicodeDecodeError:
        raise Y4mError("invalid y4m; stream header is not ascii") from None
    values: dict[str, object] = {}
    extras: list[str] = []
    for token in tokens:
        key, value = token[0], token[1:]
        if key == "W":
            values["width"] = _parse_int(value, token)
        elif key == "H":
            values["height"] = _parse_int(value, token)
        elif key == "F":
            num, den = _parse_rational(value, token)
            if den <= 0 or num <= 0:
                raise Y4mError(f"malformed rational in {token!r}")
            values["fps_num"], values["fps_den"] = num, den
        elif key == "I":
            if value not in ("p", "?"):
                raise Y4mError(f"unsupported interlacing {token!r}; only progressive content")
        elif key == "A":
            _parse_rational(value, token)
            values["aspect"] = value
        elif key == "C":
            if value not in _COLOURSPACE_TOKENS:
                raise Y4mError(f"unsupported colourspace token {token!r}")
            values["subsampling"], values["bit_depth"] = _COLOURSPACE_TOKENS[value]
        elif token.startswith("XCOLORSPACE="):
            try:
                values["colour_tags"] = ColourTags(token.split("=", 1)[1])
            except ValueError:
                raise Y4mError(f"unsupported colour tags {token!r}") from None
        elif token.startswith("XCOLORRANGE="):
            try:
                values["colour_range"] = ColourRange(token.split("=", 1)[1].upper())
            except ValueError:
                raise Y4mError(f"unsupported colour range {token!r}") from None
        else:
            extras.append(token)

    for required in ("width", "height", "fps_num"):
        if required not in values:
            raise Y4mError(f"invalid y4m; header is missing {required}")

    info = StreamInfo(extra_tags=tuple(extras), **values)  # type: ignore[arg-type]
    return info, end + 1


def format_y4m_header(info: StreamInfo) -> bytes:
    tokens = [
        MAGIC.decode(),
        f"W{info.width}",
        f"H{info.height}",
        f"F{info.fps_num}:{info.fps_den}",
        "Ip",
    ]
    if info.aspect is not None:
        tokens.append(f"A{info.aspect}")
    tokens.append(f"C{info.colourspace_token}")
    tokens.append(f"XCOLORSPACE={info.colour_tags}")
    tokens.append(f"XCOLORRANGE={info.colour_range}")
    tokens.extend(info.extra_tags)
    return (" ".join(tokens) + "\n").encode("ascii")


def _read_exact(stream: BinaryIO, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _decode_plane(raw: bytes, shape: tuple[int, int], info: StreamInfo) -> np.ndarray:
    if info.bit_depth == 8:
        return np.frombuffer(raw, dtype=np.uint8).reshape(shape)

    samples = np.frombuffer(raw, dtype="<u2").astype(np.uint16)
    corrupt = samples > info.max_code
    if corrupt.any():
        logger.warning(
            "corrupt sample(s) exceeding %d-bit range; clamped %d value(s)",
            info.bit_depth,
            int(corrupt.sum()),
        )
        samples = np.minimum(samples, info.max_code).astype(np.uint16)
    return samples.reshape(shape)


def read_frame(stream: BinaryIO, info: StreamInfo) -> PlanarFrame | None:
    """Read one frame; returns ``None`` at a clean end of stream."""
    line = stream.readline(_MAX_HEADER)
    if not line:
        return None
    if not line.startswith(FRAME_MARKER) or not line.endswith(b"\n"):
        raise Y4mError("invalid y4m; expected FRAME marker")

    planes = []
    ch, cw = info.chroma_shape
    itemsize = info.dtype.itemsize
    for shape in (info.luma_shape, (ch, cw), (ch, cw)):
        size = shape[0] * shape[1] * itemsize
        raw = _read_exact(stream, size)
        if len(raw) != size:
            raise TruncatedFrameError(
                f"truncated frame; expected {size} bytes, got {len(raw)}"
            )
        planes.append(_decode_plane(raw, shape, info))

    return PlanarFrame(planes[0], planes[1], planes[2], info)


def iter_frames(stream: BinaryIO, info: StreamInfo) -> Iterator[PlanarFrame]:
    while (frame := read_frame(stream, info)) is not None:
        yield frame


def read_y4m(path: str | os.PathLike) -> tuple[StreamInfo, list[PlanarFrame]]:
    with open(path, "rb") as f:
        head = f.read(_MAX_HEADER)
        info, offset = parse_y4m_header(head)
        f.seek(offset)
        return info, list(iter_frames(f, info))


def _encode_plane(plane: np.ndarray, info: StreamInfo) -> bytes:
    if info.bit_depth == 8:
        return plane.astype(np.uint8).tobytes()
    return plane.astype("<u2").tobytes()


def write_y4m(frames: Iterable[PlanarFrame], info: StreamInfo, sink: BinaryIO) -> int:
    """Write a stream, returning the number of bytes written."""
    frames = list(frames)
    for idx, frame in enumerate(frames):
        if not frame.info.same_format(info):
            raise Y4mError(f"inconsistent input; frame {idx} does not match stream info")

    written = sink.write(format_y4m_header(info))
    for frame in frames:
        written += sink.write(FRAME_MARKER + b"\n")
        for plane in frame.planes:
            written += sink.write(_encode_plane(plane, info))
    return written


def write_y4m_file(
    path: str | os.PathLike, frames: Iterable[PlanarFrame], info: StreamInfo
) -> int:
    with open(path, "wb") as f:
        return write_y4m(frames, info, f)


def _upsample_axis(plane: np.ndarray, size: int, axis: int) -> np.ndarray:
    # co-sited: even outputs copy, odd outputs average both neighbours; the
    # last odd output on a border repeats its only neighbour. Result is 2x.
    n = plane.shape[axis]
    idx = np.arange(size)
    a = idx // 2
    b = np.minimum((idx + 1) // 2, n - 1)
    return np.take(plane, a, axis=axis) + np.take(plane, b, axis=axis)


def upsample_chroma_444(frame: PlanarFrame) -> PlanarFrame:
    info = frame.info
    if info.subsampling == 444:
        return frame

    h, w = info.luma_shape
    out = []
    for plane in (frame.cb, frame.cr):
        wide = _upsample_axis(plane.astype(np.int32), w, axis=1)
        full = _upsample_axis(wide, h, axis=0)
        out.append(((full + 2) >> 2).astype(info.dtype))

    return PlanarFrame(frame.y, out[0], out[1], replace(info, subsampling=444))


def lanczos_kernel(x: np.ndarray, order: int = LANCZOS_ORDER) -> np.ndarray:
    return np.where(np.abs(x) < order, np.sinc(x) * np.sinc(x / order), 0.0)


def lanczos_weights(src: int, dst: int, order: int = LANCZOS_ORDER) -> sparse.csr_array:
    """Resampling matrix of shape (dst, src); each row sums to one.

    Downscaling stretches the kernel by the scale factor; taps falling outside
    the source replicate the edge sample.
    """
    scale = dst / src
    stretch = min(scale, 1.0)
    support = order / stretch
    centers = (np.arange(dst) + 0.5) / scale - 0.5
    first = np.floor(centers - support).astype(np.int64) + 1
    taps = int(np.ceil(2 * support)) + 1
    cols = first[:, None] + np.arange(taps)[None, :]
    weights = lanczos_kernel((centers[:, None] - cols) * stretch, order)
    weights /= weights.sum(axis=1, keepdims=True)

    rows = np.repeat(np.arange(dst), taps)
    cols = np.clip(cols, 0, src - 1).ravel()
    matrix = sparse.coo_array((weights.ravel(), (rows, cols)), shape=(dst, src))
    return matrix.tocsr()


def _resample_plane(plane: np.ndarray, dst_h: int, dst_w: int, max_code: int) -> np.ndarray:
    src_h, src_w = plane.shape
    values = plane.astype(np.float64)
    if dst_w != src_w:
        values = (lanczos_weights(src_w, dst_w) @ values.T).T
    if dst_h != src_h:
        values = lanczos_weights(src_h, dst_h) @ values
    return np.clip(np.rint(values), 0, max_code)


def lanczos5_resample(frame: PlanarFrame, target_w: int, target_h: int) -> PlanarFrame:
    info = frame.info
    if target_w <= 0 or target_h <= 0:
        raise Y4mError(f"invalid target size {target_w}x{target_h}")
    if (target_w, target_h) == (info.width, info.height):
        return frame

    target = replace(info, width=target_w, height=target_h)
    y = _resample_plane(frame.y, target_h, target_w, info.max_code)
    ch, cw = target.chroma_shape
    cb = _resample_plane(frame.cb, ch, cw, info.max_code)
    cr = _resample_plane(frame.cr, ch, cw, info.max_code)
    return frame_from_planes(target, y, cb, cr)

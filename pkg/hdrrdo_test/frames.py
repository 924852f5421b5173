"""Synthetic frames and sequences shared by the tests."""

import numpy as np

from hdrrdo.y4m import PlanarFrame, StreamInfo, frame_from_planes


def hdr_info(width: int = 64, height: int = 64, subsampling: int = 420) -> StreamInfo:
    return StreamInfo(width, height, bit_depth=10, subsampling=subsampling)


def gradient_frame(info: StreamInfo, seed: int = 0) -> PlanarFrame:
    """Smooth luma ramp with mild texture and near-neutral chroma."""
    rng = np.random.default_rng(seed)
    h, w = info.luma_shape
    ch, cw = info.chroma_shape
    lo, hi = (64, 940) if info.bit_depth == 10 else (16, 235)
    mid = 512 if info.bit_depth == 10 else 128
    ramp = np.linspace(lo + 40, hi - 40, w)[None, :] + np.linspace(-20, 20, h)[:, None]
    y = np.clip(ramp + rng.integers(-8, 9, size=(h, w)), lo, hi)
    cb = np.clip(mid + rng.integers(-30, 31, size=(ch, cw)), lo, hi)
    cr = np.clip(mid + rng.integers(-30, 31, size=(ch, cw)), lo, hi)
    return frame_from_planes(info, y, cb, cr)


def add_noise(
    frame: PlanarFrame, amplitude: int, seed: int = 1, *, luma: bool = True, chroma: bool = True
) -> PlanarFrame:
    rng = np.random.default_rng(seed)
    top = frame.info.max_code

    def noisy(plane: np.ndarray, on: bool) -> np.ndarray:
        if not on:
            return plane
        delta = rng.integers(-amplitude, amplitude + 1, size=plane.shape)
        return np.clip(plane.astype(np.int64) + delta, 0, top)

    return frame_from_planes(
        frame.info, noisy(frame.y, luma), noisy(frame.cb, chroma), noisy(frame.cr, chroma)
    )


def sequence(info: StreamInfo, count: int = 2) -> list[PlanarFrame]:
    return [gradient_frame(info, seed=i) for i in range(count)]

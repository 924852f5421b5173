import csv
import os
import time
from unittest import TestCase

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrrdo.colorimetry import (
    D65,
    LabColour,
    LinearRgbFrame,
    ciede2000,
    frame_luminance,
    frame_to_lab,
    linearise,
    pq_eotf,
    pq_inverse_eotf,
    pu_encode,
    rgb_to_xyz,
    rgb_to_ycbcr,
    xyz_to_lab,
    ycbcr_to_rgb,
)
from hdrrdo.errors import DomainError
from hdrrdo.y4m import ColourRange, ColourTags, StreamInfo, frame_from_planes

from .frames import gradient_frame, hdr_info

DATA = os.path.join(os.path.dirname(__file__), "data")


def _pairs() -> list[dict[str, float]]:
    with open(os.path.join(DATA, "ciede2000_pairs.csv"), newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def _uniform_frame(y: int, cb: int, cr: int, info: StreamInfo):
    ch, cw = info.chroma_shape
    return frame_from_planes(
        info, np.full(info.luma_shape, y), np.full((ch, cw), cb), np.full((ch, cw), cr)
    )


class TestPq(TestCase):
    def test_peak(self):
        assert float(pq_eotf(1.0)) == pytest.approx(10000.0, rel=1e-6)
        assert float(pq_eotf(0.0)) == pytest.approx(0.0, abs=1e-9)

    def test_round_trip(self):
        luminance = np.logspace(-3, 4, 1000)
        code = pq_inverse_eotf(luminance)
        back = pq_eotf(code)

        np.testing.assert_allclose(back, luminance, rtol=1e-6)

    def test_monotone(self):
        code = np.linspace(0.0, 1.0, 2001)
        assert np.all(np.diff(pq_eotf(code)) > 0)

    def test_out_of_range_code_clamps(self):
        with self.assertLogs("hdrrdo.colorimetry", level="WARNING"):
            value = pq_eotf(np.array([1.2]))
        assert float(value[0]) == pytest.approx(10000.0, rel=1e-6)

    def test_negative_luminance(self):
        with pytest.raises(DomainError, match="negative luminance"):
            pq_inverse_eotf(-1.0)

    def test_excess_luminance_clamps(self):
        with self.assertLogs("hdrrdo.colorimetry", level="WARNING"):
            code = pq_inverse_eotf(20000.0)
        assert float(code) == pytest.approx(1.0, abs=1e-9)


class TestCiede2000(TestCase):
    def test_verification_pairs(self):
        pairs = _pairs()
        start = time.monotonic()
        c1 = LabColour.from_array([[p["L1"], p["a1"], p["b1"]] for p in pairs])
        c2 = LabColour.from_array([[p["L2"], p["a2"], p["b2"]] for p in pairs])
        got = ciede2000(c1, c2)
        elapsed = time.monotonic() - start

        assert len(pairs) == 34
        for p, value in zip(pairs, got):
            assert float(value) == pytest.approx(p["delta_e"], abs=1e-4), p
        assert elapsed < 1.0

    def test_opposite_hues_take_the_near_branch(self):
        # hues exactly 180 degrees apart, with and without rounding noise
        for a2 in (0.001, 0.001 * (1.0 + 1e-12), 0.001 * (1.0 - 1e-12)):
            c1 = LabColour.from_array([[50.0, -0.001, 2.49], [50.0, 2.49, -0.001]])
            c2 = LabColour.from_array([[50.0, a2, -2.49], [50.0, -2.49, a2]])
            forward = ciede2000(c1, c2)
            backward = ciede2000(c2, c1)

            assert forward.tolist() == pytest.approx([4.8045, 7.1792], abs=1e-4)
            assert backward.tolist() == pytest.approx(forward.tolist(), abs=1e-12)

    def test_identical_colours(self):
        c = LabColour.from_array([[50.0, 10.0, -20.0]])
        assert float(ciede2000(c, c)[0]) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(
        st.tuples(st.floats(0, 100), st.floats(-120, 120), st.floats(-120, 120)),
        st.tuples(st.floats(0, 100), st.floats(-120, 120), st.floats(-120, 120)),
    )
    def test_symmetric(self, a, b):
        c1 = LabColour.from_array([a])
        c2 = LabColour.from_array([b])
        forward = float(ciede2000(c1, c2)[0])
        backward = float(ciede2000(c2, c1)[0])

        assert forward >= 0.0
        assert forward == pytest.approx(backward, abs=1e-9)

    def test_hue_angle_wraps(self):
        c = LabColour.from_array([[50.0, 0.0, -10.0]])
        assert float(c.h[0]) == pytest.approx(270.0)
        assert float(c.C[0]) == pytest.approx(10.0)


class TestConversions(TestCase):
    def test_ycbcr_round_trip_full_range(self):
        rng = np.random.default_rng(3)
        rgb = rng.uniform(0.05, 0.95, size=(8, 8, 3))
        info = StreamInfo(8, 8, bit_depth=10, subsampling=444, colour_range=ColourRange.FULL)
        codes = rgb_to_ycbcr(rgb, ColourTags.BT2020_PQ, 10, ColourRange.FULL)
        frame = frame_from_planes(info, codes[..., 0], codes[..., 1], codes[..., 2])
        back = ycbcr_to_rgb(frame)

        np.testing.assert_allclose(back, rgb, atol=2.5 / 1023)

    def test_limited_range_black_and_white(self):
        info = StreamInfo(2, 2, bit_depth=10, subsampling=444)
        black = ycbcr_to_rgb(_uniform_frame(64, 512, 512, info))
        white = ycbcr_to_rgb(_uniform_frame(940, 512, 512, info))

        np.testing.assert_allclose(black, 0.0, atol=1e-9)
        np.testing.assert_allclose(white, 1.0, atol=1e-9)

    def test_requires_444(self):
        with pytest.raises(DomainError, match="requires 4:4:4"):
            ycbcr_to_rgb(gradient_frame(hdr_info(8, 8)))

    def test_unknown_tags(self):
        with pytest.raises(DomainError, match="unknown matrix tag"):
            rgb_to_ycbcr(np.zeros((1, 1, 3)), "BT601", 8)

    def test_linearise_sdr_white(self):
        linear = linearise(np.ones((1, 1, 3)), ColourTags.BT709_GAMMA)

        assert linear.primaries == "ITU-R BT.709"
        np.testing.assert_allclose(linear.rgb, 100.0, rtol=1e-9)

    def test_negative_linear_rgb(self):
        with pytest.raises(DomainError, match="non-negative"):
            LinearRgbFrame(np.array([[-1.0]]), np.zeros((1, 1)), np.zeros((1, 1)), "ITU-R BT.2020")

    def test_white_maps_to_d65(self):
        xyz = rgb_to_xyz(np.ones(3), "ITU-R BT.2020")
        xy = xyz[:2] / xyz.sum()

        np.testing.assert_allclose(xy, D65, atol=1e-4)
        assert float(xyz[1]) == pytest.approx(1.0, abs=1e-9)

    def test_peak_white_is_lightness_100(self):
        xyz = rgb_to_xyz(np.full(3, 10000.0), "ITU-R BT.2020")
        lab = xyz_to_lab(xyz)

        assert float(lab.L) == pytest.approx(100.0, abs=1e-6)
        assert float(lab.a) == pytest.approx(0.0, abs=1e-3)
        assert float(lab.b) == pytest.approx(0.0, abs=1e-3)

    def test_negative_xyz(self):
        with pytest.raises(DomainError, match="negative tristimulus"):
            xyz_to_lab(np.array([-5.0, 1.0, 1.0]))

    def test_frame_to_lab_shape(self):
        info = hdr_info(16, 8)
        lab = frame_to_lab(gradient_frame(info))

        assert lab.L.shape == (8, 16)
        assert float(lab.L.min()) >= 0.0
        assert float(lab.L.max()) <= 100.0

    def test_brighter_luma_is_brighter(self):
        info = hdr_info(4, 4)
        dark = frame_luminance(_uniform_frame(300, 512, 512, info))
        bright = frame_luminance(_uniform_frame(700, 512, 512, info))

        assert np.all(bright > dark)


class TestPu(TestCase):
    def test_monotone_and_non_negative(self):
        luminance = np.logspace(np.log10(0.005), 4, 500)
        pu = pu_encode(luminance)

        assert np.all(pu >= 0)
        assert np.all(np.diff(pu) > 0)

    def test_clamps_below_floor(self):
        assert float(pu_encode(0.0)) == float(pu_encode(0.005))

import io
from unittest import TestCase

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrrdo.errors import TruncatedFrameError, Y4mError
from hdrrdo.y4m import (
    ColourRange,
    ColourTags,
    StreamInfo,
    format_y4m_header,
    frame_from_planes,
    iter_frames,
    lanczos5_resample,
    lanczos_weights,
    parse_y4m_header,
    read_frame,
    read_y4m,
    upsample_chroma_444,
    write_y4m,
    write_y4m_file,
)

from .frames import gradient_frame, hdr_info


def _stream(info: StreamInfo, frames) -> io.BytesIO:
    sink = io.BytesIO()
    write_y4m(frames, info, sink)
    sink.seek(0)
    return sink


class TestHeader(TestCase):
    def test_parse_10bit_header(self):
        data = b"YUV4MPEG2 W4 H2 F25:1 Ip A1:1 C420p10 XYSCSS=420P10\nFRAME\n"
        info, offset = parse_y4m_header(data)

        assert (info.width, info.height) == (4, 2)
        assert (info.fps_num, info.fps_den) == (25, 1)
        assert info.bit_depth == 10
        assert info.subsampling == 420
        assert info.aspect == "1:1"
        assert info.extra_tags == ("XYSCSS=420P10",)
        assert info.colour_tags is ColourTags.BT2020_PQ
        assert info.colour_range is ColourRange.LIMITED
        assert data[offset:].startswith(b"FRAME")

    def test_8bit_defaults_to_sdr_tags(self):
        info, _ = parse_y4m_header(b"YUV4MPEG2 W8 H8 F30000:1001 C420jpeg\n")

        assert info.bit_depth == 8
        assert info.colour_tags is ColourTags.BT709_GAMMA
        assert float(info.fps) == pytest.approx(29.97, abs=1e-2)

    def test_colour_extension_tags(self):
        info, _ = parse_y4m_header(
            b"YUV4MPEG2 W8 H8 F24:1 C444p10 XCOLORSPACE=BT709_GAMMA XCOLORRANGE=full\n"
        )

        assert info.subsampling == 444
        assert info.colour_tags is ColourTags.BT709_GAMMA
        assert info.colour_range is ColourRange.FULL

    def test_format_parses_back(self):
        info = StreamInfo(6, 4, 50, 1, 10, 444, aspect="1:1", extra_tags=("XFOO=1",))
        parsed, _ = parse_y4m_header(format_y4m_header(info))

        assert parsed == info

    def test_missing_magic(self):
        with pytest.raises(Y4mError, match="missing YUV4MPEG2 magic"):
            parse_y4m_header(b"YUV4MPEG W4 H2 F25:1\n")

    def test_interlaced(self):
        with pytest.raises(Y4mError, match="only progressive"):
            parse_y4m_header(b"YUV4MPEG2 W4 H2 F25:1 It\n")

    def test_missing_width(self):
        with pytest.raises(Y4mError, match="missing width"):
            parse_y4m_header(b"YUV4MPEG2 H2 F25:1\n")

    def test_malformed_rate(self):
        with pytest.raises(Y4mError, match="malformed rational"):
            parse_y4m_header(b"YUV4MPEG2 W4 H2 F25\n")

    def test_unsupported_colourspace(self):
        with pytest.raises(Y4mError, match="unsupported colourspace"):
            parse_y4m_header(b"YUV4MPEG2 W4 H2 F25:1 C422\n")

    def test_odd_dimensions_round_chroma_up(self):
        info = StreamInfo(5, 3)

        assert info.chroma_shape == (2, 3)
        assert info.frame_bytes == 15 + 2 * 6


class TestFrames(TestCase):
    def test_write_read_10bit(self):
        info = hdr_info(16, 8)
        frames = [gradient_frame(info, seed=s) for s in range(3)]
        stream = _stream(info, frames)

        parsed, offset = parse_y4m_header(stream.read())
        stream.seek(offset)
        out = list(iter_frames(stream, parsed))

        assert len(out) == 3
        for a, b in zip(frames, out):
            for pa, pb in zip(a.planes, b.planes):
                np.testing.assert_array_equal(pa, pb)
                assert pb.dtype == np.uint16

    def test_10bit_samples_are_little_endian_words(self):
        info = StreamInfo(2, 2, bit_depth=10, subsampling=444)
        frame = frame_from_planes(info, np.full((2, 2), 0x3FF), np.zeros((2, 2)), np.zeros((2, 2)))
        data = _stream(info, [frame]).getvalue()
        body = data[len(format_y4m_header(info)) + len(b"FRAME\n") :]

        assert body[:2] == b"\xff\x03"

    def test_end_of_stream(self):
        info = StreamInfo(4, 4)
        assert read_frame(io.BytesIO(b""), info) is None

    def test_truncated_frame(self):
        info = StreamInfo(4, 4)
        with pytest.raises(TruncatedFrameError, match="truncated frame"):
            read_frame(io.BytesIO(b"FRAME\n" + bytes(10)), info)

    def test_bad_frame_marker(self):
        info = StreamInfo(4, 4)
        with pytest.raises(Y4mError, match="expected FRAME marker"):
            read_frame(io.BytesIO(b"FRAMX\n" + bytes(24)), info)

    def test_corrupt_10bit_samples_are_clamped(self):
        info = StreamInfo(2, 2, bit_depth=10, subsampling=444)
        raw = np.full(12, 0xFFFF, dtype="<u2").tobytes()

        with self.assertLogs("hdrrdo.y4m", level="WARNING") as logs:
            frame = read_frame(io.BytesIO(b"FRAME\n" + raw), info)

        assert frame is not None
        assert int(frame.y.max()) == 1023
        assert "clamped 4 value(s)" in logs.output[0]

    def test_frames_are_read_only(self):
        frame = gradient_frame(hdr_info(8, 8))
        with pytest.raises(ValueError):
            frame.y[0, 0] = 1

    def test_plane_shape_checked(self):
        info = StreamInfo(4, 4)
        with pytest.raises(Y4mError, match="plane cb is"):
            frame_from_planes(info, np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((2, 2)))

    def test_out_of_range_samples(self):
        info = StreamInfo(2, 2, subsampling=444)
        with pytest.raises(Y4mError, match="outside"):
            frame_from_planes(info, np.full((2, 2), 256), np.zeros((2, 2)), np.zeros((2, 2)))

    def test_inconsistent_input(self):
        frame = gradient_frame(hdr_info(8, 8))
        with pytest.raises(Y4mError, match="inconsistent input"):
            write_y4m([frame], hdr_info(16, 8), io.BytesIO())

    def test_file_round_trip(self):
        import tempfile

        info = hdr_info(8, 8)
        frames = [gradient_frame(info)]
        with tempfile.TemporaryDirectory() as d:
            path = f"{d}/clip.y4m"
            written = write_y4m_file(path, frames, info)
            parsed, out = read_y4m(path)

        assert written == len(format_y4m_header(info)) + 6 + info.frame_bytes
        assert parsed == info
        np.testing.assert_array_equal(out[0].cr, frames[0].cr)

    @settings(max_examples=40, deadline=None)
    @given(
        width=st.integers(1, 9),
        height=st.integers(1, 9),
        bit_depth=st.sampled_from([8, 10]),
        subsampling=st.sampled_from([420, 444]),
        seed=st.integers(0, 2**16),
    )
    def test_round_trip_property(self, width, height, bit_depth, subsampling, seed):
        info = StreamInfo(width, height, bit_depth=bit_depth, subsampling=subsampling)
        rng = np.random.default_rng(seed)
        ch, cw = info.chroma_shape
        frame = frame_from_planes(
            info,
            rng.integers(0, info.max_code + 1, size=info.luma_shape),
            rng.integers(0, info.max_code + 1, size=(ch, cw)),
            rng.integers(0, info.max_code + 1, size=(ch, cw)),
        )
        stream = _stream(info, [frame, frame])
        parsed, offset = parse_y4m_header(stream.read())
        stream.seek(offset)
        out = list(iter_frames(stream, parsed))

        assert len(out) == 2
        for pa, pb in zip(frame.planes, out[1].planes):
            np.testing.assert_array_equal(pa, pb)


class TestResampling(TestCase):
    def test_upsample_constant_chroma(self):
        info = hdr_info(8, 6)
        ch, cw = info.chroma_shape
        frame = frame_from_planes(info, np.full((6, 8), 300), np.full((ch, cw), 480), np.full((ch, cw), 530))
        full = upsample_chroma_444(frame)

        assert full.info.subsampling == 444
        assert full.cb.shape == (6, 8)
        assert np.all(full.cb == 480)
        assert np.all(full.cr == 530)
        assert full.y is frame.y

    def test_upsample_cosited_average(self):
        info = StreamInfo(4, 2, subsampling=420)
        frame = frame_from_planes(info, np.zeros((2, 4)), np.array([[100, 200]]), np.array([[0, 0]]))
        full = upsample_chroma_444(frame)

        np.testing.assert_array_equal(full.cb[0], [100, 150, 200, 200])

    def test_444_is_unchanged(self):
        frame = gradient_frame(hdr_info(8, 8, subsampling=444))
        assert upsample_chroma_444(frame) is frame

    def test_lanczos_rows_sum_to_one(self):
        for src, dst in ((16, 8), (8, 16), (10, 7)):
            weights = lanczos_weights(src, dst)
            assert weights.shape == (dst, src)
            np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_resample_constant_frame(self):
        info = hdr_info(16, 16)
        ch, cw = info.chroma_shape
        frame = frame_from_planes(info, np.full((16, 16), 700), np.full((ch, cw), 512), np.full((ch, cw), 512))
        out = lanczos5_resample(frame, 8, 12)

        assert (out.info.width, out.info.height) == (8, 12)
        assert out.cb.shape == (6, 4)
        assert np.all(out.y == 700)
        assert np.all(out.cr == 512)

    def test_resample_invalid_size(self):
        frame = gradient_frame(hdr_info(8, 8))
        with pytest.raises(Y4mError, match="invalid target size"):
            lanczos5_resample(frame, 0, 8)

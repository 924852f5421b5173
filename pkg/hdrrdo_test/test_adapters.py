import os
import shutil
import tempfile
import unittest
from unittest import TestCase

import pytest

from hdrrdo.adapters import external, load_adapter, mock, validate_adapter_name
from hdrrdo.constants import METRIC_CAP_DB
from hdrrdo.errors import ConfigurationError, EncodeError, EncodeTimeoutError
from hdrrdo.harness import Clip, EncodeCache, EncodeSpec, Harness
from hdrrdo.params import ChromaOffsetPolicy
from hdrrdo.rd import bd_rate
from hdrrdo.y4m import write_y4m_file

from .frames import hdr_info, sequence

PASS_THROUGH = "sh -c 'cp \"$0\" \"$1\"'"
ENCODER = PASS_THROUGH + " {input} {output} {qp} {k1} {k2} {cb_offset} {cr_offset}"
DECODER = PASS_THROUGH + " {input} {output}"


def _external(encoder: str = ENCODER, decoder: str = DECODER, timeout: float = 30.0):
    return external.Params._from_dict(
        {"encoder": encoder, "decoder": decoder, "timeout": timeout, "extension": "y4m"}
    )


class TestLoadAdapter(TestCase):
    def test_builtin(self):
        assert load_adapter("mock") is mock
        assert load_adapter("external") is external

    def test_unknown(self):
        with pytest.raises(ConfigurationError, match="unknown adapter 'x265'"):
            load_adapter("x265")

    def test_invalid_names(self):
        with pytest.raises(ConfigurationError, match="may not contain spaces"):
            validate_adapter_name("my adapter")
        with pytest.raises(ConfigurationError, match="may not import private modules"):
            validate_adapter_name("pkg._hidden")
        with pytest.raises(ConfigurationError, match="invalid import"):
            validate_adapter_name("pkg..mod")
        with pytest.raises(ConfigurationError, match="invalid import"):
            validate_adapter_name("1pass")


class TestMockAdapter(TestCase):
    def test_bd_rate_closed_form(self):
        model = mock.Params()
        harness = Harness(params=model)
        anchor = harness.rd_points_for("clip", 1.0, 1.0)
        baseline = mock.rate_penalty(model, "clip", 1.0, 1.0)

        for k1, k2 in ((1.3, 1.6), (0.7, 1.2), (2.0, 0.5)):
            test = harness.rd_points_for("clip", k1, k2)
            expected = mock.rate_penalty(model, "clip", k1, k2) / baseline - 1.0
            assert bd_rate(anchor, test).delta == pytest.approx(expected, abs=1e-9)

    def test_planted_optimum(self):
        model = mock.Params()

        assert mock.planted_optimum(model, "any") == (1.3, 1.6)
        assert mock.rate_penalty(model, "any", 1.3, 1.6) == 1.0
        assert mock.rate_penalty(model, "any", 1.0, 1.0) > 1.0

    def test_clip_spread_moves_optimum(self):
        model = mock.Params._from_dict({"clip_spread": 0.3})

        assert mock.planted_optimum(model, "a") != mock.planted_optimum(model, "b")
        assert mock.planted_optimum(model, "a") == mock.planted_optimum(model, "a")

    def test_quality_is_linear_in_qp(self):
        model = mock.Params()
        q = [mock.mock_encode(EncodeSpec("c", qp), model).qualities["psnr-y"] for qp in (20, 30, 40)]

        assert q[0] > q[1] > q[2]
        assert q[0] - q[1] == pytest.approx(q[1] - q[2])

    def test_deterministic(self):
        model = mock.Params()
        spec = EncodeSpec("c", 39, 1.1, 0.9)

        assert mock.mock_encode(spec, model) == mock.mock_encode(spec, model)

    def test_offsets_only_move_chroma_sensitive_metrics(self):
        model = mock.Params()
        plain = mock.mock_encode(EncodeSpec("c", 39), model).qualities
        offset = mock.mock_encode(
            EncodeSpec("c", 39, chroma_policy=ChromaOffsetPolicy()), model
        ).qualities

        assert offset["psnr-y"] == plain["psnr-y"]
        assert offset["de100"] != plain["de100"]

    def test_offset_penalty_minimal_at_planted_model(self):
        model = mock.Params()
        planted = mock.chroma_qp_offset(
            39, ChromaOffsetPolicy(1.0, model.offset_k_opt, model.offset_l_opt)
        )

        assert mock.offset_penalty(model, 39, 0) == 0.0
        assert mock.offset_penalty(model, 39, planted) < mock.offset_penalty(model, 39, planted + 2)

    def test_lambda_log_tracks_modifiers(self):
        model = mock.Params()
        log = mock.lambda_log(model, EncodeSpec("c", 10, 2.0, 1.0))

        assert "q_i=40" in log
        assert "lambda0=5920" in log
        assert "lambda_kf=11840" in log

    def test_validate(self):
        with pytest.raises(ConfigurationError, match="invalid lambda_scale 3"):
            mock.validate(mock.Params._from_dict({"lambda_scale": 3.0}))
        with pytest.raises(ConfigurationError, match="invalid rate model"):
            mock.validate(mock.Params._from_dict({"gamma1": 0.0}))
        with pytest.raises(ConfigurationError, match="invalid clip timing"):
            mock.validate(mock.Params._from_dict({"frames": 0}))


class TestExternalTemplates(TestCase):
    def test_placeholders(self):
        assert external.placeholders(DECODER) == {"input", "output"}

    def test_render_keeps_quoted_tokens(self):
        argv = external.render(DECODER, input="a b.ivf", output="out.y4m")
        assert argv == ["sh", "-c", 'cp "$0" "$1"', "a b.ivf", "out.y4m"]

    def test_valid(self):
        assert external.validate(_external()) is None

    def test_empty_encoder(self):
        with pytest.raises(ConfigurationError, match="encoder command is empty"):
            external.validate(external.Params())

    def test_missing_placeholder(self):
        with pytest.raises(ConfigurationError, match=r"missing placeholder \{k2\}"):
            external.validate(_external(encoder="enc {input} {output} {qp} {k1} {cb_offset} {cr_offset}"))

    def test_unknown_placeholder(self):
        with pytest.raises(ConfigurationError, match=r"unknown placeholder \{preset\}"):
            external.validate(_external(decoder="dec {input} {output} {preset}"))

    def test_timeout_must_be_positive(self):
        with pytest.raises(ConfigurationError, match="invalid timeout"):
            external.validate(_external(timeout=0.0))

    def test_source_path_required(self):
        with pytest.raises(ConfigurationError, match="has no source path"):
            external.encode(_external(), EncodeSpec("a", 30), Clip("a"))


@unittest.skipUnless(shutil.which("sh"), "needs a POSIX shell")
class TestExternalEncode(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.info = hdr_info(16, 16)
        self.source = os.path.join(self.tmp.name, "clip.y4m")
        self.size = write_y4m_file(self.source, sequence(self.info, 2), self.info)

    def _harness(self, params) -> Harness:
        return Harness.from_clips(
            [Clip("a", self.source)],
            adapter="external",
            params=params,
            cache=EncodeCache(os.path.join(self.tmp.name, "cache")),
        )

    def test_pass_through_codec(self):
        harness = self._harness(_external())
        spec = EncodeSpec("a", 30, adapter="external")
        result = harness.encode(spec)

        assert result.frames == 2
        assert result.bitrate_bps == pytest.approx(self.size * 8.0 * 24 / 2)
        assert os.path.isfile(result.decoded)
        assert harness.quality(spec, result, "psnr-y") == METRIC_CAP_DB

        harness.encode(spec)
        assert harness.invocations == 1

    def test_failure_carries_stderr(self):
        params = _external(
            encoder="sh -c 'echo boom >&2; exit 3' {input} {output} {qp} {k1} {k2} {cb_offset} {cr_offset}"
        )
        with pytest.raises(EncodeError, match="status 3") as e:
            self._harness(params).encode(EncodeSpec("a", 30, adapter="external"))

        assert "boom" in e.value.diagnostics

    def test_missing_output(self):
        params = _external(encoder="sh -c true {input} {output} {qp} {k1} {k2} {cb_offset} {cr_offset}")
        with pytest.raises(EncodeError, match="encoder produced no output"):
            self._harness(params).encode(EncodeSpec("a", 30, adapter="external"))

    def test_missing_command(self):
        params = _external(
            encoder="/nonexistent/enc {input} {output} {qp} {k1} {k2} {cb_offset} {cr_offset}"
        )
        with pytest.raises(EncodeError, match="command not found"):
            self._harness(params).encode(EncodeSpec("a", 30, adapter="external"))

    def test_timeout(self):
        params = _external(
            encoder="sh -c 'exec sleep 5' {input} {output} {qp} {k1} {k2} {cb_offset} {cr_offset}",
            timeout=0.2,
        )
        with pytest.raises(EncodeTimeoutError, match="timed out after 0.2s"):
            self._harness(params).encode(EncodeSpec("a", 30, adapter="external"))

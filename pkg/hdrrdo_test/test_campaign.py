import json
import os
import tempfile
from unittest import TestCase

import pytest

from hdrrdo.adapters import mock
from hdrrdo.campaign import (
    CampaignConfig,
    CampaignResult,
    ChromaOffsetMode,
    Column,
    load_config,
    load_result,
    make_harness,
    run_campaign,
    trace_path,
)
from hdrrdo.errors import ConfigurationError, EncodeError
from hdrrdo.harness import Clip, EncodeCache, Harness

METRICS = ("psnr-y", "de100")
MOCK = {"metric_eta": 0.5, "metric_spread": 0.3, "clip_spread": 0.2}


def _config(**kwargs) -> CampaignConfig:
    values = {
        "clips": (Clip("a"), Clip("b"), Clip("c")),
        "opt_metrics": METRICS,
        "eval_metrics": METRICS,
        "adapter_params": MOCK,
    }
    values.update(kwargs)
    return CampaignConfig(**values)


class _FlakyHarness(Harness):
    def rd_curves_for(self, clip, *args, **kwargs):
        if clip == "bad":
            raise EncodeError("encoder crashed")
        return super().rd_curves_for(clip, *args, **kwargs)


class TestCampaignConfig(TestCase):
    def test_columns_without_offsets(self):
        columns = _config().columns

        assert [c.key for c in columns] == ["psnr-y", "de100"]
        assert [c.label for c in columns] == ["PSNR-Y", "DE100"]
        assert all(c.anchor == "default" for c in columns)

    def test_columns_with_offsets(self):
        config = _config(
            opt_metrics=("psnr-y", "de100", "psnrl100"),
            chroma_offsets=ChromaOffsetMode.BOTH,
            co_metrics=("de100", "psnrl100"),
        )
        columns = {c.key: c for c in config.columns}

        assert list(columns) == ["psnr-y", "de100", "psnrl100", "default+", "de100+", "psnrl100+"]
        assert columns["default+"].label == "Default+"
        assert columns["default+"].metric is None
        assert columns["default+"].anchor == "default"
        assert columns["de100+"].label == "DE100+"
        assert columns["de100+"].anchor == "co-default"

    def test_offset_columns_default_to_first_two_metrics(self):
        config = _config(opt_metrics=("de100", "psnrl100", "psnr-y"), chroma_offsets="on")
        assert [c.key for c in config.columns] == ["default+", "de100+", "psnrl100+"]

    def test_invalid(self):
        with pytest.raises(ConfigurationError, match="clips is empty"):
            _config(clips=())
        with pytest.raises(ConfigurationError, match="clip ids must be unique"):
            _config(clips=(Clip("a"), Clip("a")))
        with pytest.raises(ConfigurationError, match="opt_metrics: unknown metric 'psnr-x'"):
            _config(opt_metrics=("psnr-x",))
        with pytest.raises(ConfigurationError, match="eval_metrics is empty"):
            _config(eval_metrics=())
        with pytest.raises(ConfigurationError, match="co_metrics not optimised: psnrl100"):
            _config(chroma_offsets=ChromaOffsetMode.ON, co_metrics=("psnrl100",))
        with pytest.raises(ConfigurationError, match="at least 2 qps"):
            _config(qps=(30,))
        with pytest.raises(ConfigurationError, match="invalid search option"):
            _config(search={"speed": 2})

    def test_search_options(self):
        opts = _config(search={"max_evaluations": 40, "start": [1.2, 1.2]}).search_options()

        assert opts.log_space
        assert opts.start == (1.2, 1.2)
        assert opts.max_evaluations == 40

    def test_from_dict(self):
        config = CampaignConfig.from_dict(
            {
                "clips": ["a", {"id": "b", "path": "b.y4m"}],
                "opt_metrics": ["de100"],
                "eval_metrics": ["de100", "psnr-y"],
                "chroma_offsets": "both",
                "qps": [22, 32, 42],
                "chroma_policy": {"k_offset": -0.49},
            }
        )

        assert config.clips == (Clip("a"), Clip("b", "b.y4m"))
        assert config.chroma_offsets is ChromaOffsetMode.BOTH
        assert config.qps == (22, 32, 42)
        assert config.chroma_policy.k_offset == -0.49
        assert config.chroma_policy.l_offset == 9.26

    def test_from_dict_errors(self):
        with pytest.raises(ConfigurationError, match="unknown key"):
            CampaignConfig.from_dict({"clips": ["a"], "opt_metrics": ["de100"], "eval_metrics": ["de100"], "seed": 1})
        with pytest.raises(ConfigurationError, match="missing key"):
            CampaignConfig.from_dict({"clips": ["a"], "opt_metrics": ["de100"]})
        with pytest.raises(ConfigurationError, match="invalid chroma_offsets 'yes'"):
            CampaignConfig.from_dict(
                {"clips": ["a"], "opt_metrics": ["de100"], "eval_metrics": ["de100"], "chroma_offsets": "yes"}
            )
        with pytest.raises(ConfigurationError, match="invalid clip entry"):
            CampaignConfig.from_dict({"clips": [{"path": "x"}], "opt_metrics": ["de100"], "eval_metrics": ["de100"]})
        for clip in ("../escape", "a/b", "..", ".hidden", ""):
            with pytest.raises(ConfigurationError, match="invalid clip id"):
                CampaignConfig.from_dict({"clips": [clip], "opt_metrics": ["de100"], "eval_metrics": ["de100"]})

    def test_digest_ignores_output_and_workers(self):
        assert _config().digest() == _config(output="elsewhere", workers=4).digest()
        assert _config().digest() != _config(qps=(27, 39, 49)).digest()

    def test_load_config(self):
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "campaign.json")
            with open(path, "w") as f:
                json.dump({"clips": ["a"], "opt_metrics": ["de100"], "eval_metrics": ["de100"]}, f)
            assert load_config(path).clips == (Clip("a"),)

            with open(path, "w") as f:
                f.write("[")
            with pytest.raises(ConfigurationError, match="invalid campaign file"):
                load_config(path)

    def test_trace_path(self):
        column = Column("de100+", "DE100+", "de100", True)
        assert trace_path("a", column) == os.path.join("traces", "a", "de100-co.jsonl")


class TestCampaignResult(TestCase):
    def _result(self) -> CampaignResult:
        columns = (Column("psnr-y", "PSNR-Y", "psnr-y"), Column("de100", "DE100", "de100"))
        return CampaignResult(
            "digest",
            columns,
            METRICS,
            per_clip={
                "a": {"psnr-y": {"psnr-y": -2.0, "de100": 1.0}, "de100": {"psnr-y": 0.5, "de100": -3.0}},
                "b": {"psnr-y": {"psnr-y": -4.0, "de100": None}, "de100": {"psnr-y": 1.5, "de100": -5.0}},
            },
        )

    def test_cell_skips_missing_values(self):
        result = self._result()

        assert result.cell("psnr-y", "psnr-y") == -3.0
        assert result.cell("de100", "psnr-y") == 1.0
        assert result.cell("de100", "de100") == -4.0
        assert result.cell("psnr-y", "default+") is None

    def test_samples_need_every_metric(self):
        samples = self._result().samples()

        assert samples["psnr-y"] == [-2.0, 0.5, 1.5]
        assert samples["de100"] == [1.0, -3.0, -5.0]

    def test_bad_document(self):
        with pytest.raises(ConfigurationError, match="invalid campaign result"):
            CampaignResult.from_dict({"columns": []})


class TestRunCampaign(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.cache = os.path.join(self.tmp.name, "cache")
        self.output = os.path.join(self.tmp.name, "campaign")

    def _run(self, config: CampaignConfig, output: str | None = None):
        harness = make_harness(config, EncodeCache(self.cache))
        result = run_campaign(config, harness, output=output or self.output)
        return result, harness

    def test_matrix_is_populated(self):
        result, _ = self._run(_config())

        assert result.ok
        assert result.clips == ["a", "b", "c"]
        for metric in METRICS:
            for column in METRICS:
                assert result.cell(metric, column) is not None
            assert result.cell(metric, metric) < 0
        for clip in result.clips:
            for column in METRICS:
                assert os.path.isfile(os.path.join(self.output, result.traces[clip][column]))

    def test_rerun_is_free_and_identical(self):
        config = _config()
        self._run(config)
        with open(os.path.join(self.output, "result.json"), "rb") as f:
            first = f.read()

        again, harness = self._run(config)
        with open(os.path.join(self.output, "result.json"), "rb") as f:
            second = f.read()

        assert harness.invocations == 0
        assert second == first
        assert again.to_json().encode("utf-8") == first

    def test_result_round_trips_through_disk(self):
        result, _ = self._run(_config())
        loaded = load_result(self.output)

        assert loaded.to_json() == result.to_json()
        assert loaded.matrix == result.matrix
        assert loaded.config_digest == _config().digest()

    def test_workers_do_not_change_results(self):
        serial, _ = self._run(_config())
        parallel = run_campaign(
            _config(workers=3),
            make_harness(_config(), EncodeCache()),
            output=os.path.join(self.tmp.name, "parallel"),
        )

        assert parallel.to_json() == serial.to_json()

    def test_chroma_offset_columns(self):
        config = _config(clips=(Clip("a"),), chroma_offsets=ChromaOffsetMode.ON)
        result, _ = self._run(config)

        assert [c.key for c in result.columns] == ["default+", "psnr-y+", "de100+"]
        assert result.best["a"]["default+"] == (1.0, 1.0)
        assert "default+" not in result.traces["a"]
        assert result.cell("de100", "de100+") < 0

    def test_failures_are_recorded(self):
        config = _config(clips=(Clip("a"), Clip("bad")))
        harness = _FlakyHarness.from_clips(config.clips, params=mock.Params._from_dict(MOCK))

        with self.assertLogs("hdrrdo.campaign", level="WARNING"):
            result = run_campaign(config, harness, output=self.output)

        assert not result.ok
        assert {f["column"] for f in result.failures} == set(METRICS)
        assert all("encoder crashed" in f["error"] for f in result.failures)
        assert result.per_clip["bad"] == {}
        assert result.cell("psnr-y", "psnr-y") == result.per_clip["a"]["psnr-y"]["psnr-y"]

    def test_each_metric_is_best_under_its_own_optimisation(self):
        result, _ = self._run(_config())

        for metric in METRICS:
            own = result.cell(metric, metric)
            for column in METRICS:
                assert own <= result.cell(metric, column) + 1e-2, (metric, column)

    def test_shared_optimum_gives_flat_columns(self):
        shared = {"metric_eta": 0.5, "clip_spread": 0.2}
        result, _ = self._run(_config(adapter_params=shared))

        for column in METRICS:
            own = result.cell(column, column)
            for metric in METRICS:
                assert result.cell(metric, column) == pytest.approx(own, abs=1e-6), (metric, column)

    def test_clip_order_does_not_change_cells(self):
        result, _ = self._run(_config())
        permuted, _ = self._run(
            _config(clips=(Clip("c"), Clip("a"), Clip("b"))),
            output=os.path.join(self.tmp.name, "permuted"),
        )

        assert permuted.clips == result.clips
        assert permuted.best == result.best
        assert permuted.per_clip == result.per_clip
        assert permuted.matrix == result.matrix

#!/usr/bin/env python3
import copy
import datetime
import json
import logging
import os
import sys
from argparse import (
    SUPPRESS,
    Action,
    ArgumentParser,
    BooleanOptionalAction,
    Namespace,
)
from collections.abc import Iterator, Sequence
from typing import Any, override

from .adapters import load_adapter
from .campaign import load_config, load_result, make_harness, run_campaign
from .constants import DEFAULT_QPS, POWELL_MAX_EVALUATIONS, VERSION
from .errors import HdrRdoError
from .harness import Clip, EncodeCache, Harness, default_cache_dir
from .metrics import DEFAULT_HDRVQM_BACKEND, METRICS, compute_all
from .optimizer import (
    DEFAULT_OFFSET_SEARCH,
    OptimizationTrace,
    SearchOptions,
    optimize_lambdas,
    optimize_offsets,
    write_trace_jsonl,
)
from .params import ChromaOffsetPolicy, ParamsBase
from .rd import bd_rate, load_curve_csv
from .report import (
    TableStyle,
    correlation_matrix,
    cross_metric_table,
    write_correlation_csv,
    write_heatmap_svg,
)
from .y4m import read_y4m

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(asctime)s] %(levelname)s %(name)s: %(message)s"


class _Prefixed:
    """Routes a parsed value into the nested parameter group it belongs to."""

    def __init__(self, *args, prefixes: Sequence[str] = (), **kwargs):
        self.prefixes = tuple(prefixes)
        super().__init__(*args, **kwargs)

    def target(self, namespace: Any) -> Any:
        for prefix in self.prefixes:
            group = getattr(namespace, prefix)
            # class-level defaults are shared between instances
            if group is getattr(type(namespace), prefix, None):
                group = copy.copy(group)
                setattr(namespace, prefix, group)
            namespace = group
        return namespace


class PrefixedAction(_Prefixed, Action):
    @override
    def __call__(
        self,
        parser: ArgumentParser,
        namespace: Namespace,
        values: str | Sequence[Any] | None,
        option_string: str | None = None,
    ) -> None:
        setattr(self.target(namespace), self.dest, values)


class PrefixedBooleanAction(_Prefixed, BooleanOptionalAction):
    @override
    def __call__(
        self,
        parser: ArgumentParser,
        namespace: Namespace,
        values: str | Sequence[Any] | None,
        option_string: str | None = None,
    ) -> None:
        super().__call__(parser, self.target(namespace), values, option_string)


def _param_fields(
    cls: type[ParamsBase], prefixes: tuple[str, ...] = ()
) -> Iterator[tuple[tuple[str, ...], str, type, Any]]:
    for name, kind in cls._annotations().items():
        if isinstance(kind, type) and issubclass(kind, ParamsBase):
            yield from _param_fields(kind, (*prefixes, name))
        else:
            yield prefixes, name, kind, getattr(cls, name)


def create_param_parser(
    cls: type[ParamsBase], *, description: str | None
) -> ArgumentParser:
    """Parser whose flags are the (``_``-joined, nested) attributes of ``cls``.

    Values are parsed straight onto a ``cls`` instance passed as namespace;
    flags that are not given leave the instance untouched.
    """
    param_parser = ArgumentParser(prog="hdrrdo ... --", description=description)
    for prefixes, name, kind, default in _param_fields(cls):
        flag = "--" + "_".join((*prefixes, name))
        common = {
            "dest": name,
            "default": SUPPRESS,
            "prefixes": prefixes,
            "help": f"default: {default!s}".replace("%", "%%"),
        }
        if kind is bool:
            param_parser.add_argument(flag, action=PrefixedBooleanAction, **common)
        else:
            param_parser.add_argument(flag, action=PrefixedAction, type=kind, **common)
    return param_parser


def _split_args(args: list[str]) -> tuple[list[str], list[str]]:
    """Split argv at the first ``--`` into command and adapter arguments."""
    if "--" not in args:
        return args, []
    idx = args.index("--")
    return args[:idx], args[idx + 1 :]


def serialize_params(params: list[str]) -> str:
    """Compact ``key=value&flag`` form of adapter overrides, for logs and output."""
    parsed: dict[str, list[str]] = {}
    current = None
    for param in params:
        flag, eq, inline = param.partition("=")
        if flag.startswith("--"):
            current = parsed.setdefault(flag[2:], [])
            if eq:
                current.append(inline)
        elif current is None:
            raise HdrRdoError(f"invalid adapter parameters; value {param!r} has no flag")
        else:
            current.append(param)

    return "&".join(f"{k}={','.join(v)}" if v else k for k, v in parsed.items())


def adapter_params(adapter: str, raw_params: list[str]) -> ParamsBase:
    mod = load_adapter(adapter)
    param_parser = create_param_parser(mod.Params, description=mod.__doc__)
    params = mod.Params()
    param_parser.parse_args(raw_params, namespace=params)
    return params


def _generated(path: str) -> None:
    # stdout carries only the command result
    print(f"[{datetime.datetime.now()}] generated: {path}", file=sys.stderr)


def _emit(args: Namespace, doc: dict[str, Any], text: str) -> None:
    if args.json:
        print(json.dumps(doc, sort_keys=True, indent=2))
    else:
        print(text)


def _harness(args: Namespace, clips: Sequence[Clip], raw_params: list[str]) -> Harness:
    return Harness.from_clips(
        clips,
        adapter=args.adapter,
        params=adapter_params(args.adapter, raw_params),
        cache=EncodeCache(args.cache or default_cache_dir()),
    )


def _clips(args: Namespace, ids: Sequence[str]) -> list[Clip]:
    paths = dict(args.clip_path or [])
    unknown = sorted(set(paths) - set(ids))
    if unknown:
        raise HdrRdoError(f"invalid clip path; unknown clip(s) {', '.join(unknown)}")
    return [Clip(i, paths.get(i)) for i in ids]


def _clip_path(value: str) -> tuple[str, str]:
    clip, sep, path = value.partition("=")
    if not sep or not clip or not path:
        raise ValueError(value)
    return clip, path


def _write_trace(trace: OptimizationTrace, path: str | None) -> None:
    if not path:
        return
    if d := os.path.dirname(path):
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as f:
        write_trace_jsonl(trace, f)
    _generated(path)


def metrics(args: Namespace, raw_params: list[str]) -> int:
    _, ref = read_y4m(args.reference)
    _, test = read_y4m(args.test)
    report = compute_all(ref, test, args.set, backend=args.backend, workers=args.workers)
    if args.json:
        print(report.to_json())
    else:
        for name, score in report.scores.items():
            unit = f" {METRICS[name].unit}" if METRICS[name].unit else ""
            print(f"{METRICS[name].label}: {score.aggregate:.4f}{unit}")
    return 0


def bdrate(args: Namespace, raw_params: list[str]) -> int:
    result = bd_rate(load_curve_csv(args.anchor), load_curve_csv(args.test))
    _emit(
        args,
        {"bd_rate": result.delta, "overlap": list(result.overlap)},
        f"BD-Rate: {result.percent:.4f}% over quality [{result.overlap[0]:.4g}, "
        f"{result.overlap[1]:.4g}]",
    )
    return 0


def optimize(args: Namespace, raw_params: list[str]) -> int:
    harness = _harness(args, _clips(args, [args.clip]), raw_params)
    opts = SearchOptions(log_space=True, max_evaluations=args.max_evaluations)
    policy = ChromaOffsetPolicy() if args.chroma_offsets else None
    trace = optimize_lambdas(args.clip, args.metric, harness, opts, policy, qps=args.qps)
    _write_trace(trace, args.trace)

    k1, k2 = trace.best_point
    doc = {
        "clip": args.clip,
        "metric": args.metric,
        "chroma_offsets": args.chroma_offsets,
        "adapter": args.adapter,
        "params": serialize_params(raw_params),
        "k1": k1,
        "k2": k2,
        "bd_rate": trace.best_cost,
        **trace.summary(),
    }
    _emit(
        args,
        doc,
        f"{args.clip} under {args.metric}: k1={k1:.4f} k2={k2:.4f} "
        f"BD-Rate {100.0 * trace.best_cost:.3f}% ({trace.evaluation_count} evaluations, "
        f"{trace.reason})",
    )
    return 0


def offset_search(args: Namespace, raw_params: list[str]) -> int:
    harness = _harness(args, _clips(args, args.corpus), raw_params)
    opts = DEFAULT_OFFSET_SEARCH
    if args.max_evaluations is not None:
        opts = SearchOptions(
            start=opts.start,
            step=opts.step,
            bounds=opts.bounds,
            max_evaluations=args.max_evaluations,
        )
    trace = optimize_offsets(args.corpus, harness, opts, qps=args.qps)
    _write_trace(trace, args.trace)

    k_offset, l_offset = trace.best_point
    doc = {
        "corpus": list(args.corpus),
        "adapter": args.adapter,
        "params": serialize_params(raw_params),
        "k_offset": k_offset,
        "l_offset": l_offset,
        "cost": trace.best_cost,
        **trace.summary(),
    }
    _emit(
        args,
        doc,
        f"chroma offsets over {len(args.corpus)} clip(s): k={k_offset:.4f} l={l_offset:.4f} "
        f"cost {100.0 * trace.best_cost:.3f}% ({trace.evaluation_count} evaluations)",
    )
    return 0


def campaign(args: Namespace, raw_params: list[str]) -> int:
    config = load_config(args.config)
    cache = EncodeCache(args.cache or default_cache_dir())
    result = run_campaign(config, make_harness(config, cache), output=args.output)
    directory = args.output or config.output
    _generated(os.path.join(directory, "result.json"))
    if args.json:
        print(result.to_json(), end="")
    for failure in result.failures:
        print(
            f"error: clip {failure['clip']}, column {failure['column']}: {failure['error']}",
            file=sys.stderr,
        )
    return 0 if result.ok else 1


def report(args: Namespace, raw_params: list[str]) -> int:
    result = load_result(args.result)
    table, heatmap = args.table, args.heatmap
    if table is None and heatmap is None:
        table = TableStyle.MARKDOWN

    if table is not None:
        print(cross_metric_table(result, table), end="")
    if heatmap is not None:
        svg = heatmap or os.path.join(args.result, "correlation.svg")
        matrix = correlation_matrix(result)
        csv_path = f"{os.path.splitext(svg)[0]}.csv"
        with open(csv_path, "w", newline="") as f:
            write_correlation_csv(matrix, f)
        _generated(csv_path)
        write_heatmap_svg(matrix, svg)
        _generated(svg)
    return 0


def _configure_logging(args: Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def create_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log debug output")
    common.add_argument("-q", "--quiet", action="store_true", help="log warnings only")
    common.add_argument(
        "--cache", help="encode cache directory; defaults to $HDRRDO_CACHE or ./.hdrrdo-cache"
    )
    common.add_argument(
        "--json", action="store_true", help="print machine-readable JSON on stdout"
    )

    encodes = ArgumentParser(add_help=False)
    encodes.add_argument("--adapter", default="mock", help="codec adapter module")
    encodes.add_argument(
        "--clip-path",
        action="append",
        type=_clip_path,
        metavar="CLIP=PATH",
        help="source Y4M for a clip; required by adapters that run real encoders",
    )
    encodes.add_argument(
        "--qps", type=int, nargs="+", default=list(DEFAULT_QPS), help="anchor qp set"
    )
    encodes.add_argument("--trace", help="write the optimisation trace as JSON lines")

    parser = ArgumentParser(
        prog="hdrrdo",
        description="Rate-distortion tuning and evaluation for HDR video encoders. "
        "Adapter parameters follow a `--` separator.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    subparsers = parser.add_subparsers(required=True)

    metrics_parser = subparsers.add_parser(
        "metrics", parents=[common], help="score a test sequence against its reference"
    )
    metrics_parser.add_argument("reference")
    metrics_parser.add_argument("test")
    metrics_parser.add_argument(
        "--set", nargs="+", choices=list(METRICS), help="metrics to compute; defaults to all"
    )
    metrics_parser.add_argument("--workers", type=int, default=1)
    metrics_parser.add_argument("--backend", default=DEFAULT_HDRVQM_BACKEND)
    metrics_parser.set_defaults(func=metrics)

    bdrate_parser = subparsers.add_parser(
        "bdrate", parents=[common], help="BD-Rate of a test curve against an anchor curve"
    )
    bdrate_parser.add_argument("anchor")
    bdrate_parser.add_argument("test")
    bdrate_parser.set_defaults(func=bdrate)

    optimize_parser = subparsers.add_parser(
        "optimize", parents=[common, encodes], help="search the lambda modifiers of one clip"
    )
    optimize_parser.add_argument("--clip", required=True)
    optimize_parser.add_argument("--metric", required=True, choices=list(METRICS))
    optimize_parser.add_argument(
        "--chroma-offsets",
        action=BooleanOptionalAction,
        default=False,
        help="encode with the default chroma qp offsets",
    )
    optimize_parser.add_argument(
        "--max-evaluations", type=int, default=POWELL_MAX_EVALUATIONS
    )
    optimize_parser.set_defaults(func=optimize)

    offset_parser = subparsers.add_parser(
        "offset-search",
        parents=[common, encodes],
        help="search the chroma qp offset model over a corpus",
    )
    offset_parser.add_argument("--corpus", nargs="+", required=True, metavar="CLIP")
    offset_parser.add_argument("--max-evaluations", type=int)
    offset_parser.set_defaults(func=offset_search)

    campaign_parser = subparsers.add_parser(
        "campaign", parents=[common], help="run a corpus campaign from a JSON config"
    )
    campaign_parser.add_argument("--config", required=True)
    campaign_parser.add_argument("-o", "--output", help="result directory; overrides the config")
    campaign_parser.set_defaults(func=campaign)

    report_parser = subparsers.add_parser(
        "report", parents=[common], help="render tables and correlations of a campaign"
    )
    report_parser.add_argument("--result", required=True, help="campaign result directory")
    report_parser.add_argument(
        "--table",
        nargs="?",
        const=TableStyle.MARKDOWN,
        type=TableStyle,
        choices=list(TableStyle),
        help="print the cross-metric table",
    )
    report_parser.add_argument(
        "--heatmap",
        nargs="?",
        const="",
        metavar="SVG",
        help="write the correlation heatmap and its CSV; defaults into the result directory",
    )
    report_parser.set_defaults(func=report)

    return parser


def main(argv: list[str] | None = None) -> int:
    raw_args, raw_params = _split_args(sys.argv[1:] if argv is None else list(argv))

    parser = create_parser()
    args = parser.parse_args(args=raw_args)
    _configure_logging(args)

    try:
        return args.func(args, raw_params)
    except (HdrRdoError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""
Reporting over campaign results: the cross-metric BD-Rate table and the
rank correlation between evaluation metrics.
"""

import csv
import io
import logging
import math
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Any, TextIO

import numpy as np
from matplotlib import rc_context
from matplotlib.figure import Figure
from scipy.stats import spearmanr

from .campaign import CampaignResult
from .errors import ConfigurationError, HdrRdoError
from .metrics import METRICS

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "hdrrdo"


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties; NaN when either side is constant."""
    if len(x) != len(y):
        raise HdrRdoError(f"invalid samples; lengths differ ({len(x)} and {len(y)})")
    if len(x) < 2:
        raise HdrRdoError(f"invalid samples; need at least 2 values, got {len(x)}")
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return math.nan
    return float(spearmanr(a, b)[0])


@dataclass(frozen=True)
class CorrelationMatrix:
    names: tuple[str, ...]
    values: np.ndarray

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(METRICS[n].label if n in METRICS else n for n in self.names)

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = (self.names.index(n) for n in pair)
        return float(self.values[i, j])


def correlation_matrix(
    source: CampaignResult | Mapping[str, Sequence[float]],
) -> CorrelationMatrix:
    samples = source.samples() if isinstance(source, CampaignResult) else source
    names = tuple(samples)
    if len(names) < 2:
        raise HdrRdoError(f"invalid samples; need at least 2 metrics, got {len(names)}")

    values = np.eye(len(names))
    for i, a in enumerate(names):
        for j in range(i + 1, len(names)):
            rho = spearman(samples[a], samples[names[j]])
            values[i, j] = values[j, i] = rho
    return CorrelationMatrix(names, values)


def _cell(value: float) -> str:
    return "" if math.isnan(value) else f"{value:.6f}"


def write_correlation_csv(matrix: CorrelationMatrix, sink: TextIO) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["metric", *matrix.names])
    for name, row in zip(matrix.names, matrix.values):
        writer.writerow([name, *(_cell(v) for v in row)])


def write_heatmap_svg(matrix: CorrelationMatrix, path: str | os.PathLike) -> None:
    """Standalone SVG heatmap; NaN cells are left blank and unlabelled."""
    n = len(matrix.names)
    size = 1.0 + 0.6 * n
    fig = Figure(figsize=(size + 1.2, size))
    ax = fig.add_subplot()
    image = ax.imshow(
        np.ma.masked_invalid(matrix.values), cmap="RdBu_r", vmin=-1.0, vmax=1.0
    )
    ax.set_xticks(range(n), labels=matrix.labels, rotation=45, ha="right")
    ax.set_yticks(range(n), labels=matrix.labels)
    for i in range(n):
        for j in range(n):
            value = matrix.values[i, j]
            if math.isnan(value):
                continue
            colour = "white" if abs(value) > 0.6 else "black"
            ax.text(j, i, f"{value:.2f}", ha="center", va="center", color=colour, fontsize=8)
    fig.colorbar(image, ax=ax, label="Spearman rho")
    fig.tight_layout()
    with rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})


class TableStyle(StrEnum):
    MARKDOWN = "markdown"
    LATEX = "latex"
    PLAIN = "plain"


class Emphasis(StrEnum):
    NONE = ""
    BOLD = "bold"
    BOLD_UNDERLINE = "bold-underline"


@dataclass(frozen=True)
class TableRow:
    label: str
    dynamic_range: str
    plane: str
    values: tuple[float | None, ...]


@dataclass(frozen=True)
class CrossMetricTable:
    """Mean BD-Rate (%) per evaluation metric (rows) and optimisation config (columns)."""

    columns: tuple[str, ...]
    co_columns: tuple[bool, ...]
    rows: tuple[TableRow, ...]

    def __post_init__(self) -> None:
        if len(self.columns) != len(self.co_columns):
            raise ConfigurationError("invalid table; one chroma-offset flag per column")
        for row in self.rows:
            if len(row.values) != len(self.columns):
                raise ConfigurationError(
                    f"invalid table; row {row.label} has {len(row.values)} values for "
                    f"{len(self.columns)} columns"
                )

    def row(self, label: str) -> TableRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def table_from_result(result: CampaignResult) -> CrossMetricTable:
    matrix = result.matrix
    rows = []
    for name in result.eval_metrics:
        info = METRICS[name]
        rows.append(
            TableRow(
                info.label,
                str(info.dynamic_range),
                str(info.plane),
                tuple(matrix[name][c.key] for c in result.columns),
            )
        )
    return CrossMetricTable(
        tuple(c.label for c in result.columns),
        tuple(c.chroma_offsets for c in result.columns),
        tuple(rows),
    )


def table_from_fixture(doc: Mapping[str, Any]) -> CrossMetricTable:
    """Build a table from a transcribed document of columns and rows."""
    try:
        return CrossMetricTable(
            tuple(c["label"] for c in doc["columns"]),
            tuple(bool(c["chroma_offsets"]) for c in doc["columns"]),
            tuple(
                TableRow(r["label"], r["dynamic_range"], r["plane"], tuple(r["values"]))
                for r in doc["rows"]
            ),
        )
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"invalid table document; {e}") from e


def _argmin(values: Sequence[float | None], mask: Sequence[bool]) -> int | None:
    best = None
    for i, (v, keep) in enumerate(zip(values, mask)):
        if keep and v is not None and (best is None or v < values[best]):
            best = i
    return best


def emphasis(table: CrossMetricTable) -> list[list[Emphasis]]:
    """Per row, bold the lowest plain column and bold-underline the lowest
    chroma-offset column."""
    out = []
    plain = [not co for co in table.co_columns]
    for row in table.rows:
        marks = [Emphasis.NONE] * len(table.columns)
        if (i := _argmin(row.values, plain)) is not None:
            marks[i] = Emphasis.BOLD
        if (i := _argmin(row.values, table.co_columns)) is not None:
            marks[i] = Emphasis.BOLD_UNDERLINE
        out.append(marks)
    return out


_DECORATIONS: dict[TableStyle, dict[Emphasis, str]] = {
    TableStyle.MARKDOWN: {
        Emphasis.NONE: "{}",
        Emphasis.BOLD: "**{}**",
        Emphasis.BOLD_UNDERLINE: "<u>**{}**</u>",
    },
    TableStyle.LATEX: {
        Emphasis.NONE: "{}",
        Emphasis.BOLD: "\\textbf{{{}}}",
        Emphasis.BOLD_UNDERLINE: "\\underline{{\\textbf{{{}}}}}",
    },
    TableStyle.PLAIN: {
        Emphasis.NONE: "{}",
        Emphasis.BOLD: "[{}]",
        Emphasis.BOLD_UNDERLINE: "[[{}]]",
    },
}


def _format(value: float | None, mark: Emphasis, style: TableStyle) -> str:
    if value is None:
        return "n/a"
    return _DECORATIONS[style][mark].format(f"{value:.3f}")


def _latex_escape(text: str) -> str:
    return text.replace("\\", "\\textbackslash{}").replace("&", "\\&").replace("%", "\\%")


def render_table(table: CrossMetricTable, style: TableStyle | str = TableStyle.MARKDOWN) -> str:
    style = TableStyle(style)
    header = ["Evaluation metric", "DR", "Plane", *table.columns]
    body = [
        [row.label, row.dynamic_range, row.plane]
        + [_format(v, m, style) for v, m in zip(row.values, marks)]
        for row, marks in zip(table.rows, emphasis(table))
    ]

    out = io.StringIO()
    if style is TableStyle.MARKDOWN:
        out.write("| " + " | ".join(header) + " |\n")
        out.write("|" + "|".join(["---"] * 3 + ["---:"] * len(table.columns)) + "|\n")
        for line in body:
            out.write("| " + " | ".join(line) + " |\n")
    elif style is TableStyle.LATEX:
        out.write("\\begin{tabular}{lll" + "r" * len(table.columns) + "}\n\\hline\n")
        out.write(" & ".join(_latex_escape(h) for h in header) + " \\\\\n\\hline\n")
        for line in body:
            cells = [_latex_escape(c) for c in line[:3]] + line[3:]
            out.write(" & ".join(cells) + " \\\\\n")
        out.write("\\hline\n\\end{tabular}\n")
    else:
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        for line in [header, *body]:
            out.write("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() + "\n")
    return out.getvalue()


def cross_metric_table(
    result: CampaignResult | CrossMetricTable, style: TableStyle | str = TableStyle.MARKDOWN
) -> str:
    table = table_from_result(result) if isinstance(result, CampaignResult) else result
    if not table.rows or not table.columns:
        raise ConfigurationError("invalid table; no rows or columns")
    return render_table(table, style)

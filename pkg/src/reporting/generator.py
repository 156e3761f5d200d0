"""Report generation: plain-text metric tables and optional SVG histograms"""

import io
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.table import Table  # noqa: E402

from ..corpus.stats import CorpusStats, Histogram  # noqa: E402
from ..storage.schemas import MetricRecord  # noqa: E402

logger = logging.getLogger(__name__)

GroupKey = Tuple[str, str, str, str]


def render(table: Table, width: int = 120) -> str:
    """Table as plain text (no colour, no terminal control codes)"""
    buffer = io.StringIO()
    console = Console(file=buffer, width=width, color_system=None, force_terminal=False, legacy_windows=False)
    console.print(table)
    return buffer.getvalue()


def _tag_label(tags: Dict[str, object]) -> str:
    return ",".join(f"{k}={tags[k]}" for k in sorted(tags)) if tags else ""


def summarize_metrics(records: Iterable[MetricRecord]) -> Dict[GroupKey, List[float]]:
    """Values grouped by (task, regime, metric, tags) across seeds"""
    groups: Dict[GroupKey, List[float]] = defaultdict(list)
    for record in records:
        groups[(record.task, record.regime, record.metric, _tag_label(record.tags))].append(record.value)
    return dict(groups)


def metrics_table(records: Sequence[MetricRecord], title: str = "Metrics") -> Table:
    table = Table(title=title)
    for column in ("task", "regime", "metric", "variant"):
        table.add_column(column)
    for column in ("mean", "std", "seeds"):
        table.add_column(column, justify="right")
    for (task, regime, metric, tags), values in sorted(summarize_metrics(records).items()):
        table.add_row(
            task, regime, metric, tags,
            f"{np.mean(values):.4f}", f"{np.std(values):.4f}", str(len(values)),
        )
    return table


def comparison_table(
    records: Sequence[MetricRecord],
    row_tag: str = "variant",
    title: str = "Comparison",
) -> Table:
    """One row per ``tags[row_tag]`` value, one column per task (mean over seeds)"""
    cells: Dict[str, Dict[str, List[float]]] = {}
    tasks: List[str] = []
    for record in records:
        variant = str(record.tags.get(row_tag, ""))
        cells.setdefault(variant, {}).setdefault(record.task, []).append(record.value)
        if record.task not in tasks:
            tasks.append(record.task)

    table = Table(title=title)
    table.add_column(row_tag)
    for task in tasks:
        table.add_column(task, justify="right")
    table.add_column("seeds", justify="right")
    for variant, by_task in cells.items():
        seeds = max(len(v) for v in by_task.values())
        row = [f"{np.mean(by_task[t]):.4f}" if t in by_task else "-" for t in tasks]
        table.add_row(variant, *row, str(seeds))
    return table


def histogram_table(stats: CorpusStats) -> Table:
    table = Table(title=f"Corpus '{stats.corpus}' ({stats.clips} clips)")
    for column in ("histogram", "bin", "count"):
        table.add_column(column, justify="right" if column == "count" else "left")
    for hist in stats.histograms:
        for i, count in enumerate(hist.counts):
            table.add_row(hist.name, f"[{hist.edges[i]:.3g}, {hist.edges[i + 1]:.3g}]", str(count))
    return table


def histogram_svg(hist: Histogram, path: Path, corpus: str) -> Path:
    # Element ids are salted with a random uuid unless svg.hashsalt is fixed
    with plt.rc_context({"svg.hashsalt": "prism-report"}):
        fig, ax = plt.subplots(figsize=(5, 3))
        widths = np.diff(hist.edges)
        widths = np.where(widths > 0, widths, 1.0)
        ax.bar(hist.edges[:-1], hist.counts, width=widths, align="edge", edgecolor="black")
        ax.set_title(f"{corpus}: {hist.name}")
        ax.set_xlabel(hist.name)
        ax.set_ylabel("clips")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


class ReportGenerator:
    """Writes text reports (and SVG figures) under ``output_dir``"""

    def __init__(self, output_dir: str = "./runs"):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Report output directory: {self.output_dir}")

    def metrics_report(self, records: Sequence[MetricRecord], title: str = "Metrics") -> str:
        if not records:
            return f"{title}\n\nNo metric records.\n"
        return render(metrics_table(records, title))

    def stats_report(self, stats: Sequence[CorpusStats], svg: bool = False) -> Tuple[str, List[Path]]:
        """Histogram tables, plus one SVG per histogram when ``svg`` is set"""
        parts: List[str] = []
        figures: List[Path] = []
        for entry in stats:
            parts.append(render(histogram_table(entry)))
            if svg:
                for hist in entry.histograms:
                    path = self.output_dir / f"{entry.corpus}_{hist.name}.svg"
                    figures.append(histogram_svg(hist, path, entry.corpus))
        return "\n".join(parts), figures

    def write(self, name: str, content: str) -> Path:
        path = self.output_dir / name
        with open(path, "w", encoding="utf-8") as f:
            f.write(content)
        logger.info(f"  ✓ Report written: {path}")
        return path

    def generate(
        self,
        records: Sequence[MetricRecord],
        stats: Optional[Sequence[CorpusStats]] = None,
        svg: bool = False,
        name: str = "report.txt",
    ) -> Path:
        sections = [self.metrics_report(records)]
        if stats:
            text, figures = self.stats_report(stats, svg)
            sections.append(text)
            if figures:
                sections.append("Figures:\n" + "\n".join(f"  {p.name}" for p in figures) + "\n")
        return self.write(name, "\n".join(sections))

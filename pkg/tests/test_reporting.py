"""Unit tests for report generation"""

from pathlib import Path

from src.corpus.stats import corpus_stats, histogram
from src.reporting.generator import (
    ReportGenerator,
    comparison_table,
    histogram_svg,
    render,
    summarize_metrics,
)
from src.storage.schemas import MetricRecord


def records():
    return [
        MetricRecord("motion", "frozen", "accuracy", 0.5, seed=0, tags={"variant": "tube"}),
        MetricRecord("motion", "frozen", "accuracy", 0.7, seed=1, tags={"variant": "tube"}),
        MetricRecord("motion", "frozen", "accuracy", 0.9, seed=0, tags={"variant": "blockwise"}),
        MetricRecord("appearance", "frozen", "accuracy", 0.8, seed=0, tags={"variant": "blockwise"}),
    ]


def test_summarize_groups_seeds():
    """Seeds of one (task, regime, metric, tags) collapse into one group"""
    groups = summarize_metrics(records())
    assert groups[("motion", "frozen", "accuracy", "variant=tube")] == [0.5, 0.7]
    assert len(groups) == 3


def test_metrics_report_lists_mean_and_std(temp_output_dir):
    """Plain-text table with mean, std and seed count"""
    gen = ReportGenerator(temp_output_dir)
    text = gen.metrics_report(records())
    assert "0.6000" in text
    assert "0.1000" in text
    assert "variant=blockwise" in text
    assert "\x1b[" not in text


def test_metrics_report_empty(temp_output_dir):
    """No records gives a short notice instead of an empty table"""
    gen = ReportGenerator(temp_output_dir)
    assert "No metric records." in gen.metrics_report([])


def test_comparison_table_marks_missing_tasks():
    """Variants without a task show a dash in that column"""
    text = render(comparison_table(records()))
    tube_row = next(line for line in text.splitlines() if "tube" in line)
    assert "-" in tube_row
    assert "0.6000" in tube_row


def test_generate_writes_report_with_figures(temp_output_dir, toy_corpus):
    """The report joins metric and histogram sections and lists SVG figures"""
    gen = ReportGenerator(temp_output_dir)
    stats = corpus_stats(toy_corpus.records, "toy")
    path = gen.generate(records(), [stats], svg=True)
    content = path.read_text()
    assert "Corpus 'toy'" in content
    assert "toy_duration.svg" in content
    assert (Path(temp_output_dir) / "toy_caption_length.svg").exists()


def test_histogram_svg_is_reproducible(temp_output_dir):
    """Rendering the same histogram twice gives identical bytes"""
    hist = histogram("caption_length", [3, 4, 4, 5, 6], bins=3)
    a = histogram_svg(hist, Path(temp_output_dir) / "a.svg", "toy").read_bytes()
    b = histogram_svg(hist, Path(temp_output_dir) / "b.svg", "toy").read_bytes()
    assert a == b
    assert a.lstrip().startswith(b"<?xml")

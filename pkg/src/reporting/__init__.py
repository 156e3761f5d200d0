"""Reporting module for plain-text metric tables and corpus histograms"""

from .generator import (
    ReportGenerator,
    comparison_table,
    histogram_svg,
    histogram_table,
    metrics_table,
    render,
    summarize_metrics,
)

__all__ = [
    'ReportGenerator',
    'comparison_table',
    'histogram_svg',
    'histogram_table',
    'metrics_table',
    'render',
    'summarize_metrics',
]

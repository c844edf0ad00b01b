"""Report rendering: the exact percent-change row format, aggregate
verification, and plot artifacts."""

import numpy as np
import pytest

from molfuse import report
from molfuse.training import AblationRow, TargetSummary, percent_change


def rows_for(target, base_mae, multi_mae):
    return [
        AblationRow(target, "geometry_only", 0, 0, base_mae),
        AblationRow(target, "multimodal", 0, 0, multi_mae),
    ]


def test_percent_format_matches_benchmark_rows():
    # formatting fixture: MAE pairs constructed to the published ratios
    up = percent_change(1.0, 0.7964)
    down = percent_change(1.0, 1.1460)
    assert report.format_percent_change(up) == "+20.36% ↑"
    assert report.format_percent_change(down) == "−14.60% ↓"
    assert report.format_percent_change(up) == "+20.36% ↑"
    assert report.format_percent_change(down) == "−14.60% ↓"


def test_percent_format_markers():
    assert report.format_percent_change(12.07).endswith("↑")
    assert report.format_percent_change(-1.38).endswith("↓")
    assert report.format_percent_change(0.0) == "+0.00% ·"


def test_summaries_from_rows_and_verify():
    rows = rows_for("homo", 1.0, 0.8) + rows_for("gap", 0.5, 0.6)
    summaries = report.summaries_from_rows(rows)
    assert summaries["homo"].percent_change == pytest.approx(20.0)
    assert summaries["gap"].percent_change == pytest.approx(-20.0)
    assert report.verify_summaries(rows, summaries) == []


def test_verify_catches_tampered_summary():
    rows = rows_for("homo", 1.0, 0.8)
    summaries = report.summaries_from_rows(rows)
    summaries["homo"] = TargetSummary(
        target="homo", mae_geometry=1.0, mae_multimodal=0.8,
        percent_change=19.0, n_runs=1, seeds=[0], fold_hash="")
    problems = report.verify_summaries(rows, summaries)
    assert problems and "percent change" in problems[0]


def test_verify_catches_negative_mae():
    rows = [AblationRow("homo", "geometry_only", 0, 0, -0.1),
            AblationRow("homo", "multimodal", 0, 0, 0.1)]
    summaries = {"homo": TargetSummary("homo", -0.1, 0.1, -200.0, 1, [0], "")}
    assert any("negative" in p for p in report.verify_summaries(rows, summaries))


def test_render_summary_table_contains_rows():
    rows = rows_for("homo", 1.0, 0.7964) + rows_for("mu", 2.0, 2.2)
    summaries = report.summaries_from_rows(rows)
    text = report.render_summary_table(summaries, {"geometry_only": 100, "multimodal": 150},
                                       "note", "abc123")
    assert "HOMO" in text and "Dipole Moment" in text
    assert "+20.36% ↑" in text
    assert "−10.00% ↓" in text
    assert "+50 text pathway" in text
    assert "abc123" in text


def test_missing_modality_is_schema_error():
    rows = [AblationRow("homo", "geometry_only", 0, 0, 1.0)]
    with pytest.raises(Exception):
        report.summaries_from_rows(rows)


def test_plots_written(tmp_path):
    rows = rows_for("homo", 1.0, 0.9) + rows_for("gap", 0.5, 0.55)
    summaries = report.summaries_from_rows(rows)
    bar_path = tmp_path / "mae.png"
    report.plot_mae_bars(summaries, bar_path)
    assert bar_path.exists() and bar_path.stat().st_size > 0
    hist_path = tmp_path / "gates.png"
    report.plot_gate_histogram(np.random.default_rng(0).uniform(size=200), hist_path, "homo")
    assert hist_path.exists() and hist_path.stat().st_size > 0

"""Metric and figure CSV files: canonical ordering, parse errors."""

import numpy as np
import pytest

from flab.errors import ConfigError, DataFormatError
from flab.harness.csvio import (FIGURE_HEADER, METRICS_HEADER, MetricRow, fmt,
                                read_figure_csv, read_metrics_csv,
                                scope_sort_key, write_figure_csv,
                                write_mean_curves_csv, write_metrics_csv)


def test_fmt_is_nine_significant_digits():
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(2.0) == "2"
    assert fmt(1e-12) == "1e-12"
    assert fmt(123456789.123) == "123456789"


def test_scope_ordering():
    scopes = ["analysis:vf_probe", "class:10", "overall", "class:2",
              "analysis:cka"]
    ordered = sorted(scopes, key=scope_sort_key)
    assert ordered == ["overall", "class:2", "class:10", "analysis:cka",
                       "analysis:vf_probe"]
    with pytest.raises(ConfigError):
        scope_sort_key("class:abc")
    with pytest.raises(ConfigError):
        scope_sort_key("global")


def test_metrics_roundtrip_and_canonical_bytes(tmp_path):
    rows = [
        MetricRow(2, 0, "accuracy", "class:1", 0.25),
        MetricRow(1, 0, "accuracy", "overall", 1 / 3),
        MetricRow(1, 0, "accuracy", "class:0", 1 / 3),
        MetricRow(2, 0, "accuracy", "overall", 0.5),
    ]
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    write_metrics_csv(rows, p1)
    write_metrics_csv(list(reversed(rows)), p2)  # order-insensitive output
    assert p1.read_bytes() == p2.read_bytes()
    text = p1.read_text()
    assert text.startswith(METRICS_HEADER + "\n")
    assert "\r" not in text
    assert "0.333333333" in text
    back = read_metrics_csv(p1)
    assert back[0].scope == "overall" and back[0].exposure == 1
    assert back[0].value == pytest.approx(1 / 3, abs=1e-9)  # 9 sig digits
    assert len(back) == 4


def test_write_metrics_rejects_empty_and_bad_scope(tmp_path):
    with pytest.raises(ConfigError):
        write_metrics_csv([], tmp_path / "x.csv")
    with pytest.raises(ConfigError):
        write_metrics_csv([MetricRow(1, 0, "accuracy", "nope", 0.5)],
                          tmp_path / "x.csv")


def test_read_metrics_error_positions(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("wrong,header\n")
    with pytest.raises(DataFormatError, match=r"m\.csv:1"):
        read_metrics_csv(p)
    p.write_text(METRICS_HEADER + "\n1,0,acc,overall\n")
    with pytest.raises(DataFormatError, match=r"m\.csv:2: expected 5 fields"):
        read_metrics_csv(p)
    p.write_text(METRICS_HEADER + "\n1,0,acc,overall,ok\n")
    with pytest.raises(DataFormatError, match=r"m\.csv:2"):
        read_metrics_csv(p)
    with pytest.raises(DataFormatError, match="cannot read"):
        read_metrics_csv(tmp_path / "absent.csv")


def test_mean_curves_aggregation(tmp_path):
    rows = [MetricRow(1, s, "accuracy", "overall", v)
            for s, v in enumerate([0.5, 0.7, 0.6])]
    rows.append(MetricRow(1, 0, "accuracy", "class:0", 0.9))
    p = tmp_path / "curves.csv"
    write_mean_curves_csv(rows, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "exposure,metric,scope,mean,stderr"
    first = lines[1].split(",")
    assert first[:3] == ["1", "accuracy", "overall"]
    assert float(first[3]) == pytest.approx(0.6)
    want_se = np.std([0.5, 0.7, 0.6], ddof=1) / np.sqrt(3)
    assert float(first[4]) == pytest.approx(want_se)
    single = lines[2].split(",")
    assert single[2] == "class:0" and float(single[4]) == 0.0
    with pytest.raises(ConfigError):
        write_mean_curves_csv([], p)


def test_figure_csv_roundtrip_and_sorting(tmp_path):
    pts = [(2.0, "yass", 0.8, 0.01), (1.0, "yass", 0.9, 0.02),
           (1.0, "batch", 0.95, 0.0)]
    p = tmp_path / "fig.csv"
    write_figure_csv(pts, p)
    lines = p.read_text().splitlines()
    assert lines[0] == FIGURE_HEADER
    assert lines[1].startswith("1,batch")  # sorted by series then x
    assert lines[2].startswith("1,yass")
    back = read_figure_csv(p)
    assert back == sorted(pts, key=lambda q: (q[1], q[0]))
    with pytest.raises(ConfigError):
        write_figure_csv([], p)


def test_figure_csv_error_positions(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("x,series\n")
    with pytest.raises(DataFormatError, match=r"f\.csv:1"):
        read_figure_csv(p)
    p.write_text(FIGURE_HEADER + "\n1,a,2\n")
    with pytest.raises(DataFormatError, match=r"f\.csv:2: expected 4 fields"):
        read_figure_csv(p)
    p.write_text(FIGURE_HEADER + "\n1,a,x,0\n")
    with pytest.raises(DataFormatError, match=r"f\.csv:2"):
        read_figure_csv(p)
    p.write_text(FIGURE_HEADER + "\n")
    with pytest.raises(DataFormatError, match="no data rows"):
        read_figure_csv(p)

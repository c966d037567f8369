import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image
from scipy import stats

from mesa.backbone import LAYERS
from mesa.weights import (
    InsufficientSampleError,
    LayerWeighting,
    WeightingError,
    WidthDistribution,
    boxes_from_tesseract_tsv,
    derive_weights,
    explicit_weighting,
    extract_letter_widths,
    fit_distribution,
    layer_intervals,
    load_weights_file,
    parse_weights_report,
    read_box_table,
    uniform_weighting,
    weighting_for,
    weights_from_intervals,
    weights_report,
    write_box_table,
)


def box(width, text, box_id="b0"):
    return {"image_id": "img", "box_id": box_id, "left": 0, "top": 0, "width": width, "height": 10, "text": text}


def test_widths_emitted_per_character():
    assert list(extract_letter_widths([box(60, "ABC")]).widths) == [20, 20, 20]
    assert list(extract_letter_widths([box(20, "A")]).widths) == [20]


def test_whitespace_not_counted_and_empty_text_skipped():
    s = extract_letter_widths([box(40, "A B"), box(30, "  ")])
    assert list(s.widths) == [20, 20] and s.skipped == 0


def test_malformed_rows_skipped_with_count():
    rows = [box(-5, "AB"), {"width": 10}, box("x", "A"), box(12, "AB")]
    s = extract_letter_widths(rows)
    assert list(s.widths) == [6, 6] and s.skipped == 3


def test_no_usable_boxes():
    with pytest.raises(WeightingError, match="no usable boxes"):
        extract_letter_widths([])


def test_box_table_round_trip(tmp_path):
    rows = [box(60, "ABC", "1"), box(33, "ΔΕ", "2")]
    write_box_table(tmp_path / "b.tsv", rows)
    back = read_box_table(tmp_path / "b.tsv")
    assert [r["text"] for r in back] == ["ABC", "ΔΕ"]
    assert list(extract_letter_widths(back).widths) == [20, 20, 20, 16.5, 16.5]


def test_tesseract_adapter(tmp_path):
    header = "level\tpage_num\tblock_num\tpar_num\tline_num\tword_num\tleft\ttop\twidth\theight\tconf\ttext"
    lines = [header, "1\t1\t0\t0\t0\t0\t0\t0\t200\t100\t-1\t", "5\t1\t1\t1\t1\t1\t10\t5\t40\t20\t91.0\tDIS",
             "5\t1\t1\t1\t1\t2\t60\t5\t20\t20\t88.5\tM"]
    (tmp_path / "t.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    rows = boxes_from_tesseract_tsv(tmp_path / "t.tsv")
    assert [r["text"] for r in rows] == ["DIS", "M"]
    widths = extract_letter_widths(rows).widths
    assert np.allclose(widths, [40 / 3] * 3 + [20])


def test_fit_recovers_normal():
    data = np.random.default_rng(0).normal(20, 4, 1000)
    d = fit_distribution(data)
    assert d.family == "normal"
    assert 19 <= d.mu <= 21 and 3.6 <= d.sigma <= 4.4


def test_fit_selects_lognormal():
    data = np.random.default_rng(1).lognormal(math.log(20), 0.6, 1000)
    assert fit_distribution(data).family == "lognormal"


def test_fit_errors():
    with pytest.raises(WeightingError, match="zero-variance"):
        fit_distribution([20.0] * 10)
    with pytest.raises(InsufficientSampleError):
        fit_distribution([1.0, 2.0, 3.0])


def test_fit_is_deterministic():
    data = np.random.default_rng(5).gamma(9, 2.5, 200)
    assert fit_distribution(data) == fit_distribution(data)


def test_rf_partition_normal_20_6():
    w = derive_weights(WidthDistribution.from_family("normal", (20, 6)))
    F = stats.norm(20, 6).cdf
    oracle = [F(3) - F(0), F(6) - F(3), F(16) - F(6), F(52) - F(16), 1 - F(52)]
    assert np.allclose(w.raw, oracle, atol=1e-12)
    assert np.allclose(w.raw, [0.0023, 0.0075, 0.2427, 0.7475, 0.0], atol=1e-3)
    assert math.fsum(w.raw) == pytest.approx(1 - F(0))
    assert w.intervals[0] == (0.0, 3.0) and w.intervals[-1] == (52.0, math.inf)


def test_single_layer_gets_everything():
    w = derive_weights(WidthDistribution.from_family("gamma", (3.0, 0, 5.0)), ["AvgPool2"])
    assert w.normalized == (1.0,)


def test_symmetric_sigma_brackets_split_evenly():
    d = WidthDistribution.from_family("normal", (20, 5))
    w = weights_from_intervals(d, ["AvgPool1", "AvgPool2"], [(15, 20), (20, 25)], "sigma-intervals")
    assert w.normalized[0] == pytest.approx(0.5, abs=1e-12) and w.normalized[1] == pytest.approx(0.5, abs=1e-12)


def test_sigma_interval_layout():
    d = WidthDistribution.from_family("normal", (20, 5))
    assert layer_intervals(d, LAYERS, "sigma-intervals") == [(10, 15), (15, 20), (20, 25), (25, 30), (30, math.inf)]
    assert layer_intervals(d, LAYERS[:2], "sigma-intervals") == [(10, 15), (15, 20)]


def test_interval_errors():
    d = WidthDistribution.from_family("normal", (20, 5))
    with pytest.raises(WeightingError):
        layer_intervals(d, [])
    with pytest.raises(WeightingError, match="increasing"):
        layer_intervals(d, ["AvgPool2", "layer1"])
    with pytest.raises(WeightingError, match="scheme"):
        layer_intervals(d, LAYERS, "bogus")


families = st.sampled_from(["normal", "lognormal", "gamma"])


def _dist(family, a, b):
    if family == "normal":
        return WidthDistribution.from_family("normal", (a, b))
    if family == "lognormal":
        return WidthDistribution.from_family("lognormal", (b / a, 0, a))
    return WidthDistribution.from_family("gamma", (a / b + 0.5, 0, b))


@settings(max_examples=150, deadline=None)
@given(
    families,
    st.floats(1, 150),
    st.floats(0.5, 60),
    st.sampled_from(["rf-partition", "sigma-intervals"]),
    st.integers(1, 5),
)
def test_normalization_invariant(family, a, b, scheme, n):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w = derive_weights(_dist(family, a, b), LAYERS[-n:] if n < 5 else LAYERS, scheme)
    assert abs(math.fsum(w.normalized) - 1) <= 1e-9
    assert all(x >= 0 for x in w.normalized)


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 120), st.floats(0.5, 30), st.floats(0.1, 50))
def test_last_layer_weight_monotone_in_mean(mu, sigma, shift):
    lo = derive_weights(WidthDistribution.from_family("normal", (mu, sigma)))
    hi = derive_weights(WidthDistribution.from_family("normal", (mu + shift, sigma)))
    assert hi.raw[-1] >= lo.raw[-1]


def test_zero_mass_falls_back_to_uniform():
    d = WidthDistribution.from_family("normal", (5000, 1))
    with pytest.warns(UserWarning, match="zero probability"):
        w = weights_from_intervals(d, ["layer1", "AvgPool1"], [(0, 3), (3, 6)])
    assert w.normalized == (0.5, 0.5)


def test_weighting_rejects_bad_sum():
    with pytest.raises(WeightingError):
        LayerWeighting(("layer1",), (0.5,), (0.5,), ((0, 1),))


def test_small_sample_falls_back_to_uniform():
    sample = extract_letter_widths([box(21, "ABC")])
    with pytest.warns(UserWarning, match="uniform"):
        w, dist = weighting_for(sample)
    assert dist is None and w.scheme == "uniform" and w.normalized == uniform_weighting().normalized


def test_report_round_trip_and_plot(tmp_path):
    sample = extract_letter_widths([box(float(w), "AB", str(i)) for i, w in enumerate(np.random.default_rng(2).normal(40, 6, 30))])
    w, dist = weighting_for(sample, scheme="sigma-intervals")
    doc = weights_report(w, dist, tmp_path / "w.json", tmp_path / "w.png", sample)
    assert parse_weights_report(doc) == w
    assert parse_weights_report(tmp_path / "w.json") == w
    assert abs(sum(r["normalized"] for r in doc["weighting"]["layers"]) - 1) <= 1e-9
    with Image.open(tmp_path / "w.png") as im:
        im.load()
        assert im.format == "PNG"


def test_uniform_report_survives_nan_intervals(tmp_path):
    w = uniform_weighting()
    weights_report(w, None, tmp_path / "u.json")
    text = (tmp_path / "u.json").read_text()
    json.loads(text)
    assert "NaN" not in text
    back = parse_weights_report(tmp_path / "u.json")
    assert back.normalized == w.normalized


def test_weights_file_flat_map(tmp_path):
    (tmp_path / "w.json").write_text(json.dumps({"AvgPool2": 0.25, "AvgPool3": 0.75}))
    w = load_weights_file(tmp_path / "w.json")
    assert w.layers == ("AvgPool2", "AvgPool3") and w.normalized == (0.25, 0.75)
    (tmp_path / "bad.json").write_text(json.dumps({"AvgPool2": 0.25, "AvgPool3": 0.5}))
    with pytest.raises(WeightingError, match="sum"):
        load_weights_file(tmp_path / "bad.json")
    with pytest.raises(WeightingError, match="unknown"):
        explicit_weighting({"conv5": 1.0})

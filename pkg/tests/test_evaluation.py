import math
from types import SimpleNamespace

import numpy as np
import pytest

from codepth.evaluation import (
    CATEGORIES,
    MetricSet,
    ProtocolReport,
    ReportRow,
    compute_metrics,
    cross_domain_from,
    evaluate_checkpoint,
    mean_metrics,
    normalize_curves,
    read_report_csv,
    report_header,
    write_domain_csv,
    write_report_csv,
)


def test_perfect_prediction():
    gt = np.array([1.0, 3.0, 7.5])
    m = compute_metrics(gt, gt)
    assert (m.rmse, m.abs_rel, m.sq_rel, m.log_rmse) == (0, 0, 0, 0)
    assert (m.delta_1, m.delta_2, m.delta_3) == (1, 1, 1)


def test_hand_computed_case():
    m = compute_metrics(np.array([1.0, 2.0]), np.array([1.0, 4.0]))
    assert m.rmse == math.sqrt(2.0)
    assert m.rmse == pytest.approx(1.4142, abs=1e-4)
    assert m.abs_rel == 0.25
    assert m.sq_rel == 0.5
    assert m.log_rmse == pytest.approx(math.log(2.0) / math.sqrt(2.0), rel=1e-15)
    assert (m.delta_1, m.delta_2, m.delta_3) == (0.5, 0.5, 0.5)


def test_ratio_cases():
    gt = np.array([1.0, 2.5, 10.0])
    m = compute_metrics(1.2 * gt, gt)
    assert m.delta_1 == 1.0 and m.abs_rel == pytest.approx(0.2, rel=1e-12)
    m = compute_metrics(2.0 * gt, gt)
    assert (m.delta_1, m.delta_2, m.delta_3) == (0.0, 0.0, 0.0)


def test_delta_threshold_is_strict():
    m = compute_metrics(np.array([1.25]), np.array([1.0]))
    assert m.delta_1 == 0.0 and m.delta_2 == 1.0


@pytest.mark.parametrize("k", [0.25, 0.5, 1.5, 2.0, 3.0])
def test_abs_rel_of_scaled_truth_exact(k):
    gt = np.array([0.5, 1.0, 2.0, 4.0, 8.0])
    assert compute_metrics(k * gt, gt).abs_rel == abs(k - 1)


def test_abs_rel_of_scaled_truth_random():
    rng = np.random.default_rng(0)
    gt = rng.uniform(1, 80, 200)
    for k in rng.uniform(0.1, 5, 20):
        assert compute_metrics(k * gt, gt).abs_rel == pytest.approx(abs(k - 1), rel=1e-12, abs=1e-15)


def test_median_alignment_scale_invariance():
    rng = np.random.default_rng(1)
    pred, gt = rng.uniform(1, 10, 101), rng.uniform(1, 10, 101)
    base = compute_metrics(pred, gt, align="median")
    for c in (0.125, 0.5, 4.0, 1024.0):  # exact in binary floating point
        assert compute_metrics(c * pred, gt, align="median") == base
    for c in rng.uniform(0.01, 100, 10):
        other = compute_metrics(c * pred, gt, align="median")
        assert other.values() == pytest.approx(base.values(), rel=1e-12, abs=1e-15)


def test_mask_selects_pixels():
    pred = np.array([[1.0, 100.0], [2.0, 3.0]])
    gt = np.array([[1.0, 1.0], [2.0, 3.0]])
    mask = np.array([[True, False], [True, True]])
    assert compute_metrics(pred, gt, mask).rmse == 0.0


def test_metric_errors():
    with pytest.raises(ValueError, match="empty"):
        compute_metrics(np.ones(3), np.ones(3), np.zeros(3, bool))
    with pytest.raises(ValueError, match="alignment"):
        compute_metrics(np.ones(3), np.ones(3), align="mean")
    with pytest.raises(ValueError, match="shapes"):
        compute_metrics(np.ones(3), np.ones(4))


def ms(abs_rel, rmse=1.0):
    return MetricSet(rmse, abs_rel, 0.0, 0.0, 1.0, 1.0, 1.0)


def test_cross_domain_average():
    got = cross_domain_from({"A0": ms(0.1), "A1": ms(0.3), "A2": ms(9.0)}, ["A0", "A1"])
    assert got.abs_rel == 0.2
    assert cross_domain_from({"A0": ms(0.1)}, []) is None


def sample(depth, fill):
    gt = np.full((2, 2), depth)
    return SimpleNamespace(gt_depth=gt, gt_mask=np.ones((2, 2), bool), pred=gt * fill)


def protocol_fixture():
    eval_sets = {
        "A0": [sample(2.0, 1.1), sample(3.0, 1.3)],
        "B0": [sample(20.0, 0.9)],
        "B3": [sample(30.0, 1.5), sample(40.0, 1.0)],
        "B4": [sample(50.0, 1.2)],
    }
    dist = {d: d[0] for d in eval_sets}
    return eval_sets, dist


def test_after_pretrain_online_adapt_absent():
    eval_sets, dist = protocol_fixture()
    row = evaluate_checkpoint(lambda s: s.pred, eval_sets, 0, ["A0", "B0"], "B", dist)
    assert row.categories["online_adapt"] is None and row.domain == ""
    assert row.categories["cross_domain"].abs_rel == pytest.approx(0.1)


def test_protocol_categories():
    eval_sets, dist = protocol_fixture()
    row = evaluate_checkpoint(lambda s: s.pred, eval_sets, 50, ["A0", "B0", "B3", "B4"], "B", dist, current_domain="B4")
    cats = row.categories
    # current distribution: every B frame, averaged frame by frame
    assert cats["current_dist"].abs_rel == pytest.approx((0.1 + 0.5 + 0.0 + 0.2) / 4)
    assert cats["cross_dist"].abs_rel == pytest.approx((0.1 + 0.3) / 2)
    assert cats["online_adapt"] == row.per_domain["B4"]
    # previous domains of the current distribution, pre-training ones included
    assert cats["cross_domain"].abs_rel == pytest.approx((0.1 + 0.25) / 2)
    assert cats["cross_domain"] == cross_domain_from(row.per_domain, ["B0", "B3"])
    assert row.frame_counts == {"A0": 2, "B0": 1, "B3": 2, "B4": 1}


def test_two_frame_mean():
    eval_sets = {"B0": [sample(10.0, 1.2), sample(10.0, 0.6)]}
    row = evaluate_checkpoint(lambda s: s.pred, eval_sets, 0, [], "B", {"B0": "B"})
    assert row.categories["current_dist"].abs_rel == pytest.approx(0.3)
    assert row.categories["cross_domain"] is None


def report(rmses_cur, rmses_cross):
    rows = [
        ReportRow(i, "B3", {"current_dist": ms(0, a), "cross_dist": ms(0, b), "online_adapt": None, "cross_domain": None}, {})
        for i, (a, b) in enumerate(zip(rmses_cur, rmses_cross))
    ]
    return ProtocolReport(rows)


def test_normalize_against_itself():
    base = report([1.0, 3.0, 2.0], [4.0, 2.0, 8.0])
    curves = normalize_curves(base, base)
    assert max(c["current_dist"] for c in curves) == 1.0
    assert max(c["cross_dist"] for c in curves) == 1.0


def test_normalize_constant_series():
    curves = normalize_curves(report([2.0, 2.0], [2.0, 2.0]), report([4.0, 1.0], [4.0, 4.0]))
    assert [c["current_dist"] for c in curves] == [0.5, 0.5]


def test_normalize_preserves_order():
    base = report([3.0, 5.0, 4.0], [1.0, 2.0, 6.0])
    a, b = report([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]), report([1.5, 2.5, 3.5], [2.5, 3.0, 2.1])
    for x, y in zip(normalize_curves(a, base), normalize_curves(b, base)):
        assert x["current_dist"] < y["current_dist"] and x["cross_dist"] < y["cross_dist"]


def test_normalize_zero_baseline():
    with pytest.raises(ValueError, match="zero"):
        normalize_curves(report([1.0], [1.0]), report([0.0], [1.0]))


def test_report_csv_round_trip(tmp_path):
    eval_sets, dist = protocol_fixture()
    rows = [
        evaluate_checkpoint(lambda s: s.pred, eval_sets, 0, ["A0", "B0"], "B", dist),
        evaluate_checkpoint(lambda s: s.pred, eval_sets, 7, ["A0", "B0", "B3"], "B", dist, current_domain="B3"),
    ]
    rep = ProtocolReport(rows)
    path = tmp_path / "report.csv"
    write_report_csv(path, rep)
    back = read_report_csv(path)
    for a, b in zip(rep.rows, back.rows):
        assert (a.step, a.domain) == (b.step, b.domain)
        assert all(a.categories[c] == b.categories[c] for c in CATEGORIES)
    header = path.read_text().splitlines()[0].split(",")
    assert header == report_header() and len(header) == 2 + 4 * 7
    write_domain_csv(tmp_path / "domains.csv", rep, dist)
    assert len((tmp_path / "domains.csv").read_text().splitlines()) == 1 + 2 * 4


def test_mean_metrics_requires_items():
    with pytest.raises(ValueError):
        mean_metrics([])

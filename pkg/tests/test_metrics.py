from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stepqa.metrics import (
    MetricsReport, RankRecord, bucket_label, bucket_report, compute_metrics,
    format_ablation_table, format_report, rank_of_truth,
)


def record(rank, j=5, bucket="<=10", sample_id="s0", step=0):
    return RankRecord(sample_id=sample_id, step_index=step, candidate_count=j,
                      rank=rank, bucket=bucket)


# ---------------------------------------------------------------------------
# rank_of_truth
# ---------------------------------------------------------------------------

def test_rank_argmax():
    assert rank_of_truth([0.1, 0.9, 0.5], 1) == 1


def test_rank_tie_later_index_loses():
    assert rank_of_truth([0.5, 0.5], 1) == 2


def test_rank_tie_earlier_index_wins():
    assert rank_of_truth([0.5, 0.5], 0) == 1


def test_rank_truth_out_of_range():
    with pytest.raises(IndexError):
        rank_of_truth([0.1, 0.2], 2)


def sort_oracle_rank(scores, truth):
    """Brute force: position of truth after a stable sort by (-score, index)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order.index(truth) + 1


@settings(deadline=None, max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_rank_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    j = int(rng.integers(1, 12))
    # Quantized scores force frequent ties.
    scores = np.round(rng.standard_normal(j), 1)
    truth = int(rng.integers(j))
    assert rank_of_truth(scores, truth) == sort_oracle_rank(list(scores), truth)


# ---------------------------------------------------------------------------
# compute_metrics
# ---------------------------------------------------------------------------

def test_metrics_hand_arithmetic():
    report = compute_metrics([record(1), record(2), record(4)])
    assert report.r_at_1 == pytest.approx(1 / 3)
    assert report.r_at_3 == pytest.approx(2 / 3)
    assert report.mr == pytest.approx(7 / 3)
    assert report.mrr == pytest.approx((1 + 0.5 + 0.25) / 3)


def test_metrics_perfect_ranking():
    report = compute_metrics([record(1), record(1)])
    assert (report.r_at_1, report.r_at_3, report.mr, report.mrr) == (1, 1, 1, 1)


def test_metrics_empty_rejected():
    with pytest.raises(ValueError):
        compute_metrics([])


def test_metrics_rank_bounds_validated():
    with pytest.raises(ValueError):
        compute_metrics([record(6, j=5)])


@settings(deadline=None, max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_metrics_match_sort_oracle_end_to_end(seed):
    rng = np.random.default_rng(seed)
    records, oracle_ranks = [], []
    for i in range(rng.integers(1, 30)):
        j = int(rng.integers(1, 9))
        scores = np.round(rng.standard_normal(j), 1)
        truth = int(rng.integers(j))
        records.append(record(rank_of_truth(scores, truth), j=j, sample_id=f"s{i}"))
        oracle_ranks.append(sort_oracle_rank(list(scores), truth))
    report = compute_metrics(records)
    n = len(oracle_ranks)
    assert report.r_at_1 == sum(r == 1 for r in oracle_ranks) / n
    assert report.r_at_3 == sum(r <= 3 for r in oracle_ranks) / n
    assert report.mr == sum(oracle_ranks) / n
    assert report.recip_sum == sum(Fraction(1, r) for r in oracle_ranks)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_metric_invariants(seed):
    rng = np.random.default_rng(seed)
    records = [record(int(rng.integers(1, 7)), j=8, sample_id=f"s{i}")
               for i in range(int(rng.integers(1, 25)))]
    report = compute_metrics(records)
    assert 0 <= report.r_at_1 <= report.r_at_3 <= 1
    # Jensen, exact in rational arithmetic
    assert report.recip_sum / report.count >= Fraction(report.count, report.rank_sum)


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_ranks_invariant_under_increasing_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal(6)
    truth = int(rng.integers(6))
    transformed = np.tanh(scores) * 5 + 2
    assert rank_of_truth(scores, truth) == rank_of_truth(transformed, truth)


# ---------------------------------------------------------------------------
# buckets
# ---------------------------------------------------------------------------

def test_bucket_boundary_semantics():
    labels = [bucket_label(n) for n in (10, 11, 20, 21)]
    assert labels == ["<=10", "11-20", "11-20", ">20"]


def test_single_bucket_report_equals_overall():
    records = [record(r, bucket="11-20") for r in (1, 2, 3)]
    report = bucket_report(records)
    assert list(report.buckets) == ["11-20"]
    sub = report.buckets["11-20"]
    assert (sub.count, sub.rank_sum, sub.hits_at_1) == \
        (report.count, report.rank_sum, report.hits_at_1)


def test_grid_has_three_bucket_rows_plus_all_samples():
    records = [record(1, bucket="<=10"), record(2, bucket="11-20"),
               record(3, bucket=">20"), record(1, bucket="<=10")]
    text = format_report(bucket_report(records))
    lines = text.strip().splitlines()
    assert len(lines) == 5   # header + three buckets + all samples
    assert lines[1].startswith("<=10 buttons")
    assert lines[2].startswith("11-20 buttons")
    assert lines[3].startswith(">20 buttons")
    assert lines[4].startswith("all samples")


def test_empty_bucket_gets_notice_not_row():
    records = [record(1, bucket="<=10")]
    text = format_report(bucket_report(records))
    assert "(no samples)" in text
    assert "all samples" in text


def test_overall_is_exact_weighted_mean_of_buckets():
    rng = np.random.default_rng(7)
    records = []
    for i in range(200):
        bucket = bucket_label(int(rng.integers(1, 30)))
        records.append(record(int(rng.integers(1, 7)), j=8, bucket=bucket,
                              sample_id=f"s{i}"))
    report = bucket_report(records)
    total = sum(sub.count for sub in report.buckets.values())
    assert total == report.count
    for metric in ("r_at_1", "r_at_3", "mr", "mrr"):
        weighted = sum(sub.metric_fractions()[metric] * sub.count
                       for sub in report.buckets.values())
        assert weighted / report.count == report.metric_fractions()[metric]


def test_report_values_print_to_four_decimals():
    text = format_report(bucket_report([record(1), record(3)]))
    assert "0.5000" in text and "2.0000" in text


def test_ablation_table_shape():
    rep_a = compute_metrics([record(1), record(2)])
    rep_b = compute_metrics([record(2), record(2)])
    text = format_ablation_table([("gru", rep_a), ("mlp", rep_b)])
    lines = text.strip().splitlines()
    assert lines[0].startswith("step network")
    assert lines[1].startswith("gru") and lines[2].startswith("mlp")
    assert lines[3] == "higher R@1: gru"

"""Ranking metrics (R@1, R@3, MR, MRR) and the button-count bucket grid.

Reports keep exact integer/rational accumulators (hit counts, rank sum,
reciprocal-rank sum as a Fraction) and expose the float metrics as
properties. That makes the aggregation identity -- the overall row is
the record-count-weighted mean of the bucket rows -- hold exactly, not
within float roundoff, and lets the Jensen bound MRR >= 1/MR be asserted
in exact arithmetic on every report.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

DEFAULT_BUCKET_BOUNDS = (10, 20)


@dataclass
class RankRecord:
    """Ground-truth rank for one step of one sample."""

    sample_id: str
    step_index: int
    candidate_count: int
    rank: int          # 1-based
    bucket: str


def bucket_label(button_count: int, bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS) -> str:
    low, high = bounds
    if button_count <= low:
        return f"<={low}"
    if button_count <= high:
        return f"{low + 1}-{high}"
    return f">{high}"


def bucket_order(bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS) -> list[str]:
    low, high = bounds
    return [f"<={low}", f"{low + 1}-{high}", f">{high}"]


def rank_of_truth(scores, truth: int) -> int:
    """1-based rank of the truth candidate; earlier index wins ties."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not 0 <= truth < scores.size:
        raise IndexError(f"truth index {truth} out of range for {scores.size} scores")
    target = scores[truth]
    strictly_better = int((scores > target).sum())
    earlier_ties = int((scores[:truth] == target).sum())
    return 1 + strictly_better + earlier_ties


@dataclass
class MetricsReport:
    """Aggregated ranking metrics, exact accumulators inside."""

    count: int
    hits_at_1: int
    hits_at_3: int
    rank_sum: int
    recip_sum: Fraction
    buckets: dict[str, "MetricsReport"] | None = field(default=None)

    @property
    def r_at_1(self) -> float:
        return self.hits_at_1 / self.count

    @property
    def r_at_3(self) -> float:
        return self.hits_at_3 / self.count

    @property
    def mr(self) -> float:
        return self.rank_sum / self.count

    @property
    def mrr(self) -> float:
        return float(self.recip_sum / self.count)

    def metric_fractions(self) -> dict[str, Fraction]:
        """Exact rational values of all four metrics."""
        n = self.count
        return {
            "r_at_1": Fraction(self.hits_at_1, n),
            "r_at_3": Fraction(self.hits_at_3, n),
            "mr": Fraction(self.rank_sum, n),
            "mrr": self.recip_sum / n,
        }

    def to_dict(self, include_buckets: bool = True) -> dict:
        payload = {
            "count": self.count,
            "r_at_1": self.r_at_1,
            "r_at_3": self.r_at_3,
            "mr": self.mr,
            "mrr": self.mrr,
        }
        if include_buckets and self.buckets is not None:
            payload["buckets"] = {
                label: sub.to_dict(include_buckets=False)
                for label, sub in self.buckets.items()
            }
        return payload


def compute_metrics(records: list[RankRecord]) -> MetricsReport:
    """R@k = fraction ranked in the top k; MR = mean rank; MRR = mean 1/rank."""
    if not records:
        raise ValueError("compute_metrics: empty record list")
    hits1 = hits3 = rank_sum = 0
    recip = Fraction(0)
    for r in records:
        if not 1 <= r.rank <= r.candidate_count:
            raise ValueError(
                f"record {r.sample_id!r} step {r.step_index}: rank {r.rank} "
                f"outside [1, {r.candidate_count}]")
        hits1 += r.rank == 1
        hits3 += r.rank <= 3
        rank_sum += r.rank
        recip += Fraction(1, r.rank)
    report = MetricsReport(
        count=len(records),
        hits_at_1=hits1,
        hits_at_3=hits3,
        rank_sum=rank_sum,
        recip_sum=recip,
    )
    # Jensen: mean(1/rank) >= 1/mean(rank), exact in rational arithmetic.
    assert report.recip_sum * report.rank_sum >= report.count * report.count, \
        "reciprocal-rank mean fell below the Jensen bound; ranks are corrupted"
    return report


def bucket_report(records: list[RankRecord],
                  bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS) -> MetricsReport:
    """Overall report with per-bucket sub-reports in fixed bucket order."""
    overall = compute_metrics(records)
    buckets: dict[str, MetricsReport] = {}
    for label in bucket_order(bounds):
        subset = [r for r in records if r.bucket == label]
        if subset:
            buckets[label] = compute_metrics(subset)
    overall.buckets = buckets
    return overall


def format_report(report: MetricsReport,
                  bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS) -> str:
    """Bucket grid as text: three button-count rows plus the all-samples row."""
    header = f"{'subset':<18}{'R@1':>8}{'R@3':>8}{'MR':>8}{'MRR':>8}{'n':>7}"
    lines = [header]

    def row(label: str, rep: MetricsReport) -> str:
        return (f"{label:<18}{rep.r_at_1:>8.4f}{rep.r_at_3:>8.4f}"
                f"{rep.mr:>8.4f}{rep.mrr:>8.4f}{rep.count:>7d}")

    buckets = report.buckets or {}
    for label in bucket_order(bounds):
        pretty = f"{label} buttons"
        if label in buckets:
            lines.append(row(pretty, buckets[label]))
        else:
            lines.append(f"{pretty:<18}(no samples)")
    lines.append(row("all samples", report))
    return "\n".join(lines) + "\n"


def format_ablation_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Side-by-side step-network comparison; direction reported, not asserted."""
    header = f"{'step network':<14}{'R@1':>8}{'R@3':>8}{'MR':>8}{'MRR':>8}"
    lines = [header]
    for name, rep in rows:
        lines.append(f"{name:<14}{rep.r_at_1:>8.4f}{rep.r_at_3:>8.4f}"
                     f"{rep.mr:>8.4f}{rep.mrr:>8.4f}")
    if rows:
        best = max(rows, key=lambda item: item[1].r_at_1)
        lines.append(f"higher R@1: {best[0]}")
    return "\n".join(lines) + "\n"

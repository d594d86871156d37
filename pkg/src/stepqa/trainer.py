"""Training loop: stratified split, gradient accumulation, best-epoch pick.

Seeding: the master seed spawns three independent child streams
(parameter init, split sampling, epoch shuffling) via
``np.random.SeedSequence``, so a config+seed+dataset triple maps to a
bitwise-reproducible run. ``shuffle_seed`` may override the shuffle
stream alone, which keeps pre-update losses a function of the init seed
only.

Per-epoch wall time is tracked in memory for progress display but kept
out of the serialized log: emitted logs must be byte-identical across
reruns.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError
from .grounding import FeatureBundle
from .metrics import (
    DEFAULT_BUCKET_BOUNDS, MetricsReport, RankRecord, bucket_label, bucket_report,
    rank_of_truth,
)
from .model import Model, ModelConfig
from .tensor import Graph, sgd_step, zero_grads


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.002
    d_h: int = 768
    heads: int = 3
    d_o: int | None = None
    d_s: int | None = None
    step_variant: str = "gru"
    seed: int = 0
    shuffle_seed: int | None = None
    precision: str = "f32"
    split_ratio: float = 0.25           # validation fraction of the training pool
    bucket_bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(
                f"split_ratio must be in (0, 1); got {self.split_ratio} "
                "(a validation set is required for best-epoch selection)")
        self.bucket_bounds = tuple(self.bucket_bounds)
        if len(self.bucket_bounds) != 2 or self.bucket_bounds[0] >= self.bucket_bounds[1]:
            raise ConfigError(f"bucket_bounds must be (low, high), got {self.bucket_bounds}")

    def model_config(self, d_v: int, d_t: int) -> ModelConfig:
        return ModelConfig(
            d_v=d_v, d_t=d_t, d_h=self.d_h, heads=self.heads,
            d_o=self.d_o, d_s=self.d_s, step_variant=self.step_variant,
            precision=self.precision,
        )

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["bucket_bounds"] = list(self.bucket_bounds)
        return payload


@dataclass
class EpochRecord:
    epoch: int                      # 1-based
    train_loss: float
    val_metrics: MetricsReport
    updates: int
    wall_time: float                # display only; never serialized

    def to_json_line(self) -> str:
        payload = {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "updates": self.updates,
            "val": self.val_metrics.to_dict(),
        }
        return json.dumps(payload, sort_keys=True)


@dataclass
class TrainLog:
    config: dict
    entries: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    eval_carry: str = "greedy"

    def to_jsonl(self) -> str:
        head = json.dumps(
            {"config": self.config, "best_epoch": self.best_epoch,
             "eval_carry": self.eval_carry},
            sort_keys=True)
        lines = [head] + [rec.to_json_line() for rec in self.entries]
        return "\n".join(lines) + "\n"


def stratified_split(dataset: list[FeatureBundle], ratio: float, seed,
                     bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS,
                     ) -> tuple[list[FeatureBundle], list[FeatureBundle]]:
    """Split so each button-count bucket contributes ~ratio of itself to validation.

    Per bucket the validation count is the bucket size times ratio rounded
    half-up (never below zero); members are drawn uniformly by the seeded
    generator, consuming one permutation per bucket in bucket order.
    """
    if not dataset:
        raise ValueError("stratified_split: empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(
            f"split ratio must be in (0, 1), got {ratio} "
            "(a validation set is required for best-epoch selection)")
    rng = np.random.default_rng(seed)
    by_bucket: dict[str, list[int]] = {}
    for idx, sample in enumerate(dataset):
        by_bucket.setdefault(bucket_label(sample.button_count, bounds), []).append(idx)

    val_indices: set[int] = set()
    for label in sorted(by_bucket):
        members = by_bucket[label]
        take = int(math.floor(len(members) * ratio + 0.5))
        take = min(take, len(members))
        order = rng.permutation(len(members))
        val_indices.update(members[i] for i in order[:take])

    if not val_indices:
        raise ConfigError(
            "split produced an empty validation set; raise the ratio")
    if len(val_indices) == len(dataset):
        raise ConfigError("split produced an empty training set; lower the ratio")
    train = [s for i, s in enumerate(dataset) if i not in val_indices]
    val = [s for i, s in enumerate(dataset) if i in val_indices]
    return train, val


def _sample_rank_records(model: Model, sample: FeatureBundle,
                         bounds: tuple[int, int]) -> list[RankRecord]:
    bucket = bucket_label(sample.button_count, bounds)
    records = []
    for step_index, (scores, truth) in enumerate(model.sample_step_scores(sample)):
        records.append(RankRecord(
            sample_id=sample.sample_id,
            step_index=step_index,
            candidate_count=scores.size,
            rank=rank_of_truth(scores, truth),
            bucket=bucket,
        ))
    return records


_PARALLEL_STATE: dict = {}


def _parallel_worker(index: int) -> list[RankRecord]:
    model, samples, bounds = _PARALLEL_STATE["args"]
    return _sample_rank_records(model, samples[index], bounds)


def collect_rank_records(model: Model, samples: list[FeatureBundle],
                         bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS,
                         workers: int = 1) -> list[RankRecord]:
    """Greedy-carry evaluation of every step of every sample, in sample order.

    With ``workers > 1``, samples are scored on forked read-only worker
    processes and the records merged back in sample order, so the result
    is identical to the sequential path.
    """
    if workers <= 1 or len(samples) <= 1:
        records = []
        for sample in samples:
            records.extend(_sample_rank_records(model, sample, bounds))
        return records

    import concurrent.futures
    import multiprocessing

    _PARALLEL_STATE["args"] = (model, samples, bounds)
    try:
        context = multiprocessing.get_context("fork")
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=workers, mp_context=context) as pool:
            per_sample = list(pool.map(_parallel_worker, range(len(samples))))
    finally:
        _PARALLEL_STATE.clear()
    return [record for batch in per_sample for record in batch]


def evaluate(model: Model, samples: list[FeatureBundle],
             bounds: tuple[int, int] = DEFAULT_BUCKET_BOUNDS,
             carry_mode: str = "greedy", workers: int = 1) -> MetricsReport:
    """Metrics over a sample list; evaluation always carries the greedy state."""
    if carry_mode != "greedy":
        raise ConfigError(f"evaluation carry mode must be 'greedy', got {carry_mode!r}")
    if not samples:
        raise ValueError("evaluate: empty sample list")
    return bucket_report(collect_rank_records(model, samples, bounds, workers), bounds)


def _epoch_key(record: EpochRecord) -> tuple[float, float, float]:
    m = record.val_metrics
    return (m.r_at_1, m.mrr, -m.mr)


def select_best(entries: list[EpochRecord]) -> int:
    """Best epoch by validation R@1; ties: higher MRR, lower MR, earliest."""
    if not entries:
        raise ValueError("select_best: empty train log")
    best = entries[0]
    for rec in entries[1:]:
        if _epoch_key(rec) > _epoch_key(best):
            best = rec
    return best.epoch


def train(config: TrainConfig, dataset: list[FeatureBundle],
          progress=None) -> tuple[Model, TrainLog]:
    """Run the full loop and return the best-epoch model plus the log.

    Per epoch: shuffle the training half by a seeded permutation, walk
    samples one at a time accumulating gradients, and apply one SGD step
    per ``batch_size`` samples (plus the remainder at epoch end) using the
    accumulated sum scaled by 1/batch_size. Validation runs after every
    epoch with greedy carry; the checkpoint of the best epoch wins.
    """
    if not dataset:
        raise ValueError("train: empty dataset")
    d_v = dataset[0].video.shape[1]
    d_t = dataset[0].script.shape[1]

    init_ss, split_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_source = (shuffle_ss if config.shuffle_seed is None
                      else np.random.SeedSequence(config.shuffle_seed))

    model = Model.init(config.model_config(d_v, d_t), init_ss)
    model.init_seed = config.seed
    train_set, val_set = stratified_split(
        dataset, config.split_ratio, split_ss, config.bucket_bounds)
    shuffle_rng = np.random.default_rng(shuffle_source)

    named = model.named_parameters()
    param_list = [named[name] for name in sorted(named)]
    inv_batch = 1.0 / config.batch_size

    log = TrainLog(config=config.to_dict())
    best_key = None
    best_arrays = None
    best_epoch = 0

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        pending = 0
        updates = 0
        zero_grads(param_list)

        def flush():
            nonlocal pending, updates
            grads = [
                (p.grad if p.grad is not None else np.zeros_like(p.data)) * inv_batch
                for p in param_list
            ]
            sgd_step(param_list, grads, config.learning_rate)
            zero_grads(param_list)
            pending = 0
            updates += 1

        for position, idx in enumerate(order):
            sample = train_set[idx]
            graph = Graph()
            with graph:
                loss = model.sample_loss(sample)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise ArithmeticError(
                    f"non-finite loss at epoch {epoch}, sample {sample.sample_id!r}")
            graph.backward(loss)
            losses.append(loss_value)
            pending += 1
            if pending == config.batch_size:
                flush()
        if pending:
            flush()

        val_metrics = evaluate(model, val_set, config.bucket_bounds)
        record = EpochRecord(
            epoch=epoch,
            train_loss=math.fsum(losses) / len(losses),
            val_metrics=val_metrics,
            updates=updates,
            wall_time=time.perf_counter() - started,
        )
        log.entries.append(record)
        key = _epoch_key(record)
        if best_key is None or key > best_key:
            best_key = key
            best_arrays = model.snapshot()
            best_epoch = epoch
        if progress is not None:
            progress(record)

    model.load_snapshot(best_arrays)
    log.best_epoch = best_epoch
    assert best_epoch == select_best(log.entries)
    return model, log

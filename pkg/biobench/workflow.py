"""Orchestrates sweeps of training runs and folds their records into curves"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from biobench.checkpoint import save_network
from biobench.data import Dataset
from biobench.errors import AggregationError, BiobenchError
from biobench.models import (
    Aggregate,
    DatasetKind,
    ExperimentConfig,
    NoiseSpec,
    RunRecord,
    TrainingConfig,
)
from biobench.task import run_training

logger = logging.getLogger(__name__)

GROUP_COLUMNS = ["rule", "data_fraction", "noise_kind", "noise_level", "sparsity"]


def expand_sweep(experiment: ExperimentConfig, dataset: DatasetKind | None = None) -> list[TrainingConfig]:
    """Cartesian product of the sweep axes, seeds innermost.

    ``noise_kind = "none"`` contributes a single clean configuration whatever
    the noise levels are.
    """
    sweep, defaults = experiment.sweep, experiment.training
    noise_settings: list[tuple[str, float]] = []
    for kind in sweep.noise_kinds:
        levels = [0.0] if kind == "none" else sweep.noise_levels
        noise_settings.extend((kind, level) for level in levels if (kind, level) not in noise_settings)

    configs = []
    for kind, fraction, (noise_kind, level), sparsity, seed in itertools.product(
        sweep.rules, sweep.data_fractions, noise_settings, sweep.sparsities, sweep.seeds
    ):
        configs.append(
            TrainingConfig(
                rule=experiment.rule(kind),
                network=experiment.network,
                dataset=dataset or experiment.dataset,
                epochs=defaults.epochs,
                batch_size=defaults.batch_size,
                data_fraction=fraction,
                stratified=defaults.stratified,
                sparsity=sparsity or None,
                noise=NoiseSpec(
                    kind=noise_kind,
                    level=level,
                    seed=seed,
                    per_channel=defaults.pepper_per_channel,
                    target=defaults.noise_target,
                ),
                seed=seed,
                eval_every=defaults.eval_every,
            )
        )
    return configs


def checkpoint_path(directory: Path, config: TrainingConfig) -> Path:
    return directory / f"{config.rule.kind}-{config.fingerprint()}-seed{config.seed}.biog"


def run_one(
    config: TrainingConfig,
    train_ds: Dataset,
    test_ds: Dataset,
    checkpoint_dir: Path | None = None,
) -> RunRecord:
    try:
        record, net = run_training(config, train_ds, test_ds)
        if checkpoint_dir is not None:
            save_network(net, checkpoint_path(checkpoint_dir, config))
        return record
    except BiobenchError as e:
        logger.error("run %s seed %d failed: %s", config.fingerprint(), config.seed, e)
        return RunRecord(
            fingerprint=config.fingerprint(), config=config, seed=config.seed, failed=True, error=str(e)
        )


def run_sweep(
    configs: list[TrainingConfig],
    train_ds: Dataset,
    test_ds: Dataset,
    threads: int = 1,
    checkpoint_dir: Path | None = None,
) -> list[RunRecord]:
    """Run every configuration; records come back in submission order.

    Workers share the datasets read-only and each owns its network.
    """
    if threads <= 1:
        return [run_one(c, train_ds, test_ds, checkpoint_dir) for c in configs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_one, c, train_ds, test_ds, checkpoint_dir) for c in configs]
        return [f.result() for f in futures]


# --- aggregation ---


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, f"{key}."))
        else:
            out[key] = v
    return out


def divergent_fields(runs: list[RunRecord]) -> list[str]:
    flat = [_flatten(r.config.comparable()) for r in runs]
    keys = sorted(set().union(*flat))
    return [k for k in keys if len({repr(f.get(k)) for f in flat}) > 1]


def aggregate(runs: list[RunRecord]) -> Aggregate:
    """Per-epoch mean and sample (n-1) standard deviation across seeds.

    Only epochs every run reached are kept. A single run gets std 0 and is
    flagged ``single_run``.
    """
    if not runs:
        raise AggregationError("nothing to aggregate")
    if len({r.fingerprint for r in runs}) > 1:
        fields = divergent_fields(runs)
        raise AggregationError(f"runs differ in {', '.join(fields) or 'fingerprint'}", fields=fields)

    epochs = [e for e in runs[0].epochs if all(e in r.epochs for r in runs[1:])]
    acc = np.array([[r.accuracy[r.epochs.index(e)] for e in epochs] for r in runs], dtype=np.float64)
    acc = acc.reshape(len(runs), len(epochs))
    mean = acc.mean(axis=0)
    if len(runs) == 1:
        std = np.zeros(len(epochs))
    else:
        std = acc.std(axis=0, ddof=1)
        constant = np.ptp(acc, axis=0) == 0
        mean = np.where(constant, acc[0], mean)
        std = np.where(constant, 0.0, std)
    return Aggregate(
        fingerprint=runs[0].fingerprint,
        epochs=epochs,
        mean=mean.tolist(),
        std=std.tolist(),
        run_count=len(runs),
        single_run=len(runs) == 1,
    )


def _group_key(record: RunRecord) -> tuple:
    c = record.config
    return (c.rule.kind, c.data_fraction, c.noise.kind, c.noise.level, c.sparsity or 0.0)


def group_records(records: list[RunRecord]) -> dict[tuple, list[RunRecord]]:
    """Completed records grouped by (rule, data_fraction, noise_kind, noise_level, sparsity)."""
    groups: dict[tuple, list[RunRecord]] = {}
    for record in records:
        if record.failed:
            logger.warning("skipping failed run %s seed %d", record.fingerprint, record.seed)
            continue
        groups.setdefault(_group_key(record), []).append(record)
    return groups


def curves_frame(records: list[RunRecord]) -> pd.DataFrame:
    rows = []
    for key, runs in group_records(records).items():
        agg = aggregate(runs)
        for epoch, mean, std in zip(agg.epochs, agg.mean, agg.std):
            rows.append({**dict(zip(GROUP_COLUMNS, key)), "epoch": epoch, "mean": mean, "std": std, "runs": agg.run_count})
    return pd.DataFrame(rows, columns=[*GROUP_COLUMNS, "epoch", "mean", "std", "runs"])


def summary_frame(records: list[RunRecord]) -> pd.DataFrame:
    """Final-epoch mean and std per configuration group, with failure counts."""
    failed: dict[tuple, int] = {}
    for record in records:
        if record.failed:
            key = _group_key(record)
            failed[key] = failed.get(key, 0) + 1
    rows = []
    for key, runs in group_records(records).items():
        agg = aggregate(runs)
        rows.append(
            {
                **dict(zip(GROUP_COLUMNS, key)),
                "epoch": agg.epochs[-1] if agg.epochs else None,
                "mean": agg.mean[-1] if agg.mean else float("nan"),
                "std": agg.std[-1] if agg.std else float("nan"),
                "runs": agg.run_count,
                "failed": failed.pop(key, 0),
            }
        )
    for key, count in failed.items():
        rows.append({**dict(zip(GROUP_COLUMNS, key)), "epoch": None, "mean": float("nan"),
                     "std": float("nan"), "runs": 0, "failed": count})
    return pd.DataFrame(rows, columns=[*GROUP_COLUMNS, "epoch", "mean", "std", "runs", "failed"])


def run_experiment(
    experiment: ExperimentConfig,
    train_ds: Dataset,
    test_ds: Dataset,
    threads: int = 1,
    dataset: DatasetKind | None = None,
) -> list[RunRecord]:
    """Expand, run and persist one experiment under ``experiment.output_dir``."""
    from biobench.store import write_records, write_tidy_csv

    configs = expand_sweep(experiment, dataset)
    logger.info("%s: %d runs on %d threads", experiment.name, len(configs), threads)
    out = Path(experiment.output_dir)
    checkpoint_dir = out / "checkpoints" if experiment.save_checkpoints else None
    records = run_sweep(configs, train_ds, test_ds, threads, checkpoint_dir)
    write_records(records, out / f"{experiment.name}.jsonl")
    write_tidy_csv(records, out / f"{experiment.name}.csv")
    return records

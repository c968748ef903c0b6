import math

import numpy as np
import pytest

from biobench.errors import AggregationError
from biobench.models import (
    ExperimentConfig,
    NetworkConfig,
    RunRecord,
    SweepAxes,
    TrainingConfig,
    TrainingDefaults,
    UpdateRule,
)
from biobench.store import read_records
from biobench.util import get_datasets, load_experiment
from biobench.workflow import (
    aggregate,
    checkpoint_path,
    curves_frame,
    expand_sweep,
    run_experiment,
    run_one,
    run_sweep,
    summary_frame,
)


def make_record(accuracy, seed=0, **overrides):
    config = TrainingConfig(rule=UpdateRule(kind="bp"), epochs=max(len(accuracy), 1), seed=seed, **overrides)
    n = len(accuracy)
    return RunRecord(
        fingerprint=config.fingerprint(),
        config=config,
        seed=seed,
        epochs=list(range(1, n + 1)),
        accuracy=accuracy,
        wall_clock=[0.1] * n,
        sparsity=[0.0] * n,
    )


def tiny_experiment(tmp_path, **sweep):
    axes = {"rules": ["bp", "hebb_instar"], "seeds": [0, 1], **sweep}
    return ExperimentConfig(
        name="tiny",
        output_dir=tmp_path,
        training=TrainingDefaults(epochs=2, batch_size=20),
        network=NetworkConfig(conv_channels=[4], kernel=3, padding=1, pool=2),
        rules={"bp": {"lr": 0.05}, "hebb_instar": {"lr": 1e-3}},
        sweep=SweepAxes(**axes),
    )


# --- aggregation ---


def test_aggregate_two_seeds():
    agg = aggregate([make_record([0.60], seed=0), make_record([0.62], seed=1)])
    assert agg.mean[0] == pytest.approx(0.61)
    assert agg.std[0] == pytest.approx(math.sqrt(0.0002))
    assert agg.run_count == 2 and not agg.single_run


def test_aggregate_single_run():
    agg = aggregate([make_record([0.3, 0.4])])
    assert agg.std == [0.0, 0.0]
    assert agg.mean == [0.3, 0.4]
    assert agg.single_run


def test_aggregate_identical_runs_have_exactly_zero_spread():
    agg = aggregate([make_record([0.1, 0.7], seed=s) for s in range(3)])
    assert agg.std == [0.0, 0.0]
    assert agg.mean == [0.1, 0.7]


def test_aggregate_keeps_common_epochs():
    agg = aggregate([make_record([0.5, 0.6, 0.7], seed=0), make_record([0.5, 0.6], seed=1)])
    assert agg.epochs == [1, 2]


def test_aggregate_refuses_mixed_configurations():
    with pytest.raises(AggregationError) as exc:
        aggregate([make_record([0.5]), make_record([0.5], data_fraction=0.2)])
    assert "data_fraction" in exc.value.fields
    with pytest.raises(AggregationError):
        aggregate([])


def test_curves_and_summary_group_by_configuration():
    records = [
        make_record([0.5, 0.6], seed=0),
        make_record([0.7, 0.8], seed=1),
        make_record([0.2, 0.3], seed=0, data_fraction=0.2),
    ]
    failed = make_record([], seed=2).model_copy(update={"failed": True, "error": "diverged"})
    curves = curves_frame(records + [failed])
    assert len(curves) == 4
    full = curves[curves["data_fraction"] == 1.0]
    assert full["mean"].tolist() == pytest.approx([0.6, 0.7])
    assert full["runs"].tolist() == [2, 2]

    summary = summary_frame(records + [failed])
    assert summary["failed"].tolist() == [1, 0]
    assert summary["epoch"].tolist() == [2, 2]


# --- sweep expansion ---


def test_benchmark_preset_expands_to_forty_runs():
    configs = expand_sweep(load_experiment("fig2a"))
    assert len(configs) == 40
    assert [c.rule.kind for c in configs[::10]] == ["bp", "fa", "dfa", "hebb_instar"]
    assert [c.seed for c in configs[:10]] == list(range(10))
    assert all(c.data_fraction == 0.2 and c.epochs == 20 for c in configs)
    hebb = configs[-1]
    assert hebb.rule.zca and hebb.rule.weight_decay == 0.95
    assert configs[0].rule.schedule.kind == "step"


def test_clean_noise_setting_is_not_repeated(tmp_path):
    experiment = tiny_experiment(
        tmp_path,
        rules=["bp"],
        seeds=[5],
        noise_kinds=["none", "pepper"],
        noise_levels=[0.0, 0.1, 0.2],
        sparsities=[0.0, 0.9],
    )
    configs = expand_sweep(experiment)
    settings = [(c.noise.kind, c.noise.level, c.sparsity) for c in configs]
    assert settings == [
        ("none", 0.0, None),
        ("none", 0.0, 0.9),
        ("pepper", 0.0, None),
        ("pepper", 0.0, 0.9),
        ("pepper", 0.1, None),
        ("pepper", 0.1, 0.9),
        ("pepper", 0.2, None),
        ("pepper", 0.2, 0.9),
    ]
    assert all(c.noise.seed == 5 for c in configs)


def test_dataset_override(tmp_path):
    configs = expand_sweep(tiny_experiment(tmp_path), dataset="cifar100")
    assert {c.dataset for c in configs} == {"cifar100"}


# --- running ---


def test_threaded_sweep_matches_serial(tmp_path, shapes):
    configs = expand_sweep(tiny_experiment(tmp_path))
    serial = run_sweep(configs, *shapes, threads=1)
    threaded = run_sweep(configs, *shapes, threads=2)
    assert [r.seed for r in threaded] == [c.seed for c in configs]
    assert [r.accuracy for r in serial] == [r.accuracy for r in threaded]


def test_run_one_turns_errors_into_failed_records(tmp_path, shapes):
    config = expand_sweep(tiny_experiment(tmp_path, data_fractions=[0.01]))[0]
    record = run_one(config, *shapes)
    assert record.failed
    assert "fraction" in record.error
    assert record.accuracy == []


def test_run_one_saves_checkpoints(tmp_path, shapes):
    config = expand_sweep(tiny_experiment(tmp_path))[0]
    record = run_one(config, *shapes, checkpoint_dir=tmp_path / "ckpt")
    assert not record.failed
    assert checkpoint_path(tmp_path / "ckpt", config).is_file()


def test_run_experiment_writes_records_and_table(tmp_path, shapes):
    experiment = tiny_experiment(tmp_path, rules=["fa"], seeds=[0])
    records = run_experiment(experiment, *shapes)
    assert read_records(tmp_path / "tiny.jsonl") == records
    assert (tmp_path / "tiny.csv").read_text().count("\n") == 1 + 2


# --- desk-scale trend ---


@pytest.fixture(scope="module")
def desk_records():
    experiment = load_experiment("desk")
    train_ds, test_ds = get_datasets(experiment, synthetic=True)
    return run_sweep(expand_sweep(experiment), train_ds, test_ds, threads=4)


@pytest.mark.slow
def test_desk_hebbian_learns_early_and_beats_backprop(desk_records):
    curves = curves_frame(desk_records)
    hebb = curves[curves["rule"] == "hebb_instar"].set_index("epoch")["mean"]
    bp = curves[curves["rule"] == "bp"].set_index("epoch")["mean"]
    assert bp[20] > 0.5
    assert hebb[5] >= 0.95 * hebb[20]
    assert hebb[5] > bp[5]
    assert hebb[20] > bp[20]


@pytest.mark.slow
def test_desk_sweep_is_deterministic(desk_records):
    experiment = load_experiment("desk")
    train_ds, test_ds = get_datasets(experiment, synthetic=True)
    configs = expand_sweep(experiment)[::10]
    again = run_sweep(configs, train_ds, test_ds, threads=1)
    for first, second in zip(desk_records[::10], again):
        assert first.accuracy == second.accuracy
        assert np.isfinite(first.accuracy).all()


def test_desk_gradient_rules_use_sgd_scale_rates():
    experiment = load_experiment("desk")
    for kind in ("bp", "fa", "dfa"):
        assert experiment.rule(kind).lr >= 1e-2

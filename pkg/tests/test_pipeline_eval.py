"""Training orchestration, confusion-matrix evaluation, and inference."""

import json
import math
import os

import numpy as np
import pytest

from afpseg.dataset import Dataset, generate_dataset, normalize_depth
from afpseg.errors import ConfigurationError, DataError, ShapeError
from afpseg.net import Network, NetworkConfig, forward, load_checkpoint, save_checkpoint
from afpseg.pipeline import (
    EvalReport,
    TrainConfig,
    TrainResult,
    confusion_counts,
    evaluate,
    infer,
    train,
)
from afpseg.raster import write_depth_png
from afpseg.scene import GeneratorConfig


def _tiny_train_config(**overrides):
    settings = dict(
        epochs=2,
        batch_size=4,
        train_count=6,
        val_count=3,
        seed=0,
    )
    settings.update(overrides)
    return TrainConfig(**settings)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = _tiny_train_config()
    result = train(config, out_dir=out)
    return config, out, result


# ---------------------------------------------------------------------------
# confusion counts
# ---------------------------------------------------------------------------


def _confusion_brute(pred, lab):
    m = np.zeros((4, 4), dtype=np.int64)
    for p, t in zip(np.asarray(pred).ravel(), np.asarray(lab).ravel()):
        m[p, t] += 1
    return m


def test_confusion_counts_match_per_pixel_tally():
    rng = np.random.default_rng(0)
    for _ in range(30):
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        pred = rng.integers(0, 4, size=shape)
        lab = rng.integers(0, 4, size=shape)
        got = confusion_counts(pred, lab)
        assert got.dtype == np.int64
        assert np.array_equal(got, _confusion_brute(pred, lab))
        assert got.sum() == pred.size


def test_confusion_counts_toy_example():
    labels = np.array([[0, 1], [1, 1]])
    preds = np.array([[0, 0], [1, 1]])
    report = EvalReport.from_counts(confusion_counts(preds, labels))
    pct = report.percent
    assert pct[0, 0] == pytest.approx(25.0)
    assert pct[0, 1] == pytest.approx(25.0)  # predicted gap, truth tow
    assert pct[1, 1] == pytest.approx(50.0)
    assert report.accuracy == pytest.approx(75.0)
    assert report.total_pixels == 4


def test_confusion_counts_validation():
    with pytest.raises(ShapeError):
        confusion_counts(np.zeros((2, 2), int), np.zeros((2, 3), int))
    with pytest.raises(DataError):
        confusion_counts(np.zeros((2, 2), int), np.full((2, 2), 4))
    with pytest.raises(DataError):
        confusion_counts(np.full((2, 2), 9), np.zeros((2, 2), int))
    assert not confusion_counts(np.zeros((0,), int), np.zeros((0,), int)).any()


# ---------------------------------------------------------------------------
# report formatting
# ---------------------------------------------------------------------------


def test_report_orientation_rows_are_predictions():
    counts = np.zeros((4, 4), dtype=np.int64)
    counts[0, 0] = 3
    counts[2, 0] = 1  # predicted overlap where the truth is gap
    table = EvalReport.from_counts(counts).format_table()
    lines = table.splitlines()
    overlap_row = next(line for line in lines if line.startswith("Overlap"))
    gap_row = next(line for line in lines if line.startswith("Gap"))
    assert overlap_row.split()[1] == "25.00"  # first (Gap) column
    assert gap_row.split()[1] == "75.00"


def test_perfect_prediction_formats_clean_diagonal():
    counts = np.diag([103, 782, 66, 49]).astype(np.int64)
    report = EvalReport.from_counts(counts)
    assert report.accuracy == pytest.approx(100.0)
    table = report.format_table()
    assert "Ground truth" in table
    assert "Prediction" in table
    for name in ("Gap", "Tow", "Overlap", "Fuzzball", "Sum"):
        assert name in table
    assert table.splitlines()[-1].split()[-1] == "100.00"  # grand total


def test_report_marginals_and_serialization():
    rng = np.random.default_rng(5)
    counts = rng.integers(0, 500, size=(4, 4)).astype(np.int64)
    report = EvalReport.from_counts(counts)
    assert np.allclose(report.prediction_marginals, report.percent.sum(axis=1))
    assert np.allclose(report.truth_marginals, report.percent.sum(axis=0))
    assert report.prediction_marginals.sum() == pytest.approx(100.0)

    payload = json.loads(report.to_json())
    assert payload["counts"] == counts.tolist()
    assert payload["accuracy"] == pytest.approx(report.accuracy)
    assert payload["classes"] == ["gap", "tow", "overlap", "fuzzball"]
    assert "prediction" in payload["layout"]

    with pytest.raises(ShapeError):
        EvalReport.from_counts(np.zeros((3, 4)))


def test_empty_report_renders_zeros():
    report = EvalReport.from_counts(np.zeros((4, 4), dtype=np.int64))
    assert report.accuracy == 0.0
    assert "0.00" in report.format_table()


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_eval_set(tmp_path_factory):
    path = tmp_path_factory.mktemp("eval") / "eval.afpd"
    generate_dataset(GeneratorConfig.desk_scale(), 4, seed=17, path=path)
    return Dataset(path)


def test_evaluate_matches_manual_forward_loop(desk_eval_set):
    net = Network(NetworkConfig.desk_scale(), seed=1)
    report = evaluate(net, desk_eval_set)

    manual = np.zeros((4, 4), dtype=np.int64)
    for depth, labels in desk_eval_set:
        probs = forward(net, normalize_depth(depth).astype(np.float32))
        pred = np.argmax(probs, axis=-1)
        manual += _confusion_brute(pred, labels)
    assert np.array_equal(report.counts, manual)
    assert report.total_pixels == 4 * 64 * 96


def test_evaluate_is_thread_count_invariant(desk_eval_set):
    net = Network(NetworkConfig.desk_scale(), seed=1)
    a = evaluate(net, desk_eval_set, threads=1)
    b = evaluate(net, desk_eval_set, threads=3)
    assert np.array_equal(a.counts, b.counts)


def test_evaluate_accepts_paths(tmp_path, desk_eval_set):
    net = Network(NetworkConfig.desk_scale(), seed=1)
    ckpt = tmp_path / "net.afpw"
    save_checkpoint(ckpt, net)
    by_obj = evaluate(net, desk_eval_set)
    by_path = evaluate(os.fspath(ckpt), desk_eval_set.path)
    assert np.array_equal(by_obj.counts, by_path.counts)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def test_infer_preserves_extents_and_is_deterministic():
    net = Network(NetworkConfig.desk_scale(), seed=2)
    rng = np.random.default_rng(3)
    depth = rng.standard_normal((64, 96))
    labels = infer(net, depth)
    assert labels.shape == (64, 96)
    assert labels.dtype == np.uint8
    assert labels.max() < 4
    assert np.array_equal(labels, infer(net, depth))


def test_infer_pads_awkward_extents():
    net = Network(NetworkConfig.desk_scale(), seed=2)  # divisor 4
    rng = np.random.default_rng(4)
    for shape in ((50, 70), (63, 95), (13, 9)):
        labels = infer(net, rng.standard_normal(shape))
        assert labels.shape == shape


def test_infer_on_divisible_input_equals_plain_forward():
    net = Network(NetworkConfig.desk_scale(), seed=2)
    rng = np.random.default_rng(5)
    depth = rng.standard_normal((32, 40))
    probs = forward(net, normalize_depth(depth).astype(np.float32))
    assert np.array_equal(infer(net, depth), np.argmax(probs, axis=-1).astype(np.uint8))


def test_infer_reads_dataset_and_png_sources(tmp_path, desk_eval_set):
    net = Network(NetworkConfig.desk_scale(), seed=2)
    depth, _ = desk_eval_set[2]
    from_file = infer(net, desk_eval_set.path, index=2)
    from_array = infer(net, depth)
    assert np.array_equal(from_file, from_array)

    png = tmp_path / "depth.png"
    write_depth_png(png, depth)
    from_png = infer(net, png)
    assert from_png.shape == depth.shape


def test_infer_rejects_non_2d_arrays():
    net = Network(NetworkConfig.desk_scale(), seed=2)
    with pytest.raises(ShapeError):
        infer(net, np.zeros((4, 4, 3)))
    with pytest.raises(ShapeError):
        infer(net, np.zeros(16))


# ---------------------------------------------------------------------------
# training configuration
# ---------------------------------------------------------------------------


def test_train_config_json_round_trip():
    config = _tiny_train_config(optimizer="sgd", learning_rate=0.5, out_dir="x")
    again = TrainConfig.from_json(config.to_json())
    assert again == config


def test_train_config_rejects_unknown_and_invalid():
    with pytest.raises(ConfigurationError, match="unknown"):
        TrainConfig.from_dict({"momentum": 0.9})
    with pytest.raises(ConfigurationError):
        TrainConfig.from_json("{broken")
    for bad in (
        dict(optimizer="rmsprop"),
        dict(learning_rate=0.0),
        dict(epochs=0),
        dict(batch_size=0),
        dict(train_count=0),
        dict(val_count=0),
        dict(early_stop_accuracy=1.5),
    ):
        config = _tiny_train_config(**bad)
        with pytest.raises(ConfigurationError):
            config.validate()


def test_train_config_presets():
    desk = TrainConfig.desk_scale()
    assert desk.generator == GeneratorConfig.desk_scale()
    assert desk.network == NetworkConfig.desk_scale()
    full = TrainConfig.full_scale()
    assert full.generator.width_px == 300
    assert full.network.levels == 4
    assert full.train_count == 5000


# ---------------------------------------------------------------------------
# training runs
# ---------------------------------------------------------------------------


def test_train_writes_all_artifacts(tiny_run):
    config, out, result = tiny_run
    assert isinstance(result, TrainResult)
    assert (out / "train.afpd").exists()
    assert (out / "val.afpd").exists()
    assert (out / "metrics.jsonl").exists()
    assert (out / "checkpoint.afpw").exists()
    assert result.curves_path is not None
    assert (out / "curves.png").exists()
    assert result.epochs_run == 2
    assert len(result.history) == 2

    # generated datasets honour the counts and the seed split
    assert len(Dataset(out / "train.afpd")) == 6
    assert len(Dataset(out / "val.afpd")) == 3

    # checkpoint reloads into a working network
    net = load_checkpoint(result.checkpoint_path)
    assert net.config == config.network


def test_metrics_log_schema(tiny_run):
    _, out, result = tiny_run
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    for i, line in enumerate(lines, start=1):
        row = json.loads(line)
        assert set(row) == {"epoch", "train_loss", "val_accuracy"}
        assert row["epoch"] == i
        assert math.isfinite(row["train_loss"])
        assert 0.0 <= row["val_accuracy"] <= 1.0
    logged = [json.loads(line) for line in lines]
    assert logged == result.history


def test_fresh_network_validation_loss_is_near_uniform(tiny_run):
    _, _, result = tiny_run
    assert result.pre_val_loss == pytest.approx(math.log(4.0), abs=0.05)
    assert 0.0 <= result.pre_val_accuracy <= 1.0


def test_training_is_reproducible(tiny_run, tmp_path):
    config, out, _ = tiny_run
    again = train(_tiny_train_config(), out_dir=tmp_path / "again")
    assert (tmp_path / "again" / "metrics.jsonl").read_bytes() == (
        out / "metrics.jsonl"
    ).read_bytes()
    assert (tmp_path / "again" / "checkpoint.afpw").read_bytes() == (
        out / "checkpoint.afpw"
    ).read_bytes()
    assert (tmp_path / "again" / "train.afpd").read_bytes() == (
        out / "train.afpd"
    ).read_bytes()


def test_train_uses_existing_datasets_when_pointed_at_them(tiny_run, tmp_path):
    config, out, _ = tiny_run
    reuse = _tiny_train_config(
        epochs=1,
        train_data=str(out / "train.afpd"),
        val_data=str(out / "val.afpd"),
    )
    result = train(reuse, out_dir=tmp_path / "reuse")
    assert not (tmp_path / "reuse" / "train.afpd").exists()
    assert not (tmp_path / "reuse" / "val.afpd").exists()
    assert result.epochs_run == 1


def test_progress_callback_sees_each_epoch(tmp_path):
    seen = []
    train(
        _tiny_train_config(train_count=4, val_count=2),
        out_dir=tmp_path / "cb",
        progress=lambda epoch, loss, acc: seen.append((epoch, loss, acc)),
    )
    assert [epoch for epoch, _, _ in seen] == [1, 2]
    assert all(math.isfinite(loss) for _, loss, _ in seen)


def test_early_stop_cuts_the_run_short(tmp_path):
    result = train(
        _tiny_train_config(epochs=5, early_stop_accuracy=1e-4),
        out_dir=tmp_path / "early",
    )
    assert result.epochs_run == 1
    assert len(result.history) == 1
    lines = (tmp_path / "early" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1


def test_divergent_run_raises_with_advice(tmp_path):
    config = _tiny_train_config(
        learning_rate=1e8, optimizer="sgd", train_count=4, val_count=2, epochs=3
    )
    with np.errstate(all="ignore"):
        with pytest.raises(RuntimeError, match="non-finite"):
            train(config, out_dir=tmp_path / "diverge")
    with np.errstate(all="ignore"):
        with pytest.raises(RuntimeError, match="learning rate"):
            train(config, out_dir=tmp_path / "diverge2")

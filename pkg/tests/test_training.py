import numpy as np
import pytest

from bilateral_inception.data import blob_dataset, load_dataset, save_dataset
from bilateral_inception.errors import ChecksumError, InvalidArgumentError
from bilateral_inception.superpixel import LabelMap, confusion_matrix, mean_iou
from bilateral_inception.training import (
    build_net,
    cluster_sweep,
    coarsen_sample,
    default_layers,
    evaluate,
    load_checkpoint,
    predict_sample,
    prepare_samples,
    resolve_config,
    save_checkpoint,
    train_toy,
)

SMALL = {"superpixels": {"count": 60}, "epochs": 3}


@pytest.fixture(scope="module")
def samples():
    return prepare_samples(blob_dataset(4, seed=7, size=48), SMALL["superpixels"])


def test_constant_images_fit_quickly():
    ds = [(np.full((24, 24, 3), c), LabelMap(np.full((24, 24), 2), 4)) for c in (0.2, 0.5, 0.8)]
    _, metrics = train_toy({"epochs": 200, "superpixels": {"count": 16}}, dataset=ds)
    losses = [r["loss"] for r in metrics]
    assert all(b < a for a, b in zip(losses[1:], losses[2:]))
    assert min(losses) < 0.01


def test_freeze_all_leaves_parameters_bit_identical(samples):
    cfg = {**SMALL, "regime": "BI", "layers": default_layers([])}
    before = {k: v.copy() for k, v in build_net(resolve_config(cfg)).params().items()}
    net, _ = train_toy(cfg, samples=samples)
    for k, v in net.params().items():
        assert np.array_equal(v, before[k])


def test_bi_regime_touches_only_inception_tensors(samples):
    cfg = {**SMALL, "regime": "BI"}
    before = {k: v.copy() for k, v in build_net(resolve_config(cfg)).params().items()}
    net, _ = train_toy(cfg, samples=samples)
    changed = {k for k, v in net.params().items() if not np.array_equal(v, before[k])}
    assert changed and all(k.startswith("bi") for k in changed)


def test_bi_fc_regime_keeps_backbone(samples):
    cfg = {**SMALL, "regime": "BI+FC"}
    before = build_net(resolve_config(cfg)).params()
    net, _ = train_toy(cfg, samples=samples)
    np.testing.assert_array_equal(net.params()["fc1.W"], before["fc1.W"])
    assert not np.array_equal(net.params()["fc3.W"], before["fc3.W"])


def test_training_is_bit_reproducible(samples):
    a, ma = train_toy(SMALL, samples=samples)
    b, mb = train_toy(SMALL, samples=samples)
    assert ma == mb
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])


def test_zero_epochs_is_initialization(samples):
    net, metrics = train_toy({**SMALL, "epochs": 0}, samples=samples)
    assert metrics == []
    init = build_net(resolve_config(SMALL)).params()
    for k, v in net.params().items():
        assert np.array_equal(v, init[k])


def test_metrics_rows_are_finite(samples):
    _, metrics = train_toy(SMALL, samples=samples)
    assert [r["epoch"] for r in metrics] == [1, 2, 3]
    assert all(np.isfinite(r["loss"]) and 0 <= r["meanIoU"] <= 1 for r in metrics)
    assert metrics[-1]["meanIoU"] == evaluate(train_toy(SMALL, samples=samples)[0], samples)["meanIoU"]


def test_config_errors():
    with pytest.raises(InvalidArgumentError):
        resolve_config({"regime": "ALL"})
    with pytest.raises(InvalidArgumentError):
        resolve_config({"epochs": -1})
    with pytest.raises(InvalidArgumentError):
        train_toy(SMALL, dataset=[])
    bad = [(np.zeros((8, 8, 3)), LabelMap(np.zeros((8, 9), dtype=int), 2))]
    with pytest.raises(InvalidArgumentError):
        train_toy(SMALL, dataset=bad)


def test_checkpoint_round_trip(samples, tmp_path):
    net, _ = train_toy(SMALL, samples=samples)
    save_checkpoint(tmp_path / "ck", net, SMALL)
    back, cfg = load_checkpoint(tmp_path / "ck")
    assert cfg == resolve_config(SMALL)
    for k, v in net.params().items():
        assert np.array_equal(v, back.params()[k])
    assert evaluate(back, samples) == evaluate(net, samples)


def test_corrupt_checkpoint_raises(samples, tmp_path):
    net, _ = train_toy({**SMALL, "epochs": 0}, samples=samples)
    save_checkpoint(tmp_path, net, SMALL)
    path = tmp_path / "fc1.W.bimx"
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_checkpoint(tmp_path)


def test_cluster_sweep_full_count_equals_eval(samples):
    net, _ = train_toy(SMALL, samples=samples)
    rows = cluster_sweep(net, samples, fractions=[1.0])
    assert rows[0]["meanIoU"] == evaluate(net, samples)["meanIoU"]


def test_cluster_sweep_single_segment(samples):
    net, _ = train_toy(SMALL, samples=samples)
    rows = cluster_sweep(net, samples, counts=[1])
    assert rows[0]["meanM"] == 1.0
    # one segment per image: each image is painted a single class
    k = net.num_classes
    total = np.zeros((k, k), dtype=np.int64)
    for s in samples:
        c = coarsen_sample(s, 1)
        pred = predict_sample(net, c)
        assert pred.shape == (1,)
        total += confusion_matrix(s.gt.labels, np.full(s.gt.labels.shape, pred[0]), k)
    assert rows[0]["meanIoU"] == mean_iou(total)


def test_cluster_sweep_rejects_growth(samples):
    net, _ = train_toy({**SMALL, "epochs": 0}, samples=samples)
    with pytest.raises(InvalidArgumentError):
        cluster_sweep(net, samples, counts=[10_000])
    with pytest.raises(InvalidArgumentError):
        cluster_sweep(net, samples, fractions=[1.5])


def test_dataset_round_trip(tmp_path):
    pairs = blob_dataset(2, seed=3, size=32)
    save_dataset(tmp_path, pairs)
    back = load_dataset(tmp_path, 4)
    for (a, ga), (b, gb) in zip(pairs, back):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ga.labels, gb.labels)

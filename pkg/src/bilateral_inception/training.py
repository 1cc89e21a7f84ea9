"""Desk-scale training and evaluation of superpixel networks.

Each image is superpixelized once; the per-superpixel mean ``(u, v, r, g, b)``
features are the network input and also the point features of the inception
modules. One image is one full batch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .errors import ChecksumError, FileFormatError, InvalidArgumentError
from .network import REGIMES, Adam, ToyNet, make_features_ctx, softmax_xent
from .slic import slic
from .superpixel import (
    FeatureKind,
    LabelMap,
    Partition,
    agglomerative_merge,
    confusion_matrix,
    majority_labels,
    mean_features,
    mean_iou,
)

DEFAULT_CONFIG = {
    "seed": 0,
    "epochs": 40,
    "lr": 0.01,
    "regime": "FULL",
    "numClasses": 4,
    "layers": [
        {"type": "dense", "out": 32, "activation": "relu", "group": "backbone"},
        {"type": "inception", "features": "POSITION"},
        {"type": "inception", "features": "POSITION_COLOR"},
        {"type": "dense", "out": 32, "activation": "relu", "group": "FC"},
        {"type": "dense", "out": "classes", "group": "FC"},
    ],
    "superpixels": {"count": 300, "compactness": 10.0, "iterations": 10},
    "inception": {"H": 2, "featureKinds": ["POSITION", "POSITION_COLOR"], "lambdaScale": 10.0},
}


def resolve_config(config: dict | None = None) -> dict:
    """Fill missing keys from :data:`DEFAULT_CONFIG` and validate."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    config = dict(config or {})
    for key in ("superpixels", "inception"):
        cfg[key].update(config.pop(key, {}) or {})
    cfg.update(config)
    if "layers" not in config and "featureKinds" in cfg["inception"]:
        cfg["layers"] = default_layers(cfg["inception"]["featureKinds"])
    if cfg["regime"] not in REGIMES:
        raise InvalidArgumentError(f"unknown regime {cfg['regime']!r}; expected one of {REGIMES}")
    if int(cfg["epochs"]) < 0:
        raise InvalidArgumentError("epochs must be non-negative")
    if not float(cfg["lr"]) > 0:
        raise InvalidArgumentError("lr must be positive")
    for kind in cfg["inception"].get("featureKinds", []):
        FeatureKind.parse(kind)
    return cfg


def default_layers(feature_kinds) -> list:
    """Backbone dense layer, one inception module per feature kind, then two
    FC layers. An empty list gives the FC-only baseline topology."""
    layers = [{"type": "dense", "out": 32, "activation": "relu", "group": "backbone"}]
    layers += [{"type": "inception", "features": FeatureKind.parse(k).value} for k in feature_kinds]
    layers += [{"type": "dense", "out": 32, "activation": "relu", "group": "FC"},
               {"type": "dense", "out": "classes", "group": "FC"}]
    return layers


@dataclass
class Sample:
    """One image at superpixel resolution."""

    image: np.ndarray
    gt: LabelMap
    part: Partition
    position: np.ndarray
    color: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    name: str = ""
    ctx: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.ctx = make_features_ctx(self.position, self.color)

    @property
    def inputs(self) -> np.ndarray:
        return self.color


def make_sample(image, gt: LabelMap, part: Partition, name="") -> Sample:
    if part.shape != gt.labels.shape:
        raise InvalidArgumentError("partition and ground truth dimensions differ")
    return Sample(
        image=image, gt=gt, part=part,
        position=mean_features(image, part, FeatureKind.POSITION),
        color=mean_features(image, part, FeatureKind.POSITION_COLOR),
        targets=majority_labels(part, gt),
        weights=part.sizes.astype(np.float64),
        name=name,
    )


def prepare_samples(dataset, sp_config: dict, names=None) -> list:
    samples = []
    for i, (image, gt) in enumerate(dataset):
        if image.shape[:2] != gt.labels.shape:
            raise InvalidArgumentError(f"image {i}: image and label map dimensions differ")
        part = slic(image, int(sp_config["count"]), float(sp_config.get("compactness", 10.0)),
                    int(sp_config.get("iterations", 10)))
        samples.append(make_sample(image, gt, part, names[i] if names else f"{i:03d}"))
    return samples


def build_net(cfg: dict) -> ToyNet:
    return ToyNet.from_config(cfg["layers"], in_dims=5, num_classes=int(cfg["numClasses"]),
                              seed=int(cfg["seed"]), inception_defaults=cfg["inception"])


def copy_matching(net: ToyNet, tensors: dict) -> list:
    """Overwrite parameters of ``net`` from ``tensors`` where name and shape
    match; returns the names copied."""
    copied = []
    for name, value in net.params().items():
        src = tensors.get(name)
        if src is not None and np.shape(src) == value.shape:
            value[...] = src
            copied.append(name)
    return copied


def predict_sample(net: ToyNet, sample: Sample) -> np.ndarray:
    return net.predict(sample.inputs, sample.ctx)


def evaluate(net: ToyNet, samples) -> dict:
    """Pixel-level scores after projecting superpixel predictions.

    ``meanIoU`` pools one confusion matrix over all images and averages over
    classes present in the ground truth; ``perImage`` lists each image's own
    mean IoU.
    """
    k = net.num_classes
    total = np.zeros((k, k), dtype=np.int64)
    per_image = []
    for s in samples:
        pred = predict_sample(net, s)[s.part.labels]
        conf = confusion_matrix(s.gt.labels, pred, k)
        total += conf
        per_image.append(mean_iou(conf))
    return {
        "meanIoU": mean_iou(total),
        "pixelAccuracy": float(np.trace(total) / max(total.sum(), 1)),
        "perImage": per_image,
    }


def train_toy(config: dict, dataset=None, samples=None, init_tensors=None, log=None):
    """Train a :class:`ToyNet` under ``config['regime']``.

    Pass either raw ``dataset`` pairs or pre-built ``samples`` (so several
    runs can share one superpixelization). ``init_tensors`` seeds matching
    parameters, e.g. from a trained baseline checkpoint. Returns
    ``(net, metrics)`` with one ``{epoch, loss, meanIoU}`` row per epoch.
    """
    cfg = resolve_config(config)
    if samples is None:
        if not dataset:
            raise InvalidArgumentError("training needs a non-empty dataset")
        samples = prepare_samples(dataset, cfg["superpixels"])
    if not samples:
        raise InvalidArgumentError("training needs a non-empty dataset")
    net = build_net(cfg)
    if init_tensors:
        copy_matching(net, init_tensors)
    params = net.params()
    names = net.trainable(cfg["regime"])
    opt = Adam(lr=float(cfg["lr"]))
    order_rng = np.random.default_rng([int(cfg["seed"]), 1])
    metrics = []
    for epoch in range(1, int(cfg["epochs"]) + 1):
        losses = []
        for idx in order_rng.permutation(len(samples)):
            s = samples[idx]
            logits, caches = net.forward(s.inputs, s.ctx)
            loss, d_logits = softmax_xent(logits, s.targets, s.weights)
            losses.append(loss)
            if names:
                _, grads = net.backward(caches, d_logits, s.ctx)
                opt.step(params, {k: grads[k] for k in names})
        row = {"epoch": epoch, "loss": float(np.mean(losses)),
               "meanIoU": evaluate(net, samples)["meanIoU"]}
        metrics.append(row)
        if log:
            log(row)
    return net, metrics


def save_checkpoint(directory, net: ToyNet, config: dict) -> str:
    cfg = resolve_config(config)
    return fileio.save_tensors(directory, net.params(), extra={"config": cfg})


def load_checkpoint(directory):
    """Rebuild the network stored by :func:`save_checkpoint`; raises
    ChecksumError if any tensor file does not match its recorded digest."""
    try:
        manifest, tensors = fileio.load_tensors(directory)
    except ChecksumError:
        raise
    except FileFormatError as exc:
        raise ChecksumError(f"{directory}: unreadable checkpoint ({exc})") from exc
    if "config" not in manifest:
        raise ChecksumError(f"{directory}: checkpoint manifest has no config")
    cfg = resolve_config(manifest["config"])
    net = build_net(cfg)
    expected = net.params()
    if set(expected) != set(tensors):
        raise ChecksumError(f"{directory}: tensor set does not match the configured layers")
    copied = copy_matching(net, tensors)
    if len(copied) != len(expected):
        raise ChecksumError(f"{directory}: tensor shapes do not match the configured layers")
    return net, cfg


MERGE_COLOR_WEIGHT = 0.1


def coarsen_sample(sample: Sample, target_count: int, color_weight=MERGE_COLOR_WEIGHT) -> Sample:
    """Merge the sample's superpixels down to ``target_count`` and recompute
    every per-superpixel quantity from the image.

    Merging runs in ``(u, v, w*r, w*g, w*b)`` space. A small color weight
    ``w`` keeps the coarsening spatially even: with full color weight,
    uniform regions collapse first and the point density seen by the
    (point-counting) kernels shifts toward textured areas.
    """
    if target_count > sample.part.num_segments:
        raise InvalidArgumentError(
            f"target count {target_count} exceeds the {sample.part.num_segments} superpixels of image {sample.name}")
    if target_count == sample.part.num_segments:
        return sample
    feats = sample.color.copy()
    feats[:, 2:] *= color_weight
    part = agglomerative_merge(sample.part, feats, target_count)
    return make_sample(sample.image, sample.gt, part, sample.name)


def cluster_sweep(net: ToyNet, samples, counts=None, fractions=None,
                  color_weight=MERGE_COLOR_WEIGHT) -> list:
    """Evaluate ``net`` without retraining on coarser superpixel layouts.

    Give absolute ``counts`` or ``fractions`` of each image's own superpixel
    count. Returns one row per level: ``{level, meanM, meanIoU}``.
    """
    if (counts is None) == (fractions is None):
        raise InvalidArgumentError("give exactly one of counts or fractions")
    rows = []
    levels = counts if counts is not None else fractions
    for level in levels:
        coarse = []
        for s in samples:
            if counts is not None:
                target = int(level)
            else:
                if not 0 < level <= 1:
                    raise InvalidArgumentError(f"fraction {level} outside (0, 1]")
                target = max(1, int(round(level * s.part.num_segments)))
            if target < 1:
                raise InvalidArgumentError("target count must be positive")
            coarse.append(coarsen_sample(s, target, color_weight))
        scores = evaluate(net, coarse)
        rows.append({"level": level,
                     "meanM": float(np.mean([c.part.num_segments for c in coarse])),
                     "meanIoU": scores["meanIoU"]})
    return rows


def regime_comparison(train_samples, test_samples, seed=0, baseline_epochs=60, bi_epochs=20,
                      lr=0.01, regimes=("BI", "BI+FC"), config=None) -> dict:
    """FC-only baseline versus inception networks fine-tuned from it.

    The baseline (no inception modules) trains all layers for
    ``baseline_epochs``. Each regime in ``regimes`` then builds the full
    network, copies the baseline's dense layers into it and trains the
    regime's parameter groups for ``bi_epochs``. Returns
    ``{name: {"net", "metrics", "testIoU"}}`` including ``"baseline"``.
    """
    config = dict(config or {})
    base_cfg = {**config, "seed": seed, "epochs": baseline_epochs, "lr": lr, "regime": "FULL",
                "layers": default_layers([])}
    base, metrics = train_toy(base_cfg, samples=train_samples)
    out = {"baseline": {"net": base, "metrics": metrics,
                        "testIoU": evaluate(base, test_samples)["meanIoU"]}}
    for regime in regimes:
        cfg = {**config, "seed": seed, "epochs": bi_epochs, "lr": lr, "regime": regime}
        net, metrics = train_toy(cfg, samples=train_samples, init_tensors=base.params())
        out[regime] = {"net": net, "metrics": metrics,
                       "testIoU": evaluate(net, test_samples)["meanIoU"]}
    return out

"""Superpixel quantization sweeps and the CSV files the CLI writes."""

from __future__ import annotations

from .errors import InvalidArgumentError
from .slic import slic
from .superpixel import FeatureKind, agglomerative_merge, mean_features, quantization_error


def fmt(x) -> str:
    """17 significant digits, scientific notation: round-trips float64."""
    return format(float(x), ".16e")


def quantization_sweep(dataset, counts, compactness=10.0, iterations=10, nested=True) -> list:
    """Best achievable scores per image and superpixel count.

    With ``nested`` (default) each image is superpixelized once at the largest
    count and coarser levels come from agglomerative merging in
    ``(u, v, r, g, b)`` space, so the levels are refinements of each other.
    Otherwise SLIC runs independently per count. Rows are ordered by image,
    then by decreasing count.
    """
    counts = sorted({int(c) for c in counts}, reverse=True)
    if any(c < 1 for c in counts):
        raise InvalidArgumentError("superpixel counts must be positive")
    for i, (image, gt) in enumerate(dataset):
        if image.shape[:2] != gt.labels.shape:
            raise InvalidArgumentError(f"pair {i}: image and ground truth dimensions differ")
        if counts and counts[0] > gt.labels.size:
            raise InvalidArgumentError(f"pair {i}: count {counts[0]} exceeds the {gt.labels.size} pixels")
    rows = []
    for i, (image, gt) in enumerate(dataset):
        if not counts:
            continue
        finest = None
        for count in counts:
            if finest is None or not nested:
                part = slic(image, count, compactness, iterations)
                finest = part
                feats = mean_features(image, part, FeatureKind.POSITION_COLOR)
            else:
                part = agglomerative_merge(finest, feats, min(count, finest.num_segments))
            rows.append({"image": i, "target": count, "M": part.num_segments,
                         **quantization_error(part, gt)})
    return rows


def write_quant_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("M,bestPixelAccuracy,bestIoU\n")
        for r in rows:
            fh.write(f"{r['M']},{fmt(r['bestPixelAccuracy'])},{fmt(r['bestIoU'])}\n")


def write_metrics_csv(path, metrics) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,meanIoU\n")
        for r in metrics:
            fh.write(f"{r['epoch']},{fmt(r['loss'])},{fmt(r['meanIoU'])}\n")


def write_cluster_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("level,meanM,meanIoU\n")
        for r in rows:
            fh.write(f"{r['level']},{fmt(r['meanM'])},{fmt(r['meanIoU'])}\n")


def write_eval_csv(path, names, scores) -> None:
    with open(path, "w") as fh:
        fh.write("image,IoU\n")
        for name, iou in zip(names, scores["perImage"]):
            fh.write(f"{name},{fmt(iou)}\n")
        fh.write(f"mean,{fmt(scores['meanIoU'])}\n")


"""``bilateral-inception`` command line.

Every subcommand validates its inputs and computes all results before the
first file is written, then writes its outputs plus ``run_manifest.json``.
Exit codes: 0 success, 2 invalid arguments, 3 I/O, 4 verification failure.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time

import numpy as np

from . import fileio, plotting, reports, training
from .data import blob_dataset, load_dataset, load_pair, save_dataset
from .errors import BilateralInceptionError, FileFormatError, InvalidArgumentError, VerificationError
from .gradcheck import run_suite
from .inception import inception_forward, load_params
from .slic import overlay_boundaries, slic
from .superpixel import Partition, check_image

RUN_MANIFEST = "run_manifest.json"


class RunRecorder:
    """Collects the RunManifest: config, paths as given, and stage timings."""

    def __init__(self, command, config, seed=None):
        self.command = command
        self.config = config
        self.seed = seed
        self.inputs = []
        self.outputs = []
        self.timings = []
        self._start = time.perf_counter()
        self._last = self._start

    def stage(self, name):
        now = time.perf_counter()
        self.timings.append({"stage": name, "ms": (now - self._last) * 1e3,
                             "cumulativeMs": (now - self._start) * 1e3})
        self._last = now

    def output(self, path):
        self.outputs.append(path)
        return path

    def write(self, out_dir):
        path = os.path.join(out_dir, RUN_MANIFEST)
        fileio.write_json(path, {
            "command": self.command, "config": self.config, "seed": self.seed,
            "inputs": self.inputs, "outputs": self.outputs + [path], "timings": self.timings,
        })
        return path


def _int_list(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise FileFormatError(f"cannot create {path}: {exc.strerror}") from exc
    return path


def _dataset_names(directory):
    return [os.path.splitext(os.path.basename(p))[0]
            for p in sorted(glob.glob(os.path.join(directory, "*.ppm")))]


def cmd_superpixels(args):
    rec = RunRecorder("superpixels", {"count": args.count, "compactness": args.compactness,
                                      "iterations": args.iters})
    rec.inputs.append(args.input)
    image = check_image(fileio.read_ppm(args.input))
    rec.stage("read")
    part = slic(image, args.count, args.compactness, args.iters)
    rec.stage("slic")
    if part.num_segments > 65536:
        raise InvalidArgumentError(f"{part.num_segments} segments do not fit a 16-bit PGM")
    overlay = overlay_boundaries(image, part.labels)
    rec.stage("overlay")

    out = _out_dir(args.out_dir)
    fileio.write_pgm(rec.output(os.path.join(out, "partition.pgm")), part.labels)
    fileio.write_ppm(rec.output(os.path.join(out, "overlay.ppm")), overlay)
    rec.stage("write")
    fileio.write_json(rec.output(os.path.join(out, "stats.json")),
                      {"M": part.num_segments, "height": part.height, "width": part.width,
                       "timings": rec.timings})
    rec.write(out)
    print(f"M = {part.num_segments}")


def _sweep_pairs(args):
    if args.dataset:
        return load_dataset(args.dataset), [args.dataset]
    if not args.input or len(args.input) != len(args.gt or []):
        raise InvalidArgumentError("give --dataset, or matching --input and --gt lists")
    pairs = [load_pair(i, g) for i, g in zip(args.input, args.gt)]
    return pairs, list(args.input) + list(args.gt)


def cmd_quant_sweep(args):
    rec = RunRecorder("quant-sweep", {"counts": args.counts, "compactness": args.compactness,
                                      "iterations": args.iters, "nested": not args.independent})
    pairs, inputs = _sweep_pairs(args)
    rec.inputs.extend(inputs)
    rec.stage("read")
    rows = reports.quantization_sweep(pairs, args.counts, args.compactness, args.iters,
                                      nested=not args.independent)
    rec.stage("sweep")
    out = _out_dir(args.out_dir)
    reports.write_quant_csv(rec.output(os.path.join(out, "quant_sweep.csv")), rows)
    plotting.plot_quant_sweep(rows, rec.output(os.path.join(out, "quant_sweep.png")))
    rec.stage("write")
    rec.write(out)
    for r in rows:
        print(f"image {r['image']}  M={r['M']:5d}  acc={r['bestPixelAccuracy']:.4f}  IoU={r['bestIoU']:.4f}")


def _gray(values, lo, hi):
    if hi > lo:
        values = (values - lo) / (hi - lo)
    else:
        values = np.full_like(values, 0.5)
    return np.repeat(values[..., None], 3, axis=-1)


def cmd_filter(args):
    rec = RunRecorder("filter", {"viz": args.viz, "vizChannel": args.viz_channel})
    rec.inputs.extend([args.features, args.activations, args.params])
    f_in = fileio.read_bimx(args.features)
    z = fileio.read_bimx(args.activations)
    params = load_params(args.params)
    f_out = f_in
    if args.features_out:
        rec.inputs.append(args.features_out)
        f_out = fileio.read_bimx(args.features_out)
    bad = []
    if z.shape[0] != f_in.shape[0]:
        bad.append(f"activations has {z.shape[0]} rows but features has {f_in.shape[0]}")
    if z.shape[1] != params.channels:
        bad.append(f"activations has {z.shape[1]} channels but params weights expect {params.channels}")
    if f_in.shape[1] != params.dims:
        bad.append(f"features has {f_in.shape[1]} columns but params lambda is {params.dims}x{params.dims}")
    if f_out.shape[1] != params.dims:
        bad.append(f"features-out has {f_out.shape[1]} columns but params lambda is {params.dims}x{params.dims}")
    part = None
    if args.viz:
        if not args.partition:
            bad.append("--viz needs --partition")
        else:
            rec.inputs.append(args.partition)
            part = Partition(fileio.read_pgm(args.partition))
            if part.num_segments != f_out.shape[0]:
                bad.append(f"partition has {part.num_segments} segments but there are {f_out.shape[0]} output points")
        if not 0 <= args.viz_channel < z.shape[1]:
            bad.append(f"--viz-channel {args.viz_channel} outside [0, {z.shape[1]})")
    if bad:
        raise InvalidArgumentError("; ".join(bad))
    rec.stage("read")
    out_values, cache = inception_forward(z, f_in, f_out, params)
    rec.stage("filter")

    out = _out_dir(args.out_dir)
    fileio.write_bimx(rec.output(os.path.join(out, "filtered.bimx")), out_values)
    if part is not None:
        channel = [f[:, args.viz_channel] for f in cache.filtered]
        lo = min(c.min() for c in channel)
        hi = max(c.max() for c in channel)
        for h, values in enumerate(channel):
            path = rec.output(os.path.join(out, f"scale_{h}.ppm"))
            fileio.write_ppm(path, _gray(values, lo, hi)[part.labels])
    rec.stage("write")
    rec.write(out)


def _load_train_config(args):
    config = fileio.read_json(args.config) if args.config else {}
    if not isinstance(config, dict):
        raise InvalidArgumentError(f"{args.config}: config must be a JSON object")
    if args.epochs is not None:
        config["epochs"] = args.epochs
    if args.seed is not None:
        config["seed"] = args.seed
    if args.regime is not None:
        config["regime"] = args.regime
    return training.resolve_config(config)


def cmd_train(args):
    cfg = _load_train_config(args)
    rec = RunRecorder("train", cfg, seed=cfg["seed"])
    rec.inputs.append(args.input)
    if args.config:
        rec.inputs.append(args.config)
    init = None
    if args.init:
        rec.inputs.append(args.init)
        _, init = fileio.load_tensors(args.init)
    dataset = load_dataset(args.input, int(cfg["numClasses"]))
    names = _dataset_names(args.input)
    rec.stage("read")
    samples = training.prepare_samples(dataset, cfg["superpixels"], names)
    rec.stage("superpixels")
    net, metrics = training.train_toy(
        cfg, samples=samples, init_tensors=init,
        log=lambda r: print(f"epoch {r['epoch']:3d}  loss {r['loss']:.5f}  meanIoU {r['meanIoU']:.4f}"))
    rec.stage("train")

    out = _out_dir(args.out_dir)
    ckpt = os.path.join(out, "checkpoint")
    rec.output(training.save_checkpoint(ckpt, net, cfg))
    reports.write_metrics_csv(rec.output(os.path.join(out, "metrics.csv")), metrics)
    plotting.plot_training(metrics, rec.output(os.path.join(out, "training.png")))
    rec.stage("write")
    rec.write(out)


def cmd_eval(args):
    rec = RunRecorder("eval", {})
    rec.inputs.extend([args.checkpoint, args.input])
    net, cfg = training.load_checkpoint(args.checkpoint)
    rec.config = cfg
    rec.seed = cfg["seed"]
    dataset = load_dataset(args.input, int(cfg["numClasses"]))
    names = _dataset_names(args.input)
    rec.stage("read")
    samples = training.prepare_samples(dataset, cfg["superpixels"], names)
    rec.stage("superpixels")
    scores = training.evaluate(net, samples)
    preds = [training.predict_sample(net, s)[s.part.labels] for s in samples]
    rec.stage("evaluate")

    out = _out_dir(args.out_dir)
    reports.write_eval_csv(rec.output(os.path.join(out, "eval.csv")), names, scores)
    pred_dir = _out_dir(os.path.join(out, "predictions"))
    for name, pred in zip(names, preds):
        fileio.write_pgm(rec.output(os.path.join(pred_dir, f"{name}.pgm")), pred)
    rec.stage("write")
    rec.write(out)
    print(f"meanIoU {scores['meanIoU']:.6f}  pixelAccuracy {scores['pixelAccuracy']:.6f}")


def cmd_cluster_sweep(args):
    if (args.counts is None) == (args.fractions is None):
        raise InvalidArgumentError("give exactly one of --counts or --fractions")
    rec = RunRecorder("cluster-sweep", {"counts": args.counts, "fractions": args.fractions,
                                        "colorWeight": args.color_weight})
    rec.inputs.extend([args.checkpoint, args.input])
    net, cfg = training.load_checkpoint(args.checkpoint)
    rec.seed = cfg["seed"]
    dataset = load_dataset(args.input, int(cfg["numClasses"]))
    names = _dataset_names(args.input)
    rec.stage("read")
    samples = training.prepare_samples(dataset, cfg["superpixels"], names)
    if args.counts is not None:
        smallest = min(s.part.num_segments for s in samples)
        too_big = [c for c in args.counts if c > smallest]
        if too_big:
            raise InvalidArgumentError(
                f"counts {too_big} exceed the smallest training-time superpixel count {smallest}")
    rec.stage("superpixels")
    rows = training.cluster_sweep(net, samples, counts=args.counts, fractions=args.fractions,
                                  color_weight=args.color_weight)
    rec.stage("sweep")

    out = _out_dir(args.out_dir)
    reports.write_cluster_csv(rec.output(os.path.join(out, "cluster_sweep.csv")), rows)
    plotting.plot_cluster_sweep(rows, rec.output(os.path.join(out, "cluster_sweep.png")))
    rec.stage("write")
    rec.write(out)
    for r in rows:
        print(f"level {r['level']}  meanM {r['meanM']:.1f}  meanIoU {r['meanIoU']:.4f}")


def cmd_gradcheck(args):
    rec = RunRecorder("gradcheck", {"trials": args.trials, "injectFault": args.inject_fault},
                      seed=args.seed)
    if args.trials < 1:
        raise InvalidArgumentError("--trials must be positive")
    report = run_suite(seed=args.seed, trials=args.trials, fault=args.inject_fault)
    rec.stage("gradcheck")
    out = _out_dir(args.out_dir)
    fileio.write_json(rec.output(os.path.join(out, "report.json")), report)
    rec.write(out)
    worst = max(report["maxRelErr"].values())
    print(f"{args.trials} trials, max relative error {worst:.3e} (threshold {report['threshold']:g})")
    if not report["passed"]:
        raise VerificationError("gradient check failed for: " + ", ".join(report["failures"]))


def cmd_make_dataset(args):
    rec = RunRecorder("make-dataset", {"numImages": args.num_images, "size": args.size,
                                       "numClasses": args.num_classes}, seed=args.seed)
    if args.num_images < 1 or args.size < 8:
        raise InvalidArgumentError("need at least one image of size >= 8")
    pairs = blob_dataset(args.num_images, seed=args.seed, size=args.size, num_classes=args.num_classes)
    rec.stage("generate")
    out = _out_dir(args.out_dir)
    for stem in save_dataset(out, pairs, prefix=args.prefix):
        rec.output(stem + ".ppm")
        rec.output(stem + ".pgm")
    rec.stage("write")
    rec.write(out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilateral-inception",
                                     description="Bilateral filtering between superpixels.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("superpixels", help="SLIC partition, boundary overlay and stats")
    p.add_argument("--input", required=True, help="PPM image")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_superpixels)

    p = sub.add_parser("quant-sweep", help="best achievable accuracy/IoU against superpixel count")
    p.add_argument("--input", nargs="+", help="PPM images")
    p.add_argument("--gt", nargs="+", help="PGM label maps, one per image")
    p.add_argument("--dataset", help="directory of paired PPM/PGM files (instead of --input/--gt)")
    p.add_argument("--counts", type=_int_list, default=[50, 200, 1000], help="e.g. 50,200,1000")
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--independent", action="store_true",
                   help="run SLIC per count instead of merging one fine partition")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_quant_sweep)

    p = sub.add_parser("filter", help="apply an inception module to BIMX activations")
    p.add_argument("--features", required=True, help="BIMX (P, D) input point features")
    p.add_argument("--activations", required=True, help="BIMX (P, C) activations")
    p.add_argument("--params", required=True, help="params.json written by save_params")
    p.add_argument("--features-out", help="BIMX (Q, D) output point features (default: input points)")
    p.add_argument("--viz", action="store_true", help="write one gray PPM per scale")
    p.add_argument("--partition", help="PGM partition whose segments are the output points")
    p.add_argument("--viz-channel", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="train a toy superpixel network")
    p.add_argument("--config", help="JSON config (missing keys take defaults)")
    p.add_argument("--input", required=True, help="dataset directory of paired PPM/PGM files")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--regime", help="BI, BI+FC or FULL")
    p.add_argument("--init", help="checkpoint whose matching tensors initialize the network")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cluster-sweep", help="evaluate a checkpoint on merged superpixels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--counts", type=_int_list, help="absolute target counts, e.g. 300,180,60")
    p.add_argument("--fractions", type=_float_list, help="fractions of each image's count, e.g. 1,0.6,0.2")
    p.add_argument("--color-weight", type=float, default=training.MERGE_COLOR_WEIGHT,
                   help="weight of the color features when merging")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_cluster_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--inject-fault", action="store_true", help="flip one gradient sign (test hook)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-dataset", help="write a synthetic blob dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-images", type=int, default=50)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="img")
    p.set_defaults(func=cmd_make_dataset)
    return parser


def _thread_limit():
    value = os.environ.get("BI_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        n = 0
    if n < 1:
        raise InvalidArgumentError(f"BI_THREADS must be a positive integer, got {value!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        threads = _thread_limit()
        if threads is None:
            args.func(args)
        else:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                args.func(args)
    except BilateralInceptionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance criteria 1-8, each at its stated tolerance and time budget."""

import filecmp
import math
import os
import shutil
import time

import numpy as np
import pytest
from scipy import ndimage
from threadpoolctl import threadpool_limits

from bilateral_inception import fileio
from bilateral_inception.bilateral import build_kernel, filter_forward, pairwise_sq_dists
from bilateral_inception.cli import RUN_MANIFEST, main
from bilateral_inception.data import blob_dataset, save_dataset
from bilateral_inception.gradcheck import run_suite
from bilateral_inception.inception import init_params, save_params
from bilateral_inception.reports import quantization_sweep
from bilateral_inception.slic import slic
from bilateral_inception.training import cluster_sweep, prepare_samples, regime_comparison

SEEDS = range(5)


def test_1_gradient_suite(acceptance):
    start = time.perf_counter()
    report = run_suite(seed=0, trials=100)
    elapsed = time.perf_counter() - start
    worst = max(report["maxRelErr"].values())
    ok = report["passed"] and worst < 1e-4 and elapsed < 60.0
    acceptance(1, "gradient suite, 100 trials", ok,
               f"max rel err {worst:.2e} < 1e-4, {elapsed:.1f}s < 60s, failures {report['failures']}")
    assert ok


def triple_loop_kernel(f_out, f_in, lam, theta):
    q, p, d = f_out.shape[0], f_in.shape[0], f_in.shape[1]
    sq = np.zeros((q, p))
    for i in range(q):
        for j in range(p):
            for k in range(d):
                s = sum(lam[k, l] * (f_out[i, l] - f_in[j, l]) for l in range(d))
                sq[i, j] += s * s
    K = np.zeros((q, p))
    for i in range(q):
        w = [math.exp(-theta * (sq[i, j] - sq[i].min())) for j in range(p)]
        K[i] = [v / sum(w) for v in w]
    return K


def test_2_kernel_oracle(acceptance):
    rng = np.random.default_rng(2)
    worst_k = worst_row = worst_const = 0.0
    for _ in range(50):
        q, p, d = rng.integers(1, 10), rng.integers(1, 10), rng.integers(1, 6)
        f_out, f_in, lam = rng.normal(size=(q, d)), rng.normal(size=(p, d)), rng.normal(size=(d, d))
        theta = rng.uniform(0.01, 3.0)
        K = build_kernel(pairwise_sq_dists(f_out, f_in, lam), theta)
        worst_k = max(worst_k, np.max(np.abs(K.K - triple_loop_kernel(f_out, f_in, lam, theta))))
        worst_row = max(worst_row, np.max(np.abs(K.K.sum(1) - 1)))
        alpha = rng.normal(size=3) * 10
        worst_const = max(worst_const, np.max(np.abs(filter_forward(K, np.tile(alpha, (p, 1))) - alpha)))
    ok = worst_k < 1e-12 and worst_row < 1e-9 and worst_const < 1e-9
    acceptance(2, "kernel oracle, 50 instances", ok,
               f"entry {worst_k:.1e} < 1e-12, row sum {worst_row:.1e} < 1e-9, constant {worst_const:.1e} < 1e-9")
    assert ok


def test_3_scale_equivalence(acceptance):
    rng = np.random.default_rng(3)
    worst = {}
    for c in (0.5, 2.0, 10.0):
        worst[c] = 0.0
        for _ in range(50):
            q, p, d = rng.integers(1, 10), rng.integers(1, 10), rng.integers(1, 6)
            f_out, f_in, lam = rng.normal(size=(q, d)), rng.normal(size=(p, d)), rng.normal(size=(d, d))
            theta = rng.uniform(0.01, 3.0)
            a = build_kernel(pairwise_sq_dists(f_out, f_in, c * lam), theta).K
            b = build_kernel(pairwise_sq_dists(f_out, f_in, lam), c * c * theta).K
            worst[c] = max(worst[c], np.max(np.abs(a - b)))
    ok = max(worst.values()) < 1e-9
    acceptance(3, "scale/feature equivalence", ok,
               ", ".join(f"c={c:g}: {w:.1e}" for c, w in worst.items()) + " < 1e-9")
    assert ok


def test_4_quantization_sweep(acceptance):
    start = time.perf_counter()
    rows = quantization_sweep(blob_dataset(20, seed=300), [50, 200, 1000])
    elapsed = time.perf_counter() - start
    acc = np.array([r["bestPixelAccuracy"] for r in rows]).reshape(20, 3)
    ms = np.array([r["M"] for r in rows]).reshape(20, 3)
    # rows per image run from the finest level to the coarsest
    monotone = bool(np.all(np.diff(acc, axis=1) <= 0))
    mean_fine = acc[:, 0].mean()
    ok = mean_fine >= 0.99 and monotone and elapsed < 120.0
    acceptance(4, "quantization sweep, 20 blob images", ok,
               f"mean bestPixelAccuracy at M~{ms[:, 0].mean():.0f} = {mean_fine:.4f} >= 0.99 "
               f"(per-image min {acc[:, 0].min():.4f}), nested monotone {monotone}, {elapsed:.1f}s < 120s")
    assert ok


@pytest.fixture(scope="module")
def uplift_runs():
    start = time.perf_counter()
    runs = []
    for seed in SEEDS:
        train = prepare_samples(blob_dataset(50, seed=1000 + seed, size=128), {"count": 300})
        test = prepare_samples(blob_dataset(20, seed=2000 + seed, size=128), {"count": 300})
        runs.append((regime_comparison(train, test, seed=seed), test))
    return runs, time.perf_counter() - start


def test_5_segmentation_uplift(acceptance, uplift_runs):
    runs, elapsed = uplift_runs
    iou = {name: np.mean([r[name]["testIoU"] for r, _ in runs]) for name in ("baseline", "BI", "BI+FC")}
    gain_bi = 100 * (iou["BI"] - iou["baseline"])
    gain_bifc = 100 * (iou["BI+FC"] - iou["baseline"])
    ok = gain_bi >= 5 and gain_bifc >= 5 and iou["BI+FC"] >= iou["BI"] and elapsed < 900
    acceptance(5, "toy segmentation uplift, 5 seeds", ok,
               f"test IoU FC-only {iou['baseline']:.4f}, BI {iou['BI']:.4f} (+{gain_bi:.1f}), "
               f"BI+FC {iou['BI+FC']:.4f} (+{gain_bifc:.1f}), {elapsed:.0f}s < 900s")
    assert ok


def test_6_hierarchical_inference(acceptance, uplift_runs):
    runs, _ = uplift_runs
    result, test = runs[0]
    rows = cluster_sweep(result["BI+FC"]["net"], test, fractions=[1.0, 0.6, 0.2])
    full, mid, low = (r["meanIoU"] for r in rows)
    drop_mid, drop_low = 100 * (full - mid), 100 * (full - low)
    ok = drop_mid <= 3.0 and drop_low > drop_mid
    acceptance(6, "hierarchical inference after merging", ok,
               f"IoU {full:.4f} at M={rows[0]['meanM']:.0f}, 60%: -{drop_mid:.2f} pts <= 3, "
               f"20%: -{drop_low:.2f} pts > 60% drop")
    assert ok


def _compare_dirs(a, b):
    """Names of files whose bytes differ (manifests compared without timings)."""
    diff = []
    for root, _, files in os.walk(a):
        for name in files:
            pa = os.path.join(root, name)
            pb = os.path.join(b, os.path.relpath(pa, a))
            if name in (RUN_MANIFEST, "stats.json"):
                ja, jb = fileio.read_json(pa), fileio.read_json(pb)
                ja.pop("timings"), jb.pop("timings")
                if ja != jb:
                    diff.append(pa)
            elif not filecmp.cmp(pa, pb, shallow=False):
                diff.append(pa)
    return diff


def test_7_cli_determinism(acceptance, tmp_path):
    data = tmp_path / "data"
    save_dataset(data, blob_dataset(3, seed=21, size=48))
    rng = np.random.default_rng(7)
    fileio.write_bimx(tmp_path / "f.bimx", rng.random((20, 5)))
    fileio.write_bimx(tmp_path / "z.bimx", rng.normal(size=(20, 3)))
    save_params(tmp_path / "p", init_params(3, 5, 3))
    part = np.repeat(np.arange(20), 3).reshape(6, 10)
    fileio.write_pgm(tmp_path / "part.pgm", part)
    cfg = tmp_path / "cfg.json"
    fileio.write_json(cfg, {"superpixels": {"count": 50}, "epochs": 2})
    out = str(tmp_path / "out")
    commands = {
        "make-dataset": ["make-dataset", "--num-images", "2", "--size", "32", "--seed", "3"],
        "superpixels": ["superpixels", "--input", str(data / "img_000.ppm"), "--count", "40"],
        "quant-sweep": ["quant-sweep", "--dataset", str(data), "--counts", "10,40"],
        "filter": ["filter", "--features", str(tmp_path / "f.bimx"), "--activations", str(tmp_path / "z.bimx"),
                   "--params", str(tmp_path / "p"), "--viz", "--partition", str(tmp_path / "part.pgm")],
        "train": ["train", "--config", str(cfg), "--input", str(data), "--seed", "5"],
        "eval": ["eval", "--checkpoint", str(tmp_path / "ckpt"), "--input", str(data)],
        "cluster-sweep": ["cluster-sweep", "--checkpoint", str(tmp_path / "ckpt"), "--input", str(data),
                          "--fractions", "1,0.5"],
        "gradcheck": ["gradcheck", "--seed", "9", "--trials", "2"],
    }
    failed = []
    for name, argv in commands.items():
        for attempt in ("a", "b"):
            assert main(argv + ["--out-dir", out]) == 0, name
            if name == "train" and attempt == "a":
                shutil.copytree(os.path.join(out, "checkpoint"), tmp_path / "ckpt")
            shutil.move(out, f"{out}_{name}_{attempt}")
        if _compare_dirs(f"{out}_{name}_a", f"{out}_{name}_b"):
            failed.append(name)
    ok = not failed
    acceptance(7, "CLI determinism", ok,
               f"{len(commands) - len(failed)}/{len(commands)} commands bit-identical on rerun"
               + (f", differing: {failed}" if failed else ""))
    assert ok


def natural_like_image(rng, height=321, width=481):
    """Smooth random regions with texture and noise, similar in statistics
    to a photograph."""
    base = ndimage.gaussian_filter(rng.random((height, width, 3)), (12, 12, 0))
    base = (base - base.min()) / (base.max() - base.min())
    texture = ndimage.gaussian_filter(rng.random((height, width, 3)), (1.5, 1.5, 0))
    return np.clip(0.8 * base + 0.3 * (texture - 0.5) + rng.normal(0, 0.02, base.shape), 0, 1)


def test_8_slic_runtime(acceptance):
    image = natural_like_image(np.random.default_rng(8))
    times = []
    with threadpool_limits(limits=1):
        for _ in range(3):
            start = time.perf_counter()
            part = slic(image, 1000)
            times.append(time.perf_counter() - start)
    median = float(np.median(times)) * 1e3
    ok = median < 500.0
    acceptance(8, "SLIC 1000 superpixels on 481x321, single thread", ok,
               f"median {median:.0f} ms of 3 runs < 500 ms, M = {part.num_segments}")
    assert ok

"""Bilateral inception: several bilateral filters sharing one feature
transform, combined per channel with learned weights.

Scales are stored as log-scales ``rho`` (``theta = exp(rho)``) so that
unconstrained optimizer steps keep every scale positive.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .bilateral import (
    as_float,
    build_kernel,
    pairwise_sq_dists,
    scatter_outer,
    sq_dist_grad,
    theta_grad,
)
from .errors import FileFormatError, InvalidArgumentError

_THETA_LADDER = (1.0, 0.7, 0.3, 0.1)


def theta_ladder(h: int) -> np.ndarray:
    """Well separated initial scales: 1, 0.7, 0.3, 0.1, then x0.3 per step."""
    out = list(_THETA_LADDER[:h])
    while len(out) < h:
        out.append(out[-1] * 0.3)
    return np.array(out)


@dataclass
class InceptionParams:
    rho: np.ndarray
    lam: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.rho = as_float(self.rho).reshape(-1)
        self.lam = as_float(self.lam)
        self.weights = as_float(self.weights)
        h = self.rho.size
        if h < 1 or not np.all(np.isfinite(self.rho)):
            raise InvalidArgumentError("need at least one finite log-scale")
        if self.lam.ndim != 2 or self.lam.shape[0] != self.lam.shape[1]:
            raise InvalidArgumentError(f"lambda must be square, got {self.lam.shape}")
        if self.weights.ndim != 2 or self.weights.shape[0] != h:
            raise InvalidArgumentError(f"weights must be ({h}, C), got {self.weights.shape}")

    @property
    def thetas(self) -> np.ndarray:
        return np.exp(self.rho)

    @property
    def num_scales(self) -> int:
        return self.rho.size

    @property
    def dims(self) -> int:
        return self.lam.shape[0]

    @property
    def channels(self) -> int:
        return self.weights.shape[1]

    def tensors(self) -> dict:
        return {"rho": self.rho, "lambda": self.lam, "weights": self.weights}

    def copy(self) -> "InceptionParams":
        return InceptionParams(self.rho.copy(), self.lam.copy(), self.weights.copy())


@dataclass
class InceptionGradients:
    d_input: np.ndarray
    d_rho: np.ndarray
    d_lambda: np.ndarray
    d_weights: np.ndarray

    def tensors(self) -> dict:
        return {"rho": self.d_rho, "lambda": self.d_lambda, "weights": self.d_weights}


@dataclass
class InceptionCache:
    sq_dists: np.ndarray
    kernels: list = field(default_factory=list)
    filtered: list = field(default_factory=list)


def init_params(h: int, d: int, c: int, seed=None) -> InceptionParams:
    """Initial module: ladder scales, identity transform, uniform 1/H weights.

    ``seed`` is accepted for interface symmetry; initialization is fully
    deterministic.
    """
    if h < 1 or d < 1 or c < 1:
        raise InvalidArgumentError(f"H, D and C must be positive, got {h}, {d}, {c}")
    return InceptionParams(
        rho=np.log(theta_ladder(h)),
        lam=np.eye(d),
        weights=np.full((h, c), 1.0 / h),
    )


def _check(z, f_in, f_out, params):
    z = as_float(z)
    if z.ndim != 2:
        raise InvalidArgumentError(f"z must be 2-d, got shape {z.shape}")
    if np.shape(f_in)[0] != z.shape[0]:
        raise InvalidArgumentError(f"f_in has {np.shape(f_in)[0]} rows, z has {z.shape[0]}")
    if z.shape[1] != params.channels:
        raise InvalidArgumentError(f"z has {z.shape[1]} channels, weights expect {params.channels}")
    if np.shape(f_in)[1] != params.dims or np.shape(f_out)[1] != params.dims:
        raise InvalidArgumentError(f"features must have {params.dims} columns")
    return z


def inception_forward(z, f_in, f_out, params: InceptionParams):
    """Returns ``(output, cache)`` with ``output`` of shape ``(Q, C)``.

    The squared distances are computed once and shared by all scales.
    """
    z = _check(z, f_in, f_out, params)
    sq = pairwise_sq_dists(f_out, f_in, params.lam)
    cache = InceptionCache(sq_dists=sq)
    out = np.zeros((sq.shape[0], z.shape[1]), dtype=np.result_type(sq, z))
    for h, theta in enumerate(params.thetas):
        kernel = build_kernel(sq, theta)
        filtered = kernel.K @ z
        cache.kernels.append(kernel)
        cache.filtered.append(filtered)
        out += filtered * params.weights[h]
    return out, cache


def inception_backward(cache: InceptionCache, z, f_in, f_out, params: InceptionParams,
                       d_out) -> InceptionGradients:
    z = _check(z, f_in, f_out, params)
    d_out = as_float(d_out)
    q, p = cache.sq_dists.shape
    if len(cache.kernels) != params.num_scales or p != z.shape[0]:
        raise InvalidArgumentError("cache does not match these parameters")
    if d_out.shape != (q, z.shape[1]):
        raise InvalidArgumentError(f"d_out must be ({q}, {z.shape[1]}), got {d_out.shape}")
    f_in = as_float(f_in)
    f_out = as_float(f_out)

    d_input = np.zeros_like(z)
    d_rho = np.zeros(params.num_scales)
    d_weights = np.zeros_like(params.weights)
    grad_d = np.zeros((q, p))
    for h, kernel in enumerate(cache.kernels):
        d_weights[h] = np.sum(d_out * cache.filtered[h], axis=0)
        upstream = d_out * params.weights[h]
        d_input += kernel.K.T @ upstream
        grad_K = upstream @ z.T
        d_rho[h] = theta_grad(kernel, grad_K) * kernel.theta
        grad_d += sq_dist_grad(kernel, grad_K)
    # every scale shares the distance matrix, so one scatter suffices
    d_lambda = 2.0 * params.lam @ scatter_outer(grad_d, f_out, f_in)
    return InceptionGradients(d_input=d_input, d_rho=d_rho, d_lambda=d_lambda, d_weights=d_weights)


def inception_pair(z, position_features, color_features, first: InceptionParams,
                   second: InceptionParams) -> np.ndarray:
    """Position-only module followed by a position+color module on the same
    points."""
    hidden, _ = inception_forward(z, position_features, position_features, first)
    out, _ = inception_forward(hidden, color_features, color_features, second)
    return out


def save_params(directory, params: InceptionParams) -> str:
    """BIMX tensors plus a manifest ``{H, D, C, rho, files}``."""
    os.makedirs(directory, exist_ok=True)
    fileio.write_bimx(os.path.join(directory, "lambda.bimx"), params.lam)
    fileio.write_bimx(os.path.join(directory, "weights.bimx"), params.weights)
    manifest = {
        "H": params.num_scales,
        "D": params.dims,
        "C": params.channels,
        "rho": [float(r) for r in params.rho],
        "files": {"lambda": "lambda.bimx", "weights": "weights.bimx"},
    }
    path = os.path.join(directory, "params.json")
    fileio.write_json(path, manifest)
    return path


def load_params(path) -> InceptionParams:
    """Read a manifest written by :func:`save_params` (file or directory)."""
    if os.path.isdir(path):
        path = os.path.join(path, "params.json")
    manifest = fileio.read_json(path)
    base = os.path.dirname(path)
    try:
        lam = fileio.read_bimx(os.path.join(base, manifest["files"]["lambda"]))
        weights = fileio.read_bimx(os.path.join(base, manifest["files"]["weights"]))
        h, d, c = manifest["H"], manifest["D"], manifest["C"]
        rho = manifest["rho"]
    except KeyError as exc:
        raise FileFormatError(f"{path}: manifest missing key {exc}") from exc
    if len(rho) != h or lam.shape != (d, d) or weights.shape != (h, c):
        raise InvalidArgumentError(
            f"{path}: tensor shapes lambda {lam.shape}, weights {weights.shape} disagree with H={h}, D={d}, C={c}")
    return InceptionParams(rho=np.array(rho), lam=lam, weights=weights)


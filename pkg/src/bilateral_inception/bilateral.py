"""Explicit Gaussian bilateral filtering between two point sets.

For output features ``f_i`` (Q rows) and input features ``f_j`` (P rows) the
kernel is the row-wise softmax of ``-theta * ||L f_i - L f_j||^2``; filtering
is the product ``K @ z``. Backward passes give exact gradients for the
activations, the scale and the feature transform ``L``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class BilateralKernel:
    K: np.ndarray
    theta: float
    sq_dists: np.ndarray


@dataclass
class BilateralGradients:
    d_input: np.ndarray
    d_theta: float
    d_lambda: np.ndarray


def as_float(x) -> np.ndarray:
    """Array in float64, or in the input's own dtype when that is wider."""
    x = np.asarray(x)
    return x.astype(np.result_type(x.dtype, np.float64), copy=False)


def _as_matrix(x, name):
    x = as_float(x)
    if x.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-d, got shape {x.shape}")
    return x


def pairwise_sq_dists(f_out, f_in, lam) -> np.ndarray:
    """``(Q, P)`` matrix of ``||lam @ f_out[i] - lam @ f_in[j]||^2``."""
    f_out = _as_matrix(f_out, "f_out")
    f_in = _as_matrix(f_in, "f_in")
    lam = _as_matrix(lam, "lambda")
    d = f_in.shape[1]
    if f_out.shape[1] != d or lam.shape != (d, d):
        raise InvalidArgumentError(
            f"feature dims disagree: f_out {f_out.shape}, f_in {f_in.shape}, lambda {lam.shape}")
    g_out = f_out @ lam.T
    g_in = f_in @ lam.T
    out = np.zeros((g_out.shape[0], g_in.shape[0]), dtype=g_out.dtype)
    # one column at a time keeps the temporaries at (Q, P)
    for k in range(d):
        diff = g_out[:, k, None] - g_in[None, :, k]
        out += diff * diff
    return out


def build_kernel(sq_dists, theta: float) -> BilateralKernel:
    """Row-normalized Gaussian kernel with per-row max subtraction."""
    sq_dists = _as_matrix(sq_dists, "sq_dists")
    if not np.all(np.isfinite(sq_dists)):
        raise InvalidArgumentError("squared distances must be finite")
    theta = as_float(theta)[()]
    if np.ndim(theta) != 0 or not np.isfinite(theta) or theta < 0:
        raise InvalidArgumentError(f"theta must be finite and non-negative, got {theta}")
    logits = -theta * sq_dists
    logits -= logits.max(axis=1, keepdims=True)
    K = np.exp(logits)
    K /= K.sum(axis=1, keepdims=True)
    return BilateralKernel(K=K, theta=theta, sq_dists=sq_dists)


def filter_forward(kernel: BilateralKernel, z) -> np.ndarray:
    z = _as_matrix(z, "z")
    if z.shape[0] != kernel.K.shape[1]:
        raise InvalidArgumentError(
            f"z has {z.shape[0]} rows but the kernel expects {kernel.K.shape[1]} input points")
    return kernel.K @ z


def scatter_outer(weights, f_out, f_in) -> np.ndarray:
    """``sum_ij weights[i, j] (f_out[i] - f_in[j]) (f_out[i] - f_in[j])^T``
    without forming the ``(Q, P, D)`` difference tensor."""
    rows = weights.sum(axis=1)
    cols = weights.sum(axis=0)
    cross = f_out.T @ weights @ f_in
    return (f_out.T * rows) @ f_out + (f_in.T * cols) @ f_in - cross - cross.T


def sq_dist_grad(kernel: BilateralKernel, grad_K) -> np.ndarray:
    """Gradient of the loss w.r.t. the squared distances, given ``dL/dK``."""
    K = kernel.K
    inner = np.sum(K * grad_K, axis=1, keepdims=True)
    return -kernel.theta * K * (grad_K - inner)


def theta_grad(kernel: BilateralKernel, grad_K) -> float:
    K = kernel.K
    expected = np.sum(K * kernel.sq_dists, axis=1, keepdims=True)
    return float(np.sum(grad_K * K * (expected - kernel.sq_dists)))


def filter_backward(kernel: BilateralKernel, f_out, f_in, lam, z, d_out) -> BilateralGradients:
    f_out = _as_matrix(f_out, "f_out")
    f_in = _as_matrix(f_in, "f_in")
    lam = _as_matrix(lam, "lambda")
    z = _as_matrix(z, "z")
    d_out = _as_matrix(d_out, "d_out")
    q, p = kernel.K.shape
    if (f_out.shape[0] != q or f_in.shape[0] != p or z.shape[0] != p
            or d_out.shape != (q, z.shape[1]) or lam.shape != (f_in.shape[1],) * 2):
        raise InvalidArgumentError(
            f"backward shapes inconsistent with a {q}x{p} kernel: f_out {f_out.shape}, "
            f"f_in {f_in.shape}, lambda {lam.shape}, z {z.shape}, d_out {d_out.shape}")
    grad_K = d_out @ z.T
    grad_d = sq_dist_grad(kernel, grad_K)
    d_lambda = 2.0 * lam @ scatter_outer(grad_d, f_out, f_in)
    return BilateralGradients(
        d_input=kernel.K.T @ d_out,
        d_theta=theta_grad(kernel, grad_K),
        d_lambda=d_lambda,
    )

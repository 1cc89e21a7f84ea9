"""Finite-difference verification of every backward pass on small random
instances.

Analytic gradients are computed in float64. The central-difference oracle
re-runs the same forward code on an extended-precision (``np.longdouble``)
copy of the instance: in float64 the roundoff of a difference quotient with
step 1e-5 is around 1e-11, which swamps the relative-error metric for
gradient entries near 1e-7.
"""

from __future__ import annotations

import numpy as np

from .bilateral import build_kernel, filter_backward, filter_forward, pairwise_sq_dists
from .inception import InceptionParams, inception_backward, inception_forward
from .network import DenseLayer, InceptionLayer, grad_check, make_features_ctx, softmax_xent
from .superpixel import FeatureKind

THRESHOLD = 1e-4
STEP = 1e-5


def _oracle(forward, tensors: dict, analytic: dict, wide: bool = True) -> dict:
    """``forward(T)`` maps a dict of tensors to a scalar loss."""
    dtype = np.longdouble if wide else np.float64
    wide_t = {k: np.array(v, dtype=dtype) for k, v in tensors.items()}
    return grad_check(lambda: forward(wide_t), wide_t, analytic, STEP)


def _features(rng, n, d):
    return rng.uniform(0.0, 1.0, size=(n, d))


def _lambda(rng, d):
    return np.eye(d) + 0.3 * rng.standard_normal((d, d))


def random_inception(rng, h, d, c, theta_range=(0.3, 3.0)) -> InceptionParams:
    lo, hi = np.log(theta_range[0]), np.log(theta_range[1])
    return InceptionParams(
        rho=rng.uniform(lo, hi, size=h),
        lam=_lambda(rng, d),
        weights=rng.standard_normal((h, c)),
    )


def check_bilateral(rng, p=7, q=5, c=3, d=5, fault=False, wide=True) -> dict:
    f_in, f_out = _features(rng, p, d), _features(rng, q, d)
    probe = rng.standard_normal((q, c))
    t = {"z": rng.standard_normal((p, c)),
         "theta": np.array([rng.uniform(0.5, 3.0)]),
         "lambda": _lambda(rng, d)}

    def forward(t):
        k = build_kernel(pairwise_sq_dists(f_out, f_in, t["lambda"]), t["theta"][0])
        return np.sum(probe * filter_forward(k, t["z"]))

    k = build_kernel(pairwise_sq_dists(f_out, f_in, t["lambda"]), t["theta"][0])
    g = filter_backward(k, f_out, f_in, t["lambda"], t["z"], probe)
    analytic = {"z": g.d_input, "theta": np.array([g.d_theta]), "lambda": g.d_lambda}
    if fault:
        analytic["lambda"] = -analytic["lambda"]
    return _oracle(forward, t, analytic, wide)


def check_inception(rng, p=7, q=7, c=3, d=5, h=2, fault=False, wide=True) -> dict:
    f_in, f_out = _features(rng, p, d), _features(rng, q, d)
    params = random_inception(rng, h, d, c)
    probe = rng.standard_normal((q, c))
    t = {"z": rng.standard_normal((p, c)), "rho": params.rho, "lambda": params.lam,
         "weights": params.weights}

    def forward(t):
        prm = InceptionParams(t["rho"], t["lambda"], t["weights"])
        return np.sum(probe * inception_forward(t["z"], f_in, f_out, prm)[0])

    _, cache = inception_forward(t["z"], f_in, f_out, params)
    g = inception_backward(cache, t["z"], f_in, f_out, params, probe)
    analytic = {"z": g.d_input, "rho": g.d_rho, "lambda": g.d_lambda, "weights": g.d_weights}
    if fault:
        analytic["rho"] = -analytic["rho"]
    return _oracle(forward, t, analytic, wide)


def check_dense(rng, p=6, c_in=4, c_out=3, activation="relu", fault=False, wide=True) -> dict:
    layer = DenseLayer.init(c_in, c_out, rng, activation=activation)
    layer.b[:] = 0.1 * rng.standard_normal(c_out)
    probe = rng.standard_normal((p, c_out))
    t = {"z": rng.standard_normal((p, c_in)), "W": layer.W, "b": layer.b}

    def forward(t):
        return np.sum(probe * DenseLayer(t["W"], t["b"], activation).forward(t["z"])[0])

    _, cache = layer.forward(t["z"])
    d_in, g = layer.backward(cache, probe)
    analytic = {"z": d_in, "W": g["W"], "b": g["b"]}
    if fault:
        analytic["W"] = -analytic["W"]
    return _oracle(forward, t, analytic, wide)


def check_loss(rng, p=5, c=3, fault=False, wide=True) -> dict:
    targets = rng.integers(0, c, size=p)
    weights = rng.uniform(1.0, 20.0, size=p)
    t = {"logits": 2.0 * rng.standard_normal((p, c))}

    def forward(t):
        return softmax_xent(t["logits"], targets, weights)[0]

    _, d_logits = softmax_xent(t["logits"], targets, weights)
    if fault:
        d_logits = -d_logits
    return _oracle(forward, t, {"logits": d_logits}, wide)


def check_stack(rng, p=7, q=None, c=3, h=2, num_classes=3, fault=False, wide=True) -> dict:
    """dense -> inception(position) -> inception(position+color) -> dense -> loss.

    The first inception module maps the ``p`` input points to ``q`` output
    points; everything after it lives on the output points.
    """
    q = p if q is None else q
    pos_in, col_in = _features(rng, p, 2), _features(rng, p, 5)
    pos_out, col_out = _features(rng, q, 2), _features(rng, q, 5)
    first_ctx = make_features_ctx(pos_in, col_in, pos_out, col_out)
    out_ctx = make_features_ctx(pos_out, col_out)
    fc1 = DenseLayer.init(5, c, rng, activation="relu", name="fc1")
    fc1.b[:] = 0.1
    bi1 = random_inception(rng, h, 2, c)
    bi2 = random_inception(rng, h, 5, c)
    fc2 = DenseLayer.init(c, num_classes, rng, name="fc2")
    targets = rng.integers(0, num_classes, size=q)
    weights = rng.uniform(1.0, 20.0, size=q)
    t = {"fc1.W": fc1.W, "fc1.b": fc1.b, "fc2.W": fc2.W, "fc2.b": fc2.b}
    for name, prm in (("bi1", bi1), ("bi2", bi2)):
        t.update({f"{name}.{k}": v for k, v in prm.tensors().items()})

    def build(t):
        return [
            (DenseLayer(t["fc1.W"], t["fc1.b"], "relu", name="fc1"), None),
            (InceptionLayer(InceptionParams(t["bi1.rho"], t["bi1.lambda"], t["bi1.weights"]),
                            FeatureKind.POSITION, name="bi1"), first_ctx),
            (InceptionLayer(InceptionParams(t["bi2.rho"], t["bi2.lambda"], t["bi2.weights"]),
                            FeatureKind.POSITION_COLOR, name="bi2"), out_ctx),
            (DenseLayer(t["fc2.W"], t["fc2.b"], name="fc2"), None),
        ]

    def run(layers):
        z = col_in
        caches = []
        for layer, ctx in layers:
            z, cache = layer.forward(z, ctx)
            caches.append(cache)
        return z, caches

    def forward(t):
        return softmax_xent(run(build(t))[0], targets, weights)[0]

    layers = build(t)
    logits, caches = run(layers)
    _, d = softmax_xent(logits, targets, weights)
    analytic = {}
    for (layer, ctx), cache in zip(reversed(layers), reversed(caches)):
        d, g = layer.backward(cache, d, ctx)
        analytic.update({f"{layer.name}.{k}": v for k, v in g.items()})
    if fault:
        analytic["bi1.lambda"] = -analytic["bi1.lambda"]
    return _oracle(forward, t, analytic, wide)


def run_suite(seed: int = 0, trials: int = 1, fault: bool = False) -> dict:
    """Run every fragment ``trials`` times with sizes drawn per trial
    (P, Q from {5, 7, 9}, C = 3, D from {2, 5}, H from {1, 2, 3}).

    ``fault`` flips the sign of one analytic gradient in the first trial; the
    suite must then fail.
    """
    rng = np.random.default_rng(seed)
    worst: dict = {}
    for trial in range(trials):
        p, q = (int(v) for v in rng.choice([5, 7, 9], size=2))
        d = int(rng.choice([2, 5]))
        h = int(rng.integers(1, 4))
        results = {
            "bilateral": check_bilateral(rng, p=p, q=q, c=3, d=d, fault=fault and trial == 0),
            "inception": check_inception(rng, p=p, q=q, c=3, d=d, h=h),
            "dense": check_dense(rng, p=p),
            "loss": check_loss(rng, p=p),
            "stack": check_stack(rng, p=p, q=q, h=h),
        }
        for frag, errs in results.items():
            for tensor, err in errs.items():
                key = f"{frag}.{tensor}"
                worst[key] = max(worst.get(key, 0.0), err)
    failures = sorted(k for k, v in worst.items() if not v < THRESHOLD)
    return {"passed": not failures, "threshold": THRESHOLD, "trials": trials, "seed": seed,
            "maxRelErr": worst, "failures": failures}

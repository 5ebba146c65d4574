from __future__ import annotations

import numpy as np

from .layers import Layer


def relative_error(analytic, numeric, floor: float = 1e-5) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_layer(layer: Layer, x: np.ndarray, rng: np.random.Generator, eps: float = 1e-4,
                training: bool = False, dropout_seed: int = 0) -> float:
    """Max relative error of ``layer``'s backward pass against central differences.

    The scalar probed is ``sum(forward(x) * r)`` for a fixed random ``r``;
    both the input gradient and every parameter gradient are compared.
    """

    def run(inp):
        return layer.forward(inp, training=training, rng=np.random.default_rng(dropout_seed))

    y = run(x)
    r = rng.standard_normal(y.shape)
    dx = layer.backward(r)
    analytic = {"x": dx, **{k: v.copy() for k, v in layer.grads.items()}}

    def objective():
        return float((run(x) * r).sum())

    worst = 0.0
    targets = {"x": x, **layer.params}
    for name, arr in targets.items():
        num = np.zeros_like(arr, dtype=np.float64)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + eps
            fp = objective()
            arr[i] = orig - eps
            fm = objective()
            arr[i] = orig
            num[i] = (fp - fm) / (2 * eps)
        worst = max(worst, relative_error(analytic[name], num))
    return worst

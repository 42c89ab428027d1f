"""Mean-squared-error training objective with an L2 penalty on kernel weights."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .layers import Parameter


def loss(pred: np.ndarray, truth: np.ndarray, weights: Sequence[np.ndarray],
         lam: float) -> float:
    """(1/N) sum (y_true - y_pred)^2 + lam * sum of squared weights.

    N counts every predicted element; `weights` holds only the penalized
    matrices (biases excluded).
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    mse = float(np.mean((truth - pred) ** 2))
    penalty = lam * sum(float(np.sum(w ** 2)) for w in weights)
    return mse + penalty


def loss_and_grad(pred: np.ndarray, truth: np.ndarray, params: Iterable[Parameter],
                  lam: float) -> tuple[float, np.ndarray]:
    """Loss value plus d(loss)/d(pred); adds the penalty gradient 2*lam*W
    straight into each penalized parameter's grad."""
    params = list(params)
    value = loss(pred, truth, [p.value for p in params if p.penalized], lam)
    dpred = 2.0 * (pred - truth) / pred.size
    if lam > 0:
        for p in params:
            if p.penalized:
                p.grad += 2.0 * lam * p.value
    return value, dpred

"""Dense float64 kernels and their hand-derived gradients.

Shapes follow one convention throughout:

    x : (d_x,)            input vector
    y : (d_y,)            input vector
    w : (k, d_x, d_y)     slice i of the tensor is w[i]
    bilinear(x, w, y)[i] = x @ w[i] @ y

Two composite layers are built on the bilinear product. The pair layer
combines two vectors into one:

    tensor_layer(x, y) = u @ f(bilinear(x, w, y) + v @ [x; y] + b)

with u (d_out, k), v (k, 2d), b (k,). The update layer residually adjusts
its first argument from its second and carries no bias, and x enters the
nonlinearity only through the bilinear term:

    residual_update(x, y) = x + u @ f(bilinear(x, w, y) + v @ y)

with u (d, k), v (k, d). The nonlinearity defaults to tanh; outputs are
not squashed again after the residual add.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes disagree."""


class Activation(NamedTuple):
    """Elementwise nonlinearity with its derivative expressed via the output."""

    fn: Callable[[np.ndarray], np.ndarray]
    grad_from_output: Callable[[np.ndarray], np.ndarray]


TANH = Activation(np.tanh, lambda a: 1.0 - a * a)


@dataclass(frozen=True)
class TensorLayerWeights:
    """Weights of the pair layer: u (d_out,k), w (k,d,d), v (k,2d), b (k,)."""

    u: np.ndarray
    w: np.ndarray
    v: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class UpdateWeights:
    """Weights of the update layer: u (d,k), w (k,d,d), v (k,d). No bias."""

    u: np.ndarray
    w: np.ndarray
    v: np.ndarray


def _vec(name: str, a: np.ndarray) -> None:
    if a.ndim != 1 or a.shape[0] < 1:
        raise ShapeError(f"{name} must be a non-empty vector, got shape {a.shape}")


def bilinear(x: np.ndarray, w: np.ndarray, y: np.ndarray) -> np.ndarray:
    """z[i] = x @ w[i] @ y for every slice i; returns shape (k,)."""
    _vec("x", x)
    _vec("y", y)
    if w.ndim != 3 or w.shape[1] != x.shape[0] or w.shape[2] != y.shape[0]:
        raise ShapeError(
            f"tensor shape {w.shape} does not contract x {x.shape} with y {y.shape}"
        )
    return np.einsum("i,kij,j->k", x, w, y)


def bilinear_backward(
    x: np.ndarray, w: np.ndarray, y: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (gx, gw, gy) of grad_out @ bilinear(x, w, y)."""
    if grad_out.shape != (w.shape[0],):
        raise ShapeError(
            f"upstream gradient shape {grad_out.shape} != slice count ({w.shape[0]},)"
        )
    gx = np.einsum("k,kij,j->i", grad_out, w, y)
    gy = np.einsum("k,kij,i->j", grad_out, w, x)
    gw = np.einsum("k,i,j->kij", grad_out, x, y)
    return gx, gw, gy


def tensor_layer(
    x: np.ndarray,
    y: np.ndarray,
    weights: TensorLayerWeights,
    activation: Activation = TANH,
) -> np.ndarray:
    """u @ f(bilinear(x, w, y) + v @ [x; y] + b); returns shape (d_out,)."""
    z = _tensor_layer_pre(x, y, weights)
    return weights.u @ activation.fn(z)


def _tensor_layer_pre(
    x: np.ndarray, y: np.ndarray, weights: TensorLayerWeights
) -> np.ndarray:
    k = weights.w.shape[0]
    if weights.v.shape != (k, x.shape[0] + y.shape[0]):
        raise ShapeError(
            f"v shape {weights.v.shape} != ({k}, {x.shape[0] + y.shape[0]})"
        )
    if weights.b.shape != (k,):
        raise ShapeError(f"b shape {weights.b.shape} != ({k},)")
    if weights.u.ndim != 2 or weights.u.shape[1] != k:
        raise ShapeError(f"u shape {weights.u.shape} must have {k} columns")
    return bilinear(x, weights.w, y) + weights.v @ np.concatenate([x, y]) + weights.b


def tensor_layer_backward(
    x: np.ndarray,
    y: np.ndarray,
    weights: TensorLayerWeights,
    grad_out: np.ndarray,
    activation: Activation = TANH,
) -> tuple[np.ndarray, np.ndarray, TensorLayerWeights]:
    """Gradients (gx, gy, weight grads) of grad_out @ tensor_layer(x, y)."""
    z = _tensor_layer_pre(x, y, weights)
    a = activation.fn(z)
    if grad_out.shape != (weights.u.shape[0],):
        raise ShapeError(
            f"upstream gradient shape {grad_out.shape} != ({weights.u.shape[0]},)"
        )
    gu = np.outer(grad_out, a)
    gz = (weights.u.T @ grad_out) * activation.grad_from_output(a)
    gb = gz
    gv = np.outer(gz, np.concatenate([x, y]))
    gxy = weights.v.T @ gz
    d = x.shape[0]
    bgx, gw, bgy = bilinear_backward(x, weights.w, y, gz)
    return gxy[:d] + bgx, gxy[d:] + bgy, TensorLayerWeights(gu, gw, gv, gb)


def residual_update(
    x: np.ndarray,
    y: np.ndarray,
    weights: UpdateWeights,
    activation: Activation = TANH,
) -> np.ndarray:
    """x + u @ f(bilinear(x, w, y) + v @ y); output has x's dimension."""
    z = _residual_update_pre(x, y, weights)
    return x + weights.u @ activation.fn(z)


def _residual_update_pre(
    x: np.ndarray, y: np.ndarray, weights: UpdateWeights
) -> np.ndarray:
    k = weights.w.shape[0]
    if weights.v.shape != (k, y.shape[0]):
        raise ShapeError(f"v shape {weights.v.shape} != ({k}, {y.shape[0]})")
    if weights.u.shape != (x.shape[0], k):
        raise ShapeError(f"u shape {weights.u.shape} != ({x.shape[0]}, {k})")
    return bilinear(x, weights.w, y) + weights.v @ y


def residual_update_backward(
    x: np.ndarray,
    y: np.ndarray,
    weights: UpdateWeights,
    grad_out: np.ndarray,
    activation: Activation = TANH,
) -> tuple[np.ndarray, np.ndarray, UpdateWeights]:
    """Gradients (gx, gy, weight grads) of grad_out @ residual_update(x, y).

    gx includes the identity contribution from the residual term.
    """
    z = _residual_update_pre(x, y, weights)
    a = activation.fn(z)
    if grad_out.shape != x.shape:
        raise ShapeError(f"upstream gradient shape {grad_out.shape} != {x.shape}")
    gu = np.outer(grad_out, a)
    gz = (weights.u.T @ grad_out) * activation.grad_from_output(a)
    gv = np.outer(gz, y)
    bgx, gw, bgy = bilinear_backward(x, weights.w, y, gz)
    gx = grad_out + bgx
    gy = weights.v.T @ gz + bgy
    return gx, gy, UpdateWeights(gu, gw, gv)


# -- softmax and the classification loss it pairs with ------------------------


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax; components are positive and sum to one."""
    _vec("v", v)
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy −log softmax(logits)[target]; returns (loss, probs)."""
    _vec("logits", logits)
    if not 0 <= target < logits.shape[0]:
        raise ShapeError(f"target {target} out of range for {logits.shape[0]} logits")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    probs = np.exp(logits - lse)
    return float(lse - logits[target]), probs


def softmax_xent_backward(logits: np.ndarray, target: int) -> np.ndarray:
    """d loss / d logits = softmax(logits) − one_hot(target)."""
    _, probs = softmax_xent(logits, target)
    grad = probs.copy()
    grad[target] -= 1.0
    return grad


# -- finite-difference checking -------------------------------------------------


def grad_check(
    fn: Callable[..., float],
    inputs: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between central differences and analytic gradients.

    Every scalar of every input is perturbed by ±eps. The relative error
    denominator is max(1, |analytic|, |numeric|), so tiny gradients are
    compared absolutely.
    """
    if len(inputs) != len(analytic):
        raise ShapeError("one analytic gradient per input is required")
    worst = 0.0
    work = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    for idx, (arr, grad) in enumerate(zip(work, analytic)):
        if grad.shape != arr.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} != input shape {arr.shape} at {idx}"
            )
        flat = arr.reshape(-1)
        gflat = np.asarray(grad, dtype=np.float64).reshape(-1)
        for j in range(flat.shape[0]):
            orig = flat[j]
            flat[j] = orig + eps
            fp = fn(*work)
            flat[j] = orig - eps
            fm = fn(*work)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(
                    f"non-finite value while perturbing input {idx} component {j}"
                )
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(1.0, abs(gflat[j]), abs(numeric))
            worst = max(worst, abs(numeric - gflat[j]) / denom)
    return worst

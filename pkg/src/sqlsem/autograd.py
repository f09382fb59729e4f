"""Minimal reverse-mode automatic differentiation over 2-D float64 tensors.

Each op builds a closure that scatters the output gradient back to its
inputs; ``Tensor.backward`` runs the closures in reverse topological order.
The suite is exactly what the encoder, fusion head and trainer need. Every op
validates shapes and rejects non-finite results, so numerical blowups fail
loudly at the op that produced them.
"""
from __future__ import annotations

import numpy as np

from .errors import SqlsemError


class ShapeMismatch(SqlsemError):
    """Operands have incompatible shapes for the requested op."""


class NonFiniteValue(SqlsemError):
    """An op produced (or was asked to check) a NaN or infinity."""


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_matrix(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        if self.shape != (1, 1):
            raise ShapeMismatch("backward() starts from a scalar (1x1) tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                stack.append((parent, False))
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteValue("op produced a non-finite value")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._prev = tuple(p for p in parents if p.requires_grad)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a 1-row bias broadcast over a's rows."""
    broadcast = b.shape == (1, a.shape[1]) and a.shape[0] != 1
    if a.shape != b.shape and not broadcast:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    out = _result(a.data + b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad)
        if b.requires_grad:
            b._accumulate(out.grad.sum(axis=0, keepdims=True) if broadcast else out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def relu(x: Tensor) -> Tensor:
    out = _result(np.maximum(x.data, 0.0), (x,))

    def backward():
        x._accumulate(out.grad * (x.data > 0.0))

    out._backward = backward if out.requires_grad else None
    return out


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    out = _result(np.where(x.data > 0.0, x.data, alpha * x.data), (x,))

    def backward():
        x._accumulate(out.grad * np.where(x.data > 0.0, 1.0, alpha))

    out._backward = backward if out.requires_grad else None
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _result(1.0 / (1.0 + np.exp(-x.data)), (x,))

    def backward():
        x._accumulate(out.grad * out.data * (1.0 - out.data))

    out._backward = backward if out.requires_grad else None
    return out


def mean_rows(x: Tensor) -> Tensor:
    out = _result(x.data.mean(axis=0, keepdims=True), (x,))

    def backward():
        x._accumulate(np.repeat(out.grad, x.shape[0], axis=0) / x.shape[0])

    out._backward = backward if out.requires_grad else None
    return out


def sum_rows(x: Tensor) -> Tensor:
    out = _result(x.data.sum(axis=0, keepdims=True), (x,))

    def backward():
        x._accumulate(np.repeat(out.grad, x.shape[0], axis=0))

    out._backward = backward if out.requires_grad else None
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat_cols of nothing")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeMismatch("concat_cols row counts differ")
    out = _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts))

    def backward():
        offset = 0
        for p in parts:
            width = p.shape[1]
            if p.requires_grad:
                p._accumulate(out.grad[:, offset:offset + width])
            offset += width

    out._backward = backward if out.requires_grad else None
    return out


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat_rows of nothing")
    cols = parts[0].shape[1]
    if any(p.shape[1] != cols for p in parts):
        raise ShapeMismatch("concat_rows column counts differ")
    out = _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts))

    def backward():
        offset = 0
        for p in parts:
            height = p.shape[0]
            if p.requires_grad:
                p._accumulate(out.grad[offset:offset + height, :])
            offset += height

    out._backward = backward if out.requires_grad else None
    return out


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"hadamard {a.shape} * {b.shape}")
    out = _result(a.data * b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * b.data)
        if b.requires_grad:
            b._accumulate(out.grad * a.data)

    out._backward = backward if out.requires_grad else None
    return out


def row(x: Tensor, index: int) -> Tensor:
    if not 0 <= index < x.shape[0]:
        raise ShapeMismatch(f"row {index} out of range for {x.shape}")
    out = _result(x.data[index:index + 1, :].copy(), (x,))

    def backward():
        grad = np.zeros_like(x.data)
        grad[index, :] = out.grad[0, :]
        x._accumulate(grad)

    out._backward = backward if out.requires_grad else None
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the mask is drawn once and reused in backward."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = _result(x.data * mask, (x,))

    def backward():
        x._accumulate(out.grad * mask)

    out._backward = backward if out.requires_grad else None
    return out


def masked_softmax_rows(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax over True mask entries; all-False rows become zeros."""
    if scores.shape != mask.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} != scores {scores.shape}")
    data = np.where(mask, scores.data, -np.inf)
    row_max = np.max(data, axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    shifted = data - row_max
    exps = np.where(mask, np.exp(shifted), 0.0)
    denom = exps.sum(axis=1, keepdims=True)
    weights = np.divide(exps, denom, out=np.zeros_like(exps), where=denom > 0.0)
    out = _result(weights, (scores,))

    def backward():
        # d softmax: s * (g - sum(g * s)) per row, restricted to the mask
        g = out.grad
        dot = (g * weights).sum(axis=1, keepdims=True)
        scores._accumulate(np.where(mask, weights * (g - dot), 0.0))

    out._backward = backward if out.requires_grad else None
    return out


BCE_CLAMP = 1e-7


def bce_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; predictions clamp to [1e-7, 1 - 1e-7]."""
    y = np.asarray(target, dtype=np.float64).reshape(-1, 1)
    if pred.shape != y.shape:
        raise ShapeMismatch(f"bce_loss pred {pred.shape} vs target {y.shape}")
    clamped = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    losses = -(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped))
    out = _result(np.array([[losses.mean()]]), (pred,))

    def backward():
        inside = (pred.data > BCE_CLAMP) & (pred.data < 1.0 - BCE_CLAMP)
        grad = (clamped - y) / (clamped * (1.0 - clamped)) / y.shape[0]
        pred._accumulate(out.grad[0, 0] * np.where(inside, grad, 0.0))

    out._backward = backward if out.requires_grad else None
    return out


class ParamStore:
    """Ordered name -> Tensor registry for trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        tensor = Tensor(data, requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, data in snapshot.items():
            self._params[name].data = data.copy()

    def n_entries(self) -> int:
        return sum(t.data.size for t in self._params.values())


def finite_diff_check(f, params: ParamStore, eps: float = 1e-5) -> float:
    """Max relative error between autograd and central-difference gradients.

    ``f(params) -> Tensor`` must be a deterministic scalar function. The
    relative error for one entry is |a - n| / max(1, |a|, |n|).
    """
    params.zero_grad()
    loss = f(params)
    loss.backward()
    grads = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
             for name, t in params.items()}
    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        grad_flat = grads[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = f(params).item()
            flat[i] = saved - eps
            down = f(params).item()
            flat[i] = saved
            numeric = (up - down) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise NonFiniteValue(f"non-finite finite difference at {name}[{i}]")
            analytic = grad_flat[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst

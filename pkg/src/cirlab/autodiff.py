"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to differentiate a small MLP plus the cross-entropy,
distillation and feature-drift losses: add/mul with broadcasting, matmul,
relu, exp, log-softmax, indexing, and full reductions.  Everything is
float64; graphs are built per training step and discarded.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def backward():
            self._accum(out.grad)
            other._accum(out.grad)

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def backward():
            self._accum(-out.grad)

        out._backward = backward
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def backward():
            self._accum(out.grad * other.data)
            other._accum(out.grad * self.data)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division not supported; divide by a scalar")
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul is defined for 2-D tensors only")
        out = Tensor(self.data @ other.data, (self, other))

        def backward():
            self._accum(out.grad @ other.data.T)
            other._accum(self.data.T @ out.grad)

        out._backward = backward
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,))

        def backward():
            g = np.zeros_like(self.data)
            fancy = isinstance(idx, np.ndarray) or (
                isinstance(idx, tuple) and any(isinstance(i, np.ndarray) for i in idx)
            )
            if fancy:
                np.add.at(g, idx, out.grad)  # robust to repeated indices
            else:
                g[idx] += out.grad
            self._accum(g)

        out._backward = backward
        return out

    # -- nonlinearities & reductions ----------------------------------------

    def relu(self):
        # subgradient at exactly 0 is taken as 0
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), (self,))

        def backward():
            self._accum(out.grad * mask)

        out._backward = backward
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), (self,))

        def backward():
            self._accum(out.grad * out.data)

        out._backward = backward
        return out

    def log_softmax(self):
        """Row-wise log-softmax over the last axis, max-shifted for stability."""
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        out = Tensor(shifted - lse, (self,))

        def backward():
            soft = np.exp(out.data)
            self._accum(out.grad - soft * out.grad.sum(axis=-1, keepdims=True))

        out._backward = backward
        return out

    def sum(self):
        out = Tensor(self.data.sum(), (self,))

        def backward():
            self._accum(np.broadcast_to(out.grad, self.data.shape))

        out._backward = backward
        return out

    def mean(self):
        return self.sum() / self.data.size

    # -- graph traversal ------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar through the whole graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)

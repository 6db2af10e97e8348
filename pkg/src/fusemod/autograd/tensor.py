"""Reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure; ops in ops.py
build the graph. backward() topologically sorts the graph and accumulates
gradients without in-place writes, so shared gradient arrays are never
mutated behind a node's back.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction (forward only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Populate .grad on every tensor this scalar depends on."""
        if self.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward_fn(node.grad)):
                if g is None:
                    continue
                # out-of-place accumulation keeps aliased grads safe
                parent.grad = g if parent.grad is None else parent.grad + g


def result(data, parents, backward_fn):
    """Op output: carries the graph only when grads are on and needed."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)

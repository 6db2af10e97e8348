"""Central finite-difference verification of the backward passes."""

from __future__ import annotations

import numpy as np

from .tensor import no_grad, result

# coordinates where both gradients are below this are ignored (pure noise)
_DEAD_ZONE = 1e-7


def grad_check(fn, inputs, h=1e-5, max_samples=200, seed=0) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn maps the list of input Tensors to a Tensor of any shape; the output is
    probed with a fixed random covector, so what is compared is the
    Jacobian-vector product. fn must be deterministic and side-effect free
    (batch norm callers pass update_running=False). Inputs larger than
    max_samples coordinates are subsampled deterministically per seed.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    out = fn(inputs)
    probe = rng.standard_normal(out.data.shape)
    score = result((out.data * probe).sum(), (out,), lambda go: (go * probe,))
    score.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def evaluate():
        with no_grad():
            return float((fn(inputs).data * probe).sum())

    worst = 0.0
    for t, grads in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        grads = grads.reshape(-1)
        if flat.size <= max_samples:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_samples, replace=False)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + h
            hi = evaluate()
            flat[k] = orig - h
            lo = evaluate()
            flat[k] = orig
            numeric = (hi - lo) / (2.0 * h)
            scale = max(abs(numeric), abs(grads[k]))
            if scale < _DEAD_ZONE:
                continue
            worst = max(worst, abs(numeric - grads[k]) / scale)
    return worst

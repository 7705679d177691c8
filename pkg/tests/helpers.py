"""Shared test oracles.

The gradient checker is deliberately independent of the autodiff engine:
it re-runs the forward computation with central finite differences, element
by element, and compares against whatever ``Graph.backward`` accumulated.
Run it under ``precision("double")`` — float32 rounding would swamp the
comparison.
"""

from __future__ import annotations

import numpy as np

from frpose.tensor import Graph, Tensor


def make_tensor(rng, *shape, requires_grad=True, scale=1.0, offset=0.0):
    data = rng.standard_normal(shape) * scale + offset
    return Tensor(data, requires_grad=requires_grad)


def numeric_gradient(scalar_fn, array: np.ndarray, delta: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``scalar_fn()`` w.r.t. ``array`` in place."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        orig = array[ix]
        array[ix] = orig + delta
        f_plus = scalar_fn()
        array[ix] = orig - delta
        f_minus = scalar_fn()
        array[ix] = orig
        grad[ix] = (f_plus - f_minus) / (2.0 * delta)
    return grad


def gradcheck(fn, inputs, rng, delta: float = 1e-6, rtol: float = 1e-4,
              atol: float = 1e-7) -> float:
    """Check d<fn(inputs), cotangent>/d(input) for every input.

    ``fn`` maps the given tensors to one output tensor.  A fixed random
    cotangent seeds the backward pass; the same inner product is then
    differenced numerically.  Returns the worst relative error seen.
    """
    for t in inputs:
        t.zero_grad()
    with Graph() as g:
        out = fn(*inputs)
        cot = rng.standard_normal(out.shape)
        g.backward(out, seed=cot)
    analytic = []
    for t in inputs:
        assert t.grad is not None, "input never received a gradient"
        analytic.append(t.grad.copy())

    def scalar():
        return float((fn(*inputs).data * cot).sum())

    worst = 0.0
    for t, a in zip(inputs, analytic):
        n = numeric_gradient(scalar, t.data, delta=delta)
        denom = max(np.abs(n).max(), np.abs(a).max(), 1e-8)
        worst = max(worst, float(np.abs(a - n).max() / denom))
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)
    return worst

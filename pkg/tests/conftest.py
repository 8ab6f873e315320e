"""Shared test helpers: seeded generators and a gradient-check harness."""

from __future__ import annotations

import numpy as np
import pytest

from vapsr.autograd import (
    GradTape,
    Value,
    finite_difference_gradient,
    relative_error,
)
from vapsr.tensor import Tensor


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def gradcheck_op(apply_op, x: np.ndarray, params: dict[str, np.ndarray],
                 seed: int = 0, step: float = 1e-4, tol: float = 1e-4) -> dict[str, float]:
    """Check analytic gradients of one recorded op against central differences.

    ``apply_op(tape, x_value, params)`` runs the op (or a small composite)
    and returns the output Value. The scalar objective is the inner
    product of the output with a fixed random array, which exercises a
    dense upstream gradient. Returns the relative error per checked array
    and asserts each is within ``tol``.
    """
    gen = rng(seed + 7919)

    def forward_scalar(x_arr, params_arrs, probe):
        out = apply_op(None, Value(Tensor(x_arr, copy=False), None), params_arrs)
        return float((out.tensor.data * probe).sum())

    probe_shape = apply_op(None, Value(Tensor(x, copy=False), None), params).tensor.shape
    probe = gen.normal(size=probe_shape)

    tape = GradTape()
    v = tape.source(Tensor(x, copy=False))
    out = apply_op(tape, v, params)
    tape.output = out
    param_grads, input_grad = tape.backward(Tensor(probe, copy=False))

    errors = {}
    fd_x = finite_difference_gradient(
        lambda arr: forward_scalar(arr, params, probe), x, step=step)
    errors["<input>"] = relative_error(input_grad.data, fd_x)
    for name in params:
        def f(arr, name=name):
            trial = dict(params)
            trial[name] = arr
            return forward_scalar(x, trial, probe)
        fd = finite_difference_gradient(f, params[name], step=step)
        assert name in param_grads, f"no gradient recorded for {name}"
        errors[name] = relative_error(param_grads[name], fd)

    for name, err in errors.items():
        assert err <= tol, f"gradient mismatch for {name}: rel err {err:.3e} > {tol}"
    return errors


@pytest.fixture
def tmp_png(tmp_path):
    """Factory writing a (3, h, w) float image to a PNG and returning the path."""
    from vapsr.png_io import save_image

    def _write(name: str, img: np.ndarray):
        path = tmp_path / name
        save_image(path, img)
        return path

    return _write

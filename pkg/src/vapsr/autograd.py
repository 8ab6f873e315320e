"""Reverse-mode differentiation for every layer operation, plus training.

The forward pass of a network optionally records onto a :class:`GradTape`.
Each recorded entry caches the forward inputs it needs and knows how to
turn the gradient at its output into gradients at its inputs and
parameters. Replaying the tape in exact reverse order therefore yields
the gradient of a scalar loss with respect to every parameter and to the
network input.

Backward arithmetic runs in float64 end to end and is rounded to the
forward dtype only when gradients are handed back, mirroring the
accumulate-wide/round-once contract of the forward operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from . import nn_ops, tensor as tensor_ops
from .errors import ShapeError, VapsrError
from .nn_ops import ConvSpec, PixelNormParams
from .tensor import ACCUM_DTYPE, Tensor, _wrap, pad_zero

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Param:
    """A named parameter array, as stored in a network's parameter dict."""

    name: str
    array: np.ndarray


class Value:
    """A tensor flowing through a (possibly recorded) forward pass."""

    __slots__ = ("tensor", "vid")

    def __init__(self, tensor: Tensor, vid: int | None):
        self.tensor = tensor
        self.vid = vid


class GradTape:
    """Ordered record of one forward pass.

    Entries are replayed strictly in reverse recording order. A tape can
    be consumed by :meth:`backward` exactly once; differentiating again
    requires a fresh forward pass.
    """

    def __init__(self):
        self._entries: list[tuple[str, int, Callable]] = []
        self._num_values = 0
        self.input: Value | None = None
        self.output: Value | None = None
        self._consumed = False

    def _new_value(self, tensor: Tensor) -> Value:
        vid = self._num_values
        self._num_values += 1
        return Value(tensor, vid)

    def source(self, x: Tensor) -> Value:
        """Register the network input as the root of the recording."""
        if self._consumed:
            raise VapsrError("tape already consumed; record a new forward pass")
        if self.input is not None:
            raise VapsrError("tape already holds a recorded forward pass")
        v = self._new_value(x)
        self.input = v
        return v

    def record(self, layer_id: str, out: Tensor, backward: Callable) -> Value:
        """Append one entry; ``backward(grad_out)`` must return
        ``(input_grads, param_grads)`` with input grads keyed by value id."""
        v = self._new_value(out)
        self._entries.append((layer_id, v.vid, backward))
        return v

    def backward(self, loss_grad: Tensor) -> tuple[dict[str, np.ndarray], Tensor]:
        """Chain-rule walk from the recorded output back to the input.

        Returns the gradient for every parameter touched by the forward
        pass and the gradient with respect to the network input.
        """
        if self._consumed:
            raise VapsrError("tape already consumed; re-run the forward pass first")
        if self.output is None or self.input is None:
            raise VapsrError("tape holds no completed forward pass")
        if loss_grad.shape != self.output.tensor.shape:
            raise ShapeError(
                f"loss gradient shape {loss_grad.shape} != output {self.output.tensor.shape}"
            )
        self._consumed = True

        grads: dict[int, np.ndarray] = {
            self.output.vid: loss_grad.data.astype(ACCUM_DTYPE)
        }
        param_grads: dict[str, np.ndarray] = {}
        for _layer_id, out_vid, backward in reversed(self._entries):
            g = grads.pop(out_vid, None)
            if g is None:
                continue
            input_grads, p_grads = backward(g)
            for vid, gi in input_grads:
                if vid in grads:
                    grads[vid] = grads[vid] + gi
                else:
                    grads[vid] = gi
            for name, gp in p_grads.items():
                if name in param_grads:
                    param_grads[name] = param_grads[name] + gp
                else:
                    param_grads[name] = gp

        in_dtype = self.input.tensor.dtype
        input_grad = grads.get(self.input.vid)
        if input_grad is None:
            input_grad = np.zeros(self.input.tensor.shape, dtype=ACCUM_DTYPE)
        out_params = {name: g.astype(in_dtype) for name, g in param_grads.items()}
        return out_params, _wrap(input_grad.astype(in_dtype))


# ---------------------------------------------------------------------------
# Raw backward rules (float64 in, float64 out)


def conv2d_backward(
    x: Tensor, spec: ConvSpec, weights: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Gradients of the same-padding conv w.r.t. input, weights, and bias."""
    n, _, h, w = x.shape
    k, d, g = spec.kernel, spec.dilation, spec.groups
    cg_in = spec.in_channels // g
    cg_out = spec.out_channels // g
    pad = spec.padding
    xp = pad_zero(x, pad, pad).data.astype(ACCUM_DTYPE)
    hp, wp = xp.shape[2], xp.shape[3]
    xp = xp.reshape(n, g, cg_in, hp, wp)
    wg = weights.astype(ACCUM_DTYPE).reshape(g, cg_out, cg_in, k, k)
    go = grad_out.astype(ACCUM_DTYPE).reshape(n, g, cg_out, h * w)

    grad_w = np.zeros_like(wg)
    grad_xp = np.zeros((n, g, cg_in, hp, wp), dtype=ACCUM_DTYPE)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, :, i * d : i * d + h, j * d : j * d + w]
            patch = np.ascontiguousarray(patch).reshape(n, g, cg_in, h * w)
            # dW tap: sum over batch of grad @ patch^T
            grad_w[:, :, :, i, j] += np.matmul(go, patch.transpose(0, 1, 3, 2)).sum(axis=0)
            # dX tap: W^T @ grad, scattered back into the padded buffer
            gx = np.matmul(wg[:, :, :, i, j].transpose(0, 2, 1), go)
            grad_xp[:, :, :, i * d : i * d + h, j * d : j * d + w] += gx.reshape(
                n, g, cg_in, h, w
            )

    grad_x = grad_xp.reshape(n, spec.in_channels, hp, wp)
    if pad:
        grad_x = grad_x[:, :, pad : hp - pad, pad : wp - pad]
    grad_b = go.sum(axis=(0, 3)).reshape(spec.out_channels) if spec.has_bias else None
    return np.ascontiguousarray(grad_x), grad_w.reshape(spec.weight_shape), grad_b


def gelu_backward(x: Tensor, grad_out: np.ndarray) -> np.ndarray:
    xd = x.data.astype(ACCUM_DTYPE)
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
    return grad_out * (cdf + xd * pdf)


def pixel_norm_backward(
    x: Tensor, params: PixelNormParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, gamma, and beta (population-variance form)."""
    xd = x.data.astype(ACCUM_DTYPE)
    mean, var = nn_ops.pixel_norm_moments(x)
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (xd - mean) * inv_std

    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))

    gx = grad_out * params.gamma.astype(ACCUM_DTYPE)[None, :, None, None]
    gx_mean = gx.mean(axis=1, keepdims=True)
    gxx_mean = (gx * xhat).mean(axis=1, keepdims=True)
    grad_x = inv_std * (gx - gx_mean - xhat * gxx_mean)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Recording wrappers used by the model's forward pass


def conv2d(tape: GradTape | None, x: Value, spec: ConvSpec, weight: Param,
           bias: Param | None, layer_id: str) -> Value:
    b_arr = bias.array if bias is not None else None
    y = nn_ops.conv2d(x.tensor, spec, Tensor(weight.array, copy=False), b_arr)
    if tape is None:
        return Value(y, None)

    x_saved, x_vid = x.tensor, x.vid

    def backward(grad_out):
        dx, dw, db = conv2d_backward(x_saved, spec, weight.array, grad_out)
        p_grads = {weight.name: dw}
        if bias is not None:
            p_grads[bias.name] = db
        return [(x_vid, dx)], p_grads

    return tape.record(layer_id, y, backward)


def gelu(tape: GradTape | None, x: Value, layer_id: str) -> Value:
    y = nn_ops.gelu(x.tensor)
    if tape is None:
        return Value(y, None)
    x_saved, x_vid = x.tensor, x.vid

    def backward(grad_out):
        return [(x_vid, gelu_backward(x_saved, grad_out))], {}

    return tape.record(layer_id, y, backward)


def pixel_shuffle(tape: GradTape | None, x: Value, r: int, layer_id: str) -> Value:
    y = nn_ops.pixel_shuffle(x.tensor, r)
    if tape is None:
        return Value(y, None)
    x_vid = x.vid

    def backward(grad_out):
        g = nn_ops.pixel_shuffle_inverse(_wrap(grad_out), r).data
        return [(x_vid, g)], {}

    return tape.record(layer_id, y, backward)


def pixel_norm(tape: GradTape | None, x: Value, gamma: Param, beta: Param,
               epsilon: float, layer_id: str) -> Value:
    params = PixelNormParams(gamma.array, beta.array, epsilon)
    y = nn_ops.pixel_norm(x.tensor, params)
    if tape is None:
        return Value(y, None)
    x_saved, x_vid = x.tensor, x.vid

    def backward(grad_out):
        dx, dgamma, dbeta = pixel_norm_backward(x_saved, params, grad_out)
        return [(x_vid, dx)], {gamma.name: dgamma, beta.name: dbeta}

    return tape.record(layer_id, y, backward)


def mul(tape: GradTape | None, a: Value, b: Value, layer_id: str) -> Value:
    y = tensor_ops.mul(a.tensor, b.tensor)
    if tape is None:
        return Value(y, None)
    a_saved, b_saved = a.tensor, b.tensor
    a_vid, b_vid = a.vid, b.vid

    def backward(grad_out):
        ga = grad_out * b_saved.data.astype(ACCUM_DTYPE)
        gb = grad_out * a_saved.data.astype(ACCUM_DTYPE)
        return [(a_vid, ga), (b_vid, gb)], {}

    return tape.record(layer_id, y, backward)


def add(tape: GradTape | None, a: Value, b: Value, layer_id: str) -> Value:
    y = tensor_ops.add(a.tensor, b.tensor)
    if tape is None:
        return Value(y, None)
    a_vid, b_vid = a.vid, b.vid

    def backward(grad_out):
        return [(a_vid, grad_out), (b_vid, grad_out.copy())], {}

    return tape.record(layer_id, y, backward)


# ---------------------------------------------------------------------------
# Loss, optimizer, EMA


def l1_loss(pred: Tensor, target: Tensor) -> tuple[float, Tensor]:
    """Mean absolute error and its (sub)gradient w.r.t. ``pred``.

    sign(0) is taken as 0.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(ACCUM_DTYPE) - target.data.astype(ACCUM_DTYPE)
    loss = float(np.abs(diff).mean())
    grad = (np.sign(diff) / diff.size).astype(pred.dtype)
    return loss, _wrap(grad)


@dataclass
class OptimizerState:
    """Adam moment estimates; beta2 defaults to the 0.99 setting used here."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    lr: float = 1e-3
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
        m = {k: np.zeros(p.shape, dtype=ACCUM_DTYPE) for k, p in params.items()}
        v = {k: np.zeros(p.shape, dtype=ACCUM_DTYPE) for k, p in params.items()}
        return cls(m=m, v=v, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update. Mutates ``state``, returns new params."""
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=ACCUM_DTYPE)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param {p.shape} for '{name}'")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        step = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new = (p.astype(ACCUM_DTYPE) - step).astype(p.dtype)
        new.flags.writeable = False
        out[name] = new
    return out


@dataclass
class EmaState:
    """Exponential moving average of the parameters (kept in float64).

    ``updates`` counts how many times the shadow has been folded; a
    zero-initialized shadow plus bias-corrected :meth:`materialize` yields
    the pure trajectory average (no initialization mass), exactly like
    Adam's moment debiasing.
    """

    shadow: dict[str, np.ndarray]
    decay: float = 0.999
    updates: int = 0

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray], decay: float = 0.999):
        return cls({k: p.astype(ACCUM_DTYPE) for k, p in params.items()}, decay)

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], decay: float = 0.999):
        return cls({k: np.zeros(p.shape, dtype=ACCUM_DTYPE) for k, p in params.items()}, decay)

    def materialize(self, dtype=np.float32, debias: bool = False) -> dict[str, np.ndarray]:
        scale = 1.0
        if debias and self.updates > 0:
            scale = 1.0 / (1.0 - self.decay ** self.updates)
        out = {}
        for name, s in self.shadow.items():
            arr = (s * scale).astype(dtype)
            arr.flags.writeable = False
            out[name] = arr
        return out


def ema_update(ema: EmaState, params: dict[str, np.ndarray]) -> EmaState:
    """shadow <- shadow + (param - shadow) * (1 - decay); exact at the fixed point."""
    step = 1.0 - ema.decay
    for name, p in params.items():
        s = ema.shadow[name]
        if s.shape != p.shape:
            raise ShapeError(f"EMA shadow shape {s.shape} != param {p.shape} for '{name}'")
        ema.shadow[name] = s + (p.astype(ACCUM_DTYPE) - s) * step
    ema.updates += 1
    return ema


# ---------------------------------------------------------------------------
# Finite differences


def finite_difference_gradient(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    Evaluates in the array's own dtype; pass float64 data for meaningful
    comparisons against analytic gradients.
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=ACCUM_DTYPE)
    flat = grad.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += step
        xm[i] -= step
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative difference used by the gradient checks."""
    analytic = np.asarray(analytic, dtype=ACCUM_DTYPE)
    numeric = np.asarray(numeric, dtype=ACCUM_DTYPE)
    denom = max(float(np.abs(numeric).max()), float(np.abs(analytic).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / denom


# ---------------------------------------------------------------------------
# Toy training loop


@dataclass
class TrainResult:
    """Weights and loss trace from a single-patch overfitting run."""

    params: dict[str, np.ndarray]
    ema_params: dict[str, np.ndarray]
    history: list[tuple[int, float]] = field(default_factory=list)


def make_overfit_patch(scale: int, lr_size: int, seed: int = 0) -> tuple[Tensor, Tensor]:
    """Synthesize a smooth HR patch and its bicubic-downsampled LR pair.

    The HR patch is low-frequency by construction (a seeded coarse grid
    upsampled bicubically), which a small network can memorize cleanly.
    """
    from .metrics import bicubic_resize

    hr_size = lr_size * scale
    rng = np.random.Generator(np.random.PCG64(seed))
    coarse = rng.uniform(0.1, 0.9, size=(3, max(2, hr_size // 8), max(2, hr_size // 8)))
    hr = np.clip(bicubic_resize(coarse, hr_size, hr_size), 0.0, 1.0)
    lr = np.clip(bicubic_resize(hr, lr_size, lr_size), 0.0, 1.0)
    hr_t = _wrap(hr[None].astype(np.float32))
    lr_t = _wrap(lr[None].astype(np.float32))
    return lr_t, hr_t


def train_toy(config, lr_patch: Tensor, hr_patch: Tensor, iterations: int,
              lr: float = 1e-3, seed: int = 0) -> TrainResult:
    """Overfit one LR/HR patch pair with Adam + EMA and an L1 objective.

    The HR patch must be exactly ``config.scale`` times the LR patch in
    both spatial dimensions. Returns the raw final weights, the EMA
    weights, and the per-step loss history.
    """
    from .model import build

    _, _, lh, lw = lr_patch.shape
    _, _, hh, hw = hr_patch.shape
    if (hh, hw) != (lh * config.scale, lw * config.scale):
        raise ShapeError(
            f"HR patch {hh}x{hw} is not {config.scale}x the LR patch {lh}x{lw}"
        )

    net = build(config, seed=seed)
    opt = OptimizerState.for_params(net.params, lr=lr)
    # Zero-initialized shadow with debiased readout: the EMA weights are
    # the decay-weighted average of the visited iterates, with no mass on
    # the random initialization (which would otherwise dominate short runs).
    ema = EmaState.zeros_like(net.params)
    history: list[tuple[int, float]] = []
    for step in range(1, iterations + 1):
        tape = GradTape()
        pred = net.forward(lr_patch, tape)
        loss, grad = l1_loss(pred, hr_patch)
        param_grads, _ = tape.backward(grad)
        net.set_params(adam_step(net.params, param_grads, opt))
        ema_update(ema, net.params)
        history.append((step, loss))
    if iterations == 0:
        ema_params = {k: p.copy() for k, p in net.params.items()}
        for arr in ema_params.values():
            arr.flags.writeable = False
    else:
        ema_params = ema.materialize(debias=True)
    return TrainResult(params=net.params, ema_params=ema_params, history=history)

"""Small dense tensor engine: forward/backward kernels, Adam, finite-difference checker.

Tensors are float64 numpy arrays.  Every differentiable op is a pair
``op(...) -> (out, ctx)`` / ``op_backward(ctx, dout) -> grads``; the model composes
them by hand in reverse order, so there is no tape.  Convolutions accept a single
C x H x W input or a batch B x C x H x W.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class UsageError(RuntimeError):
    pass


@dataclass
class Tensor:
    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.grad is not None and np.shape(self.grad) != self.data.shape:
            raise ShapeError(f"grad shape {np.shape(self.grad)} != data shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


# ---------------------------------------------------------------- convolution


def conv2d_cb(x, kernel, bias):
    """'Same' cross-correlation on channel-major activations (C_in, B, H, W) -> (C_out, B, H, W).

    Each output is one BLAS dot over the C_in*k*k window, ordered (channel, row, col).
    """
    cout, cin, k, _ = kernel.shape
    c, b, h, w = x.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels, kernel expects {cin}")
    cols = kernels.im2col(x, k)
    wmat = kernel.reshape(cout, cin * k * k)
    y = wmat @ cols
    y += bias[:, None]
    return y.reshape(cout, b, h, w), ("conv2d", cols, wmat, x.shape, k)


def conv2d_cb_backward(ctx, dy, need_input_grad: bool = True):
    """Returns (dx or None, dkernel, dbias) for `conv2d_cb`."""
    if not ctx or ctx[0] != "conv2d":
        raise UsageError("conv2d_backward needs the context returned by conv2d")
    _, cols, wmat, xshape, k = ctx
    cout = wmat.shape[0]
    dym = np.ascontiguousarray(dy).reshape(cout, -1)
    dkernel = (dym @ cols.T).reshape(cout, xshape[0], k, k)
    dbias = dym.sum(axis=1)
    dx = kernels.col2im(wmat.T @ dym, xshape, k) if need_input_grad else None
    return dx, dkernel, dbias


def conv2d(x, kernel, bias, padding: int | None = None):
    """'Same' cross-correlation plus per-channel bias.

    x: (C_in, H, W) or (B, C_in, H, W); kernel: (C_out, C_in, k, k); bias: (C_out,).
    Returns (y, ctx) with y shaped like x but with C_out channels.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be (C_out, C_in, k, k), got {kernel.shape}")
    cout, cin, k, k2 = kernel.shape
    if k != k2 or k not in (1, 3):
        raise ShapeError(f"kernel must be 1x1 or 3x3, got {k}x{k2}")
    if padding is not None and padding != (k - 1) // 2:
        raise ShapeError(f"only 'same' padding {(k - 1) // 2} is supported for k={k}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if x.ndim not in (3, 4) or x.shape[-3] != cin:
        raise ShapeError(f"input {x.shape} does not have {cin} channels")
    xc = x[:, None] if single else x.transpose(1, 0, 2, 3)
    y, inner = conv2d_cb(np.ascontiguousarray(xc), kernel, bias)
    y = y[:, 0] if single else np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    return y, ("conv2d_public", inner, single)


def conv2d_backward(ctx, dy):
    """Returns (dx, dkernel, dbias) for `conv2d`."""
    if not ctx or ctx[0] != "conv2d_public":
        raise UsageError("conv2d_backward needs the context returned by conv2d")
    _, inner, single = ctx
    dy = np.asarray(dy, dtype=np.float64)
    dyc = dy[:, None] if single else dy.transpose(1, 0, 2, 3)
    dx, dk, db = conv2d_cb_backward(inner, dyc)
    dx = dx[:, 0] if single else np.ascontiguousarray(dx.transpose(1, 0, 2, 3))
    return dx, dk, db


# ---------------------------------------------------------------- dense ops


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b, ("matmul", a, b)


def matmul_backward(ctx, dy):
    """dA = dY B^T, dB = A^T dY (batched over leading axes)."""
    if not ctx or ctx[0] != "matmul":
        raise UsageError("matmul_backward needs the context returned by matmul")
    _, a, b = ctx
    return dy @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ dy


def softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise NumericError("softmax input contains NaN")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return y, ("softmax", y)


def softmax_rows_backward(ctx, dy):
    if not ctx or ctx[0] != "softmax":
        raise UsageError("softmax_rows_backward needs the context returned by softmax_rows")
    y = ctx[1]
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0), ("relu", x > 0.0)


def relu_backward(ctx, dy):
    if not ctx or ctx[0] != "relu":
        raise UsageError("relu_backward needs the context returned by relu")
    return np.where(ctx[1], dy, 0.0)


def reshape(x, new_shape):
    x = np.asarray(x)
    if int(np.prod(new_shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {tuple(new_shape)}")
    return x.reshape(new_shape), ("reshape", x.shape)


def reshape_backward(ctx, dy):
    if not ctx or ctx[0] != "reshape":
        raise UsageError("reshape_backward needs the context returned by reshape")
    return np.reshape(dy, ctx[1])


def add(a, b):
    return np.add(a, b), ("add",)


def add_backward(ctx, dy):
    return dy, dy


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """In-place Adam update with bias correction; increments ``state.step``."""
    for name, g in grads.items():
        if params[name].shape != np.shape(g):
            raise ShapeError(f"gradient for {name!r} has shape {np.shape(g)}, expected {params[name].shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- gradient check


def numeric_grad(f, theta: np.ndarray, step: float = 1e-4, index=None) -> np.ndarray:
    """Central differences of scalar f at theta (modified in place, then restored).

    ``index`` limits the probe to selected flat positions; others stay NaN.
    """
    flat = theta.reshape(-1)
    out = np.full(flat.size, np.nan)
    probe = range(flat.size) if index is None else index
    for i in probe:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("objective is not finite")
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(theta.shape)


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(f, params, step: float = 1e-4, grad=None, index=None) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``f(params)`` returns either a scalar (then ``grad(params)`` supplies the analytic
    gradient) or a ``(value, gradient)`` pair.  ``params`` is a float array that is
    perturbed in place and restored.
    """
    params = np.asarray(params, dtype=np.float64)
    if grad is None:
        value, analytic = f(params)

        def scalar():
            return f(params)[0]

    else:
        value, analytic = f(params), grad(params)

        def scalar():
            return f(params)

    if not np.isfinite(value):
        raise NumericError("objective is not finite")
    numeric = numeric_grad(scalar, params, step, index=index)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(params.shape)
    if index is not None:
        sel = np.zeros(params.size, dtype=bool)
        sel[list(index)] = True
        return float(relative_error(analytic.reshape(-1)[sel], numeric.reshape(-1)[sel]).max())
    return float(relative_error(analytic, numeric).max(initial=0.0))

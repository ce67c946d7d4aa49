"""Dense-tensor numeric core with reverse-mode differentiation.

Everything downstream (codec, separator, losses) is built from the
primitives in this module.  Storage is contiguous row-major float64
numpy; gradients are recorded on an explicit Wengert-list ``Tape`` so a
single reversed sweep visits every recorded op exactly once.

Any op that produces a NaN/Inf raises immediately instead of letting a
diverging run limp along silently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Parameter",
    "AutodiffError",
    "NumericError",
    "DimensionError",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "prelu",
    "sigmoid",
    "sqrt",
    "square",
    "cos",
    "sin",
    "log",
    "hypot",
    "atan2",
    "sum_",
    "mean",
    "concat",
    "reshape",
    "narrow",
    "conv1d",
    "conv_transpose1d",
    "normalize",
    "BatchNormState",
    "adam_step",
]


class AutodiffError(Exception):
    """Base error of the numeric core."""


class NumericError(AutodiffError):
    """NaN/Inf/zero-division produced by an op."""


class DimensionError(AutodiffError):
    """Operand shapes do not conform."""


class Tensor:
    """Dense real array; contiguous row-major float64."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; constants are wrapped as non-grad tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class _Record:
    """One executed primitive: output node, input nodes, pullback."""

    __slots__ = ("output", "inputs", "pullback")

    def __init__(self, output, inputs, pullback):
        self.output = output
        self.inputs = inputs
        self.pullback = pullback

    def run(self):
        g = self.output.grad
        if g is None:
            return
        for t, gt in zip(self.inputs, self.pullback(g)):
            if gt is None or not t.requires_grad:
                continue
            if not np.isfinite(gt).all():
                raise NumericError("non-finite gradient produced during backward")
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += gt


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives, in execution (topological) order.

    Use as a context manager around the forward computation; ops are only
    recorded while a tape is active and at least one input requires grad.
    ``backward`` sweeps the list once in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.visited = 0

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor):
        """Populate ``.grad`` on every requires_grad tensor reachable from loss."""
        if loss.size != 1:
            raise AutodiffError(f"backward requires a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        self.visited = 0
        for rec in reversed(self.records):
            rec.run()
            self.visited += 1


def _record(output: Tensor, inputs, pullback):
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        _TAPE_STACK[-1].records.append(_Record(output, inputs, pullback))
    return output


def _finite(arr, op: str):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite result produced by {op}")
    return arr


def _compute(op: str, fn):
    # overflow raises NumericError via the finite check; mute numpy's warning
    with np.errstate(all="ignore"):
        return _finite(fn(), op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops (numpy broadcasting; gradients summed over broadcast axes)
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(_compute("add", lambda: a.data + b.data))
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(_compute("sub", lambda: a.data - b.data))
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(_compute("mul", lambda: a.data * b.data))

    def pullback(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), pullback)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    zero = b.data == 0.0
    if zero.any():
        where = np.argwhere(zero)[0]
        raise NumericError(f"division by exact zero at divisor index {tuple(int(i) for i in where)}")
    out = Tensor(_compute("div", lambda: a.data / b.data))

    def pullback(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), pullback)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def prelu(a: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with per-channel slope; alpha broadcasts against ``a``."""
    alpha = _as_tensor(alpha)
    pos = a.data > 0.0
    out = Tensor(np.where(pos, a.data, alpha.data * a.data))

    def pullback(g):
        ga = np.where(pos, g, g * np.broadcast_to(alpha.data, a.shape))
        galpha = _unbroadcast(np.where(pos, 0.0, g * a.data), alpha.shape)
        return ga, galpha

    return _record(out, (a, alpha), pullback)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(_finite(y, "sigmoid"))
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def sqrt(a: Tensor) -> Tensor:
    y = _compute("sqrt", lambda: np.sqrt(a.data))
    out = Tensor(y)

    def pullback(g):
        if (y == 0.0).any():
            raise NumericError("sqrt gradient undefined at zero")
        return (g * 0.5 / y,)

    return _record(out, (a,), pullback)


def square(a: Tensor) -> Tensor:
    out = Tensor(_compute("square", lambda: a.data * a.data))
    return _record(out, (a,), lambda g: (g * 2.0 * a.data,))


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.data))
    return _record(out, (a,), lambda g: (-g * np.sin(a.data),))


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.data))
    return _record(out, (a,), lambda g: (g * np.cos(a.data),))


def log(a: Tensor) -> Tensor:
    out = Tensor(_compute("log", lambda: np.log(a.data)))
    return _record(out, (a,), lambda g: (g / a.data,))


def hypot(re: Tensor, im: Tensor) -> Tensor:
    """Elementwise sqrt(re^2 + im^2) with the norm convention grad = 0 at 0."""
    y = _compute("hypot", lambda: np.hypot(re.data, im.data))
    out = Tensor(y)
    safe = np.where(y == 0.0, 1.0, y)

    def pullback(g):
        return _unbroadcast(g * re.data / safe, re.shape), _unbroadcast(g * im.data / safe, im.shape)

    return _record(out, (re, im), pullback)


def atan2(im: Tensor, re: Tensor) -> Tensor:
    """Four-quadrant arctangent, argument order (im, re); atan2(0,0) = 0.

    The gradient at the origin is undefined; it is taken as 0 there so
    silent bins do not poison a backward pass.
    """
    out = Tensor(np.arctan2(im.data, re.data))
    denom = im.data * im.data + re.data * re.data
    safe = np.where(denom == 0.0, 1.0, denom)
    origin = denom == 0.0

    def pullback(g):
        g_im = np.where(origin, 0.0, g * re.data / safe)
        g_re = np.where(origin, 0.0, -g * im.data / safe)
        return _unbroadcast(g_im, im.shape), _unbroadcast(g_re, re.shape)

    return _record(out, (im, re), pullback)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(_finite(a.data.sum(axis=axis, keepdims=keepdims), "sum"))

    def pullback(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _record(out, (a,), pullback)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    out = Tensor(_finite(a.data.mean(axis=axis, keepdims=keepdims), "mean"))

    def pullback(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / n, a.shape).copy(),)

    return _record(out, (a,), pullback)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), pullback)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis (backward scatters into zeros)."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.data[index])

    def pullback(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(out, (a,), pullback)


# ---------------------------------------------------------------------------
# convolution primitives
# ---------------------------------------------------------------------------


def _window_view(x: np.ndarray, t_out: int, kernel: int, stride: int, dilation: int):
    """Strided [C, t_out, kernel] view over a padded [C, T] array."""
    c, t = x.shape
    s0, s1 = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(c, t_out, kernel), strides=(s0, stride * s1, dilation * s1), writeable=False
    )


def conv1d(
    x: Tensor,
    kernels: Tensor,
    stride: int = 1,
    dilation: int = 1,
    pad_left: int = 0,
    pad_right: int = 0,
    groups: int = 1,
) -> Tensor:
    """Strided/dilated 1-D convolution (cross-correlation form).

    x: [C_in, T]; kernels: [C_out, C_in/groups, K]; zero padding.
    out[c, t] = sum_ci sum_k kernels[c, ci, k] * padded[ci, t*stride + k*dilation].
    groups is limited to 1 (dense) or C_in (depthwise).
    """
    if stride < 1 or dilation < 1:
        raise DimensionError("stride and dilation must be >= 1")
    c_in, t_in = x.shape
    c_out, ck, k = kernels.shape
    if groups not in (1, c_in):
        raise DimensionError(f"groups must be 1 or C_in={c_in}, got {groups}")
    if ck * groups != c_in:
        raise DimensionError(
            f"kernel expects {ck * groups} input channels (groups={groups}), input has {c_in}"
        )
    depthwise = groups > 1
    if depthwise and c_out != c_in:
        raise DimensionError("depthwise conv requires C_out == C_in")
    span = dilation * (k - 1) + 1
    t_out = (t_in + pad_left + pad_right - span) // stride + 1
    if t_out < 1:
        raise DimensionError(f"input length {t_in} too short for kernel span {span}")

    xp = np.pad(x.data, ((0, 0), (pad_left, pad_right)))
    win = _window_view(xp, t_out, k, stride, dilation)

    if not depthwise:
        # [C_out, C_in*K] @ [C_in*K, t_out]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(c_in * k, t_out)
        y = kernels.data.reshape(c_out, c_in * k) @ cols
    else:
        y = np.einsum("ctk,ck->ct", win, kernels.data[:, 0, :])
    out = Tensor(_finite(y, "conv1d"))

    def pullback(g):
        if not depthwise:
            gw = (g @ cols.T).reshape(c_out, c_in, k)
            gcols = kernels.data.reshape(c_out, c_in * k).T @ g
            gwin = gcols.reshape(c_in, k, t_out)
        else:
            gw = np.einsum("ctk,ct->ck", win, g)[:, None, :]
            gwin = g[:, None, :] * kernels.data[:, 0, :, None]  # [C, K, t_out]
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, kk * dilation : kk * dilation + t_out * stride : stride] += gwin[:, kk, :]
        gx = gxp[:, pad_left : pad_left + t_in]
        return np.ascontiguousarray(gx), gw

    return _record(out, (x, kernels), pullback)


def conv_transpose1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Adjoint of ``conv1d`` (same kernel array, [C_in, C_out, K] layout).

    x: [C_in, T] -> [C_out, (T-1)*stride + K] via scatter-add of kernel
    copies (overlap-add).
    """
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    c_in, t_in = x.shape
    ck, c_out, k = kernels.shape
    if ck != c_in:
        raise DimensionError(f"kernel expects {ck} input channels, input has {c_in}")
    t_out = (t_in - 1) * stride + k

    # contrib[c_out, k, t] = sum_ci kernels[ci, c_out, k] * x[ci, t]
    contrib = np.tensordot(kernels.data, x.data, axes=([0], [0]))  # [C_out, K, T]
    y = np.zeros((c_out, t_out))
    for kk in range(k):
        y[:, kk : kk + t_in * stride : stride] += contrib[:, kk, :]
    out = Tensor(_finite(y, "conv_transpose1d"))

    def pullback(g):
        win = _window_view(np.ascontiguousarray(g), t_in, k, stride, 1)  # [C_out, T, K]
        gx = np.einsum("iok,otk->it", kernels.data, win)
        gw = np.einsum("it,otk->iok", x.data, win)
        return np.ascontiguousarray(gx), gw

    return _record(out, (x, kernels), pullback)


# ---------------------------------------------------------------------------
# normalization (composed from primitives so the backward comes for free)
# ---------------------------------------------------------------------------

NORM_EPS = 1e-5


class BatchNormState:
    """Running statistics for BN (momentum 0.1, torch convention)."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum


def normalize(
    x: Tensor,
    kind: str,
    scale: Tensor,
    shift: Tensor,
    training: bool = True,
    state: BatchNormState | None = None,
) -> Tensor:
    """Normalize a [C, T] tensor then apply a per-channel affine.

    kind: "gLN" (global over c,t), "cLN" (per time step over channels),
    or "BN" (per channel over time; uses/updates ``state`` running stats).
    """
    c, _t = x.shape
    scale2 = reshape(scale, (c, 1))
    shift2 = reshape(shift, (c, 1))
    if kind == "gLN":
        m = mean(x, axis=None, keepdims=True)
        centered = sub(x, m)
        var = mean(square(centered), axis=None, keepdims=True)
        xn = div(centered, sqrt(add(var, _as_tensor(NORM_EPS))))
    elif kind == "cLN":
        m = mean(x, axis=0, keepdims=True)
        centered = sub(x, m)
        var = mean(square(centered), axis=0, keepdims=True)
        xn = div(centered, sqrt(add(var, _as_tensor(NORM_EPS))))
    elif kind == "BN":
        if state is None:
            raise AutodiffError("BN requires a BatchNormState")
        if training:
            m = mean(x, axis=1, keepdims=True)
            centered = sub(x, m)
            var = mean(square(centered), axis=1, keepdims=True)
            xn = div(centered, sqrt(add(var, _as_tensor(NORM_EPS))))
            n = x.shape[1]
            unbiased = var.data[:, 0] * n / max(n - 1, 1)
            mom = state.momentum
            state.running_mean = (1 - mom) * state.running_mean + mom * m.data[:, 0]
            state.running_var = (1 - mom) * state.running_var + mom * unbiased
        else:
            rm = _as_tensor(state.running_mean.reshape(c, 1))
            rv = _as_tensor(state.running_var.reshape(c, 1))
            xn = div(sub(x, rm), sqrt(add(rv, _as_tensor(NORM_EPS))))
    else:
        raise AutodiffError(f"unknown normalization kind {kind!r}")
    return add(mul(xn, scale2), shift2)


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


class Parameter:
    """Trainable tensor plus Adam state (two moments, step counter)."""

    def __init__(self, data):
        self.value = data if isinstance(data, Tensor) else Tensor(data)
        self.value.requires_grad = True
        self.m = np.zeros_like(self.value.data)
        self.v = np.zeros_like(self.value.data)
        self.step = 0

    @property
    def grad(self):
        return self.value.grad

    def zero_grad(self):
        self.value.grad = None

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, step={self.step})"


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place bias-corrected Adam update; missing grads count as zero."""
    for p in params:
        g = p.value.grad
        if g is None:
            g = np.zeros_like(p.value.data)
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1**p.step)
        v_hat = p.v / (1.0 - beta2**p.step)
        p.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)

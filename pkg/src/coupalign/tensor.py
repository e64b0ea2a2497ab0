"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy buffers (float32 for training, float64 for gradient
checks). Every differentiable op records a backward rule onto an explicit
tape; ``backward`` replays the tape in exact reverse order and then consumes
it. A tape belongs to a single logical worker; running ops with no active
tape evaluates forward-only (inference mode).
"""

from __future__ import annotations

import warnings

import numpy as np

EPS_NORM = 1e-12   # l2_normalize denominator floor
VAR_EPS = 1e-5     # variance floor for layer/batch norm


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """A documented operation precondition was violated."""


class NumericError(ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class InputError(ValueError):
    """Caller-supplied data violates an interface contract."""


class Tape:
    """Ordered record of executed ops. Execution order is a topological
    order by construction: a tensor exists before anything consumes it."""

    def __init__(self):
        self.ops = []  # (op name, backward closure, parent tensors)

    def record(self, name, backward, parents):
        self.ops.append((name, backward, parents))

    def clear(self):
        self.ops.clear()

    def __len__(self):
        return len(self.ops)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    """Multi-dimensional array of real scalars with an optional grad buffer.

    Tensors are immutable once constructed except through recorded ops;
    mutating ``data`` in place invalidates any recorded graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; second operand may be a scalar or ndarray constant
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _record(name: str, out: Tensor, parents: tuple, pullback) -> Tensor:
    """Attach ``out`` to the active tape if any parent needs gradients.

    ``pullback(grad_out) -> [grad per parent or None]``.
    """
    tape = active_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return out
    out.requires_grad = True

    def _bw():
        go = out.grad
        if go is None:
            return
        for p, g in zip(parents, pullback(go)):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g

    out.tape_node = (tape, len(tape.ops))
    tape.record(name, _bw, parents)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every requires_grad leaf.

    Replays the recording tape in exact reverse order, verifies all
    produced gradients are finite, and consumes the tape.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.tape_node is None:
        raise ContractError("backward() on a tensor with no recorded tape (tape empty?)")
    tape = loss.tape_node[0]
    loss.grad = np.ones_like(loss.data)
    for _name, bw, _parents in reversed(tape.ops):
        bw()
    for name, _bw, parents in tape.ops:
        for p in parents:
            if p.grad is not None and not np.isfinite(p.grad).all():
                tape.clear()
                raise NumericError(f"non-finite gradient produced by op '{name}'")
    tape.clear()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record("add", out, (a, b),
                   lambda go: (_unbroadcast(go, a.shape), _unbroadcast(go, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record("sub", out, (a, b),
                   lambda go: (_unbroadcast(go, a.shape), _unbroadcast(-go, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record("mul", out, (a, b),
                   lambda go: (_unbroadcast(go * b.data, a.shape),
                               _unbroadcast(go * a.data, b.shape)))


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)
    return _record("neg", out, (x,), lambda go: (-go,))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    return _record("scale", out, (x,), lambda go: (go * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record("matmul", out, (a, b),
                   lambda go: (go @ b.data.T, a.data.T @ go))


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0  # gradient at exactly 0 is defined as 0
    return _record("relu", out, (x,), lambda go: (go * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record("tanh", out, (x,), lambda go: (go * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # 0.5*(tanh(x/2)+1) is overflow-free for large |x|
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    out = Tensor(y)
    return _record("sigmoid", out, (x,), lambda go: (go * y * (1.0 - y),))


def softplus(x: Tensor) -> Tensor:
    d = x.data
    out = Tensor(np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d))))
    sig = 0.5 * (np.tanh(0.5 * d) + 1.0)
    return _record("softplus", out, (x,), lambda go: (go * sig,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y)
    return _record("exp", out, (x,), lambda go: (go * y,))


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    return _record("log", out, (x,), lambda go: (go / x.data,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def pull(go):
        g = go
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record("sum", out, (x,), pull)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return _record("reshape", out, (x,), lambda go: (go.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return _record("transpose", out, (x,), lambda go: (go.transpose(inv),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if not (0 <= start and start + length <= x.shape[axis]):
        raise DimensionError(f"narrow: [{start}, {start + length}) out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())

    def pull(go):
        g = np.zeros_like(x.data)
        g[idx] = go
        return (g,)

    return _record("narrow", out, (x,), pull)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of a rank-2 tensor; duplicate indices accumulate grads."""
    idx = np.asarray(indices, dtype=np.intp)
    if x.ndim != 2:
        raise DimensionError(f"take_rows: expects rank-2 input, got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise InputError(f"take_rows: index out of range for {x.shape[0]} rows")
    out = Tensor(x.data[idx])

    def pull(go):
        g = np.zeros_like(x.data)
        np.add.at(g, idx, go)
        return (g,)

    return _record("take_rows", out, (x,), pull)


def concat(xs, axis: int = 0) -> Tensor:
    xs = list(xs)
    ref = xs[0].shape
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: non-concat extents differ, {[t.shape for t in xs]}")
    out = Tensor(np.concatenate([t.data for t in xs], axis=axis))
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def pull(go):
        return tuple(np.split(go, splits, axis=axis))

    return _record("concat", out, tuple(xs), pull)


def space_to_depth2(x: Tensor) -> Tensor:
    """[H,W,C] -> [H/2, W/2, 4C], stacking each 2x2 neighborhood
    (top-left, top-right, bottom-left, bottom-right) on channels."""
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"space_to_depth2: odd spatial extent in {x.shape}")
    y = x.data.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h // 2, w // 2, 4 * c)
    out = Tensor(y)

    def pull(go):
        g = go.reshape(h // 2, w // 2, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)
        return (g,)

    return _record("space_to_depth2", out, (x,), pull)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax along ``axis``. ``mask`` (True = valid) is a
    constant broadcastable to x; masked entries come out exactly 0."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of bounds for shape {x.shape}")
    d = x.data
    if mask is not None:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not valid.any(axis=axis).all():
            raise ContractError("softmax: a slice has no valid entries")
        shifted = np.where(valid, d, -np.inf)
        m = shifted.max(axis=axis, keepdims=True)
        e = np.exp(np.where(valid, d - m, -np.inf))
        e = np.where(valid, e, 0.0)
    else:
        m = d.max(axis=axis, keepdims=True)
        e = np.exp(d - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def pull(go):
        dot = (go * y).sum(axis=axis, keepdims=True)
        return (y * (go - dot),)

    return _record("softmax", out, (x,), pull)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    s = np.exp(d - m).sum(axis=axis, keepdims=True)
    y = np.log(s) + m
    soft = np.exp(d - m) / s
    if not keepdims:
        y = y.reshape([e for i, e in enumerate(d.shape) if i != axis % d.ndim])
    out = Tensor(y)

    def pull(go):
        g = go if keepdims else np.expand_dims(go, axis)
        return (g * soft,)

    return _record("logsumexp", out, (x,), pull)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = EPS_NORM) -> Tensor:
    """x / max(||x||_2, eps) along ``axis``."""
    d = x.data
    n = np.sqrt((d * d).sum(axis=axis, keepdims=True))
    denom = np.maximum(n, eps)
    y = d / denom
    out = Tensor(y)
    live = n > eps

    def pull(go):
        dot = (go * y).sum(axis=axis, keepdims=True)
        g_live = (go - y * dot) / denom
        return (np.where(live, g_live, go / eps),)

    return _record("l2_normalize", out, (x,), pull)


# ---------------------------------------------------------------------------
# convolution / resampling


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
    """Cross-correlation of [H,W,Cin] with [kh,kw,Cin,Cout]; zero padding.

    Default padding preserves spatial size for 3x3 kernels (pad 1) and is
    0 for 1x1 kernels.
    """
    if x.ndim != 3 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: need [H,W,Cin] and [kh,kw,Cin,Cout], got {x.shape}, {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh not in (1, 3) or kw not in (1, 3):
        raise ContractError(f"conv2d: kernel extents must be 1 or 3, got {kh}x{kw}")
    if x.shape[2] != cin:
        raise DimensionError(f"conv2d: channel mismatch, input {x.shape} vs kernel {kernel.shape}")
    if padding is None:
        padding = 1 if kh == 3 else 0
    h, w, _ = x.shape
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::stride, ::stride]                      # [Ho,Wo,Cin,kh,kw]
    ho, wo = win.shape[0], win.shape[1]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * cin)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = Tensor((cols @ kmat).reshape(ho, wo, cout))

    def pull(go):
        gmat = go.reshape(ho * wo, cout)
        gk = (cols.T @ gmat).reshape(kernel.shape)
        gcols = (gmat @ kmat.T).reshape(ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + ho * stride:stride, j:j + wo * stride:stride] += gcols[:, :, i, j, :]
        gx = gxp[padding:padding + h, padding:padding + w] if padding else gxp
        return (gx, gk)

    return _record("conv2d", out, (x, kernel), pull)


def _lerp_matrix(n_src: int, factor: int, dtype) -> np.ndarray:
    """Row-interpolation matrix for half-pixel-center bilinear upsampling."""
    n_dst = n_src * factor
    m = np.zeros((n_dst, n_src), dtype=dtype)
    for i in range(n_dst):
        s = (i + 0.5) / factor - 0.5
        s = min(max(s, 0.0), n_src - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n_src - 1)
        w = s - i0
        m[i, i0] += 1.0 - w
        m[i, i1] += w
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """[H,W,C] -> [fH,fW,C], half-pixel centers, borders clamped."""
    if factor < 1 or int(factor) != factor:
        raise ContractError(f"bilinear_upsample: factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    h, w, _ = x.shape
    r = _lerp_matrix(h, factor, x.data.dtype)
    c = _lerp_matrix(w, factor, x.data.dtype)
    y = np.einsum("ih,hwc,jw->ijc", r, x.data, c, optimize=True)
    out = Tensor(y)

    def pull(go):
        return (np.einsum("ih,ijc,jw->hwc", r, go, c, optimize=True),)

    return _record("bilinear_upsample", out, (x,), pull)


# ---------------------------------------------------------------------------
# normalization layers


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = VAR_EPS) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    n = d.shape[-1]

    def pull(go):
        gg = (go * xhat).sum(axis=tuple(range(d.ndim - 1)))
        gb = go.sum(axis=tuple(range(d.ndim - 1)))
        gx_hat = go * gamma.data
        gx = inv * (gx_hat
                    - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return (gx, gg.reshape(gamma.shape), gb.reshape(beta.shape))

    return _record("layer_norm", out, (x, gamma, beta), pull)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: Tensor, running_var: Tensor,
               training: bool, momentum: float = 0.1, eps: float = VAR_EPS,
               update_stats: bool = True) -> Tensor:
    """Per-channel (last axis) normalization over all other axes.

    Train mode uses batch statistics and folds them into the running
    buffers with the given momentum (unless ``update_stats`` is off, for
    forward passes whose step is a no-op); eval mode applies the stored
    stats as a fixed affine map.
    """
    d = x.data
    stat_axes = tuple(range(d.ndim - 1))
    if training:
        n = int(np.prod([d.shape[a] for a in stat_axes])) if stat_axes else 1
        if n == 1:
            warnings.warn("batch_norm: train mode with a single element per channel", RuntimeWarning)
        mu = d.mean(axis=stat_axes)
        xc = d - mu
        var = (xc * xc).mean(axis=stat_axes)
        if update_stats:
            running_mean.data = (1 - momentum) * running_mean.data + momentum * mu.astype(running_mean.dtype)
            running_var.data = (1 - momentum) * running_var.data + momentum * var.astype(running_var.dtype)
    else:
        mu = running_mean.data
        var = running_var.data
        xc = d - mu
        n = 0
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def pull(go):
        gg = (go * xhat).sum(axis=stat_axes)
        gb = go.sum(axis=stat_axes)
        gx_hat = go * gamma.data
        if training:
            gx = inv * (gx_hat
                        - gx_hat.mean(axis=stat_axes)
                        - xhat * (gx_hat * xhat).mean(axis=stat_axes))
        else:
            gx = gx_hat * inv
        return (gx, gg.reshape(gamma.shape), gb.reshape(beta.shape), None, None)

    return _record("batch_norm", out, (x, gamma, beta, running_mean, running_var), pull)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(build, wrt, h: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None, kink_tol: float = 1e-4,
               rel_floor: float = 1e-4) -> float:
    """Max relative error between tape gradients and central differences.

    ``build`` constructs a scalar loss from the current values of the
    tensors in ``wrt``; it must be deterministic and 64-bit. Two kinds of
    coordinate are excluded from the comparison, both decided purely from
    finite-difference self-consistency (never from the analytic value, so
    analytic bugs at usable coordinates are always caught): (a) kink
    contamination, where the left and right one-sided differences disagree
    by more than ``kink_tol`` of their own magnitude (relu kinks crossed
    within +-h contribute exactly this disagreement, and the induced
    central-difference error is bounded by half of it); (b) slopes below
    the finite-difference resolution eps*|f|/(2h)/rel_floor, which central
    differences cannot certify to ``rel_floor`` at this h. When
    ``max_coords`` is given, at most that many coordinates per tensor are
    checked (sampled with ``rng``).

    rel err per coordinate: |analytic - fd| / max(|analytic|, |fd|, 1e-8).
    """
    wrt = list(wrt)
    for t in wrt:
        if t.data.dtype != np.float64:
            raise ContractError("grad_check requires float64 tensors")
        t.grad = None
    with Tape():
        loss = build()
        if loss.size != 1:
            raise ContractError("grad_check: build() must return a scalar")
        backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]

    def feval() -> float:
        v = build().item()
        if not np.isfinite(v):
            raise NumericError("grad_check: non-finite loss during finite differencing")
        return v

    f0 = feval()
    resolution = np.finfo(np.float64).eps * max(1.0, abs(f0)) / (2 * h) / rel_floor
    max_rel = 0.0
    for t, an in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        aflat = an.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = feval()
            flat[i] = orig - h
            fm = feval()
            flat[i] = orig
            central = (fp - fm) / (2 * h)
            left = (f0 - fm) / h
            right = (fp - f0) / h
            scale_lr = max(abs(left), abs(right))
            if scale_lr > 0 and abs(left - right) > kink_tol * scale_lr:
                continue  # non-differentiable point
            a = aflat[i]
            if max(abs(a), abs(central)) < resolution:
                continue  # below finite-difference resolution
            rel = abs(a - central) / max(abs(a), abs(central), 1e-8)
            max_rel = max(max_rel, rel)
    return max_rel

"""Array-valued reverse-mode differentiation on a dynamic tape.

Tensors wrap numpy arrays. Operations on tensors whose inputs carry
``requires_grad`` record a backward closure; ``backward()`` on a scalar
walks the tape once in reverse topological order. Gradients accumulate
across repeated backward calls until ``zero_grad``/``grad = None``.

Forward and backward are deterministic for fixed inputs and thread count.
A single graph is not thread-safe; independent graphs may run concurrently.
"""

from __future__ import annotations

import numpy as np

from .resample import ResamplePlan


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def param(data) -> "Tensor":
        return Tensor(np.asarray(data), requires_grad=True)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def grad_array(self) -> np.ndarray:
        """The gradient, or zeros if this tensor was unreachable from the loss."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- operators -------------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    # -- backward --------------------------------------------------------------

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) for a finite scalar tensor."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not np.isfinite(self.data):
            raise FloatingPointError("backward() called on a non-finite loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            fn = node._backward_fn
            if fn is None or node.grad is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if g.base is not None or g is node.grad else g
                else:
                    parent.grad = parent.grad + g


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order over grad-requiring nodes, iteratively."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and reductions -------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def square(a: Tensor) -> Tensor:
    return _make(np.square(a.data), (a,), lambda g: (g * (2.0 * a.data),))


def div_scalar(a: Tensor, c) -> Tensor:
    """Division by a constant scalar or array (not reciprocal-multiply), so n
    identical terms averaged over n recover the term exactly."""
    c = np.asarray(c)
    return _make(a.data / c, (a,), lambda g: (_unbroadcast(g / c, a.data.shape),))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * (0.5 / out),))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)  # overflow-free logistic
    return _make(out, (a,), lambda g: (g * (out * (1.0 - out)),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,),
                 lambda g: (g * mask,))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    """Elementwise max(x, alpha*x) for 0 <= alpha < 1."""
    dtype = a.data.dtype
    scale = np.where(a.data > 0, dtype.type(1.0), dtype.type(alpha))
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _make(np.asarray(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return _make(np.asarray(a.data.mean()), (a,), backward)


def sum_axes(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    shape = a.data.shape
    keep = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(keep), shape),)

    return _make(a.data.sum(axis=axes), (a,), backward)


def mean_axes(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    shape = a.data.shape
    keep = tuple(1 if i in axes else s for i, s in enumerate(shape))
    n = int(np.prod([shape[i] for i in axes]))

    def backward(g):
        return (np.broadcast_to(g.reshape(keep) / n, shape),)

    return _make(a.data.mean(axis=axes), (a,), backward)


# -- shape ops --------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)

    def backward(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return _make(a.data[index].copy(), (a,), backward)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


# -- structured ops ----------------------------------------------------------------


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Same-length non-causal dilated convolution.

    ``x`` is (batch, in_channels, time), ``w`` is (out, in, kernel) with odd
    kernel, ``b`` is (out,). Zero padding keeps the output time length equal
    to the input's for every dilation.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise ValueError("conv1d expects x (B,C,T) and w (O,C,K)")
    batch, c_in, time = xd.shape
    c_out, c_w, kernel = wd.shape
    if c_w != c_in:
        raise ValueError(f"channel mismatch: input {c_in}, weight expects {c_w}")
    if kernel % 2 == 0:
        raise ValueError(f"kernel must be odd, got {kernel}")
    pad = dilation * (kernel - 1) // 2
    if pad:
        xp = np.zeros((batch, c_in, time + 2 * pad), dtype=xd.dtype)
        xp[:, :, pad : pad + time] = xd
    else:
        xp = xd
    # per-tap contiguous weight matrices keep matmul on the fast BLAS path
    taps = [np.ascontiguousarray(wd[:, :, k]) for k in range(kernel)]
    out = np.matmul(taps[0], xp[:, :, 0:time])
    for k in range(1, kernel):
        off = k * dilation
        out += np.matmul(taps[k], xp[:, :, off : off + time])
    if b is not None:
        if b.data.shape != (c_out,):
            raise ValueError(f"bias must be ({c_out},), got {b.data.shape}")
        out += b.data.reshape(1, c_out, 1)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            if kernel == 1:
                gx = np.matmul(np.ascontiguousarray(taps[0].T), g)
            else:
                gxp = np.zeros_like(xp)
                for k in range(kernel):
                    off = k * dilation
                    gxp[:, :, off : off + time] += np.matmul(
                        np.ascontiguousarray(taps[k].T), g
                    )
                gx = gxp[:, :, pad : pad + time] if pad else gxp
        if w.requires_grad:
            gw = np.empty_like(wd)
            for k in range(kernel):
                off = k * dilation
                # (B,O,T) @ (B,T,C) summed over batch; strided transpose views
                # stay on the BLAS path, unlike tensordot's copies
                gw[:, :, k] = np.matmul(
                    g, xp[:, :, off : off + time].transpose(0, 2, 1)
                ).sum(axis=0)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward)


def resample(x: Tensor, plan: ResamplePlan, out_len: int | None = None) -> Tensor:
    """Rational resampling along the last axis; linear, so the gradient is the
    plan's exact adjoint."""
    in_len = x.data.shape[-1]
    out = plan.apply(x.data, out_len)

    def backward(g):
        return (plan.adjoint().apply(g, out_len=in_len),)

    return _make(out, (x,), backward)


def stft_magnitude(
    x: Tensor, fft_size: int, hop: int, window: np.ndarray, power_floor: float = 1e-7
) -> Tensor:
    """Magnitude spectrogram of (..., T) input: centered frames (reflection
    padding), zero-padded window of length fft_size, rfft, then
    sqrt(max(power, power_floor)). Floored bins receive zero gradient."""
    if fft_size % 2:
        raise ValueError("fft_size must be even")
    xd = x.data
    squeeze = xd.ndim == 1
    if squeeze:
        xd = xd[None, :]
    batch, time = xd.shape
    window = window.astype(xd.dtype, copy=False)
    pad = fft_size // 2
    if time > pad:
        xp = np.pad(xd, ((0, 0), (pad, pad)), mode="reflect")
        reflected = True
    else:
        xp = np.pad(xd, ((0, 0), (pad, pad)), mode="constant")
        reflected = False
    n_frames = 1 + (xp.shape[-1] - fft_size) // hop
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[:, idx]  # (B, F, fft)
    spec = np.fft.rfft(frames * window, axis=-1)
    power = spec.real**2 + spec.imag**2
    clamped = np.maximum(power, power_floor)
    mag = np.sqrt(clamped)

    def backward(g):
        coef = np.where(power >= power_floor, g / mag, 0.0) * spec
        coef[..., 1:-1] *= 0.5  # interior rfft bins represent conjugate pairs
        gframes = fft_size * np.fft.irfft(coef, n=fft_size, axis=-1)
        gframes = (gframes * window).astype(xd.dtype)
        gxp = np.zeros_like(xp)
        for f in range(n_frames):
            start = f * hop
            gxp[:, start : start + fft_size] += gframes[:, f, :]
        gx = gxp[:, pad : pad + time].copy()
        if reflected:
            gx[:, 1 : pad + 1] += gxp[:, :pad][:, ::-1]
            gx[:, time - pad - 1 : time - 1] += gxp[:, pad + time :][:, ::-1]
        return (gx[0] if squeeze else gx,)

    out = mag[0] if squeeze else mag
    return _make(out, (x,), backward)


# -- verification ------------------------------------------------------------------


def grad_check(fn, tensors: list[Tensor], step: float = 1e-3) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``fn`` maps the tensors to a scalar Tensor. Every element of every input
    gets perturbed; errors are normalized by the largest finite-difference
    magnitude across all checked tensors (the gradient field's scale), so
    slots whose true gradient happens to be tiny do not amplify the
    finite-difference noise floor. Run in double precision.
    """
    for t in tensors:
        t.grad = None
    fn(*tensors).backward()
    analytic = [t.grad_array.copy() for t in tensors]
    diffs: list[np.ndarray] = []
    scale = 1e-12
    for t, ga in zip(tensors, analytic):
        fd = np.zeros_like(t.data, dtype=np.float64)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn(*tensors).data)
            flat[i] = orig - step
            lo = float(fn(*tensors).data)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * step)
        diffs.append(np.abs(ga - fd))
        scale = max(scale, float(np.abs(fd).max()))
    return max(float(d.max()) / scale for d in diffs) if diffs else 0.0

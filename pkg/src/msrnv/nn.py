"""Neural building blocks on the autograd engine, plus the RAdam optimizer.

Weight matrices start centered-uniform scaled by fan-in; biases start at
zero. Output projections can be zero-initialized so a freshly built network
is exactly the zero function.
"""

from __future__ import annotations

import math
import warnings
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Minimal parameter container with named, ordered state."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def register_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor.param(value)
        self._params[name] = t
        return t

    def register_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters():
            key = f"{prefix}{name}"
            if key not in arrays:
                raise KeyError(f"missing parameter {key}")
            value = arrays[key]
            if value.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {key}: {value.shape} vs {p.data.shape}"
                )
            p.data = value.astype(p.data.dtype, copy=True)


class Conv1d(Module):
    """Same-length dilated 1-D convolution layer (non-causal, odd kernel)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 1,
        dilation: int = 1,
        bias: bool = True,
        zero_init: bool = False,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        super().__init__()
        self.dilation = dilation
        if zero_init:
            w = np.zeros((out_channels, in_channels, kernel), dtype=dtype)
        else:
            if rng is None:
                raise ValueError("rng required unless zero_init")
            bound = math.sqrt(1.0 / (in_channels * kernel))
            w = rng.uniform(
                -bound, bound, size=(out_channels, in_channels, kernel)
            ).astype(dtype)
        self.weight = self.register_param("weight", w)
        self.bias = (
            self.register_param("bias", np.zeros(out_channels, dtype=dtype))
            if bias
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.weight, self.bias, self.dilation)


class GatedBlock(Module):
    """Gated residual unit: dilated conv to 2C channels, conditioning added
    through a 1x1 projection before the tanh*sigmoid gate, then 1x1
    projections back to the residual and skip paths."""

    def __init__(
        self,
        channels: int,
        cond_channels: int,
        kernel: int,
        dilation: int,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        super().__init__()
        self.channels = channels
        gate = 2 * channels
        self.conv = self.register_child(
            "conv", Conv1d(channels, gate, kernel, dilation, rng=rng, dtype=dtype)
        )
        self.cond_proj = self.register_child(
            "cond_proj", Conv1d(cond_channels, gate, 1, bias=False, rng=rng, dtype=dtype)
        )
        self.res_proj = self.register_child(
            "res_proj", Conv1d(channels, channels, 1, rng=rng, dtype=dtype)
        )
        self.skip_proj = self.register_child(
            "skip_proj", Conv1d(channels, channels, 1, rng=rng, dtype=dtype)
        )

    def __call__(self, x: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[-1] != cond.shape[-1]:
            raise ValueError(
                f"conditioning length {cond.shape[-1]} != input length {x.shape[-1]}"
            )
        h = self.conv(x) + self.cond_proj(cond)
        filt = ag.narrow(h, 1, 0, self.channels)
        gate = ag.narrow(h, 1, self.channels, self.channels)
        z = ag.tanh(filt) * ag.sigmoid(gate)
        return x + self.res_proj(z), self.skip_proj(z)


class WaveNet(Module):
    """Stack of gated residual blocks with dilations 2^(l mod cycle), summed
    skip connections, and a zero-initialized linear output head."""

    def __init__(
        self,
        in_channels: int,
        cond_channels: int,
        residual_channels: int,
        layers: int,
        cycle: int,
        kernel: int = 3,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.layers = layers
        self.dilations = [2 ** (l % cycle) for l in range(layers)]
        self.input_proj = self.register_child(
            "input_proj", Conv1d(in_channels, residual_channels, 1, rng=rng, dtype=dtype)
        )
        self.blocks: list[GatedBlock] = []
        for l, d in enumerate(self.dilations):
            block = GatedBlock(residual_channels, cond_channels, kernel, d, rng, dtype)
            self.blocks.append(block)
            self.register_child(f"block{l}", block)
        self.head_hidden = self.register_child(
            "head_hidden",
            Conv1d(residual_channels, residual_channels, 1, rng=rng, dtype=dtype),
        )
        self.head_out = self.register_child(
            "head_out", Conv1d(residual_channels, 1, 1, zero_init=True, dtype=dtype)
        )
        self._skip_scale = math.sqrt(1.0 / layers)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        h = self.input_proj(x)
        skips: Tensor | None = None
        for block in self.blocks:
            h, s = block(h, cond)
            skips = s if skips is None else skips + s
        skips = skips * self._skip_scale
        return self.head_out(ag.relu(self.head_hidden(ag.relu(skips))))

    def receptive_field(self, kernel: int = 3) -> int:
        return 1 + (kernel - 1) * sum(self.dilations)


def receptive_field(kernel: int, dilations: list[int]) -> int:
    """Input span influencing one output sample of a stacked dilated conv."""
    return 1 + (kernel - 1) * sum(dilations)


def rho_t(t: int, beta2: float) -> float:
    """Length of the approximated SMA at step t (variance-rectification gate)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2**t
    return rho_inf - 2.0 * t * b2t / (1.0 - b2t)


def rectification_term(t: int, beta2: float) -> float | None:
    """Variance rectification factor, or None while rho_t <= 4 (warmup regime)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho = rho_t(t, beta2)
    if rho <= 4.0:
        return None
    return math.sqrt(
        ((rho - 4.0) * (rho - 2.0) * rho_inf)
        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)
    )


class RAdam:
    """Rectified Adam.

    While the variance estimate is unreliable (rho_t <= 4) the update is the
    bias-corrected first moment alone (SGD-with-momentum form); afterwards the
    adaptive step with the rectification factor applies. A step with any
    non-finite gradient is skipped entirely and flagged with a warning.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-6,
    ):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> bool:
        """Apply one update from current gradients; returns False if skipped."""
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                warnings.warn(
                    f"non-finite gradient for {name}; optimizer step skipped",
                    stacklevel=2,
                )
                return False
            grads[name] = g
        self.step_count += 1
        t = self.step_count
        beta1, beta2 = self.betas
        bias1 = 1.0 - beta1**t
        bias2 = 1.0 - beta2**t
        rect = rectification_term(t, beta2)
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * np.square(g)
            m_hat = m / bias1
            if rect is None:
                p.data -= (self.lr * m_hat).astype(p.data.dtype, copy=False)
            else:
                denom = np.sqrt(v / bias2) + self.eps
                p.data -= (self.lr * rect * m_hat / denom).astype(
                    p.data.dtype, copy=False
                )
        return True

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"{prefix}m.{name}"] = self.m[name]
            out[f"{prefix}v.{name}"] = self.v[name]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        for name in self.params:
            self.m[name] = arrays[f"{prefix}m.{name}"].copy()
            self.v[name] = arrays[f"{prefix}v.{name}"].copy()

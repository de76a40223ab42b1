"""Dense float32 tensor primitives.

Tensors are plain C-contiguous ``numpy.float32`` arrays with explicit shapes.
Every public op checks its operand shapes and never relies on implicit
broadcasting between operands; callers reshape explicitly.

Matmuls and convolutions report their multiply-accumulate count to the
active :class:`MacCounter`, if any (see :func:`count_macs`).
"""

from __future__ import annotations

import contextlib
import contextvars
from collections import defaultdict
from typing import Iterator

import numpy as np
from scipy.special import erf

from .errors import DimensionError

Tensor = np.ndarray

DTYPE = np.float32


def tensor(data, shape=None) -> Tensor:
    """Coerce ``data`` to a contiguous float32 array, optionally reshaped."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=DTYPE))
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(f"cannot view {arr.size} elements as shape {shape}")
        arr = arr.reshape(shape)
    return arr


def zeros(*shape: int) -> Tensor:
    return np.zeros(shape, dtype=DTYPE)


# --------------------------------------------------------------------------
# MAC instrumentation
# --------------------------------------------------------------------------


class MacCounter:
    """Tally of multiply-accumulates grouped by slash-separated scope tags."""

    def __init__(self) -> None:
        self.by_tag: dict[str, int] = defaultdict(int)

    def add(self, macs: int, tag: str) -> None:
        self.by_tag[tag] += int(macs)

    @property
    def total(self) -> int:
        return sum(self.by_tag.values())

    def under(self, prefix: str) -> int:
        """MACs recorded under ``prefix`` or any of its sub-scopes."""
        return sum(v for k, v in self.by_tag.items() if k == prefix or k.startswith(prefix + "/"))

    def reset(self) -> None:
        self.by_tag.clear()


_counter: contextvars.ContextVar[MacCounter | None] = contextvars.ContextVar("mac_counter", default=None)
_scope: contextvars.ContextVar[str] = contextvars.ContextVar("mac_scope", default="other")


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Enable counting for the current execution context.

    A fresh counter is created per ``with`` block, so every run starts at zero.
    """
    counter = MacCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


@contextlib.contextmanager
def mac_scope(name: str) -> Iterator[None]:
    """Nest a scope tag; MACs inside are recorded as ``outer/name``."""
    outer = _scope.get()
    token = _scope.set(name if outer == "other" else f"{outer}/{name}")
    try:
        yield
    finally:
        _scope.reset(token)


def tally(macs: int) -> None:
    counter = _counter.get()
    if counter is not None:
        counter.add(macs, _scope.get())


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------


def _require_ndim(x: Tensor, ndim: int, name: str) -> None:
    if x.ndim != ndim:
        raise DimensionError(f"{name} expects a {ndim}-d tensor, got shape {tuple(x.shape)}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_ndim(a, 2, "matmul")
    _require_ndim(b, 2, "matmul")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise DimensionError(f"matmul inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}")
    tally(m * k * n)
    return np.matmul(a, b, dtype=DTYPE)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as [in, out]."""
    y = matmul(x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise DimensionError(f"bias shape {tuple(b.shape)} does not match output width {w.shape[1]}")
        y += b
    return y


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add requires equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    return a + b


def multiply(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"multiply requires equal shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    return a * b


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis with max subtraction."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted, dtype=DTYPE)
    return e / e.sum(axis=-1, keepdims=True)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    _require_ndim(x, 2, "layernorm")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm affine params must be ({d},), got {tuple(gamma.shape)}, {tuple(beta.shape)}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    normed = centered / np.sqrt(var + DTYPE(eps))
    return (normed * gamma + beta).astype(DTYPE, copy=False)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(DTYPE, copy=False)


# --------------------------------------------------------------------------
# Spatial ops on [C, H, W] tensors
# --------------------------------------------------------------------------


def conv2d_depthwise(x: Tensor, kernel: Tensor, dilation: int = 1, bias: Tensor | None = None) -> Tensor:
    """Per-channel 2-d convolution, stride 1, zero "same" padding.

    ``kernel`` has shape [C, kh, kw] with odd kh, kw.
    """
    _require_ndim(x, 3, "conv2d_depthwise")
    _require_ndim(kernel, 3, "conv2d_depthwise kernel")
    c, h, w = x.shape
    kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"depthwise kernel has {kc} channels, input has {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"same-padding conv needs odd kernel size, got {kh}x{kw}")
    ph, pw = dilation * (kh // 2), dilation * (kw // 2)
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    out = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            oy, ox = i * dilation, j * dilation
            out += kernel[:, i : i + 1, j : j + 1] * padded[:, oy : oy + h, ox : ox + w]
    tally(c * h * w * kh * kw)
    if bias is not None:
        if bias.shape != (c,):
            raise DimensionError(f"depthwise bias must be ({c},), got {tuple(bias.shape)}")
        out += bias[:, None, None]
    return out


def conv2d_pointwise(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution; ``kernel`` is [C_out, C_in]."""
    _require_ndim(x, 3, "conv2d_pointwise")
    _require_ndim(kernel, 2, "conv2d_pointwise kernel")
    c, h, w = x.shape
    if kernel.shape[1] != c:
        raise DimensionError(f"pointwise kernel {tuple(kernel.shape)} does not accept {c} input channels")
    out = matmul(kernel, x.reshape(c, h * w))
    if bias is not None:
        if bias.shape != (kernel.shape[0],):
            raise DimensionError(f"pointwise bias must be ({kernel.shape[0]},), got {tuple(bias.shape)}")
        out += bias[:, None]
    return out.reshape(kernel.shape[0], h, w)


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    _require_ndim(x, 3, "nearest_upsample")
    if factor < 1:
        raise DimensionError(f"upsample factor must be >= 1, got {factor}")
    return np.ascontiguousarray(x.repeat(factor, axis=1).repeat(factor, axis=2))


def avgpool2d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping mean pooling with stride equal to ``window``."""
    _require_ndim(x, 3, "avgpool2d")
    c, h, w = x.shape
    if window < 1 or h % window or w % window:
        raise DimensionError(f"spatial size {h}x{w} is not divisible by pooling window {window}")
    pooled = x.reshape(c, h // window, window, w // window, window).mean(axis=(2, 4))
    return pooled.astype(DTYPE, copy=False)


def patchify(image: Tensor, patch: int) -> Tensor:
    """Cut a [C, H, W] image into non-overlapping patches.

    Returns [(H/p)*(W/p), C*p*p] in row-major patch order; each row is the
    patch flattened channel-major, matching a stride-``patch`` conv kernel
    flattened as [C, p, p].
    """
    _require_ndim(image, 3, "patchify")
    c, h, w = image.shape
    if h % patch or w % patch:
        raise DimensionError(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    cols = image.reshape(c, gh, patch, gw, patch).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(cols.reshape(gh * gw, c * patch * patch))


def tokens_to_grid(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """[h*w, D] token rows -> [D, h, w] feature map."""
    _require_ndim(tokens, 2, "tokens_to_grid")
    h, w = grid
    if tokens.shape[0] != h * w:
        raise DimensionError(f"{tokens.shape[0]} tokens do not fill a {h}x{w} grid")
    return np.ascontiguousarray(tokens.T.reshape(tokens.shape[1], h, w))


def grid_to_tokens(x: Tensor) -> Tensor:
    """[D, h, w] feature map -> [h*w, D] token rows."""
    _require_ndim(x, 3, "grid_to_tokens")
    c = x.shape[0]
    return np.ascontiguousarray(x.reshape(c, -1).T)

"""Forward-only neural building blocks on torch CPU tensors.

Feature maps are single-sample (C, H, W) float32 tensors; token stacks are
(N, D). Every op is a pure function of (inputs, weights): no RNG, no state,
so repeated evaluation is bit-identical on one machine.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ContractViolationError, DimensionError
from .weights import WeightStore

LRELU_SLOPE = 0.2
LRELU_GAIN = math.sqrt(2.0)
ADAIN_EPS = 1e-8
DEMOD_EPS = 1e-8


def to_torch(arr) -> torch.Tensor:
    if isinstance(arr, torch.Tensor):
        return arr.float()
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().contiguous().numpy().astype(np.float32, copy=False)


def lrelu_gain(x: torch.Tensor) -> torch.Tensor:
    """Leaky rectifier (slope 0.2) with sqrt(2) gain, used throughout the stack."""
    return F.leaky_relu(x, LRELU_SLOPE) * LRELU_GAIN


def linear(x: torch.Tensor, store: WeightStore, prefix: str) -> torch.Tensor:
    w = store.torch(f"{prefix}.w")
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"{prefix}: input dim {x.shape[-1]} != {w.shape[0]}")
    return x @ w + store.torch(f"{prefix}.b")


def conv2d(x: torch.Tensor, store: WeightStore, prefix: str, stride: int = 1
           ) -> torch.Tensor:
    """3x3 (pad 1) or 1x1 (pad 0) convolution on a (C, H, W) tensor."""
    w = store.torch(f"{prefix}.weight")
    if x.shape[0] != w.shape[1]:
        raise DimensionError(f"{prefix}: input channels {x.shape[0]} != {w.shape[1]}")
    pad = (w.shape[-1] - 1) // 2
    y = F.conv2d(x[None], w, store.torch(f"{prefix}.bias"), stride=stride, padding=pad)
    return y[0]


def layer_norm(x: torch.Tensor, store: WeightStore, prefix: str) -> torch.Tensor:
    gamma = store.torch(f"{prefix}.gamma")
    beta = store.torch(f"{prefix}.beta")
    if x.shape[-1] != gamma.shape[0]:
        raise DimensionError(f"{prefix}: feature dim {x.shape[-1]} != {gamma.shape[0]}")
    mu = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mu) / torch.sqrt(var + 1e-5) * gamma + beta


def channel_stats(x: torch.Tensor) -> tuple:
    """Per-channel (mean, std) over spatial positions of a (C, H, W) tensor."""
    flat = x.reshape(x.shape[0], -1)
    return flat.mean(dim=1), flat.std(dim=1, unbiased=False)


def adain(content: torch.Tensor, style_stats: tuple) -> torch.Tensor:
    """Replace per-channel mean/std of `content` with the style statistics.

    content: (C, H, W); style_stats: (mean (C,), std (C,)). Standard deviations
    are floored at 1e-8 on both sides before use.
    """
    mean, std = style_stats
    mean = to_torch(mean)
    std = to_torch(std)
    if mean.shape != (content.shape[0],) or std.shape != (content.shape[0],):
        raise DimensionError(
            f"adain: style stats for {tuple(mean.shape)} channels do not match "
            f"content with {content.shape[0]} channels")
    c_mean, c_std = channel_stats(content)
    c_std = torch.clamp(c_std, min=ADAIN_EPS)
    std = torch.clamp(std, min=ADAIN_EPS)
    normed = (content - c_mean[:, None, None]) / c_std[:, None, None]
    return normed * std[:, None, None] + mean[:, None, None]


def attention_matrix(queries: torch.Tensor, keys: torch.Tensor,
                     bias: torch.Tensor | None = None) -> torch.Tensor:
    """Row-stochastic softmax(Q K^T / sqrt(D) [+ bias]) for projected tokens."""
    d = queries.shape[-1]
    logits = queries @ keys.T / math.sqrt(d)
    if bias is not None:
        if bias.shape != logits.shape:
            raise DimensionError(
                f"attention bias {tuple(bias.shape)} != logits {tuple(logits.shape)}")
        logits = logits + bias
    return torch.softmax(logits, dim=-1)


def cross_attention(queries: torch.Tensor, keys_values: torch.Tensor,
                    store: WeightStore, prefix: str,
                    bias: torch.Tensor | None = None) -> torch.Tensor:
    """Single-head cross-attention: queries (N, D) attend to keys_values (M, E).

    q/k/v projections live at {prefix}.q/.k/.v, output projection at {prefix}.o.
    `bias` is an optional fixed additive logit bias (relative positional prior);
    without it this is plain softmax(Q K^T / sqrt(D)) V plus output projection.
    """
    if queries.ndim != 2 or keys_values.ndim != 2:
        raise DimensionError("cross_attention expects 2-D token stacks")
    q = linear(queries, store, f"{prefix}.q")
    k = linear(keys_values, store, f"{prefix}.k")
    v = linear(keys_values, store, f"{prefix}.v")
    attn = attention_matrix(q, k, bias=bias)
    return linear(attn @ v, store, f"{prefix}.o")


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x[None], scale_factor=2, mode="nearest")[0]


def modulated_synthesis_layer(features: torch.Tensor, style: torch.Tensor,
                              store: WeightStore, prefix: str,
                              spatial_mod: torch.Tensor | None = None,
                              upsample: bool = False, activate: bool = True,
                              out_gain: torch.Tensor | None = None,
                              out_bias: torch.Tensor | None = None) -> torch.Tensor:
    """Style-modulated, demodulated convolution with additive spatial detail.

    Per-channel input scales come from an affine map of the style vector
    ({prefix}.affine); the scaled kernel is demodulated to unit per-output
    norm, applied as a 3x3 convolution (after optional 2x nearest upsampling),
    the spatial modulation map is added, then the slope-0.2/sqrt(2) rectifier
    (skipped for the linear output head). `out_gain`/`out_bias` apply a fixed
    per-channel affine after everything else (the attribute prior).
    """
    if features.ndim != 3:
        raise DimensionError("modulated_synthesis_layer expects (C, H, W) features")
    w = store.torch(f"{prefix}.conv.weight")  # (out, in, 3, 3)
    if features.shape[0] != w.shape[1]:
        raise DimensionError(
            f"{prefix}: feature channels {features.shape[0]} != kernel {w.shape[1]}")
    scale = linear(style[None], store, f"{prefix}.affine")[0]  # (in,)
    w_mod = w * scale[None, :, None, None]
    demod = torch.rsqrt((w_mod * w_mod).sum(dim=(1, 2, 3)) + DEMOD_EPS)
    w_final = w_mod * demod[:, None, None, None]
    x = upsample2x(features) if upsample else features
    y = F.conv2d(x[None], w_final, store.torch(f"{prefix}.conv.bias"), padding=1)[0]
    if spatial_mod is not None:
        if spatial_mod.shape != y.shape:
            raise DimensionError(
                f"{prefix}: spatial modulation {tuple(spatial_mod.shape)} does not "
                f"match layer output {tuple(y.shape)}")
        y = y + spatial_mod
    if activate:
        y = lrelu_gain(y)
    if out_gain is not None:
        y = y * out_gain[:, None, None] + out_bias[:, None, None]
    return y


def identity_conv_weight(channels: int, k: int = 3) -> np.ndarray:
    """Kernel whose convolution is the identity map (test/debug helper)."""
    w = np.zeros((channels, channels, k, k), dtype=np.float32)
    c = k // 2
    for i in range(channels):
        w[i, i, c, c] = 1.0
    return w


def avg_pool2x(x: torch.Tensor) -> torch.Tensor:
    return F.avg_pool2d(x[None], 2)[0]


def require_finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise ContractViolationError(f"{what} produced non-finite values")
    return x

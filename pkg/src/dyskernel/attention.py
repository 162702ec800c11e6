"""Point attention over deformed windows and dynamic kernel aggregation (DSB)."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .params import ParamStore, init_conv
from .sampling import BaseWindow, deform_window, init_offset_net, predict_offsets, sample_deformed_kv


class DSBlock:
    """Parameters of one dynamic sampling block, stored under ``prefix`` in a ParamStore.

    Holds the 1×1 q/k/v/output projections, the shared channel weight and the
    offset head. ``identity=True`` sets all projections to identity maps.
    """

    def __init__(
        self,
        params: ParamStore,
        prefix: str,
        channels: int,
        heads: int,
        window: BaseWindow,
        rng: Optional[np.random.Generator] = None,
        identity: bool = False,
    ):
        if channels < 1 or heads < 1:
            raise ValueError("channels and heads must be positive")
        if channels % heads:
            raise ValueError(f"channels ({channels}) not divisible by heads ({heads})")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = params
        self.prefix = prefix
        self.channels = channels
        self.heads = heads
        self.window = window
        for name in ("q", "k", "v", "out"):
            if identity:
                params.add(f"{prefix}.{name}.w", np.eye(channels)[:, :, None, None])
                params.add(f"{prefix}.{name}.b", np.zeros(channels))
            else:
                init_conv(params, f"{prefix}.{name}", channels, channels, 1, rng)
        params.add(f"{prefix}.channel", np.ones(channels))
        init_offset_net(params, f"{prefix}.offset", channels, window.size, rng)

    @property
    def d_head(self) -> int:
        return self.channels // self.heads

    def __getitem__(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def offset_net(self) -> Dict[str, Tensor]:
        return {k[len(self.prefix) + len(".offset."):]: v for k, v in self.params.subset(self.prefix + ".offset.").items()}


def to_heads(x: Tensor, heads: int) -> Tensor:
    """B×C×... -> B×d×h×... with channel index c = i_d·h + i_h."""
    B, C = x.shape[:2]
    if C % heads:
        raise ShapeError(f"to_heads: channel axis {C} not divisible by {heads} heads")
    return ad.reshape(x, (B, C // heads, heads) + x.shape[2:])


def from_heads(x: Tensor) -> Tensor:
    return ad.reshape(x, (x.shape[0], x.shape[1] * x.shape[2]) + x.shape[3:])


def _conv1x1(x, block, name):
    return ad.conv2d(x, block[f"{name}.w"], block[f"{name}.b"])


def project_qkv(f_a: Tensor, f_b: Tensor, block: DSBlock) -> Tuple[Tensor, Tensor, Tensor]:
    """Queries from ``f_a``, keys and values from ``f_b``; all B×C×H×W."""
    if f_a.shape != f_b.shape:
        raise ShapeError(f"project_qkv: feature shapes differ {f_a.shape} vs {f_b.shape}")
    return _conv1x1(f_a, block, "q"), _conv1x1(f_b, block, "k"), _conv1x1(f_b, block, "v")


def point_attention(Q: Tensor, K_m: Tensor) -> Tensor:
    """Softmax over taps of q·k/sqrt(d_head). Q: B×d×h×H×W, K_m: B×d×h×U×H×W -> B×h×U×H×W."""
    if K_m.ndim != 6 or K_m.shape[3] == 0:
        raise ShapeError(f"point_attention: need at least one tap, got keys {K_m.shape}")
    logits = ad.scaled_dot(Q, K_m, scale=1.0 / np.sqrt(Q.shape[1]))
    return ad.softmax(logits, axis=2)


@dataclass
class DynamicKernel:
    """Per-position kernel: spatial weights (B×h×U×H×W) times shared channel weights (C)."""

    spatial: Tensor
    channel: Tensor

    @property
    def heads(self) -> int:
        return self.spatial.shape[1]

    def channel_view(self) -> Tensor:
        h = self.heads
        return ad.reshape(self.channel, (1, self.channel.shape[0] // h, h, 1, 1, 1))

    def fused(self) -> Tensor:
        """Explicit B×d×h×U×H×W kernel; entry (d, h, j) = rho(h, j)·channel(d·h + h)."""
        rho = self.spatial
        B, h, U, H, W = rho.shape
        return ad.mul(ad.reshape(rho, (B, 1, h, U, H, W)), self.channel_view())


def fuse_kernel(rho: Tensor, channel: Tensor) -> DynamicKernel:
    if channel.ndim != 1 or channel.shape[0] % rho.shape[1]:
        raise ShapeError(f"fuse_kernel: channel weights {channel.shape} incompatible with {rho.shape[1]} heads")
    return DynamicKernel(rho, channel)


def aggregate(kernel: DynamicKernel, V_m: Tensor, block: Optional[DSBlock] = None) -> Tensor:
    """Weighted sum of sampled values per position and head, merged to B×C×H×W.

    If ``block`` is given the merged map goes through its 1×1 output projection.
    """
    if V_m.ndim != 6 or V_m.shape[3] != kernel.spatial.shape[2]:
        raise ShapeError(
            f"aggregate: values have {V_m.shape[3] if V_m.ndim == 6 else '?'} taps, "
            f"kernel has {kernel.spatial.shape[2]}"
        )
    h = kernel.heads
    channel = ad.reshape(kernel.channel, (1, kernel.channel.shape[0] // h, h, 1, 1))
    A = ad.mul(ad.weighted_sum(kernel.spatial, V_m), channel)
    out = from_heads(A)
    if block is not None:
        out = _conv1x1(out, block, "out")
    return out


@dataclass
class DSBTrace:
    offsets: Tensor
    coords: Tensor
    rho: Tensor


def dsb_forward(
    f_a: Tensor,
    f_b: Tensor,
    block: DSBlock,
    uniform: bool = False,
    trace: Optional[list] = None,
) -> Tensor:
    """Attention features of ``f_a`` gathered from ``f_b`` over deformed windows.

    ``uniform=True`` replaces the softmax weights with 1/|U| (static-weight
    ablation). If ``trace`` is a list, a :class:`DSBTrace` is appended.
    """
    Q, K, V = project_qkv(f_a, f_b, block)
    offsets = predict_offsets(f_a, f_b, block.offset_net())
    coords = deform_window(block.window, offsets)
    K_m, V_m = sample_deformed_kv(K, V, coords)
    h = block.heads
    if uniform:
        B, _, U, H, W = K_m.shape
        rho = Tensor(np.full((B, h, U, H, W), 1.0 / U))
    else:
        rho = point_attention(to_heads(Q, h), to_heads(K_m, h))
    kernel = fuse_kernel(rho, block["channel"])
    out = aggregate(kernel, to_heads(V_m, h), block)
    if trace is not None:
        trace.append(DSBTrace(offsets, coords, rho))
    return out


def count_flops_params(input_shape: Tuple[int, int, int, int], taps: int, heads: int = 1, breakdown: bool = False):
    """Analytic multiply-add and parameter counts for one DSB.

    Returns ``(flops, params)``, or ``(flops, params, parts)`` with a per-stage
    flop dict when ``breakdown`` is set.
    """
    B, C, H, W = input_shape
    if C < 1 or taps < 1 or heads < 1 or H < 1 or W < 1 or B < 1:
        raise ValueError(f"invalid configuration: shape={input_shape}, taps={taps}, heads={heads}")
    if C % heads:
        raise ValueError(f"channels ({C}) not divisible by heads ({heads})")
    P = B * H * W
    parts = {
        "projections": 4 * C * C * P,
        "offset_conv1": 9 * 2 * C * C * P,
        "offset_conv2": 9 * C * 2 * taps * P,
        "sampling": 2 * 4 * C * taps * P,
        "logits": C * taps * P,
        "softmax": heads * taps * P,
        "aggregation": C * taps * P,
        "channel_scale": C * P,
    }
    flops = int(sum(parts.values()))
    params = 4 * (C * C + C) + C + (9 * 2 * C * C + C) + (9 * C * 2 * taps + 2 * taps)
    if breakdown:
        return flops, params, parts
    return flops, params


ATTENTION_PATH = ("sampling", "logits", "softmax", "aggregation", "channel_scale")


def contributing_taps(rho: Union[Tensor, np.ndarray], eps: float = 1e-3) -> np.ndarray:
    """Number of taps with weight > eps, per (b, head, y, x)."""
    r = rho.data if isinstance(rho, Tensor) else np.asarray(rho)
    return (r > eps).sum(axis=2)


def participation_ratio(rho: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Effective tap count 1/sum(rho²), per (b, head, y, x)."""
    r = rho.data if isinstance(rho, Tensor) else np.asarray(rho)
    return 1.0 / (r * r).sum(axis=2)


def export_attention_csv(rho: Union[Tensor, np.ndarray], pixels: Iterable[Tuple[int, int]], path: Union[str, Path]):
    """Write rho at the given (y, x) pixels as rows ``b,head,tap,y,x,weight``."""
    r = rho.data if isinstance(rho, Tensor) else np.asarray(rho)
    B, h, U = r.shape[:3]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "head", "tap", "y", "x", "weight"])
        for y, x in pixels:
            for b in range(B):
                for hh in range(h):
                    for j in range(U):
                        w.writerow([b, hh, j, y, x, repr(float(r[b, hh, j, y, x]))])

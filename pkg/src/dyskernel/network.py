"""Symmetric registration model built from alternating DSB layers."""

from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .attention import DSBlock, count_flops_params, dsb_forward
from .autodiff import ShapeError, Tensor
from .params import LEAKY_GAIN, ParamStore, init_conv
from .sampling import BaseWindow


def identity_coords(batch: int, height: int, width: int) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return np.broadcast_to(np.stack([xs, ys])[None, None], (batch, 1, 2, height, width)).copy()


def warp(image, phi) -> Tensor:
    """Resample ``image`` (B×C×H×W) at p + phi(p); phi is B×2×H×W with channels (x, y).

    Coordinates falling outside the image are clamped to the border.
    """
    image, phi = ad.as_tensor(image), ad.as_tensor(phi)
    B, C, H, W = image.shape
    if phi.shape != (B, 2, H, W):
        raise ShapeError(f"warp: field {phi.shape} does not match image {image.shape}")
    coords = ad.add(ad.reshape(phi, (B, 1, 2, H, W)), identity_coords(B, H, W))
    coords = ad.clamp(coords, 0.0, np.array([W - 1, H - 1], dtype=np.float64).reshape(1, 1, 2, 1, 1))
    return ad.reshape(ad.grid_sample(image, coords), (B, C, H, W))


def upsample(x: Tensor, height: int, width: int) -> Tensor:
    """Bilinear (half-pixel aligned) resize of B×C×h×w to B×C×height×width."""
    B, C, h, w = x.shape
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0, w - 1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.broadcast_to(np.stack([gx, gy])[None, None], (B, 1, 2, height, width)).copy()
    return ad.reshape(ad.grid_sample(x, coords), (B, C, height, width))


def expected_displacement(rho: Tensor, coords: Tensor) -> Tensor:
    """Attention-weighted mean of (sample coord - position) per head: B×2h×H×W."""
    B, h, U, H, W = rho.shape
    rel = ad.sub(coords, identity_coords(B, H, W))
    moved = ad.mul(ad.reshape(rho, (B, h, U, 1, H, W)), ad.reshape(rel, (B, 1, U, 2, H, W)))
    return ad.reshape(ad.sum_(moved, axis=2), (B, 2 * h, H, W))


class RegistrationModel:
    """Encoder (two stride-2 convs) -> T alternating DSBs -> zero-initialised flow head.

    The flow is predicted at 1/4 resolution, upsampled and rescaled to pixels
    of the input grid.
    """

    def __init__(
        self,
        channels: int = 16,
        heads: int = 4,
        window: Optional[BaseWindow] = None,
        depth: int = 2,
        seed: int = 0,
    ):
        if channels < 2 or channels % 2:
            raise ValueError("channels must be an even number >= 2")
        self.channels = channels
        self.heads = heads
        self.window = window if window is not None else BaseWindow.square(3)
        self.depth = depth
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        init_conv(self.params, "enc.conv1", 1, channels // 2, 3, rng, LEAKY_GAIN)
        init_conv(self.params, "enc.conv2", channels // 2, channels, 3, rng, LEAKY_GAIN)
        self.blocks: List[DSBlock] = [
            DSBlock(self.params, f"dsb{t}", channels, heads, self.window, rng) for t in range(depth)
        ]
        self.params.add("flow.w", np.zeros((2, 2 * channels + 2 * heads * depth, 3, 3)))
        self.params.add("flow.b", np.zeros(2))

    def encode(self, x) -> Tensor:
        p = self.params
        h = ad.leaky_relu(ad.conv2d(x, p["enc.conv1.w"], p["enc.conv1.b"], stride=2, padding=1))
        return ad.leaky_relu(ad.conv2d(h, p["enc.conv2.w"], p["enc.conv2.b"], stride=2, padding=1))

    def flow_from_features(self, f_a: Tensor, f_b: Tensor, out_hw: Tuple[int, int], trace=None) -> Tensor:
        """Displacement field moving image a onto image b, B×2×H×W in input pixels."""
        layers = []
        for t, block in enumerate(self.blocks):
            if t % 2 == 0:
                f_a = ad.add(f_a, dsb_forward(f_a, f_b, block, trace=layers))
            else:
                f_b = ad.add(f_b, dsb_forward(f_b, f_a, block, trace=layers))
        if trace is not None:
            trace.extend(layers)
        p = self.params
        fused = [f_a, f_b] + [expected_displacement(tr.rho, tr.coords) for tr in layers]
        low = ad.conv2d(ad.concat(fused, axis=1), p["flow.w"], p["flow.b"], padding=1)
        H, W = out_hw
        scale = np.array([W / low.shape[3], H / low.shape[2]]).reshape(1, 2, 1, 1)
        return ad.mul(upsample(low, H, W), scale)

    def forward(self, x_a, x_b, trace=None) -> Tuple[Tensor, Tensor]:
        """(phi_a2b, phi_b2a); the second is the same network applied to swapped inputs."""
        x_a, x_b = ad.as_tensor(x_a), ad.as_tensor(x_b)
        if x_a.shape != x_b.shape:
            raise ShapeError(f"model_forward: image shapes differ {x_a.shape} vs {x_b.shape}")
        if x_a.ndim != 4 or x_a.shape[1] != 1:
            raise ShapeError(f"model_forward: expected B×1×H×W images, got {x_a.shape}")
        H, W = x_a.shape[2:]
        if H % 4 or W % 4:
            raise ShapeError(f"model_forward: H and W must be multiples of 4, got {H}×{W}")
        f_a, f_b = self.encode(x_a), self.encode(x_b)
        phi_a2b = self.flow_from_features(f_a, f_b, (H, W), trace)
        phi_b2a = self.flow_from_features(f_b, f_a, (H, W), trace)
        return phi_a2b, phi_b2a

    __call__ = forward

    def count_flops_params(self, image_shape: Tuple[int, int, int, int]) -> Tuple[int, int]:
        """Multiply-adds of one directional pass and total parameter count."""
        B, _, H, W = image_shape
        C = self.channels
        h1, w1 = (H + 1) // 2, (W + 1) // 2
        h2, w2 = (h1 + 1) // 2, (w1 + 1) // 2
        flops = 2 * B * 9 * (C // 2) * h1 * w1  # both images encoded
        flops += 2 * B * 9 * (C // 2) * C * h2 * w2
        block_flops, _ = count_flops_params((B, C, h2, w2), self.window.size, self.heads)
        flops += self.depth * block_flops
        desc = 2 * self.heads * self.depth
        flops += B * self.depth * 2 * self.heads * self.window.size * h2 * w2  # expected displacements
        flops += B * 9 * (2 * C + desc) * 2 * h2 * w2
        flops += B * 2 * 4 * H * W
        return int(flops), self.params.num_values()


def model_forward(x_a, x_b, model: RegistrationModel) -> Tuple[Tensor, Tensor]:
    return model.forward(x_a, x_b)

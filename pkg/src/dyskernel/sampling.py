"""Base sample windows, offset-deformed windows and bilinear interpolation."""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .params import LEAKY_GAIN, init_conv


@dataclass(frozen=True)
class BaseWindow:
    """Static tap layout. ``offsets`` is |U|×2 in (dx, dy) pixel units."""

    offsets: np.ndarray
    shape_kind: str = "custom"

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 2)
        if off.shape[0] == 0:
            raise ValueError("window must contain at least one tap")
        if len({tuple(r) for r in off.tolist()}) != off.shape[0]:
            raise ValueError("window taps must be unique")
        object.__setattr__(self, "offsets", off)

    @property
    def size(self) -> int:
        return self.offsets.shape[0]

    def __len__(self):
        return self.size

    @classmethod
    def square(cls, k: int) -> "BaseWindow":
        r = np.arange(k) - (k - 1) / 2.0
        dy, dx = np.meshgrid(r, r, indexing="ij")
        return cls(np.stack([dx.ravel(), dy.ravel()], axis=1), f"square-{k}")

    @classmethod
    def cross(cls, k: int) -> "BaseWindow":
        """Plus shape spanning k×k (2k-1 taps); k odd."""
        _require_odd(k)
        r = k // 2
        taps = [(0, 0)] + [(d, 0) for d in range(-r, r + 1) if d] + [(0, d) for d in range(-r, r + 1) if d]
        return cls(np.array(taps, dtype=np.float64), f"cross-{k}")

    @classmethod
    def diagonal(cls, k: int) -> "BaseWindow":
        """X shape spanning k×k (2k-1 taps); k odd."""
        _require_odd(k)
        r = k // 2
        taps = [(0, 0)] + [(d, d) for d in range(-r, r + 1) if d] + [(d, -d) for d in range(-r, r + 1) if d]
        return cls(np.array(taps, dtype=np.float64), f"diagonal-{k}")

    @classmethod
    def from_text(cls, text: str) -> "BaseWindow":
        """Parse "dy dx" pairs, one per line; '#' starts a comment."""
        taps = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'dy dx', got {line!r}")
            dy, dx = float(parts[0]), float(parts[1])
            taps.append((dx, dy))
        return cls(np.array(taps, dtype=np.float64).reshape(-1, 2), "custom")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "BaseWindow":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return "".join(f"{dy:g} {dx:g}\n" for dx, dy in self.offsets)

    @classmethod
    def parse(cls, spec: str) -> "BaseWindow":
        """``square-3``, ``cross-5``, ``diagonal-3`` (or ``3x3``), else a file path."""
        spec = spec.strip()
        if "x" in spec and spec.replace("x", "").isdigit():
            a, b = spec.split("x")
            if a != b:
                raise ValueError(f"only square k×k windows supported, got {spec}")
            return cls.square(int(a))
        kind, _, k = spec.partition("-")
        builders = {"square": cls.square, "cross": cls.cross, "diagonal": cls.diagonal, "diag": cls.diagonal}
        if kind in builders and k.isdigit():
            return builders[kind](int(k))
        if Path(spec).is_file():
            return cls.from_file(spec)
        raise ValueError(f"unknown window spec {spec!r}")


def _require_odd(k):
    if k < 1 or k % 2 == 0:
        raise ValueError(f"window extent must be odd and positive, got {k}")


def init_offset_net(params, prefix: str, channels: int, taps: int, rng: np.random.Generator):
    """Two 3×3 convs: 2C -> C (leaky-relu) -> 2|U|; the last layer starts at zero."""
    init_conv(params, f"{prefix}.conv1", 2 * channels, channels, 3, rng, LEAKY_GAIN)
    params.add(f"{prefix}.conv2.w", np.zeros((2 * taps, channels, 3, 3)))
    params.add(f"{prefix}.conv2.b", np.zeros(2 * taps))


def predict_offsets(f_a: Tensor, f_b: Tensor, offset_net: Dict[str, Tensor], prefix: str = "") -> Tensor:
    """Offsets B×|U|×2×H×W (pixel units, order dx, dy) from the fused features [f_a, f_b]."""
    if f_a.shape != f_b.shape:
        raise ShapeError(f"predict_offsets: feature shapes differ {f_a.shape} vs {f_b.shape}")
    w1, b1 = offset_net[prefix + "conv1.w"], offset_net[prefix + "conv1.b"]
    w2, b2 = offset_net[prefix + "conv2.w"], offset_net[prefix + "conv2.b"]
    if w1.shape[1] != 2 * f_a.shape[1]:
        raise ShapeError(
            f"predict_offsets: offset net expects {w1.shape[1]} input channels, "
            f"got 2×{f_a.shape[1]}"
        )
    x = ad.concat([f_a, f_b], axis=1)
    h = ad.leaky_relu(ad.conv2d(x, w1, b1, padding=1))
    o = ad.conv2d(h, w2, b2, padding=1)
    B, _, H, W = o.shape
    return ad.reshape(o, (B, w2.shape[0] // 2, 2, H, W))


def static_grid(base: BaseWindow, height: int, width: int) -> np.ndarray:
    """Undeformed absolute coords, |U|×2×H×W (order x, y)."""
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    pos = np.stack([xs, ys])[None]
    return pos + base.offsets[:, :, None, None]


def deform_window(base: BaseWindow, offsets: Union[Tensor, np.ndarray]) -> Tensor:
    """Absolute sample coords = position + tap + offset, clamped to the image box."""
    offsets = ad.as_tensor(offsets)
    B, U, two, H, W = offsets.shape
    if two != 2 or U != base.size:
        raise ShapeError(f"deform_window: offsets {offsets.shape} do not match window of {base.size} taps")
    coords = ad.add(offsets, static_grid(base, H, W)[None])
    bounds_hi = np.array([W - 1, H - 1], dtype=np.float64).reshape(1, 1, 2, 1, 1)
    return ad.clamp(coords, 0.0, bounds_hi)


def bilinear_sample(field: Tensor, coords: Tensor) -> Tensor:
    """Sample ``field`` (B×C×H×W) at ``coords`` (B×U×2×H×W) -> B×C×U×H×W."""
    return ad.grid_sample(field, coords)


def bilinear_weights(p: Tuple[float, float], height: int, width: int):
    """The four (row, col, weight) neighbours used to interpolate at p = (x, y)."""
    x = min(max(float(p[0]), 0.0), width - 1.0)
    y = min(max(float(p[1]), 0.0), height - 1.0)
    x0 = int(min(np.floor(x), max(width - 2, 0)))
    y0 = int(min(np.floor(y), max(height - 2, 0)))
    x1, y1 = min(x0 + 1, width - 1), min(y0 + 1, height - 1)
    wx, wy = x - x0, y - y0
    return [
        (y0, x0, (1 - wx) * (1 - wy)),
        (y0, x1, wx * (1 - wy)),
        (y1, x0, (1 - wx) * wy),
        (y1, x1, wx * wy),
    ]


def sample_deformed_kv(K: Tensor, V: Tensor, coords: Tensor) -> Tuple[Tensor, Tensor]:
    """Deformed keys and values at shared coordinates."""
    if K.shape[0] != V.shape[0] or K.shape[2:] != V.shape[2:]:
        raise ShapeError(f"sample_deformed_kv: K {K.shape} and V {V.shape} differ in B/H/W")
    return ad.grid_sample(K, coords), ad.grid_sample(V, coords)

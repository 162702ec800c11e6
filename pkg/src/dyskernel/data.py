"""Synthetic image pairs with known deformations, seed streams, and PGM I/O."""

import re
from pathlib import Path
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .losses import jacobian_determinant

PAIR_KINDS = ("translate", "rotate", "elastic")
LABELS = (1, 2, 3)
_INTENSITY = np.array([0.0, 0.2, 0.45, 0.75, 1.0])
_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> Tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seeds(seed: int, names=("init", "data", "shuffle", "eval")) -> dict:
    """Expand one integer seed into independent per-component seeds."""
    state = int(seed) & _MASK64
    out = {}
    for name in names:
        state, value = splitmix64(state)
        out[name] = value
    return out


class SyntheticPair(NamedTuple):
    x_a: np.ndarray
    x_b: np.ndarray
    seg_a: np.ndarray
    seg_b: np.ndarray
    phi_true: Optional[np.ndarray]


def _phantom(rng: np.random.Generator, size: Tuple[int, int], ring: float = 0.12):
    """Random head-like layout: (cx, cy, ax, ay, angle, tissue) ellipses in paint order.

    Tissue codes: 1 interior (unlabelled), 2 outer ring, 3 and 4 inner blobs.
    The ring is the outer ellipse minus a shrunken copy painted over it.
    """
    H, W = size
    s = min(H, W)
    cy, cx = (H - 1) / 2 + rng.uniform(-0.05, 0.05) * s, (W - 1) / 2 + rng.uniform(-0.05, 0.05) * s
    ax, ay, ang = rng.uniform(0.3, 0.38) * s, rng.uniform(0.3, 0.38) * s, rng.uniform(0, np.pi)
    t = ring * s
    shapes = [(cx, cy, ax, ay, ang, 2), (cx, cy, ax - t, ay - t, ang, 1)]
    for tissue in (3, 4):
        phase = rng.uniform(0, 2 * np.pi) + (tissue - 3) * np.pi
        r = rng.uniform(0.08, 0.12) * s
        shapes.append((
            cx + r * np.cos(phase), cy + r * np.sin(phase),
            rng.uniform(0.05, 0.09) * s, rng.uniform(0.05, 0.09) * s, rng.uniform(0, np.pi), tissue,
        ))
    return shapes


def _render(shapes, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    tissue = np.zeros(xs.shape, dtype=np.int64)
    for cx, cy, ax, ay, ang, code in shapes:
        c, s = np.cos(ang), np.sin(ang)
        u = (xs - cx) * c + (ys - cy) * s
        v = -(xs - cx) * s + (ys - cy) * c
        tissue[(u / ax) ** 2 + (v / ay) ** 2 <= 1.0] = code
    return tissue


def _labels(tissue: np.ndarray) -> np.ndarray:
    return np.maximum(tissue - 1, 0)


def _intensity(tissue: np.ndarray) -> np.ndarray:
    return np.clip(gaussian_filter(_INTENSITY[tissue], sigma=0.7, mode="constant"), 0.0, 1.0)


def elastic_field(rng: np.random.Generator, size: Tuple[int, int], max_disp: float = 3.0) -> np.ndarray:
    """Smooth random displacement, 2×H×W, scaled so max |phi| == max_disp and det J > 0."""
    H, W = size
    sigma = min(H, W) / 6.0
    for _ in range(100):
        raw = np.stack([gaussian_filter(rng.standard_normal((H, W)), sigma, mode="reflect") for _ in range(2)])
        raw += rng.standard_normal((2, 1, 1)) * np.abs(raw).max() * 0.5
        mag = np.sqrt((raw ** 2).sum(axis=0)).max()
        phi = raw * (max_disp / mag)
        if jacobian_determinant(phi).min() > 0.05:
            return phi
    raise RuntimeError("could not draw a folding-free elastic field")


def synthetic_pair(
    kind: str = "elastic",
    size: Tuple[int, int] = (32, 32),
    seed=0,
    magnitude: float = 3.0,
    shift: Optional[Tuple[float, float]] = None,
    angle: Optional[float] = None,
) -> SyntheticPair:
    """Phantom pair with x_b(p) = x_a(p + phi_true(p)), i.e. warp(x_a, phi_true) ≈ x_b.

    Arrays are 1×1×H×W (images in [0, 1], integer label maps) and phi_true is
    1×2×H×W with channels (x, y). ``magnitude`` bounds the displacement in
    pixels (rotation angle in degrees for ``rotate``). ``seed`` is anything
    ``numpy.random.default_rng`` accepts, including ``[stream, index]`` lists.
    """
    if kind not in PAIR_KINDS:
        raise ValueError(f"unknown pair kind {kind!r}; expected one of {PAIR_KINDS}")
    H, W = size
    if H < 16 or W < 16:
        raise ValueError(f"size must be at least 16×16, got {H}×{W}")
    rng = np.random.default_rng(seed)
    shapes = _phantom(rng, size)
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    if kind == "translate":
        t = np.asarray(shift if shift is not None else rng.uniform(-magnitude, magnitude, 2), dtype=np.float64)
        phi = np.stack([np.full((H, W), t[0]), np.full((H, W), t[1])])
    elif kind == "rotate":
        theta = np.deg2rad(angle if angle is not None else rng.uniform(-magnitude, magnitude) * 10.0 / 3.0)
        cx, cy = (W - 1) / 2, (H - 1) / 2
        c, s = np.cos(theta), np.sin(theta)
        rx = c * (xs - cx) - s * (ys - cy) + cx
        ry = s * (xs - cx) + c * (ys - cy) + cy
        phi = np.stack([rx - xs, ry - ys])
    else:
        phi = elastic_field(rng, size, magnitude)
    tissue_a = _render(shapes, xs, ys)
    tissue_b = _render(shapes, xs + phi[0], ys + phi[1])
    return SyntheticPair(
        _intensity(tissue_a)[None, None],
        _intensity(tissue_b)[None, None],
        _labels(tissue_a)[None, None],
        _labels(tissue_b)[None, None],
        phi[None],
    )


def read_pgm(path: Union[str, Path], raw: bool = False) -> np.ndarray:
    """Binary PGM (P5, 8- or 16-bit) -> float array in [0, 1], or integer grey levels if ``raw``."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    token_re = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")
    while len(tokens) < 4:
        m = token_re.match(buf, pos)
        if m is None:
            raise ValueError(f"{path}: malformed PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u1" if maxval < 256 else ">u2"
    if pos + width * height * np.dtype(dtype).itemsize > len(buf):
        raise ValueError(f"{path}: truncated PGM payload")
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    if raw:
        return data.reshape(height, width).astype(np.int64)
    return data.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path: Union[str, Path], image: np.ndarray, bits: int = 8):
    """Write a 2-D array with values in [0, 1] as binary PGM."""
    img = np.asarray(image, dtype=np.float64).squeeze()
    if img.ndim != 2:
        raise ValueError(f"write_pgm: expected a 2-D image, got shape {img.shape}")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(">u1" if bits == 8 else ">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + q.tobytes())

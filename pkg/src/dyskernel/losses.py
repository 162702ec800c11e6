"""Registration losses (similarity, smoothness, bidirectional) and evaluation metrics."""

from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .network import warp

SIM_KINDS = ("mse", "ncc", "soft-dice")
DICE_EPS = 1e-5
NCC_EPS = 1e-5


@dataclass
class LossConfig:
    sim_kind: str = "ncc"
    lambda_smooth: float = 1.0
    ncc_window: int = 5

    def __post_init__(self):
        if self.sim_kind not in SIM_KINDS:
            raise ValueError(f"unknown similarity kind {self.sim_kind!r}; expected one of {SIM_KINDS}")
        if self.lambda_smooth < 0:
            raise ValueError("lambda_smooth must be >= 0")
        if self.ncc_window < 3 or self.ncc_window % 2 == 0:
            raise ValueError("ncc_window must be an odd integer >= 3")


def local_ncc(target: Tensor, warped: Tensor, window: int) -> Tensor:
    """Per-pixel normalized cross-correlation over zero-padded window×window patches."""
    C = target.shape[1]
    ones = np.ones((1, 1, window, window))
    pad = window // 2
    n = float(window * window)

    def box(x):
        # channels are summed separately by reshaping them into the batch axis
        B, Cx, H, W = x.shape
        return ad.reshape(ad.conv2d(ad.reshape(x, (B * Cx, 1, H, W)), ones, padding=pad), (B, Cx, H, W))

    I, J = target, warped
    s_i, s_j = box(I), box(J)
    s_ii, s_jj, s_ij = box(ad.square(I)), box(ad.square(J)), box(ad.mul(I, J))
    cross = ad.sub(s_ij, ad.div(ad.mul(s_i, s_j), n))
    var_i = ad.sub(s_ii, ad.div(ad.square(s_i), n))
    var_j = ad.sub(s_jj, ad.div(ad.square(s_j), n))
    # rounding can leave tiny negative variances on flat patches
    var_i = ad.clamp(var_i, 0.0, np.inf)
    var_j = ad.clamp(var_j, 0.0, np.inf)
    return ad.div(cross, ad.sqrt(ad.add(ad.mul(var_i, var_j), NCC_EPS)))


def soft_dice_loss(p: Tensor, q: Tensor) -> Tensor:
    """1 - (2Σpq + ε)/(Σp + Σq + ε) per channel, averaged over channels."""
    axes = (0, 2, 3)
    inter = ad.sum_(ad.mul(p, q), axis=axes)
    denom = ad.add(ad.sum_(p, axis=axes), ad.sum_(q, axis=axes))
    dice = ad.div(ad.add(ad.mul(inter, 2.0), DICE_EPS), ad.add(denom, DICE_EPS))
    return ad.sub(1.0, ad.mean(dice))


def similarity_loss(target, warped, cfg: LossConfig) -> Tensor:
    target, warped = ad.as_tensor(target), ad.as_tensor(warped)
    if target.shape != warped.shape:
        raise ShapeError(f"similarity_loss: shapes differ {target.shape} vs {warped.shape}")
    if cfg.sim_kind == "mse":
        return ad.mean(ad.square(ad.sub(target, warped)))
    if cfg.sim_kind == "ncc":
        return ad.sub(1.0, ad.mean(local_ncc(target, warped, cfg.ncc_window)))
    if cfg.sim_kind == "soft-dice":
        return soft_dice_loss(target, warped)
    raise ValueError(f"unknown similarity kind {cfg.sim_kind!r}")


def smoothness_loss(phi) -> Tensor:
    """Mean over positions of the squared forward-difference gradient norm of phi."""
    phi = ad.as_tensor(phi)
    dx = ad.sub(phi[:, :, :, 1:], phi[:, :, :, :-1])
    dy = ad.sub(phi[:, :, 1:, :], phi[:, :, :-1, :])
    return ad.add(
        ad.mean(ad.sum_(ad.square(dx), axis=1)),
        ad.mean(ad.sum_(ad.square(dy), axis=1)),
    )


def registration_loss(target, moving, phi, cfg: LossConfig, target_seg=None, moving_seg=None):
    """Directional loss ``sim + λ·smooth``; returns (total, sim, smooth).

    For ``soft-dice`` the similarity is computed on the (soft) label maps,
    which must then be supplied.
    """
    phi = ad.as_tensor(phi)
    if cfg.sim_kind == "soft-dice":
        if target_seg is None or moving_seg is None:
            raise ValueError("soft-dice similarity needs label maps for both images")
        sim = similarity_loss(target_seg, warp(moving_seg, phi), cfg)
    else:
        sim = similarity_loss(target, warp(moving, phi), cfg)
    smooth = smoothness_loss(phi)
    return ad.add(sim, ad.mul(smooth, cfg.lambda_smooth)), sim, smooth


def bidirectional_loss(x_a, x_b, phi_a2b, phi_b2a, cfg: LossConfig, seg_a=None, seg_b=None, parts: bool = False):
    """Sum of the a->b and b->a registration losses.

    With ``parts=True`` returns ``(total, sim, smooth)`` where sim and smooth
    are summed over both directions.
    """
    l_ab, s_ab, m_ab = registration_loss(x_b, x_a, phi_a2b, cfg, seg_b, seg_a)
    l_ba, s_ba, m_ba = registration_loss(x_a, x_b, phi_b2a, cfg, seg_a, seg_b)
    total = ad.add(l_ab, l_ba)
    if parts:
        return total, ad.add(s_ab, s_ba), ad.add(m_ab, m_ba)
    return total


def one_hot(labels: np.ndarray, label_set: Iterable[int]) -> np.ndarray:
    """Integer map B×1×H×W (or H×W) -> float B×L×H×W indicator channels."""
    lab = np.asarray(labels)
    if lab.ndim == 2:
        lab = lab[None, None]
    return np.concatenate([(lab == L).astype(np.float64) for L in label_set], axis=1)


def dice_score(mask_a, mask_b, labels: Iterable[int]) -> Tuple[Dict[int, float], float]:
    """Per-label Dice in percent and their mean over labels present in either mask."""
    labels = list(labels)
    if not labels:
        raise ValueError("dice_score: empty label set")
    a, b = np.asarray(mask_a), np.asarray(mask_b)
    if a.shape != b.shape:
        raise ShapeError(f"dice_score: mask shapes differ {a.shape} vs {b.shape}")
    per = {}
    for L in labels:
        in_a, in_b = a == L, b == L
        total = int(in_a.sum() + in_b.sum())
        if total == 0:
            continue
        per[L] = 200.0 * int(np.logical_and(in_a, in_b).sum()) / total
    mean = float(np.mean(list(per.values()))) if per else float("nan")
    return per, mean


def jacobian_determinant(phi) -> np.ndarray:
    """det(I + ∇phi) on interior pixels via central differences; phi is [B×]2×H×W."""
    p = phi.data if isinstance(phi, Tensor) else np.asarray(phi, dtype=np.float64)
    if p.ndim == 3:
        p = p[None]
    if p.shape[-1] < 3 or p.shape[-2] < 3:
        raise ValueError(f"field too small for central differences: {p.shape}")
    ux, uy = p[:, 0], p[:, 1]
    dux_dx = (ux[:, 1:-1, 2:] - ux[:, 1:-1, :-2]) / 2
    dux_dy = (ux[:, 2:, 1:-1] - ux[:, :-2, 1:-1]) / 2
    duy_dx = (uy[:, 1:-1, 2:] - uy[:, 1:-1, :-2]) / 2
    duy_dy = (uy[:, 2:, 1:-1] - uy[:, :-2, 1:-1]) / 2
    return (1 + dux_dx) * (1 + duy_dy) - dux_dy * duy_dx


def jacobian_negative_fraction(phi) -> float:
    """Percentage of interior pixels with det(I + ∇phi) <= 0."""
    det = jacobian_determinant(phi)
    return 100.0 * float((det <= 0).sum()) / det.size

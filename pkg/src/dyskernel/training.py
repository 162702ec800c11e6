"""Training loop, pair sources and evaluation used by the command line."""

import csv
import logging
import math
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .data import LABELS, SyntheticPair, derive_seeds, read_pgm, synthetic_pair
from .losses import LossConfig, bidirectional_loss, dice_score, jacobian_negative_fraction, one_hot
from .network import RegistrationModel, warp
from .params import optimizer_step
from .sampling import BaseWindow

logger = logging.getLogger(__name__)

LOG_HEADER = ("step", "loss", "sim", "smooth")


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value


def build_model(cfg: RunConfig) -> RegistrationModel:
    seeds = derive_seeds(cfg.seed or 0)
    return RegistrationModel(cfg.channels, cfg.heads, BaseWindow.parse(cfg.window), cfg.depth, seed=seeds["init"])


def loss_config(cfg: RunConfig) -> LossConfig:
    return LossConfig(cfg.sim_kind, cfg.lambda_smooth, cfg.ncc_window)


def synthetic_stream(cfg: RunConfig, stream: str, count: int) -> Iterator[SyntheticPair]:
    """``count`` pairs from the named seed stream ("data" for training, "eval" for held-out)."""
    base = derive_seeds(cfg.seed or 0)[stream]
    for i in range(count):
        yield synthetic_pair(cfg.pair_kind, (cfg.size, cfg.size), seed=[base, i], magnitude=cfg.magnitude)


def load_pair_dir(data_dir) -> List[tuple]:
    """Pairs stored as ``<id>_a.pgm`` / ``<id>_b.pgm`` with optional ``<id>_a_seg.pgm`` label maps.

    Returns (id, SyntheticPair) tuples; missing label maps are ``None``.
    """
    root = Path(data_dir)
    out = []
    for path_a in sorted(root.glob("*_a.pgm")):
        pid = path_a.name[: -len("_a.pgm")]
        path_b = root / f"{pid}_b.pgm"
        if not path_b.exists():
            logger.warning("pair %s: missing %s; skipped", pid, path_b.name)
            continue
        segs = [root / f"{pid}_{s}_seg.pgm" for s in ("a", "b")]
        seg_a, seg_b = (read_pgm(p, raw=True)[None, None] if p.exists() else None for p in segs)
        pair = SyntheticPair(read_pgm(path_a)[None, None], read_pgm(path_b)[None, None], seg_a, seg_b, None)
        out.append((pid, pair))
    return out


def train_step(model: RegistrationModel, pair: SyntheticPair, lcfg: LossConfig, cfg: RunConfig):
    model.params.zero_grad()
    phi_ab, phi_ba = model(pair.x_a, pair.x_b)
    seg_a = one_hot(pair.seg_a, LABELS) if lcfg.sim_kind == "soft-dice" else None
    seg_b = one_hot(pair.seg_b, LABELS) if lcfg.sim_kind == "soft-dice" else None
    total, sim, smooth = bidirectional_loss(pair.x_a, pair.x_b, phi_ab, phi_ba, lcfg, seg_a, seg_b, parts=True)
    if not math.isfinite(total.item()):
        return total.item(), sim.item(), smooth.item(), False
    total.backward()
    optimizer_step(model.params, cfg.lr, cfg.betas, cfg.weight_decay)
    return total.item(), sim.item(), smooth.item(), True


def train(cfg: RunConfig, model: Optional[RegistrationModel] = None, log_path=None, pairs=None) -> RegistrationModel:
    """Run ``cfg.steps`` AdamW steps, one pair per step; optionally stream a CSV log.

    Raises :class:`NonFiniteLoss` after logging the offending step.
    """
    model = model if model is not None else build_model(cfg)
    lcfg = loss_config(cfg)
    if pairs is None:
        pairs = synthetic_stream(cfg, "data", cfg.steps)
    fh = open(log_path, "w", newline="") if log_path is not None else None
    try:
        writer = csv.writer(fh) if fh else None
        if writer:
            writer.writerow(LOG_HEADER)
        for step, pair in zip(range(cfg.steps), pairs):
            loss, sim, smooth, ok = train_step(model, pair, lcfg, cfg)
            if writer:
                writer.writerow([step, repr(loss), repr(sim), repr(smooth)])
            if not ok:
                raise NonFiniteLoss(step, loss)
    finally:
        if fh:
            fh.close()
    return model


def warp_labels(seg: np.ndarray, phi, labels: Sequence[int] = LABELS) -> np.ndarray:
    """Warp an integer label map by interpolating one-hot channels and taking the argmax."""
    channels = (0,) + tuple(labels)
    soft = warp(one_hot(seg, channels), phi).data
    return np.asarray(channels)[np.argmax(soft, axis=1)][:, None]


def evaluate_pair(model: RegistrationModel, pair: SyntheticPair, lcfg: LossConfig, labels=LABELS) -> dict:
    with ad.no_grad():
        phi_ab, phi_ba = model(pair.x_a, pair.x_b)
        loss = bidirectional_loss(pair.x_a, pair.x_b, phi_ab, phi_ba, lcfg,
                                  *((one_hot(pair.seg_a, labels), one_hot(pair.seg_b, labels))
                                    if lcfg.sim_kind == "soft-dice" else ()))
    moved = warp_labels(pair.seg_a, phi_ab, labels)
    per, mean = dice_score(moved, pair.seg_b, labels)
    _, initial = dice_score(pair.seg_a, pair.seg_b, labels)
    return {
        "dsc_mean": mean,
        "dsc_per_label": [per.get(L, float("nan")) for L in labels],
        "dsc_initial": initial,
        "jac_neg_pct": jacobian_negative_fraction(phi_ab),
        "loss": loss.item(),
        "phi_a2b": phi_ab.data,
    }


def evaluate(model: RegistrationModel, pairs, cfg: RunConfig, labels=LABELS) -> List[tuple]:
    """(pair_id, metrics) for every labelled pair; unlabelled pairs are skipped with a warning."""
    lcfg = loss_config(cfg)
    rows = []
    for pid, pair in pairs:
        if pair.seg_a is None or pair.seg_b is None:
            logger.warning("pair %s has no label maps; skipped", pid)
            continue
        rows.append((pid, evaluate_pair(model, pair, lcfg, labels)))
    return rows


def mean_std(values: Sequence[float], digits: int = 1) -> str:
    """``mean±std`` with population std, as in result tables."""
    v = np.asarray(values, dtype=np.float64)
    return f"{v.mean():.{digits}f}±{v.std():.{digits}f}"


def write_eval_csv(rows, path, labels=LABELS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "dsc_mean"] + [f"dsc_{L}" for L in labels] + ["jac_neg_pct", "loss"])
        for pid, m in rows:
            w.writerow([pid, repr(m["dsc_mean"])] + [repr(x) for x in m["dsc_per_label"]]
                       + [repr(m["jac_neg_pct"]), repr(m["loss"])])


def summarize(rows) -> dict:
    return {
        "pairs": len(rows),
        "dsc_initial": mean_std([m["dsc_initial"] for _, m in rows]),
        "dsc": mean_std([m["dsc_mean"] for _, m in rows]),
        "jac_neg_pct": mean_std([m["jac_neg_pct"] for _, m in rows], digits=2),
    }

"""Finite-difference verification of every registered adjoint rule."""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import OPS, Tensor, finite_diff_grad

RTOL, ATOL, STEP = 1e-4, 1e-6, 1e-4
E2E_RTOL = 1e-3
# Bilinear sampling is piecewise linear in its coordinates. Parameters that move
# every sample point (encoder biases, say) cross some cell edge within ±1e-4, so
# the composite check probes with a step that stays inside the smooth pieces.
E2E_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_err: float
    max_abs_err: float
    passed: bool


def _away(rng, shape, lo, hi, avoid=(), margin=0.02):
    """Uniform values in [lo, hi] that stay ``margin`` away from the kink points ``avoid``."""
    x = rng.uniform(lo, hi, shape)
    for k in avoid:
        near = np.abs(x - k) < margin
        x[near] = k + np.where(x[near] >= k, margin, -margin) * 2
    return x


def _pair_shapes(rng):
    shape = (2, 3, 4)
    if rng.random() < 0.5:
        return shape, shape
    other = list(shape)
    other[rng.integers(0, 3)] = 1
    return shape, tuple(other)


def _binary(rng, positive_b=False):
    sa, sb = _pair_shapes(rng)
    b = rng.standard_normal(sb)
    if positive_b:
        b = np.sign(b + (b == 0)) * rng.uniform(0.5, 2.0, sb)
    return [rng.standard_normal(sa), b], {}


def _grid_coords(rng, shape, H, W):
    # integer cell plus an interior fraction so no probe crosses a cell edge
    B, U, _, Ho, Wo = shape
    x = rng.integers(0, W - 1, (B, U, Ho, Wo)) + rng.uniform(0.1, 0.9, (B, U, Ho, Wo))
    y = rng.integers(0, H - 1, (B, U, Ho, Wo)) + rng.uniform(0.1, 0.9, (B, U, Ho, Wo))
    return np.stack([x, y], axis=2)


def _sum_axes(rng):
    return [None, 0, 1, (1, 2), (0, 2)][rng.integers(0, 5)]


# Each case builder returns (inputs, attrs) for one random instance.
CASES: Dict[str, Callable[[np.random.Generator], tuple]] = {
    "add": lambda r: _binary(r),
    "sub": lambda r: _binary(r),
    "mul": lambda r: _binary(r),
    "div": lambda r: _binary(r, positive_b=True),
    "neg": lambda r: ([r.standard_normal((3, 4))], {}),
    "exp": lambda r: ([r.uniform(-2, 2, (3, 4))], {}),
    "square": lambda r: ([r.standard_normal((3, 4))], {}),
    "sqrt": lambda r: ([r.uniform(0.5, 2.0, (3, 4))], {}),
    "leaky-relu": lambda r: ([_away(r, (3, 4), -1, 1, avoid=(0.0,))], {"slope": 0.2}),
    "clamp": lambda r: ([_away(r, (3, 4), -1, 1, avoid=(-0.5, 0.5))], {"lo": -0.5, "hi": 0.5}),
    "sum": lambda r: ([r.standard_normal((2, 3, 4))], {"axis": _sum_axes(r), "keepdims": bool(r.integers(0, 2))}),
    "mean": lambda r: ([r.standard_normal((2, 3, 4))], {"axis": _sum_axes(r), "keepdims": bool(r.integers(0, 2))}),
    "softmax-over-axis": lambda r: ([r.standard_normal((2, 3, 4)) * 2], {"axis": int(r.integers(0, 3))}),
    "reshape-heads": lambda r: ([r.standard_normal((2, 6, 3, 3))], {"shape": (2, 3, 2, 3, 3)}),
    "slice": lambda r: ([r.standard_normal((2, 3, 5))], {"index": (slice(None), slice(1, None), slice(None, -1))}),
    "concat-channels": lambda r: (
        [r.standard_normal((2, c, 3, 3)) for c in r.integers(1, 4, size=int(r.integers(2, 4)))],
        {"axis": 1},
    ),
    "conv2d": lambda r: (
        [r.standard_normal((2, 3, 6, 6)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)],
        {"stride": int(r.integers(1, 3)), "padding": int(r.integers(0, 2))},
    ),
    "sqrt-scaled-dot": lambda r: (
        [r.standard_normal((1, 2, 2, 3, 3)), r.standard_normal((1, 2, 2, 4, 3, 3))],
        {"scale": 1.0 / np.sqrt(2.0)},
    ),
    "matmul-per-position": lambda r: (
        [r.uniform(0, 1, (1, 2, 4, 3, 3)), r.standard_normal((1, 2, 2, 4, 3, 3))],
        {},
    ),
    "grid-sample-bilinear": lambda r: (
        [r.standard_normal((2, 2, 4, 5)), _grid_coords(r, (2, 3, 2, 3, 3), 4, 5)],
        {},
    ),
}


def _compare(analytic, numeric, rtol, atol):
    diff = np.abs(analytic - numeric)
    rel = diff / (np.abs(numeric) + atol)
    ok = bool(np.all(diff <= atol + rtol * np.abs(numeric)))
    return float(rel.max(initial=0.0)), float(diff.max(initial=0.0)), ok


def check_op(kind: str, instances: int = 10, seed: int = 0, rtol=RTOL, atol=ATOL, step=STEP) -> CheckResult:
    """Compare backward() with central differences for ``instances`` random inputs of ``kind``."""
    if kind not in CASES:
        raise ValueError(f"no finite-difference case registered for op {kind!r}")
    fn = OPS[kind]
    rng = np.random.default_rng([seed, sorted(CASES).index(kind)])
    worst_rel = worst_abs = 0.0
    passed = True
    for _ in range(instances):
        arrays, attrs = CASES[kind](rng)
        inputs = [Tensor(a, requires_grad=True) for a in arrays]
        out_shape = fn.apply(*inputs, **attrs).shape
        probe = rng.standard_normal(out_shape)

        def f(_):
            return ad.sum_(ad.mul(fn.apply(*inputs, **attrs), probe))

        f(None).backward()
        for t in inputs:
            analytic = t.grad if t.grad is not None else np.zeros(t.shape)
            numeric = finite_diff_grad(f, t, step)
            rel, err, ok = _compare(analytic, numeric, rtol, atol)
            worst_rel, worst_abs, passed = max(worst_rel, rel), max(worst_abs, err), passed and ok
    return CheckResult(kind, instances, worst_rel, worst_abs, passed)


def _entry_fd(f, t: Tensor, indices, step):
    flat = t.data.reshape(-1)
    out = np.zeros(len(indices))
    with ad.no_grad():
        for j, i in enumerate(indices):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            out[j] = (fp - fm) / (2 * step)
    return out


def check_end_to_end(size: int = 16, seed: int = 0, probes: int = 6, rtol=E2E_RTOL, atol=ATOL, step=E2E_STEP) -> CheckResult:
    """Bidirectional registration loss of a small model with non-zero flow and offset heads."""
    from .data import synthetic_pair
    from .losses import LossConfig, bidirectional_loss
    from .network import RegistrationModel

    model = RegistrationModel(channels=8, heads=2, depth=2, seed=seed)
    rng = np.random.default_rng(seed + 1)
    # perturb the zero-initialised heads so the sampling paths carry gradient,
    # and the biases so no leaky-relu input sits exactly on its kink
    for name, p in model.params.items():
        if name.startswith("flow.") or ".offset.conv2" in name or name.endswith(".b"):
            p.data[...] = rng.normal(0.0, 0.05, p.shape)
    pair = synthetic_pair("elastic", (size, size), seed=seed)
    cfg = LossConfig("ncc", lambda_smooth=1.0, ncc_window=5)

    def f():
        pa, pb = model(pair.x_a, pair.x_b)
        return bidirectional_loss(pair.x_a, pair.x_b, pa, pb, cfg)

    model.params.zero_grad()
    f().backward()
    worst_rel = worst_abs = 0.0
    passed = True
    for name, p in model.params.items():
        idx = rng.choice(p.size, size=min(probes, p.size), replace=False)
        numeric = _entry_fd(f, p, idx, step)
        analytic = p.grad.reshape(-1)[idx]
        rel, err, ok = _compare(analytic, numeric, rtol, atol)
        worst_rel, worst_abs, passed = max(worst_rel, rel), max(worst_abs, err), passed and ok
    return CheckResult("end-to-end loss", len(model.params), worst_rel, worst_abs, passed)


def run_gradcheck(
    ops: Optional[Sequence[str]] = None, instances: int = 10, seed: int = 0, end_to_end: bool = True
) -> List[CheckResult]:
    results = [check_op(k, instances, seed) for k in (ops if ops is not None else sorted(CASES))]
    if end_to_end:
        results.append(check_end_to_end(seed=seed))
    return results


def format_report(results: Sequence[CheckResult]) -> str:
    lines = [f"{'check':<24} {'n':>4} {'max_rel_err':>12} {'max_abs_err':>12}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<24} {r.instances:>4} {r.max_rel_err:>12.3e} {r.max_abs_err:>12.3e}  {status}")
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)

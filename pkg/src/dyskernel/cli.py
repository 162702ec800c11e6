"""``dyskernel <subcommand> [--config PATH] [--key value ...]``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

import csv
import logging
import statistics
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError
from .complexity import sweep
from .config import TASKS, ConfigError, RunConfig, emit_config, resolve_config
from .data import read_pgm, write_pgm
from .gradcheck import format_report, run_gradcheck
from .network import RegistrationModel, warp
from .params import save_container
from .sampling import BaseWindow
from .training import (
    NonFiniteLoss, build_model, evaluate, load_pair_dir, summarize, synthetic_stream, train, write_eval_csv,
)

logger = logging.getLogger("dyskernel")

USAGE = "usage: dyskernel {" + ",".join(TASKS) + "} [--config PATH] [--key value ...]"


class UsageError(ValueError):
    pass


def parse_argv(argv: List[str]):
    """Split argv into (task, config path, flag dict). Flags are ``--key value`` or ``--key=value``."""
    if not argv or argv[0] in ("-h", "--help"):
        raise UsageError(USAGE)
    task, rest = argv[0], argv[1:]
    if task not in TASKS:
        raise UsageError(f"unknown subcommand {task!r}\n{USAGE}")
    flags, path, i = {}, None, 0
    while i < len(rest):
        arg = rest[i]
        if not arg.startswith("--"):
            raise UsageError(f"unexpected argument {arg!r}")
        key, eq, value = arg[2:].partition("=")
        if not eq:
            if i + 1 >= len(rest):
                raise UsageError(f"option --{key} needs a value")
            value = rest[i + 1]
            i += 1
        i += 1
        if key == "config":
            path = value
        else:
            flags[key] = value
    return task, path, flags


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(cfg: RunConfig) -> RegistrationModel:
    model = build_model(cfg)
    model.params.load(cfg.checkpoint)
    return model


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    (out / "config.txt").write_text(emit_config(cfg))
    model = train(cfg, log_path=out / "train_log.csv")
    model.params.save(cfg.checkpoint)
    print(f"trained {cfg.steps} steps; checkpoint {cfg.checkpoint}, log {out / 'train_log.csv'}")
    return 0


def cmd_register(cfg: RunConfig) -> int:
    if not cfg.x_a or not cfg.x_b:
        raise ConfigError("register needs --x-a and --x-b image paths")
    x_a, x_b = read_pgm(cfg.x_a)[None, None], read_pgm(cfg.x_b)[None, None]
    if x_a.shape != x_b.shape:
        raise ShapeError(f"image shapes differ: x_a {x_a.shape[2:]} vs x_b {x_b.shape[2:]}")
    model = _load_model(cfg)
    with ad.no_grad():
        phi_ab, phi_ba = model(x_a, x_b)
        x_ab, x_ba = warp(x_a, phi_ab).data, warp(x_b, phi_ba).data
    out = _out_dir(cfg)
    save_container(out / "phi_a2b.dysk", {"phi": phi_ab.data})
    save_container(out / "phi_b2a.dysk", {"phi": phi_ba.data})
    write_pgm(out / "x_a2b.pgm", x_ab, bits=16)
    write_pgm(out / "x_b2a.pgm", x_ba, bits=16)
    print(f"wrote phi_a2b.dysk, phi_b2a.dysk, x_a2b.pgm, x_b2a.pgm to {out}")
    return 0


def _eval_pairs(cfg: RunConfig):
    if cfg.data_dir:
        return load_pair_dir(cfg.data_dir)
    return [(f"{i:04d}", p) for i, p in enumerate(synthetic_stream(cfg, "eval", cfg.pairs))]


def cmd_eval(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    rows = evaluate(model, _eval_pairs(cfg), cfg)
    if not rows:
        raise ConfigError("no labelled pairs to evaluate")
    out = _out_dir(cfg)
    write_eval_csv(rows, out / "eval.csv")
    s = summarize(rows)
    text = (f"pairs {s['pairs']}\ndsc_initial {s['dsc_initial']}\ndsc {s['dsc']}\n"
            f"jac_neg_pct {s['jac_neg_pct']}\n")
    (out / "eval_summary.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = run_gradcheck(seed=cfg.seed or 0)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 2


def cmd_analyze_complexity(cfg: RunConfig) -> int:
    # smallest N with at least one candidate partner
    n0 = max(1, int(np.ceil(2.0 / cfg.alpha)))
    rows = sweep(range(n0, cfg.n_max + 1), cfg.alpha, cfg.labels)
    out = _out_dir(cfg)
    with open(out / "complexity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "log10_H", "log10_C", "R"])
        w.writerows([n, repr(h), repr(c), repr(r)] for n, h, c, r in rows)
    print(f"wrote {len(rows)} rows to {out / 'complexity.csv'}")
    return 0


def bench_rows(cfg: RunConfig):
    """(k, |U|, flops, params, wall_ms) for square k×k windows; wall time is the median of runs."""
    rows = []
    pair = next(synthetic_stream(cfg, "eval", 1))
    for k in cfg.kernel_sizes:
        window = BaseWindow.square(k)
        model = RegistrationModel(cfg.channels, cfg.heads, window, cfg.depth, seed=0)
        flops, params = model.count_flops_params(pair.x_a.shape)
        times = []
        with ad.no_grad():
            for _ in range(cfg.bench_runs):
                t0 = time.perf_counter()
                model(pair.x_a, pair.x_b)
                times.append((time.perf_counter() - t0) * 1e3)
        rows.append((k, window.size, flops, params, statistics.median(times)))
    return rows


def cmd_bench(cfg: RunConfig) -> int:
    rows = bench_rows(cfg)
    out = _out_dir(cfg)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "|U|", "flops", "params", "wall_ms"])
        w.writerows([k, u, f, p, f"{ms:.3f}"] for k, u, f, p, ms in rows)
    for row in rows:
        print("k={} |U|={} flops={} params={} wall_ms={:.3f}".format(*row))
    return 0


COMMANDS = {
    "train": cmd_train,
    "register": cmd_register,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "analyze-complexity": cmd_analyze_complexity,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else argv
    try:
        task, path, flags = parse_argv(argv)
        cfg = resolve_config(path, flags, task=task).validate()
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[task](cfg)
    except NonFiniteLoss as e:
        print(f"error: {e}; training aborted", file=sys.stderr)
        return 2
    except (ConfigError, ShapeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # checkpoint/container shape or format problems
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

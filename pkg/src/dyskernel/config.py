"""Run configuration: flat ``key = value`` files, environment and flag overrides."""

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

TASKS = ("train", "register", "eval", "gradcheck", "analyze-complexity", "bench")
SEED_ENV = "DYSK_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "train"
    size: int = 32
    channels: int = 16
    heads: int = 4
    window: str = "square-3"
    depth: int = 2
    sim_kind: str = "ncc"
    lambda_smooth: float = 1.0
    ncc_window: int = 5
    lr: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-2
    steps: int = 200
    seed: Optional[int] = None
    pair_kind: str = "elastic"
    magnitude: float = 3.0
    pairs: int = 50
    data_dir: str = ""
    checkpoint: str = "checkpoint.dysk"
    out_dir: str = "out"
    x_a: str = ""
    x_b: str = ""
    kernel_sizes: Tuple[int, ...] = (3, 5, 7)
    bench_runs: int = 5
    alpha: float = 1.0
    labels: int = 4
    n_max: int = 256

    def validate(self) -> "RunConfig":
        from .losses import SIM_KINDS
        from .data import PAIR_KINDS
        from .sampling import BaseWindow

        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.task in TASKS, f"task must be one of {TASKS}, got {self.task!r}")
        need(self.size >= 16 and self.size % 4 == 0, f"size must be a multiple of 4 and >= 16, got {self.size}")
        need(self.channels >= 2 and self.channels % 2 == 0, f"channels must be even and >= 2, got {self.channels}")
        need(self.heads >= 1 and self.channels % self.heads == 0,
             f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        need(self.depth >= 1, f"depth must be >= 1, got {self.depth}")
        need(self.sim_kind in SIM_KINDS, f"sim_kind must be one of {SIM_KINDS}, got {self.sim_kind!r}")
        need(self.lambda_smooth >= 0, "lambda_smooth must be >= 0")
        need(self.ncc_window >= 3 and self.ncc_window % 2 == 1, "ncc_window must be odd and >= 3")
        need(self.lr > 0, "lr must be > 0")
        need(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), "betas must be two values in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.steps >= 0, "steps must be >= 0")
        need(self.pair_kind in PAIR_KINDS, f"pair_kind must be one of {PAIR_KINDS}")
        need(self.magnitude >= 0, "magnitude must be >= 0")
        need(self.pairs >= 1, "pairs must be >= 1")
        need(all(k >= 1 and k % 2 == 1 for k in self.kernel_sizes), "kernel_sizes must be odd and positive")
        need(self.bench_runs >= 5, "bench_runs must be >= 5")
        need(self.alpha > 0, "alpha must be > 0")
        need(self.labels >= 2, "labels must be >= 2")
        need(self.n_max >= 1, "n_max must be >= 1")
        if self.task in ("train", "eval"):
            need(self.seed is not None, f"a seed is required for {self.task} (config, {SEED_ENV} or --seed)")
        try:
            BaseWindow.parse(self.window)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return self


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, text: str):
    kind = _FIELDS[name].type
    text = text.strip()
    try:
        if name == "seed":
            return None if text in ("", "none", "None") else int(text)
        if name == "betas":
            return tuple(float(v) for v in text.split(","))
        if name == "kernel_sizes":
            return tuple(int(v) for v in text.split(","))
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> Dict[str, object]:
    """Parse ``key = value`` lines ('#' starts a comment) into typed overrides."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def emit_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def load_config(path: Union[str, Path]) -> RunConfig:
    return RunConfig(**parse_config(Path(path).read_text()))


def resolve_config(
    path: Optional[Union[str, Path]] = None,
    flags: Optional[Dict[str, str]] = None,
    env: Optional[Dict[str, str]] = None,
    task: Optional[str] = None,
) -> RunConfig:
    """Layer defaults < config file < DYSK_SEED < command-line flags."""
    env = os.environ if env is None else env
    values = parse_config(Path(path).read_text()) if path else {}
    if env.get(SEED_ENV, "").strip():
        values["seed"] = _parse_value("seed", env[SEED_ENV])
    for key, text in (flags or {}).items():
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"unknown option --{key.replace('_', '-')}")
        values[key] = _parse_value(key, text)
    if task is not None:
        values["task"] = task
    return dataclasses.replace(RunConfig(), **values)

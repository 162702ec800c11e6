"""Named parameter storage, AdamW updates and the ``DYSK`` binary container."""

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterator, Tuple, Union

import numpy as np

from .autodiff import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"DYSK"
FORMAT_VERSION = 1


class ParamStore:
    """Ordered mapping of parameter name -> Tensor plus per-parameter AdamW state."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.state: Dict[str, dict] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def subset(self, prefix: str) -> Dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def num_values(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def clear_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state_dict(self, arrays: Dict[str, np.ndarray], strict: bool = True):
        missing = [k for k in self._params if k not in arrays]
        extra = [k for k in arrays if k not in self._params]
        if strict and (missing or extra):
            raise KeyError(f"checkpoint mismatch: missing={missing} unexpected={extra}")
        for name, arr in arrays.items():
            if name not in self._params:
                continue
            p = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {p.shape}"
                )
            p.data[...] = arr

    def save(self, path: Union[str, Path]):
        save_container(path, self.state_dict())

    def load(self, path: Union[str, Path], strict: bool = True):
        self.load_state_dict(load_container(path), strict=strict)


LEAKY_GAIN = float(np.sqrt(2.0 / (1.0 + 0.2 ** 2)))


def init_conv(params: ParamStore, name: str, cin: int, cout: int, k: int, rng: np.random.Generator, gain: float = 1.0):
    """Weights ~ U(-b, b) with b = gain·sqrt(3/fan_in) (variance gain²/fan_in); zero bias."""
    bound = gain * np.sqrt(3.0 / (cin * k * k))
    params.add(f"{name}.w", rng.uniform(-bound, bound, size=(cout, cin, k, k)))
    params.add(f"{name}.b", np.zeros(cout))


def optimizer_step(
    params: ParamStore,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.01,
    eps: float = 1e-8,
):
    """One AdamW update with decoupled weight decay.

    Parameters whose ``grad`` is ``None`` are skipped with a warning.
    """
    b1, b2 = betas
    for name, p in params.items():
        if p.grad is None:
            logger.warning("parameter %s has no gradient; skipped", name)
            continue
        st = params.state.setdefault(name, {"step": 0, "m": np.zeros_like(p.data), "v": np.zeros_like(p.data)})
        st["step"] += 1
        t = st["step"]
        g = p.grad
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * g * g
        m_hat = st["m"] / (1 - b1 ** t)
        v_hat = st["v"] / (1 - b2 ** t)
        if weight_decay:
            p.data *= 1 - lr * weight_decay
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def save_container(path: Union[str, Path], arrays: Dict[str, np.ndarray]):
    """Write named float64 arrays as ``DYSK`` records (little-endian)."""
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_container(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a DYSK container")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    pos = 8
    out = OrderedDict()
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(buf):
                raise ValueError("payload overruns file")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise ValueError(f"{path}: truncated container") from exc
    return out

"""Parameter storage, MLP application, optimizers, schedules, checkpoints."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"ILTN"
CHECKPOINT_VERSION = 1


@dataclass
class MlpSpec:
    """Architecture descriptor: layer widths plus activations.

    ``sizes`` lists the input width followed by each layer's output width.
    Hidden layers use ReLU; ``output`` is one of ``identity``, ``sigmoid``,
    ``tanh`` or ``softmax``.
    """

    name: str
    sizes: list[int]
    output: str = "identity"

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.sizes) - 1):
            names.append(f"{self.name}.w{i}")
            names.append(f"{self.name}.b{i}")
        return names


class ParamSet:
    """Named learnable tensors plus per-parameter AdamW state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def add_mlp(self, spec: MlpSpec, rng: np.random.Generator) -> None:
        """Weights ~ N(0, 1/fan_in), biases zero."""
        for i in range(len(spec.sizes) - 1):
            fan_in, fan_out = spec.sizes[i], spec.sizes[i + 1]
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
            self.add(f"{spec.name}.w{i}", w)
            self.add(f"{spec.name}.b{i}", np.zeros(fan_out))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def state_bytes(self) -> int:
        return sum(t.data.nbytes for t in self._params.values())


def mlp_apply(params: ParamSet, spec: MlpSpec, x: Tensor) -> Tensor:
    """Forward pass of the MLP described by ``spec``; recorded on the tape."""
    if x.shape[-1] != spec.sizes[0]:
        raise ValueError(
            f"mlp {spec.name!r}: input width {x.shape[-1]} does not match "
            f"first layer width {spec.sizes[0]}"
        )
    flat = x if x.data.ndim == 2 else ad.reshape(x, (-1, spec.sizes[0]))
    h = flat
    n_layers = len(spec.sizes) - 1
    for i in range(n_layers):
        h = ad.matmul(h, params[f"{spec.name}.w{i}"]) + params[f"{spec.name}.b{i}"]
        if i < n_layers - 1:
            h = ad.relu(h)
    if spec.output == "sigmoid":
        h = ad.sigmoid(h)
    elif spec.output == "tanh":
        h = ad.tanh(h)
    elif spec.output == "softmax":
        h = ad.softmax(h, axis=-1)
    elif spec.output != "identity":
        raise ValueError(f"unknown output squashing {spec.output!r}")
    if x.data.ndim != 2:
        h = ad.reshape(h, x.shape[:-1] + (spec.sizes[-1],))
    return h


def adamw_step(params: ParamSet, grads: dict[Tensor, np.ndarray], lr: float,
               betas: tuple[float, float] = (0.9, 0.999),
               weight_decay: float = 0.01, eps: float = 1e-8,
               names: list[str] | None = None) -> None:
    """One AdamW update with decoupled weight decay, in place.

    ``names`` restricts the update to a subset of parameters; every named
    parameter must have a gradient in ``grads``.
    """
    b1, b2 = betas
    params.step_count += 1
    t = params.step_count
    for name, p in params.items():
        if names is not None and name not in names:
            continue
        g = grads.get(p)
        if g is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
        m = params._m[name]
        v = params._v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * weight_decay * p.data
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(values: Tensor, grad: np.ndarray, lr: float) -> Tensor:
    """values - lr * grad as a fresh constant-free Tensor (out of graph)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != values.data.shape:
        raise ValueError(f"sgd shape mismatch: values {values.data.shape} vs grad {grad.shape}")
    return Tensor(values.data - lr * grad)


@dataclass
class LrSchedule:
    """Linear warmup to ``peak_lr`` then cosine decay to zero."""

    peak_lr: float
    warmup_epochs: int
    total_epochs: int

    def lr_at(self, epoch: int) -> float:
        if epoch < 0 or epoch > self.total_epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs}]")
        if epoch <= self.warmup_epochs:
            if self.warmup_epochs == 0:
                return self.peak_lr
            return self.peak_lr * epoch / self.warmup_epochs
        span = self.total_epochs - self.warmup_epochs
        frac = (epoch - self.warmup_epochs) / span
        return self.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def save_checkpoint(path, params: ParamSet) -> None:
    """Binary parameter dump; bit-exact round trip.

    Layout: magic ``ILTN``, u32 version, u32 entry count, then per entry
    u32 name length, name bytes (utf-8), u32 rank, u32 dims, float64
    values. All integers and floats little-endian.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(params.names())))
        for name, t in params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path) -> ParamSet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic: {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        params = ParamSet()
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            params.add(name, values.copy())
    return params

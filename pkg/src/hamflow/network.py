"""Feedforward networks with gated skip connections, and parameter storage.

The MLP design: a stem projection, a stack of residual blocks
``h <- g * tanh(W h + b) + (1 - g) * h`` with a trainable scalar gate g per
block, and a linear head.  Gates start at 0 and the head starts at zero, so
a freshly initialized network is exactly the zero map and every block is the
identity on its skip path.

Parameter checkpoints use a small self-describing binary container:
magic ``HFPC``, a little-endian uint32 format version, an int64 seed
(-1 when unset), a uint32 array count, then per array a uint16 name length,
the utf-8 name, a uint8 rank and uint64 dims, followed by the concatenated
float64 little-endian C-order payloads in directory order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, matmul, mul, sub, tanh
from .errors import ParameterError

_MAGIC = b"HFPC"
_VERSION = 1


class ParameterSet:
    """Named trainable arrays, stored as autodiff leaf tensors."""

    def __init__(self, arrays=None, seed=None):
        self._tensors = {}
        self.seed = seed
        for name, arr in (arrays or {}).items():
            self._tensors[name] = Tensor(np.array(arr, dtype=float))

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def n_params(self):
        return sum(t.value.size for t in self._tensors.values())

    def add(self, name, array):
        if name in self._tensors:
            raise ParameterError(f"duplicate parameter name '{name}'")
        self._tensors[name] = Tensor(np.array(array, dtype=float))

    def merge(self, other):
        for name, tensor in other.items():
            if name in self._tensors:
                raise ParameterError(f"duplicate parameter name '{name}'")
            self._tensors[name] = tensor
        return self

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def grads(self):
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.value))
            for name, t in self._tensors.items()
        }

    def values(self):
        return {name: t.value.copy() for name, t in self._tensors.items()}

    def assign(self, values):
        for name, arr in values.items():
            t = self._tensors[name]
            arr = np.asarray(arr, dtype=float)
            if arr.shape != t.value.shape:
                raise ParameterError(f"shape mismatch for '{name}'")
            t.value = arr.copy()

    def check_finite(self):
        for name, t in self._tensors.items():
            if not np.all(np.isfinite(t.value)):
                raise ParameterError(f"parameter '{name}' contains non-finite values")

    def save(self, path):
        names = self.names()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<q", -1 if self.seed is None else int(self.seed)))
            fh.write(struct.pack("<I", len(names)))
            for name in names:
                raw = name.encode("utf-8")
                arr = self._tensors[name].value
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<B", arr.ndim))
                for d in arr.shape:
                    fh.write(struct.pack("<Q", d))
            for name in names:
                arr = np.ascontiguousarray(self._tensors[name].value, dtype="<f8")
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ParameterError(f"{path} is not a parameter container")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _VERSION:
                raise ParameterError(f"unsupported container version {version}")
            (seed,) = struct.unpack("<q", fh.read(8))
            (count,) = struct.unpack("<I", fh.read(4))
            directory = []
            for _ in range(count):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode("utf-8")
                (rank,) = struct.unpack("<B", fh.read(1))
                shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
                directory.append((name, shape))
            out = cls(seed=None if seed == -1 else seed)
            for name, shape in directory:
                n = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
                out.add(name, data)
        return out


@dataclass(frozen=True)
class MLPConfig:
    """Shape of a gated MLP; hidden widths must be positive."""

    in_width: int
    out_width: int
    hidden: tuple = (128, 128, 128, 128)
    activation: str = "tanh"
    gated: bool = True

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1 or any(w < 1 for w in self.hidden):
            raise ParameterError("network widths must be >= 1")
        if self.activation != "tanh":
            raise ParameterError(f"unsupported activation '{self.activation}'")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(config, seed, prefix="net"):
    """Glorot-uniform weights, zero biases and gates, zero output head."""
    rng = np.random.default_rng(seed)
    arrays = {}
    widths = (config.in_width,) + tuple(config.hidden)
    arrays[f"{prefix}.w0"] = _glorot(rng, widths[0], widths[1])
    arrays[f"{prefix}.b0"] = np.zeros(widths[1])
    for i in range(1, len(config.hidden)):
        arrays[f"{prefix}.w{i}"] = _glorot(rng, widths[i], widths[i + 1])
        arrays[f"{prefix}.b{i}"] = np.zeros(widths[i + 1])
        if config.gated and widths[i] == widths[i + 1]:
            arrays[f"{prefix}.g{i}"] = np.zeros(())
    arrays[f"{prefix}.wout"] = np.zeros((widths[-1], config.out_width))
    arrays[f"{prefix}.bout"] = np.zeros(config.out_width)
    return ParameterSet(arrays, seed=seed)


def mlp_apply(config, params, x, prefix="net"):
    """Forward pass on a batch tensor of shape (n, in_width)."""
    h = tanh(add(matmul(x, params[f"{prefix}.w0"]), params[f"{prefix}.b0"]))
    for i in range(1, len(config.hidden)):
        z = tanh(add(matmul(h, params[f"{prefix}.w{i}"]), params[f"{prefix}.b{i}"]))
        gate_name = f"{prefix}.g{i}"
        if gate_name in params:
            g = params[gate_name]
            h = add(mul(g, z), mul(sub(1.0, g), h))
        else:
            h = z
    return add(matmul(h, params[f"{prefix}.wout"]), params[f"{prefix}.bout"])


def mlp_apply_with_tangent(config, params, x, x_dot, prefix="net"):
    """Forward pass together with the directional derivative along x_dot.

    The tangent is propagated as tape operations, so reverse mode through
    the returned pair yields exact parameter gradients of both the value
    and its input-directional derivative.
    """
    z = add(matmul(x, params[f"{prefix}.w0"]), params[f"{prefix}.b0"])
    h = tanh(z)
    h_dot = mul(sub(1.0, mul(h, h)), matmul(x_dot, params[f"{prefix}.w0"]))
    for i in range(1, len(config.hidden)):
        z = tanh(add(matmul(h, params[f"{prefix}.w{i}"]), params[f"{prefix}.b{i}"]))
        z_dot = mul(sub(1.0, mul(z, z)), matmul(h_dot, params[f"{prefix}.w{i}"]))
        gate_name = f"{prefix}.g{i}"
        if gate_name in params:
            g = params[gate_name]
            one_minus = sub(1.0, g)
            h = add(mul(g, z), mul(one_minus, h))
            h_dot = add(mul(g, z_dot), mul(one_minus, h_dot))
        else:
            h, h_dot = z, z_dot
    out = add(matmul(h, params[f"{prefix}.wout"]), params[f"{prefix}.bout"])
    out_dot = matmul(h_dot, params[f"{prefix}.wout"])
    return out, out_dot

"""Named parameter registry and checkpoint serialisation.

Every learnable tensor lives in a :class:`ParameterStore` under a stable
dotted name (``acn.conv.w``, ``fus.gate.b_a``, ...).  Checkpoints are a
single binary file: little-endian float64 payloads per tensor plus a SHA-256
content checksum, so a load can prove it got exactly what was saved.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .autograd import Tensor

_MAGIC = b"HBCK"
_VERSION = 1


class CheckpointError(Exception):
    """Raised for malformed or corrupted checkpoint files."""


class ParameterStore:
    """Ordered mapping name -> parameter Tensor with a gradient slot."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.ascontiguousarray(value, dtype=self.dtype))
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        """Copy of every parameter array, keyed by name."""
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._tensors):
            missing = set(self._tensors) - set(state)
            extra = set(state) - set(self._tensors)
            raise CheckpointError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, arr in state.items():
            t = self._tensors[k]
            if arr.shape != t.data.shape:
                raise CheckpointError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def first_nonfinite(self) -> str | None:
        for k, t in self._tensors.items():
            if not np.all(np.isfinite(t.data)):
                return k
        return None

    # -- checkpoint file format ------------------------------------------

    def save(self, path) -> str:
        """Write all parameters; returns the hex content checksum."""
        payload = bytearray()
        payload += _MAGIC
        payload += struct.pack("<HI", _VERSION, len(self._tensors))
        for name, t in self._tensors.items():
            nb = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data, dtype="<f8")
            payload += struct.pack("<H", len(nb)) + nb
            payload += struct.pack("<B", arr.ndim)
            payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
            payload += arr.tobytes()
        digest = hashlib.sha256(bytes(payload)).digest()
        Path(path).write_bytes(bytes(payload) + digest)
        return digest.hex()

    @staticmethod
    def read_state(path) -> dict[str, np.ndarray]:
        """Parse a checkpoint file, verifying its checksum."""
        blob = Path(path).read_bytes()
        if len(blob) < 42 or blob[:4] != _MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        payload, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(payload).digest() != digest:
            raise CheckpointError(f"checksum mismatch in {path}")
        version, count = struct.unpack_from("<HI", payload, 4)
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 10
        state: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", payload, off)
            off += 2
            name = payload[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", payload, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(payload, dtype="<f8", count=size, offset=off).reshape(shape)
            off += 8 * size
            state[name] = arr.copy()
        return state

    def load(self, path) -> None:
        self.load_state(self.read_state(path))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    """Uniform Glorot initialisation."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape if shape is not None else (fan_in, fan_out))

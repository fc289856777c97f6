"""Flat parameter vectors with named-tensor layouts, plus checkpoint I/O.

A ``ThetaParams`` stores every learnable tensor of a regularizer in one
flat float64 vector together with an ordered layout of (name, shape)
entries; ``view(name)`` returns a reshaped view into the flat buffer so
in-place projections (clamping, rescaling) act on the vector directly.

Checkpoints are flat binary files: magic ``BILEV01``, then the layout
descriptor (names and shapes as little-endian 32-bit integers), then the
raw float64 parameter data, little-endian. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ThetaParams", "save_checkpoint", "load_checkpoint", "CheckpointError"]

_MAGIC = b"BILEV01"


@dataclass
class ThetaParams:
    flat: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    # scratch space for derived per-theta objects (e.g. FFT plans); the
    # flat vector is treated as immutable once a cache entry exists
    runtime_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.ndim != 1:
            raise ValueError("flat parameter vector must be 1-D")
        self.layout = tuple((name, tuple(int(d) for d in shape)) for name, shape in self.layout)
        names = [name for name, _ in self.layout]
        if len(set(names)) != len(names):
            raise ValueError("layout names must be unique")
        total = sum(int(np.prod(shape)) for _, shape in self.layout)
        if total != self.flat.size:
            raise ValueError(f"flat size {self.flat.size} != layout size {total}")
        offsets = {}
        off = 0
        for name, shape in self.layout:
            offsets[name] = (off, shape)
            off += int(np.prod(shape))
        self._offsets = offsets

    @classmethod
    def from_tensors(cls, tensors: list[tuple[str, np.ndarray]]) -> "ThetaParams":
        """Pack named tensors into a flat vector (row-major order)."""
        layout = tuple((name, tuple(arr.shape)) for name, arr in tensors)
        if tensors:
            flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for _, a in tensors])
        else:
            flat = np.zeros(0)
        return cls(flat=flat, layout=layout)

    def view(self, name: str) -> np.ndarray:
        """Reshaped view into the flat buffer; writes propagate."""
        off, shape = self._offsets[name]
        return self.flat[off : off + int(np.prod(shape))].reshape(shape)

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: self.view(name) for name, _ in self.layout}

    def copy(self) -> "ThetaParams":
        return ThetaParams(flat=self.flat.copy(), layout=self.layout)

    def with_flat(self, flat: np.ndarray) -> "ThetaParams":
        return ThetaParams(flat=np.asarray(flat, dtype=np.float64), layout=self.layout)

    @property
    def size(self) -> int:
        return self.flat.size


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(theta: ThetaParams, path) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<i", len(theta.layout)))
        for name, shape in theta.layout:
            raw = name.encode("utf-8")
            f.write(struct.pack("<i", len(raw)))
            f.write(raw)
            f.write(struct.pack("<i", len(shape)))
            for d in shape:
                f.write(struct.pack("<i", d))
        f.write(theta.flat.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> ThetaParams:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (n_entries,) = struct.unpack("<i", f.read(4))
        layout: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<i", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<i", f.read(4))
            shape = struct.unpack(f"<{ndim}i", f.read(4 * ndim)) if ndim else ()
            layout.append((name, tuple(shape)))
        total = sum(int(np.prod(shape)) for _, shape in layout)
        data = f.read(8 * total)
        if len(data) != 8 * total:
            raise CheckpointError("truncated checkpoint payload")
        flat = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return ThetaParams(flat=flat, layout=tuple(layout))

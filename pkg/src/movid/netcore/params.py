"""Named float64 parameter tensors and the checkpoint format.

A checkpoint is a directory holding ``params.bin`` (little-endian float64
tensors back to back), ``params.manifest`` (one ``name shape offset`` line per
tensor, offsets in bytes) and ``config.cfg``.
"""
from __future__ import annotations

import zlib
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import CheckpointShapeMismatch

MANIFEST_HEADER = "# name shape byte_offset"


class ParamStore:
    """Ordered mapping of parameter name to array with fixed shapes."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self._arrays[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name in self._arrays and self._arrays[name].shape != value.shape:
            raise CheckpointShapeMismatch(
                f"{name}: shape {value.shape} != {self._arrays[name].shape}")
        self._arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._arrays.items()}

    def size(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self._arrays.items()}

    def add_glorot(self, name: str, shape: tuple[int, int], seed: int) -> None:
        limit = np.sqrt(6.0 / (shape[0] + shape[1]))
        self._arrays[name] = _named_rng(seed, name).uniform(-limit, limit, size=shape)

    def add_const(self, name: str, shape: tuple[int, ...], value: float = 0.0) -> None:
        self._arrays[name] = np.full(shape, float(value))

    def equal(self, other: "ParamStore") -> bool:
        return (self.names() == other.names()
                and all(np.array_equal(self[k], other[k]) for k in self))


def _named_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by name so adding or reordering parameters never changes the others
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def save_params(params: ParamStore, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER]
    offset = 0
    with open(directory / "params.bin", "wb") as fh:
        for name, arr in params.items():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(data)
            shape = "x".join(str(s) for s in arr.shape) or "scalar"
            lines.append(f"{name} {shape} {offset}")
            offset += len(data)
    (directory / "params.manifest").write_text("\n".join(lines) + "\n")
    return directory


def load_params(directory, expected: dict[str, tuple[int, ...]] | None = None) -> ParamStore:
    directory = Path(directory)
    blob = (directory / "params.bin").read_bytes()
    arrays = {}
    for line in (directory / "params.manifest").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, shape_txt, offset_txt = line.split()
        shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split("x"))
        count = int(np.prod(shape)) if shape else 1
        start = int(offset_txt)
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape).copy()
    if expected is not None:
        missing = set(expected) ^ set(arrays)
        if missing:
            raise CheckpointShapeMismatch(f"parameter sets differ: {sorted(missing)}")
        for name, shape in expected.items():
            if arrays[name].shape != tuple(shape):
                raise CheckpointShapeMismatch(
                    f"{name}: checkpoint shape {arrays[name].shape}, config expects {tuple(shape)}")
    return ParamStore(arrays)

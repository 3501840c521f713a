"""
vega-align - Parameter sets

Ordered, named collections of leaf tensors shared by the encoder, the
alignment projector and the action head: freezing, fingerprinting,
state export and deterministic initialization helpers.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterator

import numpy as np

from .errors import ShapeError
from .rng import Xoshiro256
from .tensor import Tensor


def xavier_uniform(rng: Xoshiro256, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


class ParameterSet:
    """Named leaf tensors in a fixed canonical order."""

    def __init__(self, tensors: dict[str, Tensor], frozen: bool = False) -> None:
        self.tensors: dict[str, Tensor] = dict(tensors)
        for name, t in self.tensors.items():
            t.name = name
        self.frozen = False
        if frozen:
            self.freeze()
        else:
            self.unfreeze()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def trainable(self) -> list[Tensor]:
        return [] if self.frozen else self.parameters()

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def freeze(self) -> None:
        """Stop gradient allocation; values only change through load_state."""
        self.frozen = True
        for t in self.tensors.values():
            t.requires_grad = False
            t.grad = None

    def unfreeze(self) -> None:
        self.frozen = False
        for t in self.tensors.values():
            t.requires_grad = True

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def digest(self) -> str:
        """sha256 over names, shapes and float64 bytes in canonical order."""
        h = hashlib.sha256()
        for name, t in self.tensors.items():
            h.update(name.encode())
            h.update(repr(t.shape).encode())
            h.update(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = [name for name in self.tensors if name not in state]
        if missing:
            raise ShapeError(f"state is missing parameters: {missing}")
        for name, t in self.tensors.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != t.shape:
                raise ShapeError(
                    f"parameter {name!r}: expected shape {t.shape}, got {values.shape}"
                )
            t.values = values.copy()

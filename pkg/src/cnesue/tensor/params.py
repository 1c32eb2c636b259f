"""Named parameter collection."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class ModelParams:
    """Ordered mapping from parameter name to trainable :class:`Tensor`."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
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

    def names(self) -> list[str]:
        return list(self._params)

    def with_prefix(self, prefix: str) -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def count(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        from ..errors import DimensionError

        if strict:
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            if missing or extra:
                raise KeyError(f"parameter sets differ: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in self._params:
                continue
            t = self._params[name]
            if arr.shape != t.shape:
                raise DimensionError(f"parameter {name}: checkpoint shape {arr.shape} vs model shape {t.shape}")
            t.data = np.array(arr, dtype=self.dtype)

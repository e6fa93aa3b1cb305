"""
params.py - ordered, named parameter storage.

A ``ParamStore`` maps dotted names (``"ventral.block03.attn.qkv.weight"``) to
``Tensor`` leaves.  Iteration order is insertion order, which fixes the order
of optimizer updates, checkpoint directories and finite-difference sampling.

Two stores may hold the *same* ``Tensor`` object under different names; that
is how shared encoder blocks are represented (one storage, two readers).
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor

__all__ = ["ParamStore"]


class ParamStore(Mapping[str, Tensor]):
    """Insertion-ordered ``name -> Tensor`` map with unique names."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in items:
            self.add(name, tensor)

    # -- Mapping protocol -------------------------------------------------
    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"unknown parameter '{name}'") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        return f"ParamStore({len(self)} tensors, {self.num_elements()} values)"

    # -- mutation ---------------------------------------------------------
    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name '{name}'")
        tensor.name = tensor.name or name
        self._params[name] = tensor
        return tensor

    def create(self, name: str, data: np.ndarray) -> Tensor:
        """Register a fresh trainable leaf holding *data*."""
        return self.add(name, Tensor(data, requires_grad=True, name=name))

    def replace(self, name: str, tensor: Tensor) -> None:
        """Point *name* at another tensor, keeping its position in the order."""
        if name not in self._params:
            raise KeyError(f"unknown parameter '{name}'")
        if tensor.shape != self._params[name].shape:
            raise ContractError(
                f"cannot replace '{name}': shape {tensor.shape} != {self._params[name].shape}"
            )
        self._params[name] = tensor

    # -- queries ----------------------------------------------------------
    def with_prefix(self, prefix: str) -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def num_elements(self) -> int:
        return int(sum(t.size for t in self.unique_tensors()))

    def unique_tensors(self) -> list[Tensor]:
        """Tensors in order, each storage counted once."""
        seen: set[int] = set()
        out: list[Tensor] = []
        for tensor in self._params.values():
            if id(tensor) not in seen:
                seen.add(id(tensor))
                out.append(tensor)
        return out

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of every value, keyed by name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def copy(self) -> "ParamStore":
        """Deep copy (fresh storages, sharing is not preserved)."""
        return ParamStore(
            (name, Tensor(t.data.copy(), requires_grad=t.requires_grad, dtype=t.dtype, name=name))
            for name, t in self._params.items()
        )

    # -- composition ------------------------------------------------------
    @classmethod
    def merged(cls, *stores: "ParamStore") -> "ParamStore":
        """All names of all stores, in order; names must not collide."""
        out = cls()
        for store in stores:
            for name, tensor in store.items():
                out.add(name, tensor)
        return out

    @classmethod
    def deduplicated(cls, *stores: "ParamStore") -> "ParamStore":
        """One entry per storage: a tensor already seen under another name is skipped."""
        out = cls()
        seen: set[int] = set()
        for store in stores:
            for name, tensor in store.items():
                if id(tensor) in seen:
                    continue
                seen.add(id(tensor))
                out.add(name, tensor)
        return out

"""Named, component-partitioned parameter collections.

Parameters are grouped by component tag: "backbone", "expert<ii>" (two-digit
index so lexicographic order equals numeric order), or "router". Freezing and
flattening operate on these tags. Iteration order is always lexicographic by
name, which fixes the layout of flattened gradient vectors and checkpoint
payloads.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator

import numpy as np

from .autodiff import Tensor
from .errors import DuplicateNameError, MoedtError, UnknownComponentError

BACKBONE = "backbone"
ROUTER = "router"


def expert_component(i: int) -> str:
    return f"expert{i:02d}"


class ParamSet:
    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._component: dict[str, str] = {}
        self._trainable: dict[str, bool] = {}

    # -- construction -------------------------------------------------------

    def add(self, name: str, t: Tensor, component: str, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise DuplicateNameError(name)
        self._entries[name] = t
        self._component[name] = component
        self._trainable[name] = trainable
        t.requires_grad = trainable
        return t

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name in self.names():
            t = self._entries[name]
            out.add(name, Tensor(t.data.copy(), requires_grad=t.requires_grad),
                    self._component[name], self._trainable[name])
        return out

    # -- access -------------------------------------------------------------

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._entries[name]

    def component_of(self, name: str) -> str:
        return self._component[name]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def components(self) -> set[str]:
        return set(self._component.values())

    def names_in(self, components: Iterable[str]) -> list[str]:
        comps = set(components)
        return [n for n in self.names() if self._component[n] in comps]

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if self._trainable[n]]

    # -- scopes -------------------------------------------------------------

    def scope_names(self, scope: str) -> list[str]:
        """Parameter names for a measurement scope.

        "all_backbone" is every backbone tensor, "ffn_only" restricts to the
        backbone FFN sublayers, and any component tag ("expert03", "router")
        selects that component.
        """
        if scope == "all_backbone":
            return self.names_in([BACKBONE])
        if scope == "ffn_only":
            return [n for n in self.names_in([BACKBONE]) if ".ffn." in n]
        if scope in self.components():
            return self.names_in([scope])
        raise MoedtError(f"unknown scope {scope!r}")

    # -- freezing -----------------------------------------------------------

    def set_frozen_components(self, frozen: Iterable[str]) -> None:
        """Make exactly `frozen` components non-trainable, all others trainable."""
        frozen = set(frozen)
        unknown = frozen - self.components()
        if unknown:
            raise UnknownComponentError(sorted(unknown))
        for name in self._entries:
            flag = self._component[name] not in frozen
            self._trainable[name] = flag
            self._entries[name].requires_grad = flag

    @contextmanager
    def trainable_scope(self, names: Iterable[str]):
        """Temporarily mark `names` trainable, restoring flags on exit.

        Lets read-only gradient probes measure frozen tensors without
        changing the training state.
        """
        names = list(names)
        saved = [(n, self._trainable[n], self._entries[n].requires_grad) for n in names]
        try:
            for n in names:
                self._trainable[n] = True
                self._entries[n].requires_grad = True
            yield
        finally:
            for n, tr, rg in saved:
                self._trainable[n] = tr
                self._entries[n].requires_grad = rg

    # -- flatten / unflatten ------------------------------------------------

    def flatten(self, names: Iterable[str] | None = None) -> np.ndarray:
        sel = list(names) if names is not None else self.names()
        if not sel:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate([self._entries[n].data.reshape(-1) for n in sel])

    def unflatten(self, vec: np.ndarray, names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
        sel = list(names) if names is not None else self.names()
        total = sum(self._entries[n].data.size for n in sel)
        if vec.size != total:
            raise MoedtError(f"unflatten: vector length {vec.size} != expected {total}")
        out = {}
        pos = 0
        for n in sel:
            size = self._entries[n].data.size
            out[n] = vec[pos:pos + size].reshape(self._entries[n].data.shape)
            pos += size
        return out

    def assign(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            t = self._entries[name]
            if arr.shape != t.data.shape:
                raise MoedtError(f"assign: shape mismatch for {name}")
            t.data = np.ascontiguousarray(arr, dtype=t.data.dtype)

    # -- bit-level views ----------------------------------------------------

    def component_bytes(self, component: str) -> bytes:
        if component not in self.components():
            raise UnknownComponentError([component])
        return b"".join(np.ascontiguousarray(self._entries[n].data).tobytes()
                        for n in self.names_in([component]))

"""Counting of encrypted operations.

Every homomorphic primitive reports into the currently active
:class:`OpCounter`.  Counters can be nested (a per-iteration counter
feeding a per-run counter) and increments can be attributed to a named
path such as ``"gradient"`` so that the cost of individual protocol
stages stays separable.

The active counter is tracked through a ``contextvars.ContextVar``,
which gives thread/task-local isolation without locks; within one
context all increments are plain integer adds.
"""

from __future__ import annotations

import contextlib
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, Optional


@dataclass
class OpCounter:
    """Monotonic tallies of homomorphic operations.

    ``by_label`` holds one sub-counter per attribution label (for
    example the ``"gradient"`` path); sub-counters have no labels of
    their own.  A counter constructed with a ``parent`` mirrors every
    increment into the parent as well.
    """

    enc_mul: int = 0
    enc_add: int = 0
    encryptions: int = 0
    decryptions: int = 0
    parent: Optional["OpCounter"] = None
    by_label: dict[str, "OpCounter"] = field(default_factory=dict)

    _FIELDS = ("enc_mul", "enc_add", "encryptions", "decryptions")

    def tick(self, kind: str, n: int = 1) -> None:
        if n < 0:
            raise ValueError("counter increments must be non-negative")
        setattr(self, kind, getattr(self, kind) + n)
        label = _label.get()
        if label is not None:
            sub = self.by_label.get(label)
            if sub is None:
                sub = OpCounter()
                self.by_label[label] = sub
            setattr(sub, kind, getattr(sub, kind) + n)
        if self.parent is not None:
            self.parent.tick(kind, n)

    def labeled(self, label: str) -> "OpCounter":
        """Sub-counter for an attribution label (zeros if never used)."""
        return self.by_label.get(label, OpCounter())

    def snapshot(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self._FIELDS}

    def total_ops(self) -> int:
        return self.enc_mul + self.enc_add + self.encryptions + self.decryptions


#: Fallback counter used when no run-specific counter is installed.
GLOBAL_COUNTER = OpCounter()

_active: ContextVar[OpCounter] = ContextVar("vflsim_op_counter", default=GLOBAL_COUNTER)
_label: ContextVar[Optional[str]] = ContextVar("vflsim_op_label", default=None)


def active_counter() -> OpCounter:
    return _active.get()


def tick(kind: str, n: int = 1) -> None:
    _active.get().tick(kind, n)


@contextlib.contextmanager
def use_counter(counter: OpCounter) -> Iterator[OpCounter]:
    """Install ``counter`` as the destination for homomorphic-op ticks."""
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)


@contextlib.contextmanager
def count_as(label: str) -> Iterator[None]:
    """Attribute all ticks inside the block to ``label`` as well."""
    token = _label.set(label)
    try:
        yield
    finally:
        _label.reset(token)

"""Extended-real node values with explicit infinity flags."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

FINITE, PLUS_INF, MINUS_INF = "finite", "+inf", "-inf"
_FLAGS = (FINITE, PLUS_INF, MINUS_INF)


class FlaggedValueError(ArithmeticError):
    """Raised when a flagged (infinite) entry is used as a number."""


@dataclass(frozen=True)
class RiskValue:
    """One scalar per node of a time slice; infinite entries carry a flag, never a float inf.

    ``nodes`` are node indices of the tree, ``raw`` holds the finite numbers (0.0 under a flag).
    """

    nodes: np.ndarray
    raw: np.ndarray
    flags: tuple[str, ...]

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=int)
        raw = np.asarray(self.raw, dtype=float)
        flags = tuple(self.flags)
        if not (len(nodes) == len(raw) == len(flags)):
            raise ValueError("nodes, values and flags must align")
        if bad := [f for f in flags if f not in _FLAGS]:
            raise ValueError(f"unknown flag {bad[0]!r}")
        if not np.isfinite(raw).all():
            raise ValueError("infinite numbers must be expressed through flags")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "raw", np.where([f == FINITE for f in flags], raw, 0.0))
        object.__setattr__(self, "flags", flags)

    @classmethod
    def finite(cls, nodes: Sequence[int], values: Sequence[float]) -> "RiskValue":
        return cls(np.asarray(nodes), np.asarray(values, dtype=float), (FINITE,) * len(nodes))

    @classmethod
    def constant_flag(cls, nodes: Sequence[int], flag: str) -> "RiskValue":
        return cls(np.asarray(nodes), np.zeros(len(nodes)), (flag,) * len(nodes))

    @property
    def all_finite(self) -> bool:
        return all(f == FINITE for f in self.flags)

    @property
    def values(self) -> np.ndarray:
        """Numeric values; raises if any entry is flagged."""
        if not self.all_finite:
            k = next(i for i, f in enumerate(self.flags) if f != FINITE)
            raise FlaggedValueError(f"node {self.nodes[k]} carries flag {self.flags[k]}")
        return self.raw.copy()

    def as_extended(self) -> np.ndarray:
        """Float view with +-inf, for comparisons only."""
        out = self.raw.copy()
        out[[f == PLUS_INF for f in self.flags]] = np.inf
        out[[f == MINUS_INF for f in self.flags]] = -np.inf
        return out

    def __len__(self) -> int:
        return len(self.nodes)

    def to_json(self, ids: Sequence[str]) -> dict:
        return {ids[n]: {"value": float(v) if f == FINITE else None, "flag": f}
                for n, v, f in zip(self.nodes, self.raw, self.flags)}


def node_max(values: Sequence[RiskValue]) -> RiskValue:
    """Node-wise maximum in the extended reals (order independent)."""
    if not values:
        raise ValueError("empty collection")
    ext = np.max([v.as_extended() for v in values], axis=0)
    return from_extended(values[0].nodes, ext)


def from_extended(nodes: Sequence[int], ext: Sequence[float]) -> RiskValue:
    ext = np.asarray(ext, dtype=float)
    flags = tuple(PLUS_INF if e == np.inf else MINUS_INF if e == -np.inf else FINITE for e in ext)
    return RiskValue(np.asarray(nodes), np.where(np.isfinite(ext), ext, 0.0), flags)

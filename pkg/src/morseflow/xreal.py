"""Extended real values.

Time coordinates on invariant manifolds take the values -inf (at the
stationary point along the unstable side) and +inf (stable side), and the
juxtaposed-flow entrance times do too.  These are semantic values, so they
get an explicit type instead of sentinel floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import total_ordering

__all__ = ["XReal", "POS_INF", "NEG_INF", "finite"]


@total_ordering
@dataclass(frozen=True)
class XReal:
    kind: str  # "fin" | "pinf" | "ninf"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fin", "pinf", "ninf"):
            raise ValueError(f"bad XReal kind {self.kind!r}")

    @property
    def is_finite(self) -> bool:
        return self.kind == "fin"

    def finite_value(self) -> float:
        if self.kind != "fin":
            raise ValueError("not a finite extended real")
        return self.value

    def _key(self) -> tuple[int, float]:
        if self.kind == "ninf":
            return (-1, 0.0)
        if self.kind == "pinf":
            return (1, 0.0)
        return (0, self.value)

    def __lt__(self, other: "XReal") -> bool:
        a, b = self._key(), other._key()
        if a[0] != b[0]:
            return a[0] < b[0]
        return a[1] < b[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, XReal):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def shift(self, t: float) -> "XReal":
        """Add a finite time; infinities absorb."""
        if self.kind == "fin":
            return XReal("fin", self.value + t)
        return self

    def __neg__(self) -> "XReal":
        if self.kind == "fin":
            return XReal("fin", -self.value)
        return XReal("pinf" if self.kind == "ninf" else "ninf")

    def to_json(self):
        if self.kind == "pinf":
            return "inf"
        if self.kind == "ninf":
            return "-inf"
        return self.value

    def __repr__(self):
        if self.kind == "pinf":
            return "XReal(+inf)"
        if self.kind == "ninf":
            return "XReal(-inf)"
        return f"XReal({self.value})"


POS_INF = XReal("pinf")
NEG_INF = XReal("ninf")


def finite(x: float) -> XReal:
    return XReal("fin", float(x))

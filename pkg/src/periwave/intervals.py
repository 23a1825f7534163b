"""Finite unions of real intervals with open/closed endpoints."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator


@dataclass(frozen=True, order=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty interval bounds {self.lo} > {self.hi}")
        if self.lo == self.hi and not (self.lo_closed and self.hi_closed):
            raise ValueError("a degenerate interval must be closed")
        if math.isinf(self.lo) and self.lo_closed or math.isinf(self.hi) and self.hi_closed:
            raise ValueError("infinite endpoints must be open")

    def contains(self, x: float) -> bool:
        above = x > self.lo or (self.lo_closed and x == self.lo)
        below = x < self.hi or (self.hi_closed and x == self.hi)
        return above and below

    def distance(self, x: float) -> float:
        if x < self.lo:
            return self.lo - x
        if x > self.hi:
            return x - self.hi
        return 0.0

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "lo_closed": self.lo_closed, "hi_closed": self.hi_closed}

    @classmethod
    def from_json(cls, d) -> "Interval":
        return cls(float(d["lo"]), float(d["hi"]), bool(d.get("lo_closed", True)),
                   bool(d.get("hi_closed", True)))

    def __str__(self):
        return f"{'[' if self.lo_closed else '('}{self.lo:g}, {self.hi:g}{']' if self.hi_closed else ')'}"


def _intersect(a: Interval, b: Interval):
    if a.lo > b.lo:
        lo, lo_c = a.lo, a.lo_closed
    elif b.lo > a.lo:
        lo, lo_c = b.lo, b.lo_closed
    else:
        lo, lo_c = a.lo, a.lo_closed and b.lo_closed
    if a.hi < b.hi:
        hi, hi_c = a.hi, a.hi_closed
    elif b.hi < a.hi:
        hi, hi_c = b.hi, b.hi_closed
    else:
        hi, hi_c = a.hi, a.hi_closed and b.hi_closed
    if lo > hi or (lo == hi and not (lo_c and hi_c)):
        return None
    return Interval(lo, hi, lo_c, hi_c)


class IntervalUnion:
    """Sorted, pairwise disjoint, non-touching intervals."""

    __slots__ = ("parts",)

    def __init__(self, parts: Iterable[Interval] = ()):
        self.parts = _normalize(parts)

    @classmethod
    def closed(cls, pairs) -> "IntervalUnion":
        return cls(Interval(float(a), float(b)) for a, b in pairs)

    def __iter__(self) -> Iterator[Interval]:
        return iter(self.parts)

    def __len__(self):
        return len(self.parts)

    def __bool__(self):
        return bool(self.parts)

    def __eq__(self, other):
        return isinstance(other, IntervalUnion) and self.parts == other.parts

    def __repr__(self):
        return "IntervalUnion(" + " U ".join(map(str, self.parts)) + ")"

    def union(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion(self.parts + other.parts)

    __or__ = union

    def intersection(self, other: "IntervalUnion") -> "IntervalUnion":
        out = []
        for a in self.parts:
            for b in other.parts:
                c = _intersect(a, b)
                if c is not None:
                    out.append(c)
        return IntervalUnion(out)

    __and__ = intersection

    def complement(self) -> "IntervalUnion":
        out = []
        lo, lo_c = -math.inf, False
        for p in self.parts:
            if p.lo > lo or (p.lo == lo and lo_c and not p.lo_closed):
                out.append(Interval(lo, p.lo, lo_c, not p.lo_closed))
            lo, lo_c = p.hi, not p.hi_closed
        if lo < math.inf:
            out.append(Interval(lo, math.inf, lo_c, False))
        return IntervalUnion(out)

    def difference(self, other: "IntervalUnion") -> "IntervalUnion":
        return self.intersection(other.complement())

    __sub__ = difference

    def clip(self, lo: float, hi: float) -> "IntervalUnion":
        return self.intersection(IntervalUnion([Interval(lo, hi)]))

    def contains(self, x: float) -> bool:
        return any(p.contains(x) for p in self.parts)

    def distance(self, x: float) -> float:
        if not self.parts:
            return math.inf
        return min(p.distance(x) for p in self.parts)

    def isdisjoint(self, other: "IntervalUnion") -> bool:
        return not self.intersection(other)

    def to_json(self) -> list:
        return [p.to_json() for p in self.parts]

    @classmethod
    def from_json(cls, items) -> "IntervalUnion":
        return cls(Interval.from_json(d) for d in items)


def _normalize(parts) -> tuple[Interval, ...]:
    items = sorted(parts, key=lambda p: (p.lo, not p.lo_closed))
    out: list[Interval] = []
    for p in items:
        if out:
            cur = out[-1]
            touching = p.lo < cur.hi or (p.lo == cur.hi and (cur.hi_closed or p.lo_closed))
            if touching:
                if p.hi > cur.hi:
                    hi, hi_c = p.hi, p.hi_closed
                elif p.hi < cur.hi:
                    hi, hi_c = cur.hi, cur.hi_closed
                else:
                    hi, hi_c = cur.hi, cur.hi_closed or p.hi_closed
                out[-1] = Interval(cur.lo, hi, cur.lo_closed, hi_c)
                continue
        out.append(p)
    return tuple(out)

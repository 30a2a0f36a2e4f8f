"""Interval arithmetic and axis-aligned boxes.

Intervals are closed, ``[lo, hi]`` with ``lo <= hi``.  The empty interval is a
first-class value (``lo = +inf, hi = -inf``) and is absorbing through every
operation.  Unbounded results are clamped to ``[-DOMAIN, DOMAIN]`` so volumes
stay finite.

Boxes store their bounds as read-only numpy arrays.  The array-level helpers at
the bottom of the module (``relaxed_bounds`` and friends) are what the box
particle filter uses in its inner loop; the ``Interval``/``Box`` classes wrap the
same rules for single values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DOMAIN = 1e9


def _clamp(v: float, domain: float = DOMAIN) -> float:
    return min(max(v, -domain), domain)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval bounds must not be NaN")
        if self.lo > self.hi and not (self.lo == math.inf and self.hi == -math.inf):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @classmethod
    def empty(cls) -> "Interval":
        return cls(math.inf, -math.inf)

    @classmethod
    def point(cls, v: float) -> "Interval":
        return cls(v, v)

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    @property
    def width(self) -> float:
        return 0.0 if self.is_empty else self.hi - self.lo

    @property
    def mid(self) -> float:
        if self.is_empty:
            raise ValueError("empty interval has no midpoint")
        return 0.5 * (self.lo + self.hi)

    def contains(self, v: float) -> bool:
        return self.lo <= v <= self.hi

    def subset_of(self, other: "Interval") -> bool:
        if self.is_empty:
            return True
        return other.lo <= self.lo and self.hi <= other.hi

    def clamped(self, domain: float = DOMAIN) -> "Interval":
        if self.is_empty:
            return self
        return Interval(_clamp(self.lo, domain), _clamp(self.hi, domain))

    def __and__(self, other: "Interval") -> "Interval":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else Interval.empty()

    def __or__(self, other: "Interval") -> "Interval":
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __add__(self, other: "Interval") -> "Interval":
        return interval_arith(self, other, "add")

    def __sub__(self, other: "Interval") -> "Interval":
        return interval_arith(self, other, "sub")

    def __mul__(self, other: "Interval") -> "Interval":
        return interval_arith(self, other, "mul")

    def __truediv__(self, other: "Interval") -> "Interval":
        return interval_arith(self, other, "div")

    def __neg__(self) -> "Interval":
        return self if self.is_empty else Interval(-self.hi, -self.lo)

    def __repr__(self) -> str:
        return "Interval(empty)" if self.is_empty else f"[{self.lo}, {self.hi}]"


def hull(intervals: Iterable[Interval]) -> Interval:
    out = Interval.empty()
    for iv in intervals:
        out = out | iv
    return out


def _mul(a: Interval, b: Interval) -> Interval:
    prods = [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi]
    # 0 * inf only arises from a point-zero factor; the product is then 0
    prods = [0.0 if math.isnan(p) else p for p in prods]
    return Interval(min(prods), max(prods))


def div_extended(a: Interval, b: Interval, domain: float = DOMAIN) -> tuple[Interval, ...]:
    """Extended division returning zero, one or two disjoint pieces.

    Pieces are clamped to ``[-domain, domain]``.  ``b == [0, 0]`` yields the
    whole (clamped) line when ``a`` contains 0 and nothing otherwise.
    """
    if a.is_empty or b.is_empty:
        return ()
    if b.lo > 0 or b.hi < 0:
        return (_mul(a, Interval(1.0 / b.hi, 1.0 / b.lo)).clamped(domain),)
    if a.lo <= 0 <= a.hi:
        return (Interval(-domain, domain),)
    if b.lo == 0 and b.hi == 0:
        return ()
    inf = math.inf
    pieces = []
    if a.hi < 0:
        if b.hi > 0:
            pieces.append(Interval(-inf, a.hi / b.hi))
        if b.lo < 0:
            pieces.append(Interval(a.hi / b.lo, inf))
    else:  # a.lo > 0
        if b.lo < 0:
            pieces.append(Interval(-inf, a.lo / b.lo))
        if b.hi > 0:
            pieces.append(Interval(a.lo / b.hi, inf))
    pieces = [p.clamped(domain) for p in pieces]
    return tuple(sorted(pieces, key=lambda p: p.lo))


def interval_arith(a: Interval, b: Interval, op: str, domain: float = DOMAIN):
    """Tightest enclosure of ``{x op y}`` for ``op`` in add/sub/mul/div/div_extended.

    ``div`` returns the hull of the extended quotient; ``div_extended`` returns
    the tuple of pieces.
    """
    if op == "div_extended":
        return div_extended(a, b, domain)
    if a.is_empty or b.is_empty:
        return Interval.empty()
    if op == "add":
        return Interval(a.lo + b.lo, a.hi + b.hi)
    if op == "sub":
        return Interval(a.lo - b.hi, a.hi - b.lo)
    if op == "mul":
        return _mul(a, b)
    if op == "div":
        return hull(div_extended(a, b, domain))
    raise ValueError(f"unknown interval op {op!r}")


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


class Box:
    """Axis-aligned box: a product of closed intervals."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D arrays of equal length")
        if np.any(lo > hi):
            lo = np.full_like(lo, np.inf)
            hi = np.full_like(hi, -np.inf)
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    def __setattr__(self, name, value):
        raise AttributeError("Box is immutable")

    @classmethod
    def empty(cls, dim: int) -> "Box":
        return cls(np.full(dim, np.inf), np.full(dim, -np.inf))

    @classmethod
    def from_intervals(cls, intervals: Sequence[Interval]) -> "Box":
        if any(iv.is_empty for iv in intervals):
            return cls.empty(len(intervals))
        return cls([iv.lo for iv in intervals], [iv.hi for iv in intervals])

    @classmethod
    def from_point(cls, p: Sequence[float]) -> "Box":
        return cls(p, p)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    @property
    def widths(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(self.dim)
        return self.hi - self.lo

    @property
    def mid(self) -> np.ndarray:
        if self.is_empty:
            raise ValueError("empty box has no midpoint")
        return 0.5 * (self.lo + self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def __getitem__(self, d: int) -> Interval:
        if self.is_empty:
            return Interval.empty()
        return Interval(float(self.lo[d]), float(self.hi[d]))

    def intervals(self) -> list[Interval]:
        return [self[d] for d in range(self.dim)]

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(self.lo - tol <= p) and np.all(p <= self.hi + tol))

    def subset_of(self, other: "Box", tol: float = 0.0) -> bool:
        if self.is_empty:
            return True
        return bool(np.all(other.lo - tol <= self.lo) and np.all(self.hi <= other.hi + tol))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box) or other.dim != self.dim:
            return NotImplemented
        if self.is_empty or other.is_empty:
            return self.is_empty and other.is_empty
        return bool(np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __and__(self, other: "Box") -> "Box":
        return intersect(self, other)

    def __repr__(self) -> str:
        if self.is_empty:
            return f"Box(empty, dim={self.dim})"
        return "Box(" + " x ".join(f"[{l:g}, {h:g}]" for l, h in zip(self.lo, self.hi)) + ")"


def intersect(a: Box, b: Box) -> Box:
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    return Box(np.maximum(a.lo, b.lo), np.minimum(a.hi, b.hi))


def box_hull(boxes: Sequence[Box]) -> Box:
    boxes = [b for b in boxes if not b.is_empty]
    if not boxes:
        raise ValueError("hull of no non-empty boxes")
    return Box(np.min([b.lo for b in boxes], axis=0), np.max([b.hi for b in boxes], axis=0))


def q_relaxed_intersect(boxes: Sequence[Box], q: int, exact: bool = True) -> Box:
    """Smallest box holding every point that lies in at least ``len(boxes) - q`` boxes.

    ``q >= len(boxes)`` is treated as ``len(boxes) - 1`` (membership in at least
    one box).  With ``exact=False`` the bounds come from an independent endpoint
    sweep per axis: cheap, always a superset of the exact hull, and identical
    to it in 1-D.
    """
    if not boxes:
        raise ValueError("q_relaxed_intersect needs at least one box")
    if q < 0:
        raise ValueError("q must be non-negative")
    dim = boxes[0].dim
    if any(b.dim != dim for b in boxes):
        raise ValueError("dimension mismatch")
    live = [b for b in boxes if not b.is_empty]
    need = len(boxes) - min(q, len(boxes) - 1)
    if len(live) < need:
        return Box.empty(dim)
    lo = np.stack([b.lo for b in live])  # (n, dim)
    hi = np.stack([b.hi for b in live])
    if exact and dim > 1:
        return Box(_corner_extreme(lo, hi, need), -_corner_extreme(-hi, -lo, need))
    rlo, rhi = relaxed_bounds(lo.T[None], hi.T[None], np.array([[need]]))
    return Box(rlo[0], rhi[0])


def _corner_extreme(lo: np.ndarray, hi: np.ndarray, need: int) -> np.ndarray:
    """Per-axis minimum over lower corners of all ``need``-fold box intersections.

    Every non-empty intersection of ``need`` boxes has a lower corner whose
    coordinates are lower endpoints of the input boxes, so a depth-first search
    over those endpoints (pruned as soon as fewer than ``need`` boxes remain)
    visits every candidate.  Exponential in the dimension; meant for small sets.
    """
    n, dim = lo.shape
    best = np.full(dim, np.inf)
    point = np.empty(dim)

    def visit(d: int, active: np.ndarray) -> None:
        if d == dim:
            np.minimum(best, point, out=best)
            return
        for v in np.unique(lo[active, d]):
            nxt = active & (lo[:, d] <= v) & (v <= hi[:, d])
            if np.count_nonzero(nxt) >= need:
                point[d] = v
                visit(d + 1, nxt)

    visit(0, np.ones(n, dtype=bool))
    return best


def subdivide(box: Box, parts: int) -> list[Box]:
    """Split ``box`` into ``parts`` equal slabs along its widest dimension."""
    if parts < 2:
        raise ValueError("parts must be >= 2")
    if box.is_empty:
        raise ValueError("cannot subdivide an empty box")
    widths = box.widths
    if not np.any(widths > 0):
        return [box for _ in range(parts)]
    d = int(np.argmax(widths))
    cuts = np.linspace(box.lo[d], box.hi[d], parts + 1)
    cuts[-1] = box.hi[d]
    out = []
    for i in range(parts):
        lo, hi = box.lo.copy(), box.hi.copy()
        lo[d], hi[d] = cuts[i], cuts[i + 1]
        out.append(Box(lo, hi))
    return out


def affine_inclusion(box: Box, matrix, noise: Box) -> Box:
    """Interval image ``A [x] + [noise]``; exact for a point matrix."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[1] != box.dim or A.shape[0] != noise.dim:
        raise ValueError("matrix does not conform with box/noise dimensions")
    if box.is_empty or noise.is_empty:
        return Box.empty(A.shape[0])
    lo, hi = affine_image(box.lo, box.hi, A)
    return Box(lo + noise.lo, hi + noise.hi)


# --- array-level helpers --------------------------------------------------


def affine_image(lo: np.ndarray, hi: np.ndarray, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interval matrix-vector product on arrays of shape (..., n)."""
    Apos = np.clip(A, 0, None)
    Aneg = np.clip(A, None, 0)
    out_lo = lo @ Apos.T + hi @ Aneg.T
    out_hi = hi @ Apos.T + lo @ Aneg.T
    return out_lo, out_hi


class _DepthProfile:
    """Sorted endpoints and running coverage depth of sets of closed intervals.

    ``lo``/``hi`` have shape (..., n); unused slots hold ``+inf`` in both.  The
    sort is done once, so the leftmost point of any required depth is then a
    linear scan.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        coords = np.concatenate([lo, hi], axis=-1)
        steps = np.concatenate([np.ones_like(lo), -np.ones_like(hi)], axis=-1)
        # stable sort keeps starts ahead of ends at ties: touching closed intervals overlap
        order = np.argsort(coords, axis=-1, kind="stable")
        self.coords = np.take_along_axis(coords, order, axis=-1)
        self.depth = np.cumsum(np.take_along_axis(steps, order, axis=-1), axis=-1)
        self.finite = np.isfinite(self.coords)

    def leftmost(self, need: np.ndarray) -> np.ndarray:
        """Smallest coordinate covered by at least ``need`` intervals, ``+inf`` if none."""
        if self.coords.shape[-1] == 0:
            return np.full(need.shape, np.inf)
        ok = (self.depth >= need[..., None]) & self.finite
        first = np.argmax(ok, axis=-1)[..., None]
        found = np.take_along_axis(ok, first, axis=-1)[..., 0]
        return np.where(found, np.take_along_axis(self.coords, first, axis=-1)[..., 0], np.inf)


class RelaxedSweep:
    """Per-dimension hull of points covered by at least ``need`` intervals.

    ``lo``/``hi`` have shape (B, D, n): B independent problems, D dimensions and
    n candidate intervals; ``valid`` (B, n) masks out unused intervals.  Build
    once, then query ``bounds(need)`` for as many depths as required.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray, valid: np.ndarray | None = None):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        drop = lo > hi  # empty intervals never contribute
        if valid is not None:
            drop = drop | np.broadcast_to(~valid[:, None, :], lo.shape)
        self.shape = lo.shape[:-1]
        self._left = _DepthProfile(np.where(drop, np.inf, lo), np.where(drop, np.inf, hi))
        self._right = _DepthProfile(np.where(drop, np.inf, -hi), np.where(drop, np.inf, -lo))

    def bounds(self, need) -> tuple[np.ndarray, np.ndarray]:
        """(B, D) bounds; a dimension with no qualifying point gets ``lo = +inf, hi = -inf``."""
        need = np.broadcast_to(np.asarray(need), self.shape)
        left = self._left.leftmost(need)
        right = -self._right.leftmost(need)
        empty = ~np.isfinite(left) | ~np.isfinite(right)
        return np.where(empty, np.inf, left), np.where(empty, -np.inf, right)


def relaxed_bounds(lo: np.ndarray, hi: np.ndarray, need: np.ndarray,
                   valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One-shot ``RelaxedSweep(lo, hi, valid).bounds(need)``."""
    return RelaxedSweep(lo, hi, valid).bounds(need)

"""Exact algebra for continuous piecewise-linear functions on [0, inf).

Functions are stored as breakpoint/value lists plus two extension slopes,
with all coordinates kept as exact rationals (`fractions.Fraction`).  Every
float is itself an exact rational, so accepting floats loses nothing, and
keeping rationals internally means kinks, chord slopes and concave envelopes
are computed without rounding: the flat region of a call payoff evaluates to
exactly 0.0 and its linear tail to exactly ``x - K``.  This is what lets the
hedging error of an exactly-replicated path come out as exactly zero instead
of +/- 1e-14 noise.

Evaluation is vectorised: each function caches per-piece slope/intercept
float arrays, so evaluating on a million-element numpy array is a
searchsorted plus one fused multiply-add.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

Scalar = Union[int, float, Fraction]

# Breakpoints closer than this (relative) are collapsed before hull building.
MERGE_REL_TOL = 1e-12
# Default absolute tolerance for affine-domination tests.
DOMINATION_TOL = 1e-12


def _frac(x: Scalar) -> Fraction:
    """Exact rational from an int, float or Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    xf = float(x)
    if not np.isfinite(xf):
        raise ValueError(f"coordinate must be finite, got {x!r}")
    return Fraction(xf)


@dataclass(frozen=True)
class Interval:
    """Closed price interval [lo, hi] with 0 <= lo <= hi."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("interval endpoints must be finite")
        if lo < 0.0:
            raise ValueError(f"interval endpoints must be nonnegative, got lo={lo}")
        if lo > hi:
            raise ValueError(f"interval requires lo <= hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def is_degenerate(self) -> bool:
        return self.lo == self.hi

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol


@dataclass(frozen=True)
class SlopeInterval:
    """Superdifferential of a concave function at a point: [lo, hi] slopes.

    ``lo`` is the right-hand slope, ``hi`` the left-hand slope (for a concave
    function right <= left).  ``at_boundary`` marks evaluation at an endpoint
    of the domain, where only the one-sided slope exists and is repeated.
    """

    lo: float
    hi: float
    at_boundary: bool = False

    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class AffineFunction:
    """a(x) = slope * x + intercept."""

    slope: float
    intercept: float

    def __post_init__(self):
        if not (np.isfinite(self.slope) and np.isfinite(self.intercept)):
            raise ValueError("affine coefficients must be finite")

    def __call__(self, x):
        if isinstance(x, np.ndarray):
            return self.slope * x + self.intercept
        return self.slope * float(x) + self.intercept


class PwlFunction:
    """Continuous piecewise-linear function on [0, inf).

    Parameters
    ----------
    breakpoints : strictly increasing nonnegative coordinates (>= 1 point).
    values : function values at the breakpoints.
    left_slope : slope on [0, breakpoints[0]].
    right_slope : slope beyond breakpoints[-1].

    Between consecutive breakpoints the function interpolates linearly.
    Coordinates are stored exactly as rationals; `__call__` works on floats
    or numpy arrays.
    """

    __slots__ = (
        "breakpoints",
        "values",
        "left_slope",
        "right_slope",
        "_bps_f",
        "_slopes_f",
        "_icepts_f",
    )

    def __init__(
        self,
        breakpoints: Sequence[Scalar],
        values: Sequence[Scalar],
        left_slope: Scalar = 0,
        right_slope: Scalar = 0,
    ):
        bps = tuple(_frac(b) for b in breakpoints)
        vals = tuple(_frac(v) for v in values)
        if len(bps) == 0:
            raise ValueError("need at least one breakpoint")
        if len(bps) != len(vals):
            raise ValueError("breakpoints and values must have equal length")
        if bps[0] < 0:
            raise ValueError("breakpoints must be nonnegative")
        for a, b in zip(bps, bps[1:]):
            if not a < b:
                raise ValueError("breakpoints must be strictly increasing")
        self.breakpoints = bps
        self.values = vals
        self.left_slope = _frac(left_slope)
        self.right_slope = _frac(right_slope)
        self._build_float_cache()

    # ------------------------------------------------------------------ #
    # construction helpers
    # ------------------------------------------------------------------ #

    def _build_float_cache(self):
        bps, vals = self.breakpoints, self.values
        n = len(bps)
        seg = [
            (vals[i + 1] - vals[i]) / (bps[i + 1] - bps[i]) for i in range(n - 1)
        ]
        slopes = [self.left_slope] + seg + [self.right_slope]
        # Piece i is anchored at a breakpoint lying inside its closure, so the
        # float intercept is the correctly rounded image of the exact one.
        anchors = [(bps[0], vals[0])] + [(bps[i], vals[i]) for i in range(1, n)]
        anchors.append((bps[n - 1], vals[n - 1]))
        icepts = [v - s * b for s, (b, v) in zip(slopes, anchors)]
        self._bps_f = np.array([float(b) for b in bps])
        self._slopes_f = np.array([float(s) for s in slopes])
        self._icepts_f = np.array([float(c) for c in icepts])

    # ------------------------------------------------------------------ #
    # evaluation
    # ------------------------------------------------------------------ #

    def __call__(self, x):
        """Evaluate at a nonnegative float or array of floats."""
        if isinstance(x, np.ndarray):
            if x.size and x.min() < 0.0:
                raise ValueError("evaluation point must be nonnegative")
            idx = np.searchsorted(self._bps_f, x, side="left")
            return self._slopes_f[idx] * x + self._icepts_f[idx]
        xf = float(x)
        if xf < 0.0:
            raise ValueError(f"evaluation point must be nonnegative, got {xf}")
        idx = int(np.searchsorted(self._bps_f, xf, side="left"))
        return float(self._slopes_f[idx] * xf + self._icepts_f[idx])

    def eval_exact(self, x: Scalar) -> Fraction:
        """Evaluate with exact rational arithmetic."""
        xq = _frac(x)
        if xq < 0:
            raise ValueError("evaluation point must be nonnegative")
        bps, vals = self.breakpoints, self.values
        if xq <= bps[0]:
            return vals[0] + self.left_slope * (xq - bps[0])
        if xq >= bps[-1]:
            return vals[-1] + self.right_slope * (xq - bps[-1])
        i = 0
        for j in range(1, len(bps)):
            if xq <= bps[j]:
                i = j
                break
        s = (vals[i] - vals[i - 1]) / (bps[i] - bps[i - 1])
        return vals[i] + s * (xq - bps[i])

    # ------------------------------------------------------------------ #
    # structure queries
    # ------------------------------------------------------------------ #

    def piece_slopes(self) -> tuple[Fraction, ...]:
        """All slopes left to right, extensions included."""
        bps, vals = self.breakpoints, self.values
        seg = tuple(
            (vals[i + 1] - vals[i]) / (bps[i + 1] - bps[i])
            for i in range(len(bps) - 1)
        )
        return (self.left_slope,) + seg + (self.right_slope,)

    def is_convex(self) -> bool:
        """Exact check: slopes nondecreasing left to right."""
        slopes = self.piece_slopes()
        return all(a <= b for a, b in zip(slopes, slopes[1:]))

    def is_concave(self) -> bool:
        slopes = self.piece_slopes()
        return all(a >= b for a, b in zip(slopes, slopes[1:]))

    def slopes_at(self, x: float) -> tuple[float, float]:
        """(left slope, right slope) at x; they differ only at a kink."""
        xf = float(x)
        if xf < 0.0:
            raise ValueError("evaluation point must be nonnegative")
        i = int(np.searchsorted(self._bps_f, xf, side="left"))
        if i < len(self._bps_f) and xf == self._bps_f[i]:
            return float(self._slopes_f[i]), float(self._slopes_f[i + 1])
        return float(self._slopes_f[i]), float(self._slopes_f[i])

    def chord_slope(self, a: float, b: float) -> float:
        """Slope of the chord from (a, f(a)) to (b, f(b)), a < b.

        When both ends fall inside the same linear piece the stored slope is
        returned verbatim, so flat or unit-slope regions give exact 0.0 / 1.0.
        """
        af, bf = float(a), float(b)
        if not af < bf:
            raise ValueError("chord requires a < b")
        ia = int(np.searchsorted(self._bps_f, af, side="left"))
        ib = int(np.searchsorted(self._bps_f, bf, side="left"))
        if ia == ib:
            return float(self._slopes_f[ia])
        return (self(bf) - self(af)) / (bf - af)

    # ------------------------------------------------------------------ #
    # dunder plumbing
    # ------------------------------------------------------------------ #

    def __eq__(self, other) -> bool:
        if not isinstance(other, PwlFunction):
            return NotImplemented
        return (
            self.breakpoints == other.breakpoints
            and self.values == other.values
            and self.left_slope == other.left_slope
            and self.right_slope == other.right_slope
        )

    def __hash__(self):
        return hash(
            (self.breakpoints, self.values, self.left_slope, self.right_slope)
        )

    def __repr__(self):
        pts = ", ".join(
            f"({float(b):g}, {float(v):g})"
            for b, v in zip(self.breakpoints, self.values)
        )
        return (
            f"PwlFunction([{pts}], left={float(self.left_slope):g}, "
            f"right={float(self.right_slope):g})"
        )


# ---------------------------------------------------------------------- #
# payoff constructors
# ---------------------------------------------------------------------- #


def call_payoff(strike: Scalar) -> PwlFunction:
    """(x - strike)^+ ."""
    k = _frac(strike)
    if k <= 0:
        raise ValueError("strike must be positive")
    return PwlFunction([k], [0], left_slope=0, right_slope=1)


def put_payoff(strike: Scalar) -> PwlFunction:
    """(strike - x)^+ ."""
    k = _frac(strike)
    if k <= 0:
        raise ValueError("strike must be positive")
    return PwlFunction([k], [0], left_slope=-1, right_slope=0)


def constant_function(c: Scalar = 0) -> PwlFunction:
    return PwlFunction([0], [c], left_slope=0, right_slope=0)


def from_points(
    xs: Iterable[Scalar],
    ys: Iterable[Scalar],
    left_slope: Scalar = 0,
    right_slope: Scalar = 0,
) -> PwlFunction:
    return PwlFunction(list(xs), list(ys), left_slope, right_slope)


# ---------------------------------------------------------------------- #
# operations
# ---------------------------------------------------------------------- #


def scale_compose(f: PwlFunction, k: Scalar) -> PwlFunction:
    """Return x -> f(k*x) for k > 0 (breakpoints divide by k, slopes scale)."""
    kq = _frac(k)
    if kq <= 0:
        raise ValueError(f"scale factor must be positive, got {k}")
    return PwlFunction(
        [b / kq for b in f.breakpoints],
        f.values,
        left_slope=f.left_slope * kq,
        right_slope=f.right_slope * kq,
    )


def _drop_collinear(
    xs: list[Fraction], ys: list[Fraction], left: Fraction, right: Fraction
) -> tuple[list[Fraction], list[Fraction]]:
    """Remove breakpoints where the slope does not actually change (exact)."""
    if len(xs) <= 1:
        return xs, ys
    slopes = [left]
    slopes += [
        (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) for i in range(len(xs) - 1)
    ]
    slopes.append(right)
    kept_x, kept_y = [], []
    for i in range(len(xs)):
        if slopes[i] != slopes[i + 1]:
            kept_x.append(xs[i])
            kept_y.append(ys[i])
    if not kept_x:  # globally affine: keep one anchor
        return [xs[0]], [ys[0]]
    return kept_x, kept_y


def convex_combine(f: PwlFunction, g: PwlFunction, lam: Scalar) -> PwlFunction:
    """lam*f + (1-lam)*g on the merged breakpoint set, lam in [0, 1]."""
    lq = _frac(lam)
    if not 0 <= lq <= 1:
        raise ValueError(f"weight must lie in [0, 1], got {lam}")
    merged = sorted(set(f.breakpoints) | set(g.breakpoints))
    vals = [lq * f.eval_exact(b) + (1 - lq) * g.eval_exact(b) for b in merged]
    left = lq * f.left_slope + (1 - lq) * g.left_slope
    right = lq * f.right_slope + (1 - lq) * g.right_slope
    xs, ys = _drop_collinear(merged, vals, left, right)
    return PwlFunction(xs, ys, left_slope=left, right_slope=right)


def _dedup_for_hull(
    pts: list[tuple[Fraction, Fraction]]
) -> list[tuple[Fraction, Fraction]]:
    """Collapse near-coincident x's (1e-12 relative), keeping the max value."""
    out: list[tuple[Fraction, Fraction]] = []
    for x, y in pts:
        if out:
            x0, y0 = out[-1]
            gap = Fraction(MERGE_REL_TOL) * max(Fraction(1), abs(x))
            if x - x0 <= gap:
                if y > y0:
                    out[-1] = (x0, y)
                continue
        out.append((x, y))
    return out


def upper_concave_envelope(f: PwlFunction, dom: Interval) -> PwlFunction:
    """Smallest concave function dominating f on dom (exact upper hull).

    The hull is built over the graph points at dom's endpoints and f's
    interior breakpoints (sufficient for piecewise-linear f).  For convex f
    the result is the chord through the endpoints.  The returned function is
    defined on dom; outside it the end segments extend linearly.  A
    degenerate dom (lo == hi) yields the constant f(lo); detect it via
    ``dom.is_degenerate``.
    """
    lo, hi = _frac(dom.lo), _frac(dom.hi)
    if lo == hi:
        return PwlFunction([lo], [f.eval_exact(lo)], 0, 0)

    pts = [(lo, f.eval_exact(lo))]
    pts += [(b, v) for b, v in zip(f.breakpoints, f.values) if lo < b < hi]
    pts.append((hi, f.eval_exact(hi)))
    pts = _dedup_for_hull(pts)

    # Andrew's monotone chain, upper hull only: drop a middle point whenever
    # it does not lie strictly above the chord of its neighbours.
    hull: list[tuple[Fraction, Fraction]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)

    xs = [p[0] for p in hull]
    ys = [p[1] for p in hull]
    if len(xs) == 1:  # cannot happen for lo < hi, kept for safety
        return PwlFunction(xs, ys, 0, 0)
    first = (ys[1] - ys[0]) / (xs[1] - xs[0])
    last = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    return PwlFunction(xs, ys, left_slope=first, right_slope=last)


def superdifferential(h: PwlFunction, x: float, dom: Interval) -> SlopeInterval:
    """Slope interval [right slope, left slope] of concave h at x in dom.

    At dom's endpoints only the inward one-sided slope exists; it is
    returned for both ends of the interval and the result is flagged
    ``at_boundary``.
    """
    xf = float(x)
    if not dom.contains(xf):
        raise ValueError(f"{xf} lies outside the domain [{dom.lo}, {dom.hi}]")
    left, right = h.slopes_at(xf)
    if xf == dom.lo:
        return SlopeInterval(right, right, at_boundary=True)
    if xf == dom.hi:
        return SlopeInterval(left, left, at_boundary=True)
    return SlopeInterval(right, left)


def dominates(
    a: AffineFunction, f: PwlFunction, dom: Interval, tol: float = DOMINATION_TOL
) -> bool:
    """True iff a(x) >= f(x) - tol on dom (checked at breakpoints + endpoints)."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    xs = [dom.lo] + [
        float(b) for b in f.breakpoints if dom.lo < float(b) < dom.hi
    ] + [dom.hi]
    return all(a(x) >= f(x) - tol for x in xs)

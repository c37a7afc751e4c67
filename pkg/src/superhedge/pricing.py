"""Backward super-hedging valuation under interval price uncertainty.

The market quotes the next executed price only as a multiplicative interval
[k_down * s, k_up * s] around the last executed price s.  The minimal
super-hedging value of a claim is obtained one step at a time: restrict the
next-step value function to the support interval, take its upper concave
envelope, and read off the value at s and a superdifferential slope as the
holding.  For convex claims this collapses to a chord formula whose weights

    lam = (k_up - 1) / (k_up - k_down)

are independent of s, so the whole multi-step recursion stays inside the
piecewise-linear class and is evaluated exactly.

The no-arbitrage requirement (nonnegative claims must have nonnegative
prices) reduces here to k_down <= 1 <= k_up at every step; outside that the
one-step value is minus infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .pwl import (
    Interval,
    PwlFunction,
    convex_combine,
    scale_compose,
    superdifferential,
    upper_concave_envelope,
)

MINUS_INFINITY = float("-inf")


class AipViolationError(ValueError):
    """A step's support interval does not contain the current price."""

    def __init__(self, step: int, k_down: float, k_up: float):
        self.step = step
        self.k_down = k_down
        self.k_up = k_up
        super().__init__(
            f"no-arbitrage condition fails at step {step}: "
            f"1 not in [k_down, k_up] = [{k_down}, {k_up}]"
        )


@dataclass(frozen=True)
class StepSpec:
    """One trading step: essential support multipliers plus draw distributions.

    k_down / k_up bound the executed-price ratio S_t / S_{t-1}.  The optional
    uniform-draw parameters describe how the simulator samples the interval:
    the lower edge m ~ U[m_lo, m_hi] and the spread spr ~ U[spr_lo, spr_hi],
    upper edge M = m + spr.  When they are given they must be consistent with
    the essential bounds: k_down == m_lo and k_up == m_hi + spr_hi.
    """

    k_down: float
    k_up: float
    m_lo: Optional[float] = None
    m_hi: Optional[float] = None
    spr_lo: Optional[float] = None
    spr_hi: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.k_down <= self.k_up):
            raise ValueError(
                f"need 0 < k_down <= k_up, got ({self.k_down}, {self.k_up})"
            )
        dist = (self.m_lo, self.m_hi, self.spr_lo, self.spr_hi)
        given = [d is not None for d in dist]
        if any(given) and not all(given):
            raise ValueError("either give all distribution bounds or none")
        if all(given):
            if not self.m_lo <= self.m_hi:
                raise ValueError("need m_lo <= m_hi")
            if not 0.0 <= self.spr_lo <= self.spr_hi:
                raise ValueError("need 0 <= spr_lo <= spr_hi")
            if not _close(self.k_down, self.m_lo) or not _close(
                self.k_up, self.m_hi + self.spr_hi
            ):
                raise ValueError(
                    "distribution bounds inconsistent with essential bounds: "
                    f"expect k_down == m_lo and k_up == m_hi + spr_hi, got "
                    f"k=({self.k_down}, {self.k_up}), m=[{self.m_lo}, {self.m_hi}], "
                    f"spr=[{self.spr_lo}, {self.spr_hi}]"
                )

    @classmethod
    def from_uniform(
        cls, m_lo: float, m_hi: float, spr_lo: float, spr_hi: float
    ) -> "StepSpec":
        """Build a step whose essential bounds follow from the draw ranges."""
        return cls(
            k_down=m_lo,
            k_up=m_hi + spr_hi,
            m_lo=m_lo,
            m_hi=m_hi,
            spr_lo=spr_lo,
            spr_hi=spr_hi,
        )

    @property
    def has_distribution(self) -> bool:
        return self.m_lo is not None


def _close(a: float, b: float, tol: float = 1e-12) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class MarketModel:
    """Last traded price plus one StepSpec per step t = 0..horizon."""

    s_init: float
    horizon: int
    steps: tuple[StepSpec, ...]

    def __post_init__(self):
        if not self.s_init > 0:
            raise ValueError("s_init must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        steps = tuple(self.steps)
        if len(steps) != self.horizon + 1:
            raise ValueError(
                f"need horizon+1 = {self.horizon + 1} steps, got {len(steps)}"
            )
        object.__setattr__(self, "steps", steps)


def uniform_bid_ask_model(
    s_init: float = 100.0,
    horizon: int = 2,
    m_range: tuple[float, float] = (0.7, 1.0),
    spr_range: tuple[float, float] = (0.0, 0.4),
) -> MarketModel:
    """Model with identical uniform draw ranges at every step."""
    step = StepSpec.from_uniform(m_range[0], m_range[1], spr_range[0], spr_range[1])
    return MarketModel(s_init=s_init, horizon=horizon, steps=(step,) * (horizon + 1))


# ---------------------------------------------------------------------- #
# no-arbitrage check
# ---------------------------------------------------------------------- #


@dataclass(frozen=True)
class AipResult:
    """Per-step verdicts of the no-arbitrage condition k_down <= 1 <= k_up."""

    ok: bool
    step_ok: tuple[bool, ...]

    def __bool__(self) -> bool:
        return self.ok

    @property
    def first_violation(self) -> Optional[int]:
        for t, good in enumerate(self.step_ok):
            if not good:
                return t
        return None


def check_aip(model: MarketModel) -> AipResult:
    """The zero claim prices to zero at every step iff all verdicts hold."""
    verdicts = tuple(s.k_down <= 1.0 <= s.k_up for s in model.steps)
    return AipResult(ok=all(verdicts), step_ok=verdicts)


# ---------------------------------------------------------------------- #
# one-step valuation
# ---------------------------------------------------------------------- #


class OneStepQuote(NamedTuple):
    price: float  # -inf when the current price lies outside the support hull
    theta: float  # nan when price is -inf


def one_step_price(
    g_next: PwlFunction, s_prev: float, step: StepSpec
) -> OneStepQuote:
    """Minimal one-step super-hedging value and a hedging slope.

    With support [m, M] = [k_down * s_prev, k_up * s_prev]: if s_prev lies
    outside, no finite price exists (returns -inf).  Otherwise the value is
    the upper concave envelope of g_next on [m, M] evaluated at s_prev and
    theta is the midpoint of the envelope's superdifferential there.
    """
    if not s_prev > 0:
        raise ValueError(f"s_prev must be positive, got {s_prev}")
    kd, ku = step.k_down, step.k_up
    if kd == ku:
        if kd == 1.0:  # deterministic next price equal to s_prev
            return OneStepQuote(g_next(float(s_prev)), 0.0)
        return OneStepQuote(MINUS_INFINITY, math.nan)
    if not kd <= 1.0 <= ku:
        return OneStepQuote(MINUS_INFINITY, math.nan)
    dom = Interval(kd * s_prev, ku * s_prev)
    h = upper_concave_envelope(g_next, dom)
    price = h(float(s_prev))
    theta = superdifferential(h, float(s_prev), dom).midpoint()
    return OneStepQuote(price, theta)


# ---------------------------------------------------------------------- #
# multi-step recursion
# ---------------------------------------------------------------------- #


@dataclass(frozen=True)
class PricingResult:
    """Backward value functions and chord weights.

    value_fns[t] is the time-t value function g_t for t = 0..horizon
    (value_fns[-1] is the payoff itself).  lambdas[t] is the chord weight of
    step t; it lies in [0, 1] exactly when that step passes the
    no-arbitrage check.
    """

    value_fns: tuple[PwlFunction, ...]
    lambdas: tuple[float, ...]

    @property
    def horizon(self) -> int:
        return len(self.value_fns) - 1

    @property
    def payoff(self) -> PwlFunction:
        return self.value_fns[-1]

    def strategy(self, t: int, model: MarketModel) -> "StrategyFn":
        if not 0 <= t < self.horizon:
            raise ValueError(f"strategy index must lie in [0, {self.horizon})")
        step = model.steps[t + 1]
        return StrategyFn(self.value_fns[t + 1], step.k_down, step.k_up)


class StrategyFn:
    """Order mapping s -> theta_t(s) derived from the next value function.

    theta_t(s) = (g_{t+1}(k_up s) - g_{t+1}(k_down s)) / ((k_up - k_down) s).
    When both chord ends fall in one linear piece of g_{t+1} the piece slope
    is returned exactly, so flat and unit-slope regions give literal 0 / 1.
    Nondecreasing in s whenever g_{t+1} is convex.
    """

    __slots__ = ("g_next", "k_down", "k_up")

    def __init__(self, g_next: PwlFunction, k_down: float, k_up: float):
        self.g_next = g_next
        self.k_down = float(k_down)
        self.k_up = float(k_up)

    def __call__(self, s):
        g, kd, ku = self.g_next, self.k_down, self.k_up
        if isinstance(s, np.ndarray):
            if s.size and s.min() <= 0.0:
                raise ValueError("price must be positive")
            if kd == ku:
                idx_l, idx_r = _kink_slope_indices(g, kd * s)
                return 0.5 * (g._slopes_f[idx_l] + g._slopes_f[idx_r]) * kd
            a, b = kd * s, ku * s
            ia = np.searchsorted(g._bps_f, a, side="left")
            ib = np.searchsorted(g._bps_f, b, side="left")
            chord = (g(b) - g(a)) / ((ku - kd) * s)
            return np.where(ia == ib, g._slopes_f[ia], chord)
        sf = float(s)
        if sf <= 0.0:
            raise ValueError(f"price must be positive, got {s}")
        if kd == ku:
            left, right = g.slopes_at(kd * sf)
            return 0.5 * (left + right) * kd
        a, b = kd * sf, ku * sf
        ia = int(np.searchsorted(g._bps_f, a, side="left"))
        ib = int(np.searchsorted(g._bps_f, b, side="left"))
        if ia == ib:
            return float(g._slopes_f[ia])
        return (g(b) - g(a)) / ((ku - kd) * sf)


def _kink_slope_indices(g: PwlFunction, x: np.ndarray):
    idx = np.searchsorted(g._bps_f, x, side="left")
    on_kink = (idx < len(g._bps_f)) & (x == g._bps_f[np.minimum(idx, len(g._bps_f) - 1)])
    idx_r = np.where(on_kink, idx + 1, idx)
    return idx, idx_r


def backward_induce(payoff: PwlFunction, model: MarketModel) -> PricingResult:
    """Propagate the payoff back to time 0 through the chord recursion.

    Requires a convex payoff (the piecewise-linear recursion

        g_{t-1}(x) = lam * g_t(k_down x) + (1 - lam) * g_t(k_up x)

    prices convex claims exactly) and the no-arbitrage condition at every
    step.  value_fns[0] evaluated at an executed first price is the minimal
    initial portfolio value; the constant premium to quote before execution
    is its supremum over the step-0 support, see `initial_premium`.
    """
    if not payoff.is_convex():
        raise ValueError(
            "payoff must be convex for the chord recursion; "
            "use one_step_price (envelope) or asian_tree_price for other claims"
        )
    aip = check_aip(model)
    if not aip.ok:
        t = aip.first_violation
        bad = model.steps[t]
        raise AipViolationError(t, bad.k_down, bad.k_up)

    T = model.horizon
    fns: list[Optional[PwlFunction]] = [None] * (T + 1)
    fns[T] = payoff
    for t in range(T, 0, -1):
        step = model.steps[t]
        kd, ku = Fraction(step.k_down), Fraction(step.k_up)
        g_t = fns[t]
        if kd == ku:  # AIP forces kd == ku == 1 here
            fns[t - 1] = scale_compose(g_t, kd)
        else:
            lam = (ku - 1) / (ku - kd)
            fns[t - 1] = convex_combine(
                scale_compose(g_t, kd), scale_compose(g_t, ku), lam
            )
    lambdas = tuple(_chord_weight(s) for s in model.steps)
    return PricingResult(value_fns=tuple(fns), lambdas=lambdas)


def _chord_weight(step: StepSpec) -> float:
    if step.k_down == step.k_up:
        return 0.5  # continuity limit of (k_up - 1)/(k_up - k_down)
    return (step.k_up - 1.0) / (step.k_up - step.k_down)


def strategy_at(
    result: PricingResult, t: int, s, model: MarketModel
):
    """Holding theta_t(s) to carry from step t to t+1 (scalar or array s)."""
    return result.strategy(t, model)(s)


def initial_premium(result: PricingResult, model: MarketModel) -> float:
    """Smallest constant premium dominating the time-0 value on its support.

    The time-0 value is revealed only with the first execution, so the
    quoted premium must dominate it over the whole step-0 support interval.
    """
    g0 = result.value_fns[0]
    step = model.steps[0]
    lo, hi = step.k_down * model.s_init, step.k_up * model.s_init
    xs = [lo, hi] + [float(b) for b in g0.breakpoints if lo < float(b) < hi]
    return max(g0(x) for x in xs)


# ---------------------------------------------------------------------- #
# closed-form two-step call oracle
# ---------------------------------------------------------------------- #


def closed_form_call(t: int, s, strike: float, model: MarketModel):
    """Explicit two-step call value/holding, independent of the recursion.

    Case tables keyed by where the support edges fall relative to the
    strike: three cases at t=1 and six at t=0.  Serves as the oracle for
    `backward_induce` / `strategy_at` on two-step models.  Vectorised over
    s; returns (value, theta) floats or arrays.
    """
    if model.horizon != 2:
        raise ValueError("closed-form oracle requires a two-step model")
    if t not in (0, 1):
        raise ValueError("t must be 0 or 1")
    if not strike > 0:
        raise ValueError("strike must be positive")
    m1, M1 = model.steps[1].k_down, model.steps[1].k_up
    m2, M2 = model.steps[2].k_down, model.steps[2].k_up
    if not (m1 < M1 and m2 < M2):
        raise ValueError("oracle requires nondegenerate supports")

    s_arr = np.asarray(s, dtype=float)
    scalar = s_arr.ndim == 0
    s_arr = np.atleast_1d(s_arr)
    if s_arr.min() <= 0.0:
        raise ValueError("price must be positive")
    K = float(strike)
    c_lo, c_hi = K / M2, K / m2

    if t == 1:
        mid_v = (s_arr * M2 - K) * (1.0 - m2) / (M2 - m2)
        mid_th = (s_arr * M2 - K) / (s_arr * (M2 - m2))
        value = np.where(
            s_arr <= c_lo, 0.0, np.where(s_arr >= c_hi, s_arr - K, mid_v)
        )
        theta = np.where(
            s_arr <= c_lo, 0.0, np.where(s_arr >= c_hi, 1.0, mid_th)
        )
    else:
        a = s_arr * m1  # lower support edge of the first executed price
        b = s_arr * M1  # upper support edge
        za = np.where(a <= c_lo, 0, np.where(a >= c_hi, 2, 1))
        zb = np.where(b <= c_lo, 0, np.where(b >= c_hi, 2, 1))

        d1, d2 = M1 - m1, M2 - m2
        v2 = (s_arr * M1 * M2 - K) * (1.0 - m2) * (1.0 - m1) / (d2 * d1)
        th2 = (s_arr * M1 * M2 - K) * (1.0 - m2) / (s_arr * d2 * d1)
        v3 = (s_arr * M1 - K) * (1.0 - m1) / d1
        th3 = (s_arr * M1 - K) / (s_arr * d1)
        v4 = (s_arr * M2 - K) * (1.0 - m2) / d2
        th4 = np.full_like(s_arr, M2 * (1.0 - m2) / d2)
        v5 = (
            (s_arr * M1 - K) * d2 * (1.0 - m1)
            - (s_arr * m1 * M2 - K) * (1.0 - m2) * (1.0 - M1)
        ) / (d1 * d2)
        th5 = ((s_arr * M1 - K) * d2 - (s_arr * m1 * M2 - K) * (1.0 - m2)) / (
            s_arr * d2 * d1
        )

        value = np.select(
            [
                zb == 0,                  # both edges below the kink zone
                (za == 0) & (zb == 1),
                (za == 0) & (zb == 2),
                (za == 1) & (zb == 1),
                (za == 1) & (zb == 2),
            ],
            [np.zeros_like(s_arr), v2, v3, v4, v5],
            default=s_arr - K,            # both edges past the kink zone
        )
        theta = np.select(
            [
                zb == 0,
                (za == 0) & (zb == 1),
                (za == 0) & (zb == 2),
                (za == 1) & (zb == 1),
                (za == 1) & (zb == 2),
            ],
            [np.zeros_like(s_arr), th2, th3, th4, th5],
            default=1.0,
        )

    if scalar:
        return float(value[0]), float(theta[0])
    return value, theta


# ---------------------------------------------------------------------- #
# path-dependent claims
# ---------------------------------------------------------------------- #

TREE_DEPTH_CAP = 20


def asian_tree_price(
    payoff: Callable[[Sequence[float]], float],
    model: MarketModel,
    s0: float,
    max_depth: int = TREE_DEPTH_CAP,
) -> float:
    """Minimal super-hedging value of a path-dependent claim, by tree walk.

    `payoff` maps a full executed-price path (s_0, ..., s_T) to the claim;
    it must be convex in its last argument for every fixed prefix.  The
    chord recursion is applied path-wise over the (k_down, k_up) multiplier
    tree rooted at the executed first price s0, giving the time-0 value.
    The tree has 2^horizon leaves; horizons above `max_depth` are refused.
    """
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    T = model.horizon
    if T > max_depth:
        raise ValueError(
            f"horizon {T} exceeds the tree depth cap {max_depth} "
            f"(2^{T} leaves); raise max_depth explicitly if intended"
        )
    aip = check_aip(model)
    if not aip.ok:
        t = aip.first_violation
        bad = model.steps[t]
        raise AipViolationError(t, bad.k_down, bad.k_up)

    lams = [_chord_weight(st) for st in model.steps]

    def rec(prefix: tuple[float, ...], t: int) -> float:
        if t == T:
            return float(payoff(prefix))
        step = model.steps[t + 1]
        s_t = prefix[-1]
        down = rec(prefix + (step.k_down * s_t,), t + 1)
        if step.k_down == step.k_up:
            return down
        up = rec(prefix + (step.k_up * s_t,), t + 1)
        lam = lams[t + 1]
        return lam * down + (1.0 - lam) * up

    return rec((float(s0),), 0)


def asian_call_payoff(strike: float) -> Callable[[Sequence[float]], float]:
    """(mean of the executed path - strike)^+ ."""
    if not strike > 0:
        raise ValueError("strike must be positive")

    def payoff(path: Sequence[float]) -> float:
        return max(sum(path) / len(path) - strike, 0.0)

    return payoff

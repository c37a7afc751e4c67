"""Seeded Monte-Carlo verification of the super-hedge, path by path.

Protocol per path (two-step default, generalised to any horizon):

* step 0: the first price executes at a random point of its interval,
  ``S_0 = S_prev * (m + k (M - m))`` with m, spread and k drawn uniformly;
* interior steps quote a bid/ask pair ``(S m, S M)``; the pending order is
  the mapping ``z -> theta_t(z) - theta_{t-1}`` and the executed side is
  decided by where the order changes sign: entirely a sell -> bid, entirely
  a buy -> ask, otherwise the side closer to the sign-change price S*;
* the final step executes mid like step 0.

Portfolios are self-financing: ``V_t = V_{t-1} + theta_{t-1} (S_t - S_{t-1})``.
The relative hedging error ``eps_r = (V_T - payoff(S_T)) / S_T`` must come
out nonnegative on every path; aggregated statistics per strike reproduce
the reference result table.

Everything is vectorised over paths in fixed-size batches with per-batch
seeds derived from one root seed, so results are reproducible bit for bit
and batches can be aggregated in any order (Chan et al. moment merging).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .pricing import (
    AipViolationError,
    MarketModel,
    PricingResult,
    StepSpec,
    check_aip,
)
from .pwl import Interval, PwlFunction

BATCH_SIZE = 1 << 17
ROOT_VALUE_TOL = 1e-12
ROOT_WIDTH_TOL = 1e-12


@dataclass(frozen=True)
class RngConfig:
    """Seed plus the generator label it is tied to.

    The stream is PCG64 as shipped by numpy; per-strike and per-batch
    substreams are spawned from ``SeedSequence(seed)``, so a given seed
    reproduces the same paths bit for bit on any platform.
    """

    seed: int
    algorithm: str = "pcg64"

    def __post_init__(self):
        if self.algorithm != "pcg64":
            raise ValueError(f"unsupported generator {self.algorithm!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def root_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.seed))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.root_sequence()))


# ---------------------------------------------------------------------- #
# elementary draws and executions
# ---------------------------------------------------------------------- #


def draw_step(step: StepSpec, rng: np.random.Generator, size=None):
    """Draw (m, M, k): interval edges m, M = m + spread, and mid position k.

    m ~ U[m_lo, m_hi], spread ~ U[spr_lo, spr_hi] independent, k ~ U[0, 1].
    k is drawn at every step, including bid/ask steps that ignore it, which
    keeps the stream layout identical across protocols.
    """
    if not step.has_distribution:
        raise ValueError("step has no draw distribution attached")
    m = rng.uniform(step.m_lo, step.m_hi, size)
    spr = rng.uniform(step.spr_lo, step.spr_hi, size)
    k = rng.uniform(0.0, 1.0, size)
    return m, m + spr, k


def mid_execute(s_prev, m, M, k):
    """Executed price s_prev * (m + k (M - m)) inside the drawn interval."""
    s = np.asarray(s_prev, dtype=float)
    if np.any(s <= 0.0):
        raise ValueError("s_prev must be positive")
    out = s * (m + k * (M - m))
    return float(out) if out.ndim == 0 else out


def find_sstar(
    delta_theta: Callable[[float], float],
    bracket: Interval,
    value_tol: float = ROOT_VALUE_TOL,
    width_tol: float = ROOT_WIDTH_TOL,
) -> Optional[float]:
    """Root of a nondecreasing order mapping on a bracket, or None.

    Returns a point where ``delta_theta`` vanishes if its sign changes over
    the bracket (bisection to |value| <= value_tol or relative width <=
    width_tol); the bracket's lower end when the mapping vanishes there; and
    None when the sign is constant on the whole bracket.  A sampled
    monotonicity check rejects decreasing inputs.
    """
    lo, hi = bracket.lo, bracket.hi
    probes = np.linspace(lo, hi, 9)
    vals = [float(delta_theta(float(x))) for x in probes]
    scale = max(1.0, max(abs(v) for v in vals))
    for a, b in zip(vals, vals[1:]):
        if b < a - 1e-9 * scale:
            raise ValueError("delta_theta is not nondecreasing on the bracket")
    f_lo, f_hi = vals[0], vals[-1]
    if abs(f_lo) <= value_tol:
        return lo
    if f_lo > 0.0:
        return None
    if abs(f_hi) <= value_tol:
        return hi
    if f_hi < 0.0:
        return None
    while hi - lo > width_tol * max(1.0, 0.5 * (lo + hi)):
        mid = 0.5 * (lo + hi)
        f_mid = float(delta_theta(mid))
        if abs(f_mid) <= value_tol:
            return mid
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def execute_delayed_order(
    bid: float,
    ask: float,
    sstar: Optional[float],
    delta_sign: float = 0.0,
    straddle_to_ask: bool = True,
) -> float:
    """Executed side of a delayed order given the sign-change price.

    Both quotes at or below S* (the order sells throughout): the bid
    executes.  Both at or above: the ask executes.  When S* falls strictly
    between, the tie-break convention executes the ask when the bid is the
    closer quote, and the bid otherwise; ``straddle_to_ask=False`` flips it.
    With ``sstar=None`` the order's sign is constant on the bracket and
    ``delta_sign`` decides: <= 0 bid, > 0 ask.
    """
    if not 0.0 < bid <= ask:
        raise ValueError(f"need 0 < bid <= ask, got ({bid}, {ask})")
    if sstar is None:
        return bid if delta_sign <= 0.0 else ask
    if ask <= sstar:
        return bid
    if sstar <= bid:
        return ask
    closer_bid = abs(sstar - bid) <= abs(sstar - ask)
    if straddle_to_ask:
        return ask if closer_bid else bid
    return bid if closer_bid else ask


# ---------------------------------------------------------------------- #
# exact sign-change prices for one interior step
# ---------------------------------------------------------------------- #


class OrderSignChange:
    """Sign-change price of z -> theta_t(z) - theta_prev, solved exactly.

    theta_t(z) = (g(k_up z) - g(k_down z)) / ((k_up - k_down) z) is monotone
    for convex g and piecewise of the form b/c + a/(c z), so the zero set of
    the order mapping is an interval whose endpoints solve linear equations
    on the pieces.  The reported S* is the finite endpoint when the zero set
    extends to 0 or infinity (a plateau of theta at the held position) and
    the midpoint otherwise; with no zero at all, only the constant sign is
    reported.  All piece data is precomputed from exact rationals.
    """

    def __init__(self, g_next: PwlFunction, step: StepSpec):
        kd, ku = Fraction(step.k_down), Fraction(step.k_up)
        self.degenerate = kd == ku
        if self.degenerate:
            return
        c = ku - kd
        cuts = sorted(
            {b / ku for b in g_next.breakpoints if b > 0}
            | {b / kd for b in g_next.breakpoints if b > 0}
        )
        m = len(cuts)

        def coeffs(z1: Fraction, z2: Fraction):
            n1 = g_next.eval_exact(ku * z1) - g_next.eval_exact(kd * z1)
            n2 = g_next.eval_exact(ku * z2) - g_next.eval_exact(kd * z2)
            b = (n2 - n1) / (z2 - z1)
            return n1 - b * z1, b

        pieces = []
        for j in range(m + 1):
            if m == 0:
                z1, z2 = Fraction(1), Fraction(2)
            elif j == 0:
                z1, z2 = cuts[0] / 3, cuts[0] * 2 / 3
            elif j == m:
                z1, z2 = cuts[-1] * 2, cuts[-1] * 3
            else:
                w = cuts[j] - cuts[j - 1]
                z1, z2 = cuts[j - 1] + w / 3, cuts[j - 1] + 2 * w / 3
            pieces.append(coeffs(z1, z2))
        a_q = [ab[0] for ab in pieces]
        b_q = [ab[1] for ab in pieces]

        theta_cuts = [
            (g_next.eval_exact(ku * z) - g_next.eval_exact(kd * z)) / (c * z)
            for z in cuts
        ]
        for u, v in zip(theta_cuts, theta_cuts[1:]):
            if u > v:
                raise ValueError("order mapping is not monotone; payoff not convex?")

        self.c = float(step.k_up - step.k_down)
        self.cuts = np.array([float(z) for z in cuts])
        self.t_vals = np.array([float(t) for t in theta_cuts])
        self.a = np.array([float(x) for x in a_q])
        self.b = np.array([float(x) for x in b_q])
        self.theta_lo = float(b_q[0] / c)   # constant value of theta near 0
        self.theta_hi = float(b_q[-1] / c)  # asymptotic value at infinity
        self.t_last = float(theta_cuts[-1]) if m else self.theta_lo

    def sstar(self, theta_prev: np.ndarray):
        """Per-path (sstar, sign): sstar is NaN where the sign is constant."""
        th = np.asarray(theta_prev, dtype=float)
        n = th.shape[0]
        out = np.full(n, np.nan)
        if self.degenerate:
            return out, np.zeros(n)
        if self.theta_lo == self.theta_hi or self.cuts.size == 0:
            return out, self.theta_lo - th

        sign = np.zeros(n)
        all_buy = th < self.theta_lo
        all_sell = (th > self.theta_hi) | (
            (th == self.theta_hi) & (self.t_last < self.theta_hi)
        )
        sign[all_buy] = 1.0
        sign[all_sell] = -1.0
        root = ~(all_buy | all_sell)
        if not root.any():
            return out, sign

        th_r = th[root]
        m = self.cuts.size
        jl = np.searchsorted(self.t_vals, th_r, side="left")
        jr = np.searchsorted(self.t_vals, th_r, side="right")

        def piece_root(j, theta):
            denom = theta * self.c - self.b[j]
            with np.errstate(divide="ignore", invalid="ignore"):
                z = self.a[j] / denom
            lo = np.where(j >= 1, self.cuts[np.maximum(j - 1, 0)], 0.0)
            hi = np.where(j <= m - 1, self.cuts[np.minimum(j, m - 1)], np.inf)
            return np.clip(z, lo, hi)

        # zero-set endpoints; +/- sentinels mark plateaus reaching 0 / infinity
        z_left = np.where(jl == 0, 0.0, piece_root(np.maximum(jl, 1), th_r))
        at_top = (jr == m) & (th_r == self.theta_hi)
        z_right = np.where(
            at_top, np.inf, piece_root(np.minimum(np.maximum(jr, 1), m), th_r)
        )

        sstar = np.where(
            z_left == 0.0,
            z_right,
            np.where(np.isinf(z_right), z_left, 0.5 * (z_left + z_right)),
        )
        out[root] = sstar
        return out, sign


def _execute_vec(bid, ask, sstar, sign, straddle_to_ask=True):
    no_root = np.isnan(sstar)
    closer_bid = np.abs(sstar - bid) <= np.abs(sstar - ask)
    straddle = closer_bid if straddle_to_ask else ~closer_bid
    with np.errstate(invalid="ignore"):
        ruled = np.where(
            ask <= sstar, bid, np.where(sstar <= bid, ask, np.where(straddle, ask, bid))
        )
    return np.where(no_root, np.where(sign <= 0.0, bid, ask), ruled)


# ---------------------------------------------------------------------- #
# path generation
# ---------------------------------------------------------------------- #


@dataclass(frozen=True)
class SimPath:
    """One simulated scenario.

    ``s`` holds the executed prices S_0..S_T; ``bid``/``ask`` the quoted
    pair at interior steps (NaN at mid-execution steps); ``theta`` the held
    quantities theta_0..theta_{T-1}; ``v`` the portfolio values V_0..V_T.
    """

    s_prev: float
    s: np.ndarray
    bid: np.ndarray
    ask: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    eps_r: float


def _simulate_batch(
    model: MarketModel,
    pricing: PricingResult,
    n: int,
    rng: np.random.Generator,
    crossings: dict,
    straddle_to_ask: bool = True,
):
    """Vectorised protocol over n paths; returns column arrays."""
    T = model.horizon
    s_prev = np.full(n, float(model.s_init))
    s_cols, bid_cols, ask_cols = [], [], []
    theta_cols, v_cols = [], []

    for t in range(T + 1):
        step = model.steps[t]
        m, M, k = draw_step(step, rng, size=n)
        if t == 0 or t == T:
            s_t = mid_execute(s_prev, m, M, k)
            bid_t = np.full(n, np.nan)
            ask_t = np.full(n, np.nan)
        else:
            bid_t = s_prev * m
            ask_t = s_prev * M
            sstar, sign = crossings[t].sstar(theta_cols[t - 1])
            s_t = _execute_vec(bid_t, ask_t, sstar, sign, straddle_to_ask)
        if t == 0:
            v_cols.append(pricing.value_fns[0](s_t))
        else:
            v_cols.append(v_cols[t - 1] + theta_cols[t - 1] * (s_t - s_prev))
        if t < T:
            theta_cols.append(pricing.strategy(t, model)(s_t))
        s_cols.append(s_t)
        bid_cols.append(bid_t)
        ask_cols.append(ask_t)
        s_prev = s_t

    payoff_vals = pricing.payoff(s_cols[T])
    eps = (v_cols[T] - payoff_vals) / s_cols[T]
    return {
        "s": s_cols,
        "bid": bid_cols,
        "ask": ask_cols,
        "theta": theta_cols,
        "v": v_cols,
        "eps": eps,
    }


def _build_crossings(model: MarketModel, pricing: PricingResult) -> dict:
    return {
        t: OrderSignChange(pricing.value_fns[t + 1], model.steps[t + 1])
        for t in range(1, model.horizon)
    }


def run_path(
    model: MarketModel,
    pricing: PricingResult,
    strike: float,
    rng: np.random.Generator,
    straddle_to_ask: bool = True,
) -> SimPath:
    """Generate a single scenario and account the hedge along it.

    ``strike`` labels the claim for reporting; the hedging error is measured
    against ``pricing.payoff`` (for a strike-K call the two coincide bit for
    bit with (S_T - K)^+).
    """
    aip = check_aip(model)
    if not aip.ok:
        t = aip.first_violation
        raise AipViolationError(t, model.steps[t].k_down, model.steps[t].k_up)
    cols = _simulate_batch(
        model, pricing, 1, rng, _build_crossings(model, pricing), straddle_to_ask
    )
    return SimPath(
        s_prev=float(model.s_init),
        s=np.array([c[0] for c in cols["s"]]),
        bid=np.array([c[0] for c in cols["bid"]]),
        ask=np.array([c[0] for c in cols["ask"]]),
        theta=np.array([c[0] for c in cols["theta"]]),
        v=np.array([c[0] for c in cols["v"]]),
        eps_r=float(cols["eps"][0]),
    )


# ---------------------------------------------------------------------- #
# aggregation
# ---------------------------------------------------------------------- #


@dataclass
class RunningMoments:
    """Streaming count/mean/M2 with order-robust pairwise batch merging."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def merge(self, n: int, mean: float, m2: float):
        if n == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = n, mean, m2
            return
        total = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / total
        self.m2 += m2 + delta * delta * self.count * n / total
        self.count = total

    def add_batch(self, x: np.ndarray):
        if x.size:
            self.merge(x.size, float(np.mean(x)), float(np.var(x) * x.size))

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else math.nan

    @property
    def std(self) -> float:
        v = self.variance
        return math.sqrt(v) if v == v else math.nan


@dataclass
class RunningExtrema:
    lo: float = math.inf
    hi: float = -math.inf

    def add_batch(self, x: np.ndarray):
        if x.size:
            self.lo = min(self.lo, float(np.min(x)))
            self.hi = max(self.hi, float(np.max(x)))


@dataclass(frozen=True)
class SimStats:
    """Aggregate per-strike statistics (the rows of the result table).

    The position-fraction means E(theta_t S_t / V_t) run over paths with
    V_t != 0; on paths where the portfolio is worth exactly zero the holding
    is zero too and the fraction is undefined.
    """

    strike: float
    n_paths: int
    mean_s0: float
    mean_s1: float
    mean_s2: float
    mean_v0: float
    max_v0: float
    mean_v0_over_sprev: float
    mean_v0_over_s0: float
    min_v0_over_s0: float
    max_v0_over_s0: float
    mean_eps: float
    std_eps: float
    min_eps: float
    max_eps: float
    mean_theta0_frac: float
    mean_theta1_frac: float

    ROW_LABELS = (
        "K",
        "E(S0)",
        "E(S1)",
        "E(S2)",
        "E(V0)",
        "max V0",
        "E(V0/S-1)",
        "E(V0/S0)",
        "min(V0/S0)",
        "max(V0/S0)",
        "E(eps_R)",
        "sigma(eps_R)",
        "min eps_R",
        "max eps_R",
        "E(theta0*S0/V0)",
        "E(theta1*S1/V1)",
    )

    def row_values(self) -> tuple[float, ...]:
        return (
            self.strike,
            self.mean_s0,
            self.mean_s1,
            self.mean_s2,
            self.mean_v0,
            self.max_v0,
            self.mean_v0_over_sprev,
            self.mean_v0_over_s0,
            self.min_v0_over_s0,
            self.max_v0_over_s0,
            self.mean_eps,
            self.std_eps,
            self.min_eps,
            self.max_eps,
            self.mean_theta0_frac,
            self.mean_theta1_frac,
        )


class _Aggregator:
    """Fold batches of path columns into SimStats."""

    def __init__(self, s_prev: float, horizon: int):
        self.s_prev = s_prev
        self.T = horizon
        self.n = 0
        self.s0 = RunningMoments()
        self.s1 = RunningMoments()
        self.s2 = RunningMoments()
        self.v0 = RunningMoments()
        self.v0_rel0 = RunningMoments()
        self.eps = RunningMoments()
        self.th0 = RunningMoments()
        self.th1 = RunningMoments()
        self.v0_ext = RunningExtrema()
        self.v0_rel0_ext = RunningExtrema()
        self.eps_ext = RunningExtrema()

    def add(self, cols: dict):
        s, v, theta, eps = cols["s"], cols["v"], cols["theta"], cols["eps"]
        self.n += s[0].size
        self.s0.add_batch(s[0])
        if self.T >= 1:
            self.s1.add_batch(s[1])
        if self.T >= 2:
            self.s2.add_batch(s[2])
        self.v0.add_batch(v[0])
        self.v0_ext.add_batch(v[0])
        rel0 = v[0] / s[0]
        self.v0_rel0.add_batch(rel0)
        self.v0_rel0_ext.add_batch(rel0)
        self.eps.add_batch(eps)
        self.eps_ext.add_batch(eps)
        mask0 = v[0] != 0.0
        self.th0.add_batch((theta[0][mask0] * s[0][mask0]) / v[0][mask0])
        if self.T >= 2:
            mask1 = v[1] != 0.0
            self.th1.add_batch((theta[1][mask1] * s[1][mask1]) / v[1][mask1])

    def result(self, strike: float) -> SimStats:
        return SimStats(
            strike=strike,
            n_paths=self.n,
            mean_s0=self.s0.mean,
            mean_s1=self.s1.mean if self.s1.count else math.nan,
            mean_s2=self.s2.mean if self.s2.count else math.nan,
            mean_v0=self.v0.mean,
            max_v0=self.v0_ext.hi,
            mean_v0_over_sprev=self.v0.mean / self.s_prev,
            mean_v0_over_s0=self.v0_rel0.mean,
            min_v0_over_s0=self.v0_rel0_ext.lo,
            max_v0_over_s0=self.v0_rel0_ext.hi,
            mean_eps=self.eps.mean,
            std_eps=self.eps.std,
            min_eps=self.eps_ext.lo,
            max_eps=self.eps_ext.hi,
            mean_theta0_frac=self.th0.mean if self.th0.count else math.nan,
            mean_theta1_frac=self.th1.mean if self.th1.count else math.nan,
        )


def simulate_one(
    model: MarketModel,
    pricing: PricingResult,
    strike: float,
    n_paths: int,
    seed_seq: np.random.SeedSequence,
    straddle_to_ask: bool = True,
    collect: bool = False,
    batch_size: int = BATCH_SIZE,
):
    """Simulate one strike; returns (SimStats, raw columns or None).

    Paths are generated in fixed-size batches with seeds spawned from
    ``seed_seq``; the batch layout depends only on n_paths, so a given seed
    gives bit-identical results.  ``collect=True`` additionally returns the
    concatenated per-path columns (memory: ~(3T+5) * 8 bytes per path).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    aip = check_aip(model)
    if not aip.ok:
        t = aip.first_violation
        raise AipViolationError(t, model.steps[t].k_down, model.steps[t].k_up)

    crossings = _build_crossings(model, pricing)
    agg = _Aggregator(model.s_init, model.horizon)
    n_batches = (n_paths + batch_size - 1) // batch_size
    children = seed_seq.spawn(n_batches)
    kept: list[dict] = []
    done = 0
    for b in range(n_batches):
        nb = min(batch_size, n_paths - done)
        rng = np.random.Generator(np.random.PCG64(children[b]))
        cols = _simulate_batch(model, pricing, nb, rng, crossings, straddle_to_ask)
        agg.add(cols)
        if collect:
            kept.append(cols)
        done += nb

    raw = None
    if collect:
        raw = {
            key: [
                np.concatenate([batch[key][i] for batch in kept])
                for i in range(len(kept[0][key]))
            ]
            for key in ("s", "bid", "ask", "theta", "v")
        }
        raw["eps"] = np.concatenate([batch["eps"] for batch in kept])
    return agg.result(strike), raw


def simulate(
    model: MarketModel,
    pricings: Sequence[PricingResult],
    strikes: Sequence[float],
    n_paths: int,
    rng_config: RngConfig,
    straddle_to_ask: bool = True,
) -> list[SimStats]:
    """Per-strike statistics over n_paths scenarios each.

    Each strike gets an independent substream spawned from the root seed, so
    columns are independent across strikes but fully reproducible.
    """
    if len(pricings) != len(strikes):
        raise ValueError("need one pricing result per strike")
    children = rng_config.root_sequence().spawn(len(strikes))
    out = []
    for pricing, strike, child in zip(pricings, strikes, children):
        stats, _ = simulate_one(
            model, pricing, strike, n_paths, child, straddle_to_ask
        )
        out.append(stats)
    return out


# ---------------------------------------------------------------------- #
# path-dependent claims: scalar engine
# ---------------------------------------------------------------------- #


def _tree_value(
    payoff: Callable[[Sequence[float]], float],
    model: MarketModel,
    prefix: tuple[float, ...],
    t: int,
) -> float:
    if t == model.horizon:
        return float(payoff(prefix))
    step = model.steps[t + 1]
    s_t = prefix[-1]
    down = _tree_value(payoff, model, prefix + (step.k_down * s_t,), t + 1)
    if step.k_down == step.k_up:
        return down
    up = _tree_value(payoff, model, prefix + (step.k_up * s_t,), t + 1)
    lam = (step.k_up - 1.0) / (step.k_up - step.k_down)
    return lam * down + (1.0 - lam) * up


def _tree_theta(
    payoff, model: MarketModel, prefix: tuple[float, ...], t: int
) -> float:
    """Holding after the time-t execution, prefix = (s_0, ..., s_t)."""
    step = model.steps[t + 1]
    s_t = prefix[-1]
    if step.k_down == step.k_up:
        h = 1e-6 * s_t
        lo = _tree_value(payoff, model, prefix + (step.k_down * (s_t - h),), t + 1)
        hi = _tree_value(payoff, model, prefix + (step.k_down * (s_t + h),), t + 1)
        return (hi - lo) / (2 * h) * step.k_down
    g_up = _tree_value(payoff, model, prefix + (step.k_up * s_t,), t + 1)
    g_dn = _tree_value(payoff, model, prefix + (step.k_down * s_t,), t + 1)
    return (g_up - g_dn) / ((step.k_up - step.k_down) * s_t)


def _functional_sstar(delta_theta, s_scale: float):
    """(sstar, sign) with the same plateau conventions as OrderSignChange."""
    lo, hi = 1e-9 * s_scale, 1e9 * s_scale
    f_lo, f_hi = delta_theta(lo), delta_theta(hi)
    if f_lo > 0.0:
        return None, 1.0
    if f_hi < 0.0:
        return None, -1.0
    if f_lo == 0.0 and f_hi == 0.0:
        return None, 0.0

    def bisect(pred) -> float:
        a, b = lo, hi
        while b - a > ROOT_WIDTH_TOL * max(1.0, 0.5 * (a + b)):
            mid = 0.5 * (a + b)
            if pred(mid):
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    z_left = 0.0 if f_lo == 0.0 else bisect(lambda z: delta_theta(z) < 0.0)
    z_right = math.inf if f_hi == 0.0 else bisect(lambda z: delta_theta(z) <= 0.0)
    if z_left == 0.0:
        return z_right, 0.0
    if math.isinf(z_right):
        return z_left, 0.0
    return 0.5 * (z_left + z_right), 0.0


def run_path_functional(
    model: MarketModel,
    payoff: Callable[[Sequence[float]], float],
    rng: np.random.Generator,
    straddle_to_ask: bool = True,
) -> SimPath:
    """Scalar protocol for path-dependent claims (holdings from tree walks).

    Mirrors the vectorised engine draw for draw, so on European payoffs a
    single path from the same generator state matches bit for bit.  Cost per
    path is O(2^horizon) payoff evaluations.
    """
    aip = check_aip(model)
    if not aip.ok:
        t = aip.first_violation
        raise AipViolationError(t, model.steps[t].k_down, model.steps[t].k_up)

    T = model.horizon
    s_prev = float(model.s_init)
    s, bids, asks, thetas, vs = [], [], [], [], []
    prefix: tuple[float, ...] = ()
    for t in range(T + 1):
        step = model.steps[t]
        m, M, k = draw_step(step, rng)
        if t == 0 or t == T:
            s_t = mid_execute(s_prev, m, M, k)
            bid_t = ask_t = math.nan
        else:
            bid_t = s_prev * m
            ask_t = s_prev * M
            held = thetas[t - 1]
            base = prefix

            def delta(z: float, _base=base, _t=t, _held=held) -> float:
                return _tree_theta(payoff, model, _base + (z,), _t) - _held

            sstar, sign = _functional_sstar(delta, s_prev)
            s_t = execute_delayed_order(bid_t, ask_t, sstar, sign, straddle_to_ask)
        prefix = prefix + (s_t,)
        if t == 0:
            vs.append(_tree_value(payoff, model, prefix, 0))
        else:
            vs.append(vs[t - 1] + thetas[t - 1] * (s_t - s_prev))
        if t < T:
            thetas.append(_tree_theta(payoff, model, prefix, t))
        s.append(s_t)
        bids.append(bid_t)
        asks.append(ask_t)
        s_prev = s_t

    eps = (vs[T] - float(payoff(prefix))) / s[T]
    return SimPath(
        s_prev=float(model.s_init),
        s=np.array(s),
        bid=np.array(bids),
        ask=np.array(asks),
        theta=np.array(thetas),
        v=np.array(vs),
        eps_r=float(eps),
    )


def simulate_functional(
    model: MarketModel,
    payoff: Callable[[Sequence[float]], float],
    strike_label: float,
    n_paths: int,
    seed_seq: np.random.SeedSequence,
    straddle_to_ask: bool = True,
    collect: bool = False,
):
    """Path-dependent analogue of simulate_one (scalar engine, slower)."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    T = model.horizon
    agg = _Aggregator(model.s_init, T)
    paths = []
    chunk = 4096
    done = 0
    while done < n_paths:
        nb = min(chunk, n_paths - done)
        batch = [
            run_path_functional(model, payoff, rng, straddle_to_ask)
            for _ in range(nb)
        ]
        cols = {
            "s": [np.array([p.s[t] for p in batch]) for t in range(T + 1)],
            "bid": [np.array([p.bid[t] for p in batch]) for t in range(T + 1)],
            "ask": [np.array([p.ask[t] for p in batch]) for t in range(T + 1)],
            "theta": [np.array([p.theta[t] for p in batch]) for t in range(T)],
            "v": [np.array([p.v[t] for p in batch]) for t in range(T + 1)],
            "eps": np.array([p.eps_r for p in batch]),
        }
        agg.add(cols)
        if collect:
            paths.append(cols)
        done += nb

    raw = None
    if collect:
        raw = {
            key: [
                np.concatenate([b[key][i] for b in paths])
                for i in range(len(paths[0][key]))
            ]
            for key in ("s", "bid", "ask", "theta", "v")
        }
        raw["eps"] = np.concatenate([b["eps"] for b in paths])
    return agg.result(strike_label), raw


# ---------------------------------------------------------------------- #
# per-path dump
# ---------------------------------------------------------------------- #


def path_dump_header(horizon: int) -> str:
    cols = ["path_id"]
    cols += [f"S_{t}" for t in range(horizon + 1)]
    cols += [f"bid_{t}" for t in range(1, horizon)]
    cols += [f"ask_{t}" for t in range(1, horizon)]
    cols += [f"theta_{t}" for t in range(horizon)]
    cols += [f"V_{t}" for t in range(horizon + 1)]
    cols.append("eps_r")
    return ",".join(cols)


def write_path_dump(fh, raw: dict, horizon: int):
    """Write one delimited record per path (header row included)."""
    n = raw["eps"].size
    columns = [np.arange(n, dtype=float)]
    columns += [raw["s"][t] for t in range(horizon + 1)]
    columns += [raw["bid"][t] for t in range(1, horizon)]
    columns += [raw["ask"][t] for t in range(1, horizon)]
    columns += [raw["theta"][t] for t in range(horizon)]
    columns += [raw["v"][t] for t in range(horizon + 1)]
    columns.append(raw["eps"])
    table = np.column_stack(columns)
    fh.write(path_dump_header(horizon) + "\n")
    fmt = ["%d"] + ["%.17g"] * (table.shape[1] - 1)
    np.savetxt(fh, table, fmt=fmt, delimiter=",")

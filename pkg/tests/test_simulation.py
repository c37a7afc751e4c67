"""Execution simulator: draws, order sign-change logic, path accounting,
aggregation, reproducibility."""

import io
import math

import numpy as np
import pytest

from superhedge.pricing import (
    MarketModel,
    StepSpec,
    StrategyFn,
    asian_call_payoff,
    backward_induce,
    uniform_bid_ask_model,
)
from superhedge.pwl import Interval, call_payoff, constant_function
from superhedge.simulation import (
    OrderSignChange,
    RngConfig,
    RunningMoments,
    draw_step,
    execute_delayed_order,
    find_sstar,
    mid_execute,
    path_dump_header,
    run_path,
    run_path_functional,
    simulate,
    simulate_functional,
    simulate_one,
    write_path_dump,
)

REF_MODEL = uniform_bid_ask_model()


def _pricing(strike=100.0, model=REF_MODEL):
    return backward_induce(call_payoff(strike), model)


def _gen(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


class TestRngConfig:
    def test_algorithm_pinned(self):
        with pytest.raises(ValueError):
            RngConfig(seed=1, algorithm="mt19937")

    def test_seed_range(self):
        with pytest.raises(ValueError):
            RngConfig(seed=-1)
        RngConfig(seed=2**64 - 1)


class TestDrawStep:
    def test_moments(self):
        step = REF_MODEL.steps[0]
        rng = _gen(0)
        m, M, k = draw_step(step, rng, size=1_000_000)
        assert np.mean(m) == pytest.approx(0.85, abs=1e-3)
        assert np.mean(M - m) == pytest.approx(0.2, abs=1e-3)
        assert np.mean(k) == pytest.approx(0.5, abs=1e-3)

    def test_support(self):
        step = REF_MODEL.steps[0]
        m, M, k = draw_step(step, _gen(1), size=10_000)
        assert np.all(m >= 0.7) and np.all(m <= 1.0)
        assert np.all(M >= m) and np.all(M <= 1.4 + 1e-15)
        assert np.all((0 <= k) & (k <= 1))

    def test_degenerate_lower_edge(self):
        step = StepSpec.from_uniform(0.9, 0.9, 0.0, 0.2)
        m, M, _ = draw_step(step, _gen(2), size=1000)
        assert np.all(m == 0.9)
        assert np.all(M >= 0.9)

    def test_missing_distribution_rejected(self):
        with pytest.raises(ValueError, match="distribution"):
            draw_step(StepSpec(0.7, 1.4), _gen(0))


class TestMidExecute:
    def test_ends_and_middle(self):
        assert mid_execute(100.0, 0.8, 1.0, 0.0) == pytest.approx(80.0)
        assert mid_execute(100.0, 0.8, 1.0, 1.0) == pytest.approx(100.0)
        assert mid_execute(100.0, 0.8, 1.0, 0.5) == pytest.approx(90.0)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            mid_execute(0.0, 0.8, 1.0, 0.5)


class TestFindSstar:
    def test_middle_piece_inversion(self):
        # delta(s) = (2 - K/(0.7 s)) - theta0 on the active piece of a call
        strike, theta0 = 100.0, 288 / 490
        expected = strike / (0.7 * (2.0 - theta0))

        def delta(s):
            return (2.0 - strike / (0.7 * s)) - theta0

        got = find_sstar(delta, Interval(80.0, 130.0))
        assert got == pytest.approx(expected, rel=1e-9)

    def test_constant_sign_returns_none(self):
        assert find_sstar(lambda s: 0.5, Interval(10, 20)) is None
        assert find_sstar(lambda s: -0.5 + 0.001 * s, Interval(10, 20)) is None

    def test_boundary_root(self):
        assert find_sstar(lambda s: s - 10.0, Interval(10, 20)) == 10.0

    def test_nonmonotone_detected(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            find_sstar(lambda s: -s, Interval(10, 20))


class TestOrderSignChange:
    def setup_method(self):
        self.strike = 100.0
        self.cross = OrderSignChange(call_payoff(self.strike), StepSpec(0.7, 1.4))

    def test_interior_formula(self):
        theta0 = np.array([288 / 490])
        sstar, _ = self.cross.sstar(theta0)
        assert sstar[0] == pytest.approx(
            self.strike / (1.4 - 0.7 * theta0[0]), rel=1e-12
        )

    def test_flat_holding_snaps_to_upper_kink(self):
        sstar, _ = self.cross.sstar(np.array([0.0]))
        assert sstar[0] == pytest.approx(self.strike / 1.4, rel=1e-12)

    def test_full_holding_snaps_to_lower_kink(self):
        sstar, _ = self.cross.sstar(np.array([1.0]))
        assert sstar[0] == pytest.approx(self.strike / 0.7, rel=1e-12)

    def test_out_of_range_holdings_have_constant_sign(self):
        sstar, sign = self.cross.sstar(np.array([-0.2, 1.2]))
        assert np.all(np.isnan(sstar))
        assert sign[0] > 0  # order buys everywhere
        assert sign[1] < 0  # order sells everywhere

    def test_matches_bracketed_root_finder(self):
        model = REF_MODEL
        pricing = _pricing(100.0)
        g2 = pricing.value_fns[2]
        theta_fn = StrategyFn(g2, 0.7, 1.4)
        rng = np.random.default_rng(3)
        for _ in range(50):
            theta0 = float(rng.uniform(0.05, 0.95))
            sstar_exact, _ = self.cross.sstar(np.array([theta0]))
            bracket = Interval(sstar_exact[0] * 0.5, sstar_exact[0] * 2.0)
            got = find_sstar(lambda z: theta_fn(z) - theta0, bracket)
            assert got == pytest.approx(sstar_exact[0], rel=1e-9)


class TestExecuteDelayedOrder:
    def test_both_below_sign_change(self):
        assert execute_delayed_order(80.0, 90.0, 101.15) == 80.0

    def test_both_above_sign_change(self):
        assert execute_delayed_order(110.0, 120.0, 101.15) == 120.0

    def test_straddle_closer_bid_executes_ask(self):
        assert execute_delayed_order(100.0, 105.0, 101.15) == 105.0

    def test_straddle_closer_ask_executes_bid(self):
        assert execute_delayed_order(95.0, 102.0, 101.15) == 95.0

    def test_straddle_flipped_convention(self):
        assert execute_delayed_order(100.0, 105.0, 101.15, straddle_to_ask=False) == 100.0

    def test_constant_sign_fallback(self):
        assert execute_delayed_order(80.0, 90.0, None, delta_sign=-1.0) == 80.0
        assert execute_delayed_order(80.0, 90.0, None, delta_sign=0.0) == 80.0
        assert execute_delayed_order(80.0, 90.0, None, delta_sign=1.0) == 90.0

    def test_crossed_quotes_rejected(self):
        with pytest.raises(ValueError):
            execute_delayed_order(90.0, 80.0, 85.0)


class TestRunPath:
    def test_self_financing_and_support(self):
        pricing = _pricing()
        rng = _gen(10)
        for _ in range(200):
            p = run_path(REF_MODEL, pricing, 100.0, rng)
            for t in range(1, 3):
                recon = p.v[t - 1] + p.theta[t - 1] * (p.s[t] - p.s[t - 1])
                assert abs(p.v[t] - recon) <= 1e-12
                ratio = p.s[t] / p.s[t - 1]
                assert 0.7 - 1e-12 <= ratio <= 1.4 + 1e-12
            assert 0.7 - 1e-12 <= p.s[0] / p.s_prev <= 1.4 + 1e-12
            assert p.eps_r >= -1e-9

    def test_v0_is_time_zero_value(self):
        pricing = _pricing()
        p = run_path(REF_MODEL, pricing, 100.0, _gen(11))
        assert p.v[0] == pricing.value_fns[0](p.s[0])

    def test_deterministic_degenerate_model(self):
        model = MarketModel(
            s_init=100.0,
            horizon=2,
            steps=(StepSpec.from_uniform(1.0, 1.0, 0.0, 0.0),) * 3,
        )
        pricing = backward_induce(call_payoff(80), model)
        p = run_path(model, pricing, 80.0, _gen(12))
        assert np.all(p.s == 100.0)
        assert p.v[2] == p.v[0] == 20.0
        assert p.eps_r == 0.0

    def test_zero_payoff(self):
        pricing = backward_induce(constant_function(0), REF_MODEL)
        p = run_path(REF_MODEL, pricing, 1.0, _gen(13))
        assert np.all(p.v == 0.0)
        assert p.eps_r == 0.0

    def test_bid_ask_recorded_at_interior_step(self):
        p = run_path(REF_MODEL, _pricing(), 100.0, _gen(14))
        assert math.isnan(p.bid[0]) and math.isnan(p.bid[2])
        assert p.bid[1] <= p.s[1] <= p.ask[1]
        assert p.s[1] in (p.bid[1], p.ask[1])


class TestSimulate:
    def test_single_path_equals_stats(self):
        pricing = _pricing()
        stats, _ = simulate_one(
            REF_MODEL, pricing, 100.0, 1, np.random.SeedSequence(7)
        )
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(7).spawn(1)[0])
        )
        p = run_path(REF_MODEL, pricing, 100.0, rng)
        assert stats.mean_s0 == p.s[0]
        assert stats.mean_s1 == p.s[1]
        assert stats.mean_v0 == p.v[0]
        assert stats.mean_eps == p.eps_r
        assert stats.min_eps == stats.max_eps == p.eps_r

    def test_determinism(self):
        pricings = [_pricing(k) for k in (75.0, 100.0)]
        a = simulate(REF_MODEL, pricings, [75.0, 100.0], 20_000, RngConfig(5))
        b = simulate(REF_MODEL, pricings, [75.0, 100.0], 20_000, RngConfig(5))
        assert a == b

    def test_different_seeds_differ(self):
        pricing = [_pricing()]
        a = simulate(REF_MODEL, pricing, [100.0], 5_000, RngConfig(5))
        b = simulate(REF_MODEL, pricing, [100.0], 5_000, RngConfig(6))
        assert a[0].mean_eps != b[0].mean_eps

    def test_batch_split_invariance(self):
        # same seed, different batch sizes: the per-batch substreams differ,
        # but a fixed batch size must give identical results
        pricing = _pricing()
        s1, _ = simulate_one(
            REF_MODEL, pricing, 100.0, 3000, np.random.SeedSequence(9), batch_size=1024
        )
        s2, _ = simulate_one(
            REF_MODEL, pricing, 100.0, 3000, np.random.SeedSequence(9), batch_size=1024
        )
        assert s1 == s2

    def test_model_moments(self):
        stats, _ = simulate_one(
            REF_MODEL, _pricing(), 100.0, 100_000, np.random.SeedSequence(17)
        )
        assert stats.n_paths == 100_000
        assert stats.mean_s0 / REF_MODEL.s_init == pytest.approx(0.95, abs=2e-3)

    def test_pathwise_super_hedge_and_support(self):
        stats, raw = simulate_one(
            REF_MODEL,
            _pricing(),
            100.0,
            100_000,
            np.random.SeedSequence(23),
            collect=True,
        )
        assert stats.min_eps >= -1e-9
        s = raw["s"]
        assert np.all(s[1] / s[0] >= 0.7 - 1e-12)
        assert np.all(s[1] / s[0] <= 1.4 + 1e-12)
        v = raw["v"]
        recon = v[1] + raw["theta"][1] * (s[2] - s[1])
        assert np.max(np.abs(v[2] - recon)) <= 1e-12

    def test_execution_rule_consistency(self):
        pricing = _pricing()
        _, raw = simulate_one(
            REF_MODEL,
            pricing,
            100.0,
            50_000,
            np.random.SeedSequence(29),
            collect=True,
        )
        bid, ask = raw["bid"][1], raw["ask"][1]
        executed = raw["s"][1]
        theta0 = raw["theta"][0]
        theta_fn = StrategyFn(pricing.value_fns[2], 0.7, 1.4)
        cross = OrderSignChange(pricing.value_fns[2], REF_MODEL.steps[2])
        sstar, _ = cross.sstar(theta0)
        straddle = ~np.isnan(sstar) & (bid < sstar) & (sstar < ask)
        at_bid = executed == bid
        at_ask = executed == ask
        assert np.all(at_bid | at_ask)
        d_bid = theta_fn(bid) - theta0
        d_ask = theta_fn(ask) - theta0
        assert np.all(d_bid[at_bid & ~straddle] <= 1e-9)
        assert np.all(d_ask[at_ask & ~straddle] >= -1e-9)

    def test_strike_pricing_count_mismatch(self):
        with pytest.raises(ValueError):
            simulate(REF_MODEL, [_pricing()], [100.0, 125.0], 10, RngConfig(1))

    def test_npaths_validated(self):
        with pytest.raises(ValueError):
            simulate_one(REF_MODEL, _pricing(), 100.0, 0, np.random.SeedSequence(1))


class TestFunctionalEngine:
    def test_matches_vector_engine_on_single_european_path(self):
        pricing = _pricing()
        payoff = call_payoff(100.0)
        p_vec = run_path(REF_MODEL, pricing, 100.0, _gen(31))
        p_fun = run_path_functional(
            REF_MODEL, lambda path: payoff(path[-1]), _gen(31)
        )
        assert p_fun.s == pytest.approx(p_vec.s, abs=0.0)
        assert p_fun.theta == pytest.approx(p_vec.theta, abs=1e-12)
        assert p_fun.v == pytest.approx(p_vec.v, abs=1e-12)
        assert p_fun.eps_r == pytest.approx(p_vec.eps_r, abs=1e-12)

    def test_asian_paths_super_hedge(self):
        stats, raw = simulate_functional(
            REF_MODEL,
            asian_call_payoff(100.0),
            100.0,
            1500,
            np.random.SeedSequence(37),
            collect=True,
        )
        assert stats.min_eps >= -1e-9
        v, s, theta = raw["v"], raw["s"], raw["theta"]
        recon = v[1] + theta[1] * (s[2] - s[1])
        assert np.max(np.abs(v[2] - recon)) <= 1e-12

    def test_asian_deterministic(self):
        a, _ = simulate_functional(
            REF_MODEL, asian_call_payoff(90.0), 90.0, 300, np.random.SeedSequence(41)
        )
        b, _ = simulate_functional(
            REF_MODEL, asian_call_payoff(90.0), 90.0, 300, np.random.SeedSequence(41)
        )
        assert a == b


class TestRunningMoments:
    def test_merge_matches_direct(self):
        rng = np.random.default_rng(43)
        x = rng.normal(3.0, 2.0, 10_000)
        rm = RunningMoments()
        for chunk in np.array_split(x, 7):
            rm.add_batch(chunk)
        assert rm.count == x.size
        assert rm.mean == pytest.approx(np.mean(x), rel=1e-12)
        assert rm.variance == pytest.approx(np.var(x), rel=1e-10)

    def test_empty_batches_ignored(self):
        rm = RunningMoments()
        rm.add_batch(np.array([]))
        assert rm.count == 0
        assert math.isnan(rm.variance)


class TestPathDump:
    def test_header_layout_two_steps(self):
        assert path_dump_header(2) == (
            "path_id,S_0,S_1,S_2,bid_1,ask_1,theta_0,theta_1,V_0,V_1,V_2,eps_r"
        )

    def test_roundtrip_columns(self):
        _, raw = simulate_one(
            REF_MODEL, _pricing(), 100.0, 50, np.random.SeedSequence(47), collect=True
        )
        buf = io.StringIO()
        write_path_dump(buf, raw, 2)
        lines = buf.getvalue().strip().splitlines()
        assert len(lines) == 51
        cols = lines[1].split(",")
        assert len(cols) == 12
        assert float(cols[1]) == pytest.approx(raw["s"][0][0], rel=1e-15)

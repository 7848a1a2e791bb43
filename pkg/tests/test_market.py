"""Market layer: closed-form agent responses, the productivity screen,
Walras residual bookkeeping, and the price-quantity saddle solve
checked against independent grid-search oracles."""

import numpy as np
import pytest

from transeq import (
    Consumer,
    FixedCosts,
    MarketInstance,
    Producer,
    SolveConfig,
    consumer_best_response,
    producer_best_response,
    productivity_check,
    solve_market,
    walras_residuals,
)

from conftest import toy_market


def one_good_consumer(tau_inc=10.0):
    return Consumer("t", Q=np.array([[1.0]]), sigma_min=np.array([2.0]),
                    tau_inc=tau_inc)


def toy_chain_residual():
    """Joint optimality residual for the one-link chain at zero entropy.

    The producer (capacity 10, unit cost 1, no fixed cost), the carrier
    (unit transport cost 1, capacity 10), and the consumer (minimum
    bundle 2, income 10) each compare their best attainable value with
    the value realized at the shared quantity d.  Every excess is
    nonnegative, so the sum vanishes only where all three agents are
    simultaneously optimal, i.e. at an equilibrium.
    """
    lamL = np.linspace(0.0, 3.0, 61)
    lamW = np.linspace(0.0, 4.0, 81)
    d = np.linspace(0.0, 10.0, 201)
    L, W, D = np.meshgrid(lamL, lamW, d, indexing="ij", sparse=True)
    producer = 10.0 * np.maximum(L - 1.0, 0.0) - (L - 1.0) * D
    margin = W - L - 1.0
    carrier = 10.0 * np.maximum(margin, 0.0) - margin * D
    best = np.maximum(10.0 - 2.0 * W, 0.0)
    # below the minimum bundle the consumer participates fractionally
    realized = np.where(D <= 2.0, (D / 2.0) * (10.0 - 2.0 * W), 10.0 - W * D)
    return lamL, lamW, d, producer + carrier + (best - realized)


def resource_chain_residual():
    """Same construction with a binding one-unit resource and rent y."""
    lamL = np.linspace(0.0, 6.0, 61)
    lamW = np.linspace(0.0, 7.0, 71)
    y = np.linspace(0.0, 5.0, 51)
    q = np.linspace(0.0, 1.0, 21)
    L, W, Y, Q = np.meshgrid(lamL, lamW, y, q, indexing="ij", sparse=True)
    net = L - 1.0 - Y
    producer = 10.0 * np.maximum(net, 0.0) - net * Q
    margin = W - L - 1.0
    carrier = 10.0 * np.maximum(margin, 0.0) - margin * Q
    consumer = np.maximum(10.0 - 2.0 * W, 0.0) - (Q / 2.0) * (10.0 - 2.0 * W)
    rent = np.abs(Y * (Q - 1.0))
    return lamL, lamW, y, q, producer + carrier + consumer + rent


class TestProducerResponse:
    def test_positive_margin_fills_the_box(self):
        p = Producer("s", u_max=np.array([10.0]), chi=0.0, c=np.array([1.0]))
        r = producer_best_response(p, np.array([2.0]), np.zeros(1), np.zeros(0))
        assert r.profit == pytest.approx(10.0)
        assert np.allclose(r.L, [10.0])
        assert r.alpha == 1.0

    def test_zero_margin_idles(self):
        p = Producer("s", u_max=np.array([10.0]), chi=3.0, c=np.array([1.0]))
        r = producer_best_response(p, np.array([1.0]), np.zeros(1), np.zeros(0))
        assert r.profit == 0.0
        assert np.allclose(r.L, 0.0)
        assert r.alpha == 0.0

    def test_fixed_cost_above_gross_margin_idles(self):
        # gross margin 10 * 0.4 = 4 falls short of chi = 5
        p = Producer("s", u_max=np.array([10.0]), chi=5.0, c=np.array([1.0]))
        r = producer_best_response(p, np.array([1.4]), np.zeros(1), np.zeros(0))
        assert r.profit == 0.0
        assert np.allclose(r.L, 0.0)
        assert r.alpha == 0.0

    def test_profit_subgradient_matches_output(self):
        p = Producer("s", u_max=np.array([7.0]), chi=1.0, c=np.array([1.0]))
        lam = np.array([1.8])
        eps = 1e-7
        up = producer_best_response(p, lam + eps, np.zeros(1), np.zeros(0)).profit
        dn = producer_best_response(p, lam - eps, np.zeros(1), np.zeros(0)).profit
        mid = producer_best_response(p, lam, np.zeros(1), np.zeros(0))
        assert (up - dn) / (2 * eps) == pytest.approx(mid.L[0], abs=1e-6)

    def test_envelope_in_all_price_blocks(self):
        p = Producer("s", u_max=np.array([4.0, 6.0]), chi=0.5,
                     c=np.array([0.3, 0.2]),
                     A=np.array([[0.1, 0.0], [0.2, 0.1]]),
                     R=np.array([[0.5, 0.25]]))
        lam_L = np.array([2.0, 0.1])
        lam_W = np.array([0.4, 0.6])
        y = np.array([0.7])
        base = producer_best_response(p, lam_L, lam_W, y)
        assert base.profit > 0.0
        eps = 1e-7

        def fd(block, k):
            e = np.zeros(len(block))
            e[k] = eps
            args = {"lam_L": lam_L, "lam_W": lam_W, "y": y}
            hi = dict(args)
            lo = dict(args)
            name = [n for n, v in args.items() if v is block][0]
            hi[name] = block + e
            lo[name] = block - e
            up = producer_best_response(p, hi["lam_L"], hi["lam_W"], hi["y"])
            dn = producer_best_response(p, lo["lam_L"], lo["lam_W"], lo["y"])
            return (up.profit - dn.profit) / (2 * eps)

        for k in range(2):
            assert fd(lam_L, k) == pytest.approx(base.L[k], abs=1e-6)
            assert fd(lam_W, k) == pytest.approx(-(p.A @ base.L)[k], abs=1e-6)
        assert fd(y, 0) == pytest.approx(-(p.R @ base.L)[0], abs=1e-6)

    def test_scaling_prices_and_costs_keeps_the_argmax(self):
        p = Producer("s", u_max=np.array([7.0]), chi=1.0, c=np.array([1.0]))
        lam = np.array([1.8])
        s = 3.7
        ps = Producer("s", u_max=np.array([7.0]), chi=s * 1.0,
                      c=np.array([s * 1.0]))
        r1 = producer_best_response(p, lam, np.zeros(1), np.zeros(0))
        r2 = producer_best_response(ps, s * lam, np.zeros(1), np.zeros(0))
        assert np.array_equal(r1.L, r2.L)
        assert r1.alpha == r2.alpha
        assert r2.profit == pytest.approx(s * r1.profit, rel=1e-12)


class TestConsumerResponse:
    def test_buys_the_minimum_bundle(self):
        r = consumer_best_response(one_good_consumer(), np.array([2.0]))
        assert np.allclose(r.W, [2.0])
        assert r.surplus == pytest.approx(6.0)
        assert r.beta == 1.0

    def test_income_boundary_drops_out(self):
        r = consumer_best_response(one_good_consumer(), np.array([5.0]))
        assert r.surplus == 0.0
        assert np.allclose(r.W, 0.0)
        assert r.beta == 0.0

    def test_picks_the_cheapest_good(self):
        cn = Consumer("t", Q=np.array([[1.0, 1.0]]), sigma_min=np.array([1.0]),
                      tau_inc=10.0)
        r = consumer_best_response(cn, np.array([3.0, 1.0]))
        assert np.allclose(r.W, [0.0, 1.0])
        assert r.surplus == pytest.approx(9.0)
        assert r.beta == 1.0

    def test_scaling_income_and_prices_keeps_the_bundle(self):
        s = 3.7
        r1 = consumer_best_response(one_good_consumer(10.0), np.array([2.0]))
        r2 = consumer_best_response(one_good_consumer(s * 10.0),
                                    np.array([s * 2.0]))
        assert np.array_equal(r1.W, r2.W)
        assert r2.surplus == pytest.approx(s * r1.surplus, rel=1e-12)

    def test_empty_demand_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            Consumer("t", Q=np.array([[0.0]]), sigma_min=np.array([1.0]),
                     tau_inc=5.0)


class TestProductivity:
    def test_slack_instance_passes(self):
        rep = productivity_check(toy_market())
        assert rep.ok
        assert rep.violated is None
        assert np.allclose(rep.L_bar["s"], [10.0])
        assert np.allclose(rep.W_bar["t"], [2.0])

    def test_self_consuming_technology_fails(self):
        # A = identity: every unit produced eats one unit of itself
        fc = FixedCosts(sources=("s",), sinks=("s", "t"),
                        T=np.array([[0.0, 1.0]]))
        producer = Producer("s", u_max=np.array([10.0]), chi=0.0,
                            c=np.array([1.0]), A=np.array([[1.0]]))
        consumers = (
            Consumer("s", Q=np.array([[1.0]]), sigma_min=np.array([0.0]),
                     tau_inc=1.0),
            one_good_consumer(),
        )
        inst = MarketInstance(producers=(producer,), consumers=consumers,
                              transport=fc, gamma=1e-3, b=np.zeros(0))
        rep = productivity_check(inst)
        assert not rep.ok
        assert "commodity 0" in rep.violated

    def test_resource_limit_below_capacity_fails(self):
        fc = FixedCosts(sources=("s",), sinks=("t",), T=np.array([[1.0]]))
        producer = Producer("s", u_max=np.array([10.0]), chi=0.0,
                            c=np.array([1.0]), R=np.array([[1.0]]))
        inst = MarketInstance(producers=(producer,),
                              consumers=(one_good_consumer(),),
                              transport=fc, gamma=1e-3, b=np.array([5.0]))
        rep = productivity_check(inst)
        assert not rep.ok
        assert "resource 0" in rep.violated
        assert "limit 5" in rep.violated


class TestWalrasResiduals:
    def test_all_zero_candidate_is_clean(self):
        res = walras_residuals(
            toy_market(), d={("s", "t"): np.zeros(1)}, L={"s": np.zeros(1)},
            W={"t": np.zeros(1)}, y=np.zeros(0), lam_L={"s": np.zeros(1)},
            lam_W={"t": np.zeros(1)})
        assert set(res.groups) == {"source_balance", "origin_site_balance",
                                   "sink_balance", "resource"}
        assert res.max_all == 0.0

    def test_unsold_output_shows_as_complementarity(self):
        res = walras_residuals(
            toy_market(), d={("s", "t"): np.zeros(1)}, L={"s": np.ones(1)},
            W={"t": np.zeros(1)}, y=np.zeros(0), lam_L={"s": np.ones(1)},
            lam_W={"t": np.zeros(1)})
        viol, comp = res.groups["source_balance"]
        # shipping less than production is slack, not a violation
        assert viol == 0.0
        assert comp == pytest.approx(1.0)

    def test_overshipping_is_a_violation(self):
        res = walras_residuals(
            toy_market(), d={("s", "t"): 2.0 * np.ones(1)},
            L={"s": np.ones(1)}, W={"t": 2.0 * np.ones(1)}, y=np.zeros(0),
            lam_L={"s": np.zeros(1)}, lam_W={"t": np.zeros(1)})
        viol, comp = res.groups["source_balance"]
        assert viol == pytest.approx(1.0)
        assert comp == 0.0


class TestSolveMarket:
    def test_grid_oracle_pins_the_toy_equilibrium(self):
        lamL, lamW, d, R = toy_chain_residual()
        assert R.min() >= -1e-12
        i, j, k = np.unravel_index(np.argmin(R), R.shape)
        assert (lamL[i], lamW[j], d[k]) == (1.0, 2.0, 2.0)
        assert R[i, j, k] <= 1e-12
        near = np.argwhere(R <= 0.04)
        assert len(near) == 1  # the zero is isolated at grid resolution

    def test_toy_equilibrium_matches_the_oracle(self):
        eq = solve_market(toy_market(),
                          SolveConfig(tol=1e-7, max_iter=40000, step=0.1))
        assert eq.converged
        assert float(eq.d[("s", "t")][0]) == pytest.approx(2.0, abs=1e-2)
        assert float(eq.lam_L["s"][0]) == pytest.approx(1.0, abs=1e-2)
        assert float(eq.lam_W["t"][0]) == pytest.approx(2.0, abs=1e-2)
        assert float(eq.L["s"][0]) == pytest.approx(2.0, abs=1e-2)
        assert float(eq.W["t"][0]) == pytest.approx(2.0, abs=1e-2)
        assert eq.alpha["s"] == pytest.approx(0.2, abs=1e-2)
        assert eq.beta["t"] == pytest.approx(1.0, abs=1e-2)
        assert len(eq.y) == 0
        assert eq.walras.max_all <= 1e-3

    def test_income_collapse_kills_trade(self):
        eq = solve_market(toy_market(tau_inc=3.0),
                          SolveConfig(tol=1e-7, max_iter=40000, step=0.1))
        assert eq.converged
        assert float(eq.d[("s", "t")][0]) <= 1e-6
        assert np.allclose(eq.L["s"], 0.0)
        assert np.allclose(eq.W["t"], 0.0)
        assert eq.alpha["s"] == 0.0
        assert eq.beta["t"] == 0.0
        assert eq.walras.max_all <= 1e-3

    def test_grid_oracle_pins_the_resource_equilibrium(self):
        lamL, lamW, y, q, R = resource_chain_residual()
        assert R.min() >= -1e-12
        i, j, k, l = np.unravel_index(np.argmin(R), R.shape)
        assert (lamL[i], lamW[j], y[k], q[l]) == (4.0, 5.0, 3.0, 1.0)
        assert R[i, j, k, l] <= 1e-12
        near = np.argwhere(R <= 0.04)
        assert len(near) == 1

    def test_resource_cap_forces_fractional_participation(self):
        inst = toy_market(resource=True)
        with pytest.raises(ValueError, match="productivity"):
            solve_market(inst)
        eq = solve_market(inst, SolveConfig(tol=1e-6, max_iter=60000, step=0.1),
                          require_productive=False)
        assert eq.converged
        assert float(eq.d[("s", "t")][0]) == pytest.approx(1.0, abs=2e-2)
        assert float(eq.L["s"][0]) == pytest.approx(1.0, abs=2e-2)
        assert float(eq.W["t"][0]) == pytest.approx(1.0, abs=2e-2)
        assert float(eq.y[0]) == pytest.approx(3.0, abs=2e-2)
        assert float(eq.lam_L["s"][0]) == pytest.approx(4.0, abs=2e-2)
        assert float(eq.lam_W["t"][0]) == pytest.approx(5.0, abs=2e-2)
        assert eq.alpha["s"] == pytest.approx(0.1, abs=2e-2)
        assert eq.beta["t"] == pytest.approx(0.5, abs=2e-2)
        assert eq.walras.max_all <= 1e-3


class TestInstanceValidation:
    def test_intermediate_inputs_need_a_local_consumer(self):
        fc = FixedCosts(sources=("s",), sinks=("t",), T=np.array([[1.0]]))
        producer = Producer("s", u_max=np.array([10.0]), chi=0.0,
                            c=np.array([1.0]), A=np.array([[0.5]]))
        with pytest.raises(ValueError, match="no local consumer"):
            MarketInstance(producers=(producer,),
                           consumers=(one_good_consumer(),),
                           transport=fc, gamma=1e-3, b=np.zeros(0))

    def test_needs_positive_gamma(self):
        with pytest.raises(ValueError, match="gamma"):
            toy_market(gamma=0.0)

    def test_commodity_counts_must_agree(self):
        fc = FixedCosts(sources=("s",), sinks=("t",), T=np.array([[1.0]]))
        producer = Producer("s", u_max=np.array([10.0, 1.0]))
        with pytest.raises(ValueError, match="commodity"):
            MarketInstance(producers=(producer,),
                           consumers=(one_good_consumer(),),
                           transport=fc, gamma=1e-3, b=np.zeros(0))

    def test_producer_site_must_be_a_transport_source(self):
        fc = FixedCosts(sources=("x",), sinks=("t",), T=np.array([[1.0]]))
        producer = Producer("s", u_max=np.array([10.0]))
        with pytest.raises(ValueError, match="transport source"):
            MarketInstance(producers=(producer,),
                           consumers=(one_good_consumer(),),
                           transport=fc, gamma=1e-3, b=np.zeros(0))

    def test_resource_rows_must_match_limits(self):
        fc = FixedCosts(sources=("s",), sinks=("t",), T=np.array([[1.0]]))
        producer = Producer("s", u_max=np.array([10.0]), R=np.array([[1.0]]))
        with pytest.raises(ValueError, match="resource rows"):
            MarketInstance(producers=(producer,),
                           consumers=(one_good_consumer(),),
                           transport=fc, gamma=1e-3, b=np.zeros(0))

import numpy as np
import pytest

from helpers import (
    build_scenario,
    make_prosumer,
    singleton_closed_form_load,
    singleton_scenario,
)
from prosumer_market.assembly import (
    ProsumerLayout,
    QpBuilder,
    add_prosumer_constraints,
    decision_to_vector,
    vector_to_decision,
)
from prosumer_market.best_response import (
    BestResponseInput,
    assemble_best_response,
    cold_start,
    exact_response_input,
    solve_best_response,
)
from prosumer_market.domain import (
    BatterySpec,
    Decision,
    ExchangePrices,
    StrategyProfile,
    feasibility_check,
    prosumer_payoff,
)
from prosumer_market.generator import default_time_grid, generate_scenario
from prosumer_market.qp import solve_qp


def zero_input(scenario, i=0, exact=False, prices=None, alpha=1.0):
    n, t = scenario.n_prosumers, scenario.time.num_slots
    return BestResponseInput(
        prosumer=i, scenario=scenario,
        prices=prices or ExchangePrices.constant(0.0, n, t),
        others_prev_load=np.zeros(t),
        own_prev=Decision.zeros(n, t, len(scenario.prosumers[i].appliances)),
        alpha=alpha, exact_mode=exact,
        committed_sales=np.zeros((n, t)) if exact else None,
        peer_availability=np.zeros((n, t)) if exact else None)


class TestAssembly:
    def test_variable_count(self):
        sc = generate_scenario(4, default_time_grid(5), seed=0)
        prob = assemble_best_response(zero_input(sc))
        n_appl = len(sc.prosumers[0].appliances)
        assert prob.n == 5 * (n_appl + 2 * 3 + 6)

    def test_singleton_reduces_to_two_effective_variables(self):
        # With no peers, battery, or appliances the only free variables are
        # consumption and grid purchase tied by consumption = 0.8 * purchase.
        sc = singleton_scenario(t=1)
        prob = assemble_best_response(zero_input(sc, exact=True))
        sol = solve_qp(prob)
        assert sol.status == "optimal"
        layout = ProsumerLayout(sc, 0)
        d = sol.x[layout.consumption(0)]
        l = sol.x[layout.grid(0)]
        assert d == pytest.approx(0.8 * l, abs=1e-8)
        assert l == pytest.approx(singleton_closed_form_load(), abs=1e-7)

    def test_invalid_alpha_rejected(self):
        sc = singleton_scenario()
        with pytest.raises(ValueError):
            zero_input(sc, alpha=0.0)


class TestExactMode:
    def test_singleton_closed_form(self):
        sc = singleton_scenario(t=3)
        dec = solve_best_response(zero_input(sc, exact=True))
        expected = singleton_closed_form_load()
        np.testing.assert_allclose(dec.grid_purchase, expected, atol=1e-7)
        np.testing.assert_allclose(dec.consumption, 0.8 * expected, atol=1e-7)
        assert feasibility_check(dec, sc.prosumers[0], sc) == []

    def test_free_peer_energy_displaces_grid(self):
        # Peer 1 posts ample free supply at better efficiency than the grid:
        # the buyer covers its whole demand from the peer and buys no grid.
        sc = build_scenario([make_prosumer(0, 1), make_prosumer(1, 1)])
        n, t = 2, 1
        inp = BestResponseInput(
            prosumer=0, scenario=sc,
            prices=ExchangePrices.constant(0.0, n, t),
            others_prev_load=np.zeros(t),
            own_prev=Decision.zeros(n, t),
            exact_mode=True,
            committed_sales=np.zeros((n, t)),
            peer_availability=np.array([[0.0], [12.0]]))
        # The optimum pins grid purchase at its bound with a vanishing
        # multiplier, so primal accuracy there scales like sqrt(tol).
        dec = solve_best_response(inp, tol=1e-10)
        assert dec.grid_purchase[0] == pytest.approx(0.0, abs=1e-4)
        # Free energy: consume to the unconstrained utility peak.
        assert dec.consumption[0] == pytest.approx(3.0, abs=1e-5)
        assert dec.bought_from[1, 0] == pytest.approx(3.0 / 0.9, abs=1e-4)

    def test_zero_utility_means_zero_decision(self):
        # Fully degenerate optimum (every variable at a bound with zero
        # multiplier): primal accuracy scales like sqrt(tol).
        sc = singleton_scenario(beta=0.0)
        dec = solve_best_response(zero_input(sc, exact=True), tol=1e-10)
        assert np.abs(dec.grid_purchase).max() <= 1e-4
        assert np.abs(dec.consumption).max() <= 1e-4

    def test_output_is_argmax_under_projected_perturbations(self):
        sc = build_scenario([
            make_prosumer(0, 2, renewable=1.0,
                          battery=BatterySpec(capacity=5.0, max_charge_rate=3.0,
                                              max_discharge_rate=3.0,
                                              charge_efficiency=0.95,
                                              discharge_efficiency=0.95)),
            make_prosumer(1, 2)])
        mu = ExchangePrices.constant(0.1, 2, 2)
        inp = BestResponseInput(
            prosumer=0, scenario=sc, prices=mu,
            others_prev_load=np.full(2, 1.0),
            own_prev=Decision.zeros(2, 2),
            exact_mode=True,
            committed_sales=np.array([[0.0, 0.0], [0.5, 0.5]]),
            peer_availability=np.zeros((2, 2)))
        best = solve_best_response(inp)
        layout = ProsumerLayout(sc, 0)
        best_vec = decision_to_vector(best, layout)

        others = Decision(
            grid_purchase=[1.0, 1.0], consumption=[0.5, 0.5],
            sold_total=[0.0, 0.0], bought_total=[0.5, 0.5],
            sold_to=np.zeros((2, 2)),
            bought_from=np.array([[0.5, 0.5], [0.0, 0.0]]),
            charge=[0.0, 0.0], discharge=[0.0, 0.0],
            appliance_load=np.zeros((0, 2)))

        def payoff(dec):
            return prosumer_payoff(0, StrategyProfile((dec, others)), mu, sc)

        rng = np.random.default_rng(4)
        base = payoff(best)
        for _ in range(50):
            target = best_vec + rng.normal(0, 0.3, size=layout.size)
            builder = QpBuilder(layout.size)
            add_prosumer_constraints(builder, sc, layout,
                                     sold_pins=inp.committed_sales,
                                     availability=inp.peer_availability)
            for k in range(layout.size):
                builder.add_quad(k, k, 2.0)
                builder.add_lin(k, -2.0 * target[k])
            proj = solve_qp(builder.build())
            assert proj.status == "optimal"
            perturbed = vector_to_decision(proj.x, layout, 2)
            assert base >= payoff(perturbed) - 1e-6


class TestProximal:
    def test_small_alpha_stays_near_previous(self):
        sc = singleton_scenario(t=2)
        prev = Decision.zeros(1, 2)
        distances = []
        for alpha in (1.0, 0.5, 0.1, 0.02, 0.004):
            inp = BestResponseInput(
                prosumer=0, scenario=sc,
                prices=ExchangePrices.constant(0.0, 1, 2),
                others_prev_load=np.zeros(2), own_prev=prev, alpha=alpha)
            dec = solve_best_response(inp)
            layout = ProsumerLayout(sc, 0)
            distances.append(np.abs(decision_to_vector(dec, layout)).max())
        for a, b in zip(distances, distances[1:]):
            assert b <= a + 1e-9
        assert distances[-1] < 0.01

    def test_relaxed_solution_feasible_per_prosumer(self):
        sc = generate_scenario(3, default_time_grid(4), seed=8)
        for i in range(3):
            prev = cold_start(sc, i)
            inp = BestResponseInput(
                prosumer=i, scenario=sc,
                prices=ExchangePrices.constant(0.05, 3, 4),
                others_prev_load=np.full(4, 2.0), own_prev=prev, alpha=0.5)
            dec = solve_best_response(inp)
            assert feasibility_check(dec, sc.prosumers[i], sc) == []


class TestColdStart:
    def test_zero_when_feasible(self):
        sc = singleton_scenario(t=3)
        dec = cold_start(sc, 0)
        assert np.abs(decision_to_vector(dec, ProsumerLayout(sc, 0))).max() == 0.0

    def test_min_norm_when_renewables_force_flows(self):
        sc = build_scenario([make_prosumer(
            0, 2, renewable=2.0,
            battery=BatterySpec(capacity=10.0, max_charge_rate=5.0,
                                max_discharge_rate=5.0,
                                charge_efficiency=0.95,
                                discharge_efficiency=0.95))])
        dec = cold_start(sc, 0)
        assert feasibility_check(dec, sc.prosumers[0], sc) == []
        # Harvested energy must be discharged over the horizon.
        assert dec.discharge.sum() > 1.0


class TestNoArbitrage:
    def test_no_simultaneous_buy_and_sell(self):
        # Uniform prices and lossy links: buying back what you sell wastes
        # energy, so the exact best response never does both in a slot.
        sc = generate_scenario(3, default_time_grid(3), seed=21)
        mu = ExchangePrices.constant(0.2, 3, 3)
        profile = StrategyProfile(tuple(cold_start(sc, i) for i in range(3)))
        for i in range(3):
            inp = exact_response_input(i, sc, mu, profile)
            dec = solve_best_response(inp)
            overlap = np.minimum(dec.bought_total, dec.sold_total).max()
            assert overlap <= 1e-6

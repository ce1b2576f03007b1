import numpy as np
import pytest

from prosumer_market.domain import (
    ApplianceSpec,
    BatterySpec,
    Decision,
    ExchangePrices,
    GridPricing,
    ProsumerSpec,
    ScenarioConfig,
    StrategyProfile,
    TimeGrid,
    TransmissionModel,
    UtilityParams,
    feasibility_check,
    grid_price,
    prosumer_payoff,
    utility_value,
)
from prosumer_market.generator import GeneratorKnobs, default_time_grid, generate_scenario


def bare_prosumer(pid, t, beta=0.6, zeta=0.1, renewable=None, d_max=10.0):
    return ProsumerSpec(
        id=pid,
        battery=BatterySpec(),
        utility=UtilityParams(linear=np.full(t, beta), quadratic=zeta),
        renewable=np.zeros(t) if renewable is None else np.asarray(renewable, float),
        demand_min=np.zeros(t),
        demand_max=np.full(t, d_max),
    )


def tiny_scenario(n=2, t=1, **kwargs):
    peer = np.full((n, n), 0.9)
    np.fill_diagonal(peer, 1.0)
    return ScenarioConfig(
        time=TimeGrid(num_slots=t),
        prosumers=tuple(bare_prosumer(i, t, **kwargs) for i in range(n)),
        transmission=TransmissionModel(peer_efficiency=peer,
                                       grid_efficiency=np.full(n, 0.8)),
        grid=GridPricing(slope=np.full(t, 0.15)),
        cost=__import__("prosumer_market.domain", fromlist=["GenerationCost"]).GenerationCost(),
    )


class TestGridPrice:
    def test_linear_formula(self):
        assert grid_price(0.15, (2, 3, 5)) == pytest.approx(1.5)

    def test_zero_case(self):
        assert grid_price(0.15, (0, 0)) == 0.0

    def test_identity_case(self):
        assert grid_price(1.0, (1,)) == 1.0

    def test_negative_load_rejected(self):
        with pytest.raises(ValueError):
            grid_price(0.15, (1.0, -0.5))

    def test_linearity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.random(4) * 5
            b = rng.random(4) * 5
            g = 0.05 + rng.random()
            assert grid_price(g, a + b) == pytest.approx(
                grid_price(g, a) + grid_price(g, b))


class TestProsumerPayoff:
    def test_all_zero_decision(self):
        sc = tiny_scenario(n=2, t=1)
        profile = StrategyProfile((Decision.zeros(2, 1), Decision.zeros(2, 1)))
        mu = ExchangePrices.constant(0.5, 2, 1)
        assert prosumer_payoff(0, profile, mu, sc) == 0.0

    def test_seller_with_consumption(self):
        # mu_i=0.5, s=2, l=0, q=0, beta=0.6, zeta=0.1, d=3 -> 1.9
        sc = tiny_scenario(n=2, t=1)
        d0 = Decision(
            grid_purchase=[0.0], consumption=[3.0], sold_total=[2.0],
            bought_total=[0.0], sold_to=np.array([[0.0], [2.0]]),
            bought_from=np.zeros((2, 1)), charge=[0.0], discharge=[0.0],
            appliance_load=np.zeros((0, 1)))
        profile = StrategyProfile((d0, Decision.zeros(2, 1)))
        mu = ExchangePrices.constant(0.5, 2, 1)
        assert prosumer_payoff(0, profile, mu, sc) == pytest.approx(1.9)

    def test_buyer_with_grid_purchase(self):
        # q_{1,2}=1 at mu_2=0.4, l_1=2, total load 4, gamma=0.1, U=1.0 -> -0.2
        sc = tiny_scenario(n=2, t=1)
        sc = ScenarioConfig(
            time=sc.time,
            prosumers=(bare_prosumer(0, 1, beta=0.5, zeta=0.0), bare_prosumer(1, 1)),
            transmission=sc.transmission,
            grid=GridPricing(slope=np.array([0.1])),
            cost=sc.cost)
        d0 = Decision(
            grid_purchase=[2.0], consumption=[2.0], sold_total=[0.0],
            bought_total=[1.0], sold_to=np.zeros((2, 1)),
            bought_from=np.array([[0.0], [1.0]]), charge=[0.0], discharge=[0.0],
            appliance_load=np.zeros((0, 1)))
        d1 = Decision.zeros(2, 1)
        d1 = Decision(
            grid_purchase=[2.0], consumption=d1.consumption, sold_total=[1.0],
            bought_total=[0.0], sold_to=np.array([[1.0], [0.0]]),
            bought_from=np.zeros((2, 1)), charge=[0.0], discharge=[0.0],
            appliance_load=np.zeros((0, 1)))
        profile = StrategyProfile((d0, d1))
        mu = ExchangePrices(np.array([[0.0], [0.4]]))
        # U_0 = 0.5*2 - 0 = 1.0; payoff = 1.0 - 0.4 - 2*0.1*4 = -0.2
        assert prosumer_payoff(0, profile, mu, sc) == pytest.approx(-0.2)

    def test_index_out_of_range(self):
        sc = tiny_scenario(n=2, t=1)
        profile = StrategyProfile((Decision.zeros(2, 1), Decision.zeros(2, 1)))
        mu = ExchangePrices.constant(0.0, 2, 1)
        with pytest.raises(IndexError):
            prosumer_payoff(5, profile, mu, sc)

    def test_concave_in_own_decision(self):
        # payoff(lam*x + (1-lam)*y) >= lam*payoff(x) + (1-lam)*payoff(y) - 1e-9
        sc = tiny_scenario(n=3, t=4)
        rng = np.random.default_rng(1)
        mu = ExchangePrices(rng.random((3, 4)))
        others = [Decision.zeros(3, 4), Decision.zeros(3, 4)]

        def random_decision():
            return Decision(
                grid_purchase=rng.random(4) * 3, consumption=rng.random(4) * 5,
                sold_total=rng.random(4), bought_total=rng.random(4),
                sold_to=rng.random((3, 4)), bought_from=rng.random((3, 4)),
                charge=rng.random(4), discharge=rng.random(4),
                appliance_load=np.zeros((0, 4)))

        def blend(a, b, lam):
            return Decision(
                **{name: lam * getattr(a, name) + (1 - lam) * getattr(b, name)
                   for name in ("grid_purchase", "consumption", "sold_total",
                                "bought_total", "sold_to", "bought_from",
                                "charge", "discharge", "appliance_load")})

        for _ in range(25):
            x, y = random_decision(), random_decision()
            lam = rng.random()
            px = prosumer_payoff(0, StrategyProfile((x, *others)), mu, sc)
            py = prosumer_payoff(0, StrategyProfile((y, *others)), mu, sc)
            pm = prosumer_payoff(0, StrategyProfile((blend(x, y, lam), *others)), mu, sc)
            assert pm >= lam * px + (1 - lam) * py - 1e-9


class TestFeasibilityCheck:
    def test_zero_point_feasible(self):
        sc = tiny_scenario(n=2, t=3)
        violations = feasibility_check(Decision.zeros(2, 3), sc.prosumers[0], sc)
        assert violations == []

    def test_battery_capacity_violation(self):
        sc = tiny_scenario(n=1, t=2)
        spec = ProsumerSpec(
            id=0,
            battery=BatterySpec(capacity=2.0, max_charge_rate=10, max_discharge_rate=10),
            utility=sc.prosumers[0].utility,
            renewable=np.zeros(2), demand_min=np.zeros(2), demand_max=np.full(2, 10.0))
        sc = ScenarioConfig(time=sc.time, prosumers=(spec,),
                            transmission=sc.transmission, grid=sc.grid, cost=sc.cost)
        # Charging 3 kWh in slot 1 puts the level at capacity + 1.
        dec = Decision(
            grid_purchase=[3.75, 0.0], consumption=[0.0, 0.0], sold_total=[0.0, 0.0],
            bought_total=[0.0, 0.0], sold_to=np.zeros((1, 2)),
            bought_from=np.zeros((1, 2)), charge=[3.0, 0.0], discharge=[0.0, 3.0],
            appliance_load=np.zeros((0, 2)))
        violations = feasibility_check(dec, spec, sc)
        cap = [v for v in violations if v.constraint == "battery_capacity"]
        assert cap and cap[0].magnitude == pytest.approx(1.0)

    def test_consumption_split_violation(self):
        sc = tiny_scenario(n=1, t=1)
        spec = ProsumerSpec(
            id=0, battery=BatterySpec(), utility=sc.prosumers[0].utility,
            renewable=np.zeros(1), demand_min=np.zeros(1), demand_max=np.full(1, 10.0),
            appliances=(ApplianceSpec(kind="deferrable", per_slot_max=5.0,
                                      total_energy=0.0, deadline=1),))
        sc = ScenarioConfig(time=sc.time, prosumers=(spec,),
                            transmission=sc.transmission, grid=sc.grid, cost=sc.cost)
        dec = Decision(
            grid_purchase=[0.0], consumption=[1.5], sold_total=[0.0],
            bought_total=[0.0], sold_to=np.zeros((1, 1)), bought_from=np.zeros((1, 1)),
            charge=[0.0], discharge=[0.0], appliance_load=np.array([[1.0]]))
        violations = feasibility_check(dec, spec, sc)
        split = [v for v in violations if v.constraint == "consumption_split"]
        assert split and split[0].magnitude == pytest.approx(0.5)


class TestInvariants:
    def test_transmission_assumption_enforced(self):
        with pytest.raises(ValueError):
            TransmissionModel(peer_efficiency=np.array([[1.0, 0.7], [0.7, 1.0]]),
                              grid_efficiency=np.array([0.8, 0.8]))

    def test_battery_initial_in_range(self):
        with pytest.raises(ValueError):
            BatterySpec(capacity=5.0, initial_level=6.0)

    def test_appliance_deadline_feasibility(self):
        with pytest.raises(ValueError):
            ApplianceSpec(kind="deferrable", per_slot_max=1.0, total_energy=5.0,
                          deadline=2)

    def test_peak_slots_inside_horizon(self):
        with pytest.raises(ValueError):
            TimeGrid(num_slots=4, peak_slots=frozenset({5}))

    def test_utility_value(self):
        params = UtilityParams(linear=np.array([0.6]), quadratic=0.1)
        assert utility_value(params, [3.0]) == pytest.approx(0.9)

"""Shared scenario builders for the test suite."""

import numpy as np

from prosumer_market.domain import (
    ApplianceSpec,
    BatterySpec,
    GenerationCost,
    GridPricing,
    ProsumerSpec,
    ScenarioConfig,
    TimeGrid,
    TransmissionModel,
    UtilityParams,
)


def build_scenario(prosumers, gamma=0.15, peer_eff=0.9, grid_eff=0.8,
                   slot_hours=1.0, peak_slots=frozenset(), cost=None):
    n = len(prosumers)
    t = prosumers[0].renewable.shape[0]
    peer = np.full((n, n), peer_eff)
    np.fill_diagonal(peer, 1.0)
    return ScenarioConfig(
        time=TimeGrid(num_slots=t, slot_hours=slot_hours, peak_slots=peak_slots),
        prosumers=tuple(prosumers),
        transmission=TransmissionModel(peer_efficiency=peer,
                                       grid_efficiency=np.full(n, grid_eff)),
        grid=GridPricing(slope=np.full(t, gamma)),
        cost=cost or GenerationCost(),
    )


def make_prosumer(pid, t, beta=0.6, zeta=0.1, renewable=0.0, d_min=0.0,
                  d_max=10.0, battery=None, appliances=()):
    beta_vec = np.full(t, beta) if np.isscalar(beta) else np.asarray(beta, float)
    renew = np.full(t, renewable) if np.isscalar(renewable) else np.asarray(renewable, float)
    return ProsumerSpec(
        id=pid,
        battery=battery or BatterySpec(),
        utility=UtilityParams(linear=beta_vec, quadratic=zeta),
        renewable=renew,
        demand_min=np.full(t, d_min),
        demand_max=np.full(t, d_max),
        appliances=tuple(appliances),
    )


def singleton_scenario(t=1, beta=0.6, zeta=0.1, gamma=0.15, grid_eff=0.8, **kwargs):
    return build_scenario([make_prosumer(0, t, beta=beta, zeta=zeta, **kwargs)],
                          gamma=gamma, grid_eff=grid_eff)


def singleton_closed_form_load(beta=0.6, zeta=0.1, gamma=0.15, r=0.8):
    """Optimal grid purchase of the isolated prosumer with no storage:
    maximize beta*(r*l) - zeta*(r*l)^2 - gamma*l^2."""
    return beta * r / (2.0 * (zeta * r * r + gamma))


def producer_consumer_scenario(t=2, renewable_rich=4.0, battery_cap=10.0):
    """Two prosumers: one with renewable surplus, one pure consumer."""
    rich = make_prosumer(
        0, t, beta=0.2, renewable=renewable_rich,
        battery=BatterySpec(capacity=battery_cap, max_charge_rate=5.0,
                            max_discharge_rate=5.0,
                            charge_efficiency=0.95, discharge_efficiency=0.95))
    poor = make_prosumer(1, t, beta=0.7)
    return build_scenario([rich, poor])

"""Random scenario generation.

Defaults follow the reference experimental setup: utility slopes drawn
around 0.3 $/kWh off-peak and 0.6 $/kWh at peak (sd 0.3, clipped at 0),
quadratic utility coefficient 0.1, renewables around 2 kWh per slot
(sd 1, clipped at 0), 10 kWh batteries, peer delivery efficiency 0.9
against 0.8 for the grid, and a flat grid price slope of 0.15.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .domain import (
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

__all__ = ["GeneratorKnobs", "default_time_grid", "generate_scenario"]

# Hours of day with peak utility pricing; anything else is off-peak.
PEAK_HOURS = frozenset(range(9, 13)) | frozenset(range(16, 19))


@dataclass(frozen=True)
class GeneratorKnobs:
    """Tunable parameters of generate_scenario; defaults at desk scale."""

    beta_offpeak_mean: float = 0.3
    beta_peak_mean: float = 0.6
    beta_sd: float = 0.3
    zeta: float = 0.1
    renewable_mean: float = 2.0
    renewable_sd: float = 1.0
    renewable_scale: float = 1.0
    battery_capacity: float = 10.0
    battery_initial: float = 0.0
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95
    max_charge_rate: float = 5.0  # kW
    max_discharge_rate: float = 5.0  # kW
    peer_efficiency: float = 0.9
    grid_efficiency: float = 0.8
    gamma: float = 0.15
    demand_min: float = 0.0
    demand_max: float = 10.0
    cost_quad_low: float = 1.0
    cost_const_low: float = 1.0
    cost_quad_high: float = 2.0
    cost_const_high: float = 2.0
    cost_threshold_mw: float = 2.0  # converted to kWh via slot duration
    n_deferrable: int = 0
    deferrable_energy_mean: float = 3.0
    deferrable_per_slot_max: float = 2.0
    n_nondeferrable: int = 0
    nondeferrable_load_mean: float = 0.5

    def __post_init__(self):
        nonneg = (
            "beta_offpeak_mean", "beta_peak_mean", "beta_sd", "zeta",
            "renewable_mean", "renewable_sd", "battery_capacity",
            "battery_initial", "max_charge_rate", "max_discharge_rate",
            "demand_min", "deferrable_energy_mean", "nondeferrable_load_mean",
        )
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValueError(f"knob {name} must be >= 0")
        if self.renewable_scale < 0:
            raise ValueError("knob renewable_scale must be >= 0")
        if not 0 < self.grid_efficiency < self.peer_efficiency <= 1:
            raise ValueError("knobs must satisfy 0 < grid_efficiency < peer_efficiency <= 1")
        if self.gamma <= 0:
            raise ValueError("knob gamma must be > 0")
        if self.demand_max < self.demand_min:
            raise ValueError("knob demand_max must be >= demand_min")
        if self.n_deferrable < 0 or self.n_nondeferrable < 0:
            raise ValueError("appliance counts must be >= 0")
        if self.deferrable_per_slot_max <= 0 and self.n_deferrable > 0:
            raise ValueError("knob deferrable_per_slot_max must be > 0")


def default_time_grid(num_slots: int, slot_hours: float = 1.0) -> TimeGrid:
    """Horizon whose slot numbers are hours of day starting at hour 1."""
    peaks = frozenset(t for t in range(1, num_slots + 1) if t in PEAK_HOURS)
    return TimeGrid(num_slots=num_slots, slot_hours=slot_hours, peak_slots=peaks)


def _clip0(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def generate_scenario(n: int, time: TimeGrid, seed: int,
                      knobs: GeneratorKnobs | None = None) -> ScenarioConfig:
    """Draw a random scenario with n prosumers; deterministic in seed."""
    if n < 1:
        raise ValueError("need at least one prosumer")
    knobs = knobs or GeneratorKnobs()
    rng = np.random.default_rng(seed)
    t = time.num_slots
    peak = time.peak_mask()
    beta_mean = np.where(peak, knobs.beta_peak_mean, knobs.beta_offpeak_mean)

    prosumers = []
    for i in range(n):
        beta = _clip0(rng.normal(beta_mean, knobs.beta_sd))
        renewable = knobs.renewable_scale * _clip0(
            rng.normal(knobs.renewable_mean, knobs.renewable_sd, size=t))
        appliances = []
        for _ in range(knobs.n_deferrable):
            deadline = int(rng.integers(max(1, t // 2), t + 1))
            cap = knobs.deferrable_per_slot_max
            total = float(min(_clip0(rng.normal(knobs.deferrable_energy_mean, 1.0)),
                              0.9 * deadline * cap))
            appliances.append(ApplianceSpec(
                kind="deferrable", per_slot_max=cap, total_energy=total,
                deadline=deadline))
        for _ in range(knobs.n_nondeferrable):
            load = float(_clip0(rng.normal(knobs.nondeferrable_load_mean, 0.2)))
            appliances.append(ApplianceSpec(
                kind="nondeferrable", per_slot_max=load, per_slot_min=load))
        fixed = sum(a.per_slot_min for a in appliances if a.kind == "nondeferrable")
        dmax = max(knobs.demand_max, fixed)
        prosumers.append(ProsumerSpec(
            id=i,
            battery=BatterySpec(
                capacity=knobs.battery_capacity,
                initial_level=min(knobs.battery_initial, knobs.battery_capacity),
                charge_efficiency=knobs.charge_efficiency,
                discharge_efficiency=knobs.discharge_efficiency,
                max_charge_rate=knobs.max_charge_rate,
                max_discharge_rate=knobs.max_discharge_rate,
            ),
            utility=UtilityParams(linear=beta, quadratic=knobs.zeta),
            renewable=renewable,
            demand_min=np.full(t, knobs.demand_min),
            demand_max=np.full(t, dmax),
            appliances=tuple(appliances),
        ))

    peer = np.full((n, n), knobs.peer_efficiency)
    np.fill_diagonal(peer, 1.0)  # diagonal unused
    transmission = TransmissionModel(
        peer_efficiency=peer, grid_efficiency=np.full(n, knobs.grid_efficiency))
    grid = GridPricing(slope=np.full(t, knobs.gamma))
    cost = GenerationCost(
        quad_low=knobs.cost_quad_low, const_low=knobs.cost_const_low,
        quad_high=knobs.cost_quad_high, const_high=knobs.cost_const_high,
        threshold=knobs.cost_threshold_mw * 1000.0 * time.slot_hours,
    )
    return ScenarioConfig(time=time, prosumers=tuple(prosumers),
                          transmission=transmission, grid=grid, cost=cost)

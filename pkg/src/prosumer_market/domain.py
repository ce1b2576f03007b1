"""Domain model of the prosumer exchange market.

Types describe one game instance (horizon, prosumers, transmission,
pricing) and one strategy (per-slot loads, trades, battery flows).
Units are kWh for energy and $ per kWh for prices throughout; slot
indices in arrays are 0-based, while TimeGrid.peak_slots holds 1-based
slot numbers (they read as hours of day).

All types are immutable after construction and all operations here are
pure functions, so everything is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "ApplianceSpec",
    "BatterySpec",
    "UtilityParams",
    "ProsumerSpec",
    "TransmissionModel",
    "GridPricing",
    "GenerationCost",
    "ScenarioConfig",
    "Decision",
    "StrategyProfile",
    "ExchangePrices",
    "Violation",
    "FEASIBILITY_TOL",
    "grid_price",
    "utility_value",
    "prosumer_payoff",
    "feasibility_check",
]

FEASIBILITY_TOL = 1e-7  # kWh tolerance for constraint violations


def _frozen_array(value, shape=None, name="array") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Slotted horizon: num_slots slots of slot_hours each.

    peak_slots contains 1-based slot numbers with peak-period pricing.
    """

    num_slots: int
    slot_hours: float = 1.0
    peak_slots: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.num_slots < 1:
            raise ValueError("num_slots must be >= 1")
        if self.slot_hours <= 0:
            raise ValueError("slot_hours must be positive")
        peaks = frozenset(int(t) for t in self.peak_slots)
        if any(t < 1 or t > self.num_slots for t in peaks):
            raise ValueError("peak_slots must lie in 1..num_slots")
        object.__setattr__(self, "peak_slots", peaks)

    def peak_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_slots, dtype=bool)
        for t in self.peak_slots:
            mask[t - 1] = True
        return mask


@dataclass(frozen=True)
class ApplianceSpec:
    """One appliance: either deferrable (total energy by a deadline) or
    nondeferrable (fixed per-slot profile, per_slot_min == per_slot_max)."""

    kind: str
    per_slot_max: float
    per_slot_min: float = 0.0
    total_energy: float = 0.0
    deadline: Optional[int] = None  # 1-based slot, deferrable only

    def __post_init__(self):
        if self.kind not in ("deferrable", "nondeferrable"):
            raise ValueError(f"unknown appliance kind {self.kind!r}")
        if self.per_slot_min < 0 or self.per_slot_max < 0:
            raise ValueError("per-slot appliance limits must be >= 0")
        if self.per_slot_min > self.per_slot_max + 1e-12:
            raise ValueError("per_slot_min exceeds per_slot_max")
        if self.kind == "deferrable":
            if self.total_energy < 0:
                raise ValueError("total_energy must be >= 0")
            if self.deadline is None or self.deadline < 1:
                raise ValueError("deferrable appliance needs a deadline >= 1")
            if self.total_energy > self.deadline * self.per_slot_max + 1e-12:
                raise ValueError(
                    "deferrable appliance cannot meet total_energy by its deadline"
                )


@dataclass(frozen=True)
class BatterySpec:
    """Storage unit; a capacity of 0 models the no-battery case."""

    capacity: float = 0.0
    initial_level: float = 0.0
    charge_efficiency: float = 1.0
    discharge_efficiency: float = 1.0
    max_charge_rate: float = 0.0  # kW
    max_discharge_rate: float = 0.0  # kW

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")
        if not 0 <= self.initial_level <= self.capacity + 1e-12:
            raise ValueError("initial_level must lie in [0, capacity]")
        for name in ("charge_efficiency", "discharge_efficiency"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.max_charge_rate < 0 or self.max_discharge_rate < 0:
            raise ValueError("rates must be >= 0")


@dataclass(frozen=True, eq=False)
class UtilityParams:
    """Concave consumption utility: linear[t]*d - quadratic*d^2 per slot.

    quadratic > 0 gives strict concavity, which is what makes the game
    equilibrium unique.
    """

    linear: np.ndarray  # per-slot $/kWh, >= 0
    quadratic: float  # $/kWh^2, >= 0

    def __post_init__(self):
        arr = _frozen_array(self.linear, name="linear")
        if arr.ndim != 1:
            raise ValueError("linear must be a per-slot vector")
        if np.any(arr < 0):
            raise ValueError("linear coefficients must be >= 0")
        if self.quadratic < 0:
            raise ValueError("quadratic must be >= 0")
        object.__setattr__(self, "linear", arr)


@dataclass(frozen=True, eq=False)
class ProsumerSpec:
    """Static description of one prosumer."""

    id: int
    battery: BatterySpec
    utility: UtilityParams
    renewable: np.ndarray  # per-slot kWh forecast, >= 0
    demand_min: np.ndarray  # per-slot kWh lower bound on consumption
    demand_max: np.ndarray  # per-slot kWh upper bound on consumption
    appliances: tuple[ApplianceSpec, ...] = ()

    def __post_init__(self):
        renewable = _frozen_array(self.renewable, name="renewable")
        dmin = _frozen_array(self.demand_min, name="demand_min")
        dmax = _frozen_array(self.demand_max, name="demand_max")
        if not (renewable.shape == dmin.shape == dmax.shape):
            raise ValueError("renewable/demand_min/demand_max lengths differ")
        if np.any(renewable < 0):
            raise ValueError("renewable must be >= 0")
        if np.any(dmin < 0) or np.any(dmin > dmax + 1e-12):
            raise ValueError("need 0 <= demand_min <= demand_max per slot")
        fixed = sum(a.per_slot_min for a in self.appliances
                    if a.kind == "nondeferrable")
        if np.any(fixed > dmax + 1e-12):
            raise ValueError("nondeferrable load exceeds demand_max")
        object.__setattr__(self, "renewable", renewable)
        object.__setattr__(self, "demand_min", dmin)
        object.__setattr__(self, "demand_max", dmax)
        object.__setattr__(self, "appliances", tuple(self.appliances))


@dataclass(frozen=True, eq=False)
class TransmissionModel:
    """Scalar delivery efficiencies: peer-to-peer matrix and per-prosumer
    grid factor.  Peer links must beat the grid link (local trades lose
    less energy than grid imports)."""

    peer_efficiency: np.ndarray  # (N, N), diagonal unused
    grid_efficiency: np.ndarray  # (N,)

    def __post_init__(self):
        peer = _frozen_array(self.peer_efficiency, name="peer_efficiency")
        grid = _frozen_array(self.grid_efficiency, name="grid_efficiency")
        if peer.ndim != 2 or peer.shape[0] != peer.shape[1]:
            raise ValueError("peer_efficiency must be square")
        n = peer.shape[0]
        if grid.shape != (n,):
            raise ValueError("grid_efficiency length must match peer matrix")
        if np.any(grid <= 0) or np.any(grid > 1):
            raise ValueError("grid_efficiency entries must lie in (0, 1]")
        off = ~np.eye(n, dtype=bool)
        if n > 1:
            if np.any(peer[off] <= 0) or np.any(peer[off] > 1):
                raise ValueError("peer_efficiency entries must lie in (0, 1]")
            if np.any(peer[off] <= grid[np.where(off)[0]]):
                raise ValueError(
                    "peer efficiency must exceed grid efficiency for every pair"
                )
        object.__setattr__(self, "peer_efficiency", peer)
        object.__setattr__(self, "grid_efficiency", grid)


@dataclass(frozen=True, eq=False)
class GridPricing:
    """Linear real-time grid price: price_t = slope_t * total grid load."""

    slope: np.ndarray  # per-slot $/kWh per kWh of total load, > 0

    def __post_init__(self):
        arr = _frozen_array(self.slope, name="slope")
        if arr.ndim != 1 or np.any(arr <= 0):
            raise ValueError("slope must be a positive per-slot vector")
        object.__setattr__(self, "slope", arr)


@dataclass(frozen=True)
class GenerationCost:
    """Piecewise-quadratic conventional generation cost.

    cost(L) = quad_low*L^2 + const_low for L <= threshold, else
    quad_high*L^2 + const_high.  threshold is stored in kWh.
    """

    quad_low: float = 1.0
    const_low: float = 1.0
    quad_high: float = 2.0
    const_high: float = 2.0
    threshold: float = 2000.0

    def __post_init__(self):
        if self.quad_low <= 0 or self.quad_high <= 0:
            raise ValueError("quadratic cost coefficients must be > 0")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """One complete game instance."""

    time: TimeGrid
    prosumers: tuple[ProsumerSpec, ...]
    transmission: TransmissionModel
    grid: GridPricing
    cost: GenerationCost

    def __post_init__(self):
        prosumers = tuple(self.prosumers)
        if not prosumers:
            raise ValueError("need at least one prosumer")
        n = len(prosumers)
        t = self.time.num_slots
        if self.transmission.peer_efficiency.shape != (n, n):
            raise ValueError("transmission dimensions do not match prosumer count")
        if self.grid.slope.shape != (t,):
            raise ValueError("grid slope length does not match horizon")
        for p in prosumers:
            if p.renewable.shape != (t,):
                raise ValueError(f"prosumer {p.id}: per-slot arrays must have length {t}")
            if p.utility.linear.shape != (t,):
                raise ValueError(f"prosumer {p.id}: utility vector must have length {t}")
            for a in p.appliances:
                if a.kind == "deferrable" and a.deadline > t:
                    raise ValueError(f"prosumer {p.id}: appliance deadline beyond horizon")
        object.__setattr__(self, "prosumers", prosumers)

    @property
    def n_prosumers(self) -> int:
        return len(self.prosumers)

    def index_of(self, spec: ProsumerSpec) -> int:
        for k, p in enumerate(self.prosumers):
            if p is spec or p.id == spec.id:
                return k
        raise ValueError(f"prosumer id {spec.id} not part of this scenario")


@dataclass(frozen=True, eq=False)
class Decision:
    """One prosumer's strategy over the horizon.

    Arrays are per slot; bought_from / sold_to are (N, num_slots) with the
    prosumer's own row unused (zero).  The battery trajectory is derived,
    not stored: see battery_levels.
    """

    grid_purchase: np.ndarray  # kWh bought from the grid
    consumption: np.ndarray
    sold_total: np.ndarray
    bought_total: np.ndarray
    sold_to: np.ndarray  # (N, T) per-buyer sales
    bought_from: np.ndarray  # (N, T) per-seller purchases
    charge: np.ndarray
    discharge: np.ndarray
    appliance_load: np.ndarray  # (n_appliances, T)

    def __post_init__(self):
        t = np.asarray(self.grid_purchase).shape[0]
        for name in ("grid_purchase", "consumption", "sold_total",
                     "bought_total", "charge", "discharge"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), (t,), name))
        for name in ("sold_to", "bought_from", "appliance_load"):
            arr = _frozen_array(getattr(self, name), name=name)
            if arr.ndim != 2 or arr.shape[1] != t:
                raise ValueError(f"{name} must be 2-D with {t} columns")
            object.__setattr__(self, name, arr)

    @property
    def num_slots(self) -> int:
        return self.grid_purchase.shape[0]

    def battery_levels(self, prosumer: ProsumerSpec) -> np.ndarray:
        """Battery state before each slot (length T+1), from the recursion
        level[t+1] = level[t] + renewable[t] - discharge[t] + charge[t]."""
        t = self.num_slots
        levels = np.empty(t + 1)
        levels[0] = prosumer.battery.initial_level
        flow = prosumer.renewable - self.discharge + self.charge
        levels[1:] = levels[0] + np.cumsum(flow)
        return levels

    @staticmethod
    def zeros(n_prosumers: int, num_slots: int, n_appliances: int = 0) -> "Decision":
        t = num_slots
        return Decision(
            grid_purchase=np.zeros(t), consumption=np.zeros(t),
            sold_total=np.zeros(t), bought_total=np.zeros(t),
            sold_to=np.zeros((n_prosumers, t)), bought_from=np.zeros((n_prosumers, t)),
            charge=np.zeros(t), discharge=np.zeros(t),
            appliance_load=np.zeros((n_appliances, t)),
        )


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    """All prosumers' decisions; the full game state."""

    decisions: tuple[Decision, ...]

    def __post_init__(self):
        object.__setattr__(self, "decisions", tuple(self.decisions))

    def grid_loads(self) -> np.ndarray:
        """Stacked grid purchases, shape (N, T)."""
        return np.array([d.grid_purchase for d in self.decisions])

    def replace(self, i: int, decision: Decision) -> "StrategyProfile":
        decs = list(self.decisions)
        decs[i] = decision
        return StrategyProfile(tuple(decs))


@dataclass(frozen=True, eq=False)
class ExchangePrices:
    """Per-seller per-slot exchange price: what any buyer pays prosumer i
    for a unit bought at slot t."""

    prices: np.ndarray  # (N, T), >= 0

    def __post_init__(self):
        arr = _frozen_array(self.prices, name="prices")
        if arr.ndim != 2:
            raise ValueError("prices must be an (N, T) matrix")
        if np.any(arr < 0):
            raise ValueError("exchange prices must be >= 0")
        object.__setattr__(self, "prices", arr)

    @staticmethod
    def constant(value: float, n_prosumers: int, num_slots: int) -> "ExchangePrices":
        return ExchangePrices(np.full((n_prosumers, num_slots), float(value)))


@dataclass(frozen=True)
class Violation:
    """One constraint violation found by feasibility_check."""

    constraint: str
    slot_index: Optional[int]  # 0-based, None for horizon-wide constraints
    magnitude: float


def grid_price(gamma_t: float, loads) -> float:
    """Real-time grid price for one slot: gamma_t times total grid load."""
    loads = np.atleast_1d(np.asarray(loads, dtype=float))
    if gamma_t <= 0:
        raise ValueError("gamma_t must be positive")
    if np.any(loads < 0):
        raise ValueError("grid loads must be >= 0")
    return float(gamma_t * loads.sum())


def utility_value(params: UtilityParams, consumption) -> float:
    """Total consumption utility over the horizon."""
    d = np.asarray(consumption, dtype=float)
    return float(np.sum(params.linear * d - params.quadratic * d * d))


def prosumer_payoff(i: int, profile: StrategyProfile, mu: ExchangePrices,
                    scenario: ScenarioConfig) -> float:
    """Prosumer i's payoff under the profile: exchange revenue minus
    exchange spending minus grid payment plus consumption utility."""
    dec = profile.decisions[i]
    spec = scenario.prosumers[i]
    prices = mu.prices
    loads = profile.grid_loads()
    total_load = loads.sum(axis=0)

    revenue = float(np.sum(prices[i] * dec.sold_total))
    spending = float(np.sum(prices * dec.bought_from)) \
        - float(np.sum(prices[i] * dec.bought_from[i]))
    grid_payment = float(np.sum(dec.grid_purchase * scenario.grid.slope * total_load))
    return revenue - spending - grid_payment + utility_value(spec.utility, dec.consumption)


def feasibility_check(decision: Decision, spec: ProsumerSpec,
                      scenario: ScenarioConfig,
                      tol: float = FEASIBILITY_TOL) -> list[Violation]:
    """Check one prosumer's decision against its constraint system.

    Returns one Violation per breached constraint (empty list means
    feasible within tol).  The market-clearing coupling across prosumers
    is not a per-prosumer constraint and is not checked here.
    """
    i = scenario.index_of(spec)
    t = scenario.time.num_slots
    out: list[Violation] = []

    def flag(constraint, slot, magnitude):
        if magnitude > tol:
            out.append(Violation(constraint, slot, float(magnitude)))

    for name in ("grid_purchase", "consumption", "sold_total", "bought_total",
                 "charge", "discharge"):
        arr = getattr(decision, name)
        for k in np.flatnonzero(arr < -tol):
            flag("nonnegativity", int(k), -arr[k])
    for name in ("sold_to", "bought_from", "appliance_load"):
        arr = getattr(decision, name)
        for r, k in zip(*np.where(arr < -tol)):
            flag("nonnegativity", int(k), -arr[r, k])
    for k in np.flatnonzero(decision.sold_to[i] > tol):
        flag("self_trade", int(k), decision.sold_to[i, k])
    for k in np.flatnonzero(decision.bought_from[i] > tol):
        flag("self_trade", int(k), decision.bought_from[i, k])

    # Appliance requirements and per-slot limits.
    for a_idx, appl in enumerate(spec.appliances):
        x = decision.appliance_load[a_idx]
        if appl.kind == "deferrable":
            got = x[:appl.deadline].sum()
            flag("appliance_total", None, appl.total_energy - got)
        for k in range(t):
            flag("appliance_rate", k, x[k] - appl.per_slot_max)
            flag("appliance_rate", k, appl.per_slot_min - x[k])

    # Consumption splits into appliance loads (when any appliances exist).
    if spec.appliances:
        split = decision.consumption - decision.appliance_load.sum(axis=0)
        for k in range(t):
            flag("consumption_split", k, abs(split[k]))

    for k in range(t):
        flag("consumption_bounds", k, decision.consumption[k] - spec.demand_max[k])
        flag("consumption_bounds", k, spec.demand_min[k] - decision.consumption[k])

    others = [j for j in range(scenario.n_prosumers) if j != i]
    sold_split = decision.sold_total - decision.sold_to[others].sum(axis=0)
    bought_split = decision.bought_total - decision.bought_from[others].sum(axis=0)
    for k in range(t):
        flag("sales_split", k, abs(sold_split[k]))
        flag("purchase_split", k, abs(bought_split[k]))

    # Battery trajectory box, terminal condition, and rate limits.
    levels = decision.battery_levels(spec)
    for k in range(1, t + 1):
        flag("battery_capacity", k - 1, levels[k] - spec.battery.capacity)
        flag("battery_capacity", k - 1, -levels[k])
    flag("battery_terminal", None, abs(levels[t] - spec.battery.initial_level))
    charge_cap = spec.battery.max_charge_rate * scenario.time.slot_hours
    discharge_cap = spec.battery.max_discharge_rate * scenario.time.slot_hours
    for k in range(t):
        flag("battery_rate", k, decision.charge[k] - charge_cap)
        flag("battery_rate", k, decision.discharge[k] - discharge_cap)

    # Per-slot energy balance.
    peer_eff = scenario.transmission.peer_efficiency[i]
    delivered = peer_eff @ decision.bought_from - peer_eff[i] * decision.bought_from[i]
    balance = (decision.consumption - delivered + decision.sold_total
               - scenario.transmission.grid_efficiency[i] * decision.grid_purchase
               + spec.battery.discharge_efficiency * decision.charge
               - spec.battery.charge_efficiency * decision.discharge)
    for k in range(t):
        flag("energy_balance", k, abs(balance[k]))

    return out

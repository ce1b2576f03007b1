"""JSON round-tripping for scenarios, strategy profiles, and prices.

Documents are schema-versioned and serialized with sorted keys, so the
same object always produces the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .domain import (
    ApplianceSpec,
    BatterySpec,
    Decision,
    ExchangePrices,
    GenerationCost,
    GridPricing,
    ProsumerSpec,
    ScenarioConfig,
    StrategyProfile,
    TimeGrid,
    TransmissionModel,
    UtilityParams,
)

__all__ = [
    "scenario_to_json", "scenario_from_json", "load_scenario", "save_scenario",
    "profile_to_json", "profile_from_json", "load_profile", "save_profile",
    "prices_to_json", "prices_from_json", "load_prices", "save_prices",
]

SCHEMA_VERSION = 1


class MalformedDocument(ValueError):
    """A document is missing a field or carries an out-of-range value."""


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise MalformedDocument(f"missing field '{key}' in {context}")
    return doc[key]


def _check_version(doc: dict, context: str):
    version = _require(doc, "schema_version", context)
    if version != SCHEMA_VERSION:
        raise MalformedDocument(
            f"unsupported schema_version {version!r} in {context}")


def scenario_to_json(scenario: ScenarioConfig) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "time": {
            "num_slots": scenario.time.num_slots,
            "slot_hours": scenario.time.slot_hours,
            "peak_slots": sorted(scenario.time.peak_slots),
        },
        "prosumers": [
            {
                "id": p.id,
                "battery": {
                    "capacity": p.battery.capacity,
                    "initial_level": p.battery.initial_level,
                    "charge_efficiency": p.battery.charge_efficiency,
                    "discharge_efficiency": p.battery.discharge_efficiency,
                    "max_charge_rate": p.battery.max_charge_rate,
                    "max_discharge_rate": p.battery.max_discharge_rate,
                },
                "utility": {
                    "linear": p.utility.linear.tolist(),
                    "quadratic": p.utility.quadratic,
                },
                "renewable": p.renewable.tolist(),
                "demand_min": p.demand_min.tolist(),
                "demand_max": p.demand_max.tolist(),
                "appliances": [
                    {
                        "kind": a.kind,
                        "per_slot_max": a.per_slot_max,
                        "per_slot_min": a.per_slot_min,
                        "total_energy": a.total_energy,
                        "deadline": a.deadline,
                    }
                    for a in p.appliances
                ],
            }
            for p in scenario.prosumers
        ],
        "transmission": {
            "peer_efficiency": scenario.transmission.peer_efficiency.tolist(),
            "grid_efficiency": scenario.transmission.grid_efficiency.tolist(),
        },
        "grid": {"slope": scenario.grid.slope.tolist()},
        "cost": {
            "quad_low": scenario.cost.quad_low,
            "const_low": scenario.cost.const_low,
            "quad_high": scenario.cost.quad_high,
            "const_high": scenario.cost.const_high,
            "threshold": scenario.cost.threshold,
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def scenario_from_json(text: str) -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    _check_version(doc, "scenario")
    time_doc = _require(doc, "time", "scenario")
    time = TimeGrid(
        num_slots=_require(time_doc, "num_slots", "scenario.time"),
        slot_hours=_require(time_doc, "slot_hours", "scenario.time"),
        peak_slots=frozenset(_require(time_doc, "peak_slots", "scenario.time")),
    )
    prosumers = []
    for k, p in enumerate(_require(doc, "prosumers", "scenario")):
        ctx = f"scenario.prosumers[{k}]"
        batt = _require(p, "battery", ctx)
        util = _require(p, "utility", ctx)
        try:
            prosumers.append(ProsumerSpec(
                id=_require(p, "id", ctx),
                battery=BatterySpec(
                    capacity=_require(batt, "capacity", ctx + ".battery"),
                    initial_level=_require(batt, "initial_level", ctx + ".battery"),
                    charge_efficiency=_require(batt, "charge_efficiency", ctx + ".battery"),
                    discharge_efficiency=_require(batt, "discharge_efficiency", ctx + ".battery"),
                    max_charge_rate=_require(batt, "max_charge_rate", ctx + ".battery"),
                    max_discharge_rate=_require(batt, "max_discharge_rate", ctx + ".battery"),
                ),
                utility=UtilityParams(
                    linear=np.array(_require(util, "linear", ctx + ".utility")),
                    quadratic=_require(util, "quadratic", ctx + ".utility"),
                ),
                renewable=np.array(_require(p, "renewable", ctx)),
                demand_min=np.array(_require(p, "demand_min", ctx)),
                demand_max=np.array(_require(p, "demand_max", ctx)),
                appliances=tuple(
                    ApplianceSpec(
                        kind=_require(a, "kind", ctx + ".appliances"),
                        per_slot_max=_require(a, "per_slot_max", ctx + ".appliances"),
                        per_slot_min=a.get("per_slot_min", 0.0),
                        total_energy=a.get("total_energy", 0.0),
                        deadline=a.get("deadline"),
                    )
                    for a in p.get("appliances", [])
                ),
            ))
        except ValueError as exc:
            raise MalformedDocument(f"{ctx}: {exc}") from exc
    trans = _require(doc, "transmission", "scenario")
    cost = _require(doc, "cost", "scenario")
    try:
        return ScenarioConfig(
            time=time,
            prosumers=tuple(prosumers),
            transmission=TransmissionModel(
                peer_efficiency=np.array(_require(trans, "peer_efficiency", "scenario.transmission")),
                grid_efficiency=np.array(_require(trans, "grid_efficiency", "scenario.transmission")),
            ),
            grid=GridPricing(slope=np.array(
                _require(_require(doc, "grid", "scenario"), "slope", "scenario.grid"))),
            cost=GenerationCost(
                quad_low=_require(cost, "quad_low", "scenario.cost"),
                const_low=_require(cost, "const_low", "scenario.cost"),
                quad_high=_require(cost, "quad_high", "scenario.cost"),
                const_high=_require(cost, "const_high", "scenario.cost"),
                threshold=_require(cost, "threshold", "scenario.cost"),
            ),
        )
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from exc


def profile_to_json(profile: StrategyProfile) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "decisions": [
            {
                "grid_purchase": d.grid_purchase.tolist(),
                "consumption": d.consumption.tolist(),
                "sold_total": d.sold_total.tolist(),
                "bought_total": d.bought_total.tolist(),
                "sold_to": d.sold_to.tolist(),
                "bought_from": d.bought_from.tolist(),
                "charge": d.charge.tolist(),
                "discharge": d.discharge.tolist(),
                "appliance_load": d.appliance_load.tolist(),
            }
            for d in profile.decisions
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def profile_from_json(text: str) -> StrategyProfile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    _check_version(doc, "profile")
    decisions = []
    for k, d in enumerate(_require(doc, "decisions", "profile")):
        ctx = f"profile.decisions[{k}]"
        fields = {}
        for name in ("grid_purchase", "consumption", "sold_total", "bought_total",
                     "sold_to", "bought_from", "charge", "discharge",
                     "appliance_load"):
            fields[name] = np.array(_require(d, name, ctx), dtype=float)
        if fields["appliance_load"].size == 0:
            fields["appliance_load"] = fields["appliance_load"].reshape(
                0, fields["grid_purchase"].shape[0])
        try:
            decisions.append(Decision(**fields))
        except ValueError as exc:
            raise MalformedDocument(f"{ctx}: {exc}") from exc
    return StrategyProfile(tuple(decisions))


def prices_to_json(mu: ExchangePrices) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "prices": mu.prices.tolist()}
    return json.dumps(doc, sort_keys=True, indent=2)


def prices_from_json(text: str) -> ExchangePrices:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    _check_version(doc, "prices")
    try:
        return ExchangePrices(np.array(_require(doc, "prices", "prices"), dtype=float))
    except ValueError as exc:
        raise MalformedDocument(str(exc)) from exc


def save_scenario(scenario: ScenarioConfig, path) -> None:
    Path(path).write_text(scenario_to_json(scenario))


def load_scenario(path) -> ScenarioConfig:
    return scenario_from_json(Path(path).read_text())


def save_profile(profile: StrategyProfile, path) -> None:
    Path(path).write_text(profile_to_json(profile))


def load_profile(path) -> StrategyProfile:
    return profile_from_json(Path(path).read_text())


def save_prices(mu: ExchangePrices, path) -> None:
    Path(path).write_text(prices_to_json(mu))


def load_prices(path) -> ExchangePrices:
    return prices_from_json(Path(path).read_text())

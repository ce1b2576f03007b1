import json

import numpy as np
import pytest

from prosumer_market.domain import Decision, ExchangePrices, StrategyProfile
from prosumer_market.generator import GeneratorKnobs, default_time_grid, generate_scenario
from prosumer_market.serialize import (
    MalformedDocument,
    prices_from_json,
    prices_to_json,
    profile_from_json,
    profile_to_json,
    scenario_from_json,
    scenario_to_json,
)


def test_scenario_round_trip():
    knobs = GeneratorKnobs(n_deferrable=1, n_nondeferrable=1)
    sc = generate_scenario(4, default_time_grid(6), seed=17, knobs=knobs)
    text = scenario_to_json(sc)
    back = scenario_from_json(text)
    assert scenario_to_json(back) == text


def test_scenario_canonical_ordering():
    sc = generate_scenario(2, default_time_grid(3), seed=1)
    text = scenario_to_json(sc)
    doc = json.loads(text)
    assert text == json.dumps(doc, sort_keys=True, indent=2)


def test_missing_field_named_in_error():
    sc = generate_scenario(2, default_time_grid(3), seed=1)
    doc = json.loads(scenario_to_json(sc))
    del doc["prosumers"][1]["renewable"]
    with pytest.raises(MalformedDocument, match="renewable"):
        scenario_from_json(json.dumps(doc))


def test_bad_version_rejected():
    sc = generate_scenario(1, default_time_grid(2), seed=0)
    doc = json.loads(scenario_to_json(sc))
    doc["schema_version"] = 99
    with pytest.raises(MalformedDocument, match="schema_version"):
        scenario_from_json(json.dumps(doc))


def test_invalid_value_flagged():
    sc = generate_scenario(2, default_time_grid(3), seed=1)
    doc = json.loads(scenario_to_json(sc))
    doc["prosumers"][0]["battery"]["capacity"] = -4.0
    with pytest.raises(MalformedDocument):
        scenario_from_json(json.dumps(doc))


def test_profile_round_trip():
    rng = np.random.default_rng(2)
    decisions = []
    for _ in range(3):
        decisions.append(Decision(
            grid_purchase=rng.random(4), consumption=rng.random(4),
            sold_total=rng.random(4), bought_total=rng.random(4),
            sold_to=rng.random((3, 4)), bought_from=rng.random((3, 4)),
            charge=rng.random(4), discharge=rng.random(4),
            appliance_load=rng.random((2, 4))))
    profile = StrategyProfile(tuple(decisions))
    text = profile_to_json(profile)
    back = profile_from_json(text)
    assert profile_to_json(back) == text
    np.testing.assert_array_equal(back.decisions[1].sold_to, profile.decisions[1].sold_to)


def test_prices_round_trip():
    mu = ExchangePrices(np.random.default_rng(0).random((3, 5)))
    back = prices_from_json(prices_to_json(mu))
    np.testing.assert_array_equal(back.prices, mu.prices)


def test_prices_negative_rejected():
    with pytest.raises(MalformedDocument):
        prices_from_json(json.dumps({"schema_version": 1, "prices": [[-1.0]]}))

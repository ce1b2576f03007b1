"""Centralized solves of the exchange game.

The game admits an exact potential: maximizing it over the joint
constraint set (with market clearing imposed as an equality) yields the
generalized Nash equilibrium, unique in consumption and grid loads when
every prosumer's utility is strictly concave.  The planner's problem
replaces the potential's load coupling with the full quadratic grid
payment, giving the social optimum and the efficiency ratio between the
two.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (
    ProsumerLayout,
    QpBuilder,
    add_prosumer_constraints,
    add_trade_and_utility_terms,
    vector_to_decision,
)
from .best_response import exact_response_input, solve_best_response
from .domain import (
    ExchangePrices,
    ScenarioConfig,
    StrategyProfile,
    prosumer_payoff,
    utility_value,
)
from .qp import SolverError, solve_qp

__all__ = ["EfficiencyReport", "potential_value", "social_objective",
           "solve_gne", "solve_social", "efficiency", "verify_equilibrium"]


def potential_value(profile: StrategyProfile, mu: ExchangePrices,
                    scenario: ScenarioConfig) -> float:
    """Exact potential of the game at the given profile.

    Unilateral payoff differences equal potential differences; the load
    coupling counts each prosumer's own squared load fully and every
    cross product once.
    """
    total = 0.0
    for i, dec in enumerate(profile.decisions):
        spec = scenario.prosumers[i]
        total += float(np.sum(mu.prices[i] * dec.sold_total))
        total -= float(np.sum(mu.prices * dec.bought_from)) \
            - float(np.sum(mu.prices[i] * dec.bought_from[i]))
        total += utility_value(spec.utility, dec.consumption)
    loads = profile.grid_loads()
    own_sq = (loads ** 2).sum(axis=0)
    cross = 0.5 * (loads.sum(axis=0) ** 2 - own_sq)
    total -= float(np.sum(scenario.grid.slope * (own_sq + cross)))
    return total


def social_objective(profile: StrategyProfile, mu: ExchangePrices,
                     scenario: ScenarioConfig) -> float:
    """Planner objective: sum of prosumer payoffs, with the grid payment
    counted once as the quadratic of the total load."""
    total = 0.0
    for i, dec in enumerate(profile.decisions):
        spec = scenario.prosumers[i]
        total += float(np.sum(mu.prices[i] * dec.sold_total))
        total -= float(np.sum(mu.prices * dec.bought_from)) \
            - float(np.sum(mu.prices[i] * dec.bought_from[i]))
        total += utility_value(spec.utility, dec.consumption)
    total_load = profile.grid_loads().sum(axis=0)
    total -= float(np.sum(scenario.grid.slope * total_load ** 2))
    return total


def _joint_solve(scenario: ScenarioConfig, mu: ExchangePrices, *,
                 load_coupling: str, allow_exchange: bool, tol: float,
                 x0) -> StrategyProfile:
    n = scenario.n_prosumers
    t = scenario.time.num_slots
    layouts = [ProsumerLayout(scenario, i) for i in range(n)]
    offsets = np.concatenate([[0], np.cumsum([lay.size for lay in layouts])])
    builder = QpBuilder(int(offsets[-1]))

    for i, lay in enumerate(layouts):
        add_prosumer_constraints(builder, scenario, lay, int(offsets[i]),
                                 forbid_exchange=not allow_exchange)
        add_trade_and_utility_terms(builder, scenario, lay, mu, int(offsets[i]))

    gamma = scenario.grid.slope
    for slot in range(t):
        for i in range(n):
            li = int(offsets[i]) + layouts[i].grid(slot)
            builder.add_quad(li, li, 2.0 * float(gamma[slot]))
            for j in range(i + 1, n):
                lj = int(offsets[j]) + layouts[j].grid(slot)
                c = float(gamma[slot]) if load_coupling == "potential" \
                    else 2.0 * float(gamma[slot])
                builder.add_quad(li, lj, c)
                builder.add_quad(lj, li, c)

    # Market clearing: what everyone buys from a seller equals its sales.
    if allow_exchange:
        for j in range(n):
            for slot in range(t):
                cols = [int(offsets[j]) + layouts[j].sold_total(slot)]
                vals = [-1.0]
                for i in range(n):
                    if i == j:
                        continue
                    p = layouts[i].peers.index(j)
                    cols.append(int(offsets[i]) + layouts[i].bought_from(p, slot))
                    vals.append(1.0)
                builder.eq(cols, vals, 0.0)

    problem = builder.build()
    sol = solve_qp(problem, tol=tol, x0=x0)
    if sol.status != "optimal":
        raise SolverError(
            f"central solve ({load_coupling}) failed with status {sol.status} "
            f"(residuals {sol.residuals.as_tuple()})", sol)
    decisions = tuple(
        vector_to_decision(sol.x[offsets[i]:offsets[i + 1]], layouts[i], n)
        for i in range(n))
    return StrategyProfile(decisions)


def solve_gne(scenario: ScenarioConfig, mu: ExchangePrices, tol: float = 1e-8,
              x0=None, allow_exchange: bool = True) -> StrategyProfile:
    """Generalized Nash equilibrium via the concave potential program.

    Maximizes the potential over the joint constraint set including
    market clearing.  Unique in (consumption, grid load) when every
    utility is strictly concave.
    """
    return _joint_solve(scenario, mu, load_coupling="potential",
                        allow_exchange=allow_exchange, tol=tol, x0=x0)


def solve_social(scenario: ScenarioConfig, mu: ExchangePrices,
                 allow_exchange: bool = True, tol: float = 1e-8,
                 x0=None) -> StrategyProfile:
    """Social optimum: maximizes the sum of payoffs (exchange payments
    cancel under market clearing).  allow_exchange=False pins every trade
    to zero, the no-exchange-market baseline."""
    return _joint_solve(scenario, mu, load_coupling="social",
                        allow_exchange=allow_exchange, tol=tol, x0=x0)


@dataclass(frozen=True)
class EfficiencyReport:
    """Equilibrium welfare relative to the planner optimum."""

    p_eq: float
    p_star: float
    eta: Optional[float]
    status: str  # "ok" or "indeterminate" (nonpositive optimum)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"p_eq": self.p_eq, "p_star": self.p_star, "eta": self.eta,
               "status": self.status, "metadata": self.metadata}
        return json.dumps(doc, sort_keys=True)


def efficiency(scenario: ScenarioConfig, mu: ExchangePrices, tol: float = 1e-8,
               metadata: dict | None = None) -> EfficiencyReport:
    """Efficiency ratio: planner objective at the equilibrium over the
    planner optimum.  Flagged indeterminate when the optimum is not
    positive (the ratio is meaningless for nonpositive welfare)."""
    eq_profile = solve_gne(scenario, mu, tol=tol)
    opt_profile = solve_social(scenario, mu, tol=tol)
    p_eq = social_objective(eq_profile, mu, scenario)
    p_star = social_objective(opt_profile, mu, scenario)
    if p_star <= 0:
        return EfficiencyReport(p_eq, p_star, None, "indeterminate",
                                metadata or {})
    return EfficiencyReport(p_eq, p_star, p_eq / p_star, "ok", metadata or {})


def verify_equilibrium(profile: StrategyProfile, mu: ExchangePrices,
                       scenario: ScenarioConfig, tol: float = 1e-8) -> float:
    """Largest payoff any prosumer gains by unilaterally deviating.

    Each prosumer best-responds against the fixed profile, with purchases
    capped at peers' posted residual supply and sales pinned to what
    buyers posted.  A gap at or below the tolerance certifies an
    approximate generalized Nash equilibrium.
    """
    worst = -np.inf
    for i in range(scenario.n_prosumers):
        inp = exact_response_input(i, scenario, mu, profile)
        candidate = solve_best_response(inp, tol=tol)
        current = prosumer_payoff(i, profile, mu, scenario)
        improved = prosumer_payoff(
            i, profile.replace(i, candidate), mu, scenario)
        worst = max(worst, improved - current)
    return float(worst)

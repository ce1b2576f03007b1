"""Distributed market loop: damped best-response sweeps with excess-demand
price adjustment.

Each iteration, every prosumer best-responds (in parallel, Jacobi style)
to the previous iteration's grid loads and the current exchange prices,
with a proximal damping term whose weight follows the 1/(k+1)-style
schedule up to a stability floor.  The platform then raises the price of
every prosumer whose posted supply falls short of what the others want
to buy from it.  The loop exits when no price needs to move and the
strategies have stopped moving; every post, price move, and the final
settlement land in a hash-chained ledger.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import ProsumerLayout, decision_to_vector
from .best_response import RelaxedResponseSolver, cold_start
from .domain import ExchangePrices, ScenarioConfig, StrategyProfile
from .equilibrium import potential_value
from .ledger import Ledger

__all__ = ["AlgoDistConfig", "ConvergenceTrace", "AlgoDistResult",
           "price_update", "excess_demand", "run_algo_dist"]


@dataclass(frozen=True)
class AlgoDistConfig:
    """Loop parameters.

    epsilon is the price increment; supply_slack the tolerance in the
    supply-covers-demand comparison; alpha_schedule the damping schedule
    (weight = 1/alpha).  min_alpha floors the schedule so late iterations
    stay responsive; None derives a floor from the scenario's load
    coupling.  allow_price_decrease enables the symmetric variant that
    also lowers prices on excess supply (off by default: the listed rule
    only raises).
    """

    mu_floor: float = 0.0
    epsilon: float = 1e-6
    max_iters: int = 5000
    supply_slack: float = 1e-9
    alpha_schedule: Callable[[int], float] = field(
        default=lambda k: 1.0 / (k + 1))
    min_alpha: Optional[float] = None
    strategy_tol: float = 1e-8
    price_gate_excess: float = 0.05
    settle_gate: float = 1e-3
    allow_price_decrease: bool = False
    qp_tol: float = 1e-8

    def __post_init__(self):
        if self.mu_floor < 0:
            raise ValueError("mu_floor must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.supply_slack < 0:
            raise ValueError("supply_slack must be >= 0")
        if self.strategy_tol <= 0:
            raise ValueError("strategy_tol must be > 0")
        if self.price_gate_excess < 0 or self.settle_gate <= 0:
            raise ValueError("gating parameters must be positive")


@dataclass
class ConvergenceTrace:
    """Per-iteration loop telemetry."""

    mu_mean: list[float] = field(default_factory=list)
    mu_max: list[float] = field(default_factory=list)
    excess: list[np.ndarray] = field(default_factory=list)
    max_excess: list[float] = field(default_factory=list)
    total_grid_load: list[float] = field(default_factory=list)
    potential: list[float] = field(default_factory=list)
    strategy_change: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.max_excess)

    def record(self, mu: np.ndarray, excess: np.ndarray, total_load: float,
               potential: float, change: float) -> None:
        self.mu_mean.append(float(mu.mean()))
        self.mu_max.append(float(mu.max()))
        self.excess.append(excess.copy())
        self.max_excess.append(float(excess.max()))
        self.total_grid_load.append(total_load)
        self.potential.append(potential)
        self.strategy_change.append(change)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "max_excess_demand",
                             "total_grid_load", "potential", "mu_mean"])
            for k in range(len(self)):
                writer.writerow([k + 1, self.max_excess[k],
                                 self.total_grid_load[k], self.potential[k],
                                 self.mu_mean[k]])


@dataclass
class AlgoDistResult:
    profile: StrategyProfile
    prices: ExchangePrices
    trace: ConvergenceTrace
    ledger: Ledger
    converged: bool
    iterations: int


def demand_on_sellers(profile: StrategyProfile) -> np.ndarray:
    """Per-(seller, slot) total that the other prosumers want to buy."""
    n = len(profile.decisions)
    t = profile.decisions[0].num_slots
    demand = np.zeros((n, t))
    for j, dec in enumerate(profile.decisions):
        for i in range(n):
            if i != j:
                demand[i] += dec.bought_from[i]
    return demand


def excess_demand(profile: StrategyProfile, n: int) -> np.ndarray:
    """Per-(prosumer, slot) demand on each seller minus its posted supply."""
    supply = np.array([dec.sold_total for dec in profile.decisions])
    return demand_on_sellers(profile) - supply


def price_update(mu: ExchangePrices, supply: np.ndarray, demand: np.ndarray,
                 epsilon: float, supply_slack: float = 1e-9,
                 floor: float = 0.0, decrease: bool = False) -> ExchangePrices:
    """Raise each (seller, slot) price by epsilon where demand exceeds
    posted supply beyond the slack; otherwise leave it unchanged.  The
    optional symmetric variant also lowers prices (never below the floor)
    where supply strictly exceeds demand."""
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    if supply.shape != mu.prices.shape or demand.shape != mu.prices.shape:
        raise ValueError("supply/demand shape does not match the price matrix")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    new = mu.prices.copy()
    new[demand - supply > supply_slack] += epsilon
    if decrease:
        down = supply - demand > supply_slack
        new[down] = np.maximum(new[down] - epsilon, floor)
    return ExchangePrices(new)


def _default_min_alpha(scenario: ScenarioConfig) -> float:
    """Damping floor: the proximal weight follows the 1/alpha_k schedule
    but is capped so late iterations keep responding to price moves while
    the Jacobi sweep stays contractive against the load coupling."""
    n = scenario.n_prosumers
    gamma_max = float(scenario.grid.slope.max())
    weight_cap = max(1.0, 0.75 * gamma_max * (n - 1))
    return 1.0 / weight_cap


def run_algo_dist(scenario: ScenarioConfig,
                  cfg: AlgoDistConfig | None = None) -> AlgoDistResult:
    """Run the distributed loop to convergence (or the iteration cap).

    Convergence means: posted supply covers what others want to buy from
    every prosumer at every slot (so no price moves), and the last sweep
    changed no strategy component by more than strategy_tol.  Hitting
    max_iters instead is reported, never silently accepted.
    """
    cfg = cfg or AlgoDistConfig()
    n = scenario.n_prosumers
    t = scenario.time.num_slots
    layouts = [ProsumerLayout(scenario, i) for i in range(n)]
    solvers = [RelaxedResponseSolver(scenario, i) for i in range(n)]
    min_alpha = cfg.min_alpha if cfg.min_alpha is not None \
        else _default_min_alpha(scenario)

    mu = np.full((n, t), cfg.mu_floor)
    profile = StrategyProfile(tuple(
        cold_start(scenario, i, tol=cfg.qp_tol) for i in range(n)))

    ledger = Ledger()
    ledger.append({"event": "init", "mu_floor": cfg.mu_floor,
                   "epsilon": cfg.epsilon, "prosumers": n, "slots": t})

    trace = ConvergenceTrace()
    converged = False
    iterations = 0

    for k in range(1, cfg.max_iters + 1):
        iterations = k
        alpha_k = max(cfg.alpha_schedule(k), min_alpha)
        prices = ExchangePrices(mu)
        # Opponents' loads from the previous iteration (zero prior at k=1).
        loads = np.zeros((n, t)) if k == 1 else profile.grid_loads()
        total_prev = loads.sum(axis=0)

        new_decisions = []
        for i in range(n):
            dec = solvers[i].solve(mu, total_prev - loads[i],
                                   profile.decisions[i], alpha_k,
                                   tol=cfg.qp_tol)
            new_decisions.append(dec)
            ledger.append({
                "event": "post", "iteration": k, "prosumer": i,
                "grid_purchase": np.round(dec.grid_purchase, 9).tolist(),
                "sold_total": np.round(dec.sold_total, 9).tolist(),
                "bought_total": np.round(dec.bought_total, 9).tolist()})
        new_profile = StrategyProfile(tuple(new_decisions))

        change = max(
            float(np.abs(decision_to_vector(new_profile.decisions[i], layouts[i])
                         - decision_to_vector(profile.decisions[i], layouts[i])).max())
            for i in range(n))
        excess = excess_demand(new_profile, n)
        trace.record(mu, excess,
                     float(new_profile.grid_loads().sum()),
                     potential_value(new_profile, prices, scenario), change)
        profile = new_profile

        if np.all(excess <= cfg.supply_slack):
            if change <= cfg.strategy_tol:
                converged = True
                break
        else:
            # Near its clearing level a price steps only against a
            # quasi-settled response; otherwise the damping lag ratchets
            # it past the crossing.  Far from clearing it steps freely.
            supply = np.array([d.sold_total for d in profile.decisions])
            demand = demand_on_sellers(profile)
            if change > cfg.settle_gate:
                gated = excess <= cfg.price_gate_excess
                demand = np.where(gated, np.minimum(demand, supply), demand)
            new_mu = price_update(
                ExchangePrices(mu), supply, demand,
                cfg.epsilon, supply_slack=cfg.supply_slack, floor=cfg.mu_floor,
                decrease=cfg.allow_price_decrease).prices
            if np.any(new_mu != mu):
                ledger.append({
                    "event": "price_update", "iteration": k,
                    "raised_cells": int(np.sum(new_mu > mu)),
                    "mu": np.round(new_mu, 12).tolist()})
                mu = new_mu

    prices = ExchangePrices(mu)
    # Settlement: each prosumer pays the realized grid price on its load.
    total_load = profile.grid_loads().sum(axis=0)
    for i, dec in enumerate(profile.decisions):
        payments = dec.grid_purchase * scenario.grid.slope * total_load
        ledger.append({"event": "settlement", "prosumer": i,
                       "grid_payments": np.round(payments, 9).tolist()})
    ledger.append({"event": "final", "iterations": iterations,
                   "converged": converged})
    return AlgoDistResult(profile=profile, prices=prices, trace=trace,
                          ledger=ledger, converged=converged,
                          iterations=iterations)

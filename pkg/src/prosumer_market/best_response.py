"""One prosumer's decision problem against fixed opponents.

Inside the distributed price loop each prosumer solves a relaxed,
proximally damped problem: it optimizes its own payoff against the
opponents' previous-iteration grid loads with no cap on what peers can
deliver, plus a (1/alpha) * ||a - a_prev||^2 damping term.  With
exact_mode the damping is dropped, opponents' loads are taken as
current, and trades can be pinned or capped to the quantities opponents
actually posted; that variant is the verification best response.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (
    ProsumerLayout,
    QpBuilder,
    add_prosumer_constraints,
    add_proximal_term,
    add_trade_and_utility_terms,
    decision_to_vector,
    vector_to_decision,
)
from .domain import (
    Decision,
    ExchangePrices,
    ScenarioConfig,
    StrategyProfile,
    feasibility_check,
)
from .qp import QpProblem, SolverError, solve_qp

__all__ = ["BestResponseInput", "assemble_best_response", "solve_best_response",
           "cold_start", "exact_response_input", "RelaxedResponseSolver"]


@dataclass(frozen=True)
class BestResponseInput:
    """Inputs for one prosumer's best-response solve.

    others_prev_load is the per-slot sum of the opponents' grid purchases
    from the previous iteration; alpha is the damping parameter (the
    proximal weight is 1/alpha).  peer_availability and committed_sales
    apply only in exact_mode: the first caps purchases from each peer,
    the second pins per-buyer sales to what buyers posted.
    """

    prosumer: int
    scenario: ScenarioConfig
    prices: ExchangePrices
    others_prev_load: np.ndarray
    own_prev: Decision
    alpha: float = 1.0
    exact_mode: bool = False
    peer_availability: Optional[np.ndarray] = None
    committed_sales: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.scenario.n_prosumers
        t = self.scenario.time.num_slots
        if not 0 <= self.prosumer < n:
            raise ValueError(f"prosumer index {self.prosumer} out of range")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        load = np.asarray(self.others_prev_load, dtype=float)
        if load.shape != (t,):
            raise ValueError(f"others_prev_load must have shape ({t},)")
        if np.any(load < 0):
            raise ValueError("others_prev_load must be >= 0")
        object.__setattr__(self, "others_prev_load", load)
        if self.prices.prices.shape != (n, t):
            raise ValueError("price matrix shape does not match the scenario")
        for name in ("peer_availability", "committed_sales"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (n, t):
                    raise ValueError(f"{name} must have shape ({n}, {t})")
                object.__setattr__(self, name, arr)


def assemble_best_response(inp: BestResponseInput) -> QpProblem:
    """Build the QP whose minimizer is the (negated) best response."""
    scenario = inp.scenario
    i = inp.prosumer
    layout = ProsumerLayout(scenario, i)
    builder = QpBuilder(layout.size)

    add_prosumer_constraints(
        builder, scenario, layout,
        sold_pins=inp.committed_sales if inp.exact_mode else None,
        availability=inp.peer_availability if inp.exact_mode else None,
    )
    add_trade_and_utility_terms(builder, scenario, layout, inp.prices)

    gamma = scenario.grid.slope
    for t in range(layout.num_slots):
        l_idx = layout.grid(t)
        builder.add_quad(l_idx, l_idx, 2.0 * float(gamma[t]))
        builder.add_lin(l_idx, float(gamma[t] * inp.others_prev_load[t]))

    if not inp.exact_mode:
        center = decision_to_vector(inp.own_prev, layout)
        add_proximal_term(builder, layout, 1.0 / inp.alpha, center)

    return builder.build()


def solve_best_response(inp: BestResponseInput, tol: float = 1e-8) -> Decision:
    """Solve the best-response QP and rebuild the Decision.

    Raises SolverError with diagnostics if the QP does not reach an
    optimal certificate.
    """
    problem = assemble_best_response(inp)
    sol = solve_qp(problem, tol=tol)
    if sol.status != "optimal":
        raise SolverError(
            f"best response for prosumer {inp.prosumer} ended with status "
            f"{sol.status} after {sol.iterations} iterations "
            f"(residuals {sol.residuals.as_tuple()})", sol)
    layout = ProsumerLayout(inp.scenario, inp.prosumer)
    return vector_to_decision(sol.x, layout, inp.scenario.n_prosumers)


class RelaxedResponseSolver:
    """Reusable relaxed best response for one prosumer.

    The market loop solves the same prosumer problem every iteration with
    only prices, load beliefs, and the damping center changing; this
    caches the constraint structure and objective skeleton so each
    iteration is a pure objective swap.  The objective of the cached
    problem is diagonal: utility curvature and own grid-price curvature
    plus the damping weight.
    """

    def __init__(self, scenario: ScenarioConfig, i: int):
        import scipy.sparse as sp

        self.scenario = scenario
        self.i = i
        self.layout = ProsumerLayout(scenario, i)
        builder = QpBuilder(self.layout.size)
        add_prosumer_constraints(builder, scenario, self.layout)
        self.structure = builder.build()
        self._sp = sp

        spec = scenario.prosumers[i]
        t = self.layout.num_slots
        self.diag_base = np.zeros(self.layout.size)
        self.q_base = np.zeros(self.layout.size)
        self.idx_consumption = np.array([self.layout.consumption(t_) for t_ in range(t)])
        self.idx_grid = np.array([self.layout.grid(t_) for t_ in range(t)])
        self.idx_sold = np.array([self.layout.sold_total(t_) for t_ in range(t)])
        gamma = scenario.grid.slope
        self.diag_base[self.idx_consumption] = 2.0 * spec.utility.quadratic
        self.diag_base[self.idx_grid] = 2.0 * gamma
        self.q_base[self.idx_consumption] = -spec.utility.linear
        self.gamma = np.asarray(gamma, dtype=float)
        # Flattened purchase indices and the matching peer ids, per slot.
        pairs = [(self.layout.bought_from(p, t_), j)
                 for t_ in range(t) for p, j in enumerate(self.layout.peers)]
        self.idx_bought = np.array([a for a, _ in pairs], dtype=int)
        self.peer_of_bought = np.array([j for _, j in pairs], dtype=int)
        self.slot_of_bought = np.repeat(np.arange(t), self.layout.n_peers)

    def problem(self, prices: np.ndarray, others_load: np.ndarray,
                center: np.ndarray, weight: float) -> QpProblem:
        diag = self.diag_base + 2.0 * weight
        q = self.q_base - 2.0 * weight * center
        q[self.idx_grid] += self.gamma * others_load
        q[self.idx_sold] -= prices[self.i]
        if self.idx_bought.size:
            q[self.idx_bought] += prices[self.peer_of_bought, self.slot_of_bought]
        return self.structure.with_objective(self._sp.diags(diag), q)

    def solve(self, prices: np.ndarray, others_load: np.ndarray,
              prev: Decision, alpha: float, tol: float = 1e-8) -> Decision:
        center = decision_to_vector(prev, self.layout)
        prob = self.problem(prices, others_load, center, 1.0 / alpha)
        sol = solve_qp(prob, tol=tol)
        if sol.status != "optimal":
            raise SolverError(
                f"relaxed response for prosumer {self.i} ended with status "
                f"{sol.status} (residuals {sol.residuals.as_tuple()})", sol)
        return vector_to_decision(sol.x, self.layout, self.scenario.n_prosumers)


def cold_start(scenario: ScenarioConfig, i: int, tol: float = 1e-8) -> Decision:
    """Starting decision: all-zero when feasible, else the minimum-norm
    feasible point."""
    spec = scenario.prosumers[i]
    zero = Decision.zeros(scenario.n_prosumers, scenario.time.num_slots,
                          len(spec.appliances))
    if not feasibility_check(zero, spec, scenario):
        return zero
    layout = ProsumerLayout(scenario, i)
    builder = QpBuilder(layout.size)
    add_prosumer_constraints(builder, scenario, layout)
    for k in range(layout.size):
        builder.add_quad(k, k, 2.0)
    sol = solve_qp(builder.build(), tol=tol)
    if sol.status != "optimal":
        raise SolverError(
            f"no feasible starting point for prosumer {i} (status {sol.status})",
            sol)
    return vector_to_decision(sol.x, layout, scenario.n_prosumers)


def exact_response_input(i: int, scenario: ScenarioConfig, prices: ExchangePrices,
                         profile: StrategyProfile) -> BestResponseInput:
    """Verification best response against a fixed profile.

    Purchases from peer j are capped at j's posted sales net of the other
    buyers' posted purchases; own sales are pinned to what the other
    buyers posted buying from this prosumer.
    """
    n = scenario.n_prosumers
    t = scenario.time.num_slots
    loads = profile.grid_loads()
    others_load = loads.sum(axis=0) - loads[i]

    committed = np.zeros((n, t))
    for j in range(n):
        if j != i:
            committed[j] = profile.decisions[j].bought_from[i]

    availability = np.zeros((n, t))
    for j in range(n):
        if j == i:
            continue
        taken_by_others = np.zeros(t)
        for k in range(n):
            if k != i and k != j:
                taken_by_others += profile.decisions[k].bought_from[j]
        availability[j] = np.maximum(
            profile.decisions[j].sold_total - taken_by_others, 0.0)

    return BestResponseInput(
        prosumer=i, scenario=scenario, prices=prices,
        others_prev_load=others_load, own_prev=profile.decisions[i],
        alpha=1.0, exact_mode=True,
        peer_availability=availability, committed_sales=committed)

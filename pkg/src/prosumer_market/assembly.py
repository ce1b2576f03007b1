"""Shared QP assembly: variable layout, constraint blocks, objective terms.

Each prosumer's decision block is laid out slot-major:

    [appliance loads..., consumption, grid purchase,
     sold_to peers..., sold total, bought_from peers..., bought total,
     charge, discharge]

The same block is used by the single-prosumer best-response problems and,
stacked with market-clearing coupling rows, by the central solves.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .domain import Decision, ScenarioConfig
from .qp import QpProblem

__all__ = ["ProsumerLayout", "QpBuilder", "add_prosumer_constraints",
           "add_trade_and_utility_terms", "add_proximal_term",
           "decision_to_vector", "vector_to_decision"]


class ProsumerLayout:
    """Index arithmetic for one prosumer's variable block."""

    def __init__(self, scenario: ScenarioConfig, i: int):
        spec = scenario.prosumers[i]
        self.i = i
        self.num_slots = scenario.time.num_slots
        self.n_appliances = len(spec.appliances)
        self.peers = tuple(j for j in range(scenario.n_prosumers) if j != i)
        self.n_peers = len(self.peers)
        self.stride = self.n_appliances + 6 + 2 * self.n_peers
        self.size = self.stride * self.num_slots
        base = self.n_appliances
        self._d = base
        self._l = base + 1
        self._sold_to = base + 2
        self._s = base + 2 + self.n_peers
        self._bought_from = base + 3 + self.n_peers
        self._q = base + 3 + 2 * self.n_peers
        self._b = base + 4 + 2 * self.n_peers
        self._e = base + 5 + 2 * self.n_peers

    def appliance(self, a: int, t: int) -> int:
        return t * self.stride + a

    def consumption(self, t: int) -> int:
        return t * self.stride + self._d

    def grid(self, t: int) -> int:
        return t * self.stride + self._l

    def sold_to(self, p: int, t: int) -> int:
        return t * self.stride + self._sold_to + p

    def sold_total(self, t: int) -> int:
        return t * self.stride + self._s

    def bought_from(self, p: int, t: int) -> int:
        return t * self.stride + self._bought_from + p

    def bought_total(self, t: int) -> int:
        return t * self.stride + self._q

    def charge(self, t: int) -> int:
        return t * self.stride + self._b

    def discharge(self, t: int) -> int:
        return t * self.stride + self._e


class QpBuilder:
    """Accumulates quadratic/linear objective terms and constraint rows."""

    def __init__(self, n: int):
        self.n = n
        self._p_rows: list[int] = []
        self._p_cols: list[int] = []
        self._p_vals: list[float] = []
        self.q = np.zeros(n)
        self._eq_rows: list[tuple[list[int], list[float], float]] = []
        self._ineq_rows: list[tuple[list[int], list[float], float]] = []

    def add_quad(self, i: int, j: int, coeff: float) -> None:
        """Add coeff to P[i, j]; caller supplies symmetric pairs."""
        self._p_rows.append(i)
        self._p_cols.append(j)
        self._p_vals.append(coeff)

    def add_lin(self, i: int, coeff: float) -> None:
        self.q[i] += coeff

    def eq(self, cols, vals, rhs: float) -> None:
        self._eq_rows.append((list(cols), list(vals), float(rhs)))

    def ineq(self, cols, vals, rhs: float) -> None:
        """Row sum(vals * x[cols]) <= rhs."""
        self._ineq_rows.append((list(cols), list(vals), float(rhs)))

    def bound(self, idx: int, lb: float | None, ub: float | None) -> None:
        """lb <= x[idx] <= ub; equal bounds become an equality row."""
        if lb is not None and ub is not None and lb >= ub - 1e-15:
            self.eq([idx], [1.0], lb)
            return
        if lb is not None:
            self.ineq([idx], [-1.0], -lb)
        if ub is not None:
            self.ineq([idx], [1.0], ub)

    @staticmethod
    def _stack(rows, n):
        if not rows:
            return sp.csr_matrix((0, n)), np.zeros(0)
        r, c, v, rhs = [], [], [], []
        for k, (cols, vals, b) in enumerate(rows):
            r.extend([k] * len(cols))
            c.extend(cols)
            v.extend(vals)
            rhs.append(b)
        M = sp.coo_matrix((v, (r, c)), shape=(len(rows), n)).tocsr()
        return M, np.array(rhs)

    def build(self) -> QpProblem:
        P = sp.coo_matrix((self._p_vals, (self._p_rows, self._p_cols)),
                          shape=(self.n, self.n)).tocsr()
        A, b = self._stack(self._eq_rows, self.n)
        G, h = self._stack(self._ineq_rows, self.n)
        return QpProblem(P, self.q, A=A, b=b, G=G, h=h)


def add_prosumer_constraints(builder: QpBuilder, scenario: ScenarioConfig,
                             layout: ProsumerLayout, offset: int = 0, *,
                             sold_pins: np.ndarray | None = None,
                             availability: np.ndarray | None = None,
                             forbid_exchange: bool = False) -> None:
    """Emit one prosumer's feasible set into the builder.

    sold_pins (N, T) pins per-buyer sales and the sales total to given
    values; availability (N, T) caps purchases from each peer.  Both are
    used by the fixed-opponents verification solve.  forbid_exchange pins
    every trade variable to zero (the no-exchange-market baseline).
    """
    i = layout.i
    spec = scenario.prosumers[i]
    t_slots = layout.num_slots
    slot_hours = scenario.time.slot_hours
    peer_eff = scenario.transmission.peer_efficiency[i]
    grid_eff = scenario.transmission.grid_efficiency[i]
    batt = spec.battery
    charge_cap = batt.max_charge_rate * slot_hours
    discharge_cap = batt.max_discharge_rate * slot_hours

    for a, appl in enumerate(spec.appliances):
        if appl.kind == "deferrable" and appl.total_energy > appl.deadline * appl.per_slot_max + 1e-12:
            raise ValueError(
                f"prosumer {spec.id}: appliance {a} cannot meet its total by the deadline")

    for t in range(t_slots):
        for a, appl in enumerate(spec.appliances):
            lo = appl.per_slot_min if appl.kind == "nondeferrable" else 0.0
            builder.bound(offset + layout.appliance(a, t), lo, appl.per_slot_max)
        builder.bound(offset + layout.consumption(t), spec.demand_min[t],
                      spec.demand_max[t])
        builder.bound(offset + layout.grid(t), 0.0, None)
        builder.bound(offset + layout.charge(t), 0.0, charge_cap)
        builder.bound(offset + layout.discharge(t), 0.0, discharge_cap)
        for p, j in enumerate(layout.peers):
            if forbid_exchange:
                builder.bound(offset + layout.sold_to(p, t), 0.0, 0.0)
                builder.bound(offset + layout.bought_from(p, t), 0.0, 0.0)
            else:
                if sold_pins is not None:
                    builder.bound(offset + layout.sold_to(p, t),
                                  sold_pins[j, t], sold_pins[j, t])
                else:
                    builder.bound(offset + layout.sold_to(p, t), 0.0, None)
                cap = None if availability is None else max(availability[j, t], 0.0)
                builder.bound(offset + layout.bought_from(p, t), 0.0, cap)
        if forbid_exchange:
            builder.bound(offset + layout.sold_total(t), 0.0, 0.0)
            builder.bound(offset + layout.bought_total(t), 0.0, 0.0)
        else:
            if sold_pins is not None:
                pinned = float(sold_pins[list(layout.peers), t].sum()) if layout.peers else 0.0
                builder.bound(offset + layout.sold_total(t), pinned, pinned)
            else:
                builder.bound(offset + layout.sold_total(t), 0.0, None)
            builder.bound(offset + layout.bought_total(t), 0.0, None)

        # Consumption splits into appliance loads.
        if layout.n_appliances:
            cols = [offset + layout.appliance(a, t) for a in range(layout.n_appliances)]
            cols.append(offset + layout.consumption(t))
            builder.eq(cols, [1.0] * layout.n_appliances + [-1.0], 0.0)

        # Totals split into per-peer components.
        if layout.peers:
            builder.eq(
                [offset + layout.sold_to(p, t) for p in range(layout.n_peers)]
                + [offset + layout.sold_total(t)],
                [1.0] * layout.n_peers + [-1.0], 0.0)
            builder.eq(
                [offset + layout.bought_from(p, t) for p in range(layout.n_peers)]
                + [offset + layout.bought_total(t)],
                [1.0] * layout.n_peers + [-1.0], 0.0)
        else:
            builder.eq([offset + layout.sold_total(t)], [1.0], 0.0)
            builder.eq([offset + layout.bought_total(t)], [1.0], 0.0)

        # Per-slot energy balance with transmission and battery conversion
        # losses (charge pairs with the discharging efficiency and
        # discharge with the charging efficiency, as specified).
        cols = [offset + layout.consumption(t), offset + layout.sold_total(t),
                offset + layout.grid(t), offset + layout.charge(t),
                offset + layout.discharge(t)]
        vals = [1.0, 1.0, -grid_eff, batt.discharge_efficiency,
                -batt.charge_efficiency]
        for p, j in enumerate(layout.peers):
            cols.append(offset + layout.bought_from(p, t))
            vals.append(-peer_eff[j])
        builder.eq(cols, vals, 0.0)

    # Deferrable appliance totals.
    for a, appl in enumerate(spec.appliances):
        if appl.kind == "deferrable":
            cols = [offset + layout.appliance(a, t) for t in range(appl.deadline)]
            builder.ineq(cols, [-1.0] * len(cols), -appl.total_energy)

    # Battery dynamics: level[t+1] = level[t] + renewable[t] - discharge[t]
    # + charge[t], boxed in [0, capacity], returning to the initial level.
    cum_renewable = np.cumsum(spec.renewable)
    if batt.capacity > 0:
        cols = [offset + layout.charge(t) for t in range(t_slots)]
        cols += [offset + layout.discharge(t) for t in range(t_slots)]
        vals = [1.0] * t_slots + [-1.0] * t_slots
        builder.eq(cols, vals, -float(cum_renewable[-1]))
        for k in range(1, t_slots):
            cols = [offset + layout.charge(t) for t in range(k)]
            cols += [offset + layout.discharge(t) for t in range(k)]
            vals = [1.0] * k + [-1.0] * k
            headroom = batt.capacity - batt.initial_level - cum_renewable[k - 1]
            builder.ineq(cols, vals, float(headroom))
            builder.ineq(cols, [-v for v in vals],
                         float(batt.initial_level + cum_renewable[k - 1]))
    else:
        # Zero capacity: the level is pinned, harvested energy must be
        # discharged within its slot.
        for t in range(t_slots):
            builder.eq([offset + layout.discharge(t), offset + layout.charge(t)],
                       [1.0, -1.0], float(spec.renewable[t]))


def add_trade_and_utility_terms(builder: QpBuilder, scenario: ScenarioConfig,
                                layout: ProsumerLayout, mu, offset: int = 0) -> None:
    """Minimization terms common to every objective: quadratic consumption
    utility (negated), exchange revenue (negated) and exchange spending."""
    i = layout.i
    spec = scenario.prosumers[i]
    prices = mu.prices
    for t in range(layout.num_slots):
        d_idx = offset + layout.consumption(t)
        builder.add_quad(d_idx, d_idx, 2.0 * spec.utility.quadratic)
        builder.add_lin(d_idx, -float(spec.utility.linear[t]))
        builder.add_lin(offset + layout.sold_total(t), -float(prices[i, t]))
        for p, j in enumerate(layout.peers):
            builder.add_lin(offset + layout.bought_from(p, t), float(prices[j, t]))


def add_proximal_term(builder: QpBuilder, layout: ProsumerLayout,
                      weight: float, center: np.ndarray, offset: int = 0) -> None:
    """Add weight * ||a - center||^2 over the prosumer's whole block."""
    for k in range(layout.size):
        builder.add_quad(offset + k, offset + k, 2.0 * weight)
        builder.add_lin(offset + k, -2.0 * weight * float(center[k]))


def decision_to_vector(decision: Decision, layout: ProsumerLayout) -> np.ndarray:
    vec = np.zeros(layout.size)
    for t in range(layout.num_slots):
        for a in range(layout.n_appliances):
            vec[layout.appliance(a, t)] = decision.appliance_load[a, t]
        vec[layout.consumption(t)] = decision.consumption[t]
        vec[layout.grid(t)] = decision.grid_purchase[t]
        vec[layout.sold_total(t)] = decision.sold_total[t]
        vec[layout.bought_total(t)] = decision.bought_total[t]
        vec[layout.charge(t)] = decision.charge[t]
        vec[layout.discharge(t)] = decision.discharge[t]
        for p, j in enumerate(layout.peers):
            vec[layout.sold_to(p, t)] = decision.sold_to[j, t]
            vec[layout.bought_from(p, t)] = decision.bought_from[j, t]
    return vec


def vector_to_decision(x: np.ndarray, layout: ProsumerLayout,
                       n_prosumers: int) -> Decision:
    t_slots = layout.num_slots
    x = np.maximum(np.asarray(x, dtype=float), 0.0)  # clip solver dust
    appliance = np.zeros((layout.n_appliances, t_slots))
    sold_to = np.zeros((n_prosumers, t_slots))
    bought_from = np.zeros((n_prosumers, t_slots))
    grid = np.zeros(t_slots)
    cons = np.zeros(t_slots)
    sold = np.zeros(t_slots)
    bought = np.zeros(t_slots)
    charge = np.zeros(t_slots)
    discharge = np.zeros(t_slots)
    for t in range(t_slots):
        for a in range(layout.n_appliances):
            appliance[a, t] = x[layout.appliance(a, t)]
        cons[t] = x[layout.consumption(t)]
        grid[t] = x[layout.grid(t)]
        sold[t] = x[layout.sold_total(t)]
        bought[t] = x[layout.bought_total(t)]
        charge[t] = x[layout.charge(t)]
        discharge[t] = x[layout.discharge(t)]
        for p, j in enumerate(layout.peers):
            sold_to[j, t] = x[layout.sold_to(p, t)]
            bought_from[j, t] = x[layout.bought_from(p, t)]
    return Decision(
        grid_purchase=grid, consumption=cons, sold_total=sold,
        bought_total=bought, sold_to=sold_to, bought_from=bought_from,
        charge=charge, discharge=discharge, appliance_load=appliance)

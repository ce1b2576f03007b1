"""Convex quadratic programming in standard form.

Every solve in this package reduces to

    minimize    1/2 x' P x + q' x
    subject to  A x = b
                G x <= h

with P symmetric positive semidefinite.  The solver is a primal-dual
interior-point method (Mehrotra predictor-corrector) on a regularized
KKT system, factored densely for small problems and sparsely (with a
cached symbolic pattern) for large ones, followed by an active-set
crossover that removes the interior point's O(sqrt(tol)) dust on
degenerate bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "QpProblem",
    "QpSolution",
    "KktResiduals",
    "SolverError",
    "kkt_residuals",
    "solve_qp",
]

# Static regularization of the KKT factorizations (and the tolerance for
# accepting P with slightly negative eigenvalues).  Iterative refinement
# removes its effect from the computed steps.
_REG = 1e-9

# Fraction-to-the-boundary step damping.
_STEP_FRACTION = 0.99

# Problems with KKT dimension at or below this use dense factorizations.
_DENSE_LIMIT = 320


class SolverError(RuntimeError):
    """A solve that was required to succeed returned a non-optimal status."""

    def __init__(self, message: str, solution: "QpSolution | None" = None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class KktResiduals:
    """Max-norm KKT residuals of a candidate primal-dual point."""

    primal_eq: float
    primal_ineq: float
    dual: float
    complementarity: float

    def worst(self) -> float:
        return max(self.primal_eq, self.primal_ineq, self.dual, self.complementarity)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.primal_eq, self.primal_ineq, self.dual, self.complementarity)


def _as_sparse(M, shape, name: str) -> sp.csr_matrix:
    if M is None:
        return sp.csr_matrix(shape)
    if sp.issparse(M):
        M = M.tocsr().astype(float)
    else:
        M = sp.csr_matrix(np.atleast_2d(np.asarray(M, dtype=float)))
    if M.shape[1] != shape[1]:
        raise ValueError(f"{name} has {M.shape[1]} columns, expected {shape[1]}")
    return M


class QpProblem:
    """A convex QP: minimize 1/2 x'Px + q'x subject to Ax = b, Gx <= h.

    Matrices may be dense arrays or scipy sparse; they are stored sparse.
    P must be symmetric (within 1e-8 relative); dimension mismatches raise
    ValueError at construction, before any solve.
    """

    def __init__(self, P, q, A=None, b=None, G=None, h=None):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.ndim != 1:
            raise ValueError("q must be a vector")
        n = q.shape[0]

        if sp.issparse(P):
            P = P.tocsr().astype(float)
        else:
            P = sp.csr_matrix(np.atleast_2d(np.asarray(P, dtype=float)))
        if P.shape != (n, n):
            raise ValueError(f"P has shape {P.shape}, expected ({n}, {n})")
        asym = abs(P - P.T).max() if P.nnz else 0.0
        if asym > 1e-8 * (1.0 + abs(P).max()):
            raise ValueError("P is not symmetric")
        P = ((P + P.T) * 0.5).tocsr()

        A = _as_sparse(A, (0, n), "A")
        b = np.zeros(0) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")

        G = _as_sparse(G, (0, n), "G")
        h = np.zeros(0) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
        if G.shape[0] != h.shape[0]:
            raise ValueError(f"G has {G.shape[0]} rows but h has {h.shape[0]} entries")

        self.P = P
        self.q = q
        self.A = A
        self.b = b
        self.G = G
        self.h = h

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.G.shape[0]

    def with_objective(self, P, q) -> "QpProblem":
        """Same constraints, new objective; skips constraint revalidation.

        P may be sparse or dense and is symmetrized like the constructor
        does; q must match the variable count.
        """
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.shape != (self.n,):
            raise ValueError(f"q has shape {q.shape}, expected ({self.n},)")
        if not sp.issparse(P):
            P = sp.csr_matrix(np.atleast_2d(np.asarray(P, dtype=float)))
        if P.shape != (self.n, self.n):
            raise ValueError(f"P has shape {P.shape}, expected square of {self.n}")
        clone = QpProblem.__new__(QpProblem)
        clone.P = ((P + P.T) * 0.5).tocsr()
        clone.q = q
        clone.A, clone.b, clone.G, clone.h = self.A, self.b, self.G, self.h
        return clone

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.P @ x) + self.q @ x)

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of P (dense computation; intended for small n)."""
        if self.n == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.P.toarray()).min())

    def dump_json(self, path) -> None:
        """Write the problem to a JSON file (dense, row-major) for inspection."""
        doc = {
            "n": self.n,
            "P": self.P.toarray().tolist(),
            "q": self.q.tolist(),
            "A": self.A.toarray().tolist(),
            "b": self.b.tolist(),
            "G": self.G.toarray().tolist(),
            "h": self.h.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)


@dataclass
class QpSolution:
    """Result of solve_qp.

    status is one of "optimal", "infeasible", "unbounded", "max_iter".
    When status is "optimal" all four KKT residuals are at or below the
    tolerance the solver was called with.
    """

    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    residuals: KktResiduals
    iterations: int
    objective: float


def kkt_residuals(problem: QpProblem, x, y, z) -> KktResiduals:
    """Max-norm KKT residuals of (x, y, z) for the given problem.

    Returns the four quantities (equality primal, inequality primal, dual
    stationarity, complementarity), where complementarity is the largest
    elementwise product z_i * max(h - Gx, 0)_i.  Pure function.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({problem.n},)")
    if y.shape != (problem.n_eq,):
        raise ValueError(f"y has shape {y.shape}, expected ({problem.n_eq},)")
    if z.shape != (problem.n_ineq,):
        raise ValueError(f"z has shape {z.shape}, expected ({problem.n_ineq},)")

    dual_vec = problem.P @ x + problem.q
    if problem.n_eq:
        dual_vec = dual_vec + problem.A.T @ y
    if problem.n_ineq:
        dual_vec = dual_vec + problem.G.T @ z

    primal_eq = float(np.abs(problem.A @ x - problem.b).max()) if problem.n_eq else 0.0
    if problem.n_ineq:
        gap = problem.G @ x - problem.h
        primal_ineq = float(np.maximum(gap, 0.0).max())
        comp = float(np.abs(z * np.maximum(-gap, 0.0)).max())
    else:
        primal_ineq = 0.0
        comp = 0.0
    dual = float(np.abs(dual_vec).max()) if problem.n else 0.0
    return KktResiduals(primal_eq, primal_ineq, dual, comp)


class _DenseKkt:
    """Dense KKT backend: K = [[P, A', G'], [A, 0, 0], [G, 0, -D]]."""

    def __init__(self, P, A, G, n, me, mi):
        dim = n + me + mi
        self.n, self.me, self.mi = n, me, mi
        self.K = np.zeros((dim, dim))
        self.K[:n, :n] = P.toarray()
        if me:
            self.K[n:n + me, :n] = A.toarray()
            self.K[:n, n:n + me] = self.K[n:n + me, :n].T
        if mi:
            self.K[n + me:, :n] = G.toarray()
            self.K[:n, n + me:] = self.K[n + me:, :n].T
        self._reg = np.concatenate(
            [np.full(n, _REG), np.full(me, -_REG), np.full(mi, -_REG)])
        self._diag = np.arange(dim)
        self._lu = None
        self._d = None

    def refactor(self, d) -> bool:
        n, me = self.n, self.me
        self._d = d
        self.K[self._diag[n + me:], self._diag[n + me:]] = -d
        K_reg = self.K.copy()
        K_reg[self._diag, self._diag] += self._reg
        try:
            self._lu = sla.lu_factor(K_reg, check_finite=False)
        except (ValueError, sla.LinAlgError):
            return False
        return True

    def solve(self, rhs, rounds=2):
        sol = sla.lu_solve(self._lu, rhs, check_finite=False)
        for _ in range(rounds):
            resid = rhs - self.K @ sol
            sol = sol + sla.lu_solve(self._lu, resid, check_finite=False)
        return sol


class _SparseKkt:
    """Sparse KKT backend with a cached symbolic pattern; only the slack
    scaling block changes between factorizations."""

    def __init__(self, P, A, G, n, me, mi):
        self.n, self.me, self.mi = n, me, mi
        self.P, self.A, self.G = P, A, G
        self.AT = A.T.tocsr() if me else None
        self.GT = G.T.tocsr() if mi else None
        blocks = [
            [P + _REG * sp.eye(n), self.AT, self.GT],
            [A if me else None,
             -_REG * sp.eye(me) if me else None, None],
            [G if mi else None, None, -sp.eye(mi) if mi else None],
        ]
        self.K = sp.bmat(blocks, format="csc")
        # Locate the z-block diagonal inside the csc data array.
        self._d_slots = np.empty(mi, dtype=np.int64)
        for k in range(mi):
            col = n + me + k
            lo, hi = self.K.indptr[col], self.K.indptr[col + 1]
            pos = lo + np.searchsorted(self.K.indices[lo:hi], col)
            self._d_slots[k] = pos
        self._lu = None
        self._d = None

    def refactor(self, d) -> bool:
        self._d = d
        self.K.data[self._d_slots] = -(d + _REG)
        try:
            self._lu = splu(self.K)
        except RuntimeError:
            return False
        return True

    def _matvec(self, sol):
        n, me, mi = self.n, self.me, self.mi
        dx, dy, dz = sol[:n], sol[n:n + me], sol[n + me:]
        top = self.P @ dx
        if me:
            top = top + self.AT @ dy
        if mi:
            top = top + self.GT @ dz
        out = [top]
        if me:
            out.append(self.A @ dx)
        if mi:
            out.append(self.G @ dx - self._d * dz)
        return np.concatenate(out)

    def solve(self, rhs, rounds=2):
        sol = self._lu.solve(rhs)
        for _ in range(rounds):
            resid = rhs - self._matvec(sol)
            sol = sol + self._lu.solve(resid)
        return sol


def _make_backend(P, A, G, n, me, mi):
    if n + me + mi <= _DENSE_LIMIT:
        return _DenseKkt(P, A, G, n, me, mi)
    return _SparseKkt(P, A, G, n, me, mi)


def _solve_equality_only(problem: QpProblem, tol: float, x0) -> QpSolution:
    n, me = problem.n, problem.n_eq
    if me == 0:
        K0 = problem.P.tocsc()
        rhs = -problem.q
        try:
            lu = splu((problem.P + _REG * sp.eye(n)).tocsc())
            x = lu.solve(rhs)
            for _ in range(2):
                x = x + lu.solve(rhs - K0 @ x)
        except RuntimeError:
            x, *_ = np.linalg.lstsq(problem.P.toarray(), rhs, rcond=None)
        y = np.zeros(0)
        res = kkt_residuals(problem, x, y, np.zeros(0))
        status = "optimal" if res.worst() <= tol else "unbounded"
        return QpSolution(status, x, y, np.zeros(0), res, 1, problem.objective(x))

    dim = n + me
    rhs = np.concatenate([-problem.q, problem.b])
    if dim <= _DENSE_LIMIT:
        K0 = np.zeros((dim, dim))
        K0[:n, :n] = problem.P.toarray()
        K0[n:, :n] = problem.A.toarray()
        K0[:n, n:] = K0[n:, :n].T
        K_reg = K0.copy()
        idx = np.arange(dim)
        K_reg[idx, idx] += np.concatenate([np.full(n, _REG), np.full(me, -_REG)])
        try:
            lu = sla.lu_factor(K_reg, check_finite=False)
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            for _ in range(3):
                sol = sol + sla.lu_solve(lu, rhs - K0 @ sol, check_finite=False)
        except (ValueError, sla.LinAlgError):
            sol, *_ = np.linalg.lstsq(K0, rhs, rcond=None)
    else:
        K0 = sp.bmat([[problem.P, problem.A.T], [problem.A, None]], format="csc")
        reg = sp.diags(np.concatenate([np.full(n, _REG), np.full(me, -_REG)]))
        try:
            lu = splu((K0 + reg).tocsc())
            sol = lu.solve(rhs)
            for _ in range(3):
                sol = sol + lu.solve(rhs - K0 @ sol)
        except RuntimeError:
            sol, *_ = np.linalg.lstsq(K0.toarray(), rhs, rcond=None)
    x, y = sol[:n], sol[n:]
    res = kkt_residuals(problem, x, y, np.zeros(0))
    if res.worst() <= tol:
        status = "optimal"
    elif res.primal_eq > tol:
        status = "infeasible"
    else:
        status = "unbounded"
    return QpSolution(status, x, y, np.zeros(0), res, 1, problem.objective(x))


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 20000,
             x0=None) -> QpSolution:
    """Solve a convex QP to the requested KKT tolerance.

    Parameters
    ----------
    problem : QpProblem
    tol : float
        Target for all four KKT residual max-norms.
    max_iter : int
        Interior-point iteration cap; exceeding it yields status "max_iter".
    x0 : array_like, optional
        Primal starting point (defaults to the origin).  The solve is
        deterministic for fixed inputs including x0.

    Returns
    -------
    QpSolution
        status "optimal" guarantees residuals <= tol.  "infeasible" means
        the primal residual could not be driven below tol (detected by
        stagnation), "unbounded" that no finite minimizer exists.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    n, me, mi = problem.n, problem.n_eq, problem.n_ineq

    if mi == 0:
        return _solve_equality_only(problem, tol, x0)

    P = problem.P
    q, A, b, G, h = problem.q, problem.A, problem.b, problem.G, problem.h

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({n},)")
    y = np.zeros(me)
    w = np.maximum(h - G @ x, 1.0)  # slack, kept strictly positive
    z = np.ones(mi)

    backend = _make_backend(P, A, G, n, me, mi)
    AT = A.T.tocsr() if me else None
    GT = G.T.tocsr()

    best_worst = np.inf
    best_point = (x.copy(), y.copy(), z.copy())
    history: list[float] = []
    status = "max_iter"
    iters = 0

    for iters in range(1, max_iter + 1):
        grad = P @ x + q
        r_d = grad + (AT @ y if me else 0.0) + GT @ z
        r_p = A @ x - b if me else np.zeros(0)
        gap = G @ x - h
        worst = max(
            float(np.abs(r_p).max()) if me else 0.0,
            float(np.maximum(gap, 0.0).max()),
            float(np.abs(r_d).max()) if n else 0.0,
            float(np.abs(z * np.maximum(-gap, 0.0)).max()),
        )
        history.append(worst)
        if worst < best_worst:
            best_worst = worst
            best_point = (x.copy(), y.copy(), z.copy())
        if worst <= tol:
            status = "optimal"
            break

        # Stagnation: residuals not improving over a window => classify.
        if len(history) > 30 and best_worst > tol \
                and best_worst > 0.9 * min(history[:-15]):
            if np.abs(x).max() > 1e10:
                status = "unbounded"
            elif max(float(np.abs(r_p).max()) if me else 0.0,
                     float(np.maximum(gap, 0.0).max())) > 10 * tol:
                status = "infeasible"
            else:
                status = "max_iter"
            break

        r_g = gap + w
        mu = float(w @ z) / mi

        d = np.clip(w / z, 1e-14, 1e14)
        if not backend.refactor(d):
            status = "max_iter"
            break

        def newton(rc):
            rhs3 = -r_g + rc / z
            rhs = np.concatenate([-r_d, -r_p, rhs3]) if me \
                else np.concatenate([-r_d, rhs3])
            sol = backend.solve(rhs)
            dx = sol[:n]
            dy = sol[n:n + me]
            dz = sol[n + me:]
            dw = -(rc + w * dz) / z
            return dx, dy, dz, dw

        # Predictor (affine scaling direction).
        dx_a, dy_a, dz_a, dw_a = newton(w * z)
        ap = _max_step(w, dw_a)
        ad = _max_step(z, dz_a)
        mu_aff = float((w + ap * dw_a) @ (z + ad * dz_a)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector.
        rc = w * z + dw_a * dz_a - sigma * mu
        dx, dy, dz, dw = newton(rc)
        ap = _max_step(w, dw)
        ad = _max_step(z, dz)

        x = x + ap * dx
        w = np.maximum(w + ap * dw, 1e-300)
        if me:
            y = y + ad * dy
        z = np.maximum(z + ad * dz, 1e-300)

    final = kkt_residuals(problem, x, y, z)
    if final.worst() > best_worst:
        x, y, z = best_point
        final = kkt_residuals(problem, x, y, z)
    # Active-set polish; also rescues near-converged stalls.
    if final.worst() <= max(tol, np.sqrt(tol) * 1e-2):
        crossed = _crossover(problem, x, y, z, tol)
        if crossed is not None:
            x, y, z = crossed
            final = kkt_residuals(problem, x, y, z)
    if final.worst() <= tol:
        status = "optimal"
    return QpSolution(status, x, y, z, final, iters, problem.objective(x))


def _crossover(problem, x, y, z, tol):
    """Active-set polish of a converged interior point.

    Interior-point iterates leave O(sqrt(tol)) dust on degenerate bounds.
    Guess the active set from the slacks, re-solve the equality KKT
    system, then iterate: drop the most wrongly-signed pin, add violated
    rows.  The polished point is accepted only if it verifies (feasible,
    correct multiplier signs, residuals within tolerance, objective not
    worse); otherwise the interior point stands.
    """
    n, me, mi = problem.n, problem.n_eq, problem.n_ineq
    slack = problem.h - problem.G @ x
    scale_h = 1.0 + np.abs(problem.h)
    dust_lo = 100.0 * tol * scale_h
    dust_hi = 10.0 * np.sqrt(tol) * scale_h
    # Only worth doing when some slack sits in the degenerate dust zone;
    # clearly active rows (tiny slack) already carry clean multipliers.
    if not np.any((slack <= dust_hi) & (slack > dust_lo)):
        return None
    # Seed from dual dominance: rows where the multiplier outweighs the
    # slack are active; degenerate rows (both tiny) are safe to pin.
    active = set(np.flatnonzero((z >= slack) & (slack <= dust_hi)).tolist())
    banned: set[int] = set()
    sign_tol = np.sqrt(tol)
    # Anchor the pinned solves near the interior point: flat optimal faces
    # otherwise make the pinned KKT system wander between face corners.
    rho = 1e-6
    P_anchor = problem.P + 2.0 * rho * sp.eye(n)
    q_anchor = problem.q - 2.0 * rho * x

    for _ in range(30):
        rows = sorted(active)
        G_act = problem.G[rows]
        A_full = sp.vstack([problem.A, G_act], format="csr") if me else G_act.tocsr()
        b_full = np.concatenate([problem.b, problem.h[rows]])
        sub = QpProblem.__new__(QpProblem)
        sub.P, sub.q, sub.A, sub.b = P_anchor, q_anchor, A_full, b_full
        sub.G, sub.h = sp.csr_matrix((0, n)), np.zeros(0)
        refined = _solve_equality_only(sub, tol, None)
        if refined.status != "optimal":
            return None
        x2 = refined.x
        y2 = refined.y[:me]
        mult = refined.y[me:]

        gap = problem.G @ x2 - problem.h
        violated = set(np.flatnonzero(gap > tol).tolist()) - active
        if violated:
            active |= violated
            banned -= violated
            continue
        if mult.size and mult.min() < -sign_tol:
            # Drop one wrong pin at a time (simultaneous drops oscillate)
            # and ban it from the dust sweep: a redundant row re-enters
            # with another arbitrary multiplier split, cycling forever.
            worst = rows[int(np.argmin(mult))]
            active.discard(worst)
            banned.add(worst)
            if not active:
                return None
            continue
        # Degenerate sweep: pin leftover dust so the polished point does
        # not depend on which side of the indicator each run landed.
        dust = set(np.flatnonzero(np.abs(gap) <= dust_hi).tolist()) \
            - active - banned
        if dust:
            active |= dust
            continue
        z2 = np.zeros(mi)
        z2[rows] = np.maximum(mult, 0.0)
        res = kkt_residuals(problem, x2, y2, z2)
        if res.worst() > tol:
            return None
        scale = 1.0 + abs(problem.objective(x))
        if problem.objective(x2) > problem.objective(x) + tol * scale:
            return None
        return x2, y2, z2
    return None


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest step in [0, 1] keeping v + a*dv positive, with damping."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, _STEP_FRACTION * np.min(-v[neg] / dv[neg])))

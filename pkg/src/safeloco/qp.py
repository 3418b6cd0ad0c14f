"""Exact solver for tiny dense convex QPs.

Solves ``min 0.5 x'Hx + c'x  s.t.  A x >= b`` by enumerating candidate active
sets.  For ``n <= 3`` variables and ``m <= 6`` constraints there are at most
64 subsets; any subset with more than ``n`` rows, or with rank-deficient rows,
is skipped since a strictly convex QP always has a KKT point supported on a
linearly independent active set.

The enumeration is vectorized over a leading batch axis so that many
independent problems (e.g. Monte Carlo rollouts) are solved in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Literal

import numpy as np

from safeloco import ParameterError

FEAS_TOL = 1e-9
MULT_TOL = 1e-10
RANK_TOL = 1e-10
MAX_VARS = 3
MAX_CONSTRAINTS = 6


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    ineq_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ineq_b: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        c = np.asarray(self.linear, dtype=float).ravel()
        n = c.size
        a = np.asarray(self.ineq_a, dtype=float)
        a = a.reshape(-1, n) if a.size else np.zeros((0, n))
        b = np.asarray(self.ineq_b, dtype=float).ravel()
        if n > MAX_VARS or b.size > MAX_CONSTRAINTS:
            raise ParameterError(f"problem too large: n={n}, m={b.size}")
        if h.shape != (n, n):
            raise ParameterError(f"hessian shape {h.shape} does not match {n} variables")
        if a.shape[0] != b.size:
            raise ParameterError("constraint matrix and bound have different row counts")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))
                and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ParameterError("non-finite QP data")
        if not np.allclose(h, h.T, atol=1e-12):
            raise ParameterError("hessian must be symmetric")
        if np.linalg.eigvalsh(h).min() <= 1e-10:
            raise ParameterError("hessian must be positive definite")
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "linear", c)
        object.__setattr__(self, "ineq_a", a)
        object.__setattr__(self, "ineq_b", b)

    @property
    def n(self) -> int:
        return self.linear.size

    @property
    def m(self) -> int:
        return self.ineq_b.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear @ x)


@dataclass(frozen=True)
class QpSolution:
    x_star: np.ndarray
    active_set: tuple[int, ...]
    objective: float
    status: Literal["optimal", "infeasible"]
    multipliers: np.ndarray        # one per constraint, zero off the active set
    max_violation: float = 0.0     # infeasible problems: least uniform violation

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class BatchSolution:
    x_star: np.ndarray        # (B, n)
    multipliers: np.ndarray   # (B, m)
    objective: np.ndarray     # (B,)
    feasible: np.ndarray      # (B,) bool
    subset: np.ndarray        # (B,) index into active_sets(n, m), -1 if none


@lru_cache(maxsize=None)
def active_sets(n: int, m: int) -> tuple[tuple[int, ...], ...]:
    return tuple(s for k in range(min(n, m) + 1) for s in combinations(range(m), k))


@lru_cache(maxsize=None)
def _sets_by_size(n: int, m: int):
    """For each size ``k``: (global indices into ``active_sets``, (S_k, k) row indices)."""
    groups = []
    sets = active_sets(n, m)
    for k in range(min(n, m) + 1):
        ids = [i for i, s in enumerate(sets) if len(s) == k]
        rows = np.array([sets[i] for i in ids], dtype=int).reshape(len(ids), k)
        groups.append((np.array(ids), rows))
    return groups


def solve_qp_batch(h, c, a, b) -> BatchSolution:
    """Enumerate active sets for ``B`` problems at once.

    Shapes: ``h (B, n, n)``, ``c (B, n)``, ``a (B, m, n)``, ``b (B, m)``.
    All subsets of one size are solved in a single stacked KKT solve.  Rows of
    infeasible problems carry ``feasible=False`` and undefined ``x``.
    """
    h, c, a, b = (np.asarray(v, dtype=float) for v in (h, c, a, b))
    nb, n = c.shape
    m = b.shape[1]
    if nb == 1 and n == 2:
        best = _solve_2d(h[0], c[0], a[0], b[0])
        if best is None:
            return BatchSolution(np.full((1, 2), np.nan), np.zeros((1, m)), np.full(1, np.inf),
                                 np.zeros(1, dtype=bool), np.full(1, -1))
        x, mu, f, idx = best
        return BatchSolution(x[None], mu[None], np.array([f]), np.ones(1, dtype=bool),
                             np.array([idx]))
    n_sets = len(active_sets(n, m))
    cand_x = np.zeros((nb, n_sets, n))
    cand_mu = np.zeros((nb, n_sets, m))
    cand_ok = np.zeros((nb, n_sets), dtype=bool)

    for ids, rows in _sets_by_size(n, m):
        n_s, k = rows.shape
        if k == 0:
            x = np.linalg.solve(h, -c[..., None])[..., 0]
            cand_x[:, ids[0]] = x
            cand_ok[:, ids[0]] = True
            continue
        a_s = a[:, rows, :]                                   # (B, S, k, n)
        gram = np.einsum("bskn,bsjn->bskj", a_s, a_s)
        scale = np.prod(np.diagonal(gram, axis1=2, axis2=3), axis=2)
        # Hadamard ratio det(G)/prod(diag G): 1 for orthogonal rows, 0 for dependent
        ok = (scale > 1e-300) & (np.linalg.det(gram) > RANK_TOL * scale)
        kkt = np.zeros((nb, n_s, n + k, n + k))
        kkt[..., :n, :n] = h[:, None]
        kkt[..., :n, n:] = -np.swapaxes(a_s, 2, 3)
        kkt[..., n:, :n] = a_s
        kkt[~ok] = np.eye(n + k)
        rhs = np.concatenate([np.broadcast_to(-c[:, None], (nb, n_s, n)), b[:, rows]], axis=2)
        sol = np.linalg.solve(kkt, rhs[..., None])[..., 0]
        cand_x[:, ids] = sol[..., :n]
        mu = np.zeros((nb, n_s, m))
        np.put_along_axis(mu, np.broadcast_to(rows, (nb, n_s, k)), sol[..., n:], axis=2)
        cand_mu[:, ids] = mu
        cand_ok[:, ids] = ok & (sol[..., n:].min(axis=2) >= -MULT_TOL)

    if m:
        slack = np.einsum("bmn,bsn->bsm", a, cand_x) - b[:, None, :]
        cand_ok &= slack.min(axis=2) >= -FEAS_TOL
    obj = (0.5 * np.einsum("bsi,bij,bsj->bs", cand_x, h, cand_x)
           + np.einsum("bi,bsi->bs", c, cand_x))
    obj = np.where(cand_ok, obj, np.inf)
    best = np.argmin(obj, axis=1)
    pick = np.arange(nb)
    feasible = cand_ok[pick, best]
    return BatchSolution(cand_x[pick, best], cand_mu[pick, best], obj[pick, best],
                         feasible, np.where(feasible, best, -1))


def _solve_2d(h: np.ndarray, c: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Same enumeration for one two-variable problem, with closed-form 2x2 algebra.

    Returns ``(x, multipliers, objective, subset index)`` or ``None`` when no
    candidate is feasible.  The planner calls this every tick, where numpy's
    per-call overhead on tiny arrays dominates.
    """
    (h00, h01), (h10, h11) = h.tolist()
    c0, c1 = c.tolist()
    rows = a.tolist()
    rhs = b.tolist()
    m = len(rhs)
    det_h = h00 * h11 - h01 * h10
    i00, i01, i10, i11 = h11 / det_h, -h01 / det_h, -h10 / det_h, h00 / det_h

    def feasible(x0, x1):
        return all(r[0] * x0 + r[1] * x1 - bb >= -FEAS_TOL for r, bb in zip(rows, rhs))

    def objective(x0, x1):
        return 0.5 * (x0 * (h00 * x0 + h01 * x1) + x1 * (h10 * x0 + h11 * x1)) + c0 * x0 + c1 * x1

    u0, u1 = -(i00 * c0 + i01 * c1), -(i10 * c0 + i11 * c1)
    best = None
    for idx, subset in enumerate(active_sets(2, m)):
        mu = [0.0] * m
        if not subset:
            x0, x1 = u0, u1
        elif len(subset) == 1:
            (k,) = subset
            r0, r1 = rows[k]
            g0, g1 = i00 * r0 + i01 * r1, i10 * r0 + i11 * r1
            denom = r0 * g0 + r1 * g1
            if r0 * r0 + r1 * r1 <= 1e-300:
                continue
            lam = (rhs[k] - r0 * u0 - r1 * u1) / denom
            if lam < -MULT_TOL:
                continue
            x0, x1 = u0 + lam * g0, u1 + lam * g1
            mu[k] = lam
        else:
            k, j = subset
            (p0, p1), (q0, q1) = rows[k], rows[j]
            det_a = p0 * q1 - p1 * q0
            scale = (p0 * p0 + p1 * p1) * (q0 * q0 + q1 * q1)
            if scale <= 1e-300 or det_a * det_a <= RANK_TOL * scale:
                continue
            x0 = (rhs[k] * q1 - p1 * rhs[j]) / det_a
            x1 = (p0 * rhs[j] - rhs[k] * q0) / det_a
            g0, g1 = h00 * x0 + h01 * x1 + c0, h10 * x0 + h11 * x1 + c1
            # A^T mu = g
            lk = (g0 * q1 - q0 * g1) / det_a
            lj = (p0 * g1 - g0 * p1) / det_a
            if lk < -MULT_TOL or lj < -MULT_TOL:
                continue
            mu[k], mu[j] = lk, lj
        if not feasible(x0, x1):
            continue
        f = objective(x0, x1)
        if best is None or f < best[2]:
            best = (np.array([x0, x1]), np.array(mu), f, idx)
    return best


def least_violation(a: np.ndarray, b: np.ndarray, reg: float = 1e-10) -> tuple[np.ndarray, float]:
    """Point minimizing the uniform violation ``s`` of ``A x + s >= b``.

    Solved with the same enumeration on the slack problem
    ``min s**2 + reg * |x|**2  s.t.  A x + s >= b, s >= 0``.
    """
    m, n = a.shape
    h = np.diag(np.r_[np.full(n, 2 * reg), 2.0])
    a_s = np.vstack([np.hstack([a, np.ones((m, 1))]), np.r_[np.zeros(n), 1.0]])
    b_s = np.r_[b, 0.0]
    res = solve_qp_batch(h[None], np.zeros((1, n + 1)), a_s[None], b_s[None])
    assert res.feasible[0], "slack problem is always feasible"
    z = res.x_star[0]
    return z[:n], float(max(z[n], 0.0))


def solve_qp(p: QpProblem) -> QpSolution:
    """Global minimizer of a small strictly convex QP."""
    res = solve_qp_batch(p.hessian[None], p.linear[None], p.ineq_a[None], p.ineq_b[None])
    if res.feasible[0]:
        subset = active_sets(p.n, p.m)[res.subset[0]]
        return QpSolution(res.x_star[0], subset, float(res.objective[0]), "optimal",
                          res.multipliers[0])
    x, viol = least_violation(p.ineq_a, p.ineq_b)
    if viol <= FEAS_TOL:
        # borderline degenerate set: accept the least-violating point
        return QpSolution(x, (), p.objective(x), "optimal", np.zeros(p.m), viol)
    return QpSolution(x, (), p.objective(x), "infeasible", np.zeros(p.m), viol)


def kkt_residuals(p: QpProblem, sol: QpSolution) -> dict[str, float]:
    """Stationarity, primal/dual feasibility and complementarity residuals."""
    x, mu = sol.x_star, sol.multipliers
    slack = p.ineq_a @ x - p.ineq_b
    grad = p.hessian @ x + p.linear - p.ineq_a.T @ mu
    return {
        "stationarity": float(np.max(np.abs(grad))),
        "primal": float(max(0.0, -slack.min())) if p.m else 0.0,
        "dual": float(max(0.0, -mu.min())) if p.m else 0.0,
        "complementarity": float(np.max(np.abs(mu * slack))) if p.m else 0.0,
    }

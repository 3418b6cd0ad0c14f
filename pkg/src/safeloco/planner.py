"""Hierarchical CBF-QP velocity planner on a planar double integrator.

State ``x = [phi, phi_dot]``, input ``u = phi_ddot``.  Each obstacle gets a
disc barrier that is positive outside the inflated footprint::

    h(x) = |phi - center|**2 - (radius**2 + zeta)

Position barriers have relative degree two under the double integrator, so the
QPs constrain the extended barrier ``h_e = dh/dt + kappa * h`` instead, whose
derivative is affine in ``u``::

    dh_e/dt = 2 |phi_dot|**2 + 2 (phi - center) . u + kappa * dh/dt

Two QPs run per tick.  The intermediate QP keeps ``u`` close to the desired
input while respecting only the secondary barrier.  The hierarchical QP then
hard-enforces the primary barrier and penalizes, with weight ``W``, the change
in the secondary barrier rate relative to the intermediate input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from safeloco import ParameterError
from safeloco.qp import QpProblem, solve_qp_batch


@dataclass(frozen=True)
class PlannerState:
    phi: np.ndarray
    phi_dot: np.ndarray

    @classmethod
    def at(cls, phi, phi_dot=(0.0, 0.0)) -> "PlannerState":
        return cls(np.asarray(phi, dtype=float), np.asarray(phi_dot, dtype=float))


@dataclass(frozen=True)
class BarrierSpec:
    center: np.ndarray
    radius: float
    zeta: float = 0.0
    alpha_slope: float = 1.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius < 0 or self.zeta < 0 or self.alpha_slope <= 0:
            raise ParameterError(
                f"barrier needs radius>=0, zeta>=0, alpha_slope>0 (got "
                f"{self.radius}, {self.zeta}, {self.alpha_slope})")

    @property
    def inflated_radius(self) -> float:
        return math.sqrt(self.radius ** 2 + self.zeta)


@dataclass(frozen=True)
class SafetyHierarchy:
    """Barriers ordered by priority; ``barriers[0]`` is the hard constraint."""

    barriers: tuple[BarrierSpec, ...]
    relaxation_weight: float = 10.0
    fallback: bool = False      # ordering did not come from mass estimates

    def __post_init__(self):
        if len(self.barriers) != 2:
            raise ParameterError("the hierarchy has exactly two levels")
        if self.relaxation_weight < 0:
            raise ParameterError("relaxation weight W must be >= 0")

    @property
    def primary(self) -> BarrierSpec:
        return self.barriers[0]

    @property
    def secondary(self) -> BarrierSpec:
        return self.barriers[1]


@dataclass(frozen=True)
class PlannerLimits:
    a_max: float = 1.0
    v_max: float = 0.5
    kappa: float = 2.0
    dt: float = 0.0     # > 0 folds the velocity limit into the input box

    def input_bounds(self, phi_dot):
        """Per-axis ``(lo, hi)`` on ``u``: the acceleration box, tightened so
        that one held step of length ``dt`` cannot leave the velocity box."""
        phi_dot = np.asarray(phi_dot, dtype=float)
        lo = np.full(phi_dot.shape, -self.a_max)
        hi = np.full(phi_dot.shape, self.a_max)
        if self.dt > 0:
            lo = np.clip((-self.v_max - phi_dot) / self.dt, lo, hi)
            hi = np.clip((self.v_max - phi_dot) / self.dt, lo, hi)
        return lo, hi


@dataclass(frozen=True)
class HierarchicalResult:
    u_star: np.ndarray
    delta: float | np.ndarray
    u_intermediate: np.ndarray
    feasible: bool | np.ndarray = True
    intermediate_feasible: bool | np.ndarray = True


def barrier_value(spec: BarrierSpec, state: PlannerState):
    """Scalar for a single state, ``(B,)`` array for batched ``phi (B, 2)``."""
    d = state.phi - spec.center
    h = np.sum(d * d, axis=-1) - (spec.radius ** 2 + spec.zeta)
    return float(h) if np.ndim(h) == 0 else h


def barrier_rate(spec: BarrierSpec, state: PlannerState):
    r = 2.0 * np.sum((state.phi - spec.center) * state.phi_dot, axis=-1)
    return float(r) if np.ndim(r) == 0 else r


def extended_barrier(spec: BarrierSpec, state: PlannerState, kappa: float):
    return barrier_rate(spec, state) + kappa * barrier_value(spec, state)


def cbf_row(spec: BarrierSpec, state: PlannerState, kappa: float, dt: float = 0.0):
    """``(a, b)`` such that the CBF condition on ``h_e`` reads ``a @ u >= b``.

    With ``dt = 0`` this is the continuous condition ``dh_e/dt >= -alpha h_e``.
    With ``dt > 0`` the input is held for one tick and the condition is
    imposed on the sampled system, ``h_e(t + dt) >= (1 - alpha dt) h_e(t)``.
    ``h_e(t + dt)`` is quadratic in ``u`` with a non-negative quadratic part,
    so dropping that part leaves a sufficient linear row.  Both rows are
    scaled alike and agree as ``dt -> 0``.
    """
    d = state.phi - spec.center
    v = state.phi_dot
    h = np.sum(d * d, axis=-1) - (spec.radius ** 2 + spec.zeta)
    hdot = 2.0 * np.sum(d * v, axis=-1)
    h_e = hdot + kappa * h
    if dt <= 0.0:
        a = 2.0 * d
        b = -spec.alpha_slope * h_e - 2.0 * np.sum(v * v, axis=-1) - kappa * hdot
        return a, b
    d1 = d + v * dt
    h_e1 = (2.0 * np.sum(d1 * v, axis=-1)
            + kappa * (np.sum(d1 * d1, axis=-1) - (spec.radius ** 2 + spec.zeta)))
    a = 2.0 * d1 + v * dt + kappa * dt * d1
    b = ((1.0 - spec.alpha_slope * dt) * h_e - h_e1) / dt
    return a, b


def extended_barrier_rate(spec: BarrierSpec, state: PlannerState, u, kappa: float):
    """``dh_e/dt`` at input ``u``; the slack compares this at two inputs."""
    d = state.phi - spec.center
    return (2.0 * np.sum(state.phi_dot ** 2, axis=-1) + 2.0 * np.sum(d * u, axis=-1)
            + 2.0 * kappa * np.sum(d * state.phi_dot, axis=-1))


def zeta_margin(radius: float, v_max: float, t_step: float, samples: int = 41) -> float:
    """Inflation covering one planning interval of bounded-velocity motion.

    Brute force over a ``samples x samples`` grid of admissible planar
    velocities: the largest growth of the squared clearance radius when the
    robot travels ``|v| * t_step`` before the next update.
    """
    if samples < 2:
        raise ParameterError("zeta_margin needs at least 2 samples per axis")
    if radius < 0 or v_max < 0 or t_step < 0:
        raise ParameterError("zeta_margin arguments must be non-negative")
    grid = np.linspace(-v_max, v_max, samples)
    vx, vy = np.meshgrid(grid, grid)
    travel = np.hypot(vx, vy) * t_step
    worsening = 2.0 * radius * travel + travel ** 2
    return float(worsening.max())


_BOX_A = np.vstack([np.eye(2), -np.eye(2)])


def _batched(state: PlannerState, *vecs):
    single = np.ndim(state.phi) == 1
    phi = np.atleast_2d(state.phi)
    out = [PlannerState(phi, np.atleast_2d(state.phi_dot))]
    for v in vecs:
        v = np.asarray(v, dtype=float)
        out.append(np.broadcast_to(v, phi.shape).astype(float))
    return single, out


def _with_box(a_cbf, b_cbf, lo, hi):
    nb = a_cbf.shape[0]
    a = np.concatenate([a_cbf[:, None, :], np.broadcast_to(_BOX_A, (nb, 4, 2))], axis=1)
    b = np.concatenate([np.atleast_1d(b_cbf)[:, None], lo, -hi], axis=1)
    return a, b


def _corner(a_row, lo, hi):
    # box vertex maximizing a_row @ u, the least-violating input
    return np.where(a_row >= 0, hi, lo)


def intermediate_qp(hierarchy: SafetyHierarchy, state: PlannerState, u_des,
                    limits: PlannerLimits = PlannerLimits()):
    """Closest input to ``u_des`` satisfying the secondary CBF and the box.

    Returns ``(u, feasible)``.  When no boxed input satisfies the CBF, the
    input maximizing the barrier rate (least violation) is returned and
    ``feasible`` is False.  Accepts batched states.
    """
    single, (st, ud) = _batched(state, u_des)
    nb = ud.shape[0]
    a2, b2 = cbf_row(hierarchy.secondary, st, limits.kappa, limits.dt)
    lo, hi = limits.input_bounds(st.phi_dot)
    a, b = _with_box(a2, b2, lo, hi)
    res = solve_qp_batch(np.broadcast_to(2.0 * np.eye(2), (nb, 2, 2)), -2.0 * ud, a, b)
    u = np.where(res.feasible[:, None], res.x_star, _corner(a2, lo, hi))
    if single:
        return u[0], bool(res.feasible[0])
    return u, res.feasible


def hierarchical_qp(hierarchy: SafetyHierarchy, state: PlannerState, u_des,
                    limits: PlannerLimits = PlannerLimits(),
                    u_intermediate=None) -> HierarchicalResult:
    """Relaxed two-level CBF-QP.

    The slack ``delta = a2 @ (u - u_i)`` is substituted into the objective,
    which keeps the problem two-dimensional::

        min |u - u_des|**2 + W (a2 @ (u - u_i))**2   s.t.  a1 @ u >= b1, lo <= u <= hi

    If the primary constraint cannot be met inside the input box the result is
    flagged infeasible, ``u_star`` is the least-violating input, and the
    caller should command a stop.  Accepts batched states.
    """
    single, (st, ud) = _batched(state, u_des)
    nb = ud.shape[0]
    inter_ok = np.ones(nb, dtype=bool)
    if u_intermediate is None:
        u_i, inter_ok = intermediate_qp(hierarchy, st, ud, limits)
    else:
        u_i = np.broadcast_to(np.asarray(u_intermediate, float), ud.shape)
    w = hierarchy.relaxation_weight
    a1, b1 = cbf_row(hierarchy.primary, st, limits.kappa, limits.dt)
    a2, _ = cbf_row(hierarchy.secondary, st, limits.kappa, limits.dt)

    hess = 2.0 * (np.eye(2) + w * np.einsum("bi,bj->bij", a2, a2))
    lin = -2.0 * ud - 2.0 * w * np.sum(a2 * u_i, axis=1)[:, None] * a2
    lo, hi = limits.input_bounds(st.phi_dot)
    a, b = _with_box(a1, b1, lo, hi)
    res = solve_qp_batch(hess, lin, a, b)
    u = np.where(res.feasible[:, None], res.x_star, _corner(a1, lo, hi))
    delta = np.sum(a2 * (u - u_i), axis=1)
    if single:
        return HierarchicalResult(u[0], float(delta[0]), u_i[0], bool(res.feasible[0]),
                                  bool(np.all(inter_ok)))
    return HierarchicalResult(u, delta, u_i, res.feasible, inter_ok)


def hierarchical_qp_problem(hierarchy: SafetyHierarchy, state: PlannerState, u_des, u_i,
                            limits: PlannerLimits = PlannerLimits()) -> QpProblem:
    """The single-state hierarchical QP as a :class:`QpProblem` (for certificates)."""
    a1, b1 = cbf_row(hierarchy.primary, state, limits.kappa, limits.dt)
    a2, _ = cbf_row(hierarchy.secondary, state, limits.kappa, limits.dt)
    w = hierarchy.relaxation_weight
    u_des, u_i = np.asarray(u_des, float), np.asarray(u_i, float)
    lo, hi = limits.input_bounds(state.phi_dot)
    return QpProblem(2.0 * (np.eye(2) + w * np.outer(a2, a2)),
                     -2.0 * u_des - 2.0 * w * (a2 @ u_i) * a2,
                     np.vstack([a1, _BOX_A]), np.r_[b1, lo, -hi])


class SplineReference:
    """Clamped cubic spline from start to goal (zero end velocities), then hold."""

    def __init__(self, start, goal, duration: float, waypoints=()):
        if duration <= 0:
            raise ParameterError("reference duration must be positive")
        pts = [np.asarray(start, float), *[np.asarray(w, float) for w in waypoints],
               np.asarray(goal, float)]
        knots = np.linspace(0.0, duration, len(pts))
        self.duration = duration
        self.goal = pts[-1]
        self._spline = CubicSpline(knots, np.vstack(pts), bc_type="clamped")

    def __call__(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if t >= self.duration:
            return self.goal.copy(), np.zeros(2)
        t = max(t, 0.0)
        return self._spline(t), self._spline(t, 1)


def reference_tracker(goal, state: PlannerState, kp: float = 2.0, kd: float = 2.8,
                      goal_vel=(0.0, 0.0), a_max: float = 1.0) -> np.ndarray:
    """PD law toward a (possibly moving) reference point, clamped to the box."""
    u = kp * (np.asarray(goal, float) - state.phi) + kd * (np.asarray(goal_vel, float) - state.phi_dot)
    return np.clip(u, -a_max, a_max)


def integrate(state: PlannerState, u, dt: float, v_max: float) -> PlannerState:
    """Exact zero-order-hold step of the double integrator, then velocity projection."""
    u = np.asarray(u, dtype=float)
    phi = state.phi + state.phi_dot * dt + 0.5 * u * dt * dt
    phi_dot = np.clip(state.phi_dot + u * dt, -v_max, v_max)
    return PlannerState(phi, phi_dot)

"""Deterministic planar world: H-LIP biped, pushable boxes, safety planner.

One control tick advances, in order: the double-integrator planner (optionally
through the hierarchical safety filter), the footstep decision at the start
of each single-support phase, the swing foot along its quintic path with
contact against the boxes, box sliding under Coulomb friction, and the
pendulum itself.  The robot only feels contact through where its swing foot
ends up: a blocked or dragged foot lands short of its target, and that
placement error is the step-to-step disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from safeloco import NumericalError, ParameterError
from safeloco.dob import DobState, NominalPlant, QFilter, apply_dob, dob_correction
from safeloco.estimator import (EstimationSample, EstimationUnavailable, ForceBlend,
                                MassEstimate, blend_forces, build_hierarchy,
                                centroidal_force, estimate_mass, impedance_force)
from safeloco.hlip import (HlipParams, HlipState, S2SMatrices, StepGain, build_s2s,
                           orbit_target, solve_step_gain, ssp_transition_matrix,
                           stepping_controller)
from safeloco.planner import (BarrierSpec, PlannerLimits, PlannerState, SafetyHierarchy,
                              SplineReference, barrier_value, hierarchical_qp, integrate,
                              reference_tracker, zeta_margin)

LEGS = ("left", "right")
MODES = ("baseline", "cbf", "cbf_dob")


@dataclass
class BoxBody:
    """Axis-aligned square box; never rotates, only slides."""

    name: str
    center: np.ndarray
    half_extent: float
    mass: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mu_ground: float = 0.4

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).copy()
        if self.mass <= 0 or self.half_extent <= 0 or self.mu_ground < 0:
            raise ParameterError(f"box {self.name!r}: need mass>0, half_extent>0, mu>=0")
        if not np.all(np.isfinite(self.velocity)):
            raise ParameterError(f"box {self.name!r}: non-finite velocity")

    def friction_capacity(self, g: float) -> float:
        return self.mu_ground * self.mass * g

    def gap(self, point) -> float:
        """Distance from ``point`` to the footprint, negative inside."""
        d = np.abs(np.asarray(point, float) - self.center) - self.half_extent
        outside = float(np.hypot(*np.maximum(d, 0.0)))
        return outside if outside > 0 else float(d.max())

    @property
    def barrier_radius(self) -> float:
        # half-diagonal: the farthest footprint vertex from the center
        return self.half_extent * math.sqrt(2.0)

    def copy(self) -> "BoxBody":
        return replace(self, center=self.center.copy(), velocity=self.velocity.copy())


@dataclass
class RobotState:
    base_pos: np.ndarray
    base_vel: np.ndarray
    stance_foot_pos: np.ndarray
    swing_foot_pos: np.ndarray
    step_phase: float = 0.0
    stance_leg: str = "right"


@dataclass(frozen=True)
class ContactRecord:
    obstacle_id: str
    point: np.ndarray
    force: np.ndarray          # on the box [N]
    duration_so_far: float


@dataclass(frozen=True)
class ProbeConfig:
    """Stationary push used to identify box masses before walking."""

    n_est: int = 1000
    dt: float = 0.001
    push_speed: float = 0.3
    robot_mass: float = 33.0
    lambda_true: float = 2.5       # true foot effective mass; the estimator assumes blend.lambda_int
    sway_acc: float = 0.1          # CoM acceleration while bracing [m/s^2]
    acc_noise: float = 0.05
    ground_force_bias: float = 0.08
    ground_force_noise: float = 1.0
    foot_noise: float = 2e-4
    object_vel_noise: float = 5e-4
    min_object_speed: float = 0.02


@dataclass(frozen=True)
class DisturbanceScript:
    """Placement error added to ``n_steps`` consecutive footsteps."""

    start_step: int = 0
    n_steps: int = 0
    magnitude: float = 0.0
    axis: int = 0

    def error(self, step_index: int) -> np.ndarray:
        e = np.zeros(2)
        if self.start_step <= step_index < self.start_step + self.n_steps:
            e[self.axis] = self.magnitude
        return e


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.01
    duration: float = 20.0
    start: tuple = (0.0, 0.0)
    goal: tuple = (3.2, 0.0)
    goal_tol: float = 0.1
    boxes: tuple = ()
    default_order: tuple = ()
    seed: int = 0
    actuation_noise: float = 0.0
    use_filter: bool = True
    use_dob: bool = True
    use_estimation: bool = True
    hlip: HlipParams = HlipParams()
    q_weight: tuple = (1.0, 1.0)
    r_weight: float = 1.0
    u_max: float = 0.4
    v_max_walk: float = 0.6
    kp_walk: float = 2.0
    dob_beta: float = 0.5
    foot_offset: float = 0.15
    foot_radius: float = 0.08
    push_limit: float = 30.0
    contact_mu: float = 0.3
    g: float = 9.81
    fall_bound: float = 0.5
    limits: PlannerLimits = PlannerLimits()
    alpha: tuple = (1.0, 1.0)
    relaxation_weight: float = 10.0
    zeta_t_step: float = 0.4
    zeta_speed: float | None = None   # defaults to the planner speed limit
    zeta_samples: int = 41
    ref_duration: float = 12.0
    kp_ref: float = 2.0
    kd_ref: float = 2.8
    blend: ForceBlend = ForceBlend()
    probe: ProbeConfig = ProbeConfig()
    disturbance: DisturbanceScript = DisturbanceScript()

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= 0:
            raise ParameterError("dt and duration must be positive")
        for name in ("t_ssp", "t_dsp"):
            ticks = getattr(self.hlip, name) / self.dt
            if abs(ticks - round(ticks)) > 1e-9:
                raise ParameterError(f"{name} must be a whole number of ticks")
        QFilter(self.dob_beta)   # validates the pole
        if self.limits.dt and abs(self.limits.dt - self.dt) > 1e-12:
            raise ParameterError("planner limits dt must match the control tick")
        if len(self.boxes) > 2:
            raise ParameterError("at most two boxes")
        caps = sorted(b.friction_capacity(self.g) for b in self.boxes)
        if len(caps) == 2 and not caps[0] < self.push_limit < caps[1]:
            raise ParameterError(
                f"push limit {self.push_limit} N must separate the friction capacities {caps}")


def _quintic(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _closest_approach(q0: np.ndarray, q1: np.ndarray, box: BoxBody) -> tuple[float, float]:
    """``(fraction, gap)`` at the segment point nearest the box footprint.

    If the segment crosses the square, the entry point is returned (clipped
    Liang-Barsky style).  Otherwise the nearest pair involves a segment end
    or a square corner, so those candidates are exhaustive.
    """
    seg = q1 - q0
    lo, hi = box.center - box.half_extent, box.center + box.half_extent
    t0, t1 = 0.0, 1.0
    for i in range(2):
        if abs(seg[i]) < 1e-15:
            if not lo[i] <= q0[i] <= hi[i]:
                break
            continue
        ta, tb = (lo[i] - q0[i]) / seg[i], (hi[i] - q0[i]) / seg[i]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
        if t0 > t1:
            break
    else:
        return t0, box.gap(q0 + t0 * seg)
    cands = [0.0, 1.0]
    ll = float(seg @ seg)
    if ll > 0:
        for cx in (lo[0], hi[0]):
            for cy in (lo[1], hi[1]):
                s = float((np.array([cx, cy]) - q0) @ seg) / ll
                cands.append(min(max(s, 0.0), 1.0))
    return min(((s, box.gap(q0 + s * seg)) for s in cands), key=lambda e: e[1])


def _first_contact(q0: np.ndarray, q1: np.ndarray, box: BoxBody, radius: float,
                   s_hit: float = 1.0) -> float:
    """Fraction along ``q0 -> q1`` where the foot disc first touches the box.

    ``s_hit`` is any fraction known to be in contact.
    """
    if box.gap(q0) < radius:
        return 0.0
    lo, hi = 0.0, s_hit
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if box.gap(q0 + mid * (q1 - q0)) < radius:
            hi = mid
        else:
            lo = mid
    return lo


def _slide(box: BoxBody, accel_push: np.ndarray, g: float, dt: float) -> np.ndarray:
    """Advance the box one tick under a push plus kinetic friction; returns displacement."""
    v = box.velocity
    speed = float(np.hypot(*v))
    if speed > 1e-12:
        fric_dir = -v / speed
    else:
        push = float(np.hypot(*accel_push))
        fric_dir = -accel_push / push if push > 0 else np.zeros(2)
    a = accel_push + box.mu_ground * g * fric_dir
    v_new = v + a * dt
    if float(v_new @ v) < 0.0 and float(np.hypot(*accel_push)) <= box.mu_ground * g:
        # friction brings the box to rest inside the tick: no reversal
        t_stop = speed / (box.mu_ground * g)
        disp = 0.5 * v * t_stop
        box.velocity = np.zeros(2)
    else:
        disp = v * dt + 0.5 * a * dt * dt
        box.velocity = v_new
    box.center = box.center + disp
    return disp


def coast_box(box: BoxBody, g: float, dt: float) -> None:
    """Free sliding: friction only, exact stop, kinetic energy never grows."""
    if float(np.hypot(*box.velocity)) > 0.0:
        _slide(box, np.zeros(2), g, dt)


def _outward_normal(box: BoxBody, q: np.ndarray) -> np.ndarray:
    closest = np.clip(q, box.center - box.half_extent, box.center + box.half_extent)
    d = q - closest
    norm = float(np.hypot(*d))
    if norm > 1e-12:
        return d / norm
    # center inside the footprint: leave through the nearest face
    rel = q - box.center
    axis = int(np.argmax(np.abs(rel) - box.half_extent))
    n = np.zeros(2)
    n[axis] = 1.0 if rel[axis] >= 0 else -1.0
    return n


def resolve_contact(swing_target, swing_current, box: BoxBody, dt: float,
                    foot_radius: float = 0.08, push_limit: float = 30.0, g: float = 9.81,
                    prior_duration: float = 0.0, contact_mu: float = 0.3):
    """Move the swing foot toward ``swing_target`` against one box.

    Returns ``(record or None, adjusted_swing)`` and updates ``box`` in place.

    The foot is a disc.  At first touch its motion splits along the contact
    normal.  The normal part pushes the box with the force needed to carry
    it along, capped at ``push_limit``; if that cannot break static friction
    the box stays and the foot stops at the surface, otherwise the foot only
    advances as far as the box moved.  The tangential part slides freely
    unless the motion lies inside the foot-box friction cone, in which case
    the foot sticks to the face (head-on pushes jam, glancing ones slip).
    """
    q0 = np.asarray(swing_current, dtype=float)
    q1 = np.asarray(swing_target, dtype=float)
    s_near, gap = _closest_approach(q0, q1, box)
    if gap >= foot_radius:
        return None, q1
    s = _first_contact(q0, q1, box, foot_radius, s_near)
    q_c = q0 + s * (q1 - q0)
    n = _outward_normal(box, q_c)
    rest = q1 - q_c
    push = max(0.0, -float(rest @ n))
    tangent = rest + push * n
    stick = push > 0.0 and float(np.hypot(*tangent)) <= contact_mu * push

    m = box.mass
    cap = box.friction_capacity(g)
    force = 0.0
    if push > 0.0:
        required = cap + m * max(0.0, push / dt + float(box.velocity @ n)) / dt
        force = min(required, push_limit)
    moving = float(np.hypot(*box.velocity)) > 1e-12
    if push == 0.0:
        coast_box(box, g, dt)
        return ContactRecord(box.name, q_c, np.zeros(2), prior_duration + dt), q_c + tangent
    if not moving and force <= cap:
        foot = q_c if stick else q_c + tangent
    else:
        disp = _slide(box, -force * n / m, g, dt)
        into = -float(disp @ n)
        advance = min(push, max(0.0, into))
        foot = q_c - advance * n + ((disp + into * n) if stick else tangent)
    return ContactRecord(box.name, q_c, -force * n, prior_duration + dt), foot


def inject_disturbance(x_step: HlipState, placement_error: float, s2s: S2SMatrices,
                       u_commanded: float, u_max: float = 0.4):
    """Realize ``u_commanded - placement_error`` on the S2S map.

    Returns the next pre-impact state and ``w``, the model discrepancy
    ``x_next - A_h x - b_h u_commanded``.
    """
    if abs(placement_error) > u_max + 1e-12:
        raise ParameterError(f"placement error {placement_error} exceeds u_max={u_max}")
    x = x_step.as_array()
    w = -placement_error * s2s.b_h
    x_next = s2s.a_h @ x + s2s.b_h * u_commanded + w
    return HlipState.from_array(x_next), w


def _lateral(leg: str, offset: float) -> np.ndarray:
    return np.array([0.0, offset if leg == "left" else -offset])


# --------------------------------------------------------------------------
# mass probe

def probe_push(box: BoxBody, blend: ForceBlend, probe: ProbeConfig, rng: np.random.Generator,
               g: float = 9.81, n_samples: int | None = None) -> list[EstimationSample]:
    """Brace and push ``box`` (a copy) along +x with the swing foot; log estimates.

    The foot is an impedance-controlled point of true effective mass
    ``probe.lambda_true`` tracking a constant-speed reference through the
    box.  In contact foot and box move together.  Each sample records the
    blended force estimate from noisy measurements, and the measured object
    velocity and acceleration.  Only samples with the box moving are kept.
    """
    n_samples = probe.n_est if n_samples is None else n_samples
    box = box.copy()
    dt, lam, m = probe.dt, probe.lambda_true, box.mass
    cap = box.friction_capacity(g)
    face0 = box.center[0] - box.half_extent
    x_f, v_f = face0 - 0.05, 0.0
    x_d0, v_d = x_f, probe.push_speed
    in_contact = False
    samples: list[EstimationSample] = []
    v_obj_meas_prev = 0.0
    e_dot_meas_prev = None
    t = 0.0
    max_ticks = 50 * n_samples + 10_000
    for tick in range(max_ticks):
        if len(samples) >= n_samples:
            break
        t = tick * dt
        x_d = x_d0 + v_d * t
        e, e_dot = x_d - x_f, v_d - v_f
        drive = blend.k_p_int * e + blend.k_d_int * e_dot   # ddx_d = 0
        face = box.center[0] - box.half_extent
        if not in_contact and x_f >= face:
            # inelastic impact: foot and box share momentum
            v_common = (lam * v_f + m * box.velocity[0]) / (lam + m)
            v_f = v_common
            box.velocity = np.array([v_common, 0.0])
            x_f = face
            in_contact = True
            e_dot = v_d - v_f
            drive = blend.k_p_int * e + blend.k_d_int * e_dot
        force = 0.0
        if in_contact:
            v_b = box.velocity[0]
            if v_b > 1e-12:
                a = (drive - cap) / (lam + m)
            elif drive > cap:
                a = (drive - cap) / (lam + m)
            else:
                a = 0.0
            force = drive - lam * a
            if force < 0.0:
                in_contact = False
                force = 0.0
                a = drive / lam
            if in_contact:
                v_new = max(v_b + a * dt, 0.0)
                box.center = box.center + np.array([0.5 * (v_b + v_new) * dt, 0.0])
                box.velocity = np.array([v_new, 0.0])
                x_f = box.center[0] - box.half_extent
                v_f = v_new
                a_f = a
            else:
                a_f = a
        else:
            a_f = drive / lam
            v_f += a_f * dt
            x_f += v_f * dt
            coast_box(box, g, dt)

        v_obj_meas = box.velocity[0] + rng.normal(0.0, probe.object_vel_noise)
        a_obj_meas = (v_obj_meas - v_obj_meas_prev) / dt
        v_obj_meas_prev = v_obj_meas
        e_dot_meas = v_d - v_f + rng.normal(0.0, probe.foot_noise)
        e_ddot_meas = 0.0 if e_dot_meas_prev is None else (e_dot_meas - e_dot_meas_prev) / dt
        e_dot_meas_prev = e_dot_meas
        if not in_contact or force <= 0.0 or v_obj_meas < probe.min_object_speed:
            continue

        f_true = np.array([force, 0.0])
        sway = rng.normal(0.0, probe.sway_acc, 2)
        # the ground supplies the push and the CoM sway
        f_ground = probe.robot_mass * sway + f_true
        f_ground_meas = ((1.0 + probe.ground_force_bias) * f_ground
                         + rng.normal(0.0, probe.ground_force_noise, 2))
        acc_meas = sway + rng.normal(0.0, probe.acc_noise, 2)
        f_cm = -centroidal_force(acc_meas, probe.robot_mass, f_ground_meas)
        e_meas = np.array([x_d - x_f + rng.normal(0.0, probe.foot_noise), 0.0])
        f_imp = impedance_force(blend, e_meas, np.array([e_dot_meas, 0.0]),
                                np.array([e_ddot_meas, 0.0]))
        f_hat = blend_forces(blend, f_cm, f_imp)
        samples.append(EstimationSample(f_hat, np.array([v_obj_meas, 0.0]),
                                        np.array([a_obj_meas, 0.0]), t))
    return samples


def estimate_box_masses(cfg: WorldConfig, rng: np.random.Generator,
                        n_samples: int | None = None) -> dict[str, MassEstimate | None]:
    out: dict[str, MassEstimate | None] = {}
    for box in cfg.boxes:
        samples = probe_push(box, cfg.blend, cfg.probe, rng, cfg.g, n_samples)
        try:
            out[box.name] = estimate_mass(samples, box.mu_ground, cfg.g)
        except EstimationUnavailable:
            out[box.name] = None
    return out


# --------------------------------------------------------------------------
# world state and tick

STEPLOG_VERSION = 1
STEPLOG_COLUMNS = (
    "tick", "time", "base_x", "base_y", "base_vx", "base_vy",
    "plan_x", "plan_y", "plan_vx", "plan_vy",
    "step_event", "step_index", "disturbed",
    "cmd_step_x", "cmd_step_y", "real_step_x", "real_step_y",
    "orbit_vx", "orbit_vy", "pre_vx", "pre_vy", "dob_x", "dob_y",
    "h1", "h2", "h1_base", "h2_base", "delta", "qp_feasible",
    "f_hat_x", "f_hat_y", "contact",
    "box0_x", "box0_y", "box1_x", "box1_y", "m_est0", "m_est1",
    "filter", "dob", "fallen",
)


@dataclass
class _Axis:
    """Per-axis step bookkeeping (x and y are independent H-LIPs)."""

    dob: DobState = field(default_factory=DobState)
    u_prev: float | None = None


@dataclass
class WorldState:
    config: WorldConfig
    robot: RobotState
    boxes: list[BoxBody]
    planner: PlannerState
    hierarchy: SafetyHierarchy | None
    masses: dict
    s2s: S2SMatrices
    gain: StepGain
    plant: NominalPlant
    reference: SplineReference
    rng: np.random.Generator
    tick: int = 0
    step_index: int = 0
    axes: tuple = field(default_factory=lambda: (_Axis(), _Axis()))
    swing_start: np.ndarray = field(default_factory=lambda: np.zeros(2))
    swing_target: np.ndarray = field(default_factory=lambda: np.zeros(2))
    cmd_step: np.ndarray = field(default_factory=lambda: np.zeros(2))
    orbit_v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    pre_v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    plan_accel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    contact_time: dict = field(default_factory=dict)
    step_contact: bool = False
    fallen: bool = False
    rows: list = field(default_factory=list)

    @property
    def time(self) -> float:
        return self.tick * self.config.dt

    @property
    def virtual_stance(self) -> np.ndarray:
        r = self.robot
        return r.stance_foot_pos - _lateral(r.stance_leg, self.config.foot_offset)


def _hierarchy_for(cfg: WorldConfig, masses: dict) -> SafetyHierarchy | None:
    if len(cfg.boxes) != 2:
        return None
    barriers = {}
    order = list(cfg.default_order) or [b.name for b in cfg.boxes]
    for b in cfg.boxes:
        speed = cfg.limits.v_max if cfg.zeta_speed is None else cfg.zeta_speed
        z = zeta_margin(b.barrier_radius, speed, cfg.zeta_t_step, cfg.zeta_samples)
        barriers[b.name] = BarrierSpec(b.center.copy(), b.barrier_radius, z, name=b.name)
    # class-K slopes follow priority position, not box identity
    if masses and all(masses.get(b.name) is not None for b in cfg.boxes):
        hier = build_hierarchy([(b.name, masses[b.name]) for b in cfg.boxes], barriers,
                               cfg.relaxation_weight, (cfg.start, cfg.goal), order)
    else:
        hier = SafetyHierarchy(tuple(barriers[i] for i in order), cfg.relaxation_weight,
                               fallback=True)
    return replace(hier, barriers=tuple(replace(b, alpha_slope=a)
                                        for b, a in zip(hier.barriers, cfg.alpha)))


def init_world(cfg: WorldConfig) -> WorldState:
    rng = np.random.default_rng(cfg.seed)
    masses = estimate_box_masses(cfg, rng) if cfg.use_estimation else {}
    s2s = build_s2s(cfg.hlip)
    gain = solve_step_gain(s2s, np.diag(cfg.q_weight), cfg.r_weight)
    start = np.asarray(cfg.start, dtype=float)
    robot = RobotState(base_pos=start.copy(), base_vel=np.zeros(2),
                       stance_foot_pos=start + _lateral("right", cfg.foot_offset),
                       swing_foot_pos=start + _lateral("left", cfg.foot_offset),
                       stance_leg="right")
    return WorldState(
        config=cfg, robot=robot, boxes=[b.copy() for b in cfg.boxes],
        planner=PlannerState.at(start), hierarchy=_hierarchy_for(cfg, masses), masses=masses,
        s2s=s2s, gain=gain, plant=NominalPlant.from_s2s(s2s),
        reference=SplineReference(start, cfg.goal, cfg.ref_duration), rng=rng)


def _plan_step(world: WorldState) -> None:
    """Footstep decision at the start of single support, per axis."""
    cfg, r = world.config, world.robot
    p_plus = r.base_pos - world.virtual_stance
    e_ssp = ssp_transition_matrix(cfg.hlip, cfg.hlip.t_ssp)
    x_pre_all = [e_ssp @ np.array([p_plus[i], r.base_vel[i]]) for i in range(2)]
    # this step shapes motion after touchdown, so compare plan and base there
    t_ssp, u_plan = cfg.hlip.t_ssp, world.plan_accel
    pl = world.planner
    phi_ahead = pl.phi + pl.phi_dot * t_ssp + 0.5 * u_plan * t_ssp ** 2
    base_ahead = world.virtual_stance + np.array([x[0] for x in x_pre_all])
    v_ff = pl.phi_dot + u_plan * (t_ssp + 0.5 * cfg.hlip.period)
    v_des = v_ff + cfg.kp_walk * (phi_ahead - base_ahead)
    v_des = np.clip(v_des, -cfg.v_max_walk, cfg.v_max_walk)
    q = QFilter(cfg.dob_beta)
    for i, axis in enumerate(world.axes):
        x_pre = x_pre_all[i]
        x_orb, u_orb = orbit_target(cfg.hlip, float(v_des[i]), world.s2s)
        u_r = stepping_controller(world.gain, HlipState.from_array(x_pre), x_orb, u_orb, cfg.u_max)
        if cfg.use_dob and axis.u_prev is not None:
            offset, axis.dob = dob_correction(axis.dob, q, world.plant, axis.u_prev, float(x_pre[1]))
            u = apply_dob(u_r, offset, cfg.u_max)
        else:
            u = u_r
        axis.u_prev = u
        world.cmd_step[i] = u
        world.orbit_v[i] = x_orb.v
        world.pre_v[i] = x_pre[1]
    swing_leg = "left" if r.stance_leg == "right" else "right"
    world.swing_start = r.swing_foot_pos.copy()
    world.swing_target = (world.virtual_stance + world.cmd_step
                          + _lateral(swing_leg, cfg.foot_offset))
    world.step_contact = False


def _impact(world: WorldState, error=None) -> np.ndarray:
    """Touchdown: returns the realized step (virtual foot to virtual foot)."""
    cfg, r = world.config, world.robot
    error = cfg.disturbance.error(world.step_index) if error is None else np.asarray(error, float)
    world.step_contact = world.step_contact or bool(np.any(error != 0))
    if cfg.actuation_noise > 0:
        error = error + world.rng.normal(0.0, cfg.actuation_noise, 2)
    landed = r.swing_foot_pos - error
    old_virtual = world.virtual_stance
    swing_leg = "left" if r.stance_leg == "right" else "right"
    new_virtual = landed - _lateral(swing_leg, cfg.foot_offset)
    r.swing_foot_pos, r.stance_foot_pos = r.stance_foot_pos.copy(), landed
    r.stance_leg = swing_leg
    return new_virtual - old_virtual


def emergency_stop(state: PlannerState, limits, dt: float) -> np.ndarray:
    """Largest admissible deceleration toward zero planner velocity."""
    return np.clip(-state.phi_dot / dt, -limits.a_max, limits.a_max)


def step_world(world: WorldState, placement_error=None) -> WorldState:
    """Advance one control tick in place; appends one log row.

    ``placement_error`` (2-vector) overrides the scripted error for a step
    that lands during this tick.
    """
    cfg, r = world.config, world.robot
    dt = cfg.dt
    n_ssp = round(cfg.hlip.t_ssp / dt)
    n_cycle = n_ssp + round(cfg.hlip.t_dsp / dt)
    phase_tick = world.tick % n_cycle
    t = world.time

    # planner
    ref_pos, ref_vel = world.reference(t)
    u_des = reference_tracker(ref_pos, world.planner, cfg.kp_ref, cfg.kd_ref, ref_vel,
                              cfg.limits.a_max)
    delta, feasible = 0.0, True
    if cfg.use_filter and world.hierarchy is not None:
        res = hierarchical_qp(world.hierarchy, world.planner, u_des, cfg.limits)
        u, delta, feasible = res.u_star, res.delta, res.feasible
        if not feasible:
            # emergency stop: brake toward a zero velocity target
            u = emergency_stop(world.planner, cfg.limits, dt)
    else:
        u = u_des
    world.planner = integrate(world.planner, u, dt, cfg.limits.v_max)
    world.plan_accel = np.asarray(u, dtype=float)

    # gait
    step_event = False
    real_step = np.full(2, np.nan)
    if phase_tick == 0:
        _plan_step(world)
    contact_force = np.zeros(2)
    contact_ids = []
    if phase_tick < n_ssp:
        s = (phase_tick + 1) / n_ssp
        target = world.swing_start + _quintic(s) * (world.swing_target - world.swing_start)
        foot = r.swing_foot_pos
        touched = set()
        for box in world.boxes:
            rec, adjusted = resolve_contact(target, foot, box, dt, cfg.foot_radius,
                                            cfg.push_limit, cfg.g,
                                            world.contact_time.get(box.name, 0.0),
                                            cfg.contact_mu)
            if rec is not None:
                touched.add(box.name)
                contact_force += rec.force
                contact_ids.append(box.name)
                world.contact_time[box.name] = rec.duration_so_far
                target = adjusted
        for box in world.boxes:
            if box.name not in touched:
                world.contact_time.pop(box.name, None)
                coast_box(box, cfg.g, dt)
        r.swing_foot_pos = target
        world.step_contact = world.step_contact or bool(touched)
        phi = ssp_transition_matrix(cfg.hlip, dt)
        p = r.base_pos - world.virtual_stance
        for i in range(2):
            p[i], r.base_vel[i] = phi @ np.array([p[i], r.base_vel[i]])
        r.base_pos = world.virtual_stance + p
        if phase_tick == n_ssp - 1:
            real_step = _impact(world, placement_error)
            step_event = True
    else:
        for box in world.boxes:
            coast_box(box, cfg.g, dt)
        r.base_pos = r.base_pos + r.base_vel * dt
    r.step_phase = (phase_tick + 1) / n_cycle

    p_now = r.base_pos - world.virtual_stance
    if np.any(np.abs(p_now) > cfg.fall_bound):
        world.fallen = True
    values = np.concatenate([r.base_pos, r.base_vel, world.planner.phi, world.planner.phi_dot])
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite world state at tick {world.tick}")

    world.rows.append(_log_row(world, step_event, real_step, delta, feasible, contact_force,
                               contact_ids))
    if step_event:
        world.step_index += 1
    world.tick += 1
    return world


def _barriers(world: WorldState, point, vel) -> tuple[float, float]:
    if world.hierarchy is None:
        return math.nan, math.nan
    st = PlannerState(np.asarray(point, float), np.asarray(vel, float))
    return tuple(barrier_value(b, st) for b in world.hierarchy.barriers)


def _log_row(world, step_event, real_step, delta, feasible, force, contact_ids) -> tuple:
    cfg, r = world.config, world.robot
    nan = math.nan
    h1, h2 = _barriers(world, world.planner.phi, world.planner.phi_dot)
    hb1, hb2 = _barriers(world, r.base_pos, r.base_vel)
    boxes = [b.center for b in world.boxes] + [np.full(2, nan)] * (2 - len(world.boxes))
    masses = []
    for i in range(2):
        est = world.masses.get(cfg.boxes[i].name) if i < len(cfg.boxes) else None
        masses.append(est.m_star if est is not None else nan)
    ev = step_event
    offsets = [a.dob.correction for a in world.axes]
    return (
        world.tick, world.time + cfg.dt, *r.base_pos, *r.base_vel,
        *world.planner.phi, *world.planner.phi_dot,
        int(ev), world.step_index if ev else -1, int(world.step_contact) if ev else 0,
        *(world.cmd_step if ev else (nan, nan)), *(real_step if ev else (nan, nan)),
        *(world.orbit_v if ev else (nan, nan)), *(world.pre_v if ev else (nan, nan)),
        *(offsets if ev else (nan, nan)),
        h1, h2, hb1, hb2, float(delta), int(bool(feasible)),
        *force, "|".join(contact_ids),
        *boxes[0], *boxes[1], *masses,
        int(cfg.use_filter), int(cfg.use_dob), int(world.fallen),
    )


def run_world(cfg: WorldConfig) -> WorldState:
    """Simulate until ``cfg.duration`` or a fall."""
    world = init_world(cfg)
    n = round(cfg.duration / cfg.dt)
    while world.tick < n and not world.fallen:
        step_world(world)
    return world

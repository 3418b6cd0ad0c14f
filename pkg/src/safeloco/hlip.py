"""Hybrid linear inverted pendulum (H-LIP) gait model.

The pendulum alternates a single-support phase (SSP), where the mass position
``p`` relative to the stance foot obeys ``p'' = lambda**2 * p``, with a
double-support phase (DSP) of constant velocity.  Sampling the state just
before each foot impact gives the linear step-to-step (S2S) map::

    x[k+1] = A_h @ x[k] + b_h * u[k]

where ``u`` is the step size.  Everything here is per axis; the planar robot
runs one instance for x and one for y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from safeloco import NumericalError, ParameterError


@dataclass(frozen=True)
class HlipParams:
    """Pendulum constants.  ``lam`` is derived from ``g`` and ``z0``."""

    z0: float = 0.8
    g: float = 9.81
    t_ssp: float = 0.35
    t_dsp: float = 0.05
    lam: float = field(init=False)

    def __post_init__(self):
        vals = (self.z0, self.g, self.t_ssp, self.t_dsp)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError(f"non-finite H-LIP parameters: {vals}")
        if self.z0 <= 0 or self.g <= 0 or self.t_ssp <= 0 or self.t_dsp < 0:
            raise ParameterError(
                f"need z0>0, g>0, t_ssp>0, t_dsp>=0; got {vals}")
        object.__setattr__(self, "lam", math.sqrt(self.g / self.z0))

    @property
    def period(self) -> float:
        return self.t_ssp + self.t_dsp


@dataclass(frozen=True)
class HlipState:
    p: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.v)):
            raise ParameterError(f"non-finite H-LIP state ({self.p}, {self.v})")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.v])

    @classmethod
    def from_array(cls, x) -> "HlipState":
        return cls(float(x[0]), float(x[1]))


@dataclass(frozen=True)
class S2SMatrices:
    a_h: np.ndarray
    b_h: np.ndarray
    c_h: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))


@dataclass(frozen=True)
class StepGain:
    k_step: np.ndarray          # shape (2,), u = k_step @ x
    q_weight: np.ndarray
    r_weight: float
    riccati: np.ndarray         # stabilizing DARE solution


def ssp_transition_matrix(params: HlipParams, t: float) -> np.ndarray:
    """Closed-form ``expm(A_ssp * t)`` for ``A_ssp = [[0, 1], [lam**2, 0]]``."""
    if not math.isfinite(t) or t < 0:
        raise ParameterError(f"transition time must be finite and >= 0, got {t}")
    lam = params.lam
    ch, sh = math.cosh(lam * t), math.sinh(lam * t)
    return np.array([[ch, sh / lam], [lam * sh, ch]])


def build_s2s(params: HlipParams) -> S2SMatrices:
    e_ssp = ssp_transition_matrix(params, params.t_ssp)
    dsp = np.array([[1.0, params.t_dsp], [0.0, 1.0]])
    a_h = e_ssp if params.t_dsp == 0 else e_ssp @ dsp
    b_h = e_ssp @ np.array([-1.0, 0.0])
    return S2SMatrices(a_h=a_h, b_h=b_h)


def _dlqr_gain(a, b, p, r):
    # u = k @ x with k = -(r + b'Pb)^-1 b'PA
    return -(b @ p @ a) / (r + b @ p @ b)


def solve_step_gain(s2s: S2SMatrices, q=None, r: float = 1.0,
                    tol: float = 1e-12, max_iter: int = 10_000) -> StepGain:
    """Infinite-horizon discrete LQR gain for the S2S system.

    The DARE is solved by iterating the Riccati recursion from ``P = Q`` until
    successive iterates agree to ``tol`` in max-norm.
    """
    a, b = s2s.a_h, s2s.b_h
    q = np.eye(2) if q is None else np.asarray(q, dtype=float)
    if q.shape != (2, 2) or not np.allclose(q, q.T) or np.linalg.eigvalsh(q).min() < -1e-12:
        raise ParameterError("state weight must be a symmetric PSD 2x2 matrix")
    if not (math.isfinite(r) and r > 0):
        raise ParameterError(f"input weight must be positive, got {r}")
    ctrb = np.column_stack([b, a @ b])
    if np.linalg.matrix_rank(ctrb) < 2:
        raise NumericalError("step-to-step pair is not controllable")

    p = q.copy()
    for _ in range(max_iter):
        pb = p @ b
        p_next = q + a.T @ p @ a - np.outer(a.T @ pb, pb @ a) / (r + b @ pb)
        p_next = 0.5 * (p_next + p_next.T)
        if np.max(np.abs(p_next - p)) < tol:
            p = p_next
            break
        p = p_next
    else:
        raise NumericalError(f"Riccati iteration did not converge in {max_iter} steps")

    k = _dlqr_gain(a, b, p, r)
    rho = spectral_radius(a + np.outer(b, k))
    if rho >= 1.0:
        raise NumericalError(f"LQR closed loop not Schur stable (rho={rho})")
    return StepGain(k_step=k, q_weight=q, r_weight=float(r), riccati=p)


def spectral_radius(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def orbit_target(params: HlipParams, v_des: float, s2s: S2SMatrices | None = None,
                 v_max: float | None = None) -> tuple[HlipState, float]:
    """Period-1 orbit with average speed ``v_des``.

    The step length covers one full cycle at the desired speed, and the
    pre-impact state is the fixed point of the S2S map under that step.
    """
    if v_max is not None and abs(v_des) > v_max + 1e-12:
        raise ParameterError(f"|v_des|={abs(v_des)} exceeds v_max={v_max}")
    s2s = s2s or build_s2s(params)
    u_star = v_des * params.period
    lhs = np.eye(2) - s2s.a_h
    if abs(np.linalg.det(lhs)) < 1e-12:
        raise NumericalError("singular period-1 fixed-point system")
    x_star = np.linalg.solve(lhs, s2s.b_h * u_star)
    return HlipState.from_array(x_star), u_star


def stepping_controller(gain: StepGain, x_robot: HlipState, x_orbit: HlipState,
                        u_orbit: float, u_max: float = 0.4) -> float:
    err = x_robot.as_array() - x_orbit.as_array()
    u = u_orbit + float(gain.k_step @ err)
    return min(max(u, -u_max), u_max)

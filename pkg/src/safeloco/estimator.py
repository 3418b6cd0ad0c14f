"""Interaction-force estimation and obstacle mass ordering.

Without a force sensor at the foot, the contact force is estimated twice and
blended: once from the centroidal (linear momentum) residual of the robot, and
once from the task-space impedance of the swing foot.  Object mass then
follows from a one-dimensional non-negative least-squares fit of the sliding
model ``f = m (a + mu g v/|v|)`` per sample, averaged over the batch.
"""

from __future__ import annotations

import math
import statistics
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from safeloco import ParameterError
from safeloco.planner import BarrierSpec, SafetyHierarchy


class EstimationUnavailable(RuntimeError):
    """Every sample in a batch was rejected."""


@dataclass(frozen=True)
class EstimationSample:
    f_hat_xy: np.ndarray      # force applied to the object [N]
    v_obj_xy: np.ndarray
    a_obj_xy: np.ndarray
    timestamp: float

    def __post_init__(self):
        for name in ("f_hat_xy", "v_obj_xy", "a_obj_xy"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (2,) or not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} must be a finite planar vector")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class ForceBlend:
    gamma: float = 0.5
    k_p_int: float = 500.0
    k_d_int: float = 50.0
    lambda_int: float = 2.0   # scalar effective task-space mass [kg]

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"blend weight gamma must be in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class MassEstimate:
    m_star: float
    n_samples: int
    per_sample: tuple[float, ...] = field(repr=False)
    n_rejected: int = 0


def centroidal_force(com_acc, total_mass: float, f_ground) -> np.ndarray:
    """Planar interaction force on the robot from the linear momentum balance.

    Gravity has no planar component, so ``f_int = M * p_ddot - f_ground``.
    """
    return total_mass * np.asarray(com_acc, dtype=float) - np.asarray(f_ground, dtype=float)


def impedance_force(blend: ForceBlend, e, e_dot, e_ddot) -> np.ndarray:
    """Force implied by the swing-foot impedance law, with ``e = x_desired - x``."""
    return (blend.k_p_int * np.asarray(e, float) + blend.k_d_int * np.asarray(e_dot, float)
            + blend.lambda_int * np.asarray(e_ddot, float))


def blend_forces(blend: ForceBlend, f_cm, f_imp) -> np.ndarray:
    return blend.gamma * np.asarray(f_cm, float) + (1.0 - blend.gamma) * np.asarray(f_imp, float)


def regressor(sample: EstimationSample, mu: float, g: float) -> np.ndarray:
    """``a + mu g v/|v|``; the friction term is dropped for a (near) stationary object."""
    v = sample.v_obj_xy
    speed = float(np.hypot(*v))
    v_unit = v / speed if speed >= 1e-6 else np.zeros(2)
    return sample.a_obj_xy + mu * g * v_unit


def nnls_1d(f: np.ndarray, d: np.ndarray) -> float:
    """``argmin_{m >= 0} |f - m d|**2`` in closed form."""
    dd = float(d @ d)
    if dd <= 0.0:
        raise ParameterError("degenerate regressor")
    return max(0.0, float(f @ d) / dd)


def _admitted(samples: Sequence[EstimationSample], onset_ticks: int, peak_factor: float,
              window: int) -> list[bool]:
    """Impact filter: drop the first ticks of each contact episode and force spikes."""
    if not samples:
        return []
    times = np.array([s.timestamp for s in samples])
    gaps = np.diff(times)
    period = float(np.median(gaps)) if gaps.size else 0.0
    keep = []
    recent: deque[float] = deque(maxlen=window)
    since_onset = 0
    for i, s in enumerate(samples):
        if i == 0 or (period > 0 and gaps[i - 1] > 1.5 * period):
            since_onset = 0
        mag = float(np.hypot(*s.f_hat_xy))
        ok = mag > 0.0 and since_onset >= onset_ticks
        if ok and len(recent) >= 3 and mag > peak_factor * statistics.median(recent):
            ok = False
        recent.append(mag)
        keep.append(ok)
        since_onset += 1
    return keep


def estimate_mass(samples: Iterable[EstimationSample], mu: float = 0.4, g: float = 9.81,
                  onset_ticks: int = 3, peak_factor: float = 5.0,
                  median_window: int = 50) -> MassEstimate:
    """Average of per-sample non-negative least-squares masses.

    Samples are ordered by timestamp.  Rejected: zero-force samples, the
    first ``onset_ticks`` of every contact episode, samples whose force
    exceeds ``peak_factor`` times the running median, and samples whose
    regressor vanishes (nothing to fit).
    """
    samples = sorted(samples, key=lambda s: s.timestamp)
    keep = _admitted(samples, onset_ticks, peak_factor, median_window)
    per_sample = []
    for s, ok in zip(samples, keep):
        if not ok:
            continue
        d = regressor(s, mu, g)
        if float(d @ d) < 1e-12:
            continue
        per_sample.append(nnls_1d(s.f_hat_xy, d))
    if not per_sample:
        raise EstimationUnavailable(f"all {len(samples)} samples rejected")
    m_star = math.fsum(per_sample) / len(per_sample)
    return MassEstimate(m_star, len(per_sample), tuple(per_sample),
                        len(samples) - len(per_sample))


def _path_distance(point, start, goal) -> float:
    p, a, b = (np.asarray(v, float) for v in (point, start, goal))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.hypot(*(p - (a + t * ab))))


def build_hierarchy(estimates: Sequence[tuple[str, MassEstimate | None]],
                    barriers: dict[str, BarrierSpec], relaxation_weight: float = 10.0,
                    path=((0.0, 0.0), (0.0, 0.0)),
                    default_order: Sequence[str] | None = None) -> SafetyHierarchy:
    """Order barriers by descending estimated mass (heaviest is primary).

    Equal masses go to the obstacle nearer the straight start-goal path, then
    to the obstacle id.  If any estimate is missing, ``default_order`` (or the
    id order) is used and the hierarchy is flagged as a fallback.
    """
    if len(estimates) != 2:
        raise ParameterError("expected estimates for exactly two obstacles")
    if any(est is None for _, est in estimates):
        order = list(default_order) if default_order else sorted(i for i, _ in estimates)
        return SafetyHierarchy(tuple(barriers[i] for i in order), relaxation_weight,
                               fallback=True)
    start, goal = path

    def key(item):
        oid, est = item
        return (-est.m_star, _path_distance(barriers[oid].center, start, goal), oid)

    ordered = sorted(estimates, key=key)
    return SafetyHierarchy(tuple(barriers[oid] for oid, _ in ordered), relaxation_weight)

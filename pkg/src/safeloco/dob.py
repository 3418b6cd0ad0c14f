"""Disturbance observer on the step-to-step footstep channel.

The observed output is the pre-impact CoM velocity ``y = c_h @ x``.  The
nominal plant ``P_n(z) = c_h (zI - A_h)^-1 b_h`` has relative degree one, so a
first-order Q-filter ``Q(z) = (1 - beta) / (z - beta)`` is the smallest filter
that makes ``Q * P_n^-1`` proper.  The correction added to the next footstep
is ``Q u - Q P_n^-1 y``, i.e. minus the filtered input-equivalent disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from safeloco import NumericalError, ParameterError
from safeloco.hlip import S2SMatrices


@dataclass
class QFilter:
    """First-order low-pass ``(1 - beta) / (z - beta)``; unit DC gain."""

    beta: float = 0.5
    state: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.beta < 1.0):
            raise ParameterError(f"Q-filter pole must lie in [0, 1), got {self.beta}")

    def step(self, x: float) -> float:
        y = self.state
        self.state = self.beta * self.state + (1.0 - self.beta) * x
        return y

    def response(self, z: complex) -> complex:
        return (1.0 - self.beta) / (z - self.beta)


@dataclass(frozen=True)
class NominalPlant:
    a_h: np.ndarray
    b_h: np.ndarray
    c_h: np.ndarray

    @classmethod
    def from_s2s(cls, s2s: S2SMatrices) -> "NominalPlant":
        plant = cls(s2s.a_h, s2s.b_h, s2s.c_h)
        if abs(float(plant.c_h @ plant.b_h)) < 1e-12:
            raise ParameterError("nominal plant must have relative degree one (c_h b_h != 0)")
        return plant

    def response(self, z: complex) -> complex:
        return complex(self.c_h @ np.linalg.solve(z * np.eye(2) - self.a_h, self.b_h))


@dataclass
class DobState:
    """Per-axis observer memory.

    ``inverse_plant_state`` is the two-element transposed direct-form state of
    the composed filter ``Q * P_n^-1``.
    """

    u_prev_filtered: float = 0.0
    inverse_plant_state: np.ndarray = field(default_factory=lambda: np.zeros(2))
    correction: float = 0.0


def nominal_transfer_coeffs(plant: NominalPlant) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator of ``P_n(z)`` in descending powers of ``z``.

    For a 2x2 ``A``, ``adj(zI - A) = zI + A - tr(A) I``, so the numerator is
    ``c b z + c (A - tr(A) I) b``.
    """
    a, b, c = plant.a_h, plant.b_h, plant.c_h
    tr = float(np.trace(a))
    num = np.array([float(c @ b), float(c @ (a - tr * np.eye(2)) @ b)])
    den = np.array([1.0, -tr, float(np.linalg.det(a))])
    return num, den


def composed_filter_coeffs(q: QFilter, plant: NominalPlant) -> tuple[np.ndarray, np.ndarray]:
    """``Q(z) / P_n(z)`` normalized to ``z**-1`` form with leading denominator 1."""
    num, den = nominal_transfer_coeffs(plant)
    # (1-beta) * den(z) / ((z - beta) * num(z)); both sides degree 2
    b = (1.0 - q.beta) * den
    a = np.convolve([1.0, -q.beta], num)
    return b / a[0], a / a[0]


def dob_correction(dob: DobState, q: QFilter, plant: NominalPlant,
                   u_prev: float, y_prev: float) -> tuple[float, DobState]:
    """Advance the observer by one step event.

    ``u_prev`` is the footstep command applied at the previous event and
    ``y_prev`` the pre-impact velocity it produced.  Returns the offset to add
    to the next command (the negated disturbance estimate) and the new state.
    """
    if not (math.isfinite(u_prev) and math.isfinite(y_prev)):
        raise NumericalError(f"non-finite DOB input u={u_prev}, y={y_prev}")
    bq, aq = composed_filter_coeffs(q, plant)
    s1, s2 = dob.inverse_plant_state
    y_filtered = bq[0] * y_prev + s1
    s1_new = bq[1] * y_prev - aq[1] * y_filtered + s2
    s2_new = bq[2] * y_prev - aq[2] * y_filtered

    u_filtered = q.beta * dob.u_prev_filtered + (1.0 - q.beta) * u_prev
    offset = u_filtered - y_filtered
    if not math.isfinite(offset):
        raise NumericalError("DOB correction became non-finite")
    new = replace(dob, u_prev_filtered=u_filtered,
                  inverse_plant_state=np.array([s1_new, s2_new]), correction=offset)
    return offset, new


def apply_dob(u_nominal: float, offset: float, u_max: float) -> float:
    return min(max(u_nominal + offset, -u_max), u_max)

"""Safety-critical biped locomotion through blocked paths.

Three layers, bottom to top:

* :mod:`safeloco.hlip` / :mod:`safeloco.dob` -- H-LIP step-to-step gait with a
  disturbance observer on the footstep channel.
* :mod:`safeloco.planner` -- hierarchical CBF-QP velocity planner on a
  double integrator, solved exactly by :mod:`safeloco.qp`.
* :mod:`safeloco.estimator` -- interaction-force estimation and obstacle mass
  ordering that seeds the barrier hierarchy.

:mod:`safeloco.world` ties them together in a deterministic planar simulator,
and :mod:`safeloco.harness` / :mod:`safeloco.cli` run scenarios in batch.
"""

__version__ = "0.1.0"


class ParameterError(ValueError):
    """Invalid or non-finite parameters."""


class NumericalError(ArithmeticError):
    """An iterative or linear-algebra step failed to produce a usable answer."""

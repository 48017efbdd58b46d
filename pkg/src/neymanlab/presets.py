"""Canonical example scenarios used by the docs, demos, and acceptance tests."""

from __future__ import annotations

import numpy as np

from .scenario import (
    ConstraintSpec,
    CovariateLaw,
    OutcomeModel,
    Scenario,
    TreatmentFunctional,
)


def binary_hetero() -> Scenario:
    """Three-stratum binary scenario with heterogeneous arm variances.

    The per-stratum variance ratios differ, so the efficient propensity is
    genuinely covariate-dependent: e*(x) = (1/3, 2/3, 3/7).
    """
    cov = CovariateLaw(["a", "b", "c"], [0.5, 0.3, 0.2])
    mu = np.array([[0.0, 1.0], [0.5, 2.5], [1.0, 1.5]])
    sigma2 = np.array([[1.0, 0.25], [0.64, 2.56], [1.44, 0.81]])
    return Scenario(cov, OutcomeModel(mu, sigma2), TreatmentFunctional.ate(3))


def budget_binary() -> Scenario:
    """Two-stratum binary scenario with a treatment-budget constraint.

    Treating a unit costs 1 regardless of stratum; the expected per-unit
    budget is 0.3, which binds (the unconstrained Neyman rule would treat
    more than 30 percent of the population).
    """
    cov = CovariateLaw(["lo", "hi"], [0.6, 0.4])
    mu = np.array([[0.0, 1.0], [0.5, 2.0]])
    sigma2 = np.array([[1.0, 0.64], [1.44, 2.25]])
    r = np.zeros((2, 2, 1))
    r[:, 1, 0] = 1.0  # unit cost charged only to the treated arm
    constraint = ConstraintSpec(r, [0.3])
    return Scenario(cov, OutcomeModel(mu, sigma2), TreatmentFunctional.ate(2), constraint)


PRESETS = {
    "binary_hetero": binary_hetero,
    "budget_binary": budget_binary,
}

"""Budget uncertainty sets on the mean and variance of wind deviations.

Both sets are boxes around the nominal values intersected with a budget on
the total normalized deviation, so maximizing a linear function over either
one is a greedy sort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .gauss import FEAS_TOL, AffineGaussianConstraint, GaussianSpec


@dataclass(frozen=True)
class WindUncertainty:
    """Nominal variances, interval half-widths and budgets, one entry per wind bus.

    The nominal mean is zero. Half-widths of the variance interval may not
    exceed the nominal variance, which keeps every member of the set a
    valid (nonnegative) variance.
    """

    sigma2: np.ndarray
    mu_bar: np.ndarray
    sigma2_bar: np.ndarray
    gamma_mu: float = 0.6
    gamma_sigma: float = 0.6

    def __post_init__(self):
        s2 = np.asarray(self.sigma2, dtype=float)
        mb = np.asarray(self.mu_bar, dtype=float)
        sb = np.asarray(self.sigma2_bar, dtype=float)
        if not (s2.shape == mb.shape == sb.shape) or s2.ndim != 1:
            raise ValueError("sigma2, mu_bar and sigma2_bar must be 1-d arrays of equal length")
        if np.any(s2 < 0):
            raise ValueError("nominal variances must be nonnegative")
        if np.any(mb < 0):
            raise ValueError("mean half-widths must be nonnegative")
        if np.any(sb < 0):
            raise ValueError("variance half-widths must be nonnegative")
        bad = np.flatnonzero(sb > s2 * (1 + 1e-12))
        if bad.size:
            raise ValueError(
                "variance half-width exceeds nominal variance at wind index "
                f"{bad.tolist()}: the set would contain negative variances"
            )
        for name in ("gamma_mu", "gamma_sigma"):
            g = float(getattr(self, name))
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {g}")
            object.__setattr__(self, name, g)
        object.__setattr__(self, "sigma2", s2)
        object.__setattr__(self, "mu_bar", mb)
        object.__setattr__(self, "sigma2_bar", sb)

    @property
    def size(self) -> int:
        return self.sigma2.size

    def nominal(self) -> GaussianSpec:
        return GaussianSpec.zero_mean(self.sigma2)

    def with_gamma(self, gamma_mu: float, gamma_sigma: float | None = None) -> WindUncertainty:
        if gamma_sigma is None:
            gamma_sigma = gamma_mu
        return replace(self, gamma_mu=gamma_mu, gamma_sigma=gamma_sigma)

    def scaled(self, base: float) -> WindUncertainty:
        """Convert MW-based parameters to per-unit on ``base`` MVA."""
        return replace(
            self,
            sigma2=self.sigma2 / base**2,
            mu_bar=self.mu_bar / base,
            sigma2_bar=self.sigma2_bar / base**2,
        )


@dataclass(frozen=True)
class WorstCaseResult:
    point: np.ndarray
    value: float


def _greedy_fractions(benefit: np.ndarray, budget: float) -> np.ndarray:
    """Optimal u in {0 <= u <= 1, sum u <= budget} for max benefit.u, benefit >= 0.

    Ties are broken by position (stable sort); the optimal value does not
    depend on the tie-break, only the certificate does.
    """
    n = benefit.size
    u = np.zeros(n)
    if n == 0 or budget <= 0:
        return u
    order = np.argsort(-benefit, kind="stable")
    full = min(int(math.floor(budget)), n)
    u[order[:full]] = 1.0
    if full < n:
        u[order[full]] = budget - full
    return u


def worst_case_mean(u: WindUncertainty, x: np.ndarray) -> WorstCaseResult:
    """Maximize ``x . mu`` over the budgeted mean set."""
    x = np.asarray(x, dtype=float)
    frac = _greedy_fractions(u.mu_bar * np.abs(x), u.gamma_mu * u.size)
    mu = np.sign(x) * frac * u.mu_bar
    return WorstCaseResult(mu, float(x @ mu))


def worst_case_variance(u: WindUncertainty, q: np.ndarray) -> WorstCaseResult:
    """Maximize ``q . s`` over the budgeted variance set, for weights ``q >= 0``."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("variance weights must be nonnegative")
    frac = _greedy_fractions(u.sigma2_bar * q, u.gamma_sigma * u.size)
    s = u.sigma2 + frac * u.sigma2_bar
    return WorstCaseResult(s, float(q @ s))


def worst_case_scalar_omega(u: WindUncertainty) -> tuple[float, float]:
    """Extremes of the total deviation: (min total mean, max total variance).

    The maximum total mean is the negative of the minimum by symmetry.
    """
    ones = np.ones(u.size)
    min_mean = -worst_case_mean(u, ones).value
    max_var = worst_case_variance(u, ones).value
    return min_mean, max_var


class RobustCheck(NamedTuple):
    feasible: bool
    mean: np.ndarray
    var: np.ndarray
    violation: float

    def spec(self) -> GaussianSpec:
        return GaussianSpec(self.mean, self.var)


def check_robust_feasibility(
    c: AffineGaussianConstraint,
    u: WindUncertainty,
    z: np.ndarray,
    tol: float = FEAS_TOL,
) -> RobustCheck:
    """Evaluate the worst case of a chance constraint over the parameter set.

    Returns the violating ``(mean, var)`` certificate alongside the
    violation (LHS minus bound); ``feasible`` iff violation <= ``tol``.
    """
    x = c.omega_coefficients(z)
    wm = worst_case_mean(u, x)
    wv = worst_case_variance(u, x * x)
    lhs = c.deterministic_value(z) + wm.value + c.quantile * math.sqrt(max(wv.value, 0.0))
    violation = lhs - c.bound
    return RobustCheck(violation <= tol, wm.point, wv.point, violation)

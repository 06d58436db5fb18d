"""Scalar Gaussian machinery for individual linear chance constraints.

A constraint ``P(det.z + xi(z).omega <= b) >= 1 - eps`` with
``omega ~ N(mu, diag(var))`` and ``xi(z)`` affine in the decision vector is
equivalent to the convex inequality

    det.z + mu.xi(z) + q * sqrt(sum_b var_b xi_b(z)^2) <= b,   q = Phi^-1(1 - eps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-6

# Acklam's rational approximation of the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549671010229297e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def norm_cdf(x: float) -> float:
    """Standard normal CDF via erfc (accurate in both tails)."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _lower_quantile(p: float) -> float:
    # p <= 0.5 here
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    # one Halley step on the erfc-based CDF
    e = norm_cdf(x) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def inv_norm_cdf(p: float) -> float:
    """Inverse standard normal CDF for ``0 < p < 1``."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie strictly in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        # 1 - p is exact for p >= 0.5
        return -_lower_quantile(1.0 - p)
    return _lower_quantile(p)


@dataclass(frozen=True)
class GaussianSpec:
    """Independent Gaussian wind deviations: mean and variance per wind bus."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.shape != var.shape or mean.ndim != 1:
            raise ValueError("mean and var must be 1-d arrays of equal length")
        if np.any(var < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @classmethod
    def zero_mean(cls, var) -> GaussianSpec:
        var = np.asarray(var, dtype=float)
        return cls(np.zeros_like(var), var)


@dataclass(frozen=True, eq=False)
class AffineGaussianConstraint:
    """``P(det.z + xi(z).omega <= bound) >= 1 - eps`` on a local slice of ``z``.

    ``var_idx`` lists the decision variables touched; ``det_coef`` and the
    columns of ``omega_coef`` (one row per wind bus) are aligned with it, and
    ``xi(z) = omega_coef @ z[var_idx] + omega_const``. ``scalar_omega`` marks
    constraints whose random part is one sign-definite scalar times the total
    deviation (generator output and ramp limits).
    """

    var_idx: np.ndarray
    det_coef: np.ndarray
    omega_coef: np.ndarray
    omega_const: np.ndarray
    bound: float
    eps: float
    name: str = ""
    family: str = "line"
    scalar_omega: bool = False

    def __post_init__(self):
        if not 0.0 < self.eps < 0.5:
            raise ValueError(f"{self.name}: eps must lie in (0, 0.5), got {self.eps}")
        object.__setattr__(self, "var_idx", np.asarray(self.var_idx, dtype=np.int64))
        object.__setattr__(self, "det_coef", np.asarray(self.det_coef, dtype=float))
        object.__setattr__(self, "omega_coef", np.atleast_2d(np.asarray(self.omega_coef, dtype=float)))
        object.__setattr__(self, "omega_const", np.asarray(self.omega_const, dtype=float))

    @property
    def quantile(self) -> float:
        return inv_norm_cdf(1.0 - self.eps)

    def local(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float)[self.var_idx]

    def omega_coefficients(self, z: np.ndarray) -> np.ndarray:
        return self.omega_coef @ self.local(z) + self.omega_const

    def deterministic_value(self, z: np.ndarray) -> float:
        return float(self.det_coef @ self.local(z))

    def scalar_linear_form(self, kappa: float) -> tuple[np.ndarray, float]:
        """Linear row for a scalar-omega constraint given ``kappa = M + q sqrt(V)``.

        Valid because the omega multiplier has a known sign (it is +/- a
        nonnegative participation factor, or a constant).
        """
        if not self.scalar_omega:
            raise ValueError(f"{self.name} does not have scalar-omega structure")
        coef = self.det_coef + kappa * np.abs(self.omega_coef[0])
        rhs = self.bound - kappa * abs(float(self.omega_const[0]))
        return coef, rhs


@dataclass(frozen=True, eq=False)
class SocCut:
    """Linear inequality ``coef . z[var_idx] <= rhs``."""

    var_idx: np.ndarray
    coef: np.ndarray
    rhs: float
    name: str = ""
    family: str = "line"

    def value(self, z: np.ndarray) -> float:
        return float(self.coef @ np.asarray(z, dtype=float)[self.var_idx] - self.rhs)


def reformulate(c: AffineGaussianConstraint, spec: GaussianSpec, z: np.ndarray):
    """Deterministic-equivalent value (LHS minus bound) and its local gradient.

    The value is <= 0 iff the chance constraint holds under ``spec``. At
    ``xi' Sigma xi = 0`` the square-root term is given the subgradient 0.
    """
    x = c.omega_coefficients(z)
    sx = spec.var * x
    v = math.sqrt(max(float(x @ sx), 0.0))
    q = c.quantile
    value = c.deterministic_value(z) + float(spec.mean @ x) + q * v - c.bound
    grad = c.det_coef + c.omega_coef.T @ spec.mean
    if v > 0.0:
        grad = grad + (q / v) * (c.omega_coef.T @ sx)
    return value, grad


class CutAtFeasiblePointError(ValueError):
    """A linearization was requested where the constraint already holds."""


def soc_cut(
    c: AffineGaussianConstraint, spec: GaussianSpec, z: np.ndarray, tol: float = 0.0
) -> SocCut:
    """First-order outer approximation of the reformulated constraint at ``z``.

    The cut is tight at ``z`` and valid wherever the constraint holds under
    ``spec``. Raises :class:`CutAtFeasiblePointError` unless the value at
    ``z`` exceeds ``tol``.
    """
    value, _ = reformulate(c, spec, z)
    if not value > tol:
        raise CutAtFeasiblePointError(
            f"{c.name}: constraint value {value:.3e} is not violated (tol {tol:.1e})"
        )
    x = c.omega_coefficients(z)
    sx = spec.var * x
    v = math.sqrt(max(float(x @ sx), 0.0))
    coef = c.det_coef + c.omega_coef.T @ spec.mean
    rhs = c.bound - float(spec.mean @ c.omega_const)
    if v > 0.0:
        w = (c.quantile / v) * sx
        coef = coef + c.omega_coef.T @ w
        rhs -= float(w @ c.omega_const)
    return SocCut(c.var_idx, coef, rhs, c.name, c.family)

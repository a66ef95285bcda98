"""Closed-form pDP / DP losses for the Gaussian mechanism and OPS.

The printed formulas are evaluated verbatim; `gaussian_delta_exact` is the
exact hockey-stick divergence between two equal-covariance Gaussians and is
what the printed expressions get certified against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.stats import norm

from perinstance_dp.data_model import DataPoint
from perinstance_dp.errors import ParameterError, SingularMatrixError
from perinstance_dp.ridge_core import RidgeSolution, leverage, residual

# the Gaussian tail step of the OPS bound needs δ < 2/e
OPS_DELTA_LIMIT = 2.0 / math.e


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise ParameterError(f"delta must be in (0, 1), got {delta}")


def gaussian_pdp(delta_A, gamma: float, delta: float):
    """ε = γ Δ_A √log(1.25/δ) for noise covariance A⁻¹/γ; broadcasts over arrays of Δ_A."""
    _check_delta(delta)
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return gamma * np.asarray(delta_A, dtype=float) * math.sqrt(math.log(1.25 / delta)) + 0.0


def gaussian_pdp_classic(delta_A, gamma: float, delta: float):
    """ε = √γ Δ_A √(2 log(1.25/δ)), the standard calibration in Mahalanobis units."""
    _check_delta(delta)
    return math.sqrt(gamma) * np.asarray(delta_A, dtype=float) * math.sqrt(2.0 * math.log(1.25 / delta)) + 0.0


def gaussian_delta_exact(mahalanobis: float, eps: float) -> float:
    """δ(ε) = Φ(m/2 − ε/m) − e^ε Φ(−m/2 − ε/m) between N(0, Σ) and N(μ, Σ) at distance m."""
    if mahalanobis < 0:
        raise ValueError(f"mahalanobis distance must be non-negative, got {mahalanobis}")
    if mahalanobis == 0:
        return 0.0 if eps >= 0 else 1.0 - math.exp(eps)
    m = mahalanobis
    first = norm.cdf(m / 2.0 - eps / m)
    second = math.exp(eps + norm.logcdf(-m / 2.0 - eps / m))
    return float(min(max(first - second, 0.0), 1.0))


def calibrate_gaussian_eps(mahalanobis: float, delta: float) -> float:
    """Smallest ε ≥ 0 with gaussian_delta_exact(m, ε) ≤ δ."""
    _check_delta(delta)
    if gaussian_delta_exact(mahalanobis, 0.0) <= delta:
        return 0.0
    upper = 1.0
    while gaussian_delta_exact(mahalanobis, upper) > delta:
        upper *= 2.0
    return float(optimize.brentq(lambda e: gaussian_delta_exact(mahalanobis, e) - delta, 0.0, upper, xtol=1e-12))


@dataclass(frozen=True)
class GaussianCalibrationRow:
    mahalanobis: float
    gamma: float
    delta_target: float
    eps_printed: float
    delta_actual: float

    @property
    def within_target(self) -> bool:
        return self.delta_actual <= self.delta_target


def gaussian_calibration_table(
        sensitivities: list[float],
        gammas: list[float],
        delta: float
) -> list[GaussianCalibrationRow]:
    """The exact δ reached by the printed γΔ√log(1.25/δ) at each (Δ_A, γ) grid point."""
    rows = []
    for gamma in gammas:
        for delta_A in sensitivities:
            m = math.sqrt(gamma) * delta_A
            eps = float(gaussian_pdp(delta_A, gamma, delta))
            rows.append(GaussianCalibrationRow(m, gamma, delta, eps, gaussian_delta_exact(m, eps)))
    return rows


def gaussian_dp_worst_case(n: int, lam: float, gamma: float, delta: float, a_norm: float = 1.0) -> float:
    """Analytic Gaussian ε at the global sensitivity of ridge output perturbation.

    Over ‖x‖ ≤ 1, |y| ≤ 1: ‖θ̂‖ ≤ √n/(2√λ) and ‖H⁻¹x‖ ≤ 1/λ, so
    Δ_A ≤ √λ_max(A) (1 + √n/(2√λ))/λ.
    """
    if not lam > 0:
        raise ParameterError("worst-case sensitivity is unbounded without regularization (lambda=0)")
    global_sensitivity = math.sqrt(a_norm) * (1.0 + math.sqrt(n) / (2.0 * math.sqrt(lam))) / lam
    return float(gaussian_pdp(global_sensitivity, gamma, delta))


@dataclass(frozen=True)
class OpsPdpBound:
    eps_out: float
    eps_in: float
    eps: float


def _ops_eps_out(mu, r, gamma: float, log_term: float):
    mu = np.asarray(mu, dtype=float)
    r = np.abs(np.asarray(r, dtype=float))
    return (
            0.5 * np.abs(-np.log1p(mu) + gamma * mu / (1.0 + mu) * r ** 2)
            + 0.5 * mu * log_term
            + np.sqrt(gamma * mu * log_term) * r
    )


def _ops_eps_in(mu_prime, r_prime, gamma: float, log_term: float):
    mu_prime = np.asarray(mu_prime, dtype=float)
    r_prime = np.abs(np.asarray(r_prime, dtype=float))
    return (
            0.5 * np.abs(-np.log1p(-mu_prime) - gamma * mu_prime / (1.0 - mu_prime) * r_prime ** 2)
            + 0.5 * mu_prime * log_term
            + np.sqrt(gamma * mu_prime * log_term) * r_prime
    )


def _ops_eps_out_envelope(mu, r, gamma: float, log_term: float):
    """Monotone upper envelope of the out-of-sample expression (|a − b| ≤ max(a, b) for a, b ≥ 0)."""
    return (
            0.5 * np.maximum(np.log1p(mu), gamma * mu / (1.0 + mu) * r ** 2)
            + 0.5 * mu * log_term
            + np.sqrt(gamma * mu * log_term) * r
    )


def _ops_log_term(gamma: float, delta: float) -> float:
    _check_delta(delta)
    if delta >= OPS_DELTA_LIMIT:
        raise ParameterError(f"delta must be below 2/e for the OPS tail bound, got {delta}")
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return math.log(2.0 / delta)


def ops_pdp_from_geometry(mu, r, gamma: float, delta: float) -> tuple:
    """Vectorized (eps_out, eps_in) from out-of-sample leverage μ and residual r = y − xᵀθ̂."""
    log_term = _ops_log_term(gamma, delta)
    mu = np.asarray(mu, dtype=float)
    r = np.asarray(r, dtype=float)
    eps_out = _ops_eps_out(mu, r, gamma, log_term)
    eps_in = _ops_eps_in(mu / (1.0 + mu), r / (1.0 + mu), gamma, log_term)
    return eps_out, eps_in


def ops_pdp_bound(sol_without: RidgeSolution, z: DataPoint, gamma: float, delta: float) -> OpsPdpBound:
    """Both OPS pDP expressions for target z against the fit on Z (z excluded), plus their minimum.

    The two expressions are separately valid upper bounds and are not
    algebraically identical.
    """
    pair = leverage(sol_without, z.x)
    r = residual(sol_without, z)
    eps_out, eps_in = ops_pdp_from_geometry(pair.mu, r, gamma, delta)
    eps_out, eps_in = float(eps_out), float(eps_in)
    return OpsPdpBound(eps_out=eps_out, eps_in=eps_in, eps=min(eps_out, eps_in))


def ops_pdp_agnostic(lam: float, lambda_min: float, gamma: float, delta: float, residual_value: float) -> float:
    """Agnostic-setting pDP of OPS for a target with residual y − xᵀθ̂, ‖x‖ ≤ 1."""
    log_term = _ops_log_term(gamma, delta)
    strength = lam + lambda_min
    if not strength > 0:
        raise SingularMatrixError("lambda + lambda_min must be positive", lambda_min)
    r = abs(residual_value)
    return (
            math.sqrt(gamma * log_term / strength) * r
            + gamma * r ** 2 / (2.0 * max(strength, 1.0))
            + gamma * (1.0 + log_term) / (2.0 * strength)
    )


def ops_dp_agnostic(n: int, lam: float, gamma: float, delta: float) -> float:
    """Worst-case (ε, δ)-DP of OPS over ‖x‖ ≤ 1, |y| ≤ 1."""
    log_term = _ops_log_term(gamma, delta)
    if not lam > 0:
        raise ParameterError("agnostic DP requires lambda > 0")
    return (
            math.sqrt(2.0 * (n + lam) * gamma * log_term / lam ** 2)
            + 2.0 * (n + lam) * gamma / (lam * max(1.0, lam))
            + gamma * (1.0 + log_term) / (2.0 * lam)
    )

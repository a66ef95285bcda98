"""Exact ridge / least-squares solves, leverage scores and rank-1 updates.

H = XᵀX + λI is kept explicitly together with its Cholesky factor; at desk
scale (d up to a few hundred) refactorizing after a rank-1 change is cheap and
keeps every downstream solve exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from perinstance_dp.data_model import DataPoint, Dataset, Direction
from perinstance_dp.errors import DimensionError, SingularMatrixError

logger = logging.getLogger(__name__)

# smallest Cholesky pivot allowed, relative to trace(H)/d
PIVOT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class RidgeSolution:
    theta_hat: np.ndarray
    H: np.ndarray
    g: np.ndarray
    lam: float
    n: int
    factorization: tuple[np.ndarray, bool]

    @property
    def d(self) -> int:
        return self.theta_hat.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.factorization, rhs)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.d))


@dataclass(frozen=True)
class LeveragePair:
    mu: float
    mu_prime: float


def factorize_spd(matrix: np.ndarray, what: str = "matrix") -> tuple[np.ndarray, bool]:
    """Lower Cholesky factor with the positive-definiteness guard applied."""
    matrix = np.asarray(matrix, dtype=float)
    d = matrix.shape[0]
    if matrix.shape != (d, d) or d == 0:
        raise DimensionError(f"{what} must be a non-empty square matrix, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise ValueError(f"{what} is not symmetric")

    scale = np.trace(matrix) / d
    try:
        factor = linalg.cho_factor(matrix, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise SingularMatrixError(f"{what} is not positive definite", _smallest_eigenvalue(matrix)) from None

    pivots = np.diag(factor[0]) ** 2
    if scale <= 0 or pivots.min() < PIVOT_TOLERANCE * scale:
        raise SingularMatrixError(f"{what} is numerically singular", _smallest_eigenvalue(matrix))
    return factor


def _smallest_eigenvalue(matrix: np.ndarray) -> float:
    return float(linalg.eigvalsh(matrix, subset_by_index=[0, 0])[0])


def _solution(H: np.ndarray, g: np.ndarray, lam: float, n: int) -> RidgeSolution:
    factor = factorize_spd(H, "regularized gram matrix")
    theta_hat = linalg.cho_solve(factor, g)
    for array in (theta_hat, H, g):
        array.setflags(write=False)
    return RidgeSolution(theta_hat=theta_hat, H=H, g=g, lam=float(lam), n=n, factorization=factor)


def fit_ridge(ds: Dataset, lam: float) -> RidgeSolution:
    """θ̂ = (XᵀX + λI)⁻¹ Xᵀy."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    H = ds.X.T @ ds.X + lam * np.eye(ds.d)
    g = ds.X.T @ ds.y
    return _solution(H, g, lam, ds.n)


def _check_dimension(sol: RidgeSolution, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (sol.d,):
        raise DimensionError(f"vector has shape {x.shape}, expected ({sol.d},)")
    return x


def leverage(sol: RidgeSolution, x: np.ndarray) -> LeveragePair:
    """μ = xᵀH⁻¹x and μ′ = xᵀ(H + xxᵀ)⁻¹x = μ/(1+μ)."""
    x = _check_dimension(sol, x)
    mu = max(float(x @ sol.solve(x)), 0.0)
    return LeveragePair(mu=mu, mu_prime=mu / (1.0 + mu))


def residual(sol: RidgeSolution, z: DataPoint) -> float:
    x = _check_dimension(sol, z.x)
    return float(z.y - x @ sol.theta_hat)


def rank_one_update(sol: RidgeSolution, z: DataPoint, direction: Direction | str) -> RidgeSolution:
    """Ridge solution on [Z, z] (ADD) or Z without z (REMOVE)."""
    direction = Direction(direction)
    x = _check_dimension(sol, z.x)
    sign = 1.0 if direction == Direction.ADD else -1.0
    H = sol.H + sign * np.outer(x, x)
    g = sol.g + sign * z.y * x
    # keep exact symmetry after the update
    H = 0.5 * (H + H.T)
    return _solution(H, g, sol.lam, sol.n + int(sign))


def log_det(sol: RidgeSolution) -> float:
    return float(2.0 * np.sum(np.log(np.diag(sol.factorization[0]))))


def min_eigenvalue(ds: Dataset) -> float:
    """λ_min(XᵀX) from a full symmetric eigendecomposition; 0 for an empty data set."""
    if ds.n == 0:
        return 0.0
    eigenvalues = linalg.eigvalsh(ds.X.T @ ds.X)
    return max(float(eigenvalues[0]), 0.0)

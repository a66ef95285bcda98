"""Per-instance sensitivities ‖θ̂(Z) − θ̂([Z, z])‖_A for ridge regression and smooth ERM."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.linalg import cho_solve
from scipy.special import expit

from perinstance_dp.data_model import DataPoint, Dataset, Direction, adjacent
from perinstance_dp.errors import ConvergenceError, DimensionError, SingularMatrixError
from perinstance_dp.ridge_core import RidgeSolution, factorize_spd, fit_ridge, leverage, rank_one_update, residual
from perinstance_dp.seeding import make_rng

logger = logging.getLogger(__name__)

GRADIENT_CHECK_RTOL = 1e-5


def a_norm(v: np.ndarray, A: np.ndarray | None) -> float:
    if A is None:
        return float(np.linalg.norm(v))
    return float(np.sqrt(max(v @ A @ v, 0.0)))


@dataclass(frozen=True)
class LinregSensitivityForms:
    out_of_sample: float
    in_sample: float
    refit: float


def sensitivity_linreg(sol: RidgeSolution, z: DataPoint, A: np.ndarray | None = None) -> float:
    """Δ_A(Z, z) = |y − xᵀθ̂′| √(xᵀH⁻¹AH⁻¹x), with sol fitted on Z (z not included)."""
    v = sol.solve(z.x)
    deflated = residual(sol, z) / (1.0 + leverage(sol, z.x).mu)
    return abs(deflated) * a_norm(v, A)


def sensitivity_linreg_forms(sol: RidgeSolution, z: DataPoint, A: np.ndarray | None = None) -> LinregSensitivityForms:
    """Both closed forms and the direct refit difference, for cross-checking."""
    sol_with = rank_one_update(sol, z, Direction.ADD)
    in_sample = abs(residual(sol, z)) * a_norm(sol_with.solve(z.x), A)
    return LinregSensitivityForms(
        out_of_sample=sensitivity_linreg(sol, z, A),
        in_sample=in_sample,
        refit=a_norm(sol_with.theta_hat - sol.theta_hat, A)
    )


@dataclass(frozen=True)
class SmoothProblem:
    """Regularized ERM Σᵢ ℓ(θ, zᵢ) + r(θ) given through value, gradient and Hessian callables.

    Loss callables take (theta, x, y); regularizer callables take theta.
    """

    loss: Callable[[np.ndarray, np.ndarray, float], float]
    loss_grad: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    loss_hess: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    reg: Callable[[np.ndarray], float]
    reg_grad: Callable[[np.ndarray], np.ndarray]
    reg_hess: Callable[[np.ndarray], np.ndarray]
    tol: float = 1e-12
    max_iter: int = 200

    def objective(self, theta: np.ndarray, ds: Dataset) -> float:
        return sum(self.loss(theta, x, y) for x, y in zip(ds.X, ds.y)) + self.reg(theta)

    def gradient(self, theta: np.ndarray, ds: Dataset) -> np.ndarray:
        total = np.array(self.reg_grad(theta), dtype=float)
        for x, y in zip(ds.X, ds.y):
            total += self.loss_grad(theta, x, y)
        return total

    def hessian(self, theta: np.ndarray, ds: Dataset) -> np.ndarray:
        total = np.array(self.reg_hess(theta), dtype=float)
        for x, y in zip(ds.X, ds.y):
            total += self.loss_hess(theta, x, y)
        return total


def squared_loss_problem(lam: float) -> SmoothProblem:
    """ℓ = (y − xᵀθ)²/2 and r = λ‖θ‖²/2, whose minimizer is the ridge solution of fit_ridge."""
    return SmoothProblem(
        loss=lambda theta, x, y: 0.5 * (y - x @ theta) ** 2,
        loss_grad=lambda theta, x, y: -(y - x @ theta) * x,
        loss_hess=lambda theta, x, y: np.outer(x, x),
        reg=lambda theta: 0.5 * lam * theta @ theta,
        reg_grad=lambda theta: lam * theta,
        reg_hess=lambda theta: lam * np.eye(theta.shape[0]),
    )


def logistic_loss_problem(lam: float) -> SmoothProblem:
    """ℓ = log(1 + exp(−y xᵀθ)) for labels y ∈ {−1, +1}, r = λ‖θ‖²/2."""

    def loss(theta, x, y):
        return float(np.logaddexp(0.0, -y * (x @ theta)))

    def loss_grad(theta, x, y):
        return -y * expit(-y * (x @ theta)) * x

    def loss_hess(theta, x, y):
        p = expit(x @ theta)
        return p * (1.0 - p) * np.outer(x, x)

    return SmoothProblem(
        loss=loss,
        loss_grad=loss_grad,
        loss_hess=loss_hess,
        reg=lambda theta: 0.5 * lam * theta @ theta,
        reg_grad=lambda theta: lam * theta,
        reg_hess=lambda theta: lam * np.eye(theta.shape[0]),
    )


def validate_problem(problem: SmoothProblem, ds: Dataset, seed: int = 0) -> SmoothProblem:
    """Check gradients and Hessians against finite differences of the supplied values."""
    if ds.n == 0:
        raise ValueError("validation needs at least one data point")
    rng = make_rng(seed)
    check_points = [np.zeros(ds.d), 0.5 * rng.standard_normal(ds.d)]
    for theta in check_points:
        for x, y in list(zip(ds.X, ds.y))[:5]:
            _check_gradient(
                lambda t: problem.loss(t, x, y),
                lambda t: problem.loss_grad(t, x, y),
                theta,
                "loss gradient"
            )
            for j in range(ds.d):
                _check_gradient(
                    lambda t: problem.loss_grad(t, x, y)[j],
                    lambda t: problem.loss_hess(t, x, y)[j],
                    theta,
                    "loss hessian"
                )
        _check_gradient(problem.reg, problem.reg_grad, theta, "regularizer gradient")
    return problem


def _check_gradient(func, grad, theta: np.ndarray, what: str):
    error = optimize.check_grad(func, grad, theta, epsilon=1e-7)
    scale = max(float(np.linalg.norm(grad(theta))), 1.0)
    if error > GRADIENT_CHECK_RTOL * scale:
        raise ValueError(f"{what} disagrees with finite differences (error {error:.3g})")


def solve_erm(problem: SmoothProblem, ds: Dataset, theta0: np.ndarray | None = None) -> np.ndarray:
    """Stationary point of the regularized empirical risk (trust-region Newton)."""
    start = np.zeros(ds.d) if theta0 is None else np.asarray(theta0, dtype=float)
    result = optimize.minimize(
        problem.objective,
        start,
        args=(ds,),
        jac=problem.gradient,
        hess=problem.hessian,
        method="trust-exact",
        options={"gtol": problem.tol, "maxiter": problem.max_iter},
    )
    grad_norm = np.linalg.norm(problem.gradient(result.x, ds))
    if grad_norm > max(problem.tol, 1e-9) * max(1.0, ds.n):
        raise ConvergenceError(
            f"erm solve did not converge: gradient norm {grad_norm:.3g} after {result.nit} iterations ({result.message})"
        )
    return result.x


def sensitivity_smooth_exact(
        problem: SmoothProblem,
        Z: Dataset,
        z: DataPoint,
        A: np.ndarray | None = None
) -> float:
    """‖θ̂(Z) − θ̂([Z, z])‖_A from two independent solves."""
    theta_without = solve_erm(problem, Z)
    theta_with = solve_erm(problem, adjacent(Z, z, Direction.ADD), theta_without)
    return a_norm(theta_without - theta_with, A)


def sensitivity_smooth_quasinewton(
        problem: SmoothProblem,
        Z: Dataset,
        z: DataPoint,
        quadrature_nodes: int,
        A: np.ndarray | None = None
) -> float:
    """θ̂ − θ̂′ = [∫₀¹ ∇²F_[Z,z](η_t) dt]⁻¹ ∇ℓ(θ̂, z), η_t = tθ̂ + (1 − t)θ̂′.

    The integral is evaluated with Gauss-Legendre quadrature on [0, 1].
    """
    if quadrature_nodes < 1:
        raise ValueError(f"quadrature_nodes must be positive, got {quadrature_nodes}")
    if z.d != Z.d:
        raise DimensionError(f"point has dimension {z.d}, data set has {Z.d}")

    Z_with = adjacent(Z, z, Direction.ADD)
    theta_hat = solve_erm(problem, Z)
    theta_hat_prime = solve_erm(problem, Z_with, theta_hat)

    nodes, weights = np.polynomial.legendre.leggauss(quadrature_nodes)
    ts = 0.5 * (nodes + 1.0)
    integrated = np.zeros((Z.d, Z.d))
    for t, w in zip(ts, 0.5 * weights):
        eta = t * theta_hat + (1.0 - t) * theta_hat_prime
        integrated += w * problem.hessian(eta, Z_with)
    integrated = 0.5 * (integrated + integrated.T)

    try:
        factor = factorize_spd(integrated, "integrated hessian")
    except SingularMatrixError:
        logger.exception("Integrated Hessian is singular for %d quadrature nodes", quadrature_nodes)
        raise
    step = cho_solve(factor, problem.loss_grad(theta_hat, z.x, z.y))
    return a_norm(step, A)


def sensitivity_linreg_refit(Z: Dataset, z: DataPoint, lam: float, A: np.ndarray | None = None) -> float:
    """Δ_A from two independent ridge fits; the reference the closed forms are checked against."""
    return a_norm(fit_ridge(adjacent(Z, z, Direction.ADD), lam).theta_hat - fit_ridge(Z, lam).theta_hat, A)

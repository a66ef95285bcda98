"""pDP of a data set (leave-one-out losses of every row) and pDP for all targets."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from perinstance_dp.accounting.bounds import (
    _ops_eps_out_envelope,
    _ops_log_term,
    gaussian_pdp,
    ops_pdp_bound,
    ops_pdp_from_geometry,
)
from perinstance_dp.accounting.sensitivity import sensitivity_linreg
from perinstance_dp.data_model import Dataset, Direction
from perinstance_dp.errors import UnsupportedMechanismError
from perinstance_dp.mechanisms import GAUSSIAN_DESIGNS, MechanismKind, MechanismSpec
from perinstance_dp.ridge_core import RidgeSolution, fit_ridge, leverage, rank_one_update, residual
from perinstance_dp.seeding import make_rng

logger = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
REFINEMENT_ITERATIONS = 50


@dataclass(frozen=True)
class PdpPointReport:
    index: int | str
    mu: float
    mu_prime: float
    residual: float
    eps: float
    bound_used: str
    sensitivity: float | None = None


@dataclass(frozen=True)
class PdpDatasetReport:
    delta: float
    points: list[PdpPointReport]
    moments: np.ndarray
    quantiles: tuple[float, float, float, float, float]

    @property
    def eps(self) -> np.ndarray:
        return np.array([p.eps for p in self.points])

    @property
    def median(self) -> float:
        return self.quantiles[2]


def _check_supported(spec: MechanismSpec):
    if spec.mechanism not in GAUSSIAN_DESIGNS and spec.mechanism != MechanismKind.OPS:
        raise UnsupportedMechanismError(
            f"pDP accounting covers output perturbation designs and ops, not {spec.mechanism}"
        )


def eps_moments(eps: np.ndarray, k: int) -> np.ndarray:
    """(E ε, E ε², ..., E ε^k) under the uniform distribution on the given values."""
    if k < 1:
        raise ValueError(f"moment order must be at least 1, got {k}")
    eps = np.asarray(eps, dtype=float)
    if eps.size == 0:
        return np.full(k, np.nan)
    return np.array([np.mean(eps ** j) for j in range(1, k + 1)])


def pdp_dataset_report(ds: Dataset, spec: MechanismSpec, delta: float, k: int = 2) -> PdpDatasetReport:
    """ε((Z₋ᵢ, zᵢ)) for every row, using the in-sample expression of each mechanism."""
    _check_supported(spec)
    full = fit_ridge(ds, spec.lam)
    A = full_design_matrix(full, spec)

    points = []
    for i, z in enumerate(ds):
        sol_without = rank_one_update(full, z, Direction.REMOVE)
        pair = leverage(sol_without, z.x)
        r = residual(sol_without, z)
        sensitivity = None
        if A is None:
            eps = ops_pdp_bound(sol_without, z, spec.gamma, delta).eps_in
            bound_used = "ops-in-sample"
        else:
            sensitivity = sensitivity_linreg(sol_without, z, A)
            eps = float(gaussian_pdp(sensitivity, spec.gamma, delta))
            bound_used = "gaussian-analytic"
        points.append(PdpPointReport(i, pair.mu, pair.mu_prime, r, eps, bound_used, sensitivity))

    eps_values = np.array([p.eps for p in points])
    quantiles = tuple(float(q) for q in np.quantile(eps_values, QUANTILE_LEVELS)) if points else (math.nan,) * 5
    logger.info("pDP report for %s over %d rows at delta=%g", spec.mechanism, ds.n, delta)
    return PdpDatasetReport(delta=delta, points=points, moments=eps_moments(eps_values, k), quantiles=quantiles)


def full_design_matrix(sol: RidgeSolution, spec: MechanismSpec) -> np.ndarray | None:
    """A realized from the full-data fit (held fixed for every target); None for ops."""
    if spec.mechanism == MechanismKind.OPS:
        return None
    return spec.noise_design().realize(sol)


@dataclass(frozen=True)
class PdpForAll:
    sup_estimate: float
    analytic_upper: float
    argmax_x: np.ndarray
    argmax_y: float


def pdp_for_all(
        sol: RidgeSolution,
        spec: MechanismSpec,
        delta: float,
        search_budget: int,
        seed: int
) -> PdpForAll:
    """sup of ε(Z, z) over ‖x‖ ≤ 1, |y| ≤ 1: random search with coordinate refinement, and its envelope.

    Each candidate is refined independently, so the estimate is a maximum over
    a prefix-stable candidate sequence and never decreases with the budget.
    """
    _check_supported(spec)
    if search_budget < 1:
        raise ValueError(f"search_budget must be positive, got {search_budget}")
    evaluate = _target_evaluator(sol, spec, delta)

    rng = make_rng(seed)
    xs = np.empty((search_budget, sol.d))
    ys = np.empty(search_budget)
    for i in range(search_budget):
        direction = rng.standard_normal(sol.d)
        radius = rng.uniform() ** (1.0 / sol.d)
        xs[i] = radius * direction / max(np.linalg.norm(direction), 1e-300)
        ys[i] = rng.uniform(-1.0, 1.0)

    xs, ys, values = _coordinate_refine(evaluate, xs, ys)
    best = int(np.argmax(values))
    upper = _analytic_upper(sol, spec, delta)
    return PdpForAll(
        sup_estimate=float(values[best]),
        analytic_upper=upper,
        argmax_x=xs[best],
        argmax_y=float(ys[best])
    )


def _target_evaluator(sol: RidgeSolution, spec: MechanismSpec, delta: float):
    """Vectorized ε for out-of-sample targets (rows of xs, entries of ys)."""
    A = full_design_matrix(sol, spec)
    H_inv = sol.inverse()

    if A is None:
        _ops_log_term(spec.gamma, delta)

        def evaluate(xs, ys):
            mu = np.einsum("ij,jk,ik->i", xs, H_inv, xs)
            eps_out, eps_in = ops_pdp_from_geometry(mu, ys - xs @ sol.theta_hat, spec.gamma, delta)
            return np.minimum(eps_out, eps_in)

        return evaluate

    M = H_inv @ A @ H_inv

    def evaluate(xs, ys):
        mu = np.einsum("ij,jk,ik->i", xs, H_inv, xs)
        deflated = (ys - xs @ sol.theta_hat) / (1.0 + mu)
        quad = np.maximum(np.einsum("ij,jk,ik->i", xs, M, xs), 0.0)
        return gaussian_pdp(np.abs(deflated) * np.sqrt(quad), spec.gamma, delta)

    return evaluate


def _project(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(xs, axis=1, keepdims=True)
    return xs / np.maximum(norms, 1.0), np.clip(ys, -1.0, 1.0)


def _coordinate_refine(evaluate, xs: np.ndarray, ys: np.ndarray):
    values = evaluate(xs, ys)
    steps = np.full(xs.shape[0], 0.25)
    d = xs.shape[1]
    for _ in range(REFINEMENT_ITERATIONS):
        improved = np.zeros(xs.shape[0], dtype=bool)
        for coordinate in range(d + 1):
            for sign in (1.0, -1.0):
                trial_x, trial_y = xs.copy(), ys.copy()
                if coordinate < d:
                    trial_x[:, coordinate] += sign * steps
                else:
                    trial_y += sign * steps
                trial_x, trial_y = _project(trial_x, trial_y)
                trial_values = evaluate(trial_x, trial_y)
                better = trial_values > values
                xs[better], ys[better], values[better] = trial_x[better], trial_y[better], trial_values[better]
                improved |= better
        steps = np.where(improved, steps, 0.5 * steps)
    return xs, ys, values


def _analytic_upper(sol: RidgeSolution, spec: MechanismSpec, delta: float) -> float:
    """ε at residual bound 1 + ‖θ̂‖ and the largest eigenvalue of the relevant quadratic form."""
    residual_bound = 1.0 + float(np.linalg.norm(sol.theta_hat))
    H_inv = sol.inverse()
    A = full_design_matrix(sol, spec)
    if A is None:
        mu_bound = float(linalg.eigvalsh(H_inv)[-1])
        log_term = _ops_log_term(spec.gamma, delta)
        return float(_ops_eps_out_envelope(mu_bound, residual_bound, spec.gamma, log_term))
    quad_bound = max(float(linalg.eigvalsh(H_inv @ A @ H_inv)[-1]), 0.0)
    return float(gaussian_pdp(residual_bound * math.sqrt(quad_bound), spec.gamma, delta))


def write_report_csv(report: PdpDatasetReport, path: Path | str) -> Path:
    """One row per data point, then a "#" trailer with moments and quantiles."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "mu", "mu_prime", "residual", "eps"])
        for p in report.points:
            writer.writerow([p.index, *(format(v, ".17g") for v in (p.mu, p.mu_prime, p.residual, p.eps))])
        moments = ", ".join(f"moment{j}={m:.17g}" for j, m in enumerate(report.moments, start=1))
        quantiles = ", ".join(
            f"q{int(level * 100)}={q:.17g}" for level, q in zip(QUANTILE_LEVELS, report.quantiles)
        )
        fh.write(f"# {moments}, {quantiles}\n")
    return path

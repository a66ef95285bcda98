"""Randomized release mechanisms for ridge regression.

Every mechanism here releases a draw from a multivariate normal, so each one is
built as a `GaussianRelease` (mean plus the Cholesky factor of its precision)
and then sampled. Monte-Carlo code samples the very same object many times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from scipy import linalg

from perinstance_dp.data_model import Dataset
from perinstance_dp.errors import ParameterError, UnsupportedMechanismError
from perinstance_dp.ridge_core import RidgeSolution, factorize_spd, fit_ridge, min_eigenvalue
from perinstance_dp.seeding import derive_seeds, make_rng

logger = logging.getLogger(__name__)


class NoiseDesignKind(StrEnum):
    ISOTROPIC = "isotropic"
    DEMOCRATIC = "democratic"
    FISHER = "fisher"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class NoiseDesign:
    """Choice of the matrix A in θ̃ ~ N(θ̂, A⁻¹/γ), realized against H = XᵀX + λI."""

    kind: NoiseDesignKind
    scale: float | None = None
    matrix: np.ndarray | None = None

    @classmethod
    def isotropic(cls, scale: float | None = None) -> "NoiseDesign":
        return cls(NoiseDesignKind.ISOTROPIC, scale=scale)

    @classmethod
    def democratic(cls) -> "NoiseDesign":
        return cls(NoiseDesignKind.DEMOCRATIC)

    @classmethod
    def fisher(cls) -> "NoiseDesign":
        return cls(NoiseDesignKind.FISHER)

    @classmethod
    def explicit(cls, matrix: np.ndarray) -> "NoiseDesign":
        return cls(NoiseDesignKind.EXPLICIT, matrix=np.asarray(matrix, dtype=float))

    def realize(self, sol: RidgeSolution) -> np.ndarray:
        kind = NoiseDesignKind(self.kind)
        if kind == NoiseDesignKind.FISHER:
            A = np.array(sol.H)
        elif kind == NoiseDesignKind.DEMOCRATIC:
            A = sol.H @ sol.H
        elif kind == NoiseDesignKind.ISOTROPIC:
            scale = self.scale if self.scale is not None else float(linalg.eigvalsh(sol.H)[0])
            A = scale * np.eye(sol.d)
        else:
            if self.matrix is None:
                raise ValueError("explicit noise design requires a matrix")
            A = np.array(self.matrix, dtype=float)
        A = 0.5 * (A + A.T)
        # raises for a non-SPD A
        factorize_spd(A, f"{kind} noise design")
        return A


class MechanismKind(StrEnum):
    GAUSS_ISO = "gauss-iso"
    GAUSS_DEMOCRATIC = "gauss-democratic"
    GAUSS_FISHER = "gauss-fisher"
    OPS = "ops"
    OBJPERT = "objpert"
    ADAOPS = "adaops"


GAUSSIAN_DESIGNS = {
    MechanismKind.GAUSS_ISO: NoiseDesign.isotropic,
    MechanismKind.GAUSS_DEMOCRATIC: NoiseDesign.democratic,
    MechanismKind.GAUSS_FISHER: NoiseDesign.fisher,
}


@dataclass(frozen=True)
class MechanismSpec:
    mechanism: MechanismKind
    lam: float = 0.0
    gamma: float = 1.0
    sigma: float = 1.0
    eps_budget: float = 1.0
    delta: float = 1e-6
    kappa: float = 10.0
    seed: int = 0
    iso_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mechanism", MechanismKind(self.mechanism))

    def noise_design(self) -> NoiseDesign:
        if self.mechanism not in GAUSSIAN_DESIGNS:
            raise UnsupportedMechanismError(f"{self.mechanism} is not an output-perturbation design")
        if self.mechanism == MechanismKind.GAUSS_ISO:
            return NoiseDesign.isotropic(self.iso_scale)
        return GAUSSIAN_DESIGNS[self.mechanism]()


@dataclass(frozen=True)
class AdaOpsDiagnostics:
    lambda_min: float
    lambda_min_noisy: float
    lambda_n: float
    gamma_n: float


@dataclass(frozen=True)
class MechanismSample:
    theta_tilde: np.ndarray
    spec: MechanismSpec
    diagnostics: AdaOpsDiagnostics | None = None


@dataclass(frozen=True)
class GaussianRelease:
    """N(mean, (γ·P)⁻¹) where P = R Rᵀ is held through its lower Cholesky factor R."""

    mean: np.ndarray
    precision_factor: np.ndarray
    gamma: float

    @classmethod
    def from_precision(cls, mean: np.ndarray, precision: np.ndarray, gamma: float) -> "GaussianRelease":
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        factor, _ = factorize_spd(precision, "noise precision")
        return cls(np.asarray(mean, dtype=float), np.tril(factor), float(gamma))

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draws θ = mean + R⁻ᵀξ/√γ, so Cov θ = (R Rᵀ)⁻¹/γ."""
        count = 1 if size is None else size
        xi = rng.standard_normal((self.d, count))
        noise = linalg.solve_triangular(self.precision_factor, xi, lower=True, trans="T")
        draws = self.mean[None, :] + noise.T / math.sqrt(self.gamma)
        return draws[0] if size is None else draws

    def covariance(self) -> np.ndarray:
        inv_factor = linalg.solve_triangular(self.precision_factor, np.eye(self.d), lower=True)
        return inv_factor.T @ inv_factor / self.gamma


def output_perturb_release(sol: RidgeSolution, design: NoiseDesign, gamma: float) -> GaussianRelease:
    return GaussianRelease.from_precision(sol.theta_hat, design.realize(sol), gamma)


def ops_release(sol: RidgeSolution, gamma: float) -> GaussianRelease:
    """Posterior p(θ|X,y) ∝ exp(-γ/2 (‖y − Xθ‖² + λ‖θ‖²)) = N(θ̂, (γH)⁻¹)."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return GaussianRelease(np.array(sol.theta_hat), np.tril(sol.factorization[0]), float(gamma))


def objpert_release(sol: RidgeSolution, sigma: float) -> GaussianRelease:
    """Law of H⁻¹(g − b/2), b ~ N(0, σ²I): the output perturbation with A = H², γ = 4/σ²."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive for a non-degenerate release, got {sigma}")
    return GaussianRelease.from_precision(sol.theta_hat, sol.H @ sol.H, 4.0 / sigma ** 2)


def output_perturb(sol: RidgeSolution, design: NoiseDesign, gamma: float, seed: int) -> MechanismSample:
    release = output_perturb_release(sol, design, gamma)
    spec = MechanismSpec(
        mechanism=_design_mechanism(design),
        lam=sol.lam,
        gamma=gamma,
        seed=seed,
        iso_scale=design.scale
    )
    return MechanismSample(theta_tilde=release.sample(make_rng(seed)), spec=spec)


def _design_mechanism(design: NoiseDesign) -> MechanismKind:
    return {
        NoiseDesignKind.ISOTROPIC: MechanismKind.GAUSS_ISO,
        NoiseDesignKind.DEMOCRATIC: MechanismKind.GAUSS_DEMOCRATIC,
        NoiseDesignKind.FISHER: MechanismKind.GAUSS_FISHER,
        # an explicit A is reported under the isotropic id with its own scale
        NoiseDesignKind.EXPLICIT: MechanismKind.GAUSS_ISO,
    }[NoiseDesignKind(design.kind)]


def ops_sample(ds: Dataset, lam: float, gamma: float, seed: int) -> MechanismSample:
    sol = fit_ridge(ds, lam)
    theta_tilde = ops_release(sol, gamma).sample(make_rng(seed))
    spec = MechanismSpec(mechanism=MechanismKind.OPS, lam=lam, gamma=gamma, seed=seed)
    return MechanismSample(theta_tilde=theta_tilde, spec=spec)


def objpert_sample(ds: Dataset, sigma: float, lam: float, seed: int) -> MechanismSample:
    """θ̃ = argmin ‖y − Xθ‖² + λ‖θ‖² + ⟨b, θ⟩ = H⁻¹(Xᵀy − b/2), b ~ N(0, σ²I)."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    sol = fit_ridge(ds, lam)
    b = sigma * make_rng(seed).standard_normal(sol.d)
    theta_tilde = sol.solve(sol.g - 0.5 * b)
    spec = MechanismSpec(mechanism=MechanismKind.OBJPERT, lam=lam, sigma=sigma, seed=seed)
    return MechanismSample(theta_tilde=theta_tilde, spec=spec)


def adaops_kappa_bound(n: int, d: int, eps: float, delta: float) -> float:
    return n * eps / (4.0 * d * (1.0 + math.log(4.0 / delta)))


def adaops_parameters(n: int, d: int, eps: float, delta: float, kappa: float, lambda_min_noisy: float) -> tuple[float, float]:
    """(λ_n, γ_n) for a released λ̃_min.

    λ_n = max{0, n/(dκ) − λ̃_min + log(4/δ)/(ε/2)}; the max keeps
    λ_min(XᵀX + λ_n I) ≥ n/(dκ) on the high-probability event.
    """
    log_term = math.log(4.0 / delta)
    lambda_n = max(0.0, n / (d * kappa) - lambda_min_noisy + log_term / (eps / 2.0))
    gamma_n = min(
        n * eps ** 2 / (16.0 * kappa ** 2 * d ** 2 * log_term),
        n * eps / (8.0 * kappa ** 2 * d ** 2)
    )
    return lambda_n, gamma_n


def _check_adaops_inputs(n: int, d: int, eps: float, delta: float, kappa: float):
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must be in (0, 1), got {delta}")
    bound = adaops_kappa_bound(n, d, eps, delta)
    if not 0 < kappa <= bound:
        raise ParameterError(
            f"kappa={kappa} violates 0 < kappa <= n*eps/(4d(1+log(4/delta))) = {bound:.6g}"
        )


def adaops(ds: Dataset, eps: float, delta: float, kappa: float, seed: int) -> MechanismSample:
    """One posterior sample with a privately chosen ridge penalty.

    Sub-seed 0 drives the λ_min release, sub-seed 1 the posterior draw.
    """
    n, d = ds.n, ds.d
    _check_adaops_inputs(n, d, eps, delta, kappa)
    eig_seed, ops_seed = derive_seeds(seed, 2)

    lambda_min = min_eigenvalue(ds)
    noise_scale = math.sqrt(math.log(4.0 / delta)) / (eps / 2.0)
    lambda_min_noisy = lambda_min + noise_scale * float(make_rng(eig_seed).standard_normal())
    lambda_n, gamma_n = adaops_parameters(n, d, eps, delta, kappa, lambda_min_noisy)

    logger.debug(
        "AdaOPS released lambda_min=%.6g lambda_n=%.6g gamma_n=%.6g",
        lambda_min_noisy,
        lambda_n,
        gamma_n
    )
    posterior = ops_sample(ds, lambda_n, gamma_n, ops_seed)
    spec = MechanismSpec(
        mechanism=MechanismKind.ADAOPS,
        lam=lambda_n,
        gamma=gamma_n,
        eps_budget=eps,
        delta=delta,
        kappa=kappa,
        seed=seed
    )
    diagnostics = AdaOpsDiagnostics(
        lambda_min=lambda_min,
        lambda_min_noisy=lambda_min_noisy,
        lambda_n=lambda_n,
        gamma_n=gamma_n
    )
    return MechanismSample(theta_tilde=posterior.theta_tilde, spec=spec, diagnostics=diagnostics)


def run_mechanism(ds: Dataset, spec: MechanismSpec) -> MechanismSample:
    if spec.mechanism in GAUSSIAN_DESIGNS:
        sample = output_perturb(fit_ridge(ds, spec.lam), spec.noise_design(), spec.gamma, spec.seed)
        return MechanismSample(theta_tilde=sample.theta_tilde, spec=spec)
    if spec.mechanism == MechanismKind.OPS:
        return ops_sample(ds, spec.lam, spec.gamma, spec.seed)
    if spec.mechanism == MechanismKind.OBJPERT:
        return objpert_sample(ds, spec.sigma, spec.lam, spec.seed)
    return adaops(ds, spec.eps_budget, spec.delta, spec.kappa, spec.seed)

"""Generalization bounds implied by moments of pDP losses, and Monte-Carlo gap oracles.

Expectations are plug-in means over the supplied samples. Losses used for the
measured gaps are clipped to [0, loss_cap] because the bounds assume a loss in
[0, 1].
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from perinstance_dp.accounting.bounds import gaussian_pdp, ops_pdp_bound
from perinstance_dp.accounting.report import full_design_matrix
from perinstance_dp.accounting.sensitivity import sensitivity_linreg
from perinstance_dp.data_model import Dataset, SyntheticConfig, generate_linear_gaussian
from perinstance_dp.errors import UnsupportedMechanismError
from perinstance_dp.mechanisms import GAUSSIAN_DESIGNS, MechanismKind, MechanismSpec, run_mechanism
from perinstance_dp.ridge_core import fit_ridge
from perinstance_dp.seeding import derive_seed
from perinstance_dp.settings import get_worker_count

logger = logging.getLogger(__name__)

Mechanism = Callable[[Dataset, int], np.ndarray]


@dataclass(frozen=True)
class PdpSampleSet:
    """Draws of (ε(Z, z), δ(Z, z)); `groups` labels which training set Z each draw belongs to."""

    eps_samples: np.ndarray
    delta_samples: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        eps = np.asarray(self.eps_samples, dtype=float).reshape(-1)
        delta = np.asarray(self.delta_samples, dtype=float).reshape(-1)
        if eps.shape != delta.shape:
            raise ValueError(f"eps and delta samples differ in length ({eps.size} vs {delta.size})")
        if not np.all(np.isfinite(eps)) or np.any(eps < 0):
            raise ValueError("eps samples must be finite and non-negative")
        if np.any(delta < 0) or np.any(delta >= 1):
            raise ValueError("delta samples must lie in [0, 1)")
        object.__setattr__(self, "eps_samples", eps)
        object.__setattr__(self, "delta_samples", delta)
        if self.groups is not None:
            groups = np.asarray(self.groups).reshape(-1)
            if groups.shape != eps.shape:
                raise ValueError(f"groups has {groups.size} labels for {eps.size} samples")
            object.__setattr__(self, "groups", groups)

    @property
    def size(self) -> int:
        return self.eps_samples.size

    def grouped(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(eps, delta) per training set, in label order; one group when unlabelled."""
        if self.groups is None:
            return [(self.eps_samples, self.delta_samples)]
        labels = np.unique(self.groups)
        return [(self.eps_samples[self.groups == g], self.delta_samples[self.groups == g]) for g in labels]


@dataclass(frozen=True)
class ImportanceWeights:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        if not np.all(np.isfinite(rho)) or np.any(rho < 0):
            raise ValueError("importance weights must be finite and non-negative")
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class CrossDomainBound:
    grouped: float
    pooled: float


@dataclass(frozen=True)
class GapEstimate:
    gap: float
    stderr: float
    trials: int


def gen_bound(samples: PdpSampleSet) -> float:
    """E_Z (E[e^ε | Z])² − 1 + E δ + E_Z [E(e^ε | Z) E(δ | Z)]."""
    if samples.groups is None:
        raise ValueError("the generalization bound needs samples grouped by training set")
    if samples.size == 0:
        raise ValueError("no pDP samples")
    m, d = _group_means(samples)
    return float(np.mean(m ** 2) - 1.0 + np.mean(samples.delta_samples) + np.mean(m * d))


def _group_means(samples: PdpSampleSet) -> tuple[np.ndarray, np.ndarray]:
    means = [(np.mean(np.exp(eps)), np.mean(delta)) for eps, delta in samples.grouped()]
    return np.array([m for m, _ in means]), np.array([d for _, d in means])


def crossdomain_bound(base: PdpSampleSet, target: PdpSampleSet, delta_sup: float | None = None) -> CrossDomainBound:
    """Cross-domain bound from base-distribution and target-distribution pDP draws.

    The first value is the plug-in of E[(e^{ε(Z,z′) + ε(Z,z″)} − 1) + δ(Z,z′) + ε(Z,z′)δ(Z,z″)]
    with z′ ~ D and z″ ~ D′ drawn independently given Z (groups must pair up by label);
    the second is ½[E_D e^{2ε} + E_D′ e^{2ε}] − 1 + 2δ with δ the largest delta
    sample unless `delta_sup` is given.
    """
    if base.size == 0 or target.size == 0:
        raise ValueError("cross-domain bound needs non-empty base and target samples")

    base_groups, target_groups = base.grouped(), target.grouped()
    if len(base_groups) != len(target_groups):
        raise ValueError(
            f"base and target samples cover different numbers of training sets ({len(base_groups)} vs {len(target_groups)})"
        )
    per_group = [
        np.mean(np.exp(eps_b)) * np.mean(np.exp(eps_t)) - 1.0 + np.mean(delta_b) + np.mean(eps_b) * np.mean(delta_t)
        for (eps_b, delta_b), (eps_t, delta_t) in zip(base_groups, target_groups)
    ]

    delta = _delta_sup(base, target, delta_sup)
    pooled = 0.5 * (np.mean(np.exp(2.0 * base.eps_samples)) + np.mean(np.exp(2.0 * target.eps_samples))) - 1.0 + 2.0 * delta
    return CrossDomainBound(grouped=float(np.mean(per_group)), pooled=float(pooled))


def _delta_sup(base: PdpSampleSet, target: PdpSampleSet, delta_sup: float | None) -> float:
    observed = max(float(base.delta_samples.max()), float(target.delta_samples.max()))
    if delta_sup is None:
        return observed
    if delta_sup < observed:
        raise ValueError(f"delta_sup={delta_sup} is below an observed delta sample {observed}")
    return float(delta_sup)


def crossdomain_taylor(base: PdpSampleSet, target: PdpSampleSet, order: int, delta_sup: float | None = None) -> float:
    """Order-k truncation ½ Σ_{i≤k} 2ⁱ/i! (E_D εⁱ + E_D′ εⁱ) + 2δ of the simplified cross-domain bound."""
    if order < 1:
        raise ValueError(f"order must be at least 1, got {order}")
    total = 0.0
    for i in range(1, order + 1):
        total += 2.0 ** i / math.factorial(i) * (np.mean(base.eps_samples ** i) + np.mean(target.eps_samples ** i))
    return float(0.5 * total + 2.0 * _delta_sup(base, target, delta_sup))


def gaussian_importance_weights(ds: Dataset, theta0: np.ndarray, sigma_base: float, sigma_target: float) -> ImportanceWeights:
    """ρᵢ = D′(zᵢ)/D(zᵢ) when D and D′ share the design law and differ in response noise."""
    if not (sigma_base > 0 and sigma_target > 0):
        raise ValueError("importance weights need positive noise levels")
    mean = ds.X @ np.asarray(theta0, dtype=float)
    log_rho = norm.logpdf(ds.y, loc=mean, scale=sigma_target) - norm.logpdf(ds.y, loc=mean, scale=sigma_base)
    return ImportanceWeights(np.exp(log_rho))


def _point_eps(spec: MechanismSpec, delta: float):
    if spec.mechanism not in GAUSSIAN_DESIGNS and spec.mechanism != MechanismKind.OPS:
        raise UnsupportedMechanismError(f"pDP samples are available for output perturbation and ops, not {spec.mechanism}")

    def eps_for(ds: Dataset, targets: Dataset) -> np.ndarray:
        sol = fit_ridge(ds, spec.lam)
        A = full_design_matrix(sol, spec)
        if A is None:
            return np.array([ops_pdp_bound(sol, z, spec.gamma, delta).eps for z in targets])
        return np.array([float(gaussian_pdp(sensitivity_linreg(sol, z, A), spec.gamma, delta)) for z in targets])

    return eps_for


def collect_pdp_samples(
        spec: MechanismSpec,
        cfg: SyntheticConfig,
        delta: float,
        datasets: int,
        targets_per_set: int,
        seed: int,
        target_sigma: float | None = None
) -> PdpSampleSet:
    """ε(Z, z) for fresh targets z, `targets_per_set` per training set Z ~ cfg, grouped by Z.

    Targets come from the same model, or from the response-noise shift
    `target_sigma` when given; δ(Z, z) is the fixed δ of the bound.
    """
    if datasets < 1 or targets_per_set < 1:
        raise ValueError("need at least one training set and one target per set")
    eps_for = _point_eps(spec, delta)
    target_cfg_sigma = cfg.sigma if target_sigma is None else target_sigma

    eps, groups = [], []
    for g in range(datasets):
        ds, theta0 = generate_linear_gaussian(dataclasses.replace(cfg, seed=derive_seed(seed, 2 * g)))
        targets, _ = generate_linear_gaussian(
            dataclasses.replace(cfg, n=targets_per_set, sigma=target_cfg_sigma, seed=derive_seed(seed, 2 * g + 1))
        )
        eps.append(eps_for(ds, targets))
        groups.append(np.full(targets_per_set, g))

    eps_all = np.concatenate(eps)
    return PdpSampleSet(eps_all, np.full(eps_all.size, delta), np.concatenate(groups))


def _clipped_loss(ds: Dataset, theta: np.ndarray, loss_cap: float) -> np.ndarray:
    return np.minimum(loss_cap, (ds.y - ds.X @ theta) ** 2)


def _as_mechanism(mechanism: MechanismSpec | Mechanism) -> Mechanism:
    if isinstance(mechanism, MechanismSpec):
        return lambda ds, seed: run_mechanism(ds, dataclasses.replace(mechanism, seed=seed)).theta_tilde
    return mechanism


def _run_trials(trial: Callable[[int], float], trials: int) -> GapEstimate:
    if trials < 2:
        raise ValueError(f"trials must be at least 2, got {trials}")
    with ThreadPoolExecutor(max_workers=get_worker_count()) as pool:
        differences = np.array(list(pool.map(trial, range(trials))))
    return GapEstimate(
        gap=float(abs(np.mean(differences))),
        stderr=float(np.std(differences, ddof=1) / math.sqrt(trials)),
        trials=trials
    )


def empirical_gap(
        mechanism: MechanismSpec | Mechanism,
        cfg: SyntheticConfig,
        loss_cap: float = 1.0,
        trials: int = 2000,
        seed: int = 0,
        test_points: int = 100
) -> GapEstimate:
    """|E train loss − E fresh-point loss| of the released θ, with its Monte-Carlo standard error.

    `mechanism` is a MechanismSpec or a callable (data set, seed) -> θ.
    """
    release = _as_mechanism(mechanism)

    def trial(t: int) -> float:
        data_seed, test_seed, mech_seed = (derive_seed(seed, 3 * t + k) for k in range(3))
        ds, _ = generate_linear_gaussian(dataclasses.replace(cfg, seed=data_seed))
        fresh, _ = generate_linear_gaussian(dataclasses.replace(cfg, n=test_points, seed=test_seed))
        theta = release(ds, mech_seed)
        return float(np.mean(_clipped_loss(ds, theta, loss_cap)) - np.mean(_clipped_loss(fresh, theta, loss_cap)))

    estimate = _run_trials(trial, trials)
    logger.info("Empirical generalization gap %.4g (s.e. %.2g) over %d trials", estimate.gap, estimate.stderr, trials)
    return estimate


def empirical_crossdomain_gap(
        mechanism: MechanismSpec | Mechanism,
        cfg: SyntheticConfig,
        target_sigma: float,
        loss_cap: float = 1.0,
        trials: int = 2000,
        seed: int = 0,
        test_points: int = 100
) -> GapEstimate:
    """|E[(1/n) Σ ρᵢ ℓ(θ, zᵢ) − ℓ(θ, z″)]| with z″ drawn from the response-noise shift `target_sigma`."""
    if cfg.clip_response:
        raise ValueError("importance weights need the unclipped response model (clip_response=False)")
    release = _as_mechanism(mechanism)

    def trial(t: int) -> float:
        data_seed, test_seed, mech_seed = (derive_seed(seed, 3 * t + k) for k in range(3))
        ds, theta0 = generate_linear_gaussian(dataclasses.replace(cfg, seed=data_seed))
        fresh, _ = generate_linear_gaussian(
            dataclasses.replace(cfg, n=test_points, sigma=target_sigma, seed=test_seed)
        )
        theta = release(ds, mech_seed)
        rho = gaussian_importance_weights(ds, theta0, cfg.sigma, target_sigma).rho
        weighted_train = np.mean(rho * _clipped_loss(ds, theta, loss_cap))
        return float(weighted_train - np.mean(_clipped_loss(fresh, theta, loss_cap)))

    return _run_trials(trial, trials)

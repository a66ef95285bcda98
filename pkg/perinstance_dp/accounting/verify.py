"""Monte-Carlo estimate of the hockey-stick divergence between two Gaussian releases.

δ̂(ε) = E_{θ~P} max(0, 1 − e^{ε − L(θ)}), L = log p(θ) − log q(θ), in both
directions. Samples are drawn in shards on a thread pool, each shard with its
own derived seed, and reduced in shard order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from perinstance_dp.ridge_core import factorize_spd
from perinstance_dp.seeding import derive_seed, make_rng
from perinstance_dp.settings import get_mc_shard_size, get_worker_count

logger = logging.getLogger(__name__)

ACCEPTANCE_STDERRS = 3.0


@dataclass(frozen=True)
class McVerdict:
    eps_tested: float
    delta_hat: tuple[float, float]
    stderr: tuple[float, float]
    n_samples: int
    delta_target: float | None = None

    @property
    def worst_direction(self) -> int:
        return int(np.argmax(self.delta_hat))

    @property
    def max_delta_hat(self) -> float:
        return self.delta_hat[self.worst_direction]

    @property
    def passed(self) -> bool:
        if self.delta_target is None:
            raise ValueError("verdict has no delta target")
        i = self.worst_direction
        return self.delta_hat[i] <= self.delta_target + ACCEPTANCE_STDERRS * self.stderr[i]

    def as_dict(self) -> dict:
        return {
            "eps_tested": self.eps_tested,
            "delta_hat": list(self.delta_hat),
            "stderr": list(self.stderr),
            "n_samples": self.n_samples,
            "delta_target": self.delta_target,
            "passed": self.passed if self.delta_target is not None else None,
        }


def _gaussian(mean, cov, what: str):
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    # raises for a non-SPD covariance
    factorize_spd(cov, what)
    return multivariate_normal(mean=mean, cov=cov)


def _shard_moments(sampler, other, eps: float, count: int, seed: int) -> tuple[float, float]:
    draws = np.asarray(sampler.rvs(size=count, random_state=make_rng(seed))).reshape(count, -1)
    log_ratio = sampler.logpdf(draws) - other.logpdf(draws)
    terms = np.maximum(0.0, -np.expm1(eps - np.atleast_1d(log_ratio)))
    return float(np.sum(terms)), float(np.sum(terms ** 2))


def verify_pdp_mc(
        mean1,
        cov1,
        mean2,
        cov2,
        eps: float,
        n_samples: int,
        seed: int,
        delta_target: float | None = None
) -> McVerdict:
    if n_samples < 2:
        raise ValueError(f"n_samples must be at least 2, got {n_samples}")
    p = _gaussian(mean1, cov1, "first covariance")
    q = _gaussian(mean2, cov2, "second covariance")

    shard_size = get_mc_shard_size()
    counts = [shard_size] * (n_samples // shard_size)
    if n_samples % shard_size:
        counts.append(n_samples % shard_size)

    jobs = []
    for direction, (sampler, other) in enumerate(((p, q), (q, p))):
        for shard, count in enumerate(counts):
            jobs.append((sampler, other, count, derive_seed(seed, 2 * shard + direction)))

    with ThreadPoolExecutor(max_workers=get_worker_count()) as pool:
        moments = list(pool.map(lambda job: _shard_moments(job[0], job[1], eps, job[2], job[3]), jobs))

    delta_hat, stderr = [], []
    per_direction = len(counts)
    for direction in range(2):
        chunk = np.array(moments[direction * per_direction:(direction + 1) * per_direction])
        mean = chunk[:, 0].sum() / n_samples
        second = chunk[:, 1].sum() / n_samples
        variance = max(second - mean ** 2, 0.0) * n_samples / (n_samples - 1)
        delta_hat.append(min(max(mean, 0.0), 1.0))
        stderr.append(math.sqrt(variance / n_samples))

    verdict = McVerdict(
        eps_tested=float(eps),
        delta_hat=(delta_hat[0], delta_hat[1]),
        stderr=(stderr[0], stderr[1]),
        n_samples=n_samples,
        delta_target=delta_target
    )
    logger.debug("Monte-Carlo hockey-stick at eps=%.6g: %s", eps, verdict.delta_hat)
    return verdict

"""Noise calibration for the release mechanisms.

Turns a privacy budget (epsilon, delta) and a per-user contribution bound
into concrete mechanism parameters: the Gaussian noise level sigma (smallest
value whose privacy profile meets the budget), the release threshold T, the
Gumbel scale for k-fold selection, and the low-frequency release bound b*.

All functions here are pure; solvers use bracketing plus bisection with
fixed tolerances (1e-9 relative for sigma, 1e-12 absolute for the normal
quantile) so calibration error is negligible against statistical noise.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

logger = logging.getLogger(__name__)

SIGMA_REL_TOL = 1e-9
QUANTILE_ABS_TOL = 1e-12


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) pair with a split policy for two-stage mechanisms."""

    epsilon: float
    delta: float
    split: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if len(self.split) != 2 or min(self.split) <= 0:
            raise ValueError(f"split must be two positive fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")

    def stage(self, i: int) -> tuple[float, float]:
        """Budget of stage i in {0, 1} under basic composition."""
        return self.epsilon * self.split[i], self.delta * self.split[i]


@dataclass(frozen=True)
class WgmConfig:
    """Calibrated noise level, threshold, and contribution bound.

    q_star = min(delta0, max user set size) is filled in once the config is
    bound to a dataset.
    """

    sigma: float
    threshold: float
    delta0: int
    q_star: int | None = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        if self.delta0 < 1:
            raise ValueError(f"delta0 must be >= 1, got {self.delta0}")

    def bound_to(self, max_user_set_size: int) -> "WgmConfig":
        return dataclasses.replace(
            self, q_star=min(self.delta0, int(max_user_set_size))
        )


@dataclass(frozen=True)
class GumbelScale:
    """Gumbel noise scale for k noisy-argmax selections under one budget."""

    lam: float
    eps0: float
    k: int

    def __post_init__(self):
        if self.eps0 <= 0 or self.lam <= 0:
            raise ValueError("eps0 and lam must be positive")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def std_normal_quantile(p: float) -> float:
    """Inverse standard normal CDF by monotone bisection, to 1e-12 absolute."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile requires p strictly in (0, 1), got {p}")
    lo, hi = -40.0, 40.0
    while hi - lo > QUANTILE_ABS_TOL:
        mid = 0.5 * (lo + hi)
        if std_normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def privacy_profile_delta(sigma: float, epsilon: float) -> float:
    """Privacy profile g(sigma) of unit-sensitivity Gaussian noise at epsilon.

    g(sigma) = Phi(1/(2 sigma) - epsilon sigma)
               - e^epsilon * Phi(-1/(2 sigma) - epsilon sigma),
    clamped below at 0. The calibrated sigma is the smallest value with
    g(sigma) <= delta / 2.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    a = 1.0 / (2.0 * sigma) - epsilon * sigma
    b = -1.0 / (2.0 * sigma) - epsilon * sigma
    g = std_normal_cdf(a) - math.exp(epsilon) * std_normal_cdf(b)
    return max(g, 0.0)


def _solve_sigma_gridscan(epsilon: float, target: float) -> float:
    """Fallback: geometric grid scan plus local bisection on the profile."""
    logger.warning(
        "sigma bracketing failed for epsilon=%g; falling back to grid scan", epsilon
    )
    grid = [1e-6 * (1e12 ** (j / 9999.0)) for j in range(10000)]
    for j, s in enumerate(grid):
        if privacy_profile_delta(s, epsilon) <= target:
            if j == 0:
                return s
            lo, hi = grid[j - 1], s
            while hi - lo > SIGMA_REL_TOL * hi:
                mid = 0.5 * (lo + hi)
                if privacy_profile_delta(mid, epsilon) <= target:
                    hi = mid
                else:
                    lo = mid
            return hi
    raise ArithmeticError(
        f"no sigma in [1e-6, 1e6] meets the target {target} at epsilon={epsilon}"
    )


def solve_sigma(epsilon: float, delta: float) -> float:
    """Smallest sigma whose privacy profile meets delta at this epsilon.

    The returned sigma satisfies g(sigma) <= delta/2 while
    g(sigma * (1 - 1e-6)) > delta/2. The one-sided relaxation
    Phi^{-1}(1 - delta/2) / epsilon is a proven upper bound for the root and
    seeds the bracket; bisection then runs to 1e-9 relative tolerance.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    target = delta / 2.0

    hi = std_normal_quantile(1.0 - delta / 2.0) / epsilon
    for _ in range(64):
        if privacy_profile_delta(hi, epsilon) <= target:
            break
        hi *= 2.0
    else:
        return _solve_sigma_gridscan(epsilon, target)

    lo = hi / 2.0
    for _ in range(200):
        if privacy_profile_delta(lo, epsilon) > target:
            break
        hi = lo
        lo /= 2.0
    else:
        return _solve_sigma_gridscan(epsilon, target)

    while hi - lo > SIGMA_REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        if privacy_profile_delta(mid, epsilon) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def solve_threshold(sigma: float, delta: float, delta0: int) -> float:
    """Release threshold meeting the per-count constraint for every t <= delta0.

    Maximizes 1/sqrt(t) + sigma * Phi^{-1}((1 - delta/2)^(1/t)) over integer
    t in [1, delta0], evaluating (1 - delta/2)^(1/t) as exp(log1p(-delta/2)/t)
    for accuracy, and floors the result at 1.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if delta0 < 1:
        raise ValueError(f"delta0 must be >= 1, got {delta0}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    log_base = math.log1p(-delta / 2.0)
    best = -math.inf
    for t in range(1, int(delta0) + 1):
        p = math.exp(log_base / t)
        value = 1.0 / math.sqrt(t) + sigma * std_normal_quantile(p)
        if value > best:
            best = value
    return max(best, 1.0)


def gumbel_scale(epsilon: float, delta: float, k: int) -> GumbelScale:
    """Exact Gumbel scale for k-fold noisy argmax under (epsilon, delta).

    eps0 = max(epsilon / k,
               sqrt((8 ln(1/delta) + 8 epsilon) / k) - sqrt(8 ln(1/delta) / k))
    and the scale is lam = 1 / eps0.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    log_term = 8.0 * math.log(1.0 / delta)
    eps0 = max(
        epsilon / k,
        math.sqrt((log_term + 8.0 * epsilon) / k) - math.sqrt(log_term / k),
    )
    return GumbelScale(lam=1.0 / eps0, eps0=eps0, k=k)


def lb_frequency_bstar(epsilon: float, delta: float) -> float:
    """Frequency level below which sound private release succeeds w.p. <= 1/2.

    b* = (1/epsilon) * ln(1 + (e^epsilon - 1) / (2 delta)), computed with
    expm1/log1p so it stays accurate as epsilon -> 0.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return math.log1p(math.expm1(epsilon) / (2.0 * delta)) / epsilon


def calibrate_wgm(epsilon: float, delta: float, delta0: int) -> WgmConfig:
    """Calibrates (sigma, T) for the weighted Gaussian release at this budget."""
    sigma = solve_sigma(epsilon, delta)
    threshold = solve_threshold(sigma, delta, delta0)
    return WgmConfig(sigma=sigma, threshold=threshold, delta0=int(delta0))

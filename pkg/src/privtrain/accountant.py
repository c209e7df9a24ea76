"""Rényi-DP accounting for Gaussian mechanisms.

Tracks privacy as a curve eps(alpha) over a grid of Rényi orders. The
Gaussian mechanism has the closed form eps(alpha) = alpha * d^2 / (2 s^2)
for sensitivity d and noise std s. Poisson-subsampled steps use the exact
binomial expansion at integer orders, evaluated in log space. Composition
is additive; conversion to (eps, delta) takes

    eps = min_alpha [ eps(alpha) + log(1/delta) / (alpha - 1) ].

All functions are pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

# Integer orders admit the exact subsampled-Gaussian formula; 2..64 plus two
# large orders cover where the conversion minimum lands for delta >= 1e-9.
DEFAULT_ALPHAS: tuple[int, ...] = tuple(range(2, 65)) + (128, 256)

GAUSSIAN = "gaussian"
SUBSAMPLED_GAUSSIAN = "subsampled_gaussian"
GAUSSIAN_NOISY_MAX = "gaussian_noisy_max"
_KINDS = (GAUSSIAN, SUBSAMPLED_GAUSSIAN, GAUSSIAN_NOISY_MAX)


@dataclass(frozen=True)
class RdpProfile:
    """eps(alpha) over an ordered grid of Rényi orders.

    Entries may be ``math.inf`` as an explicit "no guarantee at this order"
    sentinel; such orders are skipped during conversion.
    """

    alphas: tuple[float, ...]
    eps_at_alpha: tuple[float, ...]

    def __post_init__(self):
        if len(self.alphas) != len(self.eps_at_alpha):
            raise ValueError("alphas and eps_at_alpha must have equal length")
        if len(self.alphas) == 0:
            raise ValueError("order grid must be non-empty")
        prev = 1.0
        for a in self.alphas:
            if not a > prev:
                raise ValueError("alphas must be strictly increasing and > 1")
            prev = a
        for e in self.eps_at_alpha:
            if math.isnan(e) or e < 0:
                raise ValueError(f"RDP epsilon entries must be >= 0, got {e}")

    def scaled(self, count: int) -> "RdpProfile":
        if count < 0:
            raise ValueError("count must be >= 0")
        if count == 0:  # avoid 0 * inf = nan on sentinel entries
            return RdpProfile(self.alphas, (0.0,) * len(self.alphas))
        return RdpProfile(self.alphas, tuple(count * e for e in self.eps_at_alpha))

    def __add__(self, other: "RdpProfile") -> "RdpProfile":
        if self.alphas != other.alphas:
            raise ValueError("cannot add profiles over different order grids")
        return RdpProfile(
            self.alphas,
            tuple(a + b for a, b in zip(self.eps_at_alpha, other.eps_at_alpha)),
        )

    def to_json(self) -> dict:
        return {"alphas": list(self.alphas), "eps": list(self.eps_at_alpha)}

    @classmethod
    def from_json(cls, obj: dict) -> "RdpProfile":
        return cls(tuple(obj["alphas"]), tuple(obj["eps"]))


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) guarantee, with the order the conversion picked."""

    epsilon: float
    delta: float
    argmin_alpha: float | None = None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if math.isnan(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "argmin_alpha": self.argmin_alpha,
        }


@dataclass(frozen=True)
class MechanismEvent:
    """One (possibly repeated) randomized release to account for.

    ``sigma`` is the noise multiplier: noise std per unit of L2 sensitivity,
    so the added noise has std ``sigma * sensitivity``. ``sampling_rate``
    is the Poisson inclusion rate and applies only to subsampled events.
    ``sigma == 0`` is a test-mode sentinel: the event composes to an
    all-infinite profile (no guarantee).
    """

    kind: str
    sigma: float
    sensitivity: float = 1.0
    sampling_rate: float | None = None
    count: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.sensitivity <= 0:
            raise ValueError("sensitivity must be > 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.kind == SUBSAMPLED_GAUSSIAN:
            if self.sampling_rate is None or not 0 <= self.sampling_rate <= 1:
                raise ValueError("subsampled events need sampling_rate in [0, 1]")
        elif self.sampling_rate is not None:
            raise ValueError(f"sampling_rate is only valid for {SUBSAMPLED_GAUSSIAN}")


def _check_alphas(alphas: Sequence[float]) -> np.ndarray:
    arr = np.asarray(alphas, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("order grid must be a non-empty 1-D sequence")
    if np.any(arr <= 1):
        raise ValueError("all Rényi orders must be > 1")
    if np.any(np.diff(arr) <= 0):
        raise ValueError("Rényi orders must be strictly increasing")
    return arr


def rdp_gaussian(
    sigma: float, sensitivity: float, alphas: Sequence[float] = DEFAULT_ALPHAS
) -> RdpProfile:
    """Closed-form RDP of a Gaussian release: eps(alpha) = alpha d^2 / (2 s^2).

    ``sigma`` here is the absolute noise std; ``sensitivity`` the L2 shift
    between neighbouring inputs. Zero sensitivity yields the all-zero
    profile (identical distributions).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if sensitivity < 0:
        raise ValueError(f"sensitivity must be >= 0, got {sensitivity}")
    arr = _check_alphas(alphas)
    eps = arr * (sensitivity * sensitivity) / (2.0 * sigma * sigma)
    return RdpProfile(tuple(arr), tuple(float(e) for e in eps))


def _log_binom(n: int, k: np.ndarray) -> np.ndarray:
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def _subsampled_eps_int(q: float, sigma: float, alpha: int) -> float:
    # Exact integer-order expansion of the alpha-divergence between
    # N(0, s^2) and the mixture (1-q) N(0, s^2) + q N(1, s^2):
    #   A = sum_{j=0}^{alpha} C(alpha, j) (1-q)^(alpha-j) q^j e^{j(j-1)/(2 s^2)}
    #   eps(alpha) = log(A) / (alpha - 1)
    j = np.arange(alpha + 1, dtype=float)
    log_terms = (
        _log_binom(alpha, j)
        + j * math.log(q)
        + (alpha - j) * math.log1p(-q)
        + (j * j - j) / (2.0 * sigma * sigma)
    )
    # exact value is >= 0; tiny negatives are logsumexp rounding at huge sigma
    return max(0.0, float(special.logsumexp(log_terms))) / (alpha - 1)


def rdp_subsampled_gaussian(
    q: float, sigma: float, alphas: Sequence[int] = DEFAULT_ALPHAS
) -> RdpProfile:
    """RDP of one Poisson-subsampled Gaussian step at integer orders.

    Exact (not an upper bound) for the sampled Gaussian mechanism; the
    restriction to integer alpha >= 2 is what makes the binomial expansion
    exact. q = 0 releases nothing; q = 1 is the unsampled Gaussian with
    unit sensitivity.
    """
    if not 0 <= q <= 1:
        raise ValueError(f"sampling rate must lie in [0, 1], got {q}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    arr = _check_alphas(alphas)
    if np.any(arr != np.floor(arr)) or np.any(arr < 2):
        raise ValueError("subsampled-Gaussian orders must be integers >= 2")
    if q == 0:
        return RdpProfile(tuple(arr), (0.0,) * arr.size)
    if q == 1:
        return rdp_gaussian(sigma, 1.0, arr)
    eps = tuple(_subsampled_eps_int(q, sigma, int(a)) for a in arr)
    return RdpProfile(tuple(arr), eps)


def _event_profile(event: MechanismEvent, alphas: np.ndarray) -> RdpProfile:
    if event.sigma == 0:
        # Test-mode sentinel: no noise means no RDP guarantee at any order.
        return RdpProfile(tuple(alphas), (math.inf,) * alphas.size)
    if event.kind == SUBSAMPLED_GAUSSIAN:
        return rdp_subsampled_gaussian(event.sampling_rate, event.sigma, alphas)
    # gaussian / gaussian_noisy_max: sigma is per unit sensitivity, so the
    # pair of shifted Gaussians reduces to sensitivity 1 at std sigma.
    return rdp_gaussian(event.sigma, 1.0, alphas)


def compose(
    events: Sequence[MechanismEvent], alphas: Sequence[float] = DEFAULT_ALPHAS
) -> RdpProfile:
    """Additively compose events: eps(alpha) = sum_e count_e * eps_e(alpha).

    An empty event list is the valid all-zero profile.
    """
    arr = _check_alphas(alphas)
    total = np.zeros(arr.size)
    for event in events:
        prof = _event_profile(event, arr)
        total = total + event.count * np.asarray(prof.eps_at_alpha)
    return RdpProfile(tuple(arr), tuple(float(e) for e in total))


def to_eps_delta(profile: RdpProfile, delta: float) -> PrivacyBudget:
    """Convert an RDP curve to (eps, delta)-DP.

    eps = min over the grid of eps(alpha) + log(1/delta)/(alpha - 1);
    infinite entries are skipped. If every order is infinite the budget is
    (inf, delta) with no minimizing order.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    log_inv_delta = math.log(1.0 / delta)
    best_eps = math.inf
    best_alpha: float | None = None
    for a, e in zip(profile.alphas, profile.eps_at_alpha):
        if math.isinf(e):
            continue
        cand = e + log_inv_delta / (a - 1)
        if cand < best_eps:
            best_eps = cand
            best_alpha = a
    return PrivacyBudget(epsilon=best_eps, delta=delta, argmin_alpha=best_alpha)


def account_training(
    q: float,
    sigma: float,
    steps: int,
    delta: float,
    alphas: Sequence[int] = DEFAULT_ALPHAS,
) -> PrivacyBudget:
    """Budget after ``steps`` Poisson-subsampled Gaussian steps at rate q.

    sigma = 0 is the noiseless test mode and reports epsilon = +inf (unless
    nothing was released at all).
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if steps == 0:
        return to_eps_delta(compose([], alphas), delta)
    event = MechanismEvent(
        kind=SUBSAMPLED_GAUSSIAN, sigma=sigma, sampling_rate=q, count=steps
    )
    return to_eps_delta(compose([event], alphas), delta)


def sigma_for_epsilon(
    q: float,
    steps: int,
    delta: float,
    target_epsilon: float,
    alphas: Sequence[int] = DEFAULT_ALPHAS,
) -> float:
    """Smallest noise multiplier whose training budget stays within target.

    Bisects on sigma (epsilon is strictly decreasing in sigma). The target
    must exceed the floor reached by the conversion term alone.
    """
    if target_epsilon <= 0:
        raise ValueError("target epsilon must be > 0")
    if steps < 1 or q <= 0:
        raise ValueError("calibration needs steps >= 1 and q > 0")
    floor = to_eps_delta(compose([], alphas), delta).epsilon
    if target_epsilon <= floor:
        raise ValueError(
            f"target epsilon {target_epsilon} is below the conversion floor "
            f"{floor:.4f} of the order grid"
        )

    def eps(sigma: float) -> float:
        return account_training(q, sigma, steps, delta, alphas).epsilon

    lo, hi = 1e-3, 1.0
    while eps(hi) > target_epsilon:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("no sigma below 1e6 reaches the target epsilon")
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if eps(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
    return hi

"""Classic analytical RDP accountant used as an external cross-check.

Self-contained adaptation of the analytical moments accountant from the
open-source autodp project (Yu-Xiang Wang and collaborators; the same code
ships vendored inside apache/mxnet). Only the Poisson-subsampled Gaussian
path is kept: the integer-order CGF via the exact binomial expansion,
linear CGF interpolation between integers, and conversion to epsilon by
minimizing log(1/delta)/(alpha - 1) + rdp(alpha) over continuous alpha
with a bounded scalar optimizer.

This is deliberately a different code path from the package accountant
(which restricts itself to an integer order grid); the two must agree
within 1% on the reference query.
"""

from __future__ import annotations

import argparse
import json
import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, logsumexp


def _log_binom(n: int, k: int) -> float:
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _subsampled_cgf_int(sigma: float, prob: float, mm: int) -> float:
    """log E[(P/Q)^mm] for the Poisson-subsampled Gaussian at integer mm."""
    func = lambda x: x / (2.0 * sigma * sigma)  # Gaussian RDP
    cgf = lambda x: x * func(x + 1.0)
    base = (mm - 1) * math.log1p(-prob) + math.log1p((mm - 1) * prob)
    moments = [
        cgf(j - 1.0)
        + j * math.log(prob)
        + (mm - j) * math.log1p(-prob)
        + _log_binom(mm, j)
        for j in range(2, mm + 1)
    ]
    return float(logsumexp([base] + moments))


def subsampled_gaussian_rdp(sigma: float, prob: float, alpha: float) -> float:
    """RDP at (possibly fractional) alpha via linear CGF interpolation."""
    if prob == 0.0:
        return 0.0
    if prob == 1.0:
        return alpha / (2.0 * sigma * sigma)
    if alpha <= 2.0:
        return _subsampled_cgf_int(sigma, prob, 2) / (2.0 - 1.0)
    if float(alpha).is_integer():
        return _subsampled_cgf_int(sigma, prob, int(alpha)) / (alpha - 1.0)
    xf, xc = math.floor(alpha), math.ceil(alpha)
    lo = _subsampled_cgf_int(sigma, prob, int(xf))
    hi = _subsampled_cgf_int(sigma, prob, int(xc))
    frac = alpha - xf
    return (frac * hi + (1.0 - frac) * lo) / (alpha - 1.0)


def get_epsilon(
    sigma: float, prob: float, steps: int, delta: float, alpha_max: int = 512
) -> tuple[float, float]:
    """(epsilon, alpha*) after composing `steps` subsampled Gaussian steps."""

    def objective(alpha: float) -> float:
        if alpha <= 1.0:
            return np.inf
        return steps * subsampled_gaussian_rdp(sigma, prob, alpha) + math.log(
            1.0 / delta
        ) / (alpha - 1.0)

    ints = np.arange(2, alpha_max + 1)
    vals = np.array([objective(float(a)) for a in ints])
    best = float(ints[int(np.argmin(vals))])
    result = minimize_scalar(
        objective,
        method="Bounded",
        bounds=(max(1.0 + 1e-6, best - 1.0), best + 1.0),
        options={"xatol": 1e-8},
    )
    eps = min(float(result.fun), float(np.min(vals)))
    alpha_star = float(result.x) if result.fun <= np.min(vals) else best
    return eps, alpha_star


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--q", type=float, default=0.1)
    parser.add_argument("--sigma", type=float, default=4.0)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--delta", type=float, default=1e-5)
    parser.add_argument("--out", default=None, help="optional JSON output path")
    args = parser.parse_args()
    eps, alpha = get_epsilon(args.sigma, args.q, args.steps, args.delta)
    payload = {
        "source": "analytical moments accountant (autodp lineage), "
                  "continuous-alpha conversion",
        "q": args.q,
        "sigma": args.sigma,
        "steps": args.steps,
        "delta": args.delta,
        "epsilon": eps,
        "alpha_star": alpha,
    }
    print(json.dumps(payload, indent=2))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    main()

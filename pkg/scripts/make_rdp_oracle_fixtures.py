"""Freeze the high-precision RDP oracle values used by the test suite.

Two independent references are produced:

  - an mpmath numerical-integration oracle for the Rényi divergence of the
    subsampled Gaussian (divergence of order alpha between the mixture
    (1-q) N(0, s^2) + q N(1, s^2) and N(0, s^2)), evaluated over the
    acceptance grid (q, sigma) in {0.001, 0.01, 0.1} x {0.5, 1, 2, 4} and
    alpha in 2..64, plus spot values for the plain Gaussian;
  - the external reference accounting query computed by the adapted
    analytical accountant in external_reference_accountant.py.

Writes tests/fixtures/rdp_oracle.json and tests/fixtures/
external_accountant.json. Slow (several minutes of quadrature); run once
and commit the output.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

from mpmath import exp, inf, log, mp, mpf, pi, quad, sqrt

sys.path.insert(0, str(Path(__file__).resolve().parent))
from external_reference_accountant import get_epsilon  # noqa: E402

mp.dps = 40

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

QS = (0.001, 0.01, 0.1)
SIGMAS = (0.5, 1.0, 2.0, 4.0)
ALPHAS = tuple(range(2, 65))


def _gauss_pdf(x, mu, sigma):
    return exp(-(((x - mu) / sigma) ** 2) / 2) / (sigma * sqrt(2 * pi))


def subsampled_renyi_eps(q: float, sigma: float, alpha: int) -> float:
    """Numerically integrated order-alpha divergence, mixture vs. centered."""
    qm, sm, am = mpf(q), mpf(sigma), mpf(alpha)

    def integrand(x):
        p = (1 - qm) * _gauss_pdf(x, 0, sm) + qm * _gauss_pdf(x, 1, sm)
        q0 = _gauss_pdf(x, 0, sm)
        return p**am * q0 ** (1 - am)

    # The integrand peaks near x = alpha; split points keep tanh-sinh honest.
    points = [-inf, 0, 1, am / 2, am, 2 * am, inf]
    return float(log(quad(integrand, points)) / (am - 1))


def gaussian_renyi_eps(sigma: float, sensitivity: float, alpha: float) -> float:
    """Numerically integrated divergence between N(0,s^2) and N(d,s^2)."""
    sm, dm, am = mpf(sigma), mpf(sensitivity), mpf(alpha)

    def integrand(x):
        return _gauss_pdf(x, dm, sm) ** am * _gauss_pdf(x, 0, sm) ** (1 - am)

    points = [-inf, 0, dm, am * dm, 2 * am * dm + 1, inf]
    return float(log(quad(integrand, points)) / (am - 1))


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)

    started = time.time()
    curves = []
    for q in QS:
        for sigma in SIGMAS:
            eps = [subsampled_renyi_eps(q, sigma, a) for a in ALPHAS]
            curves.append({"q": q, "sigma": sigma, "alphas": list(ALPHAS), "eps": eps})
            print(
                f"q={q} sigma={sigma} done ({time.time() - started:.0f}s)",
                flush=True,
            )

    gaussian_spots = [
        {
            "sigma": s,
            "sensitivity": d,
            "alpha": a,
            "eps": gaussian_renyi_eps(s, d, a),
        }
        for (s, d, a) in [(1.0, 1.0, 2), (2.0, 1.0, 4), (1.0, 0.5, 8), (0.7, 2.0, 3)]
    ]

    oracle = {
        "description": "numerical-integration RDP oracle (mpmath, dps=40)",
        "subsampled_gaussian": curves,
        "gaussian": gaussian_spots,
        "single_step_example": {
            "q": 0.01,
            "sigma": 1.0,
            "alpha": 2,
            "eps": subsampled_renyi_eps(0.01, 1.0, 2),
        },
    }
    with open(FIXTURE_DIR / "rdp_oracle.json", "w", encoding="utf-8") as fh:
        json.dump(oracle, fh, indent=2)
        fh.write("\n")

    eps, alpha_star = get_epsilon(sigma=4.0, prob=0.1, steps=500, delta=1e-5)
    reference = {
        "source": "analytical moments accountant (autodp lineage), "
                  "continuous-alpha conversion",
        "q": 0.1,
        "sigma": 4.0,
        "steps": 500,
        "delta": 1e-5,
        "epsilon": eps,
        "alpha_star": alpha_star,
    }
    with open(FIXTURE_DIR / "external_accountant.json", "w", encoding="utf-8") as fh:
        json.dump(reference, fh, indent=2)
        fh.write("\n")

    print(f"external reference epsilon: {eps:.6f} at alpha {alpha_star:.3f}")
    print(f"fixtures written to {FIXTURE_DIR} in {time.time() - started:.0f}s")


if __name__ == "__main__":
    main()

"""Exact scheme constants for BDF1-BDF3.

``alpha_k`` decides uniqueness of the implicit step, ``2 beta_k`` is the
largest ``c_F dt`` covered by quadratic stability, and ``lambda_k`` is the
``c_F dt`` at which a period-two orbit solves the scheme.
"""
from __future__ import annotations

from fractions import Fraction
from math import comb

from .errors import UnsupportedOrderError

ORDERS = (1, 2, 3)

BETA3 = Fraction(95, 96)
# beta_1 = beta_2 = 1 are classical; beta_3 is certified by quadform.maximize_f.
BETA = {1: Fraction(1), 2: Fraction(1), 3: BETA3}


def check_order(k: int) -> int:
    if k not in ORDERS:
        raise UnsupportedOrderError(f"BDF order k={k!r} is not supported (expected 1, 2 or 3)")
    return k


def alpha(k: int) -> Fraction:
    """Harmonic number sum_{j<=k} 1/j: the coefficient of the new state."""
    check_order(k)
    return sum((Fraction(1, j) for j in range(1, k + 1)), Fraction(0))


def two_beta(k: int) -> Fraction:
    check_order(k)
    return 2 * BETA[k]


def lambda_barrier(k: int) -> Fraction:
    """c_F dt for which u_n = (-1)^n solves BDFk with F'(v) = -c v.

    Every backward difference of (-1)^n is 2^j (-1)^n, so the scheme
    left-hand side equals sum_j 2^j / j times the new state.
    """
    check_order(k)
    return sum((Fraction(2**j, j) for j in range(1, k + 1)), Fraction(0))


def difference_coefficients(j: int) -> list[int]:
    """Weights of U^m, U^{m-1}, ..., U^{m-j} in the j-th backward difference."""
    return [(-1) ** i * comb(j, i) for i in range(j + 1)]


def scheme_coefficients(k: int) -> list[Fraction]:
    """Weights [w_0, ..., w_k] with sum_j (1/j) d^j U^{n+k} = sum_i w_i U^{n+k-i}."""
    check_order(k)
    w = [Fraction(0)] * (k + 1)
    for j in range(1, k + 1):
        for i, d in enumerate(difference_coefficients(j)):
            w[i] += Fraction(d, j)
    return w


def threshold_table() -> list[dict]:
    return [
        {"k": k, "alpha_k": alpha(k), "two_beta_k": two_beta(k), "lambda_k": lambda_barrier(k)}
        for k in ORDERS
    ]


def regime(k: int, cf_dt) -> str:
    """Classify c_F * dt against the per-order stability thresholds.

    ``unique`` below alpha_k, ``multivalued-stable`` in [alpha_k, 2 beta_k),
    ``barrier`` from 2 beta_k on (no Lyapunov certificate available there).
    """
    a, tb = alpha(k), two_beta(k)
    x = Fraction(cf_dt) if not isinstance(cf_dt, Fraction) else cf_dt
    if x < a:
        return "unique"
    if x < tb:
        return "multivalued-stable"
    return "barrier"

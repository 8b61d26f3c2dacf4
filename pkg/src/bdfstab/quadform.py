"""Quadratic forms for the BDF quadratic-stability decomposition.

The BDF3 pairing form is

    gamma_3(x1, x2, x3) = 11/6 x1^2 - 7/6 x1 x2 + 1/3 x1 x3,

and a *decomposition* writes it as

    gamma_3 = q(x1, x2) - q(x2, x3) + r(x1, x2, x3) + beta x1^2

with ``q`` positive definite on R^2 and ``r`` positive (semi)definite on R^3.
The largest admissible ``beta`` is 95/96.  Positive definite binary forms are
parametrized by their Cholesky data ``(a, b, c)``,

    q(x1, x2) = a^2 x2^2 + 2 a c x2 x1 + (b^2 + c^2) x1^2,

and the x1^2 pivot left after Gauss-reducing ``gamma_3 - q + q(shift)`` is
``f(a, b, c)``; ``maximize_f`` recovers the supremum numerically.

Coefficients may be floats or :class:`fractions.Fraction`; forms built from
fractions stay exact under addition, scaling and evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .constants import BETA3, check_order, difference_coefficients
from .errors import (
    DefinitenessError,
    DomainError,
    InfeasibleError,
    OmegaMembershipError,
    OptimizationError,
    ShapeError,
)

DEFINITENESS_TOL = 1e-12

SQRT6 = math.sqrt(6.0)
# Witness of the classical decomposition (f = 5/6) and the optimal boundary point.
P0 = (1.0 / SQRT6, math.sqrt(5.0 / 12.0), -SQRT6 / 6.0)
P_STAR = (1.0 / SQRT6, 1.0 / SQRT6, -7.0 / (4.0 * SQRT6))
# Bounds on `a` for any near-maximizing sequence: a >= 1/sqrt(66), a^2 < 11/6.
A_BOUNDS = (1.0 / math.sqrt(66.0), math.sqrt(11.0 / 6.0))


def _is_exact(x) -> bool:
    return isinstance(x, (Fraction, int)) and not isinstance(x, bool)


class QuadraticForm:
    """Symmetric quadratic form ``x -> x^T A x`` on R^d.

    Only the upper triangle of ``coeffs`` is read, so the stored matrix is
    symmetric by construction.
    """

    dim: int | None = None

    def __init__(self, coeffs):
        m = np.array(coeffs, dtype=object)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"coefficient matrix must be square, got shape {m.shape}")
        if self.dim is not None and m.shape[0] != self.dim:
            raise ShapeError(f"{type(self).__name__} needs a {self.dim}x{self.dim} matrix")
        d = m.shape[0]
        exact = all(_is_exact(v) for v in m.flat)
        sym = np.empty((d, d), dtype=object)
        for i in range(d):
            for j in range(i, d):
                v = Fraction(m[i, j]) if exact else float(m[i, j])
                sym[i, j] = sym[j, i] = v
        self._m = sym
        self.exact = exact

    @classmethod
    def from_polynomial(cls, terms: dict[tuple[int, int], object], d: int | None = None):
        """Build from monomial coefficients ``{(i, j): coef}`` of ``x_i x_j`` (0-based)."""
        d = d if d is not None else (cls.dim or 1 + max(max(k) for k in terms))
        zero = Fraction(0) if all(_is_exact(v) for v in terms.values()) else 0.0
        m = [[zero] * d for _ in range(d)]
        for (i, j), v in terms.items():
            if i == j:
                m[i][i] += v
            else:
                lo, hi = min(i, j), max(i, j)
                m[lo][hi] += v / 2 if not _is_exact(v) else Fraction(v) / 2
        return _form_for_dim(d)(m)

    @classmethod
    def from_squares(cls, squares, d: int):
        """Sum of ``weight * (l . x)^2`` over ``(weight, l)`` pairs."""
        exact = all(_is_exact(w) and all(_is_exact(t) for t in l) for w, l in squares)
        zero = Fraction(0) if exact else 0.0
        m = [[zero] * d for _ in range(d)]
        for w, l in squares:
            for i in range(d):
                for j in range(d):
                    m[i][j] += w * l[i] * l[j]
        return _form_for_dim(d)(m)

    @property
    def d(self) -> int:
        return self._m.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Float copy of the coefficient matrix."""
        return self._m.astype(float)

    @property
    def exact_matrix(self) -> np.ndarray:
        if not self.exact:
            raise TypeError("form has floating-point coefficients")
        return self._m.copy()

    def entry(self, i: int, j: int):
        return self._m[i, j]

    def to_float(self) -> "QuadraticForm":
        return type(self)(self.matrix)

    def __call__(self, *x):
        v = np.array(x[0] if len(x) == 1 else x, dtype=object if self.exact else float)
        if v.shape != (self.d,):
            raise ShapeError(f"expected {self.d} arguments, got shape {v.shape}")
        if self.exact and all(_is_exact(t) for t in v):
            return sum(self._m[i, j] * v[i] * v[j] for i in range(self.d) for j in range(self.d))
        v = v.astype(float)
        return float(v @ self.matrix @ v)

    def __add__(self, other):
        if not isinstance(other, QuadraticForm) or other.d != self.d:
            raise ShapeError("can only add forms of equal dimension")
        return _form_for_dim(self.d)(self._combine(other, 1))

    def __sub__(self, other):
        if not isinstance(other, QuadraticForm) or other.d != self.d:
            raise ShapeError("can only subtract forms of equal dimension")
        return _form_for_dim(self.d)(self._combine(other, -1))

    def _combine(self, other, sign):
        if self.exact and other.exact:
            return self._m + sign * other._m
        return self.matrix + sign * other.matrix

    def scale(self, s):
        if self.exact and _is_exact(s):
            return _form_for_dim(self.d)(self._m * Fraction(s))
        return _form_for_dim(self.d)(self.matrix * float(s))

    def leading_minors(self) -> list:
        """Leading principal minors, exact when the form is exact."""
        if self.exact:
            return [_exact_det(self._m[:i, :i]) for i in range(1, self.d + 1)]
        m = self.matrix
        return [float(np.linalg.det(m[:i, :i])) for i in range(1, self.d + 1)]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def is_positive_definite(self, tol: float = DEFINITENESS_TOL) -> bool:
        """Smallest eigenvalue above ``tol``, cross-checked by Sylvester's criterion.

        The two tests may only disagree for forms whose smallest eigenvalue
        is within ``tol`` of zero; anything else raises.
        """
        minors = self.leading_minors()
        by_minors = all(m > 0 for m in minors)
        eig = self.eigenvalues()
        by_eig = bool(eig.min() > tol)
        if by_minors != by_eig and abs(eig.min()) > tol:
            bad = next((i + 1 for i, m in enumerate(minors) if not m > 0), None)
            raise DefinitenessError(
                f"minor test ({by_minors}) and eigenvalue test ({by_eig}) disagree; "
                f"min eigenvalue {eig.min():.3e}",
                minor=bad,
            )
        return by_eig

    def is_positive_semidefinite(self, tol: float = DEFINITENESS_TOL) -> bool:
        return bool(self.eigenvalues().min() >= -tol)

    def embed(self, positions: Sequence[int], d: int) -> "QuadraticForm":
        """Pull back to R^d by reading variable ``i`` from coordinate ``positions[i]``."""
        zero = Fraction(0) if self.exact else 0.0
        m = [[zero] * d for _ in range(d)]
        for i, pi in enumerate(positions):
            for j, pj in enumerate(positions):
                m[pi][pj] += self._m[i, j]
        return _form_for_dim(d)(m)

    def __eq__(self, other):
        return isinstance(other, QuadraticForm) and other.d == self.d and bool(
            np.all(self._m == other._m)
        )

    def __repr__(self):
        rows = ", ".join("[" + ", ".join(str(v) for v in row) + "]" for row in self._m)
        return f"{type(self).__name__}([{rows}])"


class QuadraticForm2(QuadraticForm):
    dim = 2


class QuadraticForm3(QuadraticForm):
    dim = 3


def _form_for_dim(d: int):
    return {2: QuadraticForm2, 3: QuadraticForm3}.get(d, QuadraticForm)


def _exact_det(m) -> Fraction:
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    return sum(
        (-1) ** j * m[0, j] * _exact_det(np.delete(np.delete(m, 0, 0), j, 1)) for j in range(n)
    )


def coefficient_residual(lhs: QuadraticForm, rhs: QuadraticForm):
    """Max absolute coefficient difference; exact when both sides are exact."""
    if lhs.exact and rhs.exact:
        return max(abs(v) for v in (lhs._m - rhs._m).flat)
    return float(np.max(np.abs(lhs.matrix - rhs.matrix)))


def gamma_k(k: int) -> QuadraticForm:
    """Pairing form of the BDFk left-hand side with the last backward difference.

    Variable x_i stands for the backward difference ``i - 1`` steps back, so
    the j-th backward difference of the newest state is
    ``sum_i (-1)^i C(j-1, i) x_{i+1}``.
    """
    check_order(k)
    terms: dict[tuple[int, int], Fraction] = {}
    for j in range(1, k + 1):
        for i, w in enumerate(difference_coefficients(j - 1)):
            terms[(0, i)] = terms.get((0, i), Fraction(0)) + Fraction(w, j)
    return QuadraticForm.from_polynomial(terms, d=k)


GAMMA3 = gamma_k(3)


@dataclass(frozen=True)
class CholeskyParam:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"Cholesky parameters need a > 0 and b > 0, got a={self.a}, b={self.b}")

    @property
    def in_omega(self) -> bool:
        return self.b > self.a

    def form(self) -> QuadraticForm2:
        a, b, c = self.a, self.b, self.c
        return QuadraticForm2([[b * b + c * c, a * c], [a * c, a * a]])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)


def cholesky2(q: QuadraticForm2) -> CholeskyParam:
    """Cholesky data of ``(x1, x2) -> q(x2, x1)``.

    The swapped form is factored because the x2^2 coefficient is the first
    pivot in the parametrization.
    """
    q22, q12, q11 = (float(q.entry(1, 1)), float(q.entry(0, 1)), float(q.entry(0, 0)))
    if not q22 > 0:
        raise DefinitenessError(
            f"first leading minor (x2^2 coefficient) is {q22:.6g} <= 0", minor=1
        )
    schur = q11 - q12 * q12 / q22
    if not schur > 0:
        raise DefinitenessError(
            f"second leading minor (determinant) is {schur * q22:.6g} <= 0", minor=2
        )
    a = math.sqrt(q22)
    return CholeskyParam(a=a, b=math.sqrt(schur), c=q12 / a)


def f_eval(p: CholeskyParam) -> float:
    """x1^2 pivot of the Gauss reduction of gamma_3 - q + q(shift)."""
    a, b, c = p.a, p.b, p.c
    gap = b * b - a * a
    if gap == 0:
        raise DomainError("f is undefined on the boundary b = a of Omega")
    delta = 7.0 / 6.0 + 2.0 * a * c + c / (3.0 * a)
    return 11.0 / 6.0 - delta * delta / (4.0 * gap) - (b * b + c * c + 1.0 / (36.0 * a * a))


def f_of_form(q: QuadraticForm2):
    """``f`` written through the coefficients of ``q`` instead of (a, b, c).

    With a^2 = q22, a c = q12 and b^2 + c^2 = q11 every term of f is rational
    in the coefficients, so exact forms give an exact value.
    """
    one = Fraction(1) if q.exact else 1.0
    q11, q12, q22 = q.entry(0, 0), q.entry(0, 1), q.entry(1, 1)
    if not q22 > 0:
        raise DomainError("q must have a positive x2^2 coefficient")
    gap = q11 - q12 * q12 / q22 - q22
    if gap == 0:
        raise DomainError("f is undefined on the boundary b = a of Omega")
    delta = one * 7 / 6 + 2 * q12 + q12 / (3 * q22)
    return one * 11 / 6 - delta * delta / (4 * gap) - (q11 + one / (36 * q22))


def f_vectorized(a, b, c) -> np.ndarray:
    a, b, c = np.asarray(a, float), np.asarray(b, float), np.asarray(c, float)
    delta = 7.0 / 6.0 + 2.0 * a * c + c / (3.0 * a)
    return 11.0 / 6.0 - delta**2 / (4.0 * (b * b - a * a)) - (b * b + c * c + 1.0 / (36.0 * a * a))


def g_eval(a: float) -> float:
    """f on the boundary b = a with the x1 x2 cross term cancelled."""
    if not a > 0:
        raise DomainError(f"g is defined for a > 0, got {a}")
    return 11.0 / 6.0 - a * a - 49.0 / (36.0 * (2.0 * a + 1.0 / (3.0 * a)) ** 2) - 1.0 / (36.0 * a * a)


def g_prime(a: float) -> float:
    if not a > 0:
        raise DomainError(f"g is defined for a > 0, got {a}")
    a2 = a * a
    num = (6 * a2 - 1) * (36 * a2 * a2 + 33 * a2 + 1) * (36 * a2 * a2 - 9 * a2 + 1)
    return -num / (18.0 * (6 * a2 + 1) ** 3 * a2 * a)


def boundary_c(a: float) -> float:
    """The c that cancels delta at b = a."""
    return -7.0 / (6.0 * (2.0 * a + 1.0 / (3.0 * a)))


class GaussReduction(NamedTuple):
    squares: list[tuple[float, tuple[float, float, float]]]
    beta_term: float

    def form(self) -> QuadraticForm3:
        return QuadraticForm.from_squares(self.squares, 3)


def r3_form(q: QuadraticForm2) -> QuadraticForm3:
    """gamma_3(x) - q(x1, x2) + q(x2, x3)."""
    g = GAMMA3 if q.exact else GAMMA3.to_float()
    return g - q.embed((0, 1), 3) + q.embed((1, 2), 3)


def gauss_reduce_r3(p: CholeskyParam) -> GaussReduction:
    """Write r_3 for the form with Cholesky data ``p`` as three weighted squares.

    Squares are returned as ``(weight, (l1, l2, l3))`` meaning
    ``weight * (l1 x1 + l2 x2 + l3 x3)^2``; the last one is ``f x1^2``.
    """
    if not p.in_omega:
        raise OmegaMembershipError(f"need b > a, got a={p.a}, b={p.b}")
    a, b, c = p.a, p.b, p.c
    gap = b * b - a * a
    delta = 7.0 / 6.0 + 2.0 * a * c + c / (3.0 * a)
    fv = f_eval(p)
    squares = [
        (1.0, (1.0 / (6.0 * a), c, a)),
        (gap, (-delta / (2.0 * gap), 1.0, 0.0)),
        (fv, (1.0, 0.0, 0.0)),
    ]
    return GaussReduction(squares=squares, beta_term=fv)


def lift(q: QuadraticForm, vectors) -> float:
    """Evaluate ``sum_ij a_ij <V_i, V_j>`` for ``d`` vectors in R^M."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if np.ndim(vectors) == 1:
        V = V.T
    if V.shape[0] != q.d:
        raise ShapeError(f"form has arity {q.d}, got {V.shape[0]} vectors")
    gram = V @ V.T
    return float(np.sum(q.matrix * gram))


@dataclass
class Decomposition:
    """Certificate ``gamma_3 = q(x1,x2) - q(x2,x3) + r_tilde + beta x1^2``."""

    q: QuadraticForm2
    r_tilde: QuadraticForm3
    beta: float | Fraction
    param: CholeskyParam | None = None
    meta: dict = field(default_factory=dict)

    def rhs(self) -> QuadraticForm3:
        exact = self.q.exact and self.r_tilde.exact and _is_exact(self.beta)
        if exact:
            e1 = QuadraticForm3([[Fraction(self.beta), 0, 0], [0, 0, 0], [0, 0, 0]])
            return self.q.embed((0, 1), 3) - self.q.embed((1, 2), 3) + self.r_tilde + e1
        e1 = QuadraticForm3(np.diag([float(self.beta), 0.0, 0.0]))
        q = self.q.to_float()
        return q.embed((0, 1), 3) - q.embed((1, 2), 3) + self.r_tilde.to_float() + e1

    def residual(self):
        """Coefficient-wise identity residual; exact zero for exact certificates."""
        lhs = GAMMA3 if self.rhs().exact else GAMMA3.to_float()
        return coefficient_residual(lhs, self.rhs())

    def float_residual(self) -> float:
        rhs = self.rhs()
        return float(np.max(np.abs(GAMMA3.matrix - rhs.matrix)))

    def check(self) -> dict:
        """Numbers that certify the decomposition."""
        return {
            "beta": float(self.beta),
            "identity_residual": float(self.residual()),
            "q_minors": [float(m) for m in self.q.leading_minors()],
            "q_eigenvalues": self.q.eigenvalues().tolist(),
            "r_minors": [float(m) for m in self.r_tilde.leading_minors()],
            "r_eigenvalues": self.r_tilde.eigenvalues().tolist(),
            "q_positive_definite": self.q.is_positive_definite(),
            "r_positive_definite": self.r_tilde.is_positive_definite(),
            "r_positive_semidefinite": self.r_tilde.is_positive_semidefinite(),
        }


def optimal_decomposition() -> Decomposition:
    """The exact certificate at beta = 95/96; its remainder is only semidefinite."""
    s = Fraction(1, 6)
    q = QuadraticForm.from_squares([(s, (Fraction(-7, 4), 1)), (s, (1, 0))], 2)
    r = QuadraticForm.from_squares([(s, (1, Fraction(-7, 4), 1))], 3)
    return Decomposition(q=q, r_tilde=r, beta=BETA3, meta={"construction": "closed form"})


def classical_decomposition() -> Decomposition:
    """The beta = 0 certificate q = 5/12 x1^2 + 1/6 (x1 - x2)^2 (f = 5/6 at its data)."""
    q = QuadraticForm.from_squares([(Fraction(5, 12), (1, 0)), (Fraction(1, 6), (1, -1))], 2)
    r = QuadraticForm.from_squares(
        [
            (Fraction(5, 6), (1, 0, 0)),
            (Fraction(1, 4), (1, -1, 0)),
            (Fraction(1, 6), (1, -1, 1)),
        ],
        3,
    )
    return Decomposition(q=q, r_tilde=r, beta=Fraction(0), meta={"construction": "classical"})


def _segment_point(t: float) -> CholeskyParam:
    return CholeskyParam(*(p0 + t * (ps - p0) for p0, ps in zip(P0, P_STAR)))


def decompose(beta, *, max_bisect: int = 200) -> Decomposition:
    """A certificate for ``beta`` with q and r_tilde positive definite when beta < 95/96.

    Walks the segment from P0 (f = 5/6) towards the optimal boundary point
    P*, where f increases to 95/96, and stops where f reaches the midpoint
    between ``beta`` and 95/96 so that the x1^2 weight left in r_tilde stays
    bounded away from zero.
    """
    beta_f = float(beta)
    if beta_f < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    if _is_exact(beta) and Fraction(beta) == BETA3 or abs(beta_f - float(BETA3)) <= 4e-16:
        return optimal_decomposition()
    if beta_f > float(BETA3):
        raise InfeasibleError(
            f"beta = {beta_f!r} exceeds the optimal constant beta_3 = 95/96 = {float(BETA3)!r}"
        )
    target = 0.5 * (beta_f + float(BETA3))
    f_at = lambda t: f_eval(_segment_point(t))

    lo, hi = 0.0, None
    if f_at(0.0) >= target:
        t = 0.0
    else:
        for m in range(1, 60):
            cand = 1.0 - 2.0**-m
            if f_at(cand) >= target:
                hi = cand
                break
            lo = cand
        if hi is None:
            raise OptimizationError(f"no segment point reaches f >= {target!r}")
        for _ in range(max_bisect):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if f_at(mid) >= target:
                hi = mid
            else:
                lo = mid
        t = hi

    p = _segment_point(t)
    red = gauss_reduce_r3(p)
    squares = red.squares[:2] + [(red.beta_term - beta_f, (1.0, 0.0, 0.0))]
    r_tilde = QuadraticForm.from_squares(squares, 3)
    return Decomposition(
        q=p.form(),
        r_tilde=r_tilde,
        beta=beta,
        param=p,
        meta={"construction": "segment continuation", "t": t, "f": red.beta_term},
    )


@dataclass
class MaximizeResult:
    beta_star: float
    argmax: tuple[float, float, float]
    trace: list[dict]
    cross_check: float

    @property
    def gap(self) -> float:
        return abs(self.beta_star - float(BETA3))


def maximize_f(
    *,
    grid_points: int = 2001,
    starts: int = 8,
    seed: int = 0,
    xtol: float = 1e-12,
    cross_check_tol: float = 1e-6,
) -> MaximizeResult:
    """Numerically recover sup f over Omega and its maximizer.

    The boundary reduction g(a) is searched on a coarse grid over the a-range
    that any maximizing sequence must stay in, then refined with a bounded
    scalar minimizer.  Independently, f itself is maximized from several
    random starts with b = a + exp(s) so the search can only approach the
    boundary from inside Omega.  Both values must agree to ``cross_check_tol``.
    """
    trace: list[dict] = []
    lo, hi = A_BOUNDS
    grid = np.linspace(lo, hi, grid_points)
    gvals = np.array([g_eval(a) for a in grid])
    i = int(np.argmax(gvals))
    trace.append({"stage": "grid", "points": grid_points, "a": float(grid[i]), "value": float(gvals[i])})

    left, right = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    res = optimize.minimize_scalar(
        lambda a: -g_eval(a), bounds=(left, right), method="bounded", options={"xatol": xtol}
    )
    if not res.success:
        raise OptimizationError("bounded refinement of g did not converge", best=(grid[i], gvals[i]))
    a_star = float(res.x)
    beta_star = g_eval(a_star)
    trace.append({"stage": "refine", "a": a_star, "value": beta_star, "nfev": int(res.nfev)})

    rng = np.random.default_rng(seed)

    def neg_f(z):
        a = math.exp(z[0])
        b = a + math.exp(z[1])
        try:
            val = f_eval(CholeskyParam(a, b, z[2]))
        except DomainError:
            return 1e300
        return -val if math.isfinite(val) else 1e300

    best = None
    for s in range(starts):
        z0 = np.array(
            [math.log(rng.uniform(lo, hi)), math.log(rng.uniform(0.05, 1.0)), rng.uniform(-1.2, 1.2)]
        )
        r = optimize.minimize(
            neg_f, z0, method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 40000, "maxfev": 80000},
        )
        a = math.exp(r.x[0])
        rec = {"stage": "multistart", "start": s, "value": -float(r.fun),
               "a": a, "b": a + math.exp(r.x[1]), "c": float(r.x[2]), "nit": int(r.nit)}
        trace.append(rec)
        # Starts are reduced in index order so ties resolve deterministically.
        if best is None or rec["value"] > best["value"]:
            best = rec
    cross = best["value"]
    if cross > beta_star + 1e-12:
        raise OptimizationError(
            f"interior search found f = {cross!r} above the boundary maximum {beta_star!r}",
            best=best,
        )
    if beta_star - cross > cross_check_tol:
        raise OptimizationError(
            f"interior search stalled at {cross!r}, {beta_star - cross:.3e} below the boundary value",
            best=best,
        )
    argmax = (a_star, a_star, boundary_c(a_star))
    return MaximizeResult(beta_star=beta_star, argmax=argmax, trace=trace, cross_check=cross)


def sample_omega(n: int, seed: int = 0, chunk: int = 250_000):
    """Yield chunks of (a, b, c) in Omega.

    Half of each chunk is spread log-uniformly in a, b - a and |c|; the
    other half crowds the optimal boundary point, with b - a down to 1e-12.
    """
    rng = np.random.default_rng(seed)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        wide, near = m - m // 2, m // 2
        a = np.concatenate([10.0 ** rng.uniform(-3, 1.5, wide), P_STAR[0] + rng.uniform(-0.05, 0.05, near)])
        gap = np.concatenate([10.0 ** rng.uniform(-9, 1.5, wide), 10.0 ** rng.uniform(-12, -1, near)])
        c = np.concatenate([
            np.sign(rng.uniform(-1, 1, wide)) * 10.0 ** rng.uniform(-4, 1.5, wide),
            P_STAR[2] + rng.uniform(-0.05, 0.05, near),
        ])
        yield a, a + gap, c
        done += m


def sampled_sup_f(n: int = 1_000_000, seed: int = 0) -> tuple[float, tuple[float, float, float]]:
    """Largest f over ``n`` random points of Omega and where it occurred."""
    best, where = -np.inf, None
    for a, b, c in sample_omega(n, seed):
        vals = f_vectorized(a, b, c)
        j = int(np.argmax(vals))
        if vals[j] > best:
            best, where = float(vals[j]), (float(a[j]), float(b[j]), float(c[j]))
    return best, where


def default_beta(cf_dt: float, margin: float = 1e-6) -> float:
    """Midpoint of the admissible range [c_F dt / 2, 95/96), kept below 95/96 - margin when possible."""
    lo, hi = 0.5 * float(cf_dt), float(BETA3)
    if lo >= hi:
        raise InfeasibleError(
            f"c_F dt / 2 = {lo!r} is not below beta_3 = 95/96: no Lyapunov certificate exists"
        )
    return max(lo, min(0.5 * (lo + hi), hi - margin))

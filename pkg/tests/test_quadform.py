from fractions import Fraction
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from bdfstab import constants
from bdfstab.errors import DefinitenessError, DomainError, InfeasibleError, OmegaMembershipError, ShapeError
from bdfstab.quadform import (
    BETA3, GAMMA3, P0, P_STAR, CholeskyParam, QuadraticForm, QuadraticForm2, QuadraticForm3,
    classical_decomposition, cholesky2, decompose, default_beta, f_eval, f_of_form, f_vectorized,
    g_eval, g_prime, gamma_k, gauss_reduce_r3, lift, maximize_f, optimal_decomposition, r3_form,
    sampled_sup_f,
)


def beta_oracle(p: CholeskyParam) -> float:
    """Largest beta with gamma_3 - q(x1,x2) + q(x2,x3) - beta x1^2 >= 0, by eigenvalue bisection."""
    q = p.form().matrix
    Q = np.zeros((3, 3))
    Q[:2, :2] -= q
    Q[1:, 1:] += q
    base = GAMMA3.matrix + Q
    e1 = np.diag([1.0, 0.0, 0.0])
    lo, hi = -1.0, 2.0
    while np.linalg.eigvalsh(base - lo * e1)[0] < 0:
        lo *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.eigvalsh(base - mid * e1)[0] >= 0:
            lo = mid
        else:
            hi = mid
    return lo


omega_points = st.tuples(
    st.floats(0.05, 2.0), st.floats(1e-3, 2.0), st.floats(-2.0, 2.0)
).map(lambda t: CholeskyParam(t[0], t[0] + t[1], t[2]))


# ---- forms


def test_gamma3_coefficients():
    m = GAMMA3.exact_matrix
    assert m[0, 0] == Fraction(11, 6)
    assert 2 * m[0, 1] == Fraction(-7, 6)
    assert 2 * m[0, 2] == Fraction(1, 3)
    assert m[1, 1] == m[2, 2] == m[1, 2] == 0


def test_gamma_k_matches_symbolic_expansion():
    # <sum_j (1/j) d^j U, dU> with d^j expanded in the backward differences x1, x2, ...
    x = sp.symbols("x1:4")
    for k in constants.ORDERS:
        diffs = [x[0]]
        for j in range(2, k + 1):
            prev = diffs[-1]
            shifted = prev.subs({x[i]: x[i + 1] for i in range(2)}, simultaneous=True)
            diffs.append(sp.expand(prev - shifted))
        poly = sp.Poly(sp.expand(x[0] * sum(sp.Rational(1, j) * d for j, d in enumerate(diffs, 1))), *x[:k])
        form = gamma_k(k)
        for i in range(k):
            for j in range(i, k):
                mono = [0] * k
                mono[i] += 1
                mono[j] += 1
                want = Fraction(str(poly.coeff_monomial(tuple(mono))))
                got = form.entry(i, j) * (1 if i == j else 2)
                assert got == want


def test_form_rejects_non_square():
    with pytest.raises(ShapeError):
        QuadraticForm([[1, 2, 3]])
    with pytest.raises(ShapeError):
        QuadraticForm2(np.eye(3))


def test_form_symmetrizes_from_upper_triangle():
    f = QuadraticForm([[1, 2], [99, 3]])
    assert f.entry(1, 0) == f.entry(0, 1) == 2


def test_exact_minors_match_determinants():
    rng = np.random.default_rng(1)
    for _ in range(20):
        m = rng.integers(-5, 6, (3, 3))
        m = m + m.T
        f = QuadraticForm3([[Fraction(int(v)) for v in row] for row in m])
        minors = f.leading_minors()
        for i, mi in enumerate(minors, 1):
            assert isinstance(mi, Fraction)
            assert float(mi) == pytest.approx(np.linalg.det(m[:i, :i]), abs=1e-9)


def test_definiteness():
    assert QuadraticForm(np.eye(3)).is_positive_definite()
    assert not QuadraticForm(np.diag([1.0, 0.0])).is_positive_definite()
    assert QuadraticForm(np.diag([1.0, 0.0])).is_positive_semidefinite()
    assert not QuadraticForm(np.diag([1.0, -1e-3])).is_positive_semidefinite()


def test_from_squares_evaluates_as_sum_of_squares():
    f = QuadraticForm.from_squares([(Fraction(1, 6), (1, Fraction(-7, 4), 1))], 3)
    assert f(1, 2, 3) == Fraction(1, 6) * (1 - Fraction(7, 2) + 3) ** 2


def test_lift_equals_form_on_scalars_and_sums_on_vectors():
    q = optimal_decomposition().q.to_float()
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=5), rng.normal(size=5)
    assert lift(q, [u, v]) == pytest.approx(sum(q(a, b) for a, b in zip(u, v)), rel=1e-13)


# ---- Cholesky parametrization and f


@given(omega_points)
def test_cholesky_roundtrip(p):
    back = cholesky2(p.form())
    assert back.as_tuple() == pytest.approx(p.as_tuple(), rel=1e-9, abs=1e-12)


def test_cholesky_reports_failing_minor():
    with pytest.raises(DefinitenessError) as e1:
        cholesky2(QuadraticForm2([[1.0, 0.0], [0.0, -1.0]]))
    assert e1.value.minor == 1
    with pytest.raises(DefinitenessError) as e2:
        cholesky2(QuadraticForm2([[1.0, 1.0], [1.0, 1.0]]))
    assert e2.value.minor == 2


@settings(max_examples=60, deadline=None)
@given(omega_points)
def test_f_matches_psd_oracle(p):
    assert f_eval(p) == pytest.approx(beta_oracle(p), abs=1e-9 * (1 + abs(f_eval(p))))


@given(omega_points)
def test_f_never_exceeds_beta3(p):
    assert f_eval(p) <= float(BETA3) + 1e-12


@given(omega_points)
def test_f_of_form_agrees_with_f_eval(p):
    assert f_of_form(p.form()) == pytest.approx(f_eval(p), rel=1e-9, abs=1e-9)


def test_f_vectorized_agrees():
    pts = [P0, P_STAR[:1] + (P_STAR[1] + 0.1,) + P_STAR[2:], (0.3, 1.1, -0.2)]
    a, b, c = map(np.array, zip(*pts))
    np.testing.assert_allclose(f_vectorized(a, b, c), [f_eval(CholeskyParam(*p)) for p in pts], rtol=1e-14)


def test_f_undefined_on_boundary():
    with pytest.raises(DomainError):
        f_eval(CholeskyParam(0.5, 0.5, 0.0))


def test_baseline_witness_is_exactly_five_sixths():
    q = classical_decomposition().q
    assert q.exact
    assert f_of_form(q) == Fraction(5, 6)
    assert f_eval(CholeskyParam(*P0)) == pytest.approx(5 / 6, abs=1e-14)


def test_f_increases_towards_optimum():
    ts = np.linspace(0, 0.999, 50)
    vals = [f_eval(CholeskyParam(*(p + t * (s - p) for p, s in zip(P0, P_STAR)))) for t in ts]
    assert np.all(np.diff(vals) > 0)


# ---- g


def test_g_matches_symbolic():
    a = sp.symbols("a", positive=True)
    g = sp.Rational(11, 6) - a**2 - sp.Rational(49, 36) / (2 * a + 1 / (3 * a)) ** 2 - 1 / (36 * a**2)
    assert sp.simplify(g.subs(a, 1 / sp.sqrt(6))) == sp.Rational(95, 96)
    assert sp.simplify(sp.diff(g, a).subs(a, 1 / sp.sqrt(6))) == 0
    gp = sp.lambdify(a, sp.diff(g, a))
    gf = sp.lambdify(a, g)
    for x in (0.2, 0.4, 0.7, 1.3):
        assert g_eval(x) == pytest.approx(gf(x), rel=1e-13)
        assert g_prime(x) == pytest.approx(gp(x), rel=1e-11, abs=1e-13)


def test_g_domain():
    with pytest.raises(DomainError):
        g_eval(0.0)
    with pytest.raises(DomainError):
        g_prime(-1.0)


# ---- Gauss reduction


def test_gauss_reduction_reproduces_r3():
    p = CholeskyParam(0.4, 0.9, -0.3)
    red = gauss_reduce_r3(p)
    np.testing.assert_allclose(red.form().matrix, r3_form(p.form()).matrix, atol=1e-13)
    assert red.beta_term == pytest.approx(f_eval(p), rel=1e-13)


def test_gauss_reduction_needs_omega():
    with pytest.raises(OmegaMembershipError):
        gauss_reduce_r3(CholeskyParam(0.9, 0.4, 0.0))


# ---- decompositions


def test_optimal_decomposition_identity_exact():
    dec = optimal_decomposition()
    assert dec.beta == Fraction(95, 96)
    assert dec.residual() == 0
    assert dec.float_residual() <= 1e-14
    assert dec.q.is_positive_definite()
    ev = dec.r_tilde.eigenvalues()
    assert dec.r_tilde.is_positive_semidefinite()
    assert np.sum(ev > 1e-12) == 1


def test_classical_decomposition_identity_exact():
    dec = classical_decomposition()
    assert dec.residual() == 0
    assert dec.q.is_positive_definite() and dec.r_tilde.is_positive_definite()


@pytest.mark.parametrize("beta", [0.0, 0.3, Fraction(5, 6), 0.9, 0.98, float(BETA3) - 1e-6])
def test_decompose_certifies(beta):
    dec = decompose(beta)
    assert float(dec.residual()) <= 1e-14
    assert dec.q.is_positive_definite()
    assert dec.r_tilde.is_positive_definite(tol=0.0)


def test_decompose_at_beta3_is_closed_form():
    assert decompose(Fraction(95, 96)).residual() == 0


def test_decompose_rejects_out_of_range():
    with pytest.raises(InfeasibleError):
        decompose(0.99)
    with pytest.raises(DomainError):
        decompose(-0.1)


def test_default_beta_rule():
    for cf_dt in (0.0, 0.5, 1.5, 1.9, 1.97):
        lo, hi = cf_dt / 2, 95 / 96
        b = default_beta(cf_dt)
        assert lo <= b < hi
        assert b == pytest.approx(max(lo, min((lo + hi) / 2, hi - 1e-6)))
    with pytest.raises(InfeasibleError):
        default_beta(95 / 48)


# ---- maximization


def test_maximize_f_recovers_beta3():
    res = maximize_f(seed=3)
    assert res.gap <= 1e-9
    assert abs(res.cross_check - 95 / 96) <= 1e-6
    assert np.max(np.abs(np.array(res.argmax) - np.array(P_STAR))) <= 1e-6


def test_sampled_sup_below_beta3():
    best, where = sampled_sup_f(20_000, seed=5)
    assert best <= 95 / 96 + 1e-12
    assert best > 0.98
    assert where[1] > where[0]


def test_beta_constant_value():
    assert BETA3 == Fraction(95, 96)
    assert math.isclose(float(BETA3), 0.9895833333333334)

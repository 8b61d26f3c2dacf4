"""The eleven acceptance criteria, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; the PASS/FAIL lines
are repeated in the terminal summary.
"""
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from bdfstab import constants
from bdfstab.cli import Output, cmd_certify_beta3
from bdfstab.integrator import SchemeConfig, bootstrap, order_study, run, solve_step_multivalued, solve_step_unique
from bdfstab.lyapunov import barrier_audit, budget_check, descent_audit, multivalued_branches, omega_diagnostics
from bdfstab.objective import allen_cahn_1d, concave_cap, double_well, polynomial, quadratic
from bdfstab.quadform import (
    BETA3, classical_decomposition, default_beta, f_of_form, f_vectorized, optimal_decomposition, sample_omega,
)

SQRT6 = np.sqrt(6.0)
X_STAR = np.array([1 / SQRT6, 1 / SQRT6, -7 / (4 * SQRT6)])


def test_01_beta3_certification(acceptance, tmp_path):
    t0 = time.perf_counter()
    code = cmd_certify_beta3(seed=0, out=Output(str(tmp_path), "json"))
    elapsed = time.perf_counter() - t0
    rep = json.loads((tmp_path / "certify_beta3.json").read_text())
    gap = abs(rep["beta3_estimate"] - 95 / 96)
    dist = float(np.max(np.abs(np.array(rep["argmax"]) - X_STAR)))
    ok = code == 0 and gap <= 1e-9 and dist <= 1e-6 and elapsed < 10
    assert acceptance(1, "beta_3 certification", ok,
                      f"gap {gap:.2e} <= 1e-9, argmax dist {dist:.2e} <= 1e-6, {elapsed:.2f}s < 10s")


def test_02_closed_form_identity(acceptance):
    dec = optimal_decomposition()
    exact = dec.residual()
    flt = dec.float_residual()
    ok = exact == 0 and isinstance(exact, Fraction) and flt <= 1e-14
    assert acceptance(2, "closed-form decomposition identity", ok, f"exact residual {exact}, float {flt:.1e}")


def test_03_baseline_five_sixths(acceptance):
    val = f_of_form(classical_decomposition().q)
    ok = isinstance(val, Fraction) and val == Fraction(5, 6)
    assert acceptance(3, "baseline f = 5/6", ok, f"f = {val} (exact rational)")


def test_04_supremum_property(acceptance):
    t0 = time.perf_counter()
    worst, count = -np.inf, 0
    for a, b, c in sample_omega(1_000_000, seed=0):
        vals = f_vectorized(a, b, c)
        worst = max(worst, float(vals.max()))
        count += len(vals)
    elapsed = time.perf_counter() - t0
    ok = count == 1_000_000 and worst <= 95 / 96 + 1e-12 and elapsed < 30
    assert acceptance(4, "supremum property", ok,
                      f"max f over {count} samples = {worst!r} <= 95/96 + 1e-12, {elapsed:.2f}s < 30s")


@pytest.fixture(scope="module")
def allen_cahn_run():
    t0 = time.perf_counter()
    N = 64
    F = allen_cahn_1d(N, 1 / N, 64.0)
    cf_dt = 1.5
    cfg = SchemeConfig(k=3, dt=cf_dt / F.c_F, max_steps=2000, stop_tol=None)
    U0 = 0.3 + 0.5 * np.cos(2 * np.pi * np.arange(N) / N)
    traj = run(F, cfg, bootstrap(F, cfg, U0))
    beta = default_beta(cf_dt)
    audit = descent_audit(traj, beta, None, F)
    omega = omega_diagnostics(traj, F)
    return F, traj, audit, omega, time.perf_counter() - t0


def test_05_descent_audit(acceptance, allen_cahn_run):
    F, traj, audit, omega, elapsed = allen_cahn_run
    steps = len(traj) - 3
    ok = (steps == 2000 and audit.margins_ok() and audit.nonincreasing() and omega.final_diff <= 1e-8
          and omega.tail_diameter <= 1e-8 and elapsed < 60)
    assert acceptance(5, "Allen-Cahn descent audit", ok,
                      f"{steps} steps, min margin {audit.margins.min():.2e} >= -1e-10 rel, "
                      f"nonincreasing {audit.nonincreasing()}, final |dU| {omega.final_diff:.1e}, "
                      f"tail diameter {omega.tail_diameter:.1e}, {elapsed:.2f}s < 60s")


def test_06_budget_inequality(acceptance, allen_cahn_run):
    F, traj, audit, omega, _ = allen_cahn_run
    bc = budget_check(audit, F.lower_bound)
    ok = bc.sum_R <= bc.budget + 1e-8
    assert acceptance(6, "budget inequality", ok, f"sum R/dt = {bc.sum_R!r} <= {bc.budget!r} + 1e-8")


def test_07_barrier_exactness(acceptance):
    details, ok = [], True
    for k, lam in zip(constants.ORDERS, (Fraction(2), Fraction(4), Fraction(20, 3))):
        rep = barrier_audit(k, Fraction(1), 1000)
        steps = len(rep.trajectory) - k
        good = (rep.lambda_k == lam and rep.exact_residual_zero and rep.max_float_residual <= 1e-13
                and rep.diff_norm_deviation <= 1e-12 and steps == 1000)
        ok &= good
        details.append(f"k={k}: lambda={rep.lambda_k}, residual {rep.max_float_residual:.1e}, "
                       f"| |dU|-2 | {rep.diff_norm_deviation:.1e}")
    assert acceptance(7, "barrier exactness", ok, "; ".join(details))


def test_08_regime_thresholds(acceptance):
    want = {1: (Fraction(1), Fraction(2)), 2: (Fraction(3, 2), Fraction(2)), 3: (Fraction(11, 6), Fraction(95, 48))}
    ok = all((row["alpha_k"], row["two_beta_k"]) == want[row["k"]] for row in constants.threshold_table())
    eps = Fraction(1, 10**9)
    F = double_well(1.0)
    for k, (a, tb) in want.items():
        cases = [(a - eps, "unique"), (a, "multivalued-stable" if a < tb else "barrier"),
                 (tb - eps, "multivalued-stable" if a < tb - eps else "unique"), (tb, "barrier"),
                 (tb + eps, "barrier")]
        for x, label in cases:
            ok &= constants.regime(k, x) == label
        for x, label in [(float(a) * (1 - 1e-9), "unique"), (float(tb) * (1 + 1e-9), "barrier")]:
            ok &= SchemeConfig(k=k, dt=x).regime(F) == label
    assert acceptance(8, "regime threshold logic", ok, "alpha_k, 2 beta_k = (1, 2), (3/2, 2), (11/6, 95/48)")


def test_09_convergence_order(acceptance):
    t0 = time.perf_counter()
    F = quadratic([[1.0]])
    dts = [0.1, 0.05, 0.025, 0.0125]
    slopes = {k: order_study(F, np.array([1.0]), 1.0, dts, k).slope for k in constants.ORDERS}
    elapsed = time.perf_counter() - t0
    ok = all(abs(slopes[k] - k) <= 0.3 for k in slopes) and elapsed < 10
    assert acceptance(9, "convergence order", ok,
                      ", ".join(f"BDF{k} slope {s:.3f}" for k, s in slopes.items()) + f", {elapsed:.2f}s < 10s")


def test_10_multivalued_stability(acceptance):
    F = double_well(1.0)
    dt = 1.9
    cfg = SchemeConfig(k=3, dt=dt, max_steps=300, stop_tol=1e-10)
    assert Fraction(11, 6) <= dt * F.c_F < Fraction(95, 48)
    u0 = 0.001
    branches, sols = multivalued_branches(F, cfg, [np.array([u0])] * 3)
    # dense-grid oracle for 11/6 u + dt F'(u) = b with b = 11/6 u0
    b = 11 / 6 * u0
    x = np.linspace(-3, 3, 6_000_001)
    y = 11 / 6 * x + dt * (x**3 - x) - b
    oracle = np.sort(np.concatenate([x[np.nonzero(np.sign(y[:-1]) * np.sign(y[1:]) < 0)[0]], x[y == 0]]))
    got = np.sort([p[0] for p in sols.points])
    match = len(got) == len(oracle) and np.allclose(got, oracle, atol=1e-5)
    audits = all(br.audit.margins_ok() for br in branches)
    ok = len(branches) >= 2 and match and audits
    assert acceptance(10, "multivalued gradient stability", ok,
                      f"{len(branches)} branches (oracle {len(oracle)}), roots {np.round(got, 6).tolist()}, "
                      f"all audits pass {audits}")


def test_11_unique_regime_equivalence(acceptance):
    rng = np.random.default_rng(2024)
    poly = polynomial({(4, 0): 1.0, (0, 4): 1.0, (2, 0): -1.0, (1, 1): 0.5}, 2, box=[(-2, 2), (-2, 2)])
    makers = [
        lambda r: double_well(r.uniform(0.5, 3.0)),
        lambda r: concave_cap(r.uniform(0.5, 3.0)),
        lambda r: allen_cahn_1d(4, 1.0, r.uniform(0.5, 2.0)),
        lambda r: poly,
        lambda r: quadratic(np.diag(r.uniform(0.1, 3.0, 2))),
    ]
    worst, singletons, tol = 0.0, True, None
    for i in range(100):
        F = makers[i % len(makers)](rng)
        k = int(rng.integers(1, 4))
        alpha = float(constants.alpha(k))
        dt = rng.uniform(0.05, 0.99) * alpha / F.c_F if F.c_F > 0 else rng.uniform(0.01, 2.0)
        cfg = SchemeConfig(k=k, dt=dt)
        assert cfg.cf_dt(F) < alpha
        tol = 10 * cfg.solver_tol
        b = rng.uniform(-3, 3, F.dim)
        sols = solve_step_multivalued(F, cfg, b)
        singletons &= len(sols) == 1
        worst = max(worst, float(np.linalg.norm(sols.points[0] - solve_step_unique(F, cfg, b))))
    ok = singletons and worst <= tol
    assert acceptance(11, "unique-regime equivalence", ok,
                      f"100 pairs, all singletons {singletons}, max distance {worst:.1e} <= {tol:.0e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

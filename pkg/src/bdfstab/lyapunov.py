"""Discrete Lyapunov functional of the BDF3 scheme and trajectory audits.

For a certificate ``(q, r, beta)`` of the BDF3 pairing form and
``c_F dt / 2 <= beta < 95/96``, every BDF3 sequence satisfies

    H(U^{n+3}) + R(dU^{n+3}, dU^{n+2}, dU^{n+1}) / dt <= H(U^{n+2}),
    H(U^m) = F(U^m) + Q(dU^m, dU^{m-1}) / dt,

with Q, R the lifts of q, r to vectors.  The audits below measure the
slack in that inequality step by step, its telescoped sum, and what the
tail of a trajectory looks like.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial.distance import pdist

from . import constants
from .errors import PreconditionError
from .integrator import SchemeConfig, Trajectory, bdf_residual, dumps, run, solve_step_multivalued, bdf_rhs
from .objective import SemiconvexFunction, barrier_function
from .quadform import BETA3, Decomposition, decompose, default_beta, lift

MARGIN_TOL = 1e-10
BUDGET_TOL = 1e-8


@dataclass(frozen=True)
class LyapunovState:
    U: np.ndarray
    dU1: np.ndarray
    dU2: np.ndarray

    @classmethod
    def from_trajectory(cls, traj: Trajectory, m: int) -> "LyapunovState":
        if m < 2:
            raise PreconditionError("the lifted state needs two backward differences (m >= 2)")
        s = traj.states
        return cls(U=s[m], dU1=s[m] - s[m - 1], dU2=s[m - 1] - s[m - 2])


def hatF(beta, dec: Decomposition, F: SemiconvexFunction, dt: float, state: LyapunovState) -> float:
    """F(U) + Q(dU1, dU2) / dt; +inf outside dom F."""
    if abs(float(dec.beta) - float(beta)) > 1e-15:
        raise PreconditionError(f"decomposition certifies beta = {float(dec.beta)!r}, not {float(beta)!r}")
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    val = F.value(state.U)
    if not math.isfinite(val):
        return math.inf
    return val + lift(dec.q, [state.dU1, state.dU2]) / dt


def check_beta(beta: float, cf_dt: float) -> None:
    """Raise unless c_F dt / 2 <= beta < 95/96."""
    lo, hi = 0.5 * cf_dt, float(BETA3)
    if lo >= hi:
        raise PreconditionError(
            f"admissible beta range [c_F dt/2, beta_3) = [{lo!r}, {hi!r}) is empty: "
            "descent cannot be certified"
        )
    if beta < lo:
        raise PreconditionError(f"beta = {beta!r} is below c_F dt / 2 = {lo!r}")
    if beta >= hi:
        raise PreconditionError(f"beta = {beta!r} is not below beta_3 = 95/96")


@dataclass
class DescentAudit:
    """Per-step record for steps m = 3..N of a BDF3 trajectory.

    ``lyapunov[i]`` is H at step ``steps[i]``; ``lyapunov_start`` is H at step 2.
    ``margins`` is H(m-1) - H(m) - R_m / dt and ``r_terms`` holds R_m / dt.
    """

    steps: np.ndarray
    lyapunov: np.ndarray
    lyapunov_start: float
    margins: np.ndarray
    r_terms: np.ndarray
    w_norms: np.ndarray
    aux_slack: np.ndarray
    beta: float
    dt: float
    cf_dt: float
    regime: str
    forced: bool = False

    @property
    def cumulative_r(self) -> np.ndarray:
        return np.cumsum(self.r_terms)

    def margin_floor(self) -> np.ndarray:
        return -MARGIN_TOL * (1.0 + np.abs(self.lyapunov))

    def margins_ok(self) -> bool:
        return bool(np.all(self.margins >= self.margin_floor()))

    def aux_ok(self) -> bool:
        return bool(np.all(self.aux_slack >= -MARGIN_TOL * (1.0 + np.abs(self.lyapunov))))

    def nonincreasing(self) -> bool:
        seq = np.concatenate([[self.lyapunov_start], self.lyapunov])
        return bool(np.all(np.diff(seq) <= MARGIN_TOL * (1.0 + np.abs(seq[1:]))))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lyapunov", "margin", "r_term", "w_norm", "cumulative_r"])
            for row in zip(self.steps, self.lyapunov, self.margins, self.r_terms, self.w_norms, self.cumulative_r):
                w.writerow([int(row[0]), *[format(float(x), ".17g") for x in row[1:]]])

    def summary(self) -> dict:
        return {
            "beta": self.beta,
            "dt": self.dt,
            "cf_dt": self.cf_dt,
            "regime": self.regime,
            "forced": self.forced,
            "steps": int(len(self.steps)),
            "min_margin": float(self.margins.min()) if len(self.margins) else None,
            "margins_ok": self.margins_ok(),
            "nonincreasing": self.nonincreasing(),
            "aux_inequality_ok": self.aux_ok(),
            "thresholds": [{k: str(v) for k, v in row.items()} for row in constants.threshold_table()],
        }


def descent_audit(traj: Trajectory, beta=None, dec: Decomposition | None = None,
                  F: SemiconvexFunction | None = None, *, force: bool = False) -> DescentAudit:
    """Audit the BDF3 descent inequality along ``traj``.

    Also checks the semiconvex supporting inequality
    F(U^{m-1}) >= F(U^m) - <W^m, dU^m> - c_F/2 |dU^m|^2 with the recorded
    subgradients.  ``force=True`` skips the beta precondition (diagnostics
    for runs outside the certified regime).
    """
    if F is None:
        raise PreconditionError("the energy F is required")
    if traj.k != 3:
        raise PreconditionError(f"descent audit is for BDF3 trajectories, got k={traj.k}")
    dt = float(traj.dt)
    cf_dt = F.c_F * dt
    if beta is None:
        beta = float(dec.beta) if dec is not None else default_beta(cf_dt)
    if not force:
        check_beta(float(beta), cf_dt)
    if dec is None:
        dec = decompose(beta)
    q = dec.q.to_float()
    r = dec.r_tilde.to_float()

    s = traj.states
    N = len(s) - 1
    H = lambda m: hatF(beta, dec, F, dt, LyapunovState.from_trajectory(traj, m))
    start = H(2) if N >= 2 else math.nan
    steps, lyap, margins, rterms, wn, aux = [], [], [], [], [], []
    prev = start
    for m in range(3, N + 1):
        cur = H(m)
        d1, d2, d3 = s[m] - s[m - 1], s[m - 1] - s[m - 2], s[m - 2] - s[m - 3]
        rt = lift(r, [d1, d2, d3]) / dt
        W = traj.W[m] if traj.W[m] is not None else F.gradient(s[m])
        steps.append(m)
        lyap.append(cur)
        margins.append(prev - cur - rt)
        rterms.append(rt)
        wn.append(float(np.linalg.norm(W)))
        aux.append(F.semiconvexity_slack(s[m], s[m - 1], W))
        prev = cur
    return DescentAudit(
        steps=np.array(steps, dtype=int), lyapunov=np.array(lyap), lyapunov_start=start,
        margins=np.array(margins), r_terms=np.array(rterms), w_norms=np.array(wn),
        aux_slack=np.array(aux), beta=float(beta), dt=dt, cf_dt=cf_dt,
        regime=constants.regime(3, cf_dt), forced=force,
    )


@dataclass
class BudgetCheck:
    sum_R: float
    budget: float
    ok: bool


def budget_check(audit: DescentAudit, lower_bound: float) -> BudgetCheck:
    """Sum of R_m / dt over m >= 4 against H(U^3) - inf F."""
    if not len(audit.steps):
        return BudgetCheck(0.0, math.nan, True)
    sum_R = float(np.sum(audit.r_terms[audit.steps >= 4]))
    budget = float(audit.lyapunov[0]) - float(lower_bound)
    return BudgetCheck(sum_R, budget, bool(sum_R <= budget + BUDGET_TOL * (1.0 + abs(budget))))


def telescoping_gap(audit: DescentAudit) -> float:
    """|H(3) - H(N) - sum(margins + R terms over m >= 4)|, relative to 1 + |H(3)|."""
    sel = audit.steps >= 4
    lhs = audit.lyapunov[0] - audit.lyapunov[-1]
    rhs = float(np.sum(audit.margins[sel]) + np.sum(audit.r_terms[sel]))
    return abs(lhs - rhs) / (1.0 + abs(audit.lyapunov[0]))


def tail_window(n_steps: int) -> int:
    return max(50, int(0.05 * n_steps))


@dataclass
class OmegaReport:
    window: int
    max_diff_tail: float
    final_diff: float
    w_norm_last: float
    w_norm_tail_max: float
    w_norm_tail_ratio: float
    tail_diameter: float
    diameter_sensitivity: dict = field(default_factory=dict)


def _diameter(A: np.ndarray) -> float:
    return float(pdist(A).max()) if len(A) > 1 else 0.0


def omega_diagnostics(traj: Trajectory, F: SemiconvexFunction, window: int | None = None) -> OmegaReport:
    """Criticality and single-limit indicators over the last ``window`` states."""
    A = traj.array
    n = len(A)
    w = min(window or tail_window(n), n)
    diffs = traj.diff_norms()
    tail = A[n - w:]
    wn = np.array([
        np.linalg.norm(traj.W[i] if traj.W[i] is not None else F.gradient(A[i])) for i in range(n - w, n)
    ])
    half = wn[: max(1, len(wn) // 2)]
    sens = {str(v): _diameter(A[n - min(v, n):]) for v in sorted({max(1, w // 2), w, min(2 * w, n)})}
    return OmegaReport(
        window=w,
        max_diff_tail=float(diffs[-(w - 1):].max()) if w > 1 and len(diffs) else 0.0,
        final_diff=float(diffs[-1]) if len(diffs) else 0.0,
        w_norm_last=float(wn[-1]),
        w_norm_tail_max=float(wn.max()),
        w_norm_tail_ratio=float(wn[-1] / half.max()) if half.max() > 0 else 0.0,
        tail_diameter=_diameter(tail),
        diameter_sensitivity=sens,
    )


@dataclass
class CoerciveReport:
    bounded: bool
    sup_norm: float
    sup_F: float
    bound: float


def _lyapunov_bound(traj: Trajectory, F: SemiconvexFunction, beta=None, dec=None) -> tuple[float, int]:
    """Initial value of the scheme's Lyapunov functional and the first index it bounds F from."""
    s, dt, cf_dt = traj.states, float(traj.dt), F.c_F * float(traj.dt)
    if traj.k == 3:
        if cf_dt >= 2 * float(BETA3):
            raise PreconditionError(f"c_F dt = {cf_dt!r} >= 95/48: no Lyapunov bound for BDF3")
        beta = default_beta(cf_dt) if beta is None else beta
        dec = decompose(beta) if dec is None else dec
        return hatF(beta, dec, F, dt, LyapunovState.from_trajectory(traj, 3)), 3
    if cf_dt > 2:
        raise PreconditionError(f"c_F dt = {cf_dt!r} > 2: no Lyapunov bound for BDF{traj.k}")
    if traj.k == 1:
        return F.value(s[0]), 0
    return F.value(s[1]) + float(np.sum((s[1] - s[0]) ** 2)) / (4 * dt), 1


def coercive_boundedness_check(traj: Trajectory, F: SemiconvexFunction, beta=None, dec=None) -> CoerciveReport:
    """Check sup_n F(U^n) against the initial Lyapunov value.

    For k = 1, 2 the Lyapunov functionals are F and F + |dU|^2 / (4 dt).
    """
    if not F.coercive:
        raise PreconditionError(f"{F.name} is not flagged coercive")
    if len(traj) <= traj.k:
        vals = [F.value(u) for u in traj.states]
        return CoerciveReport(True, float(np.max(np.linalg.norm(traj.array, axis=1))), max(vals), max(vals))
    bound, first = _lyapunov_bound(traj, F, beta, dec)
    vals = np.array([F.value(u) for u in traj.states[first:]])
    norms = np.linalg.norm(traj.array, axis=1)
    sup_F = float(vals.max())
    ok = bool(np.all(np.isfinite(vals)) and sup_F <= bound + MARGIN_TOL * (1 + abs(bound)))
    return CoerciveReport(ok, float(norms.max()), sup_F, float(bound))


@dataclass
class BarrierReport:
    k: int
    lambda_k: Fraction
    cf_dt: float
    regime: str
    exact_residual_zero: bool
    max_float_residual: float
    diff_norm_deviation: float
    certifiable: bool
    reason: str
    trajectory: Trajectory
    omega: OmegaReport


def barrier_audit(k: int, dt=Fraction(1), steps: int = 1000) -> BarrierReport:
    """Run BDFk on the barrier energy from alternating data and confirm the failure.

    The exact check evaluates the scheme residual of (-1)^n in rational
    arithmetic; the float check runs the actual solver (middle branch of
    the three step solutions) and measures the residual and |dU^n| - 2.
    """
    B = barrier_function(k, dt)
    dtf = float(dt)
    exact = all(
        bdf_residual(k, [Fraction((-1) ** (n + i)) for i in range(k + 1)],
                     B.derivative(Fraction((-1) ** (n + k))), Fraction(dt)) == 0
        for n in range(2)
    )
    cfg = SchemeConfig(k=k, dt=dtf, max_steps=steps, stop_tol=None)
    init = [np.array([(-1.0) ** n]) for n in range(k)]
    traj = run(B, cfg, init, selection=1)
    float_res = max(
        float(np.max(np.abs(bdf_residual(k, traj.states[m - k:m + 1], B.gradient(traj.states[m]), dtf))))
        for m in range(k, len(traj))
    )
    dev = float(np.max(np.abs(traj.diff_norms() - 2.0)))
    cf_dt = B.c_F * dtf
    regime = constants.regime(k, cf_dt)
    two_beta = float(constants.two_beta(k))
    if cf_dt >= two_beta:
        reason = (f"c_F dt = {constants.lambda_barrier(k)} >= 2 beta_{k} = {constants.two_beta(k)}: "
                  "the admissible beta range is empty")
    else:
        reason = "certifiable"
    return BarrierReport(
        k=k, lambda_k=constants.lambda_barrier(k), cf_dt=cf_dt, regime=regime,
        exact_residual_zero=exact, max_float_residual=float_res, diff_norm_deviation=dev,
        certifiable=cf_dt < two_beta, reason=reason, trajectory=traj,
        omega=omega_diagnostics(traj, B),
    )


@dataclass
class Branch:
    index: int
    first_state: np.ndarray
    trajectory: Trajectory
    audit: DescentAudit


def multivalued_branches(F: SemiconvexFunction, cfg: SchemeConfig, init, beta=None,
                         dec: Decomposition | None = None) -> tuple[list[Branch], object]:
    """Enumerate the solutions of the first BDF3 step and follow each branch.

    Each branch fixes its first step to one root and then runs with the
    default (lowest Lyapunov value) selection; every branch is audited.
    """
    if cfg.k != 3:
        raise PreconditionError("branch audits are for BDF3")
    init = [np.atleast_1d(np.asarray(u, dtype=float)) for u in init]
    sols = solve_step_multivalued(F, cfg, bdf_rhs(3, init), starts=[init[-1]])
    cf_dt = cfg.cf_dt(F)
    beta = default_beta(cf_dt) if beta is None else beta
    dec = decompose(beta) if dec is None else dec
    branches = []
    for i, (U, W) in enumerate(zip(sols.points, sols.subgradients)):
        rest = SchemeConfig(k=3, dt=cfg.dt, max_steps=max(cfg.max_steps - 1, 0), solver_tol=cfg.solver_tol,
                            stop_tol=cfg.stop_tol, stop_window=cfg.stop_window, seed=cfg.seed)
        tail = run(F, rest, init[1:] + [U])
        traj = Trajectory(
            states=init + tail.states[2:], dt=cfg.dt, k=3,
            residuals=[math.nan] * 3 + [sols.residuals[i]] + tail.residuals[3:],
            W=[None] * 3 + [W] + tail.W[3:],
            branches=[{"step": 3, "branches": len(sols), "chosen": i, "degenerate": sols.degenerate}]
            + [{**b, "step": b["step"] + 1} for b in tail.branches],
            stop_reason=tail.stop_reason, meta={**tail.meta, "branch": i},
        )
        branches.append(Branch(i, U, traj, descent_audit(traj, beta, dec, F)))
    return branches, sols


def audit_json(audit: DescentAudit, extra: dict | None = None) -> str:
    return dumps({**audit.summary(), **(extra or {})})

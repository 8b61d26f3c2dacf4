"""BDF1-BDF3 stepping for the gradient flow U' in -dF(U).

The k-step scheme

    sum_{j=1}^k (1/j) d^j U^{n+k} in -dt dF(U^{n+k})

is solved one step at a time as the implicit equation

    alpha_k U + dt dF(U) contains b,   b = bdf_rhs(k, history).

When ``c_F dt < alpha_k`` the step is a proximal map and has exactly one
solution.  Beyond that the step equation may have several roots; they are
enumerated (dense bracketing for M = 1, multi-start Newton otherwise) and
one branch is picked by a selection rule.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from . import constants
from .errors import ConfigError, ExistenceError, ShapeError, StepError
from .objective import SemiconvexFunction, as_state
from .quadform import default_beta, decompose, lift

GRID_CELLS = 4096
NEWTON_STARTS = 8
SCHEMA_VERSION = 1


@dataclass
class SchemeConfig:
    k: int
    dt: float
    max_steps: int = 1000
    solver_tol: float = 1e-12
    stop_tol: float | None = 1e-10
    stop_window: int = 5
    seed: int = 0

    def __post_init__(self):
        constants.check_order(self.k)
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be nonnegative")

    @property
    def alpha_k(self) -> Fraction:
        return constants.alpha(self.k)

    def cf_dt(self, F: SemiconvexFunction) -> float:
        return F.c_F * float(self.dt)

    def regime(self, F: SemiconvexFunction) -> str:
        return constants.regime(self.k, F.c_F * self.dt)

    def is_unique(self, F: SemiconvexFunction) -> bool:
        return self.cf_dt(F) < float(self.alpha_k)


def bdf_rhs(k: int, history: Sequence) -> np.ndarray:
    """Right-hand side b of the step equation, history oldest first.

    For k = 3 this is 3 U^{n+2} - 3/2 U^{n+1} + 1/3 U^n.
    """
    w = constants.scheme_coefficients(k)
    if len(history) != k:
        raise ShapeError(f"BDF{k} needs exactly {k} previous states, got {len(history)}")
    exact = all(isinstance(h, (int, Fraction)) for h in history)
    if exact:
        return sum(-w[i] * history[k - i] for i in range(1, k + 1))
    H = [as_state(h) for h in history]
    out = np.zeros_like(H[0])
    for i in range(1, k + 1):
        out = out - float(w[i]) * H[k - i]
    return out


def bdf_residual(k: int, window: Sequence, W, dt):
    """sum_j (1/j) d^j U^{n+k} + dt W for ``window = (U^n, ..., U^{n+k})``.

    Exact when every entry is an int or Fraction.
    """
    if len(window) != k + 1:
        raise ShapeError(f"residual of BDF{k} needs {k + 1} states")
    w = constants.scheme_coefficients(k)
    if all(isinstance(x, (int, Fraction)) for x in (*window, W, dt)):
        return sum(w[i] * window[k - i] for i in range(k + 1)) + dt * W
    out = float(dt) * as_state(W)
    for i in range(k + 1):
        out = out + float(w[i]) * as_state(window[k - i])
    return out


def _residual_tol(cfg: SchemeConfig, b) -> float:
    return cfg.solver_tol * (1.0 + float(np.linalg.norm(b)))


def certify_step(F: SemiconvexFunction, cfg: SchemeConfig, U, b):
    """Subgradient W in dF(U) minimizing |alpha_k U + dt W - b|, and that residual."""
    alpha = float(cfg.alpha_k)
    best = None
    for W in F.subgrad(U):
        r = float(np.linalg.norm(alpha * U + cfg.dt * W - b))
        if best is None or r < best[1]:
            best = (W, r)
    if best is None:
        raise StepError("state is outside dom dF")
    return best


def solve_step_unique(F: SemiconvexFunction, cfg: SchemeConfig, b) -> np.ndarray:
    """The unique solution of alpha_k U + dt dF(U) contains b when c_F dt < alpha_k."""
    b = as_state(b)
    alpha = float(cfg.alpha_k)
    if not cfg.is_unique(F):
        raise StepError(
            f"c_F dt = {cfg.cf_dt(F)!r} >= alpha_{cfg.k} = {cfg.alpha_k}: the step is not a proximal map"
        )
    try:
        (U,) = F.prox(cfg.dt / alpha, b / alpha)
    except StepError as exc:
        raise StepError(f"prox solve failed: {exc}", log=exc.log) from exc
    return U


@dataclass
class StepSolutions:
    points: list[np.ndarray]
    subgradients: list[np.ndarray]
    residuals: list[float]
    degenerate_intervals: list[tuple[float, float]] = field(default_factory=list)
    method: str = ""

    def __len__(self):
        return len(self.points)

    @property
    def degenerate(self) -> bool:
        return bool(self.degenerate_intervals)


def _dedupe(points, tol):
    out = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in out):
            out.append(p)
    return out


def _roots_1d(F, cfg, b):
    alpha, dt, b0 = float(cfg.alpha_k), float(cfg.dt), float(b[0])
    r = lambda u: alpha * u + dt * float(F.derivative_1d(np.array([u]))[0]) - b0
    centre = b0 / alpha
    R = max(10.0, 2.0 * abs(b0) / alpha)
    grid = np.linspace(centre - R, centre + R, GRID_CELLS + 1)
    rv = alpha * grid + dt * F.derivative_1d(grid) - b0
    tol = _residual_tol(cfg, b)

    zero = np.abs(rv) <= tol
    intervals, in_run = [], np.zeros_like(zero)
    i = 0
    while i < len(grid):
        if zero[i]:
            j = i
            while j + 1 < len(grid) and zero[j + 1]:
                j += 1
            if j > i:
                intervals.append((float(grid[i]), float(grid[j])))
                in_run[i : j + 1] = True
            i = j + 1
        else:
            i += 1

    roots = [float(grid[i]) for i in np.flatnonzero(zero & ~in_run)]
    for i in np.flatnonzero(np.sign(rv[:-1]) * np.sign(rv[1:]) < 0):
        if in_run[i] or in_run[i + 1]:
            continue
        roots.append(optimize.brentq(r, grid[i], grid[i + 1], xtol=cfg.solver_tol))
    # Tangential roots have no sign change: try Newton from small local minima of |r|.
    a = np.abs(rv)
    for i in np.flatnonzero((a[1:-1] <= a[:-2]) & (a[1:-1] <= a[2:]) & (a[1:-1] < 1e-3 * (1 + abs(b0)))) + 1:
        if not zero[i] and not in_run[i]:
            roots.append(float(grid[i]))

    def polish(u):
        for _ in range(8):
            ru = r(u)
            if abs(ru) <= 0.1 * tol:
                break
            d = alpha + dt * F.hessian([u])[0, 0]
            if d == 0:
                break
            un = u - ru / d
            if abs(r(un)) >= abs(ru):
                break
            u = un
        return u

    roots = [polish(u) for u in roots]
    roots = [u for u in roots if abs(r(u)) <= tol]
    reps = []
    for lo, hi in intervals:
        reps.extend(np.linspace(lo, hi, 5).tolist())
    pts = _dedupe([np.array([u]) for u in sorted(roots + reps)], 10 * cfg.solver_tol)
    return pts, intervals


def _roots_newton(F, cfg, b, starts):
    alpha, dt = float(cfg.alpha_k), float(cfg.dt)
    M = F.dim
    eye = np.eye(M)
    tol = _residual_tol(cfg, b)
    res = lambda U: alpha * U + dt * F.gradient(U) - b
    rng = np.random.default_rng(cfg.seed)
    centre = b / alpha
    scale = max(1.0, float(np.linalg.norm(centre)) / math.sqrt(M))
    x0s = [centre, *[as_state(s) for s in starts]]
    x0s += [centre + scale * z for z in rng.normal(size=(NEWTON_STARTS, M))]
    found = []
    for x in x0s:
        U = x.copy()
        for _ in range(100):
            rU = res(U)
            nr = float(np.linalg.norm(rU))
            if nr <= 0.1 * tol:
                break
            J = alpha * eye + dt * F.hessian(U)
            try:
                d = -np.linalg.solve(J, rU)
            except np.linalg.LinAlgError:
                break
            t, m0 = 1.0, 0.5 * nr * nr
            while 0.5 * float(np.sum(res(U + t * d) ** 2)) > (1 - 2e-4 * t) * m0 and t > 1e-10:
                t *= 0.5
            if t <= 1e-10:
                break
            U = U + t * d
        if float(np.linalg.norm(res(U))) <= tol:
            found.append(U)
    return _dedupe(found, 10 * cfg.solver_tol)


def solve_step_multivalued(F: SemiconvexFunction, cfg: SchemeConfig, b, *, starts=()) -> StepSolutions:
    """All solutions of alpha_k U + dt dF(U) contains b that the search can find.

    Scalar energies are bracketed on a grid of 4096 cells centred at
    b / alpha_k with half-width max(10, 2|b| / alpha_k); runs of grid points
    where the residual vanishes are reported as degenerate intervals and
    represented by five evenly spaced points.  Vector energies use damped
    Newton from b / alpha_k, the given ``starts`` and eight seeded offsets.
    """
    b = as_state(b)
    if F.dim == 1:
        pts, intervals = _roots_1d(F, cfg, b)
        method = "bracketing"
    else:
        pts, intervals = _roots_newton(F, cfg, b, starts), []
        pts.sort(key=lambda p: tuple(p))
        method = "multistart-newton"
    if not pts:
        raise ExistenceError(
            "no solution of the implicit step was found; this is a solver failure, "
            "since a solution always exists"
        )
    subs, resid = [], []
    for p in pts:
        W, r = certify_step(F, cfg, p, b)
        subs.append(W)
        resid.append(r)
    return StepSolutions(pts, subs, resid, intervals, method)


Selection = str | int | Callable


def _select(rule: Selection, sols: StepSolutions, history, F, cfg, lyap_q) -> int:
    if len(sols) == 1:
        return 0
    if callable(rule):
        return int(rule(sols, history))
    if isinstance(rule, int):
        if not -len(sols) <= rule < len(sols):
            raise StepError(f"selection index {rule} out of range for {len(sols)} branches")
        return rule % len(sols)
    prev = as_state(history[-1])
    if rule == "nearest" or (rule == "lyapunov" and cfg.k == 3 and lyap_q is None):
        return int(np.argmin([np.linalg.norm(p - prev) for p in sols.points]))
    if rule == "lyapunov":
        scores = []
        for p in sols.points:
            if cfg.k == 3:
                extra = lift(lyap_q, [p - prev, prev - as_state(history[-2])]) / cfg.dt
            elif cfg.k == 2:
                extra = float(np.sum((p - prev) ** 2)) / (4 * cfg.dt)
            else:
                extra = 0.0
            scores.append(F.value(p) + extra)
        return int(np.argmin(scores))
    raise ConfigError(f"unknown selection rule {rule!r}")


def _lyapunov_form(F, cfg):
    if cfg.k != 3:
        return None
    cf_dt = cfg.cf_dt(F)
    if cf_dt >= 2 * float(constants.BETA3):
        return None
    return decompose(default_beta(cf_dt)).q.to_float()


def take_step(F, cfg, history, selection: Selection = "lyapunov", *, lyap_q=None):
    """One BDF step from ``history`` (oldest first); returns (U, W, residual, branch record)."""
    b = bdf_rhs(cfg.k, history)
    if cfg.is_unique(F):
        U = solve_step_unique(F, cfg, b)
        W, r = certify_step(F, cfg, U, b)
        return U, W, r, {"branches": 1, "chosen": 0, "degenerate": False}
    sols = solve_step_multivalued(F, cfg, b, starts=[history[-1]])
    i = _select(selection, sols, history, F, cfg, lyap_q)
    rec = {"branches": len(sols), "chosen": i, "degenerate": sols.degenerate}
    return sols.points[i], sols.subgradients[i], sols.residuals[i], rec


def bootstrap(F, cfg: SchemeConfig, U0, mode: str = "ramp-up", states=None, selection: Selection = "nearest"):
    """Starting values U^0..U^{k-1}.

    ``exact-list`` passes ``states`` through; ``ramp-up`` fills the missing
    states with BDF1 and then BDF2 steps of the same dt.
    """
    if mode == "exact-list":
        if states is None or len(states) != cfg.k:
            raise ConfigError(f"exact-list bootstrap needs {cfg.k} states, got {0 if states is None else len(states)}")
        return [as_state(s) for s in states]
    if mode != "ramp-up":
        raise ConfigError(f"unknown bootstrap mode {mode!r}")
    out = [as_state(U0)]
    for j in range(1, cfg.k):
        sub = SchemeConfig(k=j, dt=cfg.dt, solver_tol=cfg.solver_tol, seed=cfg.seed)
        U, *_ = take_step(F, sub, out[-j:], selection)
        out.append(U)
    return out


@dataclass
class Trajectory:
    states: list[np.ndarray]
    dt: float
    k: int
    residuals: list[float]
    W: list[np.ndarray | None]
    branches: list[dict] = field(default_factory=list)
    stop_reason: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.states)

    def diff_norms(self) -> np.ndarray:
        """|U^n - U^{n-1}| for n >= 1."""
        A = self.array
        return np.linalg.norm(np.diff(A, axis=0), axis=1)

    def rows(self):
        dn = np.concatenate([[np.nan], self.diff_norms()])
        for n, U in enumerate(self.states):
            yield n, U, self.residuals[n], dn[n]

    def to_csv(self, path):
        M = len(self.states[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *[f"u{i}" for i in range(M)], "residual", "diff_norm"])
            for n, U, r, d in self.rows():
                w.writerow([n, *[_fmt(x) for x in U], _fmt(r), _fmt(d)])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "k": self.k,
            "dt": self.dt,
            "stop_reason": self.stop_reason,
            "meta": self.meta,
            "states": [[float(x) for x in U] for U in self.states],
            "residuals": [None if math.isnan(r) else float(r) for r in self.residuals],
            "branches": self.branches,
        }

    def to_json(self, path):
        Path(path).write_text(dumps(self.to_dict()))


def _fmt(x) -> str:
    return format(float(x), ".17g")


def jsonable(o):
    """Convert numpy values and Fractions for JSON (Fractions become "p/q" strings)."""
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, dict):
        return {str(k): jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return jsonable(o.tolist())
    if isinstance(o, np.generic):
        return jsonable(o.item())
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


def dumps(obj) -> str:
    """Deterministic JSON; floats use the shortest repr that round-trips bit-exactly."""
    return json.dumps(jsonable(obj), indent=2, sort_keys=True)


def run(F: SemiconvexFunction, cfg: SchemeConfig, init, selection: Selection = "lyapunov") -> Trajectory:
    """Iterate BDFk from the ``k`` starting states ``init``.

    Stops after ``max_steps`` new states, or earlier once the last
    ``stop_window`` increments all have norm at most ``stop_tol``.
    """
    init = [as_state(u) for u in init]
    if len(init) != cfg.k:
        raise ConfigError(f"BDF{cfg.k} needs {cfg.k} starting states, got {len(init)}")
    lyap_q = _lyapunov_form(F, cfg) if selection == "lyapunov" else None
    states = list(init)
    residuals = [math.nan] * cfg.k
    Ws: list = [None] * cfg.k
    branches = []
    small = 0
    reason = "max_steps"
    for n in range(cfg.max_steps):
        try:
            U, W, r, rec = take_step(F, cfg, states[-cfg.k:], selection, lyap_q=lyap_q)
        except StepError as exc:
            raise StepError(f"step {len(states)} failed: {exc}", step=len(states), log=exc.log) from exc
        states.append(U)
        residuals.append(r)
        Ws.append(W)
        if rec["branches"] > 1:
            branches.append({"step": len(states) - 1, **rec})
        if cfg.stop_tol is not None:
            small = small + 1 if np.linalg.norm(U - states[-2]) <= cfg.stop_tol else 0
            if small >= cfg.stop_window:
                reason = "stationary"
                break
    return Trajectory(
        states=states, dt=cfg.dt, k=cfg.k, residuals=residuals, W=Ws, branches=branches,
        stop_reason=reason,
        meta={"energy": F.name, "c_F": F.c_F, "cf_dt": cfg.cf_dt(F), "regime": cfg.regime(F),
              "config": asdict(cfg), "selection": selection if not callable(selection) else "custom"},
    )


@dataclass
class OrderStudy:
    k: int
    T: float
    dts: list[float]
    errors: list[float]
    slope: float | None
    reference: str

    def rows(self):
        return list(zip(self.dts, self.errors))


def _reference_solver(F: SemiconvexFunction, U0, T):
    if hasattr(F, "exact_flow"):
        return (lambda t: F.exact_flow(U0, t)), "closed-form"
    sol = integrate.solve_ivp(
        lambda t, y: -F.gradient(y), (0.0, T), as_state(U0), method="Radau",
        jac=lambda t, y: -F.hessian(y), rtol=1e-12, atol=1e-14, dense_output=True,
    )
    if not sol.success:
        raise ConfigError(f"reference solution unavailable: {sol.message}")
    return (lambda t: sol.sol(t)), "radau"


def order_study(F: SemiconvexFunction, U0, T: float, dts: Sequence[float], k: int = 3) -> OrderStudy:
    """Error at time T of BDFk started from exact values, and the fitted log-log slope."""
    ref, kind = _reference_solver(F, U0, T)
    errors = []
    for dt in dts:
        N = round(T / dt)
        if abs(N * dt - T) > 1e-9 * T:
            raise ConfigError(f"T = {T} is not a multiple of dt = {dt}")
        cfg = SchemeConfig(k=k, dt=dt, max_steps=N - (k - 1), stop_tol=None)
        init = [ref(j * dt) for j in range(k)]
        traj = run(F, cfg, init, selection="nearest")
        errors.append(float(np.linalg.norm(traj.states[-1] - ref(T))))
    slope = None
    if len(dts) >= 2 and all(e > 0 for e in errors):
        slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
        order = np.argsort(dts)
        if np.any(np.diff(np.array(errors)[order]) < 0):
            warnings.warn("errors are not monotone in dt", RuntimeWarning, stacklevel=2)
    return OrderStudy(k=k, T=T, dts=list(dts), errors=errors, slope=slope, reference=kind)

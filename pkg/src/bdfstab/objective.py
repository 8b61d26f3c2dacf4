"""Semiconvex energies: value, subgradient and proximal oracles.

A function F is semiconvex with constant ``c_F`` when ``F + c_F/2 |.|^2`` is
convex; W is a subgradient of F at V when

    F(V') >= F(V) + <W, V' - V> - c_F/2 |V' - V|^2    for all V'.

Every built-in energy here is smooth, so its subdifferential is the
singleton ``{grad F(V)}``.  Oracles are immutable after construction.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import linalg, optimize

from .constants import check_order, lambda_barrier
from .errors import DomainError, StepError

PROX_TOL = 1e-13


def as_state(V) -> np.ndarray:
    return np.atleast_1d(np.asarray(V, dtype=float))


class SemiconvexFunction:
    """Oracle bundle for a proper, lower-bounded, semiconvex energy on R^M.

    Parameters
    ----------
    value, gradient : callables on arrays of shape ``(M,)``.
    c_F : semiconvexity constant (nonnegative).
    dim : the dimension M.
    lower_bound : a finite lower bound for F (``inf F`` when known).
    hessian : optional; a finite-difference Hessian of ``gradient`` is used otherwise.
    """

    def __init__(
        self,
        value: Callable,
        gradient: Callable,
        c_F: float,
        dim: int,
        lower_bound: float,
        *,
        hessian: Callable | None = None,
        name: str = "custom",
        coercive: bool = False,
        meta: dict | None = None,
    ):
        if c_F < 0:
            raise DomainError(f"semiconvexity constant must be nonnegative, got {c_F}")
        if not math.isfinite(float(lower_bound)):
            raise DomainError("a finite lower bound for F is required")
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.c_F = c_F
        self.dim = int(dim)
        self.lower_bound = float(lower_bound)
        self.name = name
        self.coercive = coercive
        self.meta = dict(meta or {})
        self.meta.setdefault("c_F_source", "declared")

    def __call__(self, V) -> float:
        return self.value(V)

    def value(self, V) -> float:
        return float(self._value(as_state(V)))

    def gradient(self, V) -> np.ndarray:
        return as_state(self._gradient(as_state(V)))

    def derivative_1d(self, u) -> np.ndarray:
        """F' on an array of scalar states (M = 1 only)."""
        if self.dim != 1:
            raise DomainError("derivative_1d needs a scalar energy")
        return np.array([self.gradient([x])[0] for x in np.ravel(u)])

    def subgrad(self, V) -> list[np.ndarray]:
        """Subgradients at V; smooth energies return the gradient only."""
        V = as_state(V)
        if not math.isfinite(self.value(V)):
            return []
        return [self.gradient(V)]

    def hessian(self, V) -> np.ndarray:
        V = as_state(V)
        if self._hessian is not None:
            return np.atleast_2d(np.asarray(self._hessian(V), dtype=float))
        h = 1e-6 * max(1.0, float(np.max(np.abs(V))))
        cols = [(self.gradient(V + h * e) - self.gradient(V - h * e)) / (2 * h) for e in np.eye(self.dim)]
        H = np.array(cols).T
        return 0.5 * (H + H.T)

    def prox(self, tau: float, X) -> list[np.ndarray]:
        """Minimizers of ``F(P) + |P - X|^2 / (2 tau)``.

        Single-valued when ``tau * c_F < 1``; otherwise the lowest of several
        Newton descents is kept (ties within 1e-10 are all returned).
        """
        X = as_state(X)
        if tau <= 0:
            raise DomainError("prox parameter must be positive")
        if tau * self.c_F < 1:
            return [self._prox_newton(tau, X, X)]
        starts = [X] + [X + s * np.ones(self.dim) for s in (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)]
        found: list[np.ndarray] = []
        for x0 in starts:
            try:
                p = self._prox_newton(tau, X, x0, convex=False)
            except StepError:
                continue
            if not any(np.linalg.norm(p - q) <= 1e-8 for q in found):
                found.append(p)
        if not found:
            raise StepError("prox: no Newton descent converged")
        obj = [self.value(p) + np.dot(p - X, p - X) / (2 * tau) for p in found]
        best = min(obj)
        return [p for p, o in zip(found, obj) if o <= best + 1e-10 * (1 + abs(best))]

    def _prox_newton(self, tau, X, x0, *, convex=True, maxiter=100):
        """Damped Newton on the prox objective, Armijo backtracking on its value."""
        phi = lambda P: self.value(P) + np.dot(P - X, P - X) / (2 * tau)
        P = as_state(x0).copy()
        eye = np.eye(self.dim)
        log = []
        for it in range(maxiter):
            g = self.gradient(P) + (P - X) / tau
            gn = float(np.linalg.norm(g))
            log.append(gn)
            if gn <= PROX_TOL * (1.0 + np.linalg.norm(X) / tau):
                return P
            H = self.hessian(P) + eye / tau
            try:
                d = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                d = -g
            if np.dot(d, g) >= 0:
                if convex:
                    raise StepError("prox Newton direction is not a descent direction", log=log)
                d = -g * tau
            f0, t = phi(P), 1.0
            # Below rounding of phi the Armijo test is noise; Newton is then in its
            # quadratic regime and takes full steps.
            if -np.dot(g, d) > 1e-12 * (1.0 + abs(f0)):
                while phi(P + t * d) > f0 + 1e-4 * t * np.dot(g, d) and t > 1e-12:
                    t *= 0.5
            P = P + t * d
        raise StepError(f"prox Newton did not converge in {maxiter} iterations", log=log)

    def semiconvexity_slack(self, V, Vp, W=None) -> float:
        """F(V') - F(V) - <W, V' - V> + c_F/2 |V' - V|^2 (nonnegative for W in the subdifferential)."""
        V, Vp = as_state(V), as_state(Vp)
        W = self.gradient(V) if W is None else as_state(W)
        dv = Vp - V
        return self.value(Vp) - self.value(V) - float(W @ dv) + 0.5 * self.c_F * float(dv @ dv)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r} M={self.dim} c_F={self.c_F}>"


class QuadraticEnergy(SemiconvexFunction):
    """F(V) = 1/2 <A V, V> - <b, V> for symmetric positive semidefinite A."""

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-14):
            raise DomainError("A must be a symmetric square matrix")
        M = A.shape[0]
        b = np.zeros(M) if b is None else as_state(b)
        w, Q = np.linalg.eigh(A)
        scale = max(1.0, float(np.max(np.abs(w))))
        if w.min() < -1e-12 * scale:
            raise DomainError(
                f"A has eigenvalue {w.min():.3g} < 0: F is unbounded below (inf F = -inf)"
            )
        pinv = np.linalg.pinv(A, rcond=1e-12, hermitian=True)
        x_star = pinv @ b
        if np.linalg.norm(A @ x_star - b) > 1e-10 * max(1.0, np.linalg.norm(b)):
            raise DomainError("b is not in the range of A: F is unbounded below")
        self.A, self.b, self.minimizer = A, b, x_star
        super().__init__(
            value=lambda V: 0.5 * V @ A @ V - b @ V,
            gradient=lambda V: A @ V - b,
            hessian=lambda V: A,
            c_F=max(0.0, -float(w.min())),
            dim=M,
            lower_bound=-0.5 * float(b @ x_star),
            name="quadratic",
            coercive=bool(w.min() > 1e-12 * scale),
            meta={"c_F_source": "spectrum"},
        )

    def prox(self, tau, X):
        X = as_state(X)
        return [np.linalg.solve(np.eye(self.dim) + tau * self.A, X + tau * self.b)]

    def exact_flow(self, U0, t: float) -> np.ndarray:
        """Solution of U' = -(A U - b) at time t."""
        U0 = as_state(U0)
        return self.minimizer + linalg.expm(-t * self.A) @ (U0 - self.minimizer)


def quadratic(A, b=None) -> QuadraticEnergy:
    return QuadraticEnergy(A, b)


class AllenCahn1D(SemiconvexFunction):
    """Finite-difference Allen-Cahn energy on N nodes with free ends.

        F(U) = sum_i (U_{i+1} - U_i)^2 / (2h) + well_scale * h * sum_i (U_i^2 - 1)^2 / 4

    The Hessian is ``L/h + well_scale*h*diag(3U^2 - 1)`` with L the path
    Laplacian (positive semidefinite, constants in its kernel), so the
    optimal semiconvexity constant is ``well_scale * h``, attained at U = 0.
    """

    def __init__(self, N: int, h: float, well_scale: float = 1.0):
        if N < 2 or h <= 0:
            raise DomainError("allen_cahn_1d needs N >= 2 and h > 0")
        self.N, self.h, self.well_scale = int(N), float(h), float(well_scale)
        L = np.zeros((N, N))
        idx = np.arange(N - 1)
        L[idx, idx] += 1
        L[idx + 1, idx + 1] += 1
        L[idx, idx + 1] -= 1
        L[idx + 1, idx] -= 1
        self.laplacian = L
        w = self.well_scale * self.h
        super().__init__(
            value=lambda U: float(np.sum(np.diff(U) ** 2)) / (2 * self.h) + 0.25 * w * float(np.sum((U * U - 1) ** 2)),
            gradient=lambda U: L @ U / self.h + w * (U**3 - U),
            hessian=lambda U: L / self.h + w * np.diag(3 * U * U - 1),
            c_F=max(0.0, w),
            dim=N,
            lower_bound=0.0,
            name="allen_cahn_1d",
            coercive=w > 0,
            meta={"c_F_source": "exact", "N": N, "h": h, "well_scale": well_scale},
        )


def allen_cahn_1d(N: int, h: float, well_scale: float = 1.0) -> AllenCahn1D:
    return AllenCahn1D(N, h, well_scale)


class ConcaveCap(SemiconvexFunction):
    """Even scalar energy with F'(v) = -c v on |v| <= glue_radius.

        F(v) = -c/2 v^2 + quartic * (|v| - glue_radius)_+^4

    The quartic term has vanishing derivatives up to third order at the glue
    points, so F is C^3, F'' >= -c everywhere (c_F = c) and F is coercive.
    Works on :class:`~fractions.Fraction` arguments inside the cap.
    """

    def __init__(self, c, glue_radius=1.25, quartic=None):
        if c <= 0:
            raise DomainError("cap curvature must be positive")
        if glue_radius < 1:
            raise DomainError("glue_radius must be at least 1")
        self.c = c
        self.glue_radius = glue_radius
        self.quartic = float(c) if quartic is None else float(quartic)
        v_min = self._outer_critical_point()
        super().__init__(
            value=lambda V: self.scalar_value(float(V[0])),
            gradient=lambda V: np.array([self.derivative(float(V[0]))]),
            hessian=lambda V: np.array([[self.second_derivative(float(V[0]))]]),
            c_F=float(c),
            dim=1,
            lower_bound=self.scalar_value(v_min),
            name="concave_cap",
            coercive=True,
            meta={"c_F_source": "exact", "c": float(c), "glue_radius": float(glue_radius)},
        )
        self.coercive_radius = self._coercive_radius(v_min)

    def _excess(self, v):
        return max(abs(v) - self.glue_radius, 0)

    def scalar_value(self, v):
        return -self.c * v * v / 2 + self.quartic * self._excess(v) ** 4

    def derivative(self, v):
        s = self._excess(v)
        if s == 0:
            return -self.c * v
        return -self.c * v + math.copysign(4 * self.quartic * s**3, v)

    def derivative_1d(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        s = np.maximum(np.abs(u) - float(self.glue_radius), 0.0)
        return -float(self.c) * u + np.sign(u) * 4 * self.quartic * s**3

    def second_derivative(self, v):
        return -float(self.c) + 12 * self.quartic * self._excess(float(v)) ** 2

    def _outer_critical_point(self) -> float:
        c, rho, a = float(self.c), float(self.glue_radius), self.quartic
        phi = lambda v: -c * v + 4 * a * (v - rho) ** 3
        hi = rho + 1.0
        while phi(hi) <= 0:
            hi *= 2
        return optimize.brentq(phi, rho, hi, xtol=1e-15)

    def _coercive_radius(self, v_min: float) -> float:
        """Radius beyond which F(v) > F(0) + 1 (F is increasing past v_min)."""
        target = 1.0
        hi = v_min + 1.0
        while self.scalar_value(hi) <= target:
            hi *= 2
        return optimize.brentq(lambda v: self.scalar_value(v) - target, v_min, hi, xtol=1e-14)


class BarrierFunction(ConcaveCap):
    """Cap with c = lambda_k / dt: (-1)^n then solves BDFk with step dt."""

    def __init__(self, k: int, dt, glue_radius=1.25, quartic=None):
        check_order(k)
        if dt <= 0:
            raise DomainError("dt must be positive")
        self.k = k
        self.dt = dt
        lam = lambda_barrier(k)
        c = lam / Fraction(dt) if isinstance(dt, (int, Fraction)) else float(lam) / dt
        super().__init__(c, glue_radius=glue_radius, quartic=quartic)
        self.name = f"barrier_k{k}"
        self.meta.update({"k": k, "dt": float(dt), "lambda_k": str(lam)})

    @property
    def lambda_k(self) -> Fraction:
        return lambda_barrier(self.k)


def barrier_function(k: int, dt, glue_radius=1.25, quartic=None) -> BarrierFunction:
    return BarrierFunction(k, dt, glue_radius=glue_radius, quartic=quartic)


def concave_cap(c, glue_radius=1.25, quartic=None) -> ConcaveCap:
    return ConcaveCap(c, glue_radius=glue_radius, quartic=quartic)


class PolynomialEnergy(SemiconvexFunction):
    """Polynomial on R^M from ``{exponents: coefficient}``.

    ``c_F`` is the largest negative Hessian eigenvalue found on ``box``
    (grid and random samples, then a bounded local refinement); it is only
    valid on that box, which is recorded in ``meta``.
    """

    def __init__(self, terms: dict, dim: int | None = None, *, box=None, lower_bound=None,
                 c_F=None, seed: int = 0, name: str = "polynomial"):
        terms = {tuple(int(e) for e in k): float(v) for k, v in terms.items() if v != 0}
        M = dim if dim is not None else (len(next(iter(terms))) if terms else 1)
        if any(len(k) != M for k in terms):
            raise DomainError("all exponent tuples must have length M")
        self.terms = terms
        self._exps = np.array(list(terms), dtype=int).reshape(len(terms), M)
        self._coefs = np.array(list(terms.values()), dtype=float)
        box = [(-2.0, 2.0)] * M if box is None else [tuple(map(float, b)) for b in box]
        if len(box) != M:
            raise DomainError("box needs one interval per coordinate")
        self.box = box
        rng = np.random.default_rng(seed)
        samples = self._box_samples(rng)

        values = np.array([self._eval(x) for x in samples])
        rays = self._ray_minima(rng)
        inner = min(float(values.min()), *(rays[r] for r in (1, 2, 4, 8)))
        slack = 1e-9 * (1 + abs(inner))
        if rays[32] < rays[16] - slack and rays[16] < inner - slack:
            raise DomainError("polynomial decreases without bound along sampled rays")
        sampled_min = min(inner, rays[16], rays[32])
        if lower_bound is None:
            lb, lb_source = sampled_min, "sampled"
        else:
            lb, lb_source = float(lower_bound), "declared"
            if sampled_min < lb - 1e-9 * (1 + abs(lb)):
                raise DomainError(f"sampled value {sampled_min} is below the declared lower bound {lb}")
        if c_F is None:
            c_F, cf_source = self._estimate_cf(samples), "sampled-hessian"
        else:
            cf_source = "declared"
        degree = int(self._exps.sum(axis=1).max()) if terms else 0
        super().__init__(
            value=self._eval,
            gradient=self._grad,
            hessian=self._hess,
            c_F=c_F,
            dim=M,
            lower_bound=lb,
            name=name,
            coercive=degree % 2 == 0 and rays[32] > rays[16] > inner,
            meta={"c_F_source": cf_source, "box": box, "lower_bound_source": lb_source},
        )

    def _eval(self, x):
        if not len(self._coefs):
            return 0.0
        return float(self._coefs @ np.prod(x[None, :] ** self._exps, axis=1))

    def _grad(self, x):
        g = np.zeros(len(x))
        for i in range(len(x)):
            e = self._exps[:, i]
            mask = e > 0
            if not mask.any():
                continue
            de = self._exps[mask].copy()
            de[:, i] -= 1
            g[i] = (self._coefs[mask] * e[mask]) @ np.prod(x[None, :] ** de, axis=1)
        return g

    def derivative_1d(self, u) -> np.ndarray:
        if self.dim != 1:
            return super().derivative_1d(u)
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for (e,), cf in self.terms.items():
            if e > 0:
                out += cf * e * u ** (e - 1)
        return out

    def _hess(self, x):
        M = len(x)
        H = np.zeros((M, M))
        for i, j in itertools.product(range(M), repeat=2):
            de = self._exps.copy()
            w = self._coefs * de[:, i]
            de[:, i] -= 1
            w = w * de[:, j]
            de[:, j] -= 1
            mask = w != 0
            if mask.any():
                H[i, j] = w[mask] @ np.prod(x[None, :] ** de[mask], axis=1)
        return H

    def _box_samples(self, rng, budget=2000):
        M = len(self.box)
        per = max(3, int(round(budget ** (1.0 / M))))
        per += 1 - per % 2  # odd, so the box centre is on the grid
        axes = [np.linspace(lo, hi, per) for lo, hi in self.box]
        grid = np.array(list(itertools.product(*axes)))
        lows, highs = np.array(self.box).T
        rand = rng.uniform(lows, highs, size=(budget // 2, M))
        return np.vstack([grid, rand])

    def _ray_minima(self, rng):
        M = len(self.box)
        dirs = np.vstack([np.eye(M), -np.eye(M), rng.normal(size=(32, M))])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        centre = np.array([(lo + hi) / 2 for lo, hi in self.box])
        radius = max(hi - lo for lo, hi in self.box)
        return {r: min(self._eval(centre + r * radius * d) for d in dirs) for r in (1, 2, 4, 8, 16, 32)}

    def _estimate_cf(self, samples) -> float:
        lam = np.array([np.linalg.eigvalsh(self._hess(x))[0] for x in samples])
        worst = float(lam.min())
        bounds = self.box
        for i in np.argsort(lam)[:3]:
            res = optimize.minimize(
                lambda x: np.linalg.eigvalsh(self._hess(x))[0], samples[i],
                method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-15, "gtol": 1e-12},
            )
            worst = min(worst, float(res.fun))
        return max(0.0, -worst)


def polynomial(terms: dict, dim: int | None = None, **kwargs) -> PolynomialEnergy:
    return PolynomialEnergy(terms, dim, **kwargs)


def double_well(scale: float = 1.0) -> PolynomialEnergy:
    """scale * (v^2 - 1)^2 / 4 on R, with exact c_F = scale (min of 3v^2 - 1 is -1)."""
    s = float(scale)
    f = PolynomialEnergy({(4,): s / 4, (2,): -s / 2, (0,): s / 4}, 1, lower_bound=0.0, c_F=s,
                         name="double_well")
    f.meta["c_F_source"] = "exact"
    return f


REGISTRY = {
    "quadratic": quadratic,
    "allen_cahn_1d": allen_cahn_1d,
    "double_well": double_well,
    "barrier": barrier_function,
    "concave_cap": concave_cap,
    "polynomial": polynomial,
}


def build(name: str, **params) -> SemiconvexFunction:
    """Construct a registered energy by name."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise DomainError(f"unknown energy {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**params)

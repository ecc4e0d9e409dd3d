"""Stiefel, unitary, sphere and product manifolds plus a Riemannian gradient descent driver.

Points and tangent vectors are plain arrays, except on product manifolds where
they are lists of arrays (one per factor). The metric is the real part of the
Frobenius inner product, so the tangent spaces are real vector spaces.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .qmath import dagger, ginibre, qf

RANK_TOL = 1e-12


class Manifold:
    """Common vector-space helpers; subclasses override the geometry."""

    def inner(self, x, y) -> float:
        return float(np.real(np.vdot(x, y)))

    def norm(self, x) -> float:
        return math.sqrt(max(self.inner(x, x), 0.0))

    def add(self, x, y):
        return x + y

    def scale(self, t: float, x):
        return t * x

    def zero(self, v):
        return np.zeros_like(v)

    def lincomb(self, coeffs: Sequence[float], vecs: Sequence) -> Any:
        out = self.zero(vecs[0])
        for c, z in zip(coeffs, vecs):
            out = self.add(out, self.scale(c, z))
        return out

    def check_point(self, v) -> float:
        raise NotImplementedError

    def check_tangent(self, v, x) -> float:
        raise NotImplementedError


class Stiefel(Manifold):
    """St(n, p) = {V in C^{n x p}: V^dag V = 1}; with ``real=True`` the real Stiefel manifold."""

    def __init__(self, n: int, p: int, real: bool = False):
        if not n >= p >= 1:
            raise ValueError(f"Stiefel needs n >= p >= 1, got n={n}, p={p}")
        self.n, self.p, self.real = int(n), int(p), bool(real)

    def __repr__(self):
        tag = "real_stiefel" if self.real else "stiefel"
        return f"{tag}({self.n},{self.p})"

    @property
    def dim(self) -> int:
        n, p = self.n, self.p
        if self.real:
            return n * p - p * (p + 1) // 2
        return 2 * n * p - p * p

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        if self.real:
            return qf(rng.standard_normal((self.n, self.p))).astype(complex)
        return qf(ginibre(self.n, self.p, rng))

    def _shape_check(self, v, x):
        if np.shape(v) != (self.n, self.p) or np.shape(x) != (self.n, self.p):
            raise ValueError(f"{self!r}: expected shape {(self.n, self.p)}, got {np.shape(v)} and {np.shape(x)}")

    def project(self, v: np.ndarray, x: np.ndarray) -> np.ndarray:
        self._shape_check(v, x)
        if self.real:
            x = x.real.astype(complex)
        vx = dagger(v) @ x
        return x - v @ vx + v @ (0.5 * (vx - dagger(vx)))

    def retract(self, v: np.ndarray, x: np.ndarray) -> np.ndarray:
        self._shape_check(v, x)
        y = v + x
        r = np.linalg.qr(y, mode="r")
        if np.min(np.abs(np.diagonal(r))) < RANK_TOL * max(1.0, np.abs(r).max()):
            raise np.linalg.LinAlgError("retraction point V + X is rank deficient")
        q = qf(y)
        return q.real.astype(complex) if self.real else q

    def complement(self, v: np.ndarray) -> np.ndarray:
        q, _ = np.linalg.qr(v, mode="complete")
        return q[:, self.p:]

    def tangent_basis(self, v: np.ndarray) -> list[np.ndarray]:
        """Orthonormal basis of {V W + V_perp K : W skew-Hermitian}."""
        n, p = self.n, self.p
        vp = self.complement(v)
        basis = []
        r2 = 1 / math.sqrt(2)
        # V * Omega part
        for j in range(p):
            if not self.real:
                om = np.zeros((p, p), dtype=complex)
                om[j, j] = 1j
                basis.append(v @ om)
            for k in range(j + 1, p):
                om = np.zeros((p, p), dtype=complex)
                om[j, k], om[k, j] = r2, -r2
                basis.append(v @ om)
                if not self.real:
                    om = np.zeros((p, p), dtype=complex)
                    om[j, k] = om[k, j] = 1j * r2
                    basis.append(v @ om)
        # V_perp * K part
        for a in range(n - p):
            for j in range(p):
                basis.append(np.outer(vp[:, a], np.eye(p)[j]).astype(complex))
                if not self.real:
                    basis.append(1j * np.outer(vp[:, a], np.eye(p)[j]))
        if self.real:
            basis = [b.real.astype(complex) for b in basis]
        return basis

    def check_point(self, v) -> float:
        return float(np.linalg.norm(dagger(v) @ v - np.eye(self.p)))

    def check_tangent(self, v, x) -> float:
        s = dagger(v) @ x
        return float(np.linalg.norm(s + dagger(s)))


class Unitary(Stiefel):
    """U(n) as St(n, n); the projection reduces to (X - V X^dag V) / 2."""

    def __init__(self, n: int):
        super().__init__(n, n)

    def __repr__(self):
        return f"unitary({self.n})"

    def project(self, v, x):
        self._shape_check(v, x)
        return 0.5 * (x - v @ dagger(x) @ v)


class Sphere(Manifold):
    """Unit sphere in C^n with the phase direction removed from the tangent space.

    Costs built from |psi><psi| do not see a global phase, so the horizontal
    space (1 - |psi><psi|) C^n is all that matters.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("sphere needs n >= 1")
        self.n = int(n)

    def __repr__(self):
        return f"sphere({self.n})"

    @property
    def dim(self) -> int:
        return 2 * self.n - 2

    def random_point(self, rng):
        v = ginibre(self.n, 1, rng)[:, 0]
        return v / np.linalg.norm(v)

    def project(self, v, x):
        if np.shape(x) != (self.n,):
            raise ValueError(f"{self!r}: expected vector of length {self.n}")
        return x - v * np.vdot(v, x)

    def retract(self, v, x):
        y = v + x
        nrm = np.linalg.norm(y)
        if nrm < RANK_TOL:
            raise np.linalg.LinAlgError("retraction hit the origin")
        return y / nrm

    def tangent_basis(self, v):
        # complete v to a unitary; its other columns span the horizontal space
        q, _ = np.linalg.qr(v[:, None], mode="complete")
        basis = []
        for a in range(1, self.n):
            basis.append(q[:, a].copy())
            basis.append(1j * q[:, a])
        return basis

    def check_point(self, v) -> float:
        return abs(float(np.linalg.norm(v)) - 1.0)

    def check_tangent(self, v, x) -> float:
        return abs(complex(np.vdot(v, x)))


class Product(Manifold):
    """Cartesian product; points and tangents are lists with one entry per factor."""

    def __init__(self, factors: Sequence[Manifold]):
        if not factors:
            raise ValueError("product of zero manifolds")
        self.factors = list(factors)

    def __repr__(self):
        return "product(" + ", ".join(map(repr, self.factors)) + ")"

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    def _zip(self, *args):
        for a in args:
            if len(a) != len(self.factors):
                raise ValueError(f"{self!r}: expected {len(self.factors)} components, got {len(a)}")
        return zip(self.factors, *args)

    def inner(self, x, y):
        return sum(m.inner(a, b) for m, a, b in self._zip(x, y))

    def add(self, x, y):
        return [m.add(a, b) for m, a, b in self._zip(x, y)]

    def scale(self, t, x):
        return [m.scale(t, a) for m, a in self._zip(x)]

    def zero(self, v):
        return [m.zero(a) for m, a in self._zip(v)]

    def random_point(self, rng):
        return [m.random_point(rng) for m in self.factors]

    def project(self, v, x):
        return [m.project(a, b) for m, a, b in self._zip(v, x)]

    def retract(self, v, x):
        return [m.retract(a, b) for m, a, b in self._zip(v, x)]

    def tangent_basis(self, v):
        zeros = self.zero(v)
        basis = []
        for i, (m, a) in enumerate(self._zip(v)):
            for b in m.tangent_basis(a):
                z = list(zeros)
                z[i] = b
                basis.append(z)
        return basis

    def check_point(self, v) -> float:
        return max(m.check_point(a) for m, a in self._zip(v))

    def check_tangent(self, v, x) -> float:
        return max(m.check_tangent(a, b) for m, a, b in self._zip(v, x))


def project_tangent(m: Manifold, v, x):
    return m.project(v, x)


def retract_qr(m: Manifold, v, x):
    return m.retract(v, x)


def tangent_basis(m: Manifold, v):
    return m.tangent_basis(v)


def fd_riemannian_grad(f: Callable, m: Manifold, v, step: float = 1e-6, f0: float | None = None):
    """Forward-difference Riemannian gradient sum_i (f(R_v(t z_i)) - f(v))/t z_i."""
    if f0 is None:
        f0 = f(v)
    basis = m.tangent_basis(v)
    coeffs = []
    for z in basis:
        c = (f(m.retract(v, m.scale(step, z))) - f0) / step
        if not math.isfinite(c):
            # the forward point left the domain of f; fall back to a backward difference
            c = (f0 - f(m.retract(v, m.scale(-step, z)))) / step
        coeffs.append(c if math.isfinite(c) else 0.0)
    return m.lincomb(coeffs, basis)


def euclidean_to_riemannian(m: Manifold, v, egrad):
    """Riemannian gradient for the metric Re Tr(X^dag Y): project the Euclidean one."""
    return m.project(v, egrad)


# -- gradient descent -----------------------------------------------------------

@dataclass
class RgdConfig:
    max_iters: int = 500
    grad_tol: float = 1e-7
    initial_step: float = 1.0
    contraction: float = 0.5
    armijo_c: float = 1e-4
    max_halvings: int = 50
    step_rule: str = "bb"          # "fixed": every search starts at initial_step
    max_step: float = 1e4
    f_tol: float = 0.0             # stop if the decrease over 10 iterations is below this
    fd_step: float = 1e-6
    time_limit: float | None = None  # seconds of wall time, checked once per iteration
    memory: int = 1                # Armijo reference is the max of the last `memory` values


@dataclass
class RgdResult:
    value: float
    point: Any
    status: str
    iterations: int
    grad_norm: float
    trace: list[float] = field(default_factory=list)
    evaluations: int = 0
    seconds: float = 0.0


def rgd(m: Manifold, cost: Callable, x0, grad: Callable | None = None,
        config: RgdConfig | None = None, cost_and_grad: Callable | None = None) -> RgdResult:
    """Riemannian gradient descent with Armijo backtracking and a QR retraction.

    ``grad`` returns the Riemannian gradient; when neither it nor
    ``cost_and_grad`` is given the finite-difference gradient is used.
    """
    cfg = config or RgdConfig()
    t0 = time.perf_counter()
    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        try:
            val = float(cost(x))
        except (np.linalg.LinAlgError, ArithmeticError):
            return math.inf
        return val if math.isfinite(val) else math.inf

    def fg(x):
        nonlocal n_eval
        if cost_and_grad is not None:
            n_eval += 1
            val, g = cost_and_grad(x)
            return float(val), g
        val = f(x)
        if grad is not None:
            return val, grad(x)
        return val, fd_riemannian_grad(f, m, x, cfg.fd_step, f0=val)

    x = x0
    fx, g = fg(x)
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    trace = [fx]
    best = (fx, x, g)
    status = "max_iters"
    step = cfg.initial_step
    prev = None  # (x, g, accepted step) of the previous iteration
    it = 0
    gn = m.norm(g)
    for it in range(1, cfg.max_iters + 1):
        gn = m.norm(g)
        if gn <= cfg.grad_tol:
            status = "converged"
            it -= 1
            break
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            status = "time_limit"
            it -= 1
            break
        if cfg.step_rule == "bb" and prev is not None:
            # Barzilai-Borwein step with the previous quantities moved by projection
            px, pg, ps = prev
            s = m.project(x, m.scale(-ps, pg))
            y = m.add(g, m.scale(-1.0, m.project(x, pg)))
            sy = m.inner(s, y)
            step = m.inner(s, s) / sy if sy > 0 else 2.0 * ps
            step = min(max(step, 1e-10), cfg.max_step)
        elif cfg.step_rule != "bb":
            step = cfg.initial_step
        d = m.scale(-1.0, g)
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            try:
                xn = m.retract(x, m.scale(step, d))
                fn = f(xn)
            except np.linalg.LinAlgError:
                fn = math.inf
            if fn <= max(trace[-cfg.memory:]) - cfg.armijo_c * step * gn * gn:
                accepted = True
                break
            step *= cfg.contraction
        if not accepted:
            status = "line_search_failed"
            it -= 1
            break
        prev = (x, g, step)
        x = xn
        fx, g = fg(x)
        if not math.isfinite(fx):
            fx = fn
        if fx < best[0]:
            best = (fx, x, g)
        trace.append(fx)
        if cfg.f_tol > 0 and len(trace) > 10 and trace[-11] - fx < cfg.f_tol:
            status = "stalled"
            gn = m.norm(g)
            break
    else:
        gn = m.norm(g)
        if gn <= cfg.grad_tol:
            status = "converged"
    if best[0] < fx:
        # nonmonotone steps can end above the best iterate seen
        fx, x, g = best
        gn = m.norm(g)
    return RgdResult(value=fx, point=x, status=status, iterations=it, grad_norm=gn,
                     trace=trace, evaluations=n_eval, seconds=time.perf_counter() - t0)


def lbfgs_unitary(m: Manifold, cost_and_egrad: Callable, x0, config: RgdConfig | None = None,
                  memory: int = 30, round_iters: int = 200) -> RgdResult:
    """L-BFGS on a unitary group (or a product of them) through the chart U = U0 expm(A).

    ``cost_and_egrad`` returns the cost and its Euclidean gradient (one array per
    factor on products). scipy's L-BFGS-B works on the real coordinates of A and
    the chart is re-centred at the current point every ``round_iters`` iterations
    or whenever scipy stops; the run ends when the Riemannian gradient norm drops
    below ``grad_tol`` or a whole round makes no progress.
    """
    cfg = config or RgdConfig()
    t0 = time.perf_counter()
    single = not isinstance(m, Product)
    factors = [m] if single else m.factors
    if not all(isinstance(f, Unitary) for f in factors):
        raise TypeError("lbfgs_unitary needs unitary factors")
    dims = [f.n for f in factors]
    sizes = [2 * d * d for d in dims]
    n_eval = 0

    def as_list(x):
        return [x] if single else list(x)

    def from_list(xs):
        return xs[0] if single else xs

    def evaluate(xs):
        nonlocal n_eval
        n_eval += 1
        val, g = cost_and_egrad(from_list(xs))
        return float(val), as_list(g)

    def rgrad(xs, gs):
        return [f.project(u, g) for f, u, g in zip(factors, xs, gs)]

    def chart(u0):
        def unpack(z):
            out, k = [], 0
            for d, sz in zip(dims, sizes):
                a = z[k:k + sz // 2].reshape(d, d) + 1j * z[k + sz // 2:k + sz].reshape(d, d)
                out.append(a - dagger(a))
                k += sz
            return out

        def fun(z):
            As = unpack(z)
            xs = [u @ scipy.linalg.expm(a) for u, a in zip(u0, As)]
            val, gs = evaluate(xs)
            if not math.isfinite(val):
                return math.inf, np.zeros_like(z)
            parts = []
            for u, a, g in zip(u0, As, gs):
                ga = scipy.linalg.expm_frechet(dagger(a), dagger(u) @ g, compute_expm=False)
                gz = ga - dagger(ga)
                parts += [gz.real.ravel(), gz.imag.ravel()]
            return val, np.concatenate(parts)

        return fun, unpack

    xs = [np.asarray(u, dtype=complex) for u in as_list(x0)]
    fx, gs = evaluate(xs)
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    trace = [fx]
    gn = math.sqrt(sum(f.inner(g, g) for f, g in zip(factors, rgrad(xs, gs))))
    status, it = "max_iters", 0
    while True:
        if gn <= cfg.grad_tol:
            status = "converged"
            break
        if it >= cfg.max_iters:
            break
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            status = "time_limit"
            break
        fun, unpack = chart(xs)
        res = scipy.optimize.minimize(fun, np.zeros(sum(sizes)), jac=True, method="L-BFGS-B",
                                      options={"maxiter": min(round_iters, cfg.max_iters - it), "maxcor": memory,
                                               "gtol": 0.0, "ftol": 0.0})
        it += max(int(res.nit), 1)
        if not (res.fun < fx):
            status = "stalled"
            break
        xs = [qf(u @ scipy.linalg.expm(a)) for u, a in zip(xs, unpack(res.x))]
        fx, gs = evaluate(xs)
        trace.append(fx)
        gn = math.sqrt(sum(f.inner(g, g) for f, g in zip(factors, rgrad(xs, gs))))
    return RgdResult(value=fx, point=from_list(xs), status=status, iterations=it, grad_norm=gn, trace=trace,
                     evaluations=n_eval, seconds=time.perf_counter() - t0)


# -- multi-restart bookkeeping ----------------------------------------------------

@dataclass
class RunReport:
    """Best result over restarts plus one summary row per restart."""

    best_value: float
    best_point: Any
    seed: int
    restarts: list[dict] = field(default_factory=list)
    config_hash: str = ""
    extra: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def restarts_used(self) -> int:
        return len(self.restarts)

    def best_so_far(self) -> list[float]:
        out, cur = [], math.inf
        for r in self.restarts:
            cur = min(cur, r["value"])
            out.append(cur)
        return out


def restart_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for restart ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def worker_count(requested: int | None = None) -> int:
    import os

    cap = os.environ.get("QCAPGEO_THREADS")
    n = requested or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_restarts(job: Callable[[int], RgdResult], n: int, threads: int | None = None,
                 deadline: float | None = None) -> list[RgdResult]:
    """Run ``job(i)`` for i < n, optionally on a thread pool; order of results is by i.

    Jobs that would start after ``deadline`` (a time.perf_counter value) are
    returned as "skipped" placeholders.
    """
    def guarded(i):
        if deadline is not None and time.perf_counter() > deadline:
            return RgdResult(math.inf, None, "skipped", 0, math.inf)
        return job(i)

    w = worker_count(threads)
    if w == 1 or n <= 1:
        return [guarded(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=w) as ex:
        return list(ex.map(guarded, range(n)))


def collect(results: Sequence[RgdResult], seed: int, baseline: RgdResult | None = None,
            config_hash: str = "", seconds: float = 0.0) -> RunReport:
    rows = []
    pool = [r for r in results if r.status != "skipped"]
    if baseline is not None:
        pool = [baseline] + pool
    for i, r in enumerate(pool):
        rows.append({"index": i - (baseline is not None), "value": r.value, "status": r.status,
                     "iterations": r.iterations, "grad_norm": r.grad_norm, "seconds": r.seconds})
    best = min(pool, key=lambda r: r.value)
    return RunReport(best_value=best.value, best_point=best.point, seed=seed, restarts=rows,
                     config_hash=config_hash, seconds=seconds)

"""Semidefinite programs for degradability parameters and the U_M evaluators.

Problems are written with Hermitian matrix variables and affine matrix
expressions, assembled into real conic form (complex PSD constraints through the
real embedding [[Re, -Im], [Im, Re]]) and handed to the Clarabel interior-point
solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import clarabel
import numpy as np
import scipy.linalg
from scipy import sparse

from .channels import ChannelRep, choi, kraus_from_choi, stinespring
from .entropy import batched_entropy, von_neumann
from .qmath import dagger, eigh, partial_trace, purify

_DEBUG = False
_FLOOR_SIGMA = 0.3
SDP_TOL = 1e-9
CPTP_CHECK_TOL = 1e-6


class SdpError(RuntimeError):
    pass


# -- affine matrix expressions ----------------------------------------------------

class Affine:
    """Matrix expression const + sum_k x_k lin[k] over the real variable vector x."""

    def __init__(self, const: np.ndarray, lin: np.ndarray):
        self.const = np.asarray(const, dtype=complex)
        self.lin = np.asarray(lin, dtype=complex)

    @property
    def shape(self):
        return self.const.shape

    def _pad(self, k: int) -> np.ndarray:
        if self.lin.shape[0] == k:
            return self.lin
        out = np.zeros((k,) + self.const.shape, dtype=complex)
        out[: self.lin.shape[0]] = self.lin
        return out

    def _coerce(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        c = np.asarray(other, dtype=complex)
        if c.ndim == 0:
            c = c * np.eye(self.shape[0]) if self.shape[0] == self.shape[1] else np.full(self.shape, c)
        return Affine(c, np.zeros((0,) + c.shape, dtype=complex))

    def __add__(self, other):
        o = self._coerce(other)
        k = max(self.lin.shape[0], o.lin.shape[0])
        return Affine(self.const + o.const, self._pad(k) + o._pad(k))

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, -self.lin)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, t):
        return Affine(t * self.const, t * self.lin)

    __rmul__ = __mul__

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Affine":
        """Apply a linear map ``fn`` that acts on the trailing two axes of a stack."""
        const = fn(self.const[None])[0]
        lin = fn(self.lin) if self.lin.shape[0] else np.zeros((0,) + const.shape, dtype=complex)
        return Affine(const, lin)

    def trace(self) -> "Affine":
        return self.map(lambda m: np.trace(m, axis1=-2, axis2=-1)[..., None, None])

    def partial_trace(self, dims: Sequence[int], keep: Sequence[int]) -> "Affine":
        dims = [int(d) for d in dims]
        keep = sorted(keep)
        n = len(dims)
        dk = int(np.prod([dims[i] for i in keep]))

        def fn(stack):
            t = stack.reshape([stack.shape[0]] + dims + dims)
            row = list(range(1, n + 1))
            col = [i + n + 1 if i in keep else i + 1 for i in range(n)]
            out = [0] + [i + 1 for i in keep] + [i + n + 1 for i in keep]
            return np.einsum(t, [0] + row + col, out).reshape(stack.shape[0], dk, dk)

        return self.map(fn)

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.const + np.tensordot(x, self._pad(len(x)), axes=1)


def _herm_basis(n: int) -> np.ndarray:
    """Real basis of n x n Hermitian matrices: diagonal, then Re/Im of each upper entry."""
    basis = np.zeros((n * n, n, n), dtype=complex)
    k = 0
    for i in range(n):
        basis[k, i, i] = 1.0
        k += 1
    for i in range(n):
        for j in range(i + 1, n):
            basis[k, i, j] = basis[k, j, i] = 1.0
            basis[k + 1, i, j], basis[k + 1, j, i] = 1j, -1j
            k += 2
    return basis


@lru_cache(maxsize=None)
def _svec_index(m: int):
    # upper triangle in column-major order
    ii, jj = [], []
    for j in range(m):
        for i in range(j + 1):
            ii.append(i)
            jj.append(j)
    ii, jj = np.array(ii), np.array(jj)
    scale = np.where(ii == jj, 1.0, math.sqrt(2.0))
    return ii, jj, scale


def _svec_real_embedding(stack: np.ndarray) -> np.ndarray:
    """svec of [[Re H, -Im H], [Im H, Re H]] for every H in a (K, n, n) stack."""
    k, n, _ = stack.shape
    re, im = stack.real, stack.imag
    emb = np.empty((k, 2 * n, 2 * n))
    emb[:, :n, :n] = re
    emb[:, n:, n:] = re
    emb[:, n:, :n] = im
    emb[:, :n, n:] = -im
    ii, jj, scale = _svec_index(2 * n)
    return emb[:, ii, jj] * scale


def _herm_equations(stack: np.ndarray) -> np.ndarray:
    """Real coordinates of Hermitian matrices: Re of the upper triangle and Im strictly above."""
    n = stack.shape[-1]
    iu = np.triu_indices(n)
    iu1 = np.triu_indices(n, 1)
    return np.concatenate([stack[:, iu[0], iu[1]].real, stack[:, iu1[0], iu1[1]].imag], axis=1)


@dataclass
class SdpSolution:
    status: str
    primal: float
    dual: float
    x: np.ndarray
    iterations: int
    seconds: float
    backend: str = "ipm"

    @property
    def gap(self) -> float:
        return abs(self.primal - self.dual)

    def value(self, expr: Affine) -> np.ndarray:
        return expr.value(self.x)


class SdpBuilder:
    """Block SDP in standard form.

    Every variable is a Hermitian PSD block (a 1 x 1 block is a nonnegative
    scalar); ``psd(expr)`` on a general expression adds a slack block and the
    equality expr = slack. The real coordinates of a block are its diagonal
    followed by the real and imaginary parts of each upper entry.
    """

    def __init__(self):
        self.nvars = 0
        self.blocks: list[tuple[int, int]] = []      # (offset, side)
        self._eqs: list[Affine] = []
        self._obj: Affine | None = None

    def var(self, n: int) -> Affine:
        basis = _herm_basis(n)
        lin = np.zeros((self.nvars + n * n, n, n), dtype=complex)
        lin[self.nvars:] = basis
        self.blocks.append((self.nvars, n))
        self.nvars += n * n
        return Affine(np.zeros((n, n), dtype=complex), lin)

    def nonneg(self) -> Affine:
        return self.var(1)

    def equal(self, lhs: Affine, rhs=0.0) -> None:
        """Hermitian equality lhs == rhs."""
        self._eqs.append(lhs - rhs)

    def psd(self, expr: Affine) -> Affine:
        slack = self.var(expr.shape[0])
        self.equal(expr, slack)
        return slack

    def minimize(self, expr: Affine) -> None:
        if expr.shape != (1, 1):
            expr = expr.trace()
        self._obj = expr

    # assembled data over the real coordinates
    def _rows(self):
        k = self.nvars
        if not self._eqs:
            return np.zeros((0, k)), np.zeros(0)
        a = np.concatenate([_herm_equations(e._pad(k)).T for e in self._eqs], axis=0)
        b = np.concatenate([-_herm_equations(e.const[None])[0] for e in self._eqs])
        return a, b

    def _objective(self):
        if self._obj is None:
            raise SdpError("no objective set")
        return self._obj._pad(self.nvars)[:, 0, 0].real.copy(), float(self._obj.const[0, 0].real)

    def solve(self, tol: float = SDP_TOL, max_iter: int = 100, backend: str = "auto",
              mu_floor: float | None = None) -> SdpSolution:
        """``mu_floor`` stops at the central-path point with X Z = mu_floor 1 (IPM only);
        that point is a smooth function of the data, unlike an early-stopped optimum.

        "auto" runs the IPM and falls back to Clarabel (full solve) if it fails.
        """
        if backend == "auto":
            try:
                return _solve_ipm(self, tol, max_iter, mu_floor)
            except (SdpError, np.linalg.LinAlgError):
                return _solve_clarabel(self, tol, max(max_iter, 200))
        if backend == "ipm":
            return _solve_ipm(self, tol, max_iter, mu_floor)
        if backend == "clarabel":
            return _solve_clarabel(self, tol, max(max_iter, 200))
        raise ValueError(f"unknown backend {backend!r}")


def solve_sdp(builder: SdpBuilder, tol: float = SDP_TOL, backend: str = "auto") -> SdpSolution:
    return builder.solve(tol, backend=backend)


# -- dense primal-dual interior-point method ---------------------------------------

def _coord_weights(n: int) -> np.ndarray:
    # squared Frobenius norms of the Hermitian basis elements
    return np.concatenate([np.ones(n), np.full(n * n - n, 2.0)])


def _rows_to_blocks(rows: np.ndarray, blocks) -> list[np.ndarray]:
    """Turn coordinate rows a into matrices A_j with Re Tr(A_j X_j) = a . x."""
    out = []
    for off, n in blocks:
        basis = _herm_basis(n) / _coord_weights(n)[:, None, None]
        out.append(np.tensordot(rows[:, off:off + n * n], basis, axes=1))
    return out


def _block_coords(mats: Sequence[np.ndarray], blocks, k: int) -> np.ndarray:
    x = np.zeros(k)
    for m, (off, n) in zip(mats, blocks):
        basis = _herm_basis(n)
        x[off:off + n * n] = np.einsum("kab,ba->k", basis, m).real / _coord_weights(n)
    return x


def _herm(m):
    return 0.5 * (m + m.conj().swapaxes(-1, -2))


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest a <= 1 with x + a dx PSD (x positive definite)."""
    try:
        w = scipy.linalg.eigh(dx, x, eigvals_only=True, subset_by_index=[0, 0], check_finite=False)[0]
    except np.linalg.LinAlgError:
        return 0.0
    return 1.0 if w >= 0 else min(1.0, -1.0 / w)


def _nt_factor(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """G with W = G G^dag the NT scaling point (W Z W = X), from Cholesky factors and an SVD."""
    lx = np.linalg.cholesky(x)
    lz = np.linalg.cholesky(z)
    _, sv, vh = np.linalg.svd(lz.conj().T @ lx)
    return (lx @ vh.conj().T) / np.sqrt(sv)


def _centrality(xs, zs, mu: float) -> float:
    """max over blocks of ||X^1/2 Z X^1/2 - mu 1||_F / mu."""
    out = 0.0
    for x, z in zip(xs, zs):
        l = np.linalg.cholesky(x)
        out = max(out, np.linalg.norm(l.conj().T @ z @ l - mu * np.eye(len(x))) / mu)
    return out


def _solve_ipm(sb: SdpBuilder, tol: float, max_iter: int, mu_floor: float | None = None) -> SdpSolution:
    """Infeasible-start primal-dual path following (NT direction, Mehrotra corrector).

    Primal: min <C, X> s.t. A(X) = b, X >= 0.  Dual: max b.y s.t. Z = C - A*(y) >= 0.
    """
    import time

    t0 = time.perf_counter()
    rows, b = sb._rows()
    q, offset = sb._objective()
    blocks = sb.blocks
    m = len(b)
    a_blk = _rows_to_blocks(rows, blocks)            # per block: (m, n, n)
    c_blk = _rows_to_blocks(q[None], blocks)         # per block: (1, n, n)
    c_blk = [c[0] for c in c_blk]
    a_flat = [a.reshape(m, -1) for a in a_blk]

    def a_op(xs):          # A(X) as a real m-vector
        return sum((af.conj() @ x.reshape(-1)).real for af, x in zip(a_flat, xs))

    def a_adj(y):          # A*(y) per block
        return [np.tensordot(y, a, axes=1) for a in a_blk]

    def inner(us, vs):
        return sum(float(np.vdot(u, v).real) for u, v in zip(us, vs))

    n_tot = sum(n for _, n in blocks)
    b_norm = np.linalg.norm(b)
    c_norm = math.sqrt(inner(c_blk, c_blk))
    a_norms = [np.linalg.norm(np.concatenate([af[k] for af in a_flat])) for k in range(m)]
    xi = max(10.0, math.sqrt(n_tot), max([(1 + abs(b[k])) / (1 + a_norms[k]) for k in range(m)] or [1.0]))
    eta = max(10.0, math.sqrt(n_tot), c_norm)
    xs = [xi * np.eye(n, dtype=complex) for _, n in blocks]
    zs = [eta * np.eye(n, dtype=complex) for _, n in blocks]
    y = np.zeros(m)
    status = "MaxIterations"
    it = 0
    pobj = dobj = float("nan")
    best = (float("inf"), status, pobj, dobj, xs)
    last_gain = 0
    for it in range(1, max_iter + 1):
        rp = b - a_op(xs)
        aty = a_adj(y)
        rd = [c - at - z for c, at, z in zip(c_blk, aty, zs)]
        mu = inner(xs, zs) / n_tot
        pobj = inner(c_blk, xs)
        dobj = float(b @ y)
        pinf = np.linalg.norm(rp) / (1 + b_norm)
        dinf = math.sqrt(inner(rd, rd)) / (1 + c_norm)
        rel_gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if mu_floor is None:
            if pinf <= tol and dinf <= tol and rel_gap <= tol:
                status = "Solved"
                break
        elif pinf <= 1e-13 and dinf <= 1e-13 and _centrality(xs, zs, mu_floor) <= 1e-9:
            status = "Centered"
            break
        if max(np.abs(y).max() if m else 0.0, max(np.abs(x).max() for x in xs)) > 1e12:
            status = "Diverged"
            break
        score = max(pinf, dinf, rel_gap if mu_floor is None else _centrality(xs, zs, mu_floor))
        if score < best[0]:
            if score < 0.5 * best[0]:
                last_gain = it
            best = (score, status, pobj, dobj, [x.copy() for x in xs])
        elif it - last_gain > 8 and best[0] <= 1e3 * tol:
            status = "Stalled"
            break
        try:
            zinv = [np.linalg.inv(z) for z in zs]
            gs = [_nt_factor(x, z) for x, z in zip(xs, zs)]
        except np.linalg.LinAlgError:
            status = "Stalled"
            break
        ws = [g @ g.conj().T for g in gs]
        # Schur complement M = B^T B with columns B_k = vec(G^dag A_k G); factor B by QR
        # rather than forming M, which squares its condition number
        bt = np.concatenate([np.matmul(np.matmul(g.conj().T, a), g).reshape(m, -1) for g, a in zip(gs, a_blk)],
                            axis=1)
        bmat = np.concatenate([bt.real, bt.imag], axis=1).T
        rfac = scipy.linalg.qr(bmat, mode="r", check_finite=False)[0][:m]
        if m and np.abs(np.diag(rfac)).min() <= 1e-15 * np.abs(np.diag(rfac)).max():
            rfac = rfac + 1e-15 * np.abs(np.diag(rfac)).max() * np.eye(m)

        def solve_m(r):
            d = scipy.linalg.solve_triangular(rfac, scipy.linalg.solve_triangular(rfac, r, trans="T"))
            res = r - bmat.T @ (bmat @ d)
            return d + scipy.linalg.solve_triangular(rfac, scipy.linalg.solve_triangular(rfac, res, trans="T"))

        def direction(sigma_mu, corr):
            # dX = sigma mu Z^-1 - X - X dZ Z^-1 - corr, dZ = rd - A*(dy)
            base = [sigma_mu * zi - x - w @ r @ w - cr for x, zi, w, r, cr in zip(xs, zinv, ws, rd, corr)]
            dy = solve_m(rp - a_op(base))
            dz = [r - at for r, at in zip(rd, a_adj(dy))]
            dx = [_herm(bs + w @ (r - dzz) @ w) for bs, w, r, dzz in zip(base, ws, rd, dz)]
            if _DEBUG:
                e1 = np.linalg.norm(a_op(dx) - rp) / (1e-300 + np.linalg.norm(rp))
                e3 = max(np.linalg.norm(d + w @ dzz @ w - (sigma_mu * zi - x - cr)) / np.linalg.norm(x)
                         for d, w, dzz, zi, x, cr in zip(dx, ws, dz, zinv, xs, corr))
                print("   newton residuals", f"{e1:.1e} {e3:.1e}")
            return dx, dy, dz

        zero = [np.zeros_like(x) for x in xs]
        dx_a, dy_a, dz_a = direction(0.0, zero)
        ap = min(_max_step(x, d) for x, d in zip(xs, dx_a))
        ad = min(_max_step(z, d) for z, d in zip(zs, dz_a))
        mu_aff = inner([x + ap * d for x, d in zip(xs, dx_a)], [z + ad * d for z, d in zip(zs, dz_a)]) / n_tot
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        corr = [_herm(dxa @ dza @ zi) for dxa, dza, zi in zip(dx_a, dz_a, zinv)]
        if mu_floor is not None:
            # conservative path following: stay close to the central path down to the floor
            sigma, corr = max(_FLOOR_SIGMA, mu_floor / mu), zero
        dx, dy, dz = direction(sigma * mu, corr)
        ap = min(1.0, 0.98 * min(_max_step(x, d) for x, d in zip(xs, dx)))
        ad = min(1.0, 0.98 * min(_max_step(z, d) for z, d in zip(zs, dz)))
        if _DEBUG:
            print(it, f"{pinf:.2e} {dinf:.2e} {rel_gap:.2e} {mu:.2e} {ap:.3f} {ad:.3f} {sigma:.2e}")
        if ap < 1e-12 and ad < 1e-12:
            status = "Stalled"
            break
        xs = [_herm(x + ap * d) for x, d in zip(xs, dx)]
        y = y + ad * dy
        zs = [_herm(z + ad * d) for z, d in zip(zs, dz)]
    else:
        it = max_iter
    if _DEBUG:
        for x, z in zip(xs, zs):
            print("X", np.linalg.eigvalsh(x)); print("Z", np.linalg.eigvalsh(z))
    if status not in ("Solved", "Centered"):
        # round-off eventually wins near the optimum; fall back to the best iterate seen
        score, _, pobj, dobj, xs = best
        if status != "Diverged" and score <= (1e3 * tol if mu_floor is None else 1e-6):
            status = "AlmostSolved"
        else:
            raise SdpError(f"interior-point method ended with status {status} (best residual {score:.2e})")
    x = _block_coords(xs, blocks, sb.nvars)
    return SdpSolution(status=status, primal=pobj + offset, dual=dobj + offset, x=x, iterations=it,
                       seconds=time.perf_counter() - t0, backend="ipm")


def _solve_clarabel(sb: SdpBuilder, tol: float, max_iter: int) -> SdpSolution:
    """Same program through Clarabel, complex blocks via the real embedding."""
    rows, b_eq = sb._rows()
    q, offset = sb._objective()
    k = sb.nvars
    a_parts, b_parts, cones = [], [], []
    if len(b_eq):
        a_parts.append(rows)
        b_parts.append(b_eq)
        cones.append(clarabel.ZeroConeT(len(b_eq)))
    for off, n in sb.blocks:
        lin = np.zeros((k, n, n), dtype=complex)
        lin[off:off + n * n] = _herm_basis(n)
        a_parts.append(-_svec_real_embedding(lin).T)
        b_parts.append(np.zeros(n * (2 * n + 1)))
        cones.append(clarabel.PSDTriangleConeT(2 * n))
    a = sparse.csc_matrix(np.concatenate(a_parts, axis=0))
    b = np.concatenate(b_parts)
    p = sparse.csc_matrix((k, k))
    sol = None
    # The embedding leaves exactly singular pivots in the KKT system; dynamic
    # regularization perturbs them and stalls, so it is only a fallback.
    for dyn_reg in (False, True):
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = max_iter
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_feas = tol
        settings.dynamic_regularization_enable = dyn_reg
        sol = clarabel.DefaultSolver(p, q, a, b, cones, settings).solve()
        if str(sol.status) == "Solved":
            break
    status = str(sol.status)
    if status not in ("Solved", "AlmostSolved"):
        raise SdpError(f"SDP solver status {status}")
    return SdpSolution(status=status, primal=float(sol.obj_val) + offset, dual=float(sol.obj_val_dual) + offset,
                       x=np.array(sol.x), iterations=int(sol.iterations), seconds=float(sol.solve_time),
                       backend="clarabel")


# -- small reference programs -----------------------------------------------------

def trace_norm_sdp(x: np.ndarray, tol: float = SDP_TOL, backend: str = "auto") -> float:
    """||X||_1 = min Tr(P + Q) subject to P - Q = X, P, Q >= 0 (X Hermitian)."""
    n = x.shape[0]
    sb = SdpBuilder()
    p, q = sb.var(n), sb.var(n)
    sb.equal(p - q, x)
    sb.minimize((p + q).trace())
    return sb.solve(tol, backend=backend).primal


def _times_identity(s: Affine, n: int) -> Affine:
    return Affine(s.const[0, 0] * np.eye(n, dtype=complex), s.lin[:, 0, 0][:, None, None] * np.eye(n))


def operator_norm_sdp(x: np.ndarray, tol: float = SDP_TOL, backend: str = "auto") -> float:
    """||X||_inf = min s subject to [[s 1, X], [X^dag, s 1]] >= 0 (s 1 -+ X >= 0 for Hermitian X)."""
    r, c = x.shape
    sb = SdpBuilder()
    s = sb.nonneg()
    if r == c and np.allclose(x, dagger(x), atol=1e-14):
        sb.psd(_times_identity(s, r) - x)
        sb.psd(_times_identity(s, r) + x)
    else:
        block = np.zeros((r + c, r + c), dtype=complex)
        block[:r, r:] = x
        block[r:, :r] = dagger(x)
        sb.psd(_times_identity(s, r + c) + block)
    sb.minimize(s)
    return sb.solve(tol, backend=backend).primal


# -- linear maps used inside the programs -------------------------------------------

def _apply_choi_batched(rho: np.ndarray, da: int, db: int, j_stack: np.ndarray, de: int) -> np.ndarray:
    """(id_A (x) M)(rho_AB) for every Choi matrix M in a (K, db*de, db*de) stack."""
    r = rho.reshape(da, db, da, db)
    j = j_stack.reshape(-1, db, de, db, de)
    out = np.einsum("abcd,kbedf->kaecf", r, j, optimize=True)
    return out.reshape(-1, da * de, da * de)


def clean_choi(j: np.ndarray, in_dim: int, out_dim: int) -> np.ndarray:
    """Nearest-by-construction CPTP Choi: clip negative eigenvalues, then fix the input marginal."""
    w, v = eigh(j)
    j = (v * np.clip(w, 0.0, None)) @ dagger(v)
    t = partial_trace(j, [in_dim, out_dim], [0])
    wt, vt = eigh(t)
    if wt[0] <= 0:
        raise SdpError("degrading map has a singular input marginal")
    s = (vt / np.sqrt(wt)) @ dagger(vt)
    k = np.kron(s, np.eye(out_dim))
    return k @ j @ dagger(k)


# -- degradability certificates ------------------------------------------------------

@dataclass
class DegradabilityCertificate:
    epsilon: float
    degrading_choi: np.ndarray
    in_dim: int
    env_dim: int
    gap: float
    status: str
    sdp_value: float = float("nan")
    dual_value: float = float("nan")
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "in_dim": self.in_dim, "env_dim": self.env_dim,
                "gap": self.gap, "status": self.status, "sdp_value": self.sdp_value,
                "dual_value": self.dual_value}


def state_env_marginals(rho: np.ndarray, dims: Sequence[int], purification: np.ndarray | None = None
                        ) -> tuple[np.ndarray, int, int, int]:
    """rho_AE for a purification of rho_AB (canonical if none is given).

    ``dims`` is [dA, dB, ...]; everything after the first factor counts as B.
    """
    da = int(dims[0])
    db = int(np.prod(dims[1:]))
    if purification is None:
        purification = purify(rho)
    de = purification.size // (da * db)
    psi = purification.reshape(da, db, de)
    rho_ae = np.einsum("abe,cbf->aecf", psi, psi.conj()).reshape(da * de, da * de)
    return rho_ae, da, db, de


def trace_distance_after(rho: np.ndarray, rho_ae: np.ndarray, j: np.ndarray, da: int, db: int, de: int
                         ) -> float:
    out = _apply_choi_batched(rho, da, db, j[None], de)[0]
    w = np.linalg.eigvalsh(0.5 * ((rho_ae - out) + dagger(rho_ae - out)))
    return 0.5 * float(np.sum(np.abs(w)))


def dg_state(rho: np.ndarray, dims: Sequence[int] | None = None, purification: np.ndarray | None = None,
             tol: float = SDP_TOL, mu_floor: float | None = None) -> DegradabilityCertificate:
    """epsilon = min_M 1/2 ||rho_AE - (id (x) M)(rho_AB)||_1 over channels M: B -> E.

    The trace norm of the traceless difference X is twice min Tr P with P >= 0
    and P >= X. The reported epsilon is recomputed exactly for the returned map
    after projecting it onto CPTP maps, so it is attained by that map. With
    ``mu_floor`` the map is the central-path point instead of the optimum: slightly
    suboptimal, but smooth in rho (what finite-difference searches need).
    """
    if dims is None:
        d = int(round(math.sqrt(rho.shape[0])))
        dims = [d, d]
    rho_ae, da, db, de = state_env_marginals(rho, dims, purification)
    sb = SdpBuilder()
    j = sb.var(db * de)
    p = sb.var(da * de)
    x = Affine(rho_ae, np.zeros((0,) + rho_ae.shape)) - j.map(lambda s: _apply_choi_batched(rho, da, db, s, de))
    sb.equal(j.partial_trace([db, de], [0]), np.eye(db))
    sb.psd(p - x)
    sb.minimize(p.trace())
    sol = sb.solve(tol, mu_floor=mu_floor)
    jm = clean_choi(sol.value(j), db, de)
    eps = trace_distance_after(rho, rho_ae, jm, da, db, de)
    return DegradabilityCertificate(epsilon=eps, degrading_choi=jm, in_dim=db, env_dim=de, gap=sol.gap,
                                    status=sol.status, sdp_value=sol.primal, dual_value=sol.dual)


def _compose_choi_batched(jn: np.ndarray, a: int, b: int, j_stack: np.ndarray, e: int) -> np.ndarray:
    # link product: J_{M o N}[a e, a' e'] = sum_{b b'} J_N[a b, a' b'] J_M[b e, b' e']
    return _apply_choi_batched(jn, a, b, j_stack, e)


def diamond_half_sdp(j_delta: np.ndarray, a: int, e: int, tol: float = SDP_TOL,
                     mu_floor: float | None = None) -> float:
    """1/2 ||Delta||_diamond for a Hermiticity-preserving, trace-annihilating Delta: A -> E.

    The primal value is returned; with ``mu_floor`` it is a slight overestimate.
    """
    sb = SdpBuilder()
    s = sb.nonneg()
    z = sb.var(a * e)
    sb.psd(z - j_delta)
    sb.psd(_times_identity(s, a) - z.partial_trace([a, e], [0]))
    sb.minimize(s)
    return sb.solve(tol, mu_floor=mu_floor).primal


def dg_channel(ch: ChannelRep, tol: float = SDP_TOL, recertify: bool = True,
               mu_floor: float | None = None) -> DegradabilityCertificate:
    """min ||Tr_E Z||_inf  s.t.  Z >= J_{N^c} - J_{M o N},  Z >= 0,  M: B -> E CPTP.

    ``mu_floor`` as in dg_state; the recertified epsilon stays an upper bound.
    """
    from .channels import complementary

    a, b = ch.in_dim, ch.out_dim
    comp = complementary(ch)
    e = comp.out_dim
    jn = choi(ch)
    jc = choi(comp)
    sb = SdpBuilder()
    s = sb.nonneg()
    jm = sb.var(b * e)
    z = sb.var(a * e)
    sb.equal(jm.partial_trace([b, e], [0]), np.eye(b))
    jmn = jm.map(lambda st: _compose_choi_batched(jn, a, b, st, e))
    sb.psd(z - (Affine(jc, np.zeros((0,) + jc.shape)) - jmn))
    sb.psd(_times_identity(s, a) - z.partial_trace([a, e], [0]))
    sb.minimize(s)
    sol = sb.solve(tol, mu_floor=mu_floor)
    jm_val = clean_choi(sol.value(jm), b, e)
    eps = max(sol.primal, 0.0)
    if recertify:
        delta = jc - _compose_choi_batched(jn, a, b, jm_val[None], e)[0]
        eps = max(diamond_half_sdp(0.5 * (delta + dagger(delta)), a, e, tol, mu_floor), 0.0)
    return DegradabilityCertificate(epsilon=eps, degrading_choi=jm_val, in_dim=b, env_dim=e, gap=sol.gap,
                                    status=sol.status, sdp_value=sol.primal, dual_value=sol.dual)


# -- U_M evaluators ----------------------------------------------------------------

def _check_cptp_choi(m: np.ndarray, in_dim: int, out_dim: int) -> None:
    w = np.linalg.eigvalsh(0.5 * (m + dagger(m)))
    marg = partial_trace(m, [in_dim, out_dim], [0])
    if w[0] < -CPTP_CHECK_TOL or np.linalg.norm(marg - np.eye(in_dim)) > CPTP_CHECK_TOL:
        raise ValueError("degrading map is not CPTP to 1e-6")


def degrading_stinespring(m: np.ndarray, in_dim: int, out_dim: int, order: str = "ascending") -> np.ndarray:
    """Stinespring isometry of the map with Choi ``m``, rows ordered (E' (x) G)."""
    _check_cptp_choi(m, in_dim, out_dim)
    kr = kraus_from_choi(m, in_dim, out_dim)
    if order == "descending":
        kr = kr[::-1]
    return stinespring(ChannelRep(kr))


def u_m_state(rho_ext: np.ndarray, m: np.ndarray, dims: Sequence[int] | None = None,
              out_dim: int | None = None, order: str = "ascending") -> float:
    """U_M = H(G|E')_sigma with sigma = (id_A (x) V_M) rho (id_A (x) V_M)^dag.

    ``dims`` is [dA, dB, ...] with B = everything after A; ``out_dim`` is |E'|.
    """
    if dims is None:
        d = int(round(math.sqrt(rho_ext.shape[0])))
        dims = [d, d]
    da = int(dims[0])
    db = int(np.prod(dims[1:]))
    de = out_dim if out_dim is not None else m.shape[0] // db
    v = degrading_stinespring(m, db, de, order)
    g = v.shape[0] // de
    rho_b = partial_trace(rho_ext, [da, db], [1])
    # only the E'G marginal matters: sigma_E'G = V rho_B V^dag
    sigma = v @ rho_b @ dagger(v)
    sigma_e = partial_trace(sigma, [de, g], [0])
    return von_neumann(sigma) - von_neumann(sigma_e)


def _real_qubit_grid(step: float):
    n = int(round(1.0 / step))
    a_vals, b_vals = [], []
    for i in range(n + 1):
        a = i * step
        bmax = math.sqrt(max(a * (1 - a), 0.0))
        kmax = int(math.floor(bmax / step + 1e-9))
        for k in range(-kmax, kmax + 1):
            a_vals.append(a)
            b_vals.append(k * step)
    return np.array(a_vals), np.array(b_vals)


def u_m_channel(ch: ChannelRep, m: np.ndarray, method: str = "scan_real_qubit", step: float = 0.005,
                samples: int = 2000, seed: int = 0, return_argmax: bool = False):
    """U_M(N) = max_rho H(G|E')_sigma, sigma = V_M N(rho) V_M^dag, i.e. H(N(rho)) - H(M(N(rho))).

    ``scan_real_qubit`` walks the real qubit states [[a, b], [b, 1-a]] on a grid of
    spacing ``step``; ``grid_general`` evaluates ``samples`` seeded random states
    and therefore only gives a lower estimate of the maximum.
    """
    b = ch.out_dim
    de = m.shape[0] // b
    _check_cptp_choi(m, b, de)
    if method == "scan_real_qubit":
        if ch.in_dim != 2:
            raise ValueError("scan_real_qubit needs a qubit-input channel")
        if np.abs(choi(ch).imag).max() > 1e-10 or np.abs(m.imag).max() > 1e-10:
            raise ValueError("scan_real_qubit needs real Choi matrices")
        a_vals, b_vals = _real_qubit_grid(step)
        basis = [np.array([[1, 0], [0, 0]], dtype=complex), np.array([[0, 0], [0, 1]], dtype=complex),
                 np.array([[0, 1], [1, 0]], dtype=complex)]
        coeff = np.stack([a_vals, 1 - a_vals, b_vals], axis=1)
        states = None
    elif method == "grid_general":
        rng = np.random.default_rng(seed)
        d = ch.in_dim
        states = []
        for i in range(samples):
            rank = 1 + (i % d)
            g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
            r = g @ dagger(g)
            states.append(r / np.trace(r).real)
        states.append(np.eye(d) / d)
        states = np.array(states)
        basis, coeff = None, None
    else:
        raise ValueError(f"unknown method {method!r}")
    mch = ChannelRep(kraus_from_choi(m, b, de))
    if states is None:
        outs_n = np.array([ch(x) for x in basis])
        outs_m = np.array([mch(y) for y in outs_n])
        n_rho = np.tensordot(coeff, outs_n, axes=1)
        mn_rho = np.tensordot(coeff, outs_m, axes=1)
    else:
        kr = ch.kraus
        n_rho = np.einsum("kba,sac,kdc->sbd", kr, states, kr.conj(), optimize=True)
        km = mch.kraus
        mn_rho = np.einsum("kba,sac,kdc->sbd", km, n_rho, km.conj(), optimize=True)
    vals = batched_entropy(n_rho) - batched_entropy(mn_rho)
    i = int(np.argmax(vals))
    best = float(vals[i])
    if return_argmax:
        arg = (np.tensordot(coeff[i], np.array(basis), axes=1) if states is None else states[i])
        return best, arg
    return best

"""Lower bounds on quantum capacity from interleaved local-unitary code states.

Sites are S_0 = R and S_k = A_k. The 2n-1 unitaries act on neighbouring pairs,
first (S_0 S_1), (S_1 S_2), ..., (S_{n-1} S_n), then back down to (S_0 S_1).
The channel is only ever applied one copy at a time through its Stinespring
isometry, never as an n-fold Kraus list.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channels import ChannelRep, channel_from_spec, stinespring
from .entropy import batched_entropy
from .lower_state import LowerConfig
from .manifolds import (Product, RgdConfig, RgdResult, RunReport, Sphere, Unitary, collect, lbfgs_unitary,
                        restart_rng, rgd, run_restarts)
from .qmath import EIG_FLOOR, format_matrix, matrix_log_psd, parse_matrices

MAX_TOTAL_DIM = 2 ** 13


def ansatz_pairs(n: int) -> list[tuple[int, int]]:
    """Site pairs (s, s+1) for U^(1..2n-1)."""
    if n < 1:
        raise ValueError("need at least one channel use")
    up = [(k - 1, k) for k in range(1, n + 1)]
    down = [(2 * n - 1 - k, 2 * n - k) for k in range(n + 1, 2 * n)]
    return up + down


@dataclass
class AnsatzParam:
    u_list: list
    r_dim: int
    a_dim: int
    n_copies: int

    def __post_init__(self):
        self.u_list = [np.asarray(u, dtype=complex) for u in self.u_list]
        pairs = ansatz_pairs(self.n_copies)
        if len(self.u_list) != len(pairs):
            raise ValueError(f"n = {self.n_copies} needs {len(pairs)} unitaries, got {len(self.u_list)}")
        for u, (s, t) in zip(self.u_list, pairs):
            d = self.site_dims[s] * self.site_dims[t]
            if u.shape != (d, d):
                raise ValueError(f"unitary on sites {(s, t)} must be {d}x{d}, got {u.shape}")

    @property
    def site_dims(self) -> list[int]:
        return [self.r_dim] + [self.a_dim] * self.n_copies

    @classmethod
    def identity(cls, r_dim: int, a_dim: int, n: int) -> "AnsatzParam":
        dims = [r_dim] + [a_dim] * n
        us = [np.eye(dims[s] * dims[t], dtype=complex) for s, t in ansatz_pairs(n)]
        return cls(us, r_dim, a_dim, n)

    def manifold(self) -> Product:
        return ansatz_manifold(self.r_dim, self.a_dim, self.n_copies)


def ansatz_manifold(r_dim: int, a_dim: int, n: int) -> Product:
    dims = [r_dim] + [a_dim] * n
    return Product([Unitary(dims[s] * dims[t]) for s, t in ansatz_pairs(n)])


def _apply_pair(psi: np.ndarray, u: np.ndarray, s: int) -> np.ndarray:
    """Apply u to sites (s, s+1) of a state tensor."""
    dims = psi.shape
    t = np.moveaxis(psi, (s, s + 1), (0, 1))
    rest = t.shape[2:]
    t = (u @ t.reshape(dims[s] * dims[s + 1], -1)).reshape((dims[s], dims[s + 1]) + rest)
    return np.moveaxis(t, (0, 1), (s, s + 1))


def _pair_outer(lam: np.ndarray, phi: np.ndarray, s: int) -> np.ndarray:
    """Tr over all sites except (s, s+1) of |lam><phi|."""
    dims = lam.shape
    a = np.moveaxis(lam, (s, s + 1), (0, 1)).reshape(dims[s] * dims[s + 1], -1)
    b = np.moveaxis(phi, (s, s + 1), (0, 1)).reshape(dims[s] * dims[s + 1], -1)
    return a @ b.conj().T


def _ansatz_states(p: AnsatzParam) -> list[np.ndarray]:
    """phi_0 = |0...0>, phi_k = V^(k) phi_{k-1}; tensors with one axis per site."""
    dims = p.site_dims
    phi = np.zeros(dims, dtype=complex)
    phi[(0,) * len(dims)] = 1.0
    out = [phi]
    for u, (s, _) in zip(p.u_list, ansatz_pairs(p.n_copies)):
        phi = _apply_pair(phi, u, s)
        out.append(phi)
    return out


def ansatz_state(p: AnsatzParam) -> np.ndarray:
    """Code state on R (x) A^n as a flat vector (R first)."""
    return _ansatz_states(p)[-1].reshape(-1)


def check_memory(r_dim: int, b_dim: int, n: int) -> None:
    total = r_dim * b_dim ** n
    if total > MAX_TOTAL_DIM:
        raise MemoryError(f"|R| |B|^n = {total} exceeds the guard {MAX_TOTAL_DIM}")


class _Dilated:
    """Stinespring tensor of one channel use, applied copy by copy."""

    def __init__(self, ch: ChannelRep):
        self.a, self.b = ch.in_dim, ch.out_dim
        v = stinespring(ch)
        self.e = v.shape[0] // self.b
        self.v = v.reshape(self.b, self.e, self.a)

    def forward(self, psi: np.ndarray, n: int) -> np.ndarray:
        """(1_R (x) V^(x)n) psi, reshaped to a matrix (R B^n) x (E^n)."""
        r = psi.shape[0]
        t = psi
        for k in range(1, n + 1):
            # contract site k (dimension a) with V, leaving (b, e) at the end
            t = np.tensordot(t, self.v, axes=([1], [2]))
        # axes now: R, (b_1, e_1), ..., (b_n, e_n)
        perm = [0] + [1 + 2 * i for i in range(n)] + [2 + 2 * i for i in range(n)]
        t = t.transpose(perm)
        return t.reshape(r * self.b ** n, self.e ** n)

    def backward(self, m: np.ndarray, r: int, n: int) -> np.ndarray:
        """(1_R (x) V^(x)n)^dag applied to a matrix (R B^n) x (E^n); returns a state tensor."""
        t = m.reshape([r] + [self.b] * n + [self.e] * n)
        perm = [0]
        for i in range(n):
            perm += [1 + i, 1 + n + i]
        t = t.transpose(perm)
        vc = self.v.conj()
        for _ in range(n):
            # leading (b, e) pair after R is the next copy; result axis goes last
            t = np.tensordot(t, vc, axes=([1, 2], [0, 1]))
        return t


def _coh_and_dual(ch: ChannelRep | _Dilated, psi: np.ndarray, r_dim: int, n: int, want_grad: bool,
                  floor: float = EIG_FLOOR):
    dil = ch if isinstance(ch, _Dilated) else _Dilated(ch)
    t = psi.reshape([r_dim] + [dil.a] * n)
    m = dil.forward(t, n)
    rho_rb = m @ m.conj().T
    d_b = dil.b ** n
    rho_b = np.einsum("rbrc->bc", rho_rb.reshape(r_dim, d_b, r_dim, d_b))
    cost = float(batched_entropy(rho_rb) - batched_entropy(rho_b))
    if not want_grad:
        return cost, None
    y = np.kron(np.eye(r_dim), matrix_log_psd(rho_b, floor)) - matrix_log_psd(rho_rb, floor)
    g = 2 * dil.backward(y @ m, r_dim, n)
    return cost, g.reshape(-1)


def coh_channel_cost(ch: ChannelRep, p: AnsatzParam) -> float:
    """-I(R>B^n) of N^(x)n applied to the ansatz state."""
    check_memory(p.r_dim, ch.out_dim, p.n_copies)
    return _coh_and_dual(ch, ansatz_state(p), p.r_dim, p.n_copies, False)[0]


def psi_gradient(ch: ChannelRep, psi: np.ndarray, r_dim: int, n: int = 1) -> np.ndarray:
    """Euclidean gradient of -I(R>B^n) in |psi>: 2{1 (x) N^dag[log rho_B] - N^dag[log rho_RB]}|psi>."""
    return _coh_and_dual(ch, psi, r_dim, n, True)[1]


def coh_channel_grad(ch: ChannelRep, p: AnsatzParam, euclidean: bool = False) -> list[np.ndarray]:
    """Per-factor Riemannian gradients (Euclidean ones with ``euclidean``)."""
    check_memory(p.r_dim, ch.out_dim, p.n_copies)
    return _cost_and_grad(_Dilated(ch), p, euclidean)[1]


def _cost_and_grad(dil: _Dilated, p: AnsatzParam, euclidean: bool = False):
    phis = _ansatz_states(p)
    cost, g = _coh_and_dual(dil, phis[-1].reshape(-1), p.r_dim, p.n_copies, True)
    lam = g.reshape(phis[-1].shape)
    pairs = ansatz_pairs(p.n_copies)
    grads = [None] * len(pairs)
    for k in range(len(pairs) - 1, -1, -1):
        s = pairs[k][0]
        u = p.u_list[k]
        e = _pair_outer(lam, phis[k], s)
        grads[k] = e if euclidean else 0.5 * (e - u @ e.conj().T @ u)
        lam = _apply_pair(lam, u.conj().T, s)
    return cost, grads


def optimize_code_state(ch: ChannelRep, n: int = 1, r_dim: int = 2, config: LowerConfig | None = None
                        ) -> RunReport:
    """Multi-restart RGD over the ansatz; report.extra has rate = -best / n and the winning u_list."""
    cfg = config or LowerConfig()
    t0 = time.perf_counter()
    ch = channel_from_spec(ch) if not isinstance(ch, ChannelRep) else ch
    check_memory(r_dim, ch.out_dim, n)
    dil = _Dilated(ch)
    man = ansatz_manifold(r_dim, ch.in_dim, n)

    def param(us):
        return AnsatzParam(us, r_dim, ch.in_dim, n)

    def cost_and_grad(us):
        return _cost_and_grad(dil, param(us))

    def cost(us):
        return _coh_and_dual(dil, ansatz_state(param(us)), r_dim, n, False)[0]

    rcfg = RgdConfig(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol)
    deadline = None if cfg.time_budget is None else t0 + cfg.time_budget

    def cost_and_egrad(us):
        return _cost_and_grad(dil, param(us), euclidean=True)

    def job(i: int) -> RgdResult:
        rng = restart_rng(cfg.seed, i)
        x0 = man.random_point(rng)
        if cfg.method == "lbfgs":
            return lbfgs_unitary(man, cost_and_egrad, x0, config=rcfg)
        return rgd(man, cost, x0, config=rcfg, cost_and_grad=cost_and_grad)

    results = run_restarts(job, cfg.restarts, cfg.threads, deadline=deadline)
    ident = AnsatzParam.identity(r_dim, ch.in_dim, n).u_list
    baseline = RgdResult(value=cost(ident), point=ident, status="baseline", iterations=0, grad_norm=0.0)
    report = collect(results, cfg.seed, baseline=baseline, seconds=time.perf_counter() - t0)
    report.extra.update(rate=-report.best_value / n, n=n, r_dim=r_dim, u_list=report.best_point)
    return report


def optimize_sphere_state(ch: ChannelRep, n: int = 1, r_dim: int = 2, config: LowerConfig | None = None
                          ) -> RunReport:
    """Same objective optimized directly over unit vectors on R (x) A^n (exponential in n)."""
    cfg = config or LowerConfig()
    t0 = time.perf_counter()
    check_memory(r_dim, ch.out_dim, n)
    dil = _Dilated(ch)
    man = Sphere(r_dim * ch.in_dim ** n)

    def cost_and_grad(psi):
        c, g = _coh_and_dual(dil, psi, r_dim, n, True)
        return c, man.project(psi, g)

    rcfg = RgdConfig(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol)

    def job(i: int) -> RgdResult:
        rng = restart_rng(cfg.seed, i)
        return rgd(man, lambda x: cost_and_grad(x)[0], man.random_point(rng), config=rcfg,
                   cost_and_grad=cost_and_grad)

    report = collect(run_restarts(job, cfg.restarts, cfg.threads), cfg.seed, seconds=time.perf_counter() - t0)
    report.extra.update(rate=-report.best_value / n, n=n, r_dim=r_dim)
    return report


def save_code_state(path: str | Path, u_list: Sequence[np.ndarray], r_dim: int, a_dim: int) -> None:
    """Concatenated matrix blocks, each preceded by "k dim_left dim_right"."""
    n = (len(u_list) + 1) // 2
    dims = [r_dim] + [a_dim] * n
    parts = []
    for k, (u, (s, t)) in enumerate(zip(u_list, ansatz_pairs(n)), start=1):
        parts.append(f"{k} {dims[s]} {dims[t]}\n" + format_matrix(u))
    Path(path).write_text("".join(parts))


def load_code_state(path: str | Path) -> tuple[list[np.ndarray], int, int]:
    """Returns (u_list, r_dim, a_dim)."""
    text = Path(path).read_text()
    headers = [ln.split() for ln in text.splitlines() if len(ln.split()) == 3 and not ln.startswith("#")]
    mats = parse_matrices(text)
    if not headers or len(headers) != len(mats):
        raise ValueError(f"{path}: missing or inconsistent block headers")
    r_dim, a_dim = int(headers[0][1]), int(headers[0][2])
    return mats, r_dim, a_dim

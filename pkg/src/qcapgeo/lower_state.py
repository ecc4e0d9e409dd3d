"""Lower bounds on one-way distillable entanglement from optimized instruments.

Alice applies an instrument with Kraus operators K_j = (1 (x) <j|) U (1 (x) |0>)
to her half of rho^(x)n and announces j; the rate is I(A'>B^n M) / n.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .entropy import batched_entropy, coherent_information_state
from .manifolds import (RgdConfig, RgdResult, RunReport, Unitary, collect, lbfgs_unitary, restart_rng, rgd,
                        run_restarts)
from .qmath import EIG_FLOOR, format_matrix, matrix_log_psd, parse_matrices, permute_systems

MAX_TOTAL_DIM = 2 ** 12


@dataclass
class InstrumentParam:
    u: np.ndarray
    m_dim: int

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=complex)
        if self.u.shape[0] != self.u.shape[1] or self.u.shape[0] % self.m_dim:
            raise ValueError(f"U of shape {self.u.shape} does not act on A (x) M with |M| = {self.m_dim}")
        err = np.linalg.norm(self.u.conj().T @ self.u - np.eye(self.u.shape[0]))
        if err > 1e-10:
            raise ValueError(f"U is not unitary (defect {err:.2e})")

    @property
    def a_dim(self) -> int:
        return self.u.shape[0] // self.m_dim


@dataclass
class LowerConfig:
    restarts: int = 200
    seed: int = 0
    grad_tol: float = 1e-7
    max_iters: int = 500
    threads: int | None = None
    time_budget: float | None = None
    method: str = "lbfgs"          # or "rgd"

    def __post_init__(self):
        if self.method not in ("lbfgs", "rgd"):
            raise ValueError(f"method must be 'lbfgs' or 'rgd', got {self.method!r}")


def instrument_kraus(p: InstrumentParam | np.ndarray, m_dim: int | None = None) -> np.ndarray:
    """Kraus stack of shape (m, |A|, |A|)."""
    if not isinstance(p, InstrumentParam):
        p = InstrumentParam(p, m_dim)
    a, m = p.a_dim, p.m_dim
    # columns a*m + 0 of U hold (1 (x) |0>)
    w = p.u[:, ::m]
    return w.reshape(a, m, a).transpose(1, 0, 2)


def _dims(rho: np.ndarray, dims: Sequence[int] | None, a_dim: int) -> tuple[int, int]:
    if dims is None:
        if rho.shape[0] % a_dim:
            raise ValueError(f"|A| = {a_dim} does not divide dim(rho) = {rho.shape[0]}")
        return a_dim, rho.shape[0] // a_dim
    da, db = int(dims[0]), int(np.prod(dims[1:]))
    if da != a_dim:
        raise ValueError(f"instrument acts on |A| = {a_dim} but rho has |A| = {da}")
    return da, db


def _blocks(rho: np.ndarray, kraus: np.ndarray, da: int, db: int) -> np.ndarray:
    # sigma_AB^(j) = (K_j (x) 1) rho (K_j (x) 1)^dag, stacked over j
    r4 = rho.reshape(da, db, da, db)
    s = np.einsum("jxa,abcd,jyc->jxbyd", kraus, r4, kraus.conj(), optimize=True)
    m = kraus.shape[0]
    return s.reshape(m, da * db, da * db)


def coh_state_cost(rho: np.ndarray, p: InstrumentParam | np.ndarray, m_dim: int | None = None,
                   dims: Sequence[int] | None = None) -> float:
    """-I(A'>BM) of the instrument output, from the blocks of the block-diagonal state."""
    if not isinstance(p, InstrumentParam):
        p = InstrumentParam(p, m_dim)
    da, db = _dims(rho, dims, p.a_dim)
    s = _blocks(rho, instrument_kraus(p), da, db)
    sb = np.einsum("jxbxd->jbd", s.reshape(-1, da, db, da, db))
    # unnormalized blocks: H(sigma_ABM) = sum_j -Tr s_j log s_j, same for BM
    return float(np.sum(batched_entropy(s)) - np.sum(batched_entropy(sb)))


def coh_state_grad(rho: np.ndarray, p: InstrumentParam | np.ndarray, m_dim: int | None = None,
                   dims: Sequence[int] | None = None, floor: float = EIG_FLOOR, euclidean: bool = False
                   ) -> np.ndarray:
    """Riemannian gradient on U(|A||M|) (the Euclidean one with ``euclidean``)."""
    if not isinstance(p, InstrumentParam):
        p = InstrumentParam(p, m_dim)
    da, db = _dims(rho, dims, p.a_dim)
    m = p.m_dim
    kraus = instrument_kraus(p)
    s = _blocks(rho, kraus, da, db)
    r4 = rho.reshape(da, db, da, db)
    g = np.zeros((da, m, da, m), dtype=complex)
    for j in range(m):
        sj = s[j]
        sb = np.einsum("xbxd->bd", sj.reshape(da, db, da, db))
        y = np.kron(np.eye(da), matrix_log_psd(sb, floor)) - matrix_log_psd(sj, floor)
        # G_j = 2 Tr_B[Y_j (K_j (x) 1) rho]
        g[:, j, :, 0] = 2 * np.einsum("xbyd,ya,adcb->xc", y.reshape(da, db, da, db), kraus[j], r4,
                                      optimize=True)
    g = g.reshape(da * m, da * m)
    return g if euclidean else Unitary(da * m).project(p.u, g)


def tensor_power_state(rho: np.ndarray, dims: Sequence[int], n: int) -> tuple[np.ndarray, list[int]]:
    """rho^(x)n reordered as A_1..A_n B_1..B_n; returns (state, [|A|^n, |B|^n])."""
    da, db = int(dims[0]), int(np.prod(dims[1:]))
    out = np.ones((1, 1), dtype=complex)
    for _ in range(n):
        out = np.kron(out, rho)
    perm = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    out = permute_systems(out, [da, db] * n, perm)
    return out, [da ** n, db ** n]


def check_memory(a_dim: int, b_dim: int, n: int, m_dim: int) -> None:
    total = (a_dim * b_dim) ** n * m_dim
    if total > MAX_TOTAL_DIM:
        raise MemoryError(f"|A B|^n |M| = {total} exceeds the guard {MAX_TOTAL_DIM}")


def optimize_instrument(rho: np.ndarray, n_copies: int = 1, m_dim: int = 2,
                        config: LowerConfig | None = None, dims: Sequence[int] | None = None) -> RunReport:
    """Multi-restart RGD over U(|A|^n |M|). The U = 1 baseline is always included.

    report.extra holds rate (= -best cost / n), baseline_rate (= I(A>B)) and the
    winning unitary under "u".
    """
    cfg = config or LowerConfig()
    t0 = time.perf_counter()
    if dims is None:
        d = int(round(math.sqrt(rho.shape[0])))
        dims = [d, d]
    da, db = int(dims[0]), int(np.prod(dims[1:]))
    check_memory(da, db, n_copies, m_dim)
    rho_n, dims_n = tensor_power_state(rho, [da, db], n_copies)
    dim_u = dims_n[0] * m_dim
    man = Unitary(dim_u)

    def cost(u):
        return coh_state_cost(rho_n, InstrumentParam(u, m_dim), dims=dims_n)

    def grad(u):
        return coh_state_grad(rho_n, InstrumentParam(u, m_dim), dims=dims_n)

    rcfg = RgdConfig(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol)
    deadline = None if cfg.time_budget is None else t0 + cfg.time_budget

    def cost_and_egrad(u):
        p = InstrumentParam(u, m_dim)
        return (coh_state_cost(rho_n, p, dims=dims_n),
                coh_state_grad(rho_n, p, dims=dims_n, euclidean=True))

    def job(i: int) -> RgdResult:
        rng = restart_rng(cfg.seed, i)
        x0 = man.random_point(rng)
        if cfg.method == "lbfgs":
            return lbfgs_unitary(man, cost_and_egrad, x0, config=rcfg)
        return rgd(man, cost, x0, grad=grad, config=rcfg)

    results = run_restarts(job, cfg.restarts, cfg.threads, deadline=deadline)
    eye = np.eye(dim_u, dtype=complex)
    baseline = RgdResult(value=cost(eye), point=eye, status="baseline", iterations=0, grad_norm=0.0)
    report = collect(results, cfg.seed, baseline=baseline, seconds=time.perf_counter() - t0)
    report.extra.update(rate=-report.best_value / n_copies,
                        baseline_rate=coherent_information_state(rho, [da, db]),
                        n=n_copies, m_dim=m_dim, u=report.best_point)
    return report


def save_instrument(path: str | Path, u: np.ndarray, n: int, m_dim: int, seed: int, rate: float) -> None:
    """Matrix text file plus a sidecar "<path>.meta" holding the line "n m seed rate"."""
    path = Path(path)
    path.write_text(format_matrix(u))
    Path(str(path) + ".meta").write_text(f"{n} {m_dim} {seed} {rate:.17g}\n")


def load_instrument(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    (u,) = parse_matrices(path.read_text())
    n, m, seed, rate = Path(str(path) + ".meta").read_text().split()
    return u, {"n": int(n), "m_dim": int(m), "seed": int(seed), "rate": float(rate)}

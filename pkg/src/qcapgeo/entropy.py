"""Entropies and divergences, all in bits."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .channels import ChannelRep, apply, complementary
from .qmath import EIG_FLOOR, eigh, partial_trace, psd_eigvals

SUPPORT_EIG_TOL = 1e-10
SUPPORT_OVERLAP_TOL = 1e-12


def entropy_from_eigvals(w: np.ndarray, floor: float = 0.0) -> float:
    w = np.asarray(w, dtype=float)
    w = w[w > floor]
    return float(-np.sum(w * np.log2(w)))


def von_neumann(rho: np.ndarray, floor: float = 0.0) -> float:
    """-Tr rho log2 rho with 0 log 0 = 0.

    Works for unnormalized PSD input too, in which case it is -Tr X log X.
    Tiny eigenvalues are kept: -x log x is continuous at 0, and a hard cutoff
    makes the value jump by ~1e-11 whenever an eigenvalue crosses it.
    """
    return entropy_from_eigvals(psd_eigvals(rho), floor)


def batched_entropy(rhos: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """von Neumann entropy of a stack of matrices of shape (..., n, n)."""
    w = np.linalg.eigvalsh(0.5 * (rhos + np.swapaxes(rhos, -1, -2).conj()))
    safe = np.where(w > floor, w, 1.0)
    return -np.sum(np.where(w > floor, w * np.log2(safe), 0.0), axis=-1)


def _split(dims: Sequence[int] | None, n: int) -> list[int]:
    if dims is None:
        d = int(round(np.sqrt(n)))
        if d * d != n:
            raise ValueError("pass dims for a non-square bipartition")
        return [d, d]
    return [int(x) for x in dims]


def coherent_information_state(rho: np.ndarray, dims: Sequence[int] | None = None,
                               a_systems: Sequence[int] = (0,)) -> float:
    """I(A>B) = H(B) - H(AB); ``a_systems`` lists the subsystems forming A."""
    dims = _split(dims, rho.shape[0])
    b_systems = [i for i in range(len(dims)) if i not in set(a_systems)]
    rho_b = partial_trace(rho, dims, b_systems) if b_systems else np.ones((1, 1))
    return von_neumann(rho_b) - von_neumann(rho)


def conditional_entropy(rho: np.ndarray, dims: Sequence[int] | None = None,
                        a_systems: Sequence[int] = (0,)) -> float:
    """H(A|B) = -I(A>B)."""
    return -coherent_information_state(rho, dims, a_systems)


def coherent_information_channel(rho: np.ndarray, ch: ChannelRep) -> float:
    """I_c(rho, N) = H(N(rho)) - H(N^c(rho))."""
    return von_neumann(ch(rho)) - von_neumann(complementary(ch)(rho))


def binary_entropy(p: float) -> float:
    if not -1e-12 <= p <= 1 + 1e-12:
        raise ValueError(f"binary entropy needs p in [0, 1], got {p}")
    p = min(max(float(p), 0.0), 1.0)
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def bosonic_entropy(p: float) -> float:
    """g(p) = (1+p) h(p/(1+p))."""
    if p < 0:
        raise ValueError(f"bosonic entropy needs p >= 0, got {p}")
    return (1 + p) * binary_entropy(p / (1 + p))


def relative_entropy(rho: np.ndarray, sigma: np.ndarray, floor: float = EIG_FLOOR) -> float:
    """Umegaki relative entropy Tr rho (log rho - log sigma); +inf on support violation.

    ``sigma`` may be any PSD operator (not necessarily normalized).
    """
    wr, vr = eigh(rho)
    ws, vs = eigh(sigma)
    # support test: rho's significant eigenvectors must have weight on supp(sigma)
    big = wr > SUPPORT_EIG_TOL
    overlaps = np.abs(vs.conj().T @ vr[:, big]) ** 2          # (sigma index, rho index)
    in_supp = ws > SUPPORT_OVERLAP_TOL
    kernel_weight = overlaps[~in_supp].sum(axis=0)
    if np.any(kernel_weight > SUPPORT_OVERLAP_TOL):
        return float("inf")
    if np.any(overlaps[in_supp].sum(axis=0) <= SUPPORT_OVERLAP_TOL):
        return float("inf")
    wr_big = wr[big]
    term1 = float(np.sum(wr_big * np.log2(wr_big)))
    log_ws = np.log2(np.where(in_supp, ws, 1.0)) * in_supp
    # Tr rho log sigma = sum_{i,j} lambda_i |<s_j|r_i>|^2 log s_j
    term2 = float(np.sum(wr_big[None, :] * overlaps * log_ws[:, None]))
    return term1 - term2


def amortized_gap(ch: ChannelRep, rho: np.ndarray, sigma: np.ndarray) -> float:
    """D((id (x) N)(rho) || 1_E (x) N(sigma_A)) - D(rho || sigma) for rho, sigma on E (x) A, E ~ A."""
    d = ch.in_dim
    dims = [d, d]
    out_rho, _ = apply(ch, rho, dims, on=1)
    sigma_a = partial_trace(sigma, dims, [1])
    second = np.kron(np.eye(d), ch(sigma_a))
    first = relative_entropy(out_rho, second)
    base = relative_entropy(rho, sigma)
    if np.isinf(base):
        # sup over pairs never picks a support-violating sigma; report -inf gain
        return float("-inf") if not np.isinf(first) else float("nan")
    return first - base

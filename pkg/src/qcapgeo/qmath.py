"""Dense complex linear algebra shared by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype complex128; composite
systems are described by an explicit list of subsystem dimensions.
"""

from __future__ import annotations

from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np

EIG_FLOOR = 1e-12
NEG_EIG_TOL = 1e-8


def tensor(*mats: np.ndarray) -> np.ndarray:
    """Kronecker product of any number of matrices (or vectors)."""
    if not mats:
        raise ValueError("tensor() needs at least one operand")
    return reduce(np.kron, mats)


def dagger(x: np.ndarray) -> np.ndarray:
    return x.conj().T


def _check_dims(m: np.ndarray, dims: Sequence[int]) -> None:
    n = int(np.prod(dims))
    if m.ndim != 2 or m.shape != (n, n):
        raise ValueError(f"matrix of shape {m.shape} does not match dims {list(dims)}")


def partial_trace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``.

    Kept subsystems appear in their original order, whatever order ``keep``
    lists them in.
    """
    dims = [int(d) for d in dims]
    _check_dims(m, dims)
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep={keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    t = m.reshape(dims + dims)
    row = list(range(n))
    col = [i + n if i in keep else i for i in range(n)]
    out = [i for i in keep] + [i + n for i in keep]
    d_keep = int(np.prod([dims[i] for i in keep])) if keep else 1
    return np.einsum(t, row + col, out).reshape(d_keep, d_keep)


def permute_systems(m: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder subsystems of an operator: new subsystem i is old subsystem perm[i]."""
    dims = [int(d) for d in dims]
    _check_dims(m, dims)
    n = len(dims)
    t = m.reshape(dims + dims)
    t = t.transpose(list(perm) + [p + n for p in perm])
    d = int(np.prod(dims))
    return t.reshape(d, d)


def permute_vector(v: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    return v.reshape([int(d) for d in dims]).transpose(list(perm)).reshape(-1)


def hermitian_part(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + dagger(x))


def eigh(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian eigendecomposition with ascending eigenvalues."""
    return np.linalg.eigh(hermitian_part(h))


def psd_eigvals(h: np.ndarray) -> np.ndarray:
    """Eigenvalues of a PSD matrix; raises on eigenvalues below -1e-8."""
    w = np.linalg.eigvalsh(hermitian_part(h))
    if w.size and w[0] < -NEG_EIG_TOL:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    return w


def matrix_log_psd(h: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Base-2 logarithm of a PSD matrix with eigenvalues clamped to ``floor``."""
    w, v = eigh(h)
    if w.size and w[0] < -NEG_EIG_TOL:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    lw = np.log2(np.maximum(w, floor))
    return (v * lw) @ dagger(v)


def trace_norm(x: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(x, compute_uv=False)))


def operator_norm(x: np.ndarray) -> float:
    return float(np.linalg.svd(x, compute_uv=False)[0])


def purify(rho: np.ndarray) -> np.ndarray:
    """Canonical purification sum_i sqrt(p_i) |psi_i> (x) |e_i>.

    The environment always has the full side length of ``rho``; eigenvectors
    are taken in ascending eigenvalue order so the layout is reproducible.
    """
    w, v = eigh(rho)
    if w.size and w[0] < -NEG_EIG_TOL:
        raise ValueError(f"cannot purify a non-PSD matrix (min eigenvalue {w[0]:.3e})")
    amp = np.sqrt(np.clip(w, 0.0, None))
    # |phi> = sum_i amp_i v[:, i] (x) e_i  ->  matrix phi[x, i] = v[x, i] * amp_i
    return (v * amp).reshape(-1)


def ket(i: int, d: int) -> np.ndarray:
    e = np.zeros(d, dtype=complex)
    e[i] = 1.0
    return e


def proj(v: np.ndarray) -> np.ndarray:
    return np.outer(v, v.conj())


def max_entangled(d: int) -> np.ndarray:
    """Normalized maximally entangled vector sum_i |ii>/sqrt(d)."""
    return np.eye(d, dtype=complex).reshape(-1) / np.sqrt(d)


def is_density(rho: np.ndarray, tol: float = 1e-10) -> bool:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if np.linalg.norm(rho - dagger(rho)) > max(tol, 1e-12):
        return False
    if abs(np.trace(rho) - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh(hermitian_part(rho))[0] >= -tol)


def isometry_defect(v: np.ndarray) -> float:
    """Frobenius distance of V^dag V from the identity."""
    return float(np.linalg.norm(dagger(v) @ v - np.eye(v.shape[1])))


# -- random objects -----------------------------------------------------------

def ginibre(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)


def qf(x: np.ndarray) -> np.ndarray:
    """Q factor of a thin QR decomposition with R having nonnegative diagonal."""
    q, r = np.linalg.qr(x)
    d = np.diagonal(r)
    phase = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1.0), 1.0)
    return q * phase


def random_isometry(rows: int, cols: int, rng: np.random.Generator, real: bool = False) -> np.ndarray:
    if real:
        return qf(rng.standard_normal((rows, cols))).astype(complex)
    return qf(ginibre(rows, cols, rng))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    return random_isometry(n, n, rng)


def random_state_vector(n: int, rng: np.random.Generator) -> np.ndarray:
    v = ginibre(n, 1, rng)[:, 0]
    return v / np.linalg.norm(v)


def random_density(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    g = ginibre(n, rank or n, rng)
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    return hermitian_part(ginibre(n, n, rng))


# -- matrix text format ---------------------------------------------------------

def format_matrix(m: np.ndarray) -> str:
    """First line "rows cols", then one "re im" line per entry in row-major order."""
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    lines += [f"{z.real:.17g} {z.imag:.17g}" for z in m.reshape(-1)]
    return "\n".join(lines) + "\n"


def parse_matrices(text: str) -> list[np.ndarray]:
    """Parse one or more concatenated matrix blocks; lines starting with '#' are skipped."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    out = []
    i = 0
    while i < len(rows):
        if len(rows[i]) == 3:
            # index header "k dim_left dim_right" preceding a block
            i += 1
            continue
        if len(rows[i]) != 2:
            raise ValueError(f"bad matrix header at line {i + 1}: {rows[i]}")
        r, c = int(rows[i][0]), int(rows[i][1])
        body = rows[i + 1:i + 1 + r * c]
        if len(body) != r * c:
            raise ValueError("truncated matrix block")
        vals = np.array([float(a) + 1j * float(b) for a, b in body])
        out.append(vals.reshape(r, c))
        i += 1 + r * c
    return out


def save_matrix(path: str | Path, m: np.ndarray) -> None:
    Path(path).write_text(format_matrix(m))


def load_matrix(path: str | Path) -> np.ndarray:
    mats = parse_matrices(Path(path).read_text())
    if len(mats) != 1:
        raise ValueError(f"{path}: expected one matrix, found {len(mats)}")
    return mats[0]

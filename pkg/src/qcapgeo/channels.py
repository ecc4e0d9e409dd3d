"""Quantum channels as Kraus lists, their Choi/Stinespring forms, and the channel zoo."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qmath import dagger, eigh, ket, max_entangled, proj

CPTP_TOL = 1e-10


@dataclass(frozen=True)
class ChannelRep:
    """A channel held as a stack of Kraus operators of shape (k, out_dim, in_dim)."""

    kraus: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kraus, dtype=complex)
        if k.ndim == 2:
            k = k[None]
        if k.ndim != 3 or k.shape[0] == 0:
            raise ValueError("Kraus stack must have shape (k, out_dim, in_dim)")
        k = np.ascontiguousarray(k)
        k.setflags(write=False)
        object.__setattr__(self, "kraus", k)

    @property
    def in_dim(self) -> int:
        return self.kraus.shape[2]

    @property
    def out_dim(self) -> int:
        return self.kraus.shape[1]

    @property
    def n_kraus(self) -> int:
        return self.kraus.shape[0]

    def completeness_defect(self) -> float:
        s = np.einsum("kba,kbc->ac", self.kraus.conj(), self.kraus)
        return float(np.linalg.norm(s - np.eye(self.in_dim)))

    def is_cptp(self, tol: float = CPTP_TOL) -> bool:
        return self.completeness_defect() <= tol

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return np.einsum("kba,ac,kdc->bd", self.kraus, rho, self.kraus.conj())


def apply(ch: ChannelRep, rho: np.ndarray, dims: Sequence[int] | None = None, on: int = 0
          ) -> tuple[np.ndarray, list[int]]:
    """Apply ``ch`` to subsystem ``on`` of ``rho``; returns the output and its dims."""
    dims = [rho.shape[0]] if dims is None else [int(d) for d in dims]
    if int(np.prod(dims)) != rho.shape[0]:
        raise ValueError(f"dims {dims} do not match matrix side {rho.shape[0]}")
    if dims[on] != ch.in_dim:
        raise ValueError(f"subsystem {on} has dim {dims[on]}, channel expects {ch.in_dim}")
    left = int(np.prod(dims[:on]))
    right = int(np.prod(dims[on + 1:]))
    t = rho.reshape(left, ch.in_dim, right, left, ch.in_dim, right)
    out = np.einsum("kba,iajlcm,kdc->ibjldm", ch.kraus, t, ch.kraus.conj(), optimize=True)
    new_dims = list(dims)
    new_dims[on] = ch.out_dim
    n = int(np.prod(new_dims))
    return out.reshape(n, n), new_dims


def apply_adjoint(ch: ChannelRep, x: np.ndarray) -> np.ndarray:
    """Heisenberg-picture map sum_k K^dag X K."""
    return np.einsum("kba,bd,kdc->ac", ch.kraus.conj(), x, ch.kraus)


def choi(ch: ChannelRep) -> np.ndarray:
    """Unnormalized Choi matrix (id (x) N)(|Gamma><Gamma|), input system first."""
    # (1 (x) K)|Gamma> has components v[a, b] = K[b, a]
    vs = ch.kraus.transpose(0, 2, 1).reshape(ch.n_kraus, -1)
    return vs.T @ vs.conj()


def choi_state(ch: ChannelRep) -> np.ndarray:
    return choi(ch) / ch.in_dim


def apply_choi(j: np.ndarray, rho: np.ndarray, in_dim: int, out_dim: int) -> np.ndarray:
    """N(rho) = Tr_A[(rho^T (x) 1) J]."""
    jt = j.reshape(in_dim, out_dim, in_dim, out_dim)
    return np.einsum("ac,abcd->bd", rho, jt)


def kraus_from_choi(j: np.ndarray, in_dim: int, out_dim: int, tol: float = 1e-10) -> np.ndarray:
    """Kraus stack from the eigenvectors of a Choi matrix (ascending eigenvalue order)."""
    w, v = eigh(j)
    keep = w > tol
    if not np.any(keep):
        raise ValueError("Choi matrix has no eigenvalue above tolerance")
    w, v = w[keep], v[:, keep]
    vecs = (v * np.sqrt(w)).T.reshape(-1, in_dim, out_dim)
    return vecs.transpose(0, 2, 1)


def channel_from_choi(j: np.ndarray, in_dim: int, out_dim: int, tol: float = 1e-10) -> ChannelRep:
    return ChannelRep(kraus_from_choi(j, in_dim, out_dim, tol))


def stinespring(ch: ChannelRep) -> np.ndarray:
    """Isometry V = sum_i K_i (x) |i>_E mapping A -> B (x) E."""
    return ch.kraus.transpose(1, 0, 2).reshape(ch.out_dim * ch.n_kraus, ch.in_dim)


def complementary(ch: ChannelRep) -> ChannelRep:
    """N^c(rho) = Tr_B(V rho V^dag), read off the Stinespring isometry."""
    v = stinespring(ch).reshape(ch.out_dim, ch.n_kraus, ch.in_dim)
    return ChannelRep(v)


def compose(outer: ChannelRep, inner: ChannelRep) -> ChannelRep:
    """Kraus stack of outer o inner (inner applied first)."""
    if outer.in_dim != inner.out_dim:
        raise ValueError("dimension mismatch in channel composition")
    k = np.einsum("icb,jba->ijca", outer.kraus, inner.kraus)
    return ChannelRep(k.reshape(-1, outer.out_dim, inner.in_dim))


def channel_from_isometry(w: np.ndarray, out_dim: int) -> ChannelRep:
    """Channel Tr_env(W . W^dag) for an isometry W: A -> B (x) env."""
    env = w.shape[0] // out_dim
    return ChannelRep(w.reshape(out_dim, env, w.shape[1]).transpose(1, 0, 2))


# -- the channel zoo ------------------------------------------------------------

def _embed(m: np.ndarray, d_out: int) -> np.ndarray:
    out = np.zeros((d_out, m.shape[1]), dtype=complex)
    out[: m.shape[0]] = m
    return out


def _prob(name: str, x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"parameter {name}={x} must lie in [0, 1]")
    return x


def identity(d: int = 2) -> ChannelRep:
    return ChannelRep(np.eye(d, dtype=complex)[None])


def weyl(d: int) -> list[np.ndarray]:
    """Generalized Pauli operators X^i Z^j, (i, j) in row-major order."""
    x = np.roll(np.eye(d), 1, axis=0)
    z = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    # keep the qubit Paulis exactly real (XZ = [[0, -1], [1, 0]])
    z = np.where(np.abs(z.imag) < 1e-14, z.real, z)
    return [np.linalg.matrix_power(x, i) @ np.linalg.matrix_power(z, j)
            for i in range(d) for j in range(d)]


def depolarizing(p: float, d: int = 2) -> ChannelRep:
    p = _prob("p", p)
    ops = weyl(d)
    ks = [np.sqrt(1 - p) * ops[0]] + [np.sqrt(p / (d * d - 1)) * w for w in ops[1:]]
    return ChannelRep(np.array(ks))


def amplitude_damping(gamma: float) -> ChannelRep:
    g = _prob("gamma", gamma)
    k1 = np.array([[1, 0], [0, np.sqrt(1 - g)]], dtype=complex)
    k2 = np.array([[0, np.sqrt(g)], [0, 0]], dtype=complex)
    return ChannelRep(np.array([k1, k2]))


def gadc(gamma: float, N: float) -> ChannelRep:
    g, n = _prob("gamma", gamma), _prob("N", N)
    a1 = np.sqrt(1 - n) * np.array([[1, 0], [0, np.sqrt(1 - g)]])
    a2 = np.sqrt(g * (1 - n)) * np.array([[0, 1], [0, 0]])
    a3 = np.sqrt(n) * np.array([[np.sqrt(1 - g), 0], [0, 1]])
    a4 = np.sqrt(g * n) * np.array([[0, 0], [1, 0]])
    return ChannelRep(np.array([a1, a2, a3, a4], dtype=complex))


def dephasing(p: float) -> ChannelRep:
    p = _prob("p", p)
    z = np.diag([1.0, -1.0]).astype(complex)
    return ChannelRep(np.array([np.sqrt(1 - p) * np.eye(2), np.sqrt(p) * z]))


def erasure(p: float, d: int = 2) -> ChannelRep:
    """Output dimension d+1; the flag |e> is the last basis vector."""
    p = _prob("p", p)
    ks = [np.sqrt(1 - p) * _embed(np.eye(d), d + 1)]
    ks += [np.sqrt(p) * np.outer(ket(d, d + 1), ket(i, d)) for i in range(d)]
    return ChannelRep(np.array(ks))


def dephrasure(p: float, q: float) -> ChannelRep:
    p, q = _prob("p", p), _prob("q", q)
    z = np.diag([1.0, -1.0])
    ks = [np.sqrt((1 - q) * (1 - p)) * _embed(np.eye(2), 3),
          np.sqrt((1 - q) * p) * _embed(z, 3)]
    ks += [np.sqrt(q) * np.outer(ket(2, 3), ket(i, 2)) for i in range(2)]
    return ChannelRep(np.array(ks, dtype=complex))


def damping_dephasing(g: float, p: float) -> ChannelRep:
    """Dephasing_p o AmplitudeDamping_g with the three-operator Kraus set."""
    g, p = _prob("g", g), _prob("p", p)
    o1 = np.sqrt(1 - p) * np.array([[1, 0], [0, np.sqrt(1 - g)]])
    o2 = np.sqrt(g) * np.array([[0, 1], [0, 0]])
    o3 = np.sqrt(p) * np.array([[1, 0], [0, -np.sqrt(1 - g)]])
    return ChannelRep(np.array([o1, o2, o3], dtype=complex))


def damping_erasure(g: float, p: float) -> ChannelRep:
    """Erasure_p o AmplitudeDamping_g."""
    g, p = _prob("g", g), _prob("p", p)
    ad = amplitude_damping(g).kraus
    ks = [np.sqrt(1 - p) * _embed(k, 3) for k in ad]
    ks += [np.sqrt(p) * np.outer(ket(2, 3), ket(i, 2)) for i in range(2)]
    return ChannelRep(np.array(ks))


@dataclass
class ChannelSpec:
    name: str
    params: dict = field(default_factory=dict)
    dim: int = 2
    kraus: list | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "params": dict(self.params), "dim": self.dim}
        if self.kraus is not None:
            d["kraus"] = [[[[z.real, z.imag] for z in row] for row in k] for k in np.asarray(self.kraus)]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSpec":
        kraus = d.get("kraus")
        if kraus is not None:
            kraus = [np.array([[complex(*z) for z in row] for row in k]) for k in kraus]
        return cls(d["name"], dict(d.get("params", {})), int(d.get("dim", 2)), kraus)


_ZOO = {
    "identity": lambda s: identity(s.dim),
    "depolarizing": lambda s: depolarizing(s.params["p"], s.dim),
    "amplitude_damping": lambda s: amplitude_damping(s.params["gamma"]),
    "gadc": lambda s: gadc(s.params["gamma"], s.params["N"]),
    "dephasing": lambda s: dephasing(s.params["p"]),
    "erasure": lambda s: erasure(s.params["p"], s.dim),
    "dephrasure": lambda s: dephrasure(s.params["p"], s.params["q"]),
    "damping_dephasing": lambda s: damping_dephasing(s.params["g"], s.params["p"]),
    "damping_erasure": lambda s: damping_erasure(s.params["g"], s.params["p"]),
}

CHANNEL_NAMES = tuple(_ZOO) + ("custom_kraus",)


def channel_from_spec(spec: ChannelSpec) -> ChannelRep:
    if spec.name == "custom_kraus":
        if spec.kraus is None:
            raise ValueError("custom_kraus needs a Kraus list")
        ch = ChannelRep(np.array(spec.kraus, dtype=complex))
        if not ch.is_cptp(1e-8):
            raise ValueError("custom Kraus list is not trace preserving")
        return ch
    try:
        build = _ZOO[spec.name]
    except KeyError:
        raise ValueError(f"unknown channel {spec.name!r}; known: {', '.join(CHANNEL_NAMES)}") from None
    try:
        return build(spec)
    except KeyError as e:
        raise ValueError(f"channel {spec.name!r} is missing parameter {e.args[0]!r}") from None


# -- states ---------------------------------------------------------------------

def isotropic(d: int, f: float) -> np.ndarray:
    f = _prob("f", f)
    phi = proj(max_entangled(d))
    return f * phi + (1 - f) / (d * d - 1) * (np.eye(d * d) - phi)


def noisy_mes(ch_a: ChannelRep, ch_b: ChannelRep) -> np.ndarray:
    """(N (x) M)(Phi) on a d x d maximally entangled state."""
    if ch_a.in_dim != ch_b.in_dim:
        raise ValueError("both local channels must act on the same dimension")
    d = ch_a.in_dim
    rho, dims = apply(ch_a, proj(max_entangled(d)), [d, d], 0)
    rho, _ = apply(ch_b, rho, dims, 1)
    return rho


def state_from_spec(kind: str, params: dict) -> tuple[np.ndarray, list[int]]:
    """Build a bipartite state; returns (rho, [dA, dB])."""
    if kind == "isotropic":
        d = int(params.get("d", 2))
        return isotropic(d, params["f"]), [d, d]
    if kind == "noisy_mes":
        a = channel_from_spec(_as_spec(params["channel_a"]))
        b = channel_from_spec(_as_spec(params["channel_b"]))
        return noisy_mes(a, b), [a.out_dim, b.out_dim]
    if kind == "choi_state":
        ch = channel_from_spec(_as_spec(params["channel"]))
        return choi_state(ch), [ch.in_dim, ch.out_dim]
    raise ValueError(f"unknown state kind {kind!r}")


def _as_spec(x) -> ChannelSpec:
    return x if isinstance(x, ChannelSpec) else ChannelSpec.from_dict(x)

"""Continuity-bound upper bounds and the extension search over Stiefel manifolds."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .channels import ChannelRep, choi_state, stinespring
from .entropy import binary_entropy, bosonic_entropy, coherent_information_state, von_neumann
from .manifolds import RgdConfig, RgdResult, Stiefel, collect, restart_rng, rgd, run_restarts
from .qmath import dagger, purify
from .sdp import DegradabilityCertificate, SdpError, dg_channel, dg_state, u_m_channel, u_m_state

VARIANTS = ("u_m_form", "coherent_form")


def _log_dim_term(d: int) -> float:
    return math.log2(d * d - 1) if d > 1 else 0.0


def improved_tail(eps: float, d: int) -> float:
    """eps log(d^2 - 1) + h(eps); zero at eps = 0."""
    eps = min(max(float(eps), 0.0), 1.0)
    if eps == 0.0:
        return 0.0
    return eps * _log_dim_term(d) + binary_entropy(eps)


def winter_tail(eps: float, d: int) -> float:
    """eps log(d^2) + g(eps), the older uniform continuity estimate."""
    eps = min(max(float(eps), 0.0), 1.0)
    if eps == 0.0:
        return 0.0
    return eps * math.log2(d * d) + bosonic_entropy(eps)


def state_bound_continuity(rho: np.ndarray, cert: DegradabilityCertificate, variant: str = "u_m_form",
                           dims: Sequence[int] | None = None, env_dim: int | None = None) -> float:
    """Upper bound on D-> from a degradability certificate.

    u_m_form: U_M + eps log(|E|^2-1) + h(eps); coherent_form: I(A>B) + 2 eps log(|E|^2-1) + 2 h(eps);
    winter_form: U_M + eps log|E|^2 + g(eps). ``env_dim`` overrides |E| (default: the
    certificate's environment).
    """
    if dims is None:
        d = int(round(math.sqrt(rho.shape[0])))
        dims = [d, d]
    d_e = env_dim if env_dim is not None else cert.env_dim
    eps = cert.epsilon
    if variant == "coherent_form":
        return coherent_information_state(rho, dims) + 2 * improved_tail(eps, d_e)
    um = u_m_state(rho, cert.degrading_choi, dims, out_dim=cert.env_dim)
    if variant == "u_m_form":
        return um + improved_tail(eps, d_e)
    if variant == "winter_form":
        return um + winter_tail(eps, d_e)
    raise ValueError(f"unknown variant {variant!r}")


def channel_bound_continuity(ch: ChannelRep, cert: DegradabilityCertificate, method: str | None = None,
                             step: float = 0.005, variant: str = "u_m_form", env_dim: int | None = None,
                             **scan_kw) -> float:
    """U_M(N) + eps log(|E|^2 - 1) + h(eps) with M the certificate's degrading map.

    The scan defaults to the real-qubit grid when it applies and to a random-state
    grid otherwise (the latter only estimates the inner maximum from below).
    """
    d_e = env_dim if env_dim is not None else cert.env_dim
    if method is None:
        method = "scan_real_qubit" if _real_qubit_ok(ch, cert.degrading_choi) else "grid_general"
    um = u_m_channel(ch, cert.degrading_choi, method=method, step=step, **scan_kw)
    if variant == "u_m_form":
        return um + improved_tail(cert.epsilon, d_e)
    if variant == "winter_form":
        return um + winter_tail(cert.epsilon, d_e)
    raise ValueError(f"unknown variant {variant!r}")


def _real_qubit_ok(ch: ChannelRep, m: np.ndarray) -> bool:
    from .channels import choi

    return ch.in_dim == 2 and np.abs(choi(ch).imag).max() <= 1e-10 and np.abs(m.imag).max() <= 1e-10


def channel_hashing(ch: ChannelRep) -> float:
    """Coherent information of the normalized Choi state (maximally mixed input)."""
    return coherent_information_state(choi_state(ch), [ch.in_dim, ch.out_dim])


# -- extensions ------------------------------------------------------------------

@dataclass
class ExtensionProblem:
    """Extension search: V in St(|F||R|, |E|) maps the environment E to F (x) R.

    For a state, rho_ABF = Tr_R[(1 (x) V) phi (1 (x) V)^dag] with phi the canonical
    purification; for a channel, the extension has Stinespring (1_B (x) V) U.
    """

    base: Any                      # density matrix or ChannelRep
    dims: Sequence[int] | None = None
    flag_dim: int = 2
    env_dim: int = 4
    variant: str = "coherent_form"
    real: bool | None = None
    scan_step: float = 0.005
    sdp_tol: float = 1e-9
    search_mu_floor: float | None = 1e-7   # central-path stop for the inner SDP during the search
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.flag_dim < 1 or self.env_dim < 1:
            raise ValueError("flag and environment dimensions must be positive")
        if self.is_channel:
            u = stinespring(self.base)
            e = u.shape[0] // self.base.out_dim
            self._cache["stinespring"] = u.reshape(self.base.out_dim, e, self.base.in_dim)
            self._cache["E"] = e
            if self.real is None:
                self.real = bool(np.abs(u.imag).max() <= 1e-14)
        else:
            if self.dims is None:
                d = int(round(math.sqrt(self.base.shape[0])))
                self.dims = [d, d]
            self.dims = [int(self.dims[0]), int(np.prod(self.dims[1:]))]
            phi = purify(self.base)
            e = phi.size // self.base.shape[0]
            self._cache["phi"] = phi.reshape(self.base.shape[0], e)
            self._cache["E"] = e
            if self.real is None:
                self.real = False
        if self.flag_dim * self.env_dim < self.env_in:
            raise ValueError(f"|F||R| = {self.flag_dim * self.env_dim} is smaller than |E| = {self.env_in}")

    @property
    def is_channel(self) -> bool:
        return isinstance(self.base, ChannelRep)

    @property
    def env_in(self) -> int:
        return self._cache["E"]

    @property
    def manifold(self) -> Stiefel:
        return Stiefel(self.flag_dim * self.env_dim, self.env_in, real=bool(self.real))

    @property
    def eta(self) -> int:
        """Dimension entering log(eta^2 - 1) for the extended object."""
        if self.is_channel:
            return self.env_dim
        return self.dims[0] * self.dims[1] * self.flag_dim

    # states
    def extended_state(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[int]]:
        """(rho_ABF, purification on A (BF) R, [dA, dB*F])."""
        psi = self._cache["phi"] @ v.T          # rows AB, columns (F, R)
        da, db = self.dims
        ab_f = psi.reshape(da * db * self.flag_dim, self.env_dim)
        rho = ab_f @ dagger(ab_f)
        return rho, ab_f.reshape(-1), [da, db * self.flag_dim]

    # channels
    def extended_channel(self, v: np.ndarray) -> ChannelRep:
        u = self._cache["stinespring"]          # (B, E, A)
        b, _, a = u.shape
        w = np.einsum("xe,bea->bxa", v, u).reshape(b, self.flag_dim, self.env_dim, a)
        kraus = w.transpose(2, 0, 1, 3).reshape(self.env_dim, b * self.flag_dim, a)
        return ChannelRep(kraus)

    def evaluate(self, v: np.ndarray, forms: Sequence[str] = VARIANTS, search: bool = False) -> dict:
        """Certificate and bound values at V for the requested forms.

        With ``search`` the inner SDP stops on its central path (see dg_state):
        still a valid bound, marginally weaker, but smooth in V.
        """
        out: dict[str, Any] = {}
        floor = self.search_mu_floor if search else None
        if self.is_channel:
            ext = self.extended_channel(v)
            cert = dg_channel(ext, tol=self.sdp_tol, mu_floor=floor)
            out["hashing"] = channel_hashing(ext)
            if "u_m_form" in forms or "coherent_form" in forms:
                # for channels the only available form is the U_M one
                out["u_m_form"] = channel_bound_continuity(ext, cert, step=self.scan_step, env_dim=self.eta)
                out["coherent_form"] = out["u_m_form"]
        else:
            rho, psi, dims = self.extended_state(v)
            cert = dg_state(rho, dims, purification=psi, tol=self.sdp_tol, mu_floor=floor)
            out["hashing"] = coherent_information_state(rho, dims)
            if "coherent_form" in forms:
                out["coherent_form"] = out["hashing"] + 2 * improved_tail(cert.epsilon, self.eta)
            if "u_m_form" in forms:
                um = u_m_state(rho, cert.degrading_choi, dims, out_dim=cert.env_dim)
                out["u_m"] = um
                out["u_m_form"] = um + improved_tail(cert.epsilon, self.eta)
        out["epsilon"] = cert.epsilon
        out["certificate"] = cert
        return out

    def unextended(self) -> dict:
        """Bounds of the original object (no flag)."""
        out: dict[str, Any] = {}
        if self.is_channel:
            cert = dg_channel(self.base, tol=self.sdp_tol)
            out["hashing"] = channel_hashing(self.base)
            out["u_m_form"] = channel_bound_continuity(self.base, cert, step=self.scan_step)
            out["coherent_form"] = out["u_m_form"]
            out["winter_form"] = channel_bound_continuity(self.base, cert, step=self.scan_step,
                                                          variant="winter_form")
        else:
            cert = dg_state(self.base, self.dims, tol=self.sdp_tol)
            out["hashing"] = coherent_information_state(self.base, self.dims)
            for form in ("u_m_form", "coherent_form", "winter_form"):
                out[form] = state_bound_continuity(self.base, cert, form, self.dims)
        out["epsilon"] = cert.epsilon
        out["certificate"] = cert
        return out


def extension_objective(v: np.ndarray, prob: ExtensionProblem) -> float:
    """Bound value at V for the problem's variant; +inf when the inner SDP fails."""
    try:
        return float(prob.evaluate(v, forms=(prob.variant,), search=True)[prob.variant])
    except (SdpError, np.linalg.LinAlgError, ValueError):
        return math.inf


@dataclass
class ExtensionConfig:
    restarts: int = 4
    seed: int = 0
    fd_step: float = 1e-6
    grad_tol: float = 1e-7
    max_iters: int = 60
    f_tol: float = 1e-7
    threads: int | None = None
    time_budget: float | None = None   # seconds for the whole search; late restarts are skipped


@dataclass
class UpperBoundResult:
    bound: float
    bound_u_m: float
    bound_coherent: float
    epsilon: float
    certificate: DegradabilityCertificate
    extension_isometry: np.ndarray | None
    variant: str
    unextended: dict
    hashing: float
    restarts: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def unextended_bound(self) -> float:
        return min(self.unextended["u_m_form"], self.unextended["coherent_form"])


def optimize_extension(prob: ExtensionProblem, config: ExtensionConfig | None = None) -> UpperBoundResult:
    """Minimize the extension objective over V with finite-difference RGD, several restarts.

    The unextended object is always evaluated and kept as a candidate, so the
    returned bound never exceeds the unextended one. The final bound is the
    smallest of the valid forms at the best point.
    """
    cfg = config or ExtensionConfig()
    t0 = time.perf_counter()
    m = prob.manifold
    base = prob.unextended()
    rcfg = RgdConfig(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol, fd_step=cfg.fd_step, f_tol=cfg.f_tol)

    def cost(v):
        return extension_objective(v, prob)

    deadline = None if cfg.time_budget is None else t0 + cfg.time_budget

    def job(i: int) -> RgdResult:
        rng = restart_rng(cfg.seed, i)
        local = rcfg
        if deadline is not None:
            local = replace(rcfg, time_limit=max(deadline - time.perf_counter(), 0.0))
        for _ in range(20):
            v0 = m.random_point(rng)
            if math.isfinite(cost(v0)):
                break
        else:
            return RgdResult(math.inf, None, "start_failed", 0, math.inf)
        return rgd(m, cost, v0, config=local)

    results = run_restarts(job, cfg.restarts, cfg.threads, deadline=deadline)
    finite = [r for r in results if r.point is not None and math.isfinite(r.value)]
    if cfg.restarts > 0 and not finite:
        raise RuntimeError("every restart of the extension search failed: "
                           + ", ".join(r.status for r in results))
    baseline = RgdResult(value=base[prob.variant], point=None, status="baseline", iterations=0, grad_norm=0.0)
    report = collect(results, cfg.seed, baseline=baseline)
    cands = [("baseline", None, base)]
    if finite:
        best = min(finite, key=lambda r: r.value)
        cands.append(("extension", best.point, prob.evaluate(best.point)))
    tag, v_best, vals = min(cands, key=lambda c: min(c[2]["u_m_form"], c[2]["coherent_form"]))
    bound = min(vals["u_m_form"], vals["coherent_form"])
    return UpperBoundResult(bound=bound, bound_u_m=vals["u_m_form"], bound_coherent=vals["coherent_form"],
                            epsilon=vals["epsilon"], certificate=vals["certificate"], extension_isometry=v_best,
                            variant=prob.variant, unextended=base, hashing=base["hashing"],
                            restarts=report.restarts, seconds=time.perf_counter() - t0)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcapgeo import manifolds as M
from qcapgeo import qmath as Q

MANIFOLDS = [M.Stiefel(5, 3), M.Stiefel(6, 2, real=True), M.Unitary(4), M.Sphere(5),
             M.Product([M.Unitary(2), M.Stiefel(4, 2)])]


def _ambient(m, rng):
    if isinstance(m, M.Product):
        return [_ambient(f, rng) for f in m.factors]
    if isinstance(m, M.Sphere):
        return Q.ginibre(m.n, 1, rng)[:, 0]
    return Q.ginibre(m.n, m.p, rng)


def _dist(m, a, b):
    if isinstance(m, M.Product):
        return math.sqrt(sum(_dist(f, x, y) ** 2 for f, x, y in zip(m.factors, a, b)))
    return float(np.linalg.norm(a - b))


@pytest.mark.parametrize("m", MANIFOLDS, ids=repr)
@given(seed=st.integers(0, 2**32 - 1))
def test_projection_tangency_retraction(m, seed):
    rng = np.random.default_rng(seed)
    v = m.random_point(rng)
    assert m.check_point(v) < 1e-10
    x = m.project(v, _ambient(m, rng))
    assert m.check_tangent(v, x) < 1e-10
    assert _dist(m, m.project(v, x), x) < 1e-12
    w = m.retract(v, m.scale(0.3, x))
    assert m.check_point(w) < 1e-10


@pytest.mark.parametrize("m", MANIFOLDS, ids=repr)
def test_retraction_is_second_order_close(m, rng):
    v = m.random_point(rng)
    x = m.project(v, _ambient(m, rng))
    x = m.scale(1 / m.norm(x), x)
    errs = [_dist(m, m.retract(v, m.scale(t, x)), m.add(v, m.scale(t, x))) for t in (1e-3, 1e-4)]
    assert 80 <= errs[0] / errs[1] <= 120


@pytest.mark.parametrize("m", MANIFOLDS, ids=repr)
def test_tangent_basis_orthonormal(m, rng):
    v = m.random_point(rng)
    basis = m.tangent_basis(v)
    assert len(basis) == m.dim
    g = np.array([[m.inner(a, b) for b in basis] for a in basis])
    assert np.allclose(g, np.eye(len(basis)), atol=1e-10)
    for b in basis:
        assert m.check_tangent(v, b) < 1e-10


def test_stiefel_rejects_bad_shapes():
    with pytest.raises(ValueError):
        M.Stiefel(2, 3)
    m = M.Stiefel(4, 2)
    with pytest.raises(ValueError):
        m.project(np.zeros((4, 2)), np.zeros((3, 2)))


def test_real_stiefel_stays_real(rng):
    m = M.Stiefel(5, 2, real=True)
    v = m.random_point(rng)
    x = m.project(v, Q.ginibre(5, 2, rng))
    assert np.abs(x.imag).max() == 0
    assert np.abs(m.retract(v, x).imag).max() == 0


def test_fd_gradient_matches_analytic(rng):
    # f(V) = Re Tr(A V), Euclidean gradient conj(A)^T
    m = M.Stiefel(4, 2)
    a = Q.ginibre(2, 4, rng)
    v = m.random_point(rng)
    f = lambda w: float(np.real(np.trace(a @ w)))
    fd = M.fd_riemannian_grad(f, m, v, step=1e-7)
    exact = M.euclidean_to_riemannian(m, v, a.conj().T)
    assert np.linalg.norm(fd - exact) / np.linalg.norm(exact) < 1e-5


def test_fd_gradient_survives_infinite_probe(rng):
    m = M.Sphere(3)
    v = m.random_point(rng)
    calls = {"n": 0}

    def f(w):
        calls["n"] += 1
        return math.inf if calls["n"] == 2 else float(np.abs(w[0]) ** 2)

    g = M.fd_riemannian_grad(f, m, v)
    assert np.all(np.isfinite(g))


def test_rgd_finds_dominant_eigenvector(rng):
    h = Q.random_hermitian(6, rng)
    m = M.Sphere(6)
    cost = lambda x: -float(np.real(np.vdot(x, h @ x)))
    grad = lambda x: m.project(x, -2 * h @ x)
    res = M.rgd(m, cost, m.random_point(rng), grad=grad, config=M.RgdConfig(max_iters=2000, grad_tol=1e-9))
    assert res.status == "converged"
    assert np.isclose(-res.value, np.linalg.eigvalsh(h)[-1], atol=1e-10)


def test_rgd_brockett_on_stiefel(rng):
    # min Tr(V^dag H V N) over St(5,2): sum of the two smallest eigenvalues weighted by N
    h = Q.random_hermitian(5, rng)
    n = np.diag([1.0, 2.0])
    m = M.Stiefel(5, 2)
    cost = lambda v: float(np.real(np.trace(Q.dagger(v) @ h @ v @ n)))
    grad = lambda v: m.project(v, 2 * h @ v @ n)
    res = M.rgd(m, cost, m.random_point(rng), grad=grad, config=M.RgdConfig(max_iters=3000, grad_tol=1e-8))
    w = np.linalg.eigvalsh(h)
    assert np.isclose(res.value, 2 * w[0] + w[1], atol=1e-8)


def test_rgd_time_limit_and_bad_start(rng):
    m = M.Sphere(4)
    res = M.rgd(m, lambda x: float(np.abs(x[0])), m.random_point(rng),
                config=M.RgdConfig(time_limit=0.0))
    assert res.status == "time_limit"
    with pytest.raises(ValueError):
        M.rgd(m, lambda x: math.inf, m.random_point(rng))


def test_restarts_are_reproducible(rng):
    h = Q.random_hermitian(4, rng)
    m = M.Sphere(4)
    cost = lambda x: float(np.real(np.vdot(x, h @ x)))

    def job(i):
        return M.rgd(m, cost, m.random_point(M.restart_rng(7, i)), config=M.RgdConfig(max_iters=20))

    a = M.collect(M.run_restarts(job, 3), 7)
    b = M.collect(M.run_restarts(job, 3, threads=2), 7)
    assert [r["value"] for r in a.restarts] == [r["value"] for r in b.restarts]
    assert a.restarts_used == 3
    assert a.best_so_far() == sorted(a.best_so_far(), reverse=True)


def test_deadline_skips_late_restarts():
    calls = []

    def job(i):
        calls.append(i)
        return M.RgdResult(float(i), None, "converged", 0, 0.0)

    out = M.run_restarts(job, 3, deadline=0.0)
    assert calls == [] and all(r.status == "skipped" for r in out)
    base = M.RgdResult(5.0, None, "baseline", 0, 0.0)
    rep = M.collect(out, 0, baseline=base)
    assert rep.best_value == 5.0 and rep.restarts_used == 1


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("QCAPGEO_THREADS", "2")
    assert M.worker_count(8) == 2
    monkeypatch.delenv("QCAPGEO_THREADS")
    assert M.worker_count(None) == 1

import numpy as np
import pytest

from qcapgeo import channels as C
from qcapgeo import qmath as Q
from qcapgeo import sdp as S


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_norm_sdps_match_eigenvalues(n, rng):
    for _ in range(3):
        h = Q.random_hermitian(n, rng)
        w = np.linalg.eigvalsh(h)
        assert abs(S.trace_norm_sdp(h) - np.abs(w).sum()) < 1e-7
        assert abs(S.operator_norm_sdp(h) - np.abs(w).max()) < 1e-7


def test_operator_norm_non_hermitian(rng):
    x = Q.ginibre(3, 3, rng)
    assert abs(S.operator_norm_sdp(x) - Q.operator_norm(x)) < 1e-7


def test_builder_small_program():
    # min Tr X s.t. X >= 0 (2x2), X_00 = 1 -> 1
    sb = S.SdpBuilder()
    x = sb.var(2)
    sb.equal(x.map(lambda s: s[:, :1, :1]), np.ones((1, 1)))
    sb.minimize(x.trace())
    for backend in ("ipm", "clarabel"):
        sol = sb.solve(1e-9, backend=backend)
        assert sol.status in ("Solved", "AlmostSolved")
        assert abs(sol.primal - 1.0) < 1e-7
        xv = sol.value(x)
        assert np.linalg.eigvalsh(xv)[0] > -1e-8


def test_dg_channel_degradable_and_identity():
    for ch, bound in [(C.amplitude_damping(0.3), 1e-6), (C.identity(2), 1e-8), (C.dephasing(0.1), 1e-6)]:
        cert = S.dg_channel(ch)
        assert cert.epsilon <= bound
        assert np.linalg.eigvalsh(cert.degrading_choi)[0] > -1e-9


def test_dg_channel_antidegradable_side():
    # AD(0.7) is antidegradable, so not degradable: epsilon is clearly positive
    assert S.dg_channel(C.amplitude_damping(0.7)).epsilon > 0.1


def test_dg_channel_gadc_regression():
    # frozen from a reference run of this implementation (tol 1e-9)
    cert = S.dg_channel(C.gadc(0.44035, 0.1))
    assert abs(cert.epsilon - 0.0678095339) < 1e-7


def _dg_state_cvxpy(rho, da, db):
    cp = pytest.importorskip("cvxpy")
    rho_ae, _, _, de = S.state_env_marginals(rho, [da, db])
    j = cp.Variable((db * de, db * de), hermitian=True)
    rt = Q.permute_systems(rho, [da, db], [0, 1]).reshape(da, db, da, db).transpose(0, 3, 2, 1).reshape(da * db,
                                                                                                     da * db)
    big = cp.kron(rt, np.eye(de)) @ cp.kron(np.eye(da), j)
    out = cp.partial_trace(big, [da, db, de], axis=1)
    cons = [j >> 0, cp.partial_trace(j, [db, de], axis=1) == np.eye(db)]
    prob = cp.Problem(cp.Minimize(0.5 * cp.normNuc(rho_ae - out)), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


@pytest.mark.parametrize("f", [0.85, 0.95])
def test_dg_state_against_cvxpy_isotropic(f):
    rho = C.isotropic(2, f)
    ours = S.dg_state(rho).epsilon
    assert abs(ours - _dg_state_cvxpy(rho, 2, 2)) < 1e-5


def test_dg_state_against_cvxpy_random(rng):
    rho = Q.random_density(4, rng, rank=2)
    assert abs(S.dg_state(rho).epsilon - _dg_state_cvxpy(rho, 2, 2)) < 1e-5


def test_dg_state_frozen_values():
    # regression values from this implementation, cross-checked against cvxpy above
    assert abs(S.dg_state(C.isotropic(2, 0.95)).epsilon - 0.0070300) < 1e-6
    assert abs(S.dg_state(C.isotropic(2, 0.85)).epsilon - 0.0637960) < 1e-6


def test_dg_state_independent_of_purification(rng):
    rho = Q.random_density(4, rng)
    phi = Q.purify(rho).reshape(4, 4)
    u = Q.random_unitary(4, rng)
    other = (phi @ u.T).reshape(-1)
    a = S.dg_state(rho, [2, 2]).epsilon
    b = S.dg_state(rho, [2, 2], purification=other).epsilon
    assert abs(a - b) < 1e-7


def test_dg_state_degradable_choi_state():
    rho = C.choi_state(C.amplitude_damping(0.2))
    assert S.dg_state(rho).epsilon < 1e-6


def test_central_path_mode_is_valid_and_close():
    rho = C.isotropic(2, 0.85)
    full = S.dg_state(rho).epsilon
    cen = S.dg_state(rho, mu_floor=1e-7)
    assert full - 1e-9 <= cen.epsilon <= full + 1e-4
    # the returned map is CPTP and the epsilon it certifies is attained
    rho_ae, da, db, de = S.state_env_marginals(rho, [2, 2])
    assert abs(S.trace_distance_after(rho, rho_ae, cen.degrading_choi, da, db, de) - cen.epsilon) < 1e-12


def test_u_m_degradable_equals_coherent_info():
    # for a degradable state U_M with the exact degrading map is I(A>B)
    from qcapgeo.entropy import coherent_information_state
    rho = C.choi_state(C.amplitude_damping(0.2))
    cert = S.dg_state(rho)
    um = S.u_m_state(rho, cert.degrading_choi, [2, 2], out_dim=cert.env_dim)
    assert abs(um - coherent_information_state(rho)) < 1e-4


def test_u_m_channel_checks_input():
    ch = C.amplitude_damping(0.3)
    cert = S.dg_channel(ch)
    val = S.u_m_channel(ch, cert.degrading_choi)
    assert np.isfinite(val)
    with pytest.raises(ValueError):
        S.u_m_channel(ch, np.eye(4) * 2)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcapgeo import channels as C
from qcapgeo import upper as U
from qcapgeo.entropy import binary_entropy, coherent_information_state
from qcapgeo.qmath import isometry_defect, partial_trace
from qcapgeo.sdp import dg_channel, dg_state


@given(st.floats(0, 1), st.integers(2, 16))
def test_improved_tail_below_winter(eps, d):
    assert U.improved_tail(eps, d) <= U.winter_tail(eps, d) + 1e-12


def test_tails_vanish_at_zero():
    assert U.improved_tail(0.0, 4) == 0.0 and U.winter_tail(0.0, 4) == 0.0


def test_degradable_state_collapses_to_coherent_info():
    # Choi state of a degradable channel: eps = 0 and U_M = I(A>B)
    rho = C.choi_state(C.amplitude_damping(0.2))
    cert = dg_state(rho, [2, 2])
    assert cert.epsilon < 1e-7
    ic = coherent_information_state(rho)
    assert abs(U.state_bound_continuity(rho, cert, "u_m_form") - ic) < 1e-5
    assert abs(U.state_bound_continuity(rho, cert, "coherent_form") - ic) < 1e-5


def test_bell_bound_is_one():
    rho = C.isotropic(2, 1.0)
    cert = dg_state(rho, [2, 2])
    for form in ("u_m_form", "coherent_form", "winter_form"):
        assert abs(U.state_bound_continuity(rho, cert, form) - 1) < 1e-6


def test_form_ordering_isotropic():
    rho = C.isotropic(2, 0.9)
    cert = dg_state(rho, [2, 2])
    h = coherent_information_state(rho)
    um = U.state_bound_continuity(rho, cert, "u_m_form")
    assert h - 1e-9 <= um <= U.state_bound_continuity(rho, cert, "winter_form") + 1e-12


def test_bad_variant():
    rho = C.isotropic(2, 0.9)
    with pytest.raises(ValueError):
        U.state_bound_continuity(rho, dg_state(rho, [2, 2]), "other")


def test_dephasing_channel_bound():
    ch = C.dephasing(0.1)
    b = U.channel_bound_continuity(ch, dg_channel(ch))
    assert abs(b - (1 - binary_entropy(0.1))) < 2e-3


def test_identity_channel_bound():
    ch = C.identity(2)
    assert abs(U.channel_bound_continuity(ch, dg_channel(ch)) - 1) < 1e-6


def test_erasure_half_bound_nonnegative():
    ch = C.erasure(0.5)
    assert U.channel_bound_continuity(ch, dg_channel(ch)) >= -1e-9


def test_channel_hashing_values():
    assert abs(U.channel_hashing(C.identity(2)) - 1) < 1e-12
    assert abs(U.channel_hashing(C.erasure(0.2)) - 0.6) < 1e-12


def test_state_extension_marginal(rng):
    rho = C.isotropic(2, 0.85)
    prob = U.ExtensionProblem(rho, flag_dim=2, env_dim=4)
    v = prob.manifold.random_point(rng)
    assert isometry_defect(v) < 1e-12
    ext, _, dims = prob.extended_state(v)
    assert dims == [2, 4]
    assert np.allclose(partial_trace(ext, [4, 2], [0]), rho)


def test_channel_extension_marginal(rng):
    ch = C.gadc(0.3, 0.1)
    prob = U.ExtensionProblem(ch, flag_dim=2, env_dim=4)
    ext = prob.extended_channel(prob.manifold.random_point(rng))
    assert ext.is_cptp()
    x = np.diag([0.3, 0.7]).astype(complex)
    out, _ = C.apply(ext, x)
    assert np.allclose(partial_trace(out, [2, 2], [0]), C.apply(ch, x)[0])


def test_flag_too_small():
    with pytest.raises(ValueError):
        U.ExtensionProblem(C.isotropic(2, 0.9), flag_dim=1, env_dim=2)


def test_objective_infinite_on_sdp_failure(monkeypatch, rng):
    prob = U.ExtensionProblem(C.isotropic(2, 0.9), flag_dim=2, env_dim=4)

    def boom(*a, **k):
        raise U.SdpError("forced")

    monkeypatch.setattr(U, "dg_state", boom)
    assert U.extension_objective(prob.manifold.random_point(rng), prob) == math.inf


def test_extension_search_improves_and_respects_hashing():
    prob = U.ExtensionProblem(C.isotropic(2, 0.85), flag_dim=2, env_dim=4)
    cfg = U.ExtensionConfig(restarts=1, max_iters=2)
    res = U.optimize_extension(prob, cfg)
    assert res.bound <= res.unextended_bound + 1e-12
    assert res.bound >= res.hashing - 1e-6
    again = U.optimize_extension(prob, cfg)
    assert again.bound == res.bound
    assert np.array_equal(again.extension_isometry, res.extension_isometry)

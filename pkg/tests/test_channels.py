import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcapgeo import channels as C
from qcapgeo import qmath as Q

prob = st.floats(0.0, 1.0)


@given(prob, prob)
def test_zoo_is_cptp(a, b):
    for ch in (C.depolarizing(a), C.amplitude_damping(a), C.gadc(a, b), C.dephasing(a), C.erasure(a),
               C.dephrasure(a, b), C.damping_dephasing(a, b), C.damping_erasure(a, b), C.depolarizing(a, 3)):
        assert ch.is_cptp(1e-10)


def test_parameter_domain():
    with pytest.raises(ValueError):
        C.dephasing(1.2)
    with pytest.raises(ValueError):
        C.gadc(0.3, -0.1)


def test_erasure_output_space(rng):
    ch = C.erasure(0.3)
    assert (ch.in_dim, ch.out_dim) == (2, 3)
    rho = Q.random_density(2, rng)
    out = ch(rho)
    assert np.allclose(out[:2, :2], 0.7 * rho)
    assert np.isclose(out[2, 2], 0.3)


def test_dephrasure_is_erasure_after_dephasing(rng):
    ch = C.dephrasure(0.32, 0.1)
    comp = C.compose(C.erasure(0.1), C.dephasing(0.32))
    for _ in range(5):
        rho = Q.random_density(2, rng)
        assert np.allclose(ch(rho), comp(rho), atol=1e-12)


def test_damping_dephasing_is_composition(rng):
    ch = C.damping_dephasing(0.2, 0.16)
    comp = C.compose(C.dephasing(0.16), C.amplitude_damping(0.2))
    rho = Q.random_density(2, rng)
    assert np.allclose(ch(rho), comp(rho), atol=1e-12)


def test_gadc_fixed_point():
    # the thermal state diag(1-N, N) is invariant
    g, n = 0.4, 0.2
    t = np.diag([1 - n, n])
    assert np.allclose(C.gadc(g, n)(t), t)


def test_apply_on_subsystem(rng):
    a, b = Q.random_density(2, rng), Q.random_density(3, rng)
    ch = C.amplitude_damping(0.3)
    out, dims = C.apply(ch, np.kron(b, a), [3, 2], on=1)
    assert dims == [3, 2]
    assert np.allclose(out, np.kron(b, ch(a)))


def test_adjoint_duality(rng):
    ch = C.gadc(0.3, 0.1)
    x, y = Q.random_hermitian(2, rng), Q.random_hermitian(2, rng)
    assert np.isclose(np.trace(y @ ch(x)), np.trace(C.apply_adjoint(ch, y) @ x))


def test_choi_roundtrip(rng):
    ch = C.dephrasure(0.2, 0.3)
    j = C.choi(ch)
    assert np.allclose(Q.partial_trace(j, [2, 3], [0]), np.eye(2))
    back = C.channel_from_choi(j, 2, 3)
    rho = Q.random_density(2, rng)
    assert np.allclose(back(rho), ch(rho))
    assert np.allclose(C.apply_choi(j, rho, 2, 3), ch(rho))


def test_stinespring_and_complement(rng):
    ch = C.gadc(0.3, 0.1)
    v = C.stinespring(ch)
    assert Q.isometry_defect(v) < 1e-12
    rho = Q.random_density(2, rng)
    full = v @ rho @ Q.dagger(v)
    dims = [ch.out_dim, ch.n_kraus]
    assert np.allclose(Q.partial_trace(full, dims, [0]), ch(rho))
    assert np.allclose(Q.partial_trace(full, dims, [1]), C.complementary(ch)(rho))
    assert np.allclose(C.channel_from_isometry(v, ch.out_dim)(rho), ch(rho))


def test_amplitude_damping_complement_is_damping():
    # AD(g)^c ~ AD(1-g) up to a unitary: compare output spectra
    rho = np.array([[0.6, 0.2], [0.2, 0.4]])
    a = np.linalg.eigvalsh(C.complementary(C.amplitude_damping(0.3))(rho))
    b = np.linalg.eigvalsh(C.amplitude_damping(0.7)(rho))
    assert np.allclose(a, b)


def test_spec_roundtrip_and_errors():
    spec = C.ChannelSpec("gadc", {"gamma": 0.3, "N": 0.1})
    assert C.ChannelSpec.from_dict(spec.to_dict()) == spec
    k = C.amplitude_damping(0.2).kraus
    custom = C.ChannelSpec("custom_kraus", kraus=list(k))
    back = C.ChannelSpec.from_dict(custom.to_dict())
    assert np.allclose(C.channel_from_spec(back).kraus, k)
    with pytest.raises(ValueError, match="unknown channel"):
        C.channel_from_spec(C.ChannelSpec("nope"))
    with pytest.raises(ValueError, match="missing parameter"):
        C.channel_from_spec(C.ChannelSpec("gadc", {"gamma": 0.3}))
    with pytest.raises(ValueError):
        C.channel_from_spec(C.ChannelSpec("custom_kraus", kraus=[np.eye(2) * 2]))


def test_states():
    rho = C.isotropic(2, 0.9)
    assert Q.is_density(rho)
    assert np.isclose(np.real(Q.max_entangled(2).conj() @ rho @ Q.max_entangled(2)), 0.9)
    s, dims = C.state_from_spec("choi_state", {"channel": {"name": "dephasing", "params": {"p": 0.1}}})
    assert dims == [2, 2] and Q.is_density(s)
    s, dims = C.state_from_spec("noisy_mes", {"channel_a": {"name": "identity"},
                                              "channel_b": {"name": "erasure", "params": {"p": 0.2}}})
    assert dims == [2, 3] and Q.is_density(s)
    with pytest.raises(ValueError):
        C.state_from_spec("werner", {})

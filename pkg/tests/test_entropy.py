import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcapgeo import channels as C
from qcapgeo import entropy as E
from qcapgeo import qmath as Q


def test_binary_and_bosonic():
    assert E.binary_entropy(0) == 0 and E.binary_entropy(1) == 0
    assert np.isclose(E.binary_entropy(0.5), 1.0)
    assert E.bosonic_entropy(0) == 0
    for p in np.linspace(0, 1, 101):
        assert E.binary_entropy(p) <= E.bosonic_entropy(p) + 1e-15
    with pytest.raises(ValueError):
        E.binary_entropy(1.5)
    with pytest.raises(ValueError):
        E.bosonic_entropy(-0.1)


@given(st.integers(0, 2**32 - 1))
def test_entropy_additive_and_unitarily_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = Q.random_density(2, rng), Q.random_density(3, rng)
    assert abs(E.von_neumann(np.kron(a, b)) - E.von_neumann(a) - E.von_neumann(b)) < 1e-10
    u = Q.random_unitary(3, rng)
    assert abs(E.von_neumann(u @ b @ Q.dagger(u)) - E.von_neumann(b)) < 1e-10


def test_batched_matches_single(rng):
    stack = np.array([Q.random_density(4, rng) for _ in range(3)])
    assert np.allclose(E.batched_entropy(stack), [E.von_neumann(r) for r in stack])


@given(st.integers(0, 2**32 - 1))
def test_coherent_information_range(seed):
    rng = np.random.default_rng(seed)
    rho = Q.random_density(6, rng)
    ic = E.coherent_information_state(rho, [2, 3])
    assert -1 - 1e-10 <= ic <= 1 + 1e-10
    assert np.isclose(E.conditional_entropy(rho, [2, 3]), -ic)


def test_coherent_information_bell_and_product():
    bell = Q.proj(Q.max_entangled(2))
    assert np.isclose(E.coherent_information_state(bell), 1.0)
    assert np.isclose(E.coherent_information_state(np.eye(4) / 4), -1.0)


def test_channel_coherent_information_dephasing():
    rho = np.eye(2) / 2
    assert np.isclose(E.coherent_information_channel(rho, C.dephasing(0.1)), 1 - E.binary_entropy(0.1))


def test_relative_entropy_cases():
    rho = np.diag([0.5, 0.5])
    sigma = np.diag([0.75, 0.25])
    kl = 0.5 * np.log2(0.5 / 0.75) + 0.5 * np.log2(0.5 / 0.25)
    assert np.isclose(E.relative_entropy(rho, sigma), kl)
    assert abs(E.relative_entropy(sigma, sigma)) < 1e-12
    assert E.relative_entropy(np.diag([1.0, 0]), np.diag([0, 1.0])) == np.inf


@given(st.integers(0, 2**32 - 1))
def test_data_processing(seed):
    rng = np.random.default_rng(seed)
    rho, sigma = Q.random_density(2, rng), Q.random_density(2, rng)
    k = Q.random_isometry(6, 2, rng).reshape(3, 2, 2)
    ch = C.ChannelRep(k)
    assert E.relative_entropy(ch(rho), ch(sigma)) <= E.relative_entropy(rho, sigma) + 1e-8


def test_amortized_gap_reductions(rng):
    ch = C.gadc(0.3, 0.1)
    rho = Q.random_density(4, rng)
    out, dims = C.apply(ch, rho, [2, 2], on=1)
    assert np.isclose(E.amortized_gap(ch, rho, rho), E.coherent_information_state(out, dims))
    bell = Q.proj(Q.max_entangled(2))
    assert np.isclose(E.amortized_gap(C.identity(2), bell, bell), 1.0)

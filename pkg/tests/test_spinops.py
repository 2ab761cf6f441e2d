import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magicecho.spinops import (
    MAX_SPINS,
    SpinOperator,
    SpinOperatorError,
    collective_operator,
    commutator,
    memory_estimate,
    propagator,
    rotate_y,
    rotate_z,
    secular_hamiltonian,
    single_spin_operator,
    tensor_t20,
    tensor_t2pm2,
)

SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.array([[1, 0], [0, -1]]) / 2


def maxnorm(m):
    return float(np.abs(m).max())


def random_couplings(n, seed, scale=1e5):
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=scale, size=(n, n))
    w = np.triu(w, 1)
    return w + w.T


pairs = st.integers(2, 6).flatmap(
    lambda n: st.tuples(st.just(n), st.permutations(range(1, n + 1)).map(lambda p: tuple(sorted(p[:2]))))
)


@given(pairs)
@settings(max_examples=25, deadline=None)
def test_rotation_identities(nkj):
    n, (k, j) = nkj
    r, ri = rotate_y(math.pi / 2, n).matrix, rotate_y(-math.pi / 2, n).matrix
    ix, iz = collective_operator(n, "x").matrix, collective_operator(n, "z").matrix
    assert maxnorm(r @ ix @ ri + iz) < 1e-12
    t20 = tensor_t20(n, k, j).matrix
    rhs = -0.5 * t20 + math.sqrt(3 / 8) * (tensor_t2pm2(n, k, j, 1).matrix + tensor_t2pm2(n, k, j, -1).matrix)
    assert maxnorm(r @ t20 @ ri - rhs) < 1e-12


@given(pairs)
@settings(max_examples=25, deadline=None)
def test_t20_commutes_with_iz(nkj):
    n, (k, j) = nkj
    assert maxnorm(commutator(tensor_t20(n, k, j), collective_operator(n, "z")).matrix) < 1e-12


@given(st.integers(2, 6), st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_secular_hamiltonian_commutes_and_matches_tensor_sum(n, seed):
    w = random_couplings(n, seed)
    h = secular_hamiltonian(w)
    assert h.is_hermitian()
    iz = collective_operator(n, "z")
    assert maxnorm(commutator(h, iz).matrix) / maxnorm(h.matrix) < 1e-12
    ref = sum(math.sqrt(1 / 6) * w[k - 1, j - 1] * tensor_t20(n, k, j).matrix
              for k in range(1, n + 1) for j in range(k + 1, n + 1))
    assert maxnorm(h.matrix - ref) <= 1e-12 * maxnorm(ref)


@given(st.integers(1, 6), st.integers(0, 10_000), st.floats(-1e-3, 1e-3))
@settings(max_examples=20, deadline=None)
def test_propagators_unitary(n, seed, t):
    if n == 1:
        h = SpinOperator(np.diag([0.5, -0.5]) * 1e5, hermitian=True)
    else:
        h = secular_hamiltonian(random_couplings(n, seed))
    u = propagator(h, t)
    assert u.is_unitary()
    assert rotate_y(t * 1e3, n).is_unitary()
    assert rotate_z(t * 1e3, n).is_unitary()


def test_two_spin_hamiltonian_explicit():
    w = 2 * math.pi * 10e3
    h = secular_hamiltonian(np.array([[0, w], [w, 0]])).matrix
    zz = np.kron(SZ, SZ)
    ff = np.kron(SX, SX) + np.kron(SY, SY)
    ref = w / 3 * (2 * zz - ff)
    assert np.allclose(h, ref, atol=1e-9)
    # isolated-pair lines at +-w/2
    e = np.linalg.eigvalsh(h)
    assert np.isclose(np.ptp(e), w / 2, rtol=1e-12)


def test_single_site_embedding_order():
    op = single_spin_operator(3, 1, "z").matrix
    assert np.allclose(op, np.kron(SZ, np.eye(4)))
    op = single_spin_operator(3, 3, "plus").matrix
    assert np.allclose(op, np.kron(np.eye(4), SX + 1j * SY))


def test_collective_z_matches_sum():
    n = 4
    assert np.allclose(collective_operator(n, "z").matrix,
                       sum(single_spin_operator(n, k, "z").matrix for k in range(1, n + 1)))


def test_rotate_z_is_exponential_of_iz():
    from scipy.linalg import expm

    n, th = 3, 0.7
    assert np.allclose(rotate_z(th, n).matrix, expm(-1j * th * collective_operator(n, "z").matrix))
    assert np.allclose(rotate_y(th, n).matrix, expm(-1j * th * collective_operator(n, "y").matrix))


def test_propagator_group_law_and_cache():
    h = secular_hamiltonian(random_couplings(3, 1))
    a, b = 3e-6, 5e-6
    assert np.allclose(propagator(h, a).matrix @ propagator(h, b).matrix, propagator(h, a + b).matrix)
    assert h.eigensystem() is h.eigensystem()


def test_errors():
    with pytest.raises(SpinOperatorError):
        single_spin_operator(2, 3, "x")
    with pytest.raises(SpinOperatorError):
        single_spin_operator(2, 1, "w")
    with pytest.raises(SpinOperatorError):
        tensor_t20(3, 2, 2)
    with pytest.raises(SpinOperatorError):
        tensor_t2pm2(3, 1, 2, 0)
    with pytest.raises(SpinOperatorError):
        collective_operator(MAX_SPINS + 1, "x")
    with pytest.raises(SpinOperatorError):
        SpinOperator(np.eye(3))
    with pytest.raises(SpinOperatorError):
        secular_hamiltonian(np.array([[0, 1.0], [2.0, 0]]))
    with pytest.raises(SpinOperatorError):
        propagator(SpinOperator(np.array([[0, 1], [0, 0]])), 1.0)


def test_memory_estimate_and_readonly():
    assert memory_estimate(10) == 16 * 4**10
    op = collective_operator(2, "x")
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 1.0


def test_operator_algebra_and_csv(tmp_path):
    a = collective_operator(2, "x")
    b = collective_operator(2, "y")
    assert np.allclose((a + b).matrix - (a - b).matrix, 2 * b.matrix)
    assert np.allclose((a * 2.0).matrix, 2 * a.matrix)
    assert np.isclose(a.trace(), 0)
    assert a.dagger().is_hermitian() and a.verify()
    # [Ix, Iy] = i Iz
    assert np.allclose(commutator(a, b).matrix, 1j * collective_operator(2, "z").matrix)
    path = tmp_path / "op.csv"
    a.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["row", "col"]

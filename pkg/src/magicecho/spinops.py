"""Dense many-spin-1/2 operators and spectral propagators.

Product basis convention: spin 1 is the leftmost Kronecker factor (slowest
index), each site ordered (up, down), so ``I_z`` of a single site is
``diag(1/2, -1/2)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

MAX_SPINS = 14

_HERMITIAN_RTOL = 1e-12
_UNITARY_ATOL = 1e-10

_PAULI = {
    "x": np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex),
    "y": np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=complex),
    "z": np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex),
    "plus": np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex),
    "minus": np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex),
}


class SpinOperatorError(ValueError):
    """Raised for invalid operator construction or use."""


def memory_estimate(n: int) -> int:
    """Bytes needed for one dense complex128 operator on ``n`` spins."""
    return 16 * 4**n


@dataclass(frozen=True, eq=False)
class SpinOperator:
    """Dense ``2^N x 2^N`` complex operator with tracked hermitian/unitary flags.

    Flags are claims made by the constructor; :meth:`verify` checks them
    against the stored matrix.
    """

    matrix: np.ndarray
    hermitian: bool = False
    unitary: bool = False
    _eig: tuple | None = field(default=None, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise SpinOperatorError(f"operator must be square, got shape {m.shape}")
        dim = m.shape[0]
        if dim & (dim - 1):
            raise SpinOperatorError(f"dimension {dim} is not a power of two")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_spins(self) -> int:
        return self.dim.bit_length() - 1

    def is_hermitian(self) -> bool:
        m = self.matrix
        scale = max(np.abs(m).max(), 1e-300)
        return np.abs(m - m.conj().T).max() < _HERMITIAN_RTOL * scale

    def is_unitary(self) -> bool:
        m = self.matrix
        return np.abs(m @ m.conj().T - np.eye(self.dim)).max() < _UNITARY_ATOL

    def verify(self) -> bool:
        """True when every flag set on this operator holds numerically."""
        ok = True
        if self.hermitian:
            ok &= self.is_hermitian()
        if self.unitary:
            ok &= self.is_unitary()
        return bool(ok)

    def dagger(self) -> SpinOperator:
        return SpinOperator(self.matrix.conj().T, self.hermitian, self.unitary)

    def __matmul__(self, other: SpinOperator) -> SpinOperator:
        return SpinOperator(
            self.matrix @ other.matrix,
            unitary=self.unitary and other.unitary,
        )

    def __add__(self, other: SpinOperator) -> SpinOperator:
        return SpinOperator(
            self.matrix + other.matrix,
            hermitian=self.hermitian and other.hermitian,
        )

    def __sub__(self, other: SpinOperator) -> SpinOperator:
        return SpinOperator(
            self.matrix - other.matrix,
            hermitian=self.hermitian and other.hermitian,
        )

    def __mul__(self, scalar) -> SpinOperator:
        scalar = complex(scalar)
        return SpinOperator(
            scalar * self.matrix,
            hermitian=self.hermitian and scalar.imag == 0,
            unitary=self.unitary and abs(abs(scalar) - 1.0) < 1e-15,
        )

    __rmul__ = __mul__

    def __neg__(self) -> SpinOperator:
        return self * -1.0

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached ``(eigenvalues, eigenvectors)`` of a hermitian operator.

        Computed once per operator; concurrent callers share the result
        read-only.
        """
        if not self.hermitian:
            raise SpinOperatorError("eigensystem requires a hermitian operator")
        if self._eig is None:
            with self._lock:
                if self._eig is None:
                    w, v = np.linalg.eigh(self.matrix)
                    w.setflags(write=False)
                    v.setflags(write=False)
                    object.__setattr__(self, "_eig", (w, v))
        return self._eig

    def to_csv(self, path, atol: float = 0.0) -> None:
        """Debug dump of nonzero entries as ``row,col,re,im``."""
        rows, cols = np.nonzero(np.abs(self.matrix) > atol)
        with open(path, "w") as fh:
            fh.write("row,col,re,im\n")
            for r, c in zip(rows, cols):
                z = self.matrix[r, c]
                fh.write(f"{r},{c},{z.real:.17g},{z.imag:.17g}\n")


def commutator(a: SpinOperator, b: SpinOperator) -> SpinOperator:
    return SpinOperator(a.matrix @ b.matrix - b.matrix @ a.matrix)


def _check_n(n: int) -> None:
    if n < 1:
        raise SpinOperatorError(f"need at least one spin, got {n}")
    if n > MAX_SPINS:
        raise SpinOperatorError(
            f"{n} spins exceeds the dense cap of {MAX_SPINS} "
            f"({memory_estimate(n) / 2**30:.1f} GiB per operator)"
        )


def _embed(n: int, factors: dict[int, np.ndarray]) -> np.ndarray:
    eye = np.eye(2, dtype=complex)
    return reduce(np.kron, [factors.get(k, eye) for k in range(1, n + 1)])


def single_spin_operator(n: int, k: int, axis: str) -> SpinOperator:
    """Spin-1/2 component ``axis`` at site ``k`` (1-based) of an ``n``-spin system."""
    _check_n(n)
    if not 1 <= k <= n:
        raise SpinOperatorError(f"spin index {k} out of range 1..{n}")
    try:
        op = _PAULI[axis]
    except KeyError:
        raise SpinOperatorError(f"unknown axis {axis!r}") from None
    return SpinOperator(_embed(n, {k: op}), hermitian=axis in ("x", "y", "z"))


def collective_operator(n: int, axis: str) -> SpinOperator:
    """Total spin component ``sum_k I_axis^(k)``."""
    _check_n(n)
    if axis == "z":
        # diagonal: m = (n_up - n_down) / 2 per basis state
        bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
        return SpinOperator(np.diag(0.5 * n - bits.sum(axis=1)).astype(complex), hermitian=True)
    total = sum(single_spin_operator(n, k, axis).matrix for k in range(1, n + 1))
    return SpinOperator(total, hermitian=axis in ("x", "y", "z"))


def _pair_check(n: int, k: int, j: int) -> None:
    _check_n(n)
    if k == j:
        raise SpinOperatorError("tensor operators need two distinct spins")
    for s in (k, j):
        if not 1 <= s <= n:
            raise SpinOperatorError(f"spin index {s} out of range 1..{n}")


def tensor_t20(n: int, k: int, j: int) -> SpinOperator:
    """``2/sqrt(6) (3 I_z^k I_z^j - I^k . I^j)``."""
    _pair_check(n, k, j)
    zz = _embed(n, {k: _PAULI["z"], j: _PAULI["z"]})
    xx = _embed(n, {k: _PAULI["x"], j: _PAULI["x"]})
    yy = _embed(n, {k: _PAULI["y"], j: _PAULI["y"]})
    return SpinOperator(2.0 / np.sqrt(6.0) * (2.0 * zz - xx - yy), hermitian=True)


def tensor_t2pm2(n: int, k: int, j: int, sign: int) -> SpinOperator:
    """Double-quantum pair operator ``I_+^k I_+^j`` (sign=+1) or ``I_-^k I_-^j``.

    Normalized so that a pi/2 y-rotation maps ``T20`` to
    ``-T20/2 + sqrt(3/8) (T22 + T2-2)``.
    """
    _pair_check(n, k, j)
    if sign not in (1, -1):
        raise SpinOperatorError("sign must be +1 or -1")
    op = _PAULI["plus"] if sign == 1 else _PAULI["minus"]
    return SpinOperator(_embed(n, {k: op, j: op}))


def _zz_diagonal(n: int, couplings: np.ndarray) -> np.ndarray:
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    mz = 0.5 - bits  # site k value of I_z per basis state
    return np.einsum("bk,kj,bj->b", mz, np.triu(couplings, 1), mz)


def secular_hamiltonian(couplings) -> SpinOperator:
    """Secular dipolar Hamiltonian ``sum_{k<j} sqrt(1/6) w_kj T20^kj``.

    Args:
        couplings: symmetric ``(N, N)`` table in rad/s, or any object with a
            ``couplings`` attribute holding one (e.g. a spin system).

    Each unordered pair enters once, which puts the isolated-pair lines
    at ``+-w/2`` (splitting ``w``).
    """
    w = np.asarray(getattr(couplings, "couplings", couplings), dtype=float)
    n = w.shape[0]
    _check_n(n)
    if w.shape != (n, n) or not np.allclose(w, w.T, rtol=0, atol=1e-12 * max(np.abs(w).max(), 1.0)):
        raise SpinOperatorError("coupling table must be square and symmetric")
    # sqrt(1/6) * 2/sqrt(6) = 1/3:  H = sum w/3 (2 zz - (xx + yy)) = sum w (2/3 zz - (I+I- + I-I+)/6)
    h = np.diag(2.0 / 3.0 * _zz_diagonal(n, w)).astype(complex)
    dim = 2**n
    idx = np.arange(dim)
    for k in range(n):
        for j in range(k + 1, n):
            wkj = w[k, j]
            if wkj == 0.0:
                continue
            bk = 1 << (n - 1 - k)
            bj = 1 << (n - 1 - j)
            # flip-flop connects states where sites k and j are antiparallel
            sel = idx[((idx & bk) == 0) != ((idx & bj) == 0)]
            h[sel, sel ^ (bk | bj)] += -wkj / 6.0
    return SpinOperator(h, hermitian=True)


def propagator(h: SpinOperator, t: float) -> SpinOperator:
    """``exp(-i t H)`` via the cached spectral decomposition of ``H``."""
    if not h.hermitian or not h.is_hermitian():
        raise SpinOperatorError("propagator requires a hermitian generator")
    w, v = h.eigensystem()
    return SpinOperator((v * np.exp(-1j * t * w)) @ v.conj().T, unitary=True)


def rotate_y(beta: float, n: int) -> SpinOperator:
    """Hard pulse ``R_y(beta) = exp(-i beta I_y)`` as a product of site rotations."""
    _check_n(n)
    c, s = np.cos(beta / 2), np.sin(beta / 2)
    site = np.array([[c, -s], [s, c]], dtype=complex)
    return SpinOperator(reduce(np.kron, [site] * n), unitary=True)


def rotate_z(theta: float, n: int) -> SpinOperator:
    """``exp(-i theta I_z)``; diagonal in the product basis."""
    mz = np.diag(collective_operator(n, "z").matrix).real
    return SpinOperator(np.diag(np.exp(-1j * theta * mz)), unitary=True)

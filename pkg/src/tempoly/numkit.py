"""Dense complex linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. Most functions
accept stacked inputs of shape ``(..., r, c)`` so that Monte-Carlo code can
evaluate whole batches of random assignments at once.
"""

from __future__ import annotations

import itertools
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "RngStream",
    "as_matrix",
    "kron",
    "batched_kron",
    "expm",
    "haar_unitary",
    "ginibre",
    "random_state",
    "orthonormal_extend",
    "Ratio",
    "fit_scalar",
    "proportionality",
    "permutation_operator",
    "swap_operator",
    "cyclic_shift",
    "gamma_conjugation_check",
    "matrix_to_json",
    "matrix_from_json",
]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Two streams with the same pair produce identical draws; different
    stream ids are spawned from one ``SeedSequence`` and are independent.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                    spawn_key=(int(self.stream_id),))
        object.__setattr__(self, "generator", np.random.Generator(np.random.PCG64(ss)))

    @classmethod
    def named(cls, seed: int, name: str) -> "RngStream":
        """Stream whose id is a stable hash of ``name``."""
        return cls(seed, zlib.crc32(name.encode()))

    def spawn(self, index: int) -> "RngStream":
        # mixes the parent id so that spawn(i) of different parents differ
        return RngStream(self.seed, (self.stream_id * 1_000_003 + index + 1) % (2**63))


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim < 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def kron(a, b) -> np.ndarray:
    """Kronecker product with the standard block layout."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def batched_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product over the last two axes, broadcasting leading axes."""
    ra, ca = a.shape[-2:]
    rb, cb = b.shape[-2:]
    out = a[..., :, None, :, None] * b[..., None, :, None, :]
    return out.reshape(out.shape[:-4] + (ra * rb, ca * cb))


def expm(m) -> np.ndarray:
    """Matrix exponential (scaling and squaring with a Pade approximant)."""
    m = np.asarray(m, dtype=complex)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expm needs a square matrix, got shape {m.shape}")
    return scipy.linalg.expm(m)


def ginibre(rows: int, cols: int, rng: RngStream | np.random.Generator, size: tuple = ()) -> np.ndarray:
    """I.i.d. standard complex Gaussian entries, ``E|z|^2 = 1``."""
    gen = rng.generator if isinstance(rng, RngStream) else rng
    shape = tuple(size) + (rows, cols)
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / math.sqrt(2.0)


def haar_unitary(d: int, rng: RngStream | np.random.Generator, size: tuple = ()) -> np.ndarray:
    """Haar-distributed unitary via QR of a Ginibre matrix with phase-fixed R."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    z = ginibre(d, d, rng, size)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    phases = diag / np.abs(diag)
    return q * phases[..., None, :]


def random_state(dim: int, rng: RngStream | np.random.Generator, size: tuple = ()) -> np.ndarray:
    """Uniformly random unit vectors of length ``dim``."""
    v = ginibre(dim, 1, rng, size)[..., 0]
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def orthonormal_extend(basis: Sequence[np.ndarray] | np.ndarray, v, tol: float = 1e-9):
    """Gram-Schmidt step: try to extend an orthonormal ``basis`` by ``v``.

    ``basis`` is either a list of vectors or an ``(n, k)`` array whose columns
    are orthonormal. The residual is orthogonalised twice. ``v`` is accepted
    iff the residual norm exceeds ``tol * ||v||``.

    Returns ``(accepted, unit)`` with ``unit`` None when rejected.
    """
    v = np.asarray(v, dtype=complex)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("cannot extend a basis by the zero vector")
    if isinstance(basis, np.ndarray) and basis.ndim == 2:
        q = basis
    elif len(basis) == 0:
        q = np.zeros((v.shape[0], 0), dtype=complex)
    else:
        q = np.column_stack(basis)
    if q.shape[1] >= v.shape[0]:
        return False, None
    r = v
    for _ in range(2):
        r = r - q @ (q.conj().T @ r)
    nr = np.linalg.norm(r)
    if nr <= tol * nv:
        return False, None
    return True, r / nr


@dataclass(frozen=True)
class Ratio:
    scalar: complex
    residual: float
    degenerate: bool = False


def fit_scalar(a, b) -> Ratio:
    """Least-squares ``c`` minimising ``||a - c b||`` with relative residual.

    The residual is normalised by ``max(||a||, ||c b||)`` so that a small
    ``a`` is not trivially "proportional" to a large ``b``. Both inputs zero
    gives ``Ratio(0, 0, degenerate=True)``; ``a == 0`` alone fits with ``c = 0``.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return Ratio(0j, 0.0, True)
    if nb == 0.0:
        return Ratio(0j, 1.0)
    if na == 0.0:
        return Ratio(0j, 0.0)
    c = np.vdot(b, a) / nb**2
    res = np.linalg.norm(a - c * b) / max(na, nb * abs(c))
    return Ratio(complex(c), float(res))


def proportionality(a, b, tol: float = 1e-9) -> complex | None:
    """Scalar ``c`` with ``a ~= c b`` or None when the fit residual exceeds tol.

    The residual is measured relative to ``max(||a||, ||c b||)``, so the test
    is invariant under rescaling either argument.
    """
    r = fit_scalar(a, b)
    if r.degenerate:
        return 0j
    return r.scalar if r.residual <= tol else None


def _check_perm(perm: Sequence[int], n: int) -> tuple[int, ...]:
    perm = tuple(int(p) for p in perm)
    if len(perm) != n or sorted(perm) != list(range(n)):
        raise ValueError(f"{perm!r} is not a permutation of range({n})")
    return perm


def permutation_operator(n: int, d: int, perm: Sequence[int]) -> np.ndarray:
    """Operator with ``P|i_0 ... i_{n-1}> = |i_{perm[0]} ... i_{perm[n-1]}>``.

    ``perm`` is 0-based. Under this convention ``P(a) @ P(b) == P(c)`` with
    ``c[k] = b[a[k]]``.
    """
    perm = _check_perm(perm, n)
    dim = d**n
    out = np.zeros((dim, dim), dtype=complex)
    for idx in itertools.product(range(d), repeat=n):
        src = np.ravel_multi_index(idx, (d,) * n) if n else 0
        dst = np.ravel_multi_index(tuple(idx[p] for p in perm), (d,) * n) if n else 0
        out[dst, src] = 1.0
    return out


def swap_operator(d: int) -> np.ndarray:
    return permutation_operator(2, d, (1, 0))


def cyclic_shift(d: int) -> np.ndarray:
    """``sum_i |i><i+1 mod d|``."""
    return np.roll(np.eye(d, dtype=complex), 1, axis=1)


def gamma_conjugation_check(d: int, y, tol: float = 1e-10) -> bool:
    """Check ``prod_{j=1}^{d-1} G^j y G^-j == det(y) y^-1`` for diagonal ``y``."""
    y = as_matrix(y)
    if y.shape != (d, d):
        raise ValueError(f"expected a {d}x{d} matrix")
    if np.any(np.abs(y - np.diag(np.diag(y))) > 0):
        raise ValueError("y must be diagonal")
    diag = np.diag(y)
    if np.any(diag == 0):
        raise ValueError("y is singular")
    g = cyclic_shift(d)
    prod = np.eye(d, dtype=complex)
    gj = np.eye(d, dtype=complex)
    for _ in range(1, d):
        gj = gj @ g
        prod = prod @ (gj @ y @ gj.conj().T)
    rhs = np.prod(diag) * np.diag(1.0 / diag)
    return bool(np.linalg.norm(prod - rhs) <= tol * max(np.linalg.norm(rhs), 1e-300))


def matrix_to_json(m) -> dict:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2:
        raise ValueError("only 2-d matrices serialise")
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "re": m.real.ravel().tolist(), "im": m.imag.ravel().tolist()}


def matrix_from_json(obj: dict) -> np.ndarray:
    rows, cols = int(obj["rows"]), int(obj["cols"])
    re, im = obj["re"], obj["im"]
    if len(re) != rows * cols or len(im) != rows * cols:
        raise ValueError("entry count does not match rows*cols")
    return as_matrix((np.asarray(re, float) + 1j * np.asarray(im, float)).reshape(rows, cols))

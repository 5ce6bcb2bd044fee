"""Numerical discovery of polynomials proportional to a target operator.

A degree-``m`` polynomial on ``n`` parties over ``D`` letters is a coefficient
vector of length ``D^(n m)``. Coordinates are ordered site by site: the index
tuple is ``(i^1_1, .., i^n_1, i^1_2, .., i^n_m)`` in row-major order, where
``i^k_t`` is the ``t``-th letter (product order) of party ``k``'s word.

For random ``X``, ``L``, ``R`` the generator

    p_w = <L| T^-1 (X_{w^1} (x) .. (x) X_{w^n}) |R>

is orthogonal (bilinearly) to the coefficients of every polynomial ``P``
with ``P(X) ~ T``, as long as ``<L|R> = 0``. The span of many generators is
``V_perp``; dropping the orthogonality constraint gives ``N_perp``, the
orthocomplement of polynomials that vanish identically. Both spans are
closed under complex conjugation, so Hermitian orthogonality is used.
``V / N`` is realised as ``N_perp`` minus ``V_perp``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .ncpoly import TensorPoly
from .numkit import (
    RngStream,
    fit_scalar,
    ginibre,
    haar_unitary,
    orthonormal_extend,
    permutation_operator,
    swap_operator,
)

__all__ = [
    "GeneratorConfig",
    "SubspaceBasis",
    "MpsVector",
    "SearchError",
    "generator_vector",
    "generator_mps",
    "mps_inner",
    "mps_to_dense",
    "span_close",
    "quotient_swap_space",
    "null_space_basis",
    "sparsify",
    "SparsifyResult",
    "dim_bound",
    "perm_span_residual",
    "vector_to_poly",
    "poly_to_vector",
    "word_index",
    "verify_proportional",
    "target_matrix",
    "SearchResult",
    "run_search",
]

DENSE_GUARD = 1 << 22


class SearchError(RuntimeError):
    pass


def target_matrix(name: str, d: int, n_parties: int = 2, perm: Sequence[int] | None = None) -> np.ndarray:
    if name == "swap":
        if n_parties != 2:
            raise ValueError("swap target needs two parties")
        return swap_operator(d)
    if name == "identity":
        return np.eye(d**n_parties, dtype=complex)
    if name == "perm":
        if perm is None:
            raise ValueError("perm target needs a permutation")
        return permutation_operator(n_parties, d, perm)
    raise ValueError(f"unknown target {name!r}")


@dataclass
class GeneratorConfig:
    d: int
    D: int
    m: int
    n_parties: int = 2
    target: np.ndarray | None = None
    orthogonal_LR: bool = True
    tol: float = 1e-9
    confirm_draws: int = 8
    rng: RngStream = field(default_factory=lambda: RngStream(0))
    dense_guard: int = DENSE_GUARD

    def __post_init__(self):
        if self.target is None:
            self.target = (swap_operator(self.d) if self.n_parties == 2
                           else np.eye(self.d**self.n_parties, dtype=complex))
        self.target = np.asarray(self.target, dtype=complex)
        dim = self.d**self.n_parties
        if self.target.shape != (dim, dim):
            raise ValueError(f"target must be {dim}x{dim}")
        if self.confirm_draws < 1:
            raise ValueError("confirm_draws must be >= 1")
        if self.m < 1 or self.D < 1:
            raise ValueError("m and D must be >= 1")

    @property
    def ambient_dim(self) -> int:
        return self.D ** (self.n_parties * self.m)

    def with_lr(self, orthogonal: bool) -> "GeneratorConfig":
        return GeneratorConfig(self.d, self.D, self.m, self.n_parties, self.target, orthogonal,
                               self.tol, self.confirm_draws, self.rng, self.dense_guard)


@dataclass
class SubspaceBasis:
    """Orthonormal basis stored as rows of ``vectors`` (shape ``(k, ambient)``).

    ``sectors`` optionally labels each vector with its letter-count vector
    (summed over parties). In MPS mode only ``dim`` is meaningful and
    ``vectors`` is empty.
    """

    ambient_dim: int
    vectors: np.ndarray
    closure_draws_used: int = 0
    tol: float = 1e-9
    sectors: list[tuple[int, ...]] | None = None
    layout: tuple[int, int, int] | None = None  # (n_parties, D, m)
    dim_override: int | None = None

    @property
    def dim(self) -> int:
        return self.dim_override if self.dim_override is not None else int(self.vectors.shape[0])

    def orthonormality_error(self) -> float:
        if self.vectors.shape[0] == 0:
            return 0.0
        g = self.vectors.conj() @ self.vectors.T
        return float(np.max(np.abs(g - np.eye(g.shape[0]))))


# ---------------------------------------------------------------------------
# generators


def _draw(cfg: GeneratorConfig, rng: RngStream):
    gen = rng.generator
    dim = cfg.d**cfg.n_parties
    x = ginibre(cfg.d, cfg.d, gen, size=(cfg.D,))
    left = ginibre(dim, 1, gen)[:, 0]
    right = ginibre(dim, 1, gen)[:, 0]
    if cfg.orthogonal_LR:
        right = right - left * (np.vdot(left, right) / np.vdot(left, left))
    return x, left, right


def _site_ops(x: np.ndarray, n_parties: int) -> np.ndarray:
    """``Y_p = X_{p^1} (x) .. (x) X_{p^n}`` for every letter tuple ``p`` (row-major)."""
    D, d = x.shape[0], x.shape[-1]
    ys = x
    for _ in range(n_parties - 1):
        ys = np.einsum("iab,jcd->ijacbd", ys, x).reshape(-1, ys.shape[-1] * d, ys.shape[-1] * d)
    return ys.reshape(D**n_parties, d**n_parties, d**n_parties)


def _left_boundary(cfg: GeneratorConfig, left: np.ndarray) -> np.ndarray:
    # <L| T^-1 = (T^-dagger L)^dagger
    return np.linalg.solve(cfg.target.conj().T, left)


def generator_vector(cfg: GeneratorConfig, rng: RngStream | None = None, *, draw=None) -> np.ndarray:
    """Dense generator ``p_w``; ``draw = (X, L, R)`` overrides the random draw."""
    if cfg.ambient_dim > cfg.dense_guard:
        raise SearchError(f"ambient dimension {cfg.ambient_dim} exceeds the dense guard {cfg.dense_guard}")
    x, left, right = draw if draw is not None else _draw(cfg, rng or cfg.rng)
    ys = _site_ops(np.asarray(x, dtype=complex), cfg.n_parties)
    lt = _left_boundary(cfg, np.asarray(left, dtype=complex))
    v = lt.conj()[None, :]
    for _ in range(cfg.m):
        v = np.einsum("pa,sab->psb", v, ys).reshape(-1, ys.shape[-1])
    return v @ np.asarray(right, dtype=complex)


@dataclass
class MpsVector:
    """Uniform MPS ``p_w = lt^dagger Y_{w_1} .. Y_{w_m} r``.

    ``sites`` has shape ``(D^n, d^n, d^n)`` (physical, left bond, right
    bond) and is shared by all ``m`` sites.
    """

    sites: np.ndarray
    left: np.ndarray
    right: np.ndarray
    m: int

    @property
    def physical_dim(self) -> int:
        return self.sites.shape[0]

    @property
    def bond_dim(self) -> int:
        return self.sites.shape[1]


def generator_mps(cfg: GeneratorConfig, rng: RngStream | None = None, *, draw=None) -> MpsVector:
    x, left, right = draw if draw is not None else _draw(cfg, rng or cfg.rng)
    ys = _site_ops(np.asarray(x, dtype=complex), cfg.n_parties)
    return MpsVector(ys, _left_boundary(cfg, np.asarray(left, dtype=complex)),
                     np.asarray(right, dtype=complex), cfg.m)


def mps_inner(a: MpsVector, b: MpsVector) -> complex:
    """``sum_w conj(a_w) b_w`` by transfer matrices; cost linear in ``m``."""
    if a.m != b.m or a.sites.shape != b.sites.shape:
        raise ValueError("MPS shapes differ")
    e = np.outer(a.left, b.left.conj())
    ya_h = a.sites.conj().transpose(0, 2, 1)
    for _ in range(a.m):
        e = np.einsum("pab,bc,pcd->ad", ya_h, e, b.sites, optimize=True)
    return complex(a.right.conj() @ e @ b.right)


def mps_to_dense(a: MpsVector) -> np.ndarray:
    v = a.left.conj()[None, :]
    for _ in range(a.m):
        v = np.einsum("pa,sab->psb", v, a.sites).reshape(-1, a.sites.shape[-1])
    return v @ a.right


# ---------------------------------------------------------------------------
# closure


def _letter_counts_table(n_parties: int, D: int, m: int) -> np.ndarray:
    """``(ambient, D)`` letter counts of every coordinate, summed over parties."""
    idx = np.array(list(itertools.product(range(D), repeat=n_parties * m)), dtype=np.int64)
    return np.stack([(idx == a).sum(axis=1) for a in range(D)], axis=1)


def span_close(cfg: GeneratorConfig, mode: str = "dense", *, max_draws: int | None = None,
               block: int = 32) -> SubspaceBasis:
    """Grow an orthonormal basis of generator vectors until ``confirm_draws``
    consecutive draws fall inside the span.

    Draw ``i`` uses ``cfg.rng.spawn(i)``; candidates are generated in blocks
    but accepted strictly in draw order, so the basis is a deterministic
    function of ``(seed, cfg)``.
    """
    if mode == "mps":
        return _span_close_mps(cfg, max_draws=max_draws)
    if mode != "dense":
        raise ValueError("mode must be 'dense' or 'mps'")
    amb = cfg.ambient_dim
    if amb > cfg.dense_guard:
        raise SearchError(f"ambient dimension {amb} exceeds the dense guard {cfg.dense_guard}")
    max_draws = max_draws or (amb + cfg.confirm_draws + 16)
    q = np.zeros((amb, 0), dtype=complex)
    cols: list[np.ndarray] = []
    rejected = 0
    draws = 0
    while rejected < cfg.confirm_draws:
        if draws >= max_draws:
            raise SearchError(f"closure did not settle within {max_draws} draws")
        batch = [generator_vector(cfg, cfg.rng.spawn(draws + k)) for k in range(block)]
        for g in batch:
            draws += 1
            if q.shape[1] >= amb:
                ok = False
            else:
                ok, unit = orthonormal_extend(q, g, cfg.tol)
            if ok:
                cols.append(unit)
                q = np.column_stack(cols)
                rejected = 0
            else:
                rejected += 1
                if rejected >= cfg.confirm_draws:
                    break
    return SubspaceBasis(amb, q.T.copy(), draws, cfg.tol, layout=(cfg.n_parties, cfg.D, cfg.m))


def _inner_many(sites, lefts, rights, b: MpsVector) -> np.ndarray:
    """``mps_inner(a_k, b)`` for a stack of MPS sharing ``m``."""
    e = np.einsum("ka,b->kab", lefts, b.left.conj())
    ya_h = sites.conj().transpose(0, 1, 3, 2)
    for _ in range(b.m):
        e = np.einsum("kpab,kbc,pcd->kad", ya_h, e, b.sites, optimize=True)
    return np.einsum("ka,kab,b->k", rights.conj(), e, b.right)


def _span_close_mps(cfg: GeneratorConfig, *, max_draws: int | None = None,
                    tol: float = 1e-5) -> SubspaceBasis:
    """Gram-matrix closure on MPS generators; returns the dimension only.

    The rank test compares squared norms, so the usable relative tolerance
    is far looser than in dense mode; ``tol`` defaults to 1e-5.
    """
    amb = cfg.ambient_dim
    max_draws = max_draws or (min(amb, 1 << 20) + cfg.confirm_draws + 16)
    sites = lefts = rights = None
    chol = np.zeros((0, 0), dtype=complex)
    k = rejected = draws = 0
    while rejected < cfg.confirm_draws:
        if draws >= max_draws:
            raise SearchError(f"closure did not settle within {max_draws} draws")
        v = generator_mps(cfg, cfg.rng.spawn(draws))
        draws += 1
        nv = mps_inner(v, v).real
        if k:
            g = _inner_many(sites[:k], lefts[:k], rights[:k], v)
            y = scipy.linalg.solve_triangular(chol, g, lower=True)
            res = nv - float(np.vdot(y, y).real)
        else:
            y = np.zeros(0, dtype=complex)
            res = nv
        if res > (tol**2) * nv:
            if sites is None or k == sites.shape[0]:
                cap = max(16, 2 * k)
                grow = lambda a, shape: np.concatenate([a, np.zeros((cap - k,) + shape, complex)]) \
                    if a is not None else np.zeros((cap,) + shape, complex)
                sites = grow(sites, v.sites.shape)
                lefts = grow(lefts, v.left.shape)
                rights = grow(rights, v.right.shape)
            sites[k], lefts[k], rights[k] = v.sites, v.left, v.right
            new = np.zeros((k + 1, k + 1), dtype=complex)
            new[:k, :k] = chol
            new[k, :k] = y.conj()
            new[k, k] = math.sqrt(res)
            chol = new
            k += 1
            rejected = 0
        else:
            rejected += 1
    return SubspaceBasis(amb, np.zeros((0, 0), dtype=complex), draws, tol,
                         layout=(cfg.n_parties, cfg.D, cfg.m), dim_override=k)


# ---------------------------------------------------------------------------
# quotient and null space


def _sector_groups(layout: tuple[int, int, int]) -> dict[tuple[int, ...], np.ndarray]:
    counts = _letter_counts_table(*layout)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, c in enumerate(tuple(int(x) for x in row) for row in counts):
        groups.setdefault(c, []).append(i)
    return {k: np.array(v) for k, v in sorted(groups.items())}


def _range_basis(a: np.ndarray, tol: float) -> np.ndarray:
    """Orthonormal columns spanning the column space of ``a``."""
    if a.size == 0 or a.shape[1] == 0:
        return np.zeros((a.shape[0], 0), dtype=complex)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s[0] == 0:
        return np.zeros((a.shape[0], 0), dtype=complex)
    return u[:, s > tol * max(1.0, s[0])]


def _real_phase(v: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Rotate ``v`` by a global phase to make it real when that is possible."""
    k = int(np.argmax(np.abs(v)))
    w = v * (abs(v[k]) / v[k])
    if np.linalg.norm(w.imag) <= tol * np.linalg.norm(w):
        w = w.real.astype(complex)
        return w / np.linalg.norm(w)
    return w


def quotient_swap_space(nperp: SubspaceBasis, vperp: SubspaceBasis, tol: float = 1e-7,
                        graded: bool = True) -> SubspaceBasis:
    """Basis of ``{v in span(nperp) : v orthogonal to span(vperp)}``.

    With ``graded`` (the default when the coordinate layout is known) the
    computation is done separately in every letter-count sector; both spans
    are direct sums over sectors because rescaling one letter rescales each
    homogeneous piece independently. The returned vectors are then
    sector-pure and, where possible, real.
    """
    if nperp.ambient_dim != vperp.ambient_dim:
        raise ValueError("ambient dimensions differ")
    if nperp.dim_override is not None or vperp.dim_override is not None:
        return SubspaceBasis(nperp.ambient_dim, np.zeros((0, 0), dtype=complex), 0, tol,
                             layout=nperp.layout, dim_override=nperp.dim - vperp.dim)
    amb = nperp.ambient_dim
    nq, vq = nperp.vectors.T, vperp.vectors.T
    if not graded or nperp.layout is None:
        m = nq - vq @ (vq.conj().T @ nq)
        basis = _range_basis(m, tol)
        return SubspaceBasis(amb, np.array([_real_phase(b) for b in basis.T]).reshape(-1, amb),
                             0, tol, layout=nperp.layout)
    vectors, sectors = [], []
    for key, idx in _sector_groups(nperp.layout).items():
        ns = _range_basis(nq[idx], tol)
        vs = _range_basis(vq[idx], tol)
        m = ns - vs @ (vs.conj().T @ ns)
        for b in _range_basis(m, tol).T:
            full = np.zeros(amb, dtype=complex)
            full[idx] = b
            vectors.append(_real_phase(full))
            sectors.append(key)
    arr = np.array(vectors).reshape(-1, amb)
    return SubspaceBasis(amb, arr, 0, tol, sectors=sectors, layout=nperp.layout)


def null_space_basis(nperp: SubspaceBasis, tol: float = 1e-7) -> SubspaceBasis:
    """Orthocomplement of ``nperp``: coefficient vectors of identically vanishing polynomials.

    Computed per sector and returned as a real basis.
    """
    if nperp.dim_override is not None:
        raise SearchError("the null space needs a dense basis")
    amb = nperp.ambient_dim
    groups = _sector_groups(nperp.layout) if nperp.layout else {(): np.arange(amb)}
    vectors, sectors = [], []
    for key, idx in groups.items():
        ns = _range_basis(nperp.vectors.T[idx], tol)
        # orthocomplement inside the sector, then a real basis of it
        u, s, _ = np.linalg.svd(ns, full_matrices=True)
        comp = u[:, ns.shape[1]:]
        if comp.shape[1] == 0:
            continue
        real = _range_basis(np.hstack([comp.real, comp.imag]).astype(complex), tol).real
        for b in real.T:
            full = np.zeros(amb, dtype=complex)
            full[idx] = b
            vectors.append(full)
            sectors.append(key)
    return SubspaceBasis(amb, np.array(vectors).reshape(-1, amb), 0, tol, sectors=sectors,
                         layout=nperp.layout)


# ---------------------------------------------------------------------------
# sparsification


@dataclass
class SparsifyResult:
    poly: TensorPoly
    vector: np.ndarray
    nonzeros: int
    budget_met: bool
    method: str


def _nnz(x: np.ndarray, rel: float) -> int:
    m = np.max(np.abs(x))
    return int(np.sum(np.abs(x) > rel * m)) if m > 0 else 0


def _greedy(v: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero ``rank(b)`` coordinates of ``v + b c`` chosen by column pivoting."""
    if b.shape[1] == 0:
        return v
    _, _, piv = scipy.linalg.qr(b.T, pivoting=True, mode="economic")
    rows = piv[: b.shape[1]]
    c, *_ = np.linalg.lstsq(b[rows], -v[rows], rcond=None)
    return v + b @ c


def _l1(v: np.ndarray, b: np.ndarray, weights: np.ndarray) -> np.ndarray | None:
    """``argmin sum w|x|`` over ``x = v + b c`` as a linear program (HiGHS)."""
    n, k = b.shape
    # variables: c (free, k), t (n, >= |x|)
    cost = np.concatenate([np.zeros(k), weights])
    a_ub = np.block([[b, -np.eye(n)], [-b, -np.eye(n)]])
    b_ub = np.concatenate([-v, v])
    bounds = [(None, None)] * k + [(0, None)] * n
    res = scipy.optimize.linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        return None
    return v + b @ res.x[:k]


def _reweighted(comp: np.ndarray, b: np.ndarray, w: np.ndarray, iters: int, rel_zero: float,
                best: np.ndarray) -> np.ndarray:
    for _ in range(iters):
        x = _l1(comp, b, w)
        if x is None:
            break
        if _nnz(x, rel_zero) < _nnz(best, rel_zero):
            best = x
        w = 1.0 / (np.abs(x) + 1e-3 * np.max(np.abs(x)))
    return best


def _rationalise(x: np.ndarray, max_den: int = 12, tol: float = 1e-7) -> np.ndarray:
    # LP vertices are exact up to solver noise; snap to the smallest fitting denominator
    for q in range(1, max_den + 1):
        r = np.round(x.real * q) / q + 1j * np.round(x.imag * q) / q
        if np.max(np.abs(r - x)) < tol:
            return r
    return x


def sparsify(v: np.ndarray, null_basis: SubspaceBasis, budget: int, *, layout=None,
             reweight_iters: int = 8, restarts: int = 16, seed: int = 0, rel_zero: float = 1e-8,
             verify_target: np.ndarray | None = None, d: int | None = None) -> SparsifyResult:
    """Sparse representative of ``v + span(null_basis)``.

    Greedy pivoted elimination gives a first candidate; reweighted L1
    minimisation refines it; while the budget is missed, the L1 stage is
    restarted from random weights (drawn from ``seed``). Only the sectors where ``v`` is supported are
    touched (the null space is a direct sum over sectors). Coefficients are
    rescaled so the largest magnitude is 1 and tiny entries dropped. If
    ``verify_target`` is given the result is re-checked on random draws.
    """
    v = np.asarray(v, dtype=complex)
    layout = layout or null_basis.layout
    if layout is None:
        raise ValueError("coordinate layout unknown")
    if null_basis.dim == 0:
        x = v
        method = "identity"
    else:
        support = np.abs(v) > rel_zero * np.max(np.abs(v))
        sec = null_basis.sectors
        groups = _sector_groups(layout)
        touched = [key for key, idx in groups.items() if np.any(support[idx])]
        mask = np.zeros(v.shape[0], dtype=bool)
        for key in touched:
            mask[groups[key]] = True
        keep = list(range(null_basis.dim)) if sec is None else [i for i, s in enumerate(sec) if s in touched]
        nb = null_basis.vectors[keep].T[mask]
        nb = _range_basis(nb, 1e-9)
        # null space is conjugation-closed; a real basis decouples real/imag parts
        breal = _range_basis(np.hstack([nb.real, nb.imag]).astype(complex), 1e-9).real
        vs = v[mask]
        parts = []
        for comp in (vs.real, vs.imag):
            if np.max(np.abs(comp), initial=0) <= rel_zero * np.max(np.abs(vs)):
                parts.append(np.zeros_like(comp))
                continue
            best = _reweighted(comp, breal, np.ones_like(comp), reweight_iters, rel_zero,
                               _greedy(comp, breal))
            gen = RngStream.named(seed, "sparsify").generator
            for _ in range(restarts):
                if _nnz(best, rel_zero) <= budget:
                    break
                w = gen.uniform(0.5, 1.5, comp.shape)
                best = _reweighted(comp, breal, w, reweight_iters, rel_zero, best)
            parts.append(best)
        x = np.zeros_like(v)
        x[mask] = parts[0] + 1j * parts[1]
        method = "greedy+reweighted-l1"
    x = x / x[np.argmax(np.abs(x))] * 1.0
    x[np.abs(x) <= rel_zero] = 0
    x = _rationalise(x)
    poly = vector_to_poly(x, layout)
    if verify_target is not None:
        if not verify_proportional(poly, verify_target, d or int(round(math.sqrt(verify_target.shape[0]))),
                                   samples=20):
            raise SearchError("sparsified polynomial failed re-verification")
    nnz = len(poly)
    return SparsifyResult(poly, x, nnz, nnz <= budget, method)


# ---------------------------------------------------------------------------
# conversions and checks


def word_index(words: Sequence[Sequence[int]], D: int) -> int:
    n, m = len(words), len(words[0])
    idx = 0
    for t in range(m):
        for k in range(n):
            idx = idx * D + words[k][t]
    return idx


def vector_to_poly(v: np.ndarray, layout: tuple[int, int, int], rel_zero: float = 0.0) -> TensorPoly:
    n, D, m = layout
    v = np.asarray(v, dtype=complex)
    thr = rel_zero * np.max(np.abs(v))
    terms = {}
    for i in np.nonzero(np.abs(v) > thr)[0]:
        digits = np.unravel_index(int(i), (D,) * (n * m))
        words = tuple(tuple(int(digits[t * n + k]) for t in range(m)) for k in range(n))
        terms[words] = complex(v[i])
    return TensorPoly(terms, D, n_parties=n)


def poly_to_vector(p: TensorPoly) -> np.ndarray:
    m = p.degrees[0]
    if any(deg != m for deg in p.degrees):
        raise ValueError("coefficient vectors need equal per-party degrees")
    v = np.zeros(p.n_vars ** (p.n_parties * m), dtype=complex)
    for words, c in p.items():
        v[word_index(words, p.n_vars)] = c
    return v


def verify_proportional(p, target: np.ndarray, d: int, samples: int = 20, seed: int = 0,
                        tol: float = 1e-9, kind: str = "haar") -> bool:
    rng = RngStream.named(seed, f"verify:{kind}")
    if kind == "haar":
        x = haar_unitary(d, rng, size=(p.n_vars, samples))
    else:
        x = ginibre(d, d, rng, size=(p.n_vars, samples))
    vals = p.evaluate(x)
    for val in vals:
        r = fit_scalar(val, target)
        if r.degenerate or r.residual > tol or r.scalar == 0:
            return False
    return True


def dim_bound(m: int, D: int, d: int) -> int:
    """``C(2m + D d^2 - 1, D d^2 - 1) d^2`` (exact integer arithmetic)."""
    k = D * d * d - 1
    return math.comb(2 * m + k, k) * d * d


def perm_span_residual(mat: np.ndarray, n: int, d: int) -> float:
    """Relative distance from ``mat`` to ``span{P_pi : pi in S_n}``."""
    mat = np.asarray(mat, dtype=complex)
    if mat.shape != (d**n, d**n):
        raise ValueError(f"expected a {d**n}x{d**n} matrix")
    norm = np.linalg.norm(mat)
    if norm == 0:
        return 0.0
    basis = np.stack([permutation_operator(n, d, p).ravel() for p in itertools.permutations(range(n))], axis=1)
    coef, *_ = np.linalg.lstsq(basis, mat.ravel(), rcond=None)
    return float(np.linalg.norm(mat.ravel() - basis @ coef) / norm)


@dataclass
class SearchResult:
    cfg: GeneratorConfig
    mode: str
    vperp: SubspaceBasis
    nperp: SubspaceBasis
    quotient: SubspaceBasis

    @property
    def layout(self) -> tuple[int, int, int]:
        return (self.cfg.n_parties, self.cfg.D, self.cfg.m)

    def dims(self) -> dict:
        return {"vperp": self.vperp.dim, "nperp": self.nperp.dim, "quotient": self.quotient.dim}

    def polys(self) -> list[TensorPoly]:
        """Quotient basis vectors as polynomials, rescaled to unit max coefficient."""
        if self.quotient.dim_override is not None:
            raise SearchError("MPS mode yields dimensions only")
        return [vector_to_poly(v / np.max(np.abs(v)), self.layout, rel_zero=1e-12) for v in self.quotient.vectors]


def run_search(cfg: GeneratorConfig, mode: str = "dense") -> SearchResult:
    """Close ``V_perp`` (boundaries orthogonal through the target) and ``N_perp``
    (unconstrained boundaries), then take the quotient."""
    vperp = span_close(cfg.with_lr(True), mode)
    nperp = span_close(cfg.with_lr(False), mode)
    return SearchResult(cfg, mode, vperp, nperp, quotient_swap_space(nperp, vperp))

"""Closed-form polynomial constructions.

* central polynomials (the qubit commutator square, Formanek's family, the
  trivial dimension-1 polynomial) with numerical certification;
* rewinding polynomials ``R ~ V^{-s}``;
* the symbolic SWAP/projector pipeline for two parties and permutation
  polynomials for ``n`` parties built from it;
* fast-forward ``E^j ~ V_j^{ns}`` and fast-rewind ``D^j ~ V_j^{-ns}``
  compositions.

Every central polynomial is checked numerically when it is built, since the
recipe used here comes from the literature and is not trusted blindly.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ncpoly import (
    Embed,
    Leaf,
    PolyExpr,
    Product,
    Scalar,
    Substitute,
    Sum,
    TensorPoly,
    as_expr,
    register_evaluator,
)
from .numkit import (
    RngStream,
    fit_scalar,
    ginibre,
    haar_unitary,
    permutation_operator,
    swap_operator,
)

__all__ = [
    "CertificationError",
    "CentralPoly",
    "qubit_central",
    "formanek_central",
    "trivial_central",
    "pad_central",
    "alphabet_central",
    "formanek_eigen_eval",
    "interleaved_formanek",
    "certify_central",
    "certify_bundle",
    "rewind_poly",
    "qubit_rewind",
    "PermutationPolyBundle",
    "swap_poly_symbolic",
    "perm_poly",
    "compose_fast_forward",
    "compose_fast_rewind",
    "symmetric_projector",
    "antisymmetric_projector",
]

CERT_SAMPLES = 20
LOW_DIM_SAMPLES = 5
CERT_TOL = 1e-9
RETRY_BUDGET = 16


class CertificationError(RuntimeError):
    """A construction failed its numerical self-check."""


def _scaled_ginibre(d: int, n: int, rng: RngStream) -> np.ndarray:
    # entries of order 1/sqrt(d) keep operator norms O(1) at every dimension
    return ginibre(d, d, rng, size=(n,)) / math.sqrt(d)


@dataclass(frozen=True)
class CentralPoly:
    """Single-party polynomial that evaluates to a multiple of the identity.

    Construction runs the certification: ``CERT_SAMPLES`` random
    evaluations at ``target_dim`` must be proportional to the identity with a
    generically nonzero scalar, and ``LOW_DIM_SAMPLES`` evaluations at every
    smaller dimension must vanish.
    """

    poly: TensorPoly
    target_dim: int
    linear_vars: tuple[int, ...] = ()
    label: str = ""
    certify: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.poly.n_parties != 1:
            raise ValueError("central polynomials are single-party")
        object.__setattr__(self, "linear_vars", tuple(self.linear_vars))
        if self.certify:
            certify_central(self.poly, self.target_dim, label=self.label)

    @property
    def degree(self) -> int:
        return self.poly.degrees[0]

    @property
    def n_vars(self) -> int:
        return self.poly.n_vars


def certify_central(p: TensorPoly, target_dim: int, *, seed: int = 0, label: str = "") -> None:
    rng = RngStream.named(seed, f"central-cert:{label}:{target_dim}:{p.degrees[0]}")
    eye = np.eye(target_dim, dtype=complex)
    x = _scaled_ginibre(target_dim, p.n_vars * CERT_SAMPLES, rng).reshape(
        p.n_vars, CERT_SAMPLES, target_dim, target_dim)
    vals = p.evaluate(x)
    nonzero = 0
    for v in vals:
        r = fit_scalar(v, eye)
        if r.residual > CERT_TOL:
            raise CertificationError(f"{label or 'polynomial'} is not central at dimension {target_dim}"
                                     f" (residual {r.residual:.2e})")
        nonzero += abs(r.scalar) > 1e-300 and not r.degenerate
    if nonzero == 0:
        raise CertificationError(f"{label or 'polynomial'} vanishes identically at dimension {target_dim}")
    scale = max(float(np.max(np.abs(vals))), 1.0)
    for dim in range(1, target_dim):
        y = _scaled_ginibre(dim, p.n_vars * LOW_DIM_SAMPLES, rng).reshape(
            p.n_vars, LOW_DIM_SAMPLES, dim, dim)
        # embed as y (+) 0 so the comparison scale matches the target dimension
        pad = np.zeros(y.shape[:-2] + (target_dim, target_dim), dtype=complex)
        pad[..., :dim, :dim] = y
        low = p.evaluate(pad)
        if np.max(np.abs(low)) > CERT_TOL * scale:
            raise CertificationError(f"{label or 'polynomial'} does not vanish at dimension {dim}")


# ---------------------------------------------------------------------------
# central polynomials


def qubit_central() -> CentralPoly:
    """``[A, B]^2``; the square of a traceless 2x2 matrix is scalar."""
    c = TensorPoly.commutator(0, 1, 2)
    return CentralPoly(c @ c, 2, (), label="qubit-commutator-square")


def trivial_central() -> CentralPoly:
    """``H(Z) = Z``, central for dimension 1."""
    return CentralPoly(TensorPoly.word((0,), 1), 1, (0,), label="dimension-1")


def _poly_mul_comm(a: dict, b: dict) -> dict:
    out: dict = defaultdict(int)
    for ka, va in a.items():
        for kb, vb in b.items():
            out[tuple(x + y for x, y in zip(ka, kb))] += va * vb
    return {k: v for k, v in out.items() if v}


def _formanek_g(d: int) -> dict[tuple[int, ...], int]:
    """Integer coefficients of ``g(t_1..t_{d+1})`` as an exponent map."""
    n = d + 1

    def diff(i, j):
        ei = tuple(int(q == i) for q in range(n))
        ej = tuple(int(q == j) for q in range(n))
        return {ei: 1, ej: -1}

    g = {(0,) * n: 1}
    for i in range(1, d):
        g = _poly_mul_comm(g, diff(0, i))
        g = _poly_mul_comm(g, diff(d, i))
    for i in range(1, d):
        for j in range(i + 1, d):
            g = _poly_mul_comm(g, diff(i, j))
            g = _poly_mul_comm(g, diff(i, j))
    return g


_FORMANEK_CACHE: dict[int, CentralPoly] = {}


def formanek_central(d: int) -> CentralPoly:
    """Formanek central polynomial for ``d x d`` matrices.

    Variables: ``0`` is ``X`` (later ``V``), ``1..d`` are ``Y_1..Y_d``.
    With ``g = prod_{i=2}^{d} (t_1 - t_i)(t_{d+1} - t_i) prod_{2<=i<j<=d} (t_i - t_j)^2``,
    each monomial ``t^a`` becomes ``X^{a_1} Y_1 X^{a_2} Y_2 ... X^{a_d} Y_d X^{a_{d+1}}``,
    and the result is summed over the ``d`` cyclic relabellings of the
    ``Y``'s. Degree ``d^2``, linear in every ``Y``.
    """
    if d < 2:
        raise ValueError("formanek_central needs d >= 2")
    if d in _FORMANEK_CACHE:
        return _FORMANEK_CACHE[d]
    g = _formanek_g(d)
    terms: dict = defaultdict(complex)
    for exps, a in g.items():
        for shift in range(d):
            w: list[int] = []
            for k in range(d):
                w += [0] * exps[k]
                w.append(1 + (k + shift) % d)
            w += [0] * exps[d]
            terms[(tuple(w),)] += a
    names = ["X"] + [f"Y{i}" for i in range(1, d + 1)]
    try:
        poly = TensorPoly(terms, d + 1, names)
    except ValueError:
        raise CertificationError(f"Formanek recipe produced the zero polynomial for d={d}") from None
    cp = CentralPoly(poly, d, tuple(range(1, d + 1)), label=f"formanek-{d}")
    _FORMANEK_CACHE[d] = cp
    return cp


def formanek_eigen_eval(d: int, x: np.ndarray) -> np.ndarray:
    """Evaluate ``formanek_central(d)`` through the eigenbasis of ``X``.

    With ``X = S diag(lam) S^-1`` the word sum collapses to
    ``S [sum_k g(lam_k1..lam_k{d+1}) Y_1[k1,k2] ... Y_d[kd,k{d+1}]] S^-1``
    per cyclic shift, where ``g`` is evaluated as a product of eigenvalue
    differences. This avoids the cancellation between the integer
    coefficients of the expanded sum. ``x`` has shape ``(d+1, ..., d, d)``.
    """
    lam, vecs = np.linalg.eig(x[0])
    inv = np.linalg.inv(vecs)
    yt = [inv @ x[i] @ vecs for i in range(1, d + 1)]
    t = [lam[(...,) + (None,) * k + (slice(None),) + (None,) * (d - k)] for k in range(d + 1)]
    g = np.ones(np.broadcast_shapes(*(a.shape for a in t)), dtype=complex)
    for i in range(1, d):
        g = g * (t[0] - t[i]) * (t[d] - t[i])
    for i in range(1, d):
        for j in range(i + 1, d):
            g = g * (t[i] - t[j]) ** 2
    idx = "abcdefghijklmnopqrstuvwxyz"[: d + 1]
    spec = "..." + idx + "," + ",".join("..." + idx[k] + idx[k + 1] for k in range(d)) + "->..." + idx[0] + idx[d]
    out = 0
    for shift in range(d):
        out = out + np.einsum(spec, g, *(yt[(k + shift) % d] for k in range(d)), optimize=True)
    return vecs @ out @ inv


def interleaved_formanek(d: int) -> TensorPoly:
    """Formanek's polynomial with a new last letter ``k`` between consecutive letters.

    As an identity of polynomials ``F'(Z, k) k = F(Z_1 k, .., Z_{d+1} k)``.
    """
    f = formanek_central(d).poly
    kappa = f.n_vars
    terms = {}
    for (w,), c in f.items():
        ww: list[int] = []
        for i, x in enumerate(w):
            if i:
                ww.append(kappa)
            ww.append(x)
        terms[(tuple(ww),)] = c
    return TensorPoly(terms, f.n_vars + 1, list(f.var_names) + ["K"])


def _interleaved_eval(d: int, x: np.ndarray) -> np.ndarray:
    kappa = x[-1]
    z = x[:-1] @ kappa
    return formanek_eigen_eval(d, z) @ np.linalg.inv(kappa)


for _d in range(2, 7):
    register_evaluator(f"formanek:{_d}", lambda x, _d=_d: formanek_eigen_eval(_d, x))
    register_evaluator(f"formanek-interleaved:{_d}", lambda x, _d=_d: _interleaved_eval(_d, x))


def pad_central(c: CentralPoly, extra: int) -> CentralPoly:
    """Raise the degree by ``extra`` via ``U -> U^{extra+1}`` on a linear variable."""
    if extra < 0:
        raise ValueError("extra must be >= 0")
    if extra == 0:
        return c
    if not c.linear_vars:
        raise ValueError(f"{c.label or 'central polynomial'} has no certified linear variable")
    u = c.linear_vars[0]
    p = c.poly.substitute(u, (u,) * (extra + 1))
    return CentralPoly(p, c.target_dim, c.linear_vars[1:], label=f"{c.label}+{extra}")


def alphabet_central(d: int, degree: int, n_vars: int = 2) -> CentralPoly:
    """Central polynomial for dimension ``d`` of exact ``degree`` in letters ``V=0, W=1``.

    Starts from Formanek's polynomial, pads it, and then maps ``X -> V``
    and every ``Y_i -> W``. If that collapses to something vanishing the
    fallback ``Y_i -> W V^{i-1}`` is used (distinct words keep the ``Y``'s
    generic); its degree is then corrected with further padding.
    """
    if n_vars < 2:
        raise ValueError("need at least the letters V and W")
    if d == 1:
        return CentralPoly(TensorPoly.power(0, degree, n_vars), 1, (), label="dimension-1 power")
    base = formanek_central(d)
    if degree < base.degree:
        raise ValueError(f"no central polynomial of degree {degree} < {base.degree} for d={d}")
    errors = []
    for fallback in (False, True):
        mapping = [(0,)] + [((1,) + (0,) * (i - 1)) if fallback else (1,) for i in range(1, d + 1)]
        # extra letters from the fallback words: d(d-1)/2 V's beyond the Y count
        added = sum(len(m) - 1 for m in mapping[1:]) if fallback else 0
        extra = degree - base.degree - added
        if extra < 0:
            errors.append(f"fallback needs degree >= {base.degree + added}")
            continue
        padded = pad_central(base, extra) if extra else base
        p = padded.poly.map_letters(mapping, n_vars)
        try:
            return CentralPoly(p, d, (), label=f"central-{d}-deg{degree}")
        except (CertificationError, ValueError) as exc:
            errors.append(str(exc))
    raise CertificationError("; ".join(errors))


# ---------------------------------------------------------------------------
# rewinding


def rewind_poly(d: int, s: int) -> TensorPoly:
    """``R_d(V, W_1..W_d)`` with ``R_d V^s`` central, i.e. ``R_d ~ V^{-s}``.

    Obtained from Formanek's ``F_d(V, W_1 V^s, ..., W_d V^s)``: every word
    of ``F_d`` ends in some ``Y_i`` followed by a power of ``V``, so after the
    substitution each word ends in at least ``s`` copies of ``V``, which are
    stripped. Degree ``s(d-1) + d^2``.
    """
    if d < 2 or s < 0:
        raise ValueError("rewind_poly needs d >= 2 and s >= 0")
    f = formanek_central(d).poly
    mapping = [(0,)] + [(i,) + (0,) * s for i in range(1, d + 1)]
    sub = f.map_letters(mapping, d + 1)
    names = ["V"] + [f"W{i}" for i in range(1, d + 1)]
    r = TensorPoly(sub.strip_suffix(0, s).terms, d + 1, names)
    assert r.degrees[0] == s * (d - 1) + d * d
    return r


def qubit_rewind(s: int) -> TensorPoly:
    """``[W, V] V^s [W, V] / 2`` over letters ``V=0, W=1``.

    The factor ``1/2`` gives a unit-norm coefficient vector, which is the
    normalisation that matches the quoted success rates.
    """
    if s < 0:
        raise ValueError("s must be >= 0")
    c = TensorPoly.commutator(1, 0, 2)
    mid = TensorPoly.power(0, s, 2) if s else None
    p = c @ mid @ c if mid is not None else c @ c
    return p.scaled(0.5)


# ---------------------------------------------------------------------------
# projectors, SWAP and permutations


def symmetric_projector(d: int) -> np.ndarray:
    return 0.5 * (np.eye(d * d) + swap_operator(d))


def antisymmetric_projector(d: int) -> np.ndarray:
    return 0.5 * (np.eye(d * d) - swap_operator(d))


@dataclass(frozen=True)
class PermutationPolyBundle:
    """Two-party polynomials proportional to ``Pi_S``, ``Pi_A`` and SWAP.

    ``sym`` and ``antisym`` share one proportionality scalar at every
    evaluation point, so ``sym + antisym ~ I`` and ``swap = sym - antisym``.
    ``g_tilde``/``h_tilde`` are the padded projector polynomials, each
    proportional to its projector with its own scalar.
    """

    sym: PolyExpr
    antisym: PolyExpr
    swap: PolyExpr
    identity: PolyExpr
    g_tilde: PolyExpr
    h_tilde: PolyExpr
    degree: int
    d: int
    n_vars: int
    var_names: tuple[str, ...]
    seed: int

    def random_assignment(self, rng: RngStream, size: int = 1, kind: str = "haar") -> np.ndarray:
        if kind == "haar":
            return haar_unitary(self.d, rng, size=(self.n_vars, size))
        return ginibre(self.d, self.d, rng, size=(self.n_vars, size)) / math.sqrt(self.d)


def _random_combo(rng: RngStream, k: int) -> np.ndarray:
    return ginibre(1, k, rng)[0]


def _two_party_combo(coeffs: Sequence[complex], pairs: Sequence[tuple[int, int]], n_vars: int) -> TensorPoly:
    return TensorPoly({((a,), (b,)): c for c, (a, b) in zip(coeffs, pairs)}, n_vars)


def _normalised(expr: PolyExpr, x: np.ndarray) -> PolyExpr | None:
    """Rescale ``expr`` to unit geometric-mean norm over the probe points.

    Homogeneous rescaling keeps every proportionality relation and keeps
    nested high-degree products inside floating-point range. Returns None
    if the probe evaluations vanish or overflow.
    """
    vals = expr.evaluate(x)
    norms = np.linalg.norm(vals, axis=(-2, -1))
    if not np.all(np.isfinite(norms)) or np.any(norms <= 1e-250):
        return None
    return Scalar(float(np.exp(-np.mean(np.log(norms)))), expr)


def _check_nonzero(expr: PolyExpr, x: np.ndarray) -> bool:
    vals = expr.evaluate(x)
    return bool(np.all(np.linalg.norm(vals, axis=(-2, -1)) > 1e-200) and np.all(np.isfinite(vals)))


def swap_poly_symbolic(d: int = 2, seed: int = 0, *, padding: str = "inner",
                       max_cost: int = 4) -> PermutationPolyBundle:
    """Projector and SWAP polynomials for two ``d``-dimensional parties.

    ``G~ = G(C_1(X), ..)`` with ``G`` central for dimension ``d(d+1)/2`` and
    ``C_i`` random combinations of ``X_k (x) X_k`` is proportional to
    ``Pi_S``. ``H~ = H(..)`` with ``H`` central for ``d(d-1)/2`` applied to
    random combinations of sandwiches ``P_ij G~ P_kl``, where
    ``P_ij = Y_i (x) Y_j - Y_j (x) Y_i``, is proportional to ``Pi_A``. Their
    degrees are then equalised (see ``padding``). With ``K = G~ + H~`` and a central ``F`` for
    ``d^2``, ``F(K Q_1 K, ..)`` equals ``K F_in K`` where ``F_in`` replaces
    every gap between consecutive letters of ``F`` by ``K K``;
    ``S~ = G~ F_in G~`` and ``A~ = H~ F_in H~`` carry a common scalar.

    ``padding="inner"`` equalises degrees by raising a linear variable of
    ``G`` or ``H`` itself; ``padding="central"`` multiplies by separate
    central polynomials for ``d^2`` instead. Both are exact, but the second
    multiplies ``G~`` and ``H~`` by independent random scalars and makes
    the final evaluation badly conditioned in double precision.

    Formanek's polynomial for dimension ``d(d+1)/2`` is used for ``G``.
    ``max_cost`` bounds that dimension's Formanek index; the default
    admits ``d = 2`` only (``d = 3`` would need dimension 6).
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if padding not in ("inner", "central"):
        raise ValueError("padding must be 'inner' or 'central'")
    dim_s, dim_a, dim_full = d * (d + 1) // 2, d * (d - 1) // 2, d * d
    if max(dim_s, dim_full) > max_cost:
        raise ValueError(f"symbolic pipeline for d={d} needs central polynomials for dimension "
                         f"{max(dim_s, dim_full)}; raise max_cost to attempt it")
    G = formanek_central(dim_s) if dim_s >= 2 else trivial_central()
    H = formanek_central(dim_a) if dim_a >= 2 else trivial_central()
    F = formanek_central(dim_full)
    J = formanek_central(dim_full)

    # alphabet: X_1..X_nx, Y_1..Y_3, T_1..T_nt
    nx = max(G.n_vars, 2)
    ny = 3
    nt = 4
    names = [f"X{i}" for i in range(1, nx + 1)] + [f"Y{i}" for i in range(1, ny + 1)] + \
            [f"T{i}" for i in range(1, nt + 1)]
    n_vars = len(names)
    xs = list(range(nx))
    ys = list(range(nx, nx + ny))
    ts = list(range(nx + ny, nx + ny + nt))

    probe_rng = RngStream.named(seed, "symbolic-swap-probe")
    probe = haar_unitary(d, probe_rng, size=(n_vars, 4))

    for attempt in range(RETRY_BUDGET):
        rng = RngStream.named(seed, f"symbolic-swap:{attempt}")

        cs = [Leaf(_two_party_combo(_random_combo(rng, nx), [(x, x) for x in xs], n_vars))
              for _ in range(G.n_vars)]
        g_raw = _normalised(Substitute(Leaf(G.poly), cs), probe)
        if g_raw is None:
            continue

        pairs = [(ys[a], ys[b]) for a in range(ny) for b in range(a + 1, ny)]
        p_ij = [Leaf(TensorPoly({((i,), (j,)): 1.0, ((j,), (i,)): -1.0}, n_vars)) for i, j in pairs]
        sandwiches = [Product([p_ij[a], g_raw, p_ij[b]]) for a in range(len(pairs)) for b in range(len(pairs))]
        h_args = []
        for _ in range(H.n_vars):
            w = _random_combo(rng, len(sandwiches))
            h_args.append(Sum([Scalar(c, s) for c, s in zip(w, sandwiches)]))
        h_raw = _normalised(Substitute(Leaf(H.poly), h_args), probe)
        if h_raw is None:
            continue

        deg_g, deg_h = g_raw.degrees[0], h_raw.degrees[0]
        if padding == "inner":
            # raise the lower degree through the central polynomial's own linear variable
            if deg_g < deg_h:
                gp = pad_central(G, deg_h - deg_g)
                g_tilde = _normalised(Substitute(Leaf(gp.poly), cs), probe)
                h_tilde = h_raw
            else:
                hp = pad_central(H, deg_g - deg_h)
                g_tilde = g_raw
                h_tilde = _normalised(Substitute(Leaf(hp.poly), h_args), probe)
        else:
            t_pairs = [(a, b) for a in ts for b in ts]

            def j_args():
                return [Leaf(_two_party_combo(_random_combo(rng, len(t_pairs)), t_pairs, n_vars))
                        for _ in range(J.n_vars)]

            target = max(deg_g, deg_h) + J.degree
            jg = pad_central(J, target - deg_g - J.degree)
            jh = pad_central(J, target - deg_h - J.degree)
            g_tilde = _normalised(Product([g_raw, Substitute(Leaf(jg.poly), j_args())]), probe)
            h_tilde = _normalised(Product([h_raw, Substitute(Leaf(jh.poly), j_args())]), probe)
        if g_tilde is None or h_tilde is None:
            continue

        k = Sum([g_tilde, h_tilde])
        kk = Product([k, k])
        # F(K Q K) = K F'(Q, K K) K with F' the interleaved polynomial
        f_prime = Leaf(interleaved_formanek(dim_full), evaluator=f"formanek-interleaved:{dim_full}")
        # Q_i = T_a (x) T_b over distinct pairs; sharing the T pool with J is harmless
        qs = [Leaf(TensorPoly.monomial([(a,), (b,)], n_vars))
              for a, b in _distinct_pairs(ts, F.n_vars)]
        f_inner = _normalised(Substitute(f_prime, qs + [kk]), probe)
        if f_inner is None:
            continue
        sym = Product([g_tilde, f_inner, g_tilde])
        anti = Product([h_tilde, f_inner, h_tilde])
        if not (_check_nonzero(sym, probe) and _check_nonzero(anti, probe)):
            continue
        bundle = PermutationPolyBundle(
            sym=sym, antisym=anti, swap=Sum([sym, Scalar(-1.0, anti)]), identity=Sum([sym, anti]),
            g_tilde=g_tilde, h_tilde=h_tilde, degree=sym.degrees[0], d=d, n_vars=n_vars,
            var_names=tuple(names), seed=seed)
        certify_bundle(bundle, samples=4, seed=seed)
        return bundle
    raise CertificationError(f"all {RETRY_BUDGET} coefficient draws gave a vanishing projector polynomial")


def _distinct_pairs(pool: Sequence[int], k: int) -> list[tuple[int, int]]:
    pairs = [(a, b) for a in pool for b in pool if a != b]
    if k > len(pairs):
        raise ValueError("T pool too small")
    return pairs[:k]


def certify_bundle(bundle: PermutationPolyBundle, samples: int = 4, seed: int = 0,
                   tol: float = 1e-8, kind: str = "haar") -> dict:
    """Evaluate the bundle and check projector/SWAP structure with a shared scalar."""
    rng = RngStream.named(seed, f"bundle-cert:{kind}")
    x = bundle.random_assignment(rng, samples, kind)
    d = bundle.d
    ps, pa, sw, eye = symmetric_projector(d), antisymmetric_projector(d), swap_operator(d), np.eye(d * d)
    worst = defaultdict(float)
    memo: dict = {}
    for i in range(samples):
        xi = x[:, i]
        memo.clear()
        vals = {name: getattr(bundle, name)._eval(xi, memo)
                for name in ("g_tilde", "h_tilde", "sym", "antisym", "swap", "identity")}
        checks = {"g_tilde": (vals["g_tilde"], ps), "h_tilde": (vals["h_tilde"], pa),
                  "sym": (vals["sym"], ps), "antisym": (vals["antisym"], pa),
                  "identity": (vals["identity"], eye), "swap": (vals["swap"], sw)}
        scalars = {}
        for name, (a, b) in checks.items():
            r = fit_scalar(a, b)
            worst[name] = max(worst[name], r.residual)
            scalars[name] = r.scalar
            if r.residual > tol or r.degenerate or r.scalar == 0:
                raise CertificationError(f"bundle check {name} failed (residual {r.residual:.2e})")
        ref = abs(scalars["sym"])
        for other in ("antisym", "identity", "swap"):
            rel = abs(scalars[other] - scalars["sym"]) / ref
            worst["shared-scalar"] = max(worst["shared-scalar"], rel)
            if rel > tol:
                raise CertificationError(f"{other} scalar differs from sym scalar (rel {rel:.2e})")
    return dict(worst)


def _transposition_chain(perm: Sequence[int]) -> list[tuple[int, int]]:
    """Gates ``(k, pi_{k-1}(k))`` with ``pi_k = (k, pi_{k-1}(k)) o pi_{k-1}``."""
    n = len(perm)
    cur = list(perm)
    gates = []
    for k in range(n - 1):
        j = cur[k]
        gates.append((k, j))
        # compose the transposition (k j) after cur
        cur = [k if v == j else j if v == k else v for v in cur]
    if cur != list(range(n)):
        raise AssertionError("transposition chain did not terminate at the identity")
    return gates


def _gate_perm(n: int, i: int, j: int) -> list[int]:
    p = list(range(n))
    p[i], p[j] = p[j], p[i]
    return p


def perm_poly(n: int, d: int, perm: Sequence[int], base: PermutationPolyBundle | PolyExpr | TensorPoly,
              identity: PolyExpr | TensorPoly | None = None) -> PolyExpr:
    """``n``-party polynomial proportional to ``permutation_operator(n, d, perm)``.

    ``perm`` is decomposed into ``n-1`` gates, each a transposition or the
    identity. A transposition gate is the SWAP polynomial on its pair, an
    identity gate is ``sym + antisym``; both carry the same scalar, and every
    other party is padded with a central polynomial of equal degree. ``base``
    is a bundle, or a bare SWAP polynomial together with ``identity``.
    """
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of range({n})")
    if isinstance(base, PermutationPolyBundle):
        if base.d != d:
            raise ValueError(f"bundle is for d={base.d}, not {d}")
        swap, ident = base.swap, base.identity
    else:
        swap = as_expr(base)
        ident = as_expr(identity) if identity is not None else None
    if n < 2:
        raise ValueError("permutation polynomials need n >= 2")
    deg = swap.degrees[0]
    filler = None
    if n > 2:
        filler = Leaf(_filler_for(d, deg, swap.n_vars))
    gates = _transposition_chain(perm)
    factors: list[PolyExpr] = []
    gate_perms = []
    for i, j in gates:
        if i == j:
            other = (i + 1) % n
            if ident is None:
                raise ValueError("identity gate needs an identity-proportional two-party polynomial")
            factors.append(Embed(ident, n, (i, other), filler))
            gate_perms.append(list(range(n)))
        else:
            factors.append(Embed(swap, n, (i, j), filler))
            gate_perms.append(_gate_perm(n, i, j))
    target = permutation_operator(n, d, perm)
    ops = [permutation_operator(n, d, g) for g in gate_perms]
    for order in (1, -1):
        prod = np.eye(d**n)
        for op in ops[::order]:
            prod = prod @ op
        if np.array_equal(prod, target):
            return Product(factors[::order])
    raise AssertionError("gate product does not reproduce the permutation")


def _filler_for(d: int, degree: int, n_vars: int) -> TensorPoly:
    # bystander padding central for dimension d over the leading letters
    return alphabet_central(d, degree, n_vars).poly


# ---------------------------------------------------------------------------
# fast-forward / fast-rewind


def _swap_lookup(swap_polys, j: int, k: int) -> PolyExpr:
    if isinstance(swap_polys, Mapping):
        for key in ((j, k), (k, j)):
            if key in swap_polys:
                return as_expr(swap_polys[key])
        raise KeyError(f"no SWAP polynomial for pair {(j, k)}")
    return as_expr(swap_polys)


def _first_swap(swap_polys) -> PolyExpr:
    if isinstance(swap_polys, Mapping):
        return as_expr(next(iter(swap_polys.values())))
    return as_expr(swap_polys)


def _compose(n: int, j: int, swap_polys, local: PolyExpr, d: int) -> PolyExpr:
    """``local_j prod_{k != j} Omega^{(j,k)} local_k Omega^{(j,k)}`` with padding."""
    if not 0 <= j < n:
        raise ValueError(f"party {j} out of range for n={n}")
    if n == 1:
        return Embed(local, 1, (0,))
    first = _first_swap(swap_polys)
    n_vars = first.n_vars
    factors: list[PolyExpr] = [Embed(local, n, (j,))]
    fillers: dict[int, TensorPoly] = {}
    for k in range(n):
        if k == j:
            continue
        omega = _swap_lookup(swap_polys, j, k)
        if omega.n_parties != 2 or omega.n_vars != n_vars:
            raise ValueError("SWAP polynomials must be two-party over one alphabet")
        if omega.degrees[0] != omega.degrees[1]:
            raise ValueError("SWAP polynomial has unequal party degrees")
        deg = omega.degrees[0]
        filler = None
        if n > 2:
            if deg not in fillers:
                fillers[deg] = _filler_for(d, deg, n_vars)
            filler = Leaf(fillers[deg])
        om = Embed(omega, n, (j, k), filler)
        factors += [om, Embed(local, n, (k,)), om]
    out = Product(factors)
    if len(set(out.degrees)) != 1:
        raise AssertionError(f"degree imbalance {out.degrees}")
    return out


def compose_fast_forward(n: int, j: int, s: int, swap_polys, d: int = 2) -> PolyExpr:
    """``E^j = V_j^s prod_{k != j} Omega^{(j,k)} V_k^s Omega^{(j,k)} ~ V_j^{ns}``.

    ``swap_polys`` maps party pairs to two-party SWAP polynomials over an
    alphabet whose letter 0 is ``V``, or is one polynomial used for every
    pair. Parties are 0-based. Bystanders of each swap are padded with a
    central polynomial of the swap's degree, so every party ends with degree
    ``s + 2 (n-1) deg(Omega)``.
    """
    if s < 0:
        raise ValueError("s must be >= 0")
    n_vars = _first_swap(swap_polys).n_vars if n > 1 else 2
    if s == 0:
        if n == 1:
            raise ValueError("n=1, s=0 is the empty polynomial")
        local = _empty_local(n_vars)
    else:
        local = Leaf(TensorPoly.power(0, s, n_vars))
    return _compose(n, j, swap_polys, local, d)


def _empty_local(n_vars: int) -> PolyExpr:
    # degree-0 single-party identity
    return Leaf(TensorPoly({((),): 1.0}, n_vars))


def compose_fast_rewind(n: int, j: int, s: int, swap_polys, rewinder, d: int = 2) -> PolyExpr:
    """``D^j = R_j prod_{k != j} Omega^{(j,k)} R_k Omega^{(j,k)} ~ V_j^{-ns}``.

    ``rewinder`` is a single-party polynomial proportional to ``V^{-s}``
    over the same alphabet as the SWAP polynomials.
    """
    r = as_expr(rewinder)
    if r.n_parties != 1:
        raise ValueError("rewinder must be single-party")
    if n > 1 and r.n_vars != _first_swap(swap_polys).n_vars:
        raise ValueError("rewinder and SWAP polynomials use different alphabets")
    return _compose(n, j, swap_polys, r, d)

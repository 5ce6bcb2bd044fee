"""Homogeneous tensor polynomials in noncommuting matrix variables.

A :class:`TensorPoly` is a finite sum ``sum_t c_t X_{w_t^1} (x) ... (x) X_{w_t^n}``
where each ``w_t^k`` is a word over ``n_vars`` letters. Letters are stored in
matrix-product order: the word ``(0, 1)`` means ``X_0 @ X_1``, so the
rightmost letter acts first in time. Letter 0 is the free-evolution
variable ``V`` by convention.

:class:`PolyExpr` trees compose polynomials lazily (products, embeddings into
larger party sets, substitutions, sums) and are evaluated bottom-up without
expanding the terms.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .numkit import batched_kron

__all__ = [
    "Word",
    "PolyFormatError",
    "TensorPoly",
    "PolyExpr",
    "Leaf",
    "Product",
    "Embed",
    "Substitute",
    "Scalar",
    "Sum",
    "as_expr",
    "poly_mul",
    "tensor_embed",
    "substitute",
    "strip_suffix",
    "evaluate",
    "column_profile",
    "serialize",
    "parse",
    "expr_to_json",
    "expr_from_json",
    "default_var_names",
    "load_omega",
    "register_evaluator",
]

Word = tuple[int, ...]

DEFAULT_EXPAND_LIMIT = 10**6


class PolyFormatError(ValueError):
    """Malformed polynomial document; ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def default_var_names(n_vars: int) -> list[str]:
    if n_vars == 1:
        return ["V"]
    if n_vars == 2:
        return ["V", "W"]
    return ["V"] + [f"W{i}" for i in range(1, n_vars)]


def _identity_like(assignment: np.ndarray) -> np.ndarray:
    d = assignment.shape[-1]
    return np.broadcast_to(np.eye(d, dtype=complex), assignment.shape[1:]).copy()


def _prepare_assignment(assignment, n_vars: int) -> np.ndarray:
    if isinstance(assignment, np.ndarray) and assignment.dtype != object:
        arr = np.asarray(assignment, dtype=complex)
    else:
        mats = [np.asarray(a, dtype=complex) for a in assignment]
        shape = np.broadcast_shapes(*(m.shape for m in mats))
        arr = np.stack([np.broadcast_to(m, shape) for m in mats])
    if arr.shape[0] != n_vars:
        raise ValueError(f"assignment has {arr.shape[0]} matrices, polynomial has {n_vars} variables")
    if arr.ndim < 3 or arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"assignment matrices must be square, got shape {arr.shape[1:]}")
    return arr


class _WordCache:
    """Memoised products of assignment matrices keyed by word."""

    def __init__(self, assignment: np.ndarray):
        self.x = assignment
        self.cache: dict[Word, np.ndarray] = {(): _identity_like(assignment)}

    def __call__(self, word: Word) -> np.ndarray:
        hit = self.cache.get(word)
        if hit is not None:
            return hit
        # extend the longest cached prefix
        k = len(word) - 1
        while word[:k] not in self.cache:
            k -= 1
        acc = self.cache[word[:k]]
        for j in range(k, len(word)):
            acc = acc @ self.x[word[j]]
            self.cache[word[: j + 1]] = acc
        return acc


class TensorPoly:
    """Homogeneous polynomial with per-party homogeneity.

    ``terms`` maps a tuple of ``n_parties`` words to a complex coefficient.
    Duplicate word tuples are merged and exact zeros dropped. Instances are
    immutable.
    """

    __slots__ = ("n_parties", "n_vars", "var_names", "degrees", "_terms", "_hash")

    def __init__(self, terms: Mapping[Sequence[Sequence[int]], complex] | Iterable[tuple[complex, Sequence[Sequence[int]]]],
                 n_vars: int, var_names: Sequence[str] | None = None,
                 n_parties: int | None = None):
        merged: dict[tuple[Word, ...], complex] = defaultdict(complex)
        items = terms.items() if isinstance(terms, Mapping) else ((w, c) for c, w in terms)
        for words, coeff in items:
            key = tuple(tuple(int(x) for x in w) for w in words)
            merged[key] += complex(coeff)
        clean = {k: v for k, v in merged.items() if v != 0}
        if not clean:
            raise ValueError("polynomial has no nonzero terms")
        n_vars = int(n_vars)
        first = next(iter(clean))
        if n_parties is None:
            n_parties = len(first)
        degrees = tuple(len(w) for w in first)
        for key in clean:
            if len(key) != n_parties:
                raise ValueError(f"term {key} has {len(key)} parties, expected {n_parties}")
            if tuple(len(w) for w in key) != degrees:
                raise ValueError(f"term {key} breaks per-party homogeneity (degrees {degrees})")
            for w in key:
                for x in w:
                    if not 0 <= x < n_vars:
                        raise ValueError(f"letter {x} out of range for {n_vars} variables")
        names = list(var_names) if var_names is not None else default_var_names(n_vars)
        if len(names) != n_vars:
            raise ValueError("var_names length does not match n_vars")
        object.__setattr__(self, "n_parties", int(n_parties))
        object.__setattr__(self, "n_vars", n_vars)
        object.__setattr__(self, "var_names", tuple(names))
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "_terms", dict(sorted(clean.items())))
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, key, value):
        raise AttributeError("TensorPoly is immutable")

    # -- constructors -----------------------------------------------------

    @classmethod
    def monomial(cls, words: Sequence[Sequence[int]], n_vars: int, coeff: complex = 1.0,
                 var_names: Sequence[str] | None = None) -> "TensorPoly":
        return cls({tuple(map(tuple, words)): coeff}, n_vars, var_names)

    @classmethod
    def word(cls, letters: Sequence[int], n_vars: int, coeff: complex = 1.0) -> "TensorPoly":
        return cls.monomial([tuple(letters)], n_vars, coeff)

    @classmethod
    def power(cls, letter: int, s: int, n_vars: int) -> "TensorPoly":
        return cls.monomial([(letter,) * s], n_vars)

    @classmethod
    def commutator(cls, a: int, b: int, n_vars: int) -> "TensorPoly":
        """``[X_a, X_b] = X_a X_b - X_b X_a`` (single party, degree 2)."""
        return cls({((a, b),): 1.0, ((b, a),): -1.0}, n_vars)

    # -- basic accessors --------------------------------------------------

    @property
    def terms(self) -> dict[tuple[Word, ...], complex]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorPoly):
            return NotImplemented
        return (self.n_parties == other.n_parties and self.n_vars == other.n_vars
                and self._terms == other._terms)

    def __hash__(self):
        if self._hash is None:
            object.__setattr__(self, "_hash", hash((self.n_parties, self.n_vars,
                                                    tuple(self._terms.items()))))
        return self._hash

    def __repr__(self) -> str:
        return (f"TensorPoly(n_parties={self.n_parties}, n_vars={self.n_vars}, "
                f"degrees={list(self.degrees)}, terms={len(self)})")

    def __str__(self) -> str:
        parts = []
        for words, c in self._terms.items():
            mono = " (x) ".join("".join(self.var_names[x] for x in w) or "I" for w in words)
            parts.append(f"({c.real:+.6g}{c.imag:+.6g}j) {mono}")
        return "\n".join(parts)

    def coefficient_norm(self) -> float:
        return float(np.sqrt(sum(abs(c) ** 2 for c in self._terms.values())))

    def coefficient_vector(self) -> np.ndarray:
        return np.array(list(self._terms.values()), dtype=complex)

    def letter_counts(self) -> np.ndarray | None:
        """``(n_parties, n_vars)`` letter counts if identical across terms."""
        counts = None
        for words in self._terms:
            c = np.array([np.bincount(np.asarray(w, dtype=int), minlength=self.n_vars)
                          if w else np.zeros(self.n_vars, dtype=int) for w in words])
            if counts is None:
                counts = c
            elif not np.array_equal(c, counts):
                return None
        return counts

    def allclose(self, other: "TensorPoly", atol: float = 1e-12) -> bool:
        keys = set(self._terms) | set(other._terms)
        return all(abs(self._terms.get(k, 0) - other._terms.get(k, 0)) <= atol for k in keys)

    # -- algebra ----------------------------------------------------------

    def _like(self, terms, n_vars=None, n_parties=None) -> "TensorPoly":
        nv = self.n_vars if n_vars is None else n_vars
        names = self.var_names if nv == self.n_vars else None
        return TensorPoly(terms, nv, names, n_parties=n_parties)

    def scaled(self, c: complex) -> "TensorPoly":
        return self._like({k: c * v for k, v in self._terms.items()})

    def __neg__(self) -> "TensorPoly":
        return self.scaled(-1.0)

    def __rmul__(self, c):
        if isinstance(c, (int, float, complex, np.number)):
            return self.scaled(c)
        return NotImplemented

    def __add__(self, other: "TensorPoly") -> "TensorPoly":
        if not isinstance(other, TensorPoly):
            return NotImplemented
        self._check_compatible(other)
        merged = dict(self._terms)
        for k, v in other._terms.items():
            merged[k] = merged.get(k, 0) + v
        return self._like(merged)

    def __sub__(self, other: "TensorPoly") -> "TensorPoly":
        return self + (-other)

    def __matmul__(self, other: "TensorPoly") -> "TensorPoly":
        """Expanded matrix product; per-party words concatenate."""
        if not isinstance(other, TensorPoly):
            return NotImplemented
        self._check_compatible(other, same_degree=False)
        out: dict = defaultdict(complex)
        for ka, va in self._terms.items():
            for kb, vb in other._terms.items():
                out[tuple(a + b for a, b in zip(ka, kb))] += va * vb
        return self._like(out)

    def __pow__(self, k: int) -> "TensorPoly":
        if k < 1:
            raise ValueError("only positive powers are defined")
        out = self
        for _ in range(k - 1):
            out = out @ self
        return out

    def tensor(self, other: "TensorPoly") -> "TensorPoly":
        """Kronecker composition: parties of ``other`` appended after ours."""
        if self.n_vars != other.n_vars:
            raise ValueError("variable count mismatch")
        out = {ka + kb: va * vb for ka in self._terms for kb in other._terms
               for va, vb in [(self._terms[ka], other._terms[kb])]}
        return self._like(out, n_parties=self.n_parties + other.n_parties)

    def _check_compatible(self, other: "TensorPoly", same_degree: bool = True):
        if self.n_parties != other.n_parties or self.n_vars != other.n_vars:
            raise ValueError("party/variable mismatch: "
                             f"({self.n_parties}, {self.n_vars}) vs ({other.n_parties}, {other.n_vars})")
        if same_degree and self.degrees != other.degrees:
            raise ValueError(f"degree mismatch {self.degrees} vs {other.degrees}")

    def with_vars(self, n_vars: int, var_names: Sequence[str] | None = None) -> "TensorPoly":
        """Same terms over a larger alphabet."""
        if n_vars < self.n_vars:
            raise ValueError("cannot shrink the alphabet")
        return TensorPoly(self._terms, n_vars, var_names)

    def map_letters(self, mapping: Sequence[Sequence[int]], n_vars: int) -> "TensorPoly":
        """Replace every letter ``x`` by the word ``mapping[x]`` (all parties)."""
        out: dict = defaultdict(complex)
        for words, c in self._terms.items():
            out[tuple(tuple(y for x in w for y in mapping[x]) for w in words)] += c
        return TensorPoly(out, n_vars)

    def substitute(self, var: int, replacement: Sequence[int]) -> "TensorPoly":
        """Replace letter ``var`` by ``replacement`` in every word."""
        replacement = tuple(replacement)
        if not replacement:
            raise ValueError("replacement word must be nonempty")
        mapping = [replacement if x == var else (x,) for x in range(self.n_vars)]
        return TensorPoly(self.map_letters(mapping, self.n_vars)._terms, self.n_vars, self.var_names)

    def strip_suffix(self, letter: int, s: int, party: int = 0) -> "TensorPoly":
        """Remove ``s`` trailing copies of ``letter`` from every word of ``party``.

        Raises ValueError naming the first term whose word lacks the suffix.
        """
        suffix = (letter,) * s
        out = {}
        for words, c in self._terms.items():
            w = words[party]
            if len(w) < s or (s and w[-s:] != suffix):
                raise ValueError(f"term {words} (coeff {c}) does not end with {s} copies of letter {letter}")
            new = list(words)
            new[party] = w[: len(w) - s]
            out[tuple(new)] = c
        return self._like(out)

    def reversed_words(self) -> "TensorPoly":
        return self._like({tuple(w[::-1] for w in k): v for k, v in self._terms.items()})

    def max_normalized(self) -> "TensorPoly":
        m = max(abs(c) for c in self._terms.values())
        return self.scaled(1.0 / m)

    def unit_normalized(self) -> "TensorPoly":
        return self.scaled(1.0 / self.coefficient_norm())

    def pruned(self, rel_tol: float = 1e-9) -> "TensorPoly":
        m = max(abs(c) for c in self._terms.values())
        return self._like({k: v for k, v in self._terms.items() if abs(v) > rel_tol * m})

    # -- evaluation -------------------------------------------------------

    def evaluate(self, assignment) -> np.ndarray:
        x = _prepare_assignment(assignment, self.n_vars)
        return self._eval_array(x)

    def _eval_array(self, x: np.ndarray) -> np.ndarray:
        prod = _WordCache(x)
        d = x.shape[-1]
        out = None
        for words, c in self._terms.items():
            m = prod(words[0])
            for w in words[1:]:
                m = batched_kron(m, prod(w))
            out = c * m if out is None else out + c * m
        if self.n_parties == 0:
            out = np.broadcast_to(np.ones((1, 1), dtype=complex) * out, x.shape[1:-2] + (1, 1))
        assert out.shape[-1] == d ** self.n_parties
        return out

    def column_profile(self) -> list[list[frozenset[int]]]:
        """Per party, per position: the set of letters occurring there."""
        cols = [[set() for _ in range(m)] for m in self.degrees]
        for words in self._terms:
            for k, w in enumerate(words):
                for i, x in enumerate(w):
                    cols[k][i].add(x)
        return [[frozenset(s) for s in party] for party in cols]

    # -- serialisation ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "n_parties": self.n_parties,
            "n_vars": self.n_vars,
            "var_names": list(self.var_names),
            "degrees": list(self.degrees),
            "terms": [{"re": c.real, "im": c.imag, "words": [list(w) for w in words]}
                      for words, c in self._terms.items()],
        }

    @classmethod
    def from_json(cls, obj, path: str = "$") -> "TensorPoly":
        if not isinstance(obj, dict):
            raise PolyFormatError("expected an object", path)
        for key in ("n_parties", "n_vars", "degrees", "terms"):
            if key not in obj:
                raise PolyFormatError(f"missing field {key!r}", path)
        n_parties, n_vars = obj["n_parties"], obj["n_vars"]
        if not isinstance(n_parties, int) or n_parties < 0:
            raise PolyFormatError("n_parties must be a non-negative integer", f"{path}.n_parties")
        if not isinstance(n_vars, int) or n_vars < 1:
            raise PolyFormatError("n_vars must be a positive integer", f"{path}.n_vars")
        degrees = obj["degrees"]
        if not isinstance(degrees, list) or len(degrees) != n_parties:
            raise PolyFormatError("degrees must list one degree per party", f"{path}.degrees")
        names = obj.get("var_names")
        if names is not None and (not isinstance(names, list) or len(names) != n_vars):
            raise PolyFormatError("var_names must have n_vars entries", f"{path}.var_names")
        terms = obj["terms"]
        if not isinstance(terms, list) or not terms:
            raise PolyFormatError("terms must be a nonempty list", f"{path}.terms")
        parsed = []
        for i, t in enumerate(terms):
            tp = f"{path}.terms[{i}]"
            if not isinstance(t, dict) or "words" not in t:
                raise PolyFormatError("term needs 'words'", tp)
            try:
                c = complex(float(t.get("re", 0.0)), float(t.get("im", 0.0)))
            except (TypeError, ValueError):
                raise PolyFormatError("coefficient parts must be numbers", tp) from None
            words = t["words"]
            if not isinstance(words, list) or len(words) != n_parties:
                raise PolyFormatError(f"expected {n_parties} words", f"{tp}.words")
            for k, w in enumerate(words):
                wp = f"{tp}.words[{k}]"
                if not isinstance(w, list):
                    raise PolyFormatError("word must be a list of letters", wp)
                if len(w) != degrees[k]:
                    raise PolyFormatError(f"word length {len(w)} != declared degree {degrees[k]}", wp)
                for j, x in enumerate(w):
                    if not isinstance(x, int) or isinstance(x, bool) or not 0 <= x < n_vars:
                        raise PolyFormatError(f"invalid letter {x!r}", f"{wp}[{j}]")
            parsed.append((c, words))
        try:
            return cls(parsed, n_vars, names, n_parties=n_parties)
        except ValueError as exc:
            raise PolyFormatError(str(exc), path) from None


# ---------------------------------------------------------------------------
# lazy expressions


class PolyExpr:
    """Base class of lazily composed polynomial expressions.

    Subclasses define ``n_parties``, ``n_vars``, ``degrees`` and
    ``letter_counts`` (``(n_parties, n_vars)`` array or None when it varies
    across terms) at construction time.
    """

    n_parties: int
    n_vars: int
    degrees: tuple[int, ...]
    letter_counts: np.ndarray | None

    def children(self) -> tuple["PolyExpr", ...]:
        return ()

    def evaluate(self, assignment) -> np.ndarray:
        x = _prepare_assignment(assignment, self.n_vars)
        return self._eval(x, {})

    def _eval(self, x: np.ndarray, memo: dict) -> np.ndarray:
        key = id(self)
        if key not in memo:
            memo[key] = self._compute(x, memo)
        return memo[key]

    def _compute(self, x, memo):
        raise NotImplementedError

    def column_profile(self) -> list[list[frozenset[int]]]:
        raise NotImplementedError

    def expand(self, limit: int = DEFAULT_EXPAND_LIMIT) -> TensorPoly:
        raise NotImplementedError

    def __matmul__(self, other):
        return poly_mul(self, other)

    def __rmatmul__(self, other):
        return poly_mul(other, self)

    def __add__(self, other):
        return Sum([self, as_expr(other)])

    def __sub__(self, other):
        return Sum([self, Scalar(-1.0, as_expr(other))])

    def __rmul__(self, c):
        if isinstance(c, (int, float, complex, np.number)):
            return Scalar(c, self)
        return NotImplemented

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n_parties={self.n_parties}, degrees={list(self.degrees)})"


def _guard(count: int, limit: int):
    if count > limit:
        raise OverflowError(f"expansion would produce ~{count} terms (limit {limit})")


# Closed-form evaluators for leaves whose word sums cancel badly in floating
# point. Each maps a stacked assignment to the same values as the word sum.
LEAF_EVALUATORS: dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def register_evaluator(name: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
    LEAF_EVALUATORS[name] = fn


class Leaf(PolyExpr):
    """A concrete polynomial.

    ``evaluator`` optionally names an entry of ``LEAF_EVALUATORS`` used in
    place of the term-by-term sum; it must agree with the term sum exactly
    in exact arithmetic.
    """

    def __init__(self, poly: TensorPoly, evaluator: str | None = None):
        if evaluator is not None and evaluator not in LEAF_EVALUATORS:
            raise KeyError(f"unknown leaf evaluator {evaluator!r}")
        self.poly = poly
        self.evaluator = evaluator
        self.n_parties = poly.n_parties
        self.n_vars = poly.n_vars
        self.degrees = poly.degrees
        self.letter_counts = poly.letter_counts()

    def _compute(self, x, memo):
        if self.evaluator is not None:
            return LEAF_EVALUATORS[self.evaluator](x)
        return self.poly._eval_array(x)

    def column_profile(self):
        return self.poly.column_profile()

    def expand(self, limit=DEFAULT_EXPAND_LIMIT):
        _guard(len(self.poly), limit)
        return self.poly


def as_expr(p) -> PolyExpr:
    if isinstance(p, PolyExpr):
        return p
    if isinstance(p, TensorPoly):
        return Leaf(p)
    raise TypeError(f"cannot treat {type(p).__name__} as a polynomial")


class Product(PolyExpr):
    """Matrix product of the factors, left to right."""

    def __init__(self, factors: Sequence[PolyExpr | TensorPoly]):
        factors = [as_expr(f) for f in factors]
        if not factors:
            raise ValueError("empty product")
        first = factors[0]
        for f in factors[1:]:
            if f.n_parties != first.n_parties or f.n_vars != first.n_vars:
                raise ValueError("party/variable mismatch in product")
        self.factors = tuple(factors)
        self.n_parties = first.n_parties
        self.n_vars = first.n_vars
        self.degrees = tuple(int(sum(f.degrees[k] for f in factors)) for k in range(self.n_parties))
        counts = [f.letter_counts for f in factors]
        self.letter_counts = None if any(c is None for c in counts) else sum(counts)

    def children(self):
        return self.factors

    def _compute(self, x, memo):
        out = self.factors[0]._eval(x, memo)
        for f in self.factors[1:]:
            out = out @ f._eval(x, memo)
        return out

    def column_profile(self):
        profs = [f.column_profile() for f in self.factors]
        return [[c for p in profs for c in p[k]] for k in range(self.n_parties)]

    def expand(self, limit=DEFAULT_EXPAND_LIMIT):
        polys = [f.expand(limit) for f in self.factors]
        _guard(int(np.prod([len(p) for p in polys], dtype=float)), limit)
        out = polys[0]
        for p in polys[1:]:
            out = out @ p
        return out


class Scalar(PolyExpr):
    def __init__(self, c: complex, child):
        self.c = complex(c)
        self.child = as_expr(child)
        self.n_parties = self.child.n_parties
        self.n_vars = self.child.n_vars
        self.degrees = self.child.degrees
        self.letter_counts = self.child.letter_counts

    def children(self):
        return (self.child,)

    def _compute(self, x, memo):
        return self.c * self.child._eval(x, memo)

    def column_profile(self):
        return self.child.column_profile()

    def expand(self, limit=DEFAULT_EXPAND_LIMIT):
        return self.child.expand(limit).scaled(self.c)


class Sum(PolyExpr):
    def __init__(self, terms: Sequence[PolyExpr | TensorPoly]):
        terms = [as_expr(t) for t in terms]
        if not terms:
            raise ValueError("empty sum")
        first = terms[0]
        for t in terms[1:]:
            if (t.n_parties, t.n_vars) != (first.n_parties, first.n_vars):
                raise ValueError("party/variable mismatch in sum")
            if t.degrees != first.degrees:
                raise ValueError(f"sum of different degrees {first.degrees} vs {t.degrees}")
        self.terms = tuple(terms)
        self.n_parties = first.n_parties
        self.n_vars = first.n_vars
        self.degrees = first.degrees
        counts = [t.letter_counts for t in terms]
        same = all(c is not None and np.array_equal(c, counts[0]) for c in counts)
        self.letter_counts = counts[0] if same else None

    def children(self):
        return self.terms

    def _compute(self, x, memo):
        out = self.terms[0]._eval(x, memo)
        for t in self.terms[1:]:
            out = out + t._eval(x, memo)
        return out

    def column_profile(self):
        profs = [t.column_profile() for t in self.terms]
        return [[frozenset().union(*(p[k][i] for p in profs)) for i in range(self.degrees[k])]
                for k in range(self.n_parties)]

    def expand(self, limit=DEFAULT_EXPAND_LIMIT):
        polys = [t.expand(limit) for t in self.terms]
        _guard(sum(len(p) for p in polys), limit)
        out = polys[0]
        for p in polys[1:]:
            out = out + p
        return out


class Embed(PolyExpr):
    """Act as ``child`` on ``targets`` and as ``filler`` on the other parties.

    ``filler=None`` is the identity (degree 0). A single-party filler is
    repeated on every bystander party with the same variables.
    """

    def __init__(self, child, n_total: int, targets: Sequence[int], filler=None):
        child = as_expr(child)
        targets = tuple(int(t) for t in targets)
        if len(targets) != child.n_parties or len(set(targets)) != len(targets):
            raise ValueError(f"need {child.n_parties} distinct target parties, got {targets}")
        if any(not 0 <= t < n_total for t in targets):
            raise ValueError(f"target parties {targets} out of range for {n_total}")
        if filler is not None:
            filler = as_expr(filler)
            if filler.n_parties != 1:
                raise ValueError("filler polynomial must be single-party")
            if filler.n_vars != child.n_vars:
                raise ValueError("filler uses a different alphabet")
        self.child = child
        self.filler = filler
        self.n_total = int(n_total)
        self.targets = targets
        self.others = tuple(k for k in range(n_total) if k not in targets)
        self.n_parties = self.n_total
        self.n_vars = child.n_vars
        fill_deg = 0 if filler is None else filler.degrees[0]
        degs = [fill_deg] * n_total
        for i, t in enumerate(targets):
            degs[t] = child.degrees[i]
        self.degrees = tuple(degs)
        if child.letter_counts is None or (filler is not None and filler.letter_counts is None):
            self.letter_counts = None
        else:
            lc = np.zeros((n_total, self.n_vars), dtype=int)
            for i, t in enumerate(targets):
                lc[t] = child.letter_counts[i]
            if filler is not None:
                for k in self.others:
                    lc[k] = filler.letter_counts[0]
            self.letter_counts = lc

    def children(self):
        return (self.child,) if self.filler is None else (self.child, self.filler)

    def _compute(self, x, memo):
        d = x.shape[-1]
        m = self.child._eval(x, memo)
        if self.others:
            f = (_identity_like(x) if self.filler is None else self.filler._eval(x, memo))
            for _ in self.others:
                m = batched_kron(m, f)
        order = self.targets + self.others  # current slot -> party
        if order == tuple(range(self.n_total)):
            return m
        n = self.n_total
        batch = m.shape[:-2]
        t = m.reshape(batch + (d,) * (2 * n))
        nb = len(batch)
        inv = [order.index(p) for p in range(n)]
        axes = list(range(nb)) + [nb + i for i in inv] + [nb + n + i for i in inv]
        return t.transpose(axes).reshape(batch + (d**n, d**n))

    def column_profile(self):
        cp = self.child.column_profile()
        fp = [] if self.filler is None else self.filler.column_profile()[0]
        out = [list(fp) for _ in range(self.n_total)]
        for i, t in enumerate(self.targets):
            out[t] = cp[i]
        return out

    def expand(self, limit=DEFAULT_EXPAND_LIMIT):
        child = self.child.expand(limit)
        fill = None if self.filler is None else self.filler.expand(limit)
        nf = 1 if fill is None else len(fill)
        _guard(len(child) * nf ** len(self.others), limit)
        fill_terms = [((), 1.0)] if fill is None else [(w[0], c) for w, c in fill.items()]
        out: dict = defaultdict(complex)
        for words, c in child.items():
            for combo in itertools.product(fill_terms, repeat=len(self.others)):
                full = [()] * self.n_total
                coeff = c
                for i, t in enumerate(self.targets):
                    full[t] = words[i]
                for k, (w, cf) in zip(self.others, combo):
                    full[k] = w
                    coeff *= cf
                out[tuple(full)] += coeff
        return TensorPoly(out, self.n_vars, child.var_names, n_parties=self.n_total)


class Substitute(PolyExpr):
    """Evaluate ``child`` on the evaluations of ``replacements``.

    Either every replacement is single-party (the result keeps the child's
    parties), or the child is single-party and all replacements share a
    party count ``k`` (the result has ``k`` parties). All replacements share
    one outer alphabet.
    """

    def __init__(self, child, replacements: Sequence):
        child = as_expr(child)
        reps = [as_expr(r) for r in replacements]
        if len(reps) != child.n_vars:
            raise ValueError(f"need {child.n_vars} replacements, got {len(reps)}")
        n_vars = {r.n_vars for r in reps}
        if len(n_vars) != 1:
            raise ValueError("replacements use different alphabets")
        rep_parties = {r.n_parties for r in reps}
        if rep_parties == {1}:
            out_parties = child.n_parties
            single_rep = True
        elif child.n_parties == 1 and len(rep_parties) == 1:
            out_parties = rep_parties.pop()
            single_rep = False
        else:
            raise ValueError("unsupported substitution shape")
        self.child = child
        self.replacements = tuple(reps)
        self.n_vars = n_vars.pop()
        self.n_parties = out_parties
        rep_deg = np.array([r.degrees for r in reps])  # (child vars, rep parties)
        cc = child.letter_counts
        if single_rep:
            if cc is not None:
                self.degrees = tuple(int(x) for x in cc @ rep_deg[:, 0])
            elif np.all(rep_deg == rep_deg[0]):
                self.degrees = tuple(int(m * rep_deg[0, 0]) for m in child.degrees)
            else:
                raise ValueError("substitution breaks homogeneity")
        else:
            if cc is not None:
                self.degrees = tuple(int(x) for x in cc[0] @ rep_deg)
            elif np.all(rep_deg == rep_deg[0]):
                self.degrees = tuple(int(child.degrees[0] * x) for x in rep_deg[0])
            else:
                raise ValueError("substitution breaks homogeneity")
        rep_counts = [r.letter_counts for r in reps]
        if cc is None or any(c is None for c in rep_counts):
            self.letter_counts = None
        elif single_rep:
            rc = np.array([c[0] for c in rep_counts])  # (child vars, outer vars)
            self.letter_counts = cc @ rc
        else:
            rc = np.array(rep_counts)  # (child vars, parties, outer vars)
            self.letter_counts = np.einsum("v,vpo->po", cc[0], rc)

    def children(self):
        return (self.child,) + self.replacements

    def _compute(self, x, memo):
        vals = [r._eval(x, memo) for r in self.replacements]
        shape = np.broadcast_shapes(*(v.shape for v in vals))
        inner = np.stack([np.broadcast_to(v, shape) for v in vals])
        return self.child._eval(inner, {})

    def column_profile(self):
        rprof = [r.column_profile() for r in self.replacements]
        rdeg = [r.degrees for r in self.replacements]
        cprof = self.child.column_profile()
        single_rep = all(r.n_parties == 1 for r in self.replacements)
        aligned = all(len({rdeg[v] for v in col}) == 1 for party in cprof for col in party)
        if aligned:
            if single_rep:
                return [[c for col in cprof[k] for c in _union_profiles([rprof[v][0] for v in col])]
                        for k in range(self.n_parties)]
            return [[c for col in cprof[0] for c in _union_profiles([rprof[v][q] for v in col])]
                    for q in range(self.n_parties)]
        # misaligned columns: walk the child's terms
        child = self.child.expand()
        acc = None
        for words in child.terms:
            if single_rep:
                prof = [[c for x in w for c in rprof[x][0]] for w in words]
            else:
                prof = [[c for x in words[0] for c in rprof[x][q]] for q in range(self.n_parties)]
            acc = prof if acc is None else [[a | b for a, b in zip(pa, pb)] for pa, pb in zip(acc, prof)]
        return acc

    def expand(self, limit=DEFAULT_EXPAND_LIMIT):
        child = self.child.expand(limit)
        reps = [r.expand(limit) for r in self.replacements]
        est = sum(int(np.prod([len(reps[x]) for w in words for x in w], dtype=float))
                  for words in child.terms)
        _guard(est, limit)
        out: dict = defaultdict(complex)
        single_rep = all(r.n_parties == 1 for r in self.replacements)
        for words, c in child.items():
            if single_rep:
                flat = [x for w in words for x in w]
                lens = [len(w) for w in words]
                for combo in itertools.product(*(list(reps[x].items()) for x in flat)):
                    coeff = c
                    letters = []
                    for (rw, rc) in combo:
                        coeff *= rc
                        letters.append(rw[0])
                    full, pos = [], 0
                    for L in lens:
                        full.append(tuple(y for seg in letters[pos:pos + L] for y in seg))
                        pos += L
                    out[tuple(full)] += coeff
            else:
                for combo in itertools.product(*(list(reps[x].items()) for x in words[0])):
                    coeff = c
                    full = [()] * self.n_parties
                    for rw, rc in combo:
                        coeff *= rc
                        full = [a + b for a, b in zip(full, rw)]
                    out[tuple(full)] += coeff
        return TensorPoly(out, self.n_vars, reps[0].var_names, n_parties=self.n_parties)


def _union_profiles(profiles: list[list[frozenset[int]]]) -> list[frozenset[int]]:
    return [frozenset().union(*cols) for cols in zip(*profiles)]


# ---------------------------------------------------------------------------
# functional surface


def poly_mul(a, b) -> PolyExpr:
    """Lazy product ``a @ b``; per-party degrees add."""
    return Product([a, b])


def tensor_embed(p, n_total: int, target_parties: Sequence[int], filler=None) -> PolyExpr:
    return Embed(p, n_total, target_parties, filler)


def substitute(p: TensorPoly, var: int, replacement: Sequence[int]) -> TensorPoly:
    return p.substitute(var, replacement)


def strip_suffix(p: TensorPoly, letter: int, s: int) -> TensorPoly:
    return p.strip_suffix(letter, s)


def evaluate(p, assignment) -> np.ndarray:
    """Evaluate a polynomial or expression on ``assignment``.

    ``assignment`` holds one matrix per variable; matrices may carry leading
    batch axes, which broadcast. Returns an array of shape
    ``(..., d**n_parties, d**n_parties)``.
    """
    return p.evaluate(assignment)


def column_profile(p) -> list[list[frozenset[int]]]:
    return p.column_profile()


def serialize(p: TensorPoly) -> bytes:
    return json.dumps(p.to_json(), sort_keys=True, indent=1).encode()


def parse(data: bytes | str) -> TensorPoly:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise PolyFormatError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from None
    return TensorPoly.from_json(obj)


def expr_to_json(expr) -> dict:
    """Serialise a PolyExpr DAG; shared subtrees are stored once."""
    expr = as_expr(expr)
    ids: dict[int, int] = {}
    nodes: list[dict] = []

    def visit(node: PolyExpr) -> int:
        if id(node) in ids:
            return ids[id(node)]
        kids = [visit(c) for c in node.children()]
        if isinstance(node, Leaf):
            rec = {"kind": "leaf", "poly": node.poly.to_json()}
            if node.evaluator is not None:
                rec["evaluator"] = node.evaluator
        elif isinstance(node, Product):
            rec = {"kind": "product", "children": kids}
        elif isinstance(node, Sum):
            rec = {"kind": "sum", "children": kids}
        elif isinstance(node, Scalar):
            rec = {"kind": "scalar", "re": node.c.real, "im": node.c.imag, "child": kids[0]}
        elif isinstance(node, Embed):
            rec = {"kind": "tensor_embed", "child": kids[0], "n_total": node.n_total,
                   "targets": list(node.targets), "filler": kids[1] if len(kids) > 1 else None}
        elif isinstance(node, Substitute):
            rec = {"kind": "substitute", "child": kids[0], "replacements": kids[1:]}
        else:
            raise TypeError(f"unknown node {type(node).__name__}")
        rec["id"] = len(nodes)
        rec["degrees"] = list(node.degrees)
        nodes.append(rec)
        ids[id(node)] = rec["id"]
        return rec["id"]

    root = visit(expr)
    return {"format": "tempoly.polyexpr/1", "n_parties": expr.n_parties,
            "n_vars": expr.n_vars, "degrees": list(expr.degrees), "root": root, "nodes": nodes}


def expr_from_json(obj: dict) -> PolyExpr:
    if "terms" in obj:
        return Leaf(TensorPoly.from_json(obj))
    if obj.get("format") != "tempoly.polyexpr/1":
        raise PolyFormatError("unknown expression format", "$.format")
    built: dict[int, PolyExpr] = {}
    for i, rec in enumerate(obj["nodes"]):
        path = f"$.nodes[{i}]"
        kind = rec.get("kind")
        try:
            if kind == "leaf":
                ev = rec.get("evaluator")
                if ev is not None and ev not in LEAF_EVALUATORS:
                    # evaluators are registered by the module that builds them
                    from . import constructions  # noqa: F401
                if ev is not None and ev not in LEAF_EVALUATORS:
                    raise PolyFormatError(f"unknown evaluator {ev!r}", path)
                node = Leaf(TensorPoly.from_json(rec["poly"], f"{path}.poly"), ev)
            elif kind == "product":
                node = Product([built[c] for c in rec["children"]])
            elif kind == "sum":
                node = Sum([built[c] for c in rec["children"]])
            elif kind == "scalar":
                node = Scalar(complex(rec["re"], rec["im"]), built[rec["child"]])
            elif kind == "tensor_embed":
                filler = rec.get("filler")
                node = Embed(built[rec["child"]], rec["n_total"], rec["targets"],
                             None if filler is None else built[filler])
            elif kind == "substitute":
                node = Substitute(built[rec["child"]], [built[c] for c in rec["replacements"]])
            else:
                raise PolyFormatError(f"unknown node kind {kind!r}", path)
        except KeyError as exc:
            raise PolyFormatError(f"missing or dangling reference {exc}", path) from None
        built[rec["id"]] = node
    return built[obj["root"]]


# ---------------------------------------------------------------------------
# bundled fixtures


def _swap_check(p: TensorPoly, samples: int, seed: int) -> bool:
    from .numkit import RngStream, haar_unitary, proportionality, swap_operator

    rng = RngStream.named(seed, "fixture-check")
    x = haar_unitary(2, rng, size=(p.n_vars, samples))
    vals = p.evaluate(x) @ swap_operator(2)
    eye = np.eye(4, dtype=complex)
    for v in vals:
        c = proportionality(v, eye)
        if c is None or abs(c) < 1e-12:
            return False
    return True


def load_omega(path=None, samples: int = 20, seed: int = 0) -> TensorPoly:
    """Load the bundled 40-term degree-5 SWAP polynomial for qubits.

    The file is checked against SWAP on ``samples`` Haar draws. If the words
    as stored fail, the per-word reversal is tried; if that passes it is
    returned and ``order`` in the result metadata says so. Anything else is a
    ``PolyFormatError``.
    """
    if path is None:
        from importlib import resources

        raw = resources.files("tempoly").joinpath("data/omega_d2_m5.json").read_bytes()
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    p = parse(raw)
    if p.n_parties != 2 or p.n_vars != 2:
        raise PolyFormatError("expected a two-party, two-letter polynomial")
    if _swap_check(p, samples, seed):
        return p
    rev = p.reversed_words()
    if _swap_check(rev, samples, seed):
        return rev
    raise PolyFormatError("fixture is not proportional to SWAP in either letter order")

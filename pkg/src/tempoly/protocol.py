"""Scattering-experiment semantics of tensor polynomials.

A polynomial term ``g_w X_{w^1} (x) .. (x) X_{w^n}`` corresponds to one
branch of a register-controlled experiment: at chronological step ``t`` the
probe aimed at party ``k`` realises letter ``w^k[m - t]`` (words are stored
in product order, so the last letter acts first). Post-selecting the memory
on the coefficient vector leaves the systems in ``p(V, W) psi`` up to the
branch normalisation.

Two estimators of the same quantity live here: :func:`success_probability`
works with the polynomial directly, :func:`reference_simulate` builds the
memory, probe and system registers explicitly. They are mutual oracles.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ncpoly import Leaf, PolyExpr, PolyFormatError, TensorPoly, as_expr, expr_from_json, expr_to_json
from .numkit import RngStream, batched_kron, expm, ginibre, haar_unitary, matrix_from_json, random_state

__all__ = [
    "HamiltonianModel",
    "Segment",
    "ProtocolProgram",
    "SuccessEstimate",
    "derive_vw",
    "branch_normalisation",
    "success_probability",
    "run_program",
    "reference_simulate",
    "monte_carlo",
    "experiment_card",
    "random_model",
    "model_from_json",
    "model_to_json",
    "ModelSampler",
    "ReferenceGuardError",
    "run_program_operator",
    "program_to_json",
    "program_from_json",
    "compressed_rewind_program",
]

PROGRAM_FORMAT = "tempoly.program/1"

REFERENCE_GUARD = 1 << 24


class ReferenceGuardError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianModel:
    """System, probe and interaction Hamiltonians (hbar = 1) plus probe states."""

    d: int
    d_probe: int
    H0: np.ndarray
    HP: np.ndarray
    HI: np.ndarray
    phi_in: np.ndarray
    phi_out: np.ndarray
    dt: float

    def __post_init__(self):
        d, dp = self.d, self.d_probe
        shapes = {"H0": (d, d), "HP": (dp, dp), "HI": (d * dp, d * dp)}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        for name in ("phi_in", "phi_out"):
            arr = np.asarray(getattr(self, name), dtype=complex).reshape(-1)
            if arr.shape != (dp,):
                raise ValueError(f"{name} must have length {dp}")
            object.__setattr__(self, name, arr)
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def derive_vw(model: HamiltonianModel) -> tuple[np.ndarray, np.ndarray]:
    """``V = exp(-i H0 dt)`` and ``W = (I (x) <phi_out|) exp(-i H dt) (I (x) |phi_in>)``."""
    d, dp = model.d, model.d_probe
    v = expm(-1j * model.H0 * model.dt)
    h = np.kron(model.H0, np.eye(dp)) + np.kron(np.eye(d), model.HP) + model.HI
    u = expm(-1j * h * model.dt).reshape(d, dp, d, dp)
    w = np.einsum("q,aqbr,r->ab", model.phi_out.conj(), u, model.phi_in)
    return v, w


def random_model(d: int, d_probe: int, rng: RngStream | np.random.Generator, *, dt: float = 0.5,
                 coupling: float = 1.0) -> HamiltonianModel:
    """GUE-like Hermitian Hamiltonians and Haar-random probe states."""
    gen = rng.generator if isinstance(rng, RngStream) else rng

    def herm(k, scale=1.0):
        a = ginibre(k, k, gen)
        return scale * (a + a.conj().T) / 2

    return HamiltonianModel(d, d_probe, herm(d), herm(d_probe), herm(d * d_probe, coupling),
                            random_state(d_probe, gen), random_state(d_probe, gen), dt)


def model_to_json(model: HamiltonianModel) -> dict:
    from .numkit import matrix_to_json

    return {"d": model.d, "d_probe": model.d_probe, "dt": model.dt,
            "H0": matrix_to_json(model.H0), "HP": matrix_to_json(model.HP), "HI": matrix_to_json(model.HI),
            "phi_in": matrix_to_json(model.phi_in[:, None]), "phi_out": matrix_to_json(model.phi_out[:, None])}


def model_from_json(obj: dict) -> HamiltonianModel:
    return HamiltonianModel(int(obj["d"]), int(obj["d_probe"]), matrix_from_json(obj["H0"]),
                            matrix_from_json(obj["HP"]), matrix_from_json(obj["HI"]),
                            matrix_from_json(obj["phi_in"])[:, 0], matrix_from_json(obj["phi_out"])[:, 0],
                            float(obj["dt"]))


@dataclass(frozen=True)
class ModelSampler:
    """Distribution over models: either a fixed model or random GUE draws."""

    d: int
    d_probe: int = 2
    dt: float = 0.5
    coupling: float = 1.0
    fixed: HamiltonianModel | None = None

    def __call__(self, rng: RngStream | np.random.Generator) -> HamiltonianModel:
        if self.fixed is not None:
            return self.fixed
        return random_model(self.d, self.d_probe, rng, dt=self.dt, coupling=self.coupling)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSampler":
        if "H0" in obj:
            m = model_from_json(obj)
            return cls(m.d, m.d_probe, m.dt, fixed=m)
        return cls(int(obj["d"]), int(obj.get("d_probe", 2)), float(obj.get("dt", 0.5)),
                   float(obj.get("coupling", 1.0)))


# ---------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class Segment:
    """Either a polynomial application or ``steps`` of free evolution."""

    kind: str
    poly: PolyExpr | None = None
    branching: str = "canonical"
    steps: int = 0

    def __post_init__(self):
        if self.kind == "poly":
            if self.poly is None:
                raise ValueError("poly segment needs a polynomial")
            object.__setattr__(self, "poly", as_expr(self.poly))
            if self.branching not in ("canonical", "compressed"):
                raise ValueError("branching must be 'canonical' or 'compressed'")
            if len(set(self.poly.degrees)) != 1:
                raise ValueError(f"poly segment needs equal per-party degrees, got {self.poly.degrees}")
        elif self.kind == "free":
            if self.steps < 0:
                raise ValueError("free steps must be >= 0")
        else:
            raise ValueError(f"unknown segment kind {self.kind!r}")

    @classmethod
    def apply(cls, p, branching: str = "canonical") -> "Segment":
        return cls("poly", as_expr(p), branching)

    @classmethod
    def free(cls, steps: int) -> "Segment":
        return cls("free", steps=int(steps))

    @property
    def duration_steps(self) -> int:
        return self.poly.degrees[0] if self.kind == "poly" else self.steps


@dataclass(frozen=True)
class ProtocolProgram:
    """Segments in chronological order (the first segment acts first)."""

    n_parties: int
    d: int
    segments: tuple[Segment, ...]
    dt: float = 1.0
    n_vars: int = 2

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for seg in self.segments:
            if seg.kind == "poly":
                if seg.poly.n_parties != self.n_parties:
                    raise ValueError("segment party count differs from the program")
                if seg.poly.n_vars != self.n_vars:
                    raise ValueError("segment alphabet differs from the program")

    @property
    def total_steps(self) -> int:
        return sum(seg.duration_steps for seg in self.segments)

    @property
    def duration(self) -> float:
        return self.dt * self.total_steps


def program_to_json(prog: ProtocolProgram) -> dict:
    segs = []
    for seg in prog.segments:
        if seg.kind == "free":
            segs.append({"kind": "free", "steps": seg.steps})
        else:
            segs.append({"kind": "poly", "branching": seg.branching, "poly": expr_to_json(seg.poly)})
    return {"format": PROGRAM_FORMAT, "n_parties": prog.n_parties, "d": prog.d, "dt": prog.dt,
            "n_vars": prog.n_vars, "segments": segs}


def program_from_json(obj: dict) -> ProtocolProgram:
    if not isinstance(obj, dict) or obj.get("format") != PROGRAM_FORMAT:
        raise PolyFormatError(f"expected format {PROGRAM_FORMAT!r}", "$.format")
    segs = []
    for i, rec in enumerate(obj.get("segments", [])):
        kind = rec.get("kind")
        if kind == "free":
            segs.append(Segment.free(int(rec["steps"])))
        elif kind == "poly":
            segs.append(Segment.apply(expr_from_json(rec["poly"]), rec.get("branching", "canonical")))
        else:
            raise PolyFormatError(f"unknown segment kind {kind!r}", f"$.segments[{i}].kind")
    return ProtocolProgram(int(obj["n_parties"]), int(obj["d"]), tuple(segs), float(obj.get("dt", 1.0)),
                           int(obj.get("n_vars", 2)))


def compressed_rewind_program(s: int, dt: float = 1.0) -> ProtocolProgram:
    """Qubit rewinding as ``[W,V]/sqrt2 ; free s ; [W,V]/sqrt2``.

    The segments multiply to the canonical rewinding polynomial, but the
    ``s`` middle steps need no probes.
    """
    c = TensorPoly.commutator(1, 0, 2).scaled(1 / math.sqrt(2))
    return ProtocolProgram(1, 2, (Segment.apply(c), Segment.free(s), Segment.apply(c)), dt)


def branch_normalisation(p, mode: str = "canonical") -> float:
    """Product of per-column branch factors ``b_col``.

    Canonical: every party-position costs ``D`` (the alphabet size).
    Compressed: a column costs the number of letters occurring there, and
    a single-letter column costs nothing.
    """
    p = as_expr(p)
    if mode == "canonical":
        return float(p.n_vars) ** sum(p.degrees)
    if mode != "compressed":
        raise ValueError("mode must be 'canonical' or 'compressed'")
    out = 1.0
    for party in p.column_profile():
        for col in party:
            if len(col) > 1:
                out *= len(col)
    return out


def _coefficient_norm_sq(p) -> float:
    if isinstance(p, Leaf):
        return p.poly.coefficient_norm() ** 2
    if isinstance(p, TensorPoly):
        return p.coefficient_norm() ** 2
    return as_expr(p).expand().coefficient_norm() ** 2


def success_probability(p, assignment, psi, mode: str = "canonical", *,
                        normalize_coefficients: bool = False):
    """``(prob, state)`` for applying ``p`` to ``psi``.

    ``prob = ||p(X) psi||^2 / prod b_col`` (see :func:`branch_normalisation`)
    and ``state`` is the normalised final state, or None when it vanishes.
    Batched: leading axes of ``assignment`` and ``psi`` broadcast, in which
    case ``prob`` is an array and ``state`` has matching leading axes.

    The formula assumes the memory is post-selected on the unnormalised
    coefficient vector. With ``normalize_coefficients`` the result is
    additionally divided by ``||g||^2``, which is the probability for a
    normalised post-selection state.
    """
    p = as_expr(p)
    mat = p.evaluate(assignment)
    psi = np.asarray(psi, dtype=complex)
    out = np.einsum("...ij,...j->...i", mat, psi)
    norm_sq = np.sum(np.abs(out) ** 2, axis=-1)
    prob = norm_sq / branch_normalisation(p, mode)
    if normalize_coefficients:
        prob = prob / _coefficient_norm_sq(p)
    with np.errstate(invalid="ignore", divide="ignore"):
        state = out / np.sqrt(norm_sq)[..., None]
    if np.ndim(prob) == 0:
        prob = float(prob)
        return prob, (None if norm_sq == 0 else state)
    return prob, state


def _free_operator(v: np.ndarray, steps: int, n_parties: int) -> np.ndarray:
    vs = np.linalg.matrix_power(v, steps) if v.ndim == 2 else _batched_power(v, steps)
    out = vs
    for _ in range(n_parties - 1):
        out = batched_kron(out, vs)
    return out


def _batched_power(v: np.ndarray, k: int) -> np.ndarray:
    out = np.broadcast_to(np.eye(v.shape[-1], dtype=complex), v.shape).copy()
    base = v
    while k:
        if k & 1:
            out = out @ base
        base = base @ base
        k >>= 1
    return out


def run_program(prog: ProtocolProgram, assignment, psi, *, normalize_coefficients: bool = False):
    """Apply the segments chronologically; ``(prob, state)`` as in :func:`success_probability`.

    Each polynomial segment divides by its own branch normalisation; free
    segments contribute ``V^steps`` on every party and no factor.
    """
    x = np.asarray(assignment, dtype=complex)
    state = np.asarray(psi, dtype=complex)
    norm = 1.0
    for seg in prog.segments:
        if seg.kind == "free":
            if seg.steps:
                op = _free_operator(x[0], seg.steps, prog.n_parties)
                state = np.einsum("...ij,...j->...i", op, state)
            continue
        op = seg.poly.evaluate(x)
        state = np.einsum("...ij,...j->...i", op, state)
        norm *= branch_normalisation(seg.poly, seg.branching)
        if normalize_coefficients:
            norm *= _coefficient_norm_sq(seg.poly)
    norm_sq = np.sum(np.abs(state) ** 2, axis=-1)
    prob = norm_sq / norm
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = state / np.sqrt(norm_sq)[..., None]
    if np.ndim(prob) == 0:
        return float(prob), (None if norm_sq == 0 else unit)
    return prob, unit


# ---------------------------------------------------------------------------
# explicit register simulation


def _apply_local(state: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    """Apply ``op`` to tensor axis ``axis`` of ``state``."""
    state = np.tensordot(op, state, axes=([1], [axis]))
    return np.moveaxis(state, 0, axis)


def _apply_two(state: np.ndarray, op: np.ndarray, ax1: int, ax2: int) -> np.ndarray:
    """Apply a two-register operator (``op`` of shape ``(a, b, a, b)``) to axes ``ax1, ax2``."""
    state = np.tensordot(op, state, axes=([2, 3], [ax1, ax2]))
    return np.moveaxis(state, [0, 1], [ax1, ax2])


def _reference_poly_segment(state: np.ndarray, poly: TensorPoly, mode: str, model: HamiltonianModel,
                            n: int, guard: int) -> np.ndarray:
    """Run one polynomial segment on ``state`` (axes: n systems, probe).

    Returns the post-selected state with the same axes.
    """
    d, dp = model.d, model.d_probe
    lab = dp  # index of the lab-held probe state |Phi>
    m = poly.degrees[0]
    profile = poly.column_profile()
    # probe register: C^dp (+) |Phi>
    h_full = np.zeros((d * (dp + 1), d * (dp + 1)), dtype=complex)
    hp = np.zeros((dp + 1, dp + 1), dtype=complex)
    hp[:dp, :dp] = model.HP
    hi = np.zeros((d, dp + 1, d, dp + 1), dtype=complex)
    hi[:, :dp, :, :dp] = model.HI.reshape(d, dp, d, dp)
    h_full = (np.kron(model.H0, np.eye(dp + 1)) + np.kron(np.eye(d), hp)
              + hi.reshape(d * (dp + 1), d * (dp + 1)))
    step_op = expm(-1j * h_full * model.dt).reshape(d, dp + 1, d, dp + 1)
    phi = np.zeros(dp + 1, dtype=complex)
    phi[:dp] = model.phi_in
    phit = np.zeros(dp + 1, dtype=complex)
    phit[:dp] = model.phi_out
    e_lab = np.zeros(dp + 1, dtype=complex)
    e_lab[lab] = 1.0
    # preparation swaps |Phi> and |phi>; the return maps onto |Phi> via <phi~|
    prep = np.eye(dp + 1, dtype=complex) - np.outer(phi, phi.conj()) - np.outer(e_lab, e_lab)
    prep += np.outer(phi, e_lab) + np.outer(e_lab, phi.conj())
    ret_branch = np.outer(e_lab, phit.conj())

    qubits: list[tuple[int, int]] = []  # (party, word position) of each memory qubit, in order
    state = state[None]  # leading memory axis, flattened
    for t in range(m):
        pos = m - 1 - t
        for k in range(n):
            letters = profile[k][pos]
            superposed = mode == "canonical" or len(letters) > 1
            if superposed:
                if state.size * 2 > guard:
                    raise ReferenceGuardError(f"state would exceed {guard} amplitudes")
                # memory qubit in |+>; branch 1 gets the probe prepared in |phi>
                b0 = state / math.sqrt(2)
                b1 = _apply_local(state / math.sqrt(2), prep, 1 + n)
                b0 = _apply_two(b0, step_op, 1 + k, 1 + n)
                b1 = _apply_two(b1, step_op, 1 + k, 1 + n)
                b1 = _apply_local(b1, ret_branch, 1 + n)
                state = np.stack([b0, b1], axis=1).reshape((-1,) + state.shape[1:])
                qubits.append((k, pos))
            else:
                (letter,) = letters
                if letter == 1:
                    state = _apply_local(state, prep, 1 + n)
                state = _apply_two(state, step_op, 1 + k, 1 + n)
                if letter == 1:
                    state = _apply_local(state, ret_branch, 1 + n)
    # post-selection bra sum_w g_w <bits(w)|, memory qubit 1 = chronologically first probe
    bra = np.zeros(2 ** len(qubits), dtype=complex)
    for words, c in poly.items():
        idx = 0
        for k, pos in qubits:
            idx = idx * 2 + words[k][pos]
        bra[idx] += c
    return np.tensordot(bra, state, axes=([0], [0]))


def reference_simulate(prog, model: HamiltonianModel, psi, *, guard: int = REFERENCE_GUARD):
    """Explicit memory/probe/system simulation of a two-letter program.

    ``prog`` is a ProtocolProgram or a single polynomial (canonical mode).
    Letter 0 is free evolution, letter 1 a scattered probe. Each branching
    probe gets one memory qubit prepared in ``|+>``; ``|1>`` prepares the
    probe in ``|phi>`` and the return operation projects it on ``|phi~|``
    before restoring the lab state. After each polynomial segment the memory
    is post-selected with the unnormalised bra ``sum_w g_w <w|``.
    Returns ``(prob, state)`` like :func:`run_program`.
    """
    if not isinstance(prog, ProtocolProgram):
        p = as_expr(prog)
        prog = ProtocolProgram(p.n_parties, model.d, (Segment.apply(p),), model.dt, p.n_vars)
    if prog.n_vars != 2:
        raise ValueError("the reference simulator handles the two-letter alphabet only")
    if prog.d != model.d:
        raise ValueError("program and model dimensions differ")
    n, d, dp = prog.n_parties, model.d, model.d_probe
    psi = np.asarray(psi, dtype=complex)
    state = np.zeros((d,) * n + (dp + 1,), dtype=complex)
    state[(Ellipsis, dp)] = psi.reshape((d,) * n)
    v, _ = derive_vw(model)
    for seg in prog.segments:
        if seg.kind == "free":
            vs = np.linalg.matrix_power(v, seg.steps)
            for k in range(n):
                state = _apply_local(state, vs, k)
            continue
        poly = seg.poly.expand()
        state = _reference_poly_segment(state, poly, seg.branching, model, n, guard)
    sys_state = state[(Ellipsis, dp)].reshape(-1)
    rest = np.linalg.norm(state[..., :dp])
    if rest > 1e-12 * max(1.0, np.linalg.norm(sys_state)):
        raise AssertionError("probe register not returned to the lab state")
    norm_sq = float(np.vdot(sys_state, sys_state).real)
    return norm_sq, (sys_state / math.sqrt(norm_sq) if norm_sq > 0 else None)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class SuccessEstimate:
    mean: float
    stderr: float
    trials: int
    sampler: str
    mode: str = "canonical"
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "trials": self.trials,
                "sampler": self.sampler, "mode": self.mode}


def _sample_assignment(sampler, n_vars: int, d: int, count: int, rng: RngStream) -> np.ndarray:
    if sampler == "haar":
        return haar_unitary(d, rng, size=(n_vars, count))
    if sampler == "ginibre":
        return ginibre(d, d, rng, size=(n_vars, count)) / math.sqrt(d)
    if callable(sampler):
        if n_vars != 2:
            raise ValueError("model samplers produce the two letters V, W")
        out = np.empty((2, count, d, d), dtype=complex)
        for i in range(count):
            v, w = derive_vw(sampler(rng.generator))
            out[0, i], out[1, i] = v, w
        return out
    raise ValueError(f"unknown sampler {sampler!r}")


def run_program_operator(prog: ProtocolProgram, assignment, dim: int) -> np.ndarray:
    """Unnormalised operator of a whole program (chronological product of segments)."""
    x = np.asarray(assignment, dtype=complex)
    op = np.broadcast_to(np.eye(dim, dtype=complex), x.shape[1:-2] + (dim, dim))
    for seg in prog.segments:
        if seg.kind == "free":
            if seg.steps:
                op = _free_operator(x[0], seg.steps, prog.n_parties) @ op
        else:
            op = seg.poly.evaluate(x) @ op
    return op


def _trial_probabilities(mat: np.ndarray, psi: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """``||M psi||^2`` per trial, replaced by the state-independent value when ``M`` is ∝ unitary."""
    dim = mat.shape[-1]
    gram = mat @ np.swapaxes(mat.conj(), -1, -2)
    c = np.trace(gram, axis1=-2, axis2=-1).real / dim
    dev = np.linalg.norm(gram - c[..., None, None] * np.eye(dim), axis=(-2, -1))
    scale = np.linalg.norm(gram, axis=(-2, -1))
    direct = np.sum(np.abs(np.einsum("...ij,...j->...i", mat, psi)) ** 2, axis=-1)
    return np.where(dev <= tol * np.maximum(scale, 1e-300), c, direct).reshape(-1)


def monte_carlo(target, sampler="haar", trials: int = 1000, rng: RngStream | None = None, *,
                mode: str = "canonical", d: int | None = None, chunk: int = 20000, jobs: int = 1,
                normalize_coefficients: bool = False, keep_samples: bool = False) -> SuccessEstimate:
    """Average success probability over random assignments and random states.

    ``target`` is a polynomial/expression (applied with ``mode``) or a
    ProtocolProgram. Whenever a sampled operator is proportional to a
    unitary the probability does not depend on the state and its exact
    value is used; otherwise a uniformly random state is drawn. Trials are split into chunks; chunk ``i`` draws from
    ``rng.spawn(i)`` and results are reduced in chunk order, so the estimate
    does not depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng or RngStream(0)
    if isinstance(target, ProtocolProgram):
        n_vars, n_parties, dim_d = target.n_vars, target.n_parties, target.d
        norm = 1.0
        for seg in target.segments:
            if seg.kind == "poly":
                norm *= branch_normalisation(seg.poly, seg.branching)
                if normalize_coefficients:
                    norm *= _coefficient_norm_sq(seg.poly)

        def operator(x):
            dim = dim_d**n_parties
            return run_program_operator(target, x, dim)
    else:
        expr = as_expr(target)
        n_vars, n_parties = expr.n_vars, expr.n_parties
        dim_d = d or 2
        norm = branch_normalisation(expr, mode)
        if normalize_coefficients:
            norm *= _coefficient_norm_sq(expr)

        def operator(x):
            return expr.evaluate(x)

    sizes = [min(chunk, trials - i) for i in range(0, trials, chunk)]

    def run(i: int) -> np.ndarray:
        sub = rng.spawn(i)
        x = _sample_assignment(sampler, n_vars, dim_d, sizes[i], sub)
        psi = random_state(dim_d**n_parties, sub, size=(sizes[i],))
        return _trial_probabilities(operator(x), psi) / norm

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    probs = np.concatenate(parts)
    mean = float(np.mean(probs))
    stderr = float(np.std(probs, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    label = sampler if isinstance(sampler, str) else "model"
    return SuccessEstimate(mean, stderr, trials, label, mode if not isinstance(target, ProtocolProgram)
                           else "program", probs if keep_samples else None)


# ---------------------------------------------------------------------------
# experiment cards


def experiment_card(p: TensorPoly) -> dict:
    """Machine-readable description of the canonical experiment for ``p``.

    ``schedule[k]`` lists party ``k``'s probe steps in chronological order
    (step 1 acts first, i.e. the last letter of each word). Memory qudits
    are ordered by step, then party; ``postselection`` gives the amplitudes
    ``conj(g_w) / ||g||`` keyed by the chronological letter strings of all
    parties joined with ``|``.
    """
    if not isinstance(p, TensorPoly):
        p = as_expr(p).expand()
    names = list(p.var_names)
    profile = p.column_profile()
    m = p.degrees
    schedule = []
    memory = []
    for k in range(p.n_parties):
        steps = []
        for t in range(m[k]):
            pos = m[k] - 1 - t
            letters = sorted(profile[k][pos])
            branching = len(letters) > 1
            if branching:
                action = "superposed probe"
            elif letters == [0]:
                action = "free evolution"
            else:
                action = f"unconditional probe ({names[letters[0]]})"
            steps.append({"step": t + 1, "word_position": pos, "branch_set": [names[x] for x in letters],
                          "branching": branching, "action": action})
        schedule.append(steps)
    for t in range(max(m) if m else 0):
        for k in range(p.n_parties):
            if t < m[k] and schedule[k][t]["branching"]:
                memory.append({"party": k, "step": t + 1, "dim": len(schedule[k][t]["branch_set"])})
    norm = p.coefficient_norm()
    amps = []
    for words, c in p.items():
        key = "|".join("".join(names[x] for x in reversed(w)) for w in words)
        a = np.conj(c) / norm
        amps.append({"chronological": key, "re": float(a.real), "im": float(a.imag)})
    only_free = all(x == 0 for words in p.terms for w in words for x in w)
    canonical = branch_normalisation(p, "canonical")
    compressed = branch_normalisation(p, "compressed")
    return {
        "kind": "free evolution only" if only_free else "scattering experiment",
        "n_parties": p.n_parties,
        "letters": names,
        "degrees": list(m),
        "schedule": schedule,
        "memory": memory,
        "postselection": amps,
        "compression": {
            "canonical_branch_factor": canonical,
            "compressed_branch_factor": compressed,
            "deterministic_steps": sum(1 for s in schedule for st in s if not st["branching"]),
            "branching_steps": sum(1 for s in schedule for st in s if st["branching"]),
        },
        "memory_order": "step-major, party-minor; qubit 1 is the chronologically first probe",
    }

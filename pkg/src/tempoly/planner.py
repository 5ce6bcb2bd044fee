"""Feasibility and scheduling of multi-system time translations.

Given ``n`` systems of dimension ``d`` and a time budget ``T'``, the
translations ``T_i`` are reachable iff

    sum_{T_i > 0} T_i + (d - 1) sum_{T_i < 0} |T_i| <= n T'.

Schedules are built from three phases: ``free(tau)`` advances every system
by ``tau``; ``transfer(j, tau)`` moves ``n tau`` of evolution onto system
``j`` while freezing the rest; ``rewind(j, tau)`` moves system ``j`` back by
``n tau / (d - 1)``. All bookkeeping is done in exact rationals.
Systems are numbered from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Callable

import numpy as np

from .numkit import expm, fit_scalar

__all__ = [
    "FEASIBILITY_TOL",
    "InfeasibleError",
    "FeasibilityQuery",
    "Phase",
    "Schedule",
    "feasible",
    "plan",
    "compile",
    "CompileReport",
    "verify_schedule",
    "VerifyReport",
]

FEASIBILITY_TOL = 1e-12
VERIFY_TOL = 1e-9


class InfeasibleError(ValueError):
    pass


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, Real):
        if not math.isfinite(float(x)):
            raise ValueError(f"non-finite value {x!r}")
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as a real number")


@dataclass(frozen=True)
class FeasibilityQuery:
    """``d``, ``n``, budget ``T'`` and signed targets; numbers are kept as Fractions."""

    d: int
    n: int
    T_budget: Fraction
    targets: tuple[Fraction, ...]

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        object.__setattr__(self, "T_budget", _frac(self.T_budget))
        object.__setattr__(self, "targets", tuple(_frac(t) for t in self.targets))
        if self.T_budget < 0:
            raise ValueError("budget must be >= 0")
        if len(self.targets) != self.n:
            raise ValueError(f"expected {self.n} targets, got {len(self.targets)}")

    def demand(self) -> Fraction:
        return sum((t if t > 0 else -t * (self.d - 1) for t in self.targets), Fraction(0))


@dataclass(frozen=True)
class Phase:
    kind: str
    tau: Fraction
    system: int | None = None

    def __post_init__(self):
        if self.kind not in ("free", "transfer", "rewind"):
            raise ValueError(f"unknown phase kind {self.kind!r}")
        object.__setattr__(self, "tau", _frac(self.tau))
        if self.tau < 0:
            raise ValueError("phase duration must be >= 0")
        if (self.kind == "free") != (self.system is None):
            raise ValueError("free phases have no system; the others need one")

    def translation(self, i: int, n: int, d: int) -> Fraction:
        """Evolution time this phase adds to system ``i``."""
        if self.kind == "free":
            return self.tau
        if i != self.system:
            return Fraction(0)
        if self.kind == "transfer":
            return n * self.tau
        return -n * self.tau / (d - 1)

    def label(self) -> str:
        if self.kind == "free":
            return f"free({self.tau})"
        return f"{self.kind}({self.system}, {self.tau})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "system": self.system, "tau": str(self.tau), "tau_float": float(self.tau)}


@dataclass(frozen=True)
class Schedule:
    query: FeasibilityQuery
    phases: tuple[Phase, ...]

    @property
    def duration(self) -> Fraction:
        return sum((p.tau for p in self.phases), Fraction(0))

    def totals(self) -> tuple[Fraction, ...]:
        q = self.query
        return tuple(sum((p.translation(i, q.n, q.d) for p in self.phases), Fraction(0)) for i in range(q.n))

    def check(self) -> None:
        """Raise AssertionError unless duration and totals are exact."""
        if self.duration != self.query.T_budget:
            raise AssertionError(f"duration {self.duration} != budget {self.query.T_budget}")
        for i, (got, want) in enumerate(zip(self.totals(), self.query.targets)):
            if got != want:
                raise AssertionError(f"system {i}: translation {got} != target {want}")

    def to_json(self) -> dict:
        q = self.query
        return {
            "d": q.d, "n": q.n, "budget": str(q.T_budget), "targets": [str(t) for t in q.targets],
            "phases": [p.to_json() for p in self.phases],
            "totals": [str(t) for t in self.totals()],
            "duration": str(self.duration),
        }


def feasible(q: FeasibilityQuery) -> tuple[bool, float]:
    """``(ok, slack)`` with ``slack = n T' - demand``; ok within FEASIBILITY_TOL."""
    slack = q.n * q.T_budget - q.demand()
    return bool(float(slack) >= -FEASIBILITY_TOL), float(slack)


def plan(q: FeasibilityQuery) -> Schedule:
    """Constructive schedule for a feasible query.

    The common positive part ``f = max(0, min T_i)`` runs as free evolution,
    the remaining positive parts as transfers, negative targets as rewinds,
    and any leftover budget ``L`` as the net-zero pair
    ``transfer(0, L/d), rewind(0, (d-1) L/d)`` on system 0.
    """
    ok, _ = feasible(q)
    if not ok:
        raise InfeasibleError(f"infeasible: demand {float(q.demand())} exceeds n*T' = {float(q.n * q.T_budget)}")
    n, d = q.n, q.d
    f = max(Fraction(0), min(q.targets))
    phases: list[Phase] = []
    if f > 0:
        phases.append(Phase("free", f))
    for j, t in enumerate(q.targets):
        if t - f > 0:
            phases.append(Phase("transfer", (t - f) / n, j))
        elif t < 0:
            phases.append(Phase("rewind", (d - 1) * (-t) / n, j))
    used = sum((p.tau for p in phases), Fraction(0))
    left = q.T_budget - used
    if left > 0:
        phases.append(Phase("transfer", left / d, 0))
        phases.append(Phase("rewind", (d - 1) * left / d, 0))
    s = Schedule(q, tuple(phases))
    if left >= 0:
        s.check()
    return s


# ---------------------------------------------------------------------------
# verification


@dataclass
class VerifyReport:
    passed: bool
    residuals: list[float]
    scalars: list[complex]
    failing_systems: list[int] = field(default_factory=list)
    suspect_phases: list[str] = field(default_factory=list)
    duration_ok: bool = True

    def to_json(self) -> dict:
        return {"passed": self.passed, "residuals": self.residuals,
                "failing_systems": self.failing_systems, "suspect_phases": self.suspect_phases,
                "duration_ok": self.duration_ok}


def verify_schedule(s: Schedule, H0, tol: float = VERIFY_TOL) -> VerifyReport:
    """Compare each system's product of phase propagators with ``exp(-i H0 T_i)``.

    Works by operator proportionality, so non-Hermitian ``H0`` is allowed.
    On failure the phases acting on every failing system are named.
    """
    q = s.query
    h = np.asarray(H0, dtype=complex)
    if h.shape != (q.d, q.d):
        raise ValueError(f"H0 must be {q.d}x{q.d}")
    residuals, scalars, failing = [], [], []
    for i in range(q.n):
        op = np.eye(q.d, dtype=complex)
        for p in s.phases:
            if p.kind == "free":
                op = expm(-1j * h * float(p.tau)) @ op
            elif p.system == i and p.kind == "transfer":
                op = expm(-1j * h * float(q.n * p.tau)) @ op
            elif p.system == i:
                op = expm(1j * h * float(q.n * p.tau / (q.d - 1))) @ op
        r = fit_scalar(op, expm(-1j * h * float(q.targets[i])))
        residuals.append(r.residual)
        scalars.append(r.scalar)
        if r.residual > tol:
            failing.append(i)
    duration_ok = abs(float(s.duration - q.T_budget)) <= tol * max(1.0, float(q.T_budget))
    suspects: list[str] = []
    if failing:
        suspects = [p.label() for p in s.phases
                    if p.kind == "free" or all(p.system == i for i in failing)]
    elif not duration_ok:
        suspects = ["budget"]
    return VerifyReport(not failing and duration_ok, residuals, scalars, failing, suspects, duration_ok)


# ---------------------------------------------------------------------------
# compilation


@dataclass
class CompileReport:
    dt: float
    rows: list[dict]
    predicted: list[float]
    realised: list[float]
    duration: float
    budget: float

    @property
    def overhead_steps(self) -> int:
        return sum(r["overhead_steps"] for r in self.rows)

    def to_json(self) -> dict:
        return {"dt": self.dt, "phases": self.rows, "predicted_translations": self.predicted,
                "realised_translations": self.realised, "program_duration": self.duration,
                "budget": self.budget, "overhead_steps": self.overhead_steps}


def compile(s: Schedule, dt: float, swap_polys=None, rewinder: Callable[[int], object] | None = None):
    """Turn a schedule into a :class:`~tempoly.protocol.ProtocolProgram`.

    ``free(tau)`` becomes ``round(tau/dt)`` free steps; ``transfer(j, tau)``
    becomes a fast-forward segment with ``s = round(tau/dt)`` and
    ``rewind(j, tau)`` a fast-rewind with ``s = round(tau / ((d-1) dt))``,
    both in compressed branching. ``rewinder(s)`` must return a single-party
    polynomial proportional to ``V^{-s}`` (default for qubits: the two-letter
    commutator construction). Returns ``(program, report)``; the report lists
    rounding errors and the fixed-degree overhead of every segment, which
    only disappears as ``dt -> 0``.
    """
    from .constructions import compose_fast_forward, compose_fast_rewind, qubit_rewind
    from .ncpoly import load_omega
    from .protocol import ProtocolProgram, Segment

    if not dt > 0:
        raise ValueError("dt must be positive")
    q = s.query
    n, d = q.n, q.d
    if swap_polys is None and n > 1:
        if d != 2:
            raise ValueError("pass swap_polys for d != 2")
        swap_polys = load_omega()
    if rewinder is None:
        if d != 2:
            raise ValueError("pass a rewinder for d != 2")
        rewinder = qubit_rewind
    segments = []
    rows = []
    realised = [0.0] * n
    for p in s.phases:
        tau = float(p.tau)
        if tau == 0:
            continue
        unit = (d - 1) if p.kind == "rewind" else 1
        steps = round(tau / (unit * dt))
        if steps == 0:
            raise ValueError(f"dt={dt} is larger than phase {p.label()}")
        if p.kind == "free":
            seg = Segment.free(steps)
            for i in range(n):
                realised[i] += steps * dt
        elif p.kind == "transfer":
            if n == 1:
                seg = Segment.free(steps)
            else:
                seg = Segment.apply(compose_fast_forward(n, p.system, steps, swap_polys, d), "compressed")
            realised[p.system] += n * steps * dt
        else:
            r = rewinder(steps)
            if n == 1:
                seg = Segment.apply(r, "compressed")
            else:
                seg = Segment.apply(compose_fast_rewind(n, p.system, steps, swap_polys, r, d), "compressed")
            realised[p.system] -= n * steps * dt
        rows.append({"phase": p.label(), "tau": tau, "steps": steps,
                     "rounding_error": tau - steps * unit * dt,
                     "segment_steps": seg.duration_steps,
                     "overhead_steps": seg.duration_steps - steps * unit})
        segments.append(seg)
    n_vars = next((seg.poly.n_vars for seg in segments if seg.kind == "poly"), 2)
    prog = ProtocolProgram(n, d, tuple(segments), dt, n_vars)
    report = CompileReport(dt, rows, [float(t) for t in s.totals()], realised, prog.duration, float(q.T_budget))
    return prog, report

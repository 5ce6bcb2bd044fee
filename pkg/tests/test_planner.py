from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempoly.ncpoly import load_omega
from tempoly.numkit import RngStream, expm, fit_scalar, ginibre, haar_unitary, kron
from tempoly.planner import (
    FeasibilityQuery,
    InfeasibleError,
    Phase,
    Schedule,
    compile,
    feasible,
    plan,
    verify_schedule,
)
from tempoly.protocol import run_program_operator


def _herm(d, seed):
    a = ginibre(d, d, np.random.default_rng(seed))
    return (a + a.conj().T) / 2


fractions = st.fractions(min_value=-3, max_value=3, max_denominator=12)


@st.composite
def queries(draw):
    d = draw(st.integers(2, 4))
    n = draw(st.integers(1, 5))
    targets = draw(st.lists(fractions, min_size=n, max_size=n))
    budget = draw(st.fractions(min_value=0, max_value=4, max_denominator=12))
    return FeasibilityQuery(d, n, budget, targets)


class TestFeasible:
    def test_rewind_boundary(self):
        ok, slack = feasible(FeasibilityQuery(2, 1, 1, [-1]))
        assert ok and slack == 0

    def test_qutrit_rewind_too_far(self):
        ok, slack = feasible(FeasibilityQuery(3, 1, 1, [-1]))
        assert not ok and slack == -1

    def test_optimal_transfer(self):
        ok, slack = feasible(FeasibilityQuery(2, 2, 1, [2, 0]))
        assert ok and slack == 0

    @settings(max_examples=200, deadline=None)
    @given(queries(), st.fractions(min_value=0, max_value=3))
    def test_monotone_in_budget(self, q, extra):
        bigger = FeasibilityQuery(q.d, q.n, q.T_budget + extra, q.targets)
        if feasible(q)[0]:
            assert feasible(bigger)[0]

    @settings(max_examples=200, deadline=None)
    @given(queries())
    def test_matches_inequality(self, q):
        lhs = sum(t for t in q.targets if t > 0) + (q.d - 1) * sum(-t for t in q.targets if t < 0)
        assert feasible(q)[0] == (lhs <= q.n * q.T_budget)

    def test_validation(self):
        with pytest.raises(ValueError):
            FeasibilityQuery(1, 1, 1, [0])
        with pytest.raises(ValueError):
            FeasibilityQuery(2, 2, 1, [0])
        with pytest.raises(ValueError):
            FeasibilityQuery(2, 1, -1, [0])
        with pytest.raises(ValueError):
            FeasibilityQuery(2, 1, 1, [float("nan")])


class TestPlan:
    def test_example(self):
        s = plan(FeasibilityQuery(2, 2, 1, [1, F(-1, 2)]))
        assert [p.label() for p in s.phases] == [
            "transfer(0, 1/2)", "rewind(1, 1/4)", "transfer(0, 1/8)", "rewind(0, 1/8)"]
        assert s.totals() == (1, F(-1, 2))

    def test_all_zero(self):
        s = plan(FeasibilityQuery(2, 3, 1, [0, 0, 0]))
        assert [p.kind for p in s.phases] == ["transfer", "rewind"]
        assert s.duration == 1 and s.totals() == (0, 0, 0)

    def test_pure_free(self):
        s = plan(FeasibilityQuery(3, 4, 2, [2] * 4))
        assert s.phases == (Phase("free", 2),)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError, match="infeasible"):
            plan(FeasibilityQuery(3, 1, 1, [-1]))

    @settings(max_examples=300, deadline=None)
    @given(queries())
    def test_exact_bookkeeping(self, q):
        if not feasible(q)[0]:
            with pytest.raises(InfeasibleError):
                plan(q)
            return
        s = plan(q)
        assert s.duration == q.T_budget
        assert s.totals() == q.targets
        s.check()

    @settings(max_examples=200, deadline=None)
    @given(queries())
    def test_boundary_has_no_padding(self, q):
        # rescale the budget so the query sits exactly on the boundary
        demand = q.demand()
        if demand == 0:
            return
        edge = FeasibilityQuery(q.d, q.n, demand / q.n, q.targets)
        assert feasible(edge) == (True, 0.0)
        s = plan(edge)
        per_system = {}
        for p in s.phases:
            if p.system is not None:
                per_system.setdefault(p.system, []).append(p.kind)
        assert all(len(kinds) == 1 for kinds in per_system.values())


class TestVerify:
    def test_empty(self):
        s = Schedule(FeasibilityQuery(2, 2, 0, [0, 0]), ())
        assert verify_schedule(s, _herm(2, 0)).passed

    @pytest.mark.parametrize("d", [2, 3])
    def test_random_feasible(self, d):
        g = np.random.default_rng(d)
        count = 0
        while count < 100:
            n = int(g.integers(1, 5))
            targets = [F(int(x), 4) for x in g.integers(-8, 9, size=n)]
            budget = F(int(g.integers(0, 17)), 4)
            q = FeasibilityQuery(d, n, budget, targets)
            if not feasible(q)[0]:
                continue
            count += 1
            rep = verify_schedule(plan(q), _herm(d, count))
            assert rep.passed, rep

    def test_non_hermitian(self):
        h = ginibre(2, 2, np.random.default_rng(1)) * 0.3
        rep = verify_schedule(plan(FeasibilityQuery(2, 2, 1, [1, F(-1, 2)])), h)
        assert rep.passed

    def test_corrupted_phase_named(self):
        s = plan(FeasibilityQuery(2, 2, 1, [1, F(-1, 2)]))
        phases = list(s.phases)
        phases[1] = Phase("rewind", F(1, 3), 1)
        bad = Schedule(s.query, tuple(phases))
        rep = verify_schedule(bad, _herm(2, 2))
        assert not rep.passed
        assert rep.failing_systems == [1]
        assert "rewind(1, 1/3)" in rep.suspect_phases

    def test_duration_mismatch(self):
        q = FeasibilityQuery(2, 1, 2, [1])
        rep = verify_schedule(Schedule(q, (Phase("free", 1),)), _herm(2, 3))
        assert not rep.passed and rep.suspect_phases == ["budget"]


class TestCompile:
    def test_free_only(self):
        prog, rep = compile(plan(FeasibilityQuery(2, 2, 1, [1, 1])), 0.1)
        assert [seg.kind for seg in prog.segments] == ["free"]
        assert prog.segments[0].steps == 10
        assert rep.rows[0]["rounding_error"] == pytest.approx(0, abs=1e-12)

    def test_transfer_example(self):
        sched = Schedule(FeasibilityQuery(2, 2, F(1, 2), [1, 0]), (Phase("transfer", F(1, 2), 0),))
        prog, rep = compile(sched, 0.05)
        seg = prog.segments[0]
        assert seg.poly.degrees == (20, 20)
        assert rep.rows[0]["steps"] == 10 and rep.overhead_steps == 10

    def test_operator_on_physical_v(self):
        d, dt = 2, 0.1
        sched = Schedule(FeasibilityQuery(2, 2, F(3, 10), [F(6, 10), 0]), (Phase("transfer", F(3, 10), 0),))
        prog, _ = compile(sched, dt)
        v = expm(-1j * _herm(d, 4) * dt)
        w = haar_unitary(2, RngStream(5))
        op = run_program_operator(prog, np.stack([v, w]), 4)
        r = fit_scalar(op, kron(np.linalg.matrix_power(v, 6), np.eye(2)))
        assert r.residual <= 1e-8 and abs(r.scalar) > 0

    def test_rewind_operator(self):
        dt = 0.1
        sched = Schedule(FeasibilityQuery(2, 2, F(2, 10), [0, F(-4, 10)]), (Phase("rewind", F(2, 10), 1),))
        prog, rep = compile(sched, dt)
        x = haar_unitary(2, RngStream(6), size=(2,))
        op = run_program_operator(prog, x, 4)
        r = fit_scalar(op, kron(np.eye(2), np.linalg.matrix_power(np.linalg.inv(x[0]), 4)))
        assert r.residual <= 1e-8 and abs(r.scalar) > 0
        assert rep.realised == pytest.approx([0, -0.4])

    def test_single_system(self):
        prog, rep = compile(plan(FeasibilityQuery(2, 1, 1, [-1])), 0.25)
        x = haar_unitary(2, RngStream(7), size=(2,))
        op = run_program_operator(prog, x, 2)
        r = fit_scalar(op, np.linalg.matrix_power(np.linalg.inv(x[0]), 4))
        assert r.residual <= 1e-9

    def test_overhead_vanishes_linearly(self):
        sched = plan(FeasibilityQuery(2, 2, 1, [1, F(-1, 2)]))
        gaps = []
        for dt in (1 / 16, 1 / 32, 1 / 64):
            prog, rep = compile(sched, dt)
            assert rep.realised == pytest.approx([1, -0.5], abs=1e-12)
            gaps.append(prog.duration - 1)
        assert gaps[0] > 0
        assert gaps[1] == pytest.approx(gaps[0] / 2) and gaps[2] == pytest.approx(gaps[0] / 4)

    def test_dt_too_large(self):
        with pytest.raises(ValueError):
            compile(plan(FeasibilityQuery(2, 2, 1, [1, F(-1, 2)])), 1.0)

    def test_uses_fixture_by_default(self):
        sched = Schedule(FeasibilityQuery(2, 2, F(1, 10), [F(2, 10), 0]), (Phase("transfer", F(1, 10), 0),))
        default, _ = compile(sched, 0.1)
        explicit, _ = compile(sched, 0.1, swap_polys=load_omega())
        assert default.segments[0].poly.degrees == explicit.segments[0].poly.degrees

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempoly.constructions import compose_fast_forward, qubit_rewind
from tempoly.ncpoly import TensorPoly, load_omega
from tempoly.numkit import RngStream, ginibre, haar_unitary, random_state
from tempoly.protocol import (
    HamiltonianModel,
    ModelSampler,
    ProtocolProgram,
    ReferenceGuardError,
    Segment,
    branch_normalisation,
    compressed_rewind_program,
    derive_vw,
    experiment_card,
    model_from_json,
    model_to_json,
    monte_carlo,
    program_from_json,
    program_to_json,
    random_model,
    reference_simulate,
    run_program,
    success_probability,
)

V, W = 0, 1


def _fidelity(a, b):
    return abs(np.vdot(a, b)) ** 2


def _random_two_letter(rng, n_parties, m, n_terms):
    terms = {}
    limit = 2 ** (n_parties * m)
    while len(terms) < min(n_terms, limit):
        key = tuple(tuple(int(x) for x in rng.integers(0, 2, size=m)) for _ in range(n_parties))
        terms[key] = complex(rng.standard_normal(), rng.standard_normal())
    return TensorPoly(terms, 2, n_parties=n_parties)


def _decoupled_model(d=2, dp=2, seed=0):
    g = np.random.default_rng(seed)
    h0 = ginibre(d, d, g)
    h0 = (h0 + h0.conj().T) / 2
    phi = random_state(dp, g)
    return HamiltonianModel(d, dp, h0, np.zeros((dp, dp)), np.zeros((d * dp, d * dp)), phi, phi, 0.7)


class TestDeriveVW:
    def test_decoupled_probe_gives_w_equal_v(self):
        v, w = derive_vw(_decoupled_model())
        assert np.allclose(v, w, atol=1e-12)

    def test_orthogonal_postselection_gives_zero(self):
        m = _decoupled_model()
        phi_out = np.array([-m.phi_in[1].conj(), m.phi_in[0].conj()])
        m2 = HamiltonianModel(m.d, m.d_probe, m.H0, m.HP, m.HI, m.phi_in, phi_out, m.dt)
        _, w = derive_vw(m2)
        assert np.allclose(w, 0, atol=1e-12)

    def test_dense_contraction_oracle(self):
        for seed in range(5):
            m = random_model(2, 2, np.random.default_rng(seed))
            h = np.kron(m.H0, np.eye(2)) + np.kron(np.eye(2), m.HP) + m.HI
            lam, q = np.linalg.eigh(h)
            u = q @ np.diag(np.exp(-1j * lam * m.dt)) @ q.conj().T
            bra = np.kron(np.eye(2), m.phi_out.conj()[None, :])
            ket = np.kron(np.eye(2), m.phi_in[:, None])
            v, w = derive_vw(m)
            assert np.allclose(w, bra @ u @ ket, atol=1e-12)
            assert np.linalg.norm(w, 2) <= 1 + 1e-12
            assert np.allclose(v.conj().T @ v, np.eye(2), atol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            HamiltonianModel(2, 2, np.eye(3), np.eye(2), np.eye(4), np.ones(2), np.ones(2), 1.0)

    def test_json_round_trip(self):
        m = random_model(2, 3, np.random.default_rng(1))
        back = model_from_json(json.loads(json.dumps(model_to_json(m))))
        assert np.allclose(derive_vw(back)[1], derive_vw(m)[1])


class TestSuccessProbability:
    def test_single_letter_compressed(self):
        v = haar_unitary(2, RngStream(0))
        prob, state = success_probability(TensorPoly.word([V], 2), np.stack([v, v]), [1, 0], "compressed")
        assert prob == pytest.approx(1.0)
        assert np.allclose(state, v[:, 0])

    def test_single_letter_canonical(self):
        v = haar_unitary(2, RngStream(0))
        prob, _ = success_probability(TensorPoly.word([V], 2), np.stack([v, v]), [1, 0], "canonical")
        assert prob == pytest.approx(0.5)

    def test_zero_state_flagged(self):
        v = haar_unitary(2, RngStream(1))
        prob, state = success_probability(TensorPoly.commutator(W, V, 2), np.stack([v, v]), [1, 0])
        assert prob == 0 and state is None

    def test_normalised_bra(self):
        p = TensorPoly.commutator(W, V, 2)
        x = haar_unitary(2, RngStream(2), size=(2,))
        a, _ = success_probability(p, x, [1, 0])
        b, _ = success_probability(p, x, [1, 0], normalize_coefficients=True)
        assert b == pytest.approx(a / 2)

    def test_batched_matches_loop(self):
        p = qubit_rewind(1)
        x = haar_unitary(2, RngStream(3), size=(2, 6))
        psi = random_state(2, RngStream(4), size=(6,))
        probs, states = success_probability(p, x, psi)
        for i in range(6):
            pi, si = success_probability(p, x[:, i], psi[i])
            assert probs[i] == pytest.approx(pi)
            assert _fidelity(states[i], si) == pytest.approx(1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 2), st.integers(1, 4))
    def test_compressed_dominates_and_bounded(self, seed, n, m):
        g = np.random.default_rng(seed)
        p = _random_two_letter(g, n, m, 4).unit_normalized()
        x = haar_unitary(2, RngStream(seed), size=(2,))
        psi = random_state(2**n, RngStream(seed, 1))
        canon, _ = success_probability(p, x, psi, "canonical")
        comp, _ = success_probability(p, x, psi, "compressed")
        assert comp >= canon - 1e-15
        assert 0 <= canon <= 1 + 1e-12

    def test_psi_independent_for_unitary_evaluations(self):
        # E is proportional to V^8 (x) I, hence to a unitary
        e = compose_fast_forward(2, 1, 4, load_omega())
        x = haar_unitary(2, RngStream(5), size=(2,))
        psi = random_state(4, RngStream(6), size=(100,))
        probs, _ = success_probability(e, x[:, None], psi, "compressed")
        assert np.ptp(probs) <= 1e-10 * max(probs.max(), 1e-300) + 1e-10

    def test_fast_forward_normalisation_count(self):
        e = compose_fast_forward(2, 1, 4, load_omega())
        branching = sum(len(col) > 1 for party in e.column_profile() for col in party)
        assert branching == 20
        assert branch_normalisation(e, "compressed") == 2.0**20
        x = haar_unitary(2, RngStream(7), size=(2,))
        psi = random_state(4, RngStream(8))
        prob, _ = success_probability(e, x, psi, "compressed")
        assert prob == pytest.approx(np.linalg.norm(e.evaluate(x) @ psi) ** 2 / 2**20, rel=1e-12)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            branch_normalisation(TensorPoly.word([V], 2), "other")


class TestPrograms:
    def test_free_only(self):
        prog = ProtocolProgram(2, 2, (Segment.free(3), Segment.free(2)))
        x = haar_unitary(2, RngStream(0), size=(2,))
        psi = random_state(4, RngStream(1))
        prob, state = run_program(prog, x, psi)
        v5 = np.linalg.matrix_power(x[0], 5)
        assert prob == pytest.approx(1.0)
        assert _fidelity(state, np.kron(v5, v5) @ psi) == pytest.approx(1.0)

    def test_matches_expanded_product(self):
        g = np.random.default_rng(2)
        p1, p2 = _random_two_letter(g, 2, 2, 5), _random_two_letter(g, 2, 3, 6)
        prog = ProtocolProgram(2, 2, (Segment.apply(p1), Segment.apply(p2)))
        x = haar_unitary(2, RngStream(3), size=(2,))
        psi = random_state(4, RngStream(4))
        a, sa = run_program(prog, x, psi)
        b, sb = success_probability(p2 @ p1, x, psi, "canonical")
        assert a == pytest.approx(b, rel=1e-12)
        assert _fidelity(sa, sb) == pytest.approx(1.0)

    def test_compressed_rewind_equals_canonical_operator(self):
        s = 5
        prog = compressed_rewind_program(s)
        x = haar_unitary(2, RngStream(5), size=(2,))
        psi = random_state(2, RngStream(6))
        a, sa = run_program(prog, x, psi)
        b, sb = success_probability(qubit_rewind(s), x, psi, "canonical")
        assert _fidelity(sa, sb) == pytest.approx(1.0)
        assert a == pytest.approx(b * 2**s, rel=1e-12)

    def test_segment_validation(self):
        with pytest.raises(ValueError):
            Segment.apply(TensorPoly({((V,), (V, V)): 1.0}, 2))
        with pytest.raises(ValueError):
            Segment.free(-1)
        with pytest.raises(ValueError):
            ProtocolProgram(1, 2, (Segment.apply(load_omega()),))

    def test_duration(self):
        prog = compressed_rewind_program(7, dt=0.5)
        assert prog.total_steps == 11 and prog.duration == pytest.approx(5.5)

    def test_json_round_trip(self):
        prog = ProtocolProgram(2, 2, (Segment.apply(compose_fast_forward(2, 0, 2, load_omega()), "compressed"),
                                      Segment.free(3)))
        back = program_from_json(json.loads(json.dumps(program_to_json(prog))))
        x = haar_unitary(2, RngStream(7), size=(2,))
        psi = random_state(4, RngStream(8))
        assert run_program(back, x, psi)[0] == pytest.approx(run_program(prog, x, psi)[0], rel=1e-12)


class TestReference:
    def test_single_step_sum(self):
        p = TensorPoly({((V,),): 1.0, ((W,),): 1.0}, 2)
        m = random_model(2, 2, np.random.default_rng(0))
        v, w = derive_vw(m)
        psi = random_state(2, RngStream(1))
        prob, state = reference_simulate(p, m, psi)
        shortcut, s2 = success_probability(p, np.stack([v, w]), psi)
        assert abs(prob - shortcut) <= 1e-12
        assert _fidelity(state, (v + w) @ psi / np.linalg.norm((v + w) @ psi)) >= 1 - 1e-10

    def test_commutator(self):
        p = TensorPoly.commutator(W, V, 2)
        m = random_model(2, 2, np.random.default_rng(2))
        psi = random_state(2, RngStream(3))
        prob, state = reference_simulate(p, m, psi)
        shortcut, s2 = success_probability(p, np.stack(derive_vw(m)), psi)
        assert abs(prob - shortcut) <= 1e-10
        assert _fidelity(state, s2) >= 1 - 1e-10

    def test_decoupled_degenerates(self):
        m = _decoupled_model(seed=4)
        p = _random_two_letter(np.random.default_rng(4), 1, 3, 5)
        v, _ = derive_vw(m)
        psi = random_state(2, RngStream(5))
        prob, state = reference_simulate(p, m, psi)
        collapsed, s2 = success_probability(p, np.stack([v, v]), psi)
        assert prob == pytest.approx(collapsed, abs=1e-12)
        if collapsed > 1e-20:
            assert _fidelity(state, s2) >= 1 - 1e-10

    @pytest.mark.parametrize("mode", ["canonical", "compressed"])
    def test_shortcut_equivalence(self, mode):
        g = np.random.default_rng(6)
        for trial in range(50):
            n = 1 + trial % 2
            m = 1 + trial % 4
            p = _random_two_letter(g, n, m, 1 + trial % 6).unit_normalized()
            model = random_model(2, 2, g)
            psi = random_state(2**n, g)
            prog = ProtocolProgram(n, 2, (Segment.apply(p, mode),), model.dt)
            ref, sr = reference_simulate(prog, model, psi)
            short, ss = run_program(prog, np.stack(derive_vw(model)), psi)
            assert abs(ref - short) <= 1e-10
            if short > 1e-12:
                assert _fidelity(sr, ss) >= 1 - 1e-10

    def test_program_with_free_segment(self):
        model = random_model(2, 2, np.random.default_rng(7))
        prog = compressed_rewind_program(3, dt=model.dt)
        psi = random_state(2, RngStream(8))
        ref, sr = reference_simulate(prog, model, psi)
        short, ss = run_program(prog, np.stack(derive_vw(model)), psi)
        assert abs(ref - short) <= 1e-10 and _fidelity(sr, ss) >= 1 - 1e-10

    def test_guard(self):
        model = random_model(2, 2, np.random.default_rng(9))
        e = compose_fast_forward(2, 1, 4, load_omega())
        with pytest.raises(ReferenceGuardError):
            reference_simulate(ProtocolProgram(2, 2, (Segment.apply(e, "canonical"),)), model,
                               random_state(4, RngStream(0)))


class TestMonteCarlo:
    def test_free_letter_is_exactly_one(self):
        est = monte_carlo(TensorPoly.word([V], 2), "haar", 500, RngStream(0), mode="compressed")
        assert est.mean == pytest.approx(1.0, abs=1e-12) and est.stderr <= 1e-12

    def test_rewind_scaling(self):
        # average ~ c 2^-s with c independent of s
        means = [monte_carlo(qubit_rewind(s), "haar", 40000, RngStream(1, s)).mean * 2**s for s in (1, 3, 5)]
        assert max(means) / min(means) < 1.1
        assert 0.03 < np.mean(means) < 0.07

    def test_sequential_is_s_independent(self):
        ests = [monte_carlo(compressed_rewind_program(s), "haar", 40000, RngStream(2, s)) for s in (1, 8, 32)]
        for e in ests:
            assert e.mode == "program"
            assert abs(e.mean - ests[0].mean) <= 4 * math.hypot(e.stderr, ests[0].stderr)
        assert 0.03 < ests[0].mean < 0.07

    def test_jobs_do_not_change_result(self):
        p = qubit_rewind(2)
        a = monte_carlo(p, "haar", 5000, RngStream(3), chunk=700, jobs=1)
        b = monte_carlo(p, "haar", 5000, RngStream(3), chunk=700, jobs=4)
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_model_sampler(self):
        est = monte_carlo(TensorPoly.commutator(W, V, 2), ModelSampler(2), 200, RngStream(4))
        assert est.sampler == "model" and 0 <= est.mean <= 1

    def test_ginibre(self):
        est = monte_carlo(TensorPoly.word([V], 2), "ginibre", 1000, RngStream(5), mode="compressed",
                          keep_samples=True)
        assert est.samples.shape == (1000,) and est.stderr > 0

    def test_trials_validated(self):
        with pytest.raises(ValueError):
            monte_carlo(TensorPoly.word([V], 2), trials=0)


class TestCard:
    def test_free_only(self):
        card = experiment_card(TensorPoly.power(V, 3, 2))
        assert card["kind"] == "free evolution only"
        assert card["memory"] == []

    def test_rewind_schedule(self):
        card = experiment_card(qubit_rewind(2))
        assert [st["branching"] for st in card["schedule"][0]] == [True, True, False, False, True, True]
        assert [st["step"] for st in card["schedule"][0]] == [1, 2, 3, 4, 5, 6]
        assert len(card["memory"]) == 4
        assert card["compression"]["compressed_branch_factor"] == 16

    def test_amplitudes_normalised(self):
        for p in (qubit_rewind(3), load_omega()):
            amps = experiment_card(p)["postselection"]
            assert sum(a["re"] ** 2 + a["im"] ** 2 for a in amps) == pytest.approx(1.0)

    def test_chronological_keys(self):
        card = experiment_card(TensorPoly.word([V, W], 2))
        assert card["postselection"][0]["chronological"] == "WV"

    def test_unconditional_probe_column(self):
        card = experiment_card(TensorPoly({((W, V),): 1.0, ((W, W),): 1.0}, 2))
        first, second = card["schedule"][0]
        assert first["branching"] and not second["branching"]
        assert second["action"].startswith("unconditional probe")

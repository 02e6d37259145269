import math

import numpy as np
import pytest

from ifobound.analysis import lower_bound_curve, rate_q
from ifobound.errors import CapacityError, ContractViolation
from ifobound.numkernel import OrthonormalFamily, dist_to_span, mirror_about_span
from ifobound.oracle import (
    NOT_ASSERTED,
    ResistingIFO,
    ResistingState,
    SingleResistingIFO,
    StaticIFO,
    Transcript,
    answer_digest,
    assert_certificate,
    complete_basis,
    ifo_query,
    resist_finalize,
    resist_query,
    transcript_replay_check,
)
from ifobound.problems import build_hard_instance, rate_from_kappa, rho_for_norm
from ifobound.solvers import SolverConfig, run_solver


def gd_run(budget):
    return lambda oracle: run_solver(SolverConfig("gd", budget), oracle)


def random_queries(state, rng, k, dim):
    """Drive a single resisting state with points mixing past answers and noise."""
    xs, ys, gs = [], [], []
    x = np.zeros(dim)
    for _ in range(k):
        y, g = resist_query(state, x)
        xs.append(x.copy())
        ys.append(y)
        gs.append(g.copy())
        x = x - 0.05 * g + 0.01 * rng.standard_normal(dim) * (rng.random() < 0.3)
    return xs, ys, gs


class TestStaticIFO:
    def test_first_query_support(self):
        n, D = 3, 30
        prob = build_hard_instance(n, 1.0, 10.0, 1.0, D)
        oracle = StaticIFO(prob)
        for i in range(n):
            _, g = oracle.query(i, np.zeros(prob.dim))
            support = set(np.flatnonzero(g))
            assert support <= {i, i + n}
            assert i in support

    def test_counting(self):
        prob = build_hard_instance(1, 1.0, 10.0, 1.0, 60)
        t = Transcript(1)
        for m in range(1, 6):
            ifo_query(prob, t, 0, np.zeros(60))
            assert t.total_calls == m
        assert t.counts == (5,)

    def test_index_range(self):
        prob = build_hard_instance(2, 1.0, 10.0, 1.0, 40)
        with pytest.raises(ContractViolation):
            StaticIFO(prob).query(2, np.zeros(prob.dim))

    def test_component_only(self, rng):
        prob = build_hard_instance(4, 1.0, 10.0, 1.0, 30)
        x = rng.standard_normal(prob.dim)
        v, g = StaticIFO(prob).query(2, x)
        v2, g2 = prob.components[2].value_grad(x)
        assert v == v2 and np.array_equal(g, g2)


class TestTranscript:
    def test_signed_zero(self):
        a = answer_digest(0, np.array([0.0, 1.0]), 0.0, np.array([-0.0]))
        b = answer_digest(0, np.array([-0.0, 1.0]), -0.0, np.array([0.0]))
        assert a == b
        assert a != answer_digest(1, np.array([0.0, 1.0]), 0.0, np.array([0.0]))

    def test_csv(self, tmp_path):
        t = Transcript(2, keep_vectors=True)
        t.append(1, np.ones(3), 2.0, np.zeros(3))
        t.to_csv(tmp_path / "t.csv")
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0] == "call_index,i,x_norm,value,g_norm"
        assert rows[1].split(",")[1] == "2"
        assert (tmp_path / "t.csv.npz").exists()

    def test_divergence(self):
        a, b = Transcript(1), Transcript(1)
        for t in (a, b):
            t.append(0, np.ones(2), 1.0, np.ones(2))
        assert a.first_divergence(b) is None
        a.append(0, np.ones(2), 1.0, np.ones(2))
        b.append(0, np.ones(2), 1.5, np.ones(2))
        assert a.first_divergence(b) == 1


class TestResistingState:
    mu, L, dim = 1.0, 100.0, 256

    def state(self, gamma=1.0):
        return ResistingState.from_gamma(self.mu, self.L, gamma, self.dim)

    def test_first_query(self):
        st = self.state()
        y, g = resist_query(st, np.zeros(self.dim))
        assert st.S.size == 1
        v0 = st.S[0]
        assert y == 0.0
        np.testing.assert_allclose(g, -(self.L - self.mu) * st.fn.rho / 4 * v0, atol=1e-15)

    def test_repeat_query(self, rng):
        st = self.state()
        x = rng.standard_normal(self.dim)
        y1, g1 = resist_query(st, x)
        y2, g2 = resist_query(st, x)
        assert y1 == pytest.approx(y2, rel=1e-12)
        np.testing.assert_allclose(g1, g2, atol=1e-10)

    def test_span_growth_and_membership(self, rng):
        st = self.state()
        xs, ys, gs = random_queries(st, rng, 40, self.dim)
        for k, size in enumerate(st.sizes):
            assert size <= 2 * k + 2
        assert st.S.is_orthonormal(1e-10)
        for g in gs:
            assert dist_to_span(st.S, g) <= 1e-10 * max(1.0, np.linalg.norm(g))

    def test_consistency_after_finalize(self, rng):
        st = self.state()
        xs, ys, gs = random_queries(st, rng, 30, self.dim)
        cert = resist_finalize(st, xs[-1])
        f = cert.problem
        for x, y, g in zip(xs, ys, gs):
            y2, g2 = f.value_grad(x)
            assert abs(y2 - y) <= 1e-9 * max(1.0, abs(y))
            assert np.linalg.norm(g2 - g) <= 1e-9 * max(1.0, np.linalg.norm(g))

    def test_mirror_symmetry(self, rng):
        st = self.state()
        xs, ys, gs = random_queries(st, rng, 25, self.dim)
        cert = resist_finalize(st, xs[-1])
        P = st.S
        for x, y, g in zip(xs, ys, gs):
            mx = mirror_about_span(P, x)
            y2, g_m = cert.problem.value_grad(mx)
            g2 = mirror_about_span(P, g_m)
            assert abs(y2 - y) <= 1e-9 * max(1.0, abs(y))
            assert np.linalg.norm(g2 - g) <= 1e-9 * max(1.0, np.linalg.norm(g))

    def test_trivial_certificate(self):
        st = self.state(gamma=2.0)
        cert = resist_finalize(st, np.zeros(self.dim))
        assert cert.K == 0 and cert.log_bound == 0.0 and cert.holds

    def test_zero_output(self):
        st = self.state()
        random_queries(st, np.random.default_rng(0), 10, self.dim)
        cert = resist_finalize(st, np.zeros(self.dim))
        assert cert.observed_rel_error == pytest.approx(1.0)
        assert cert.holds

    def test_span_distance(self, rng):
        st = self.state()
        xs, _, _ = random_queries(st, rng, 20, self.dim)
        cert = resist_finalize(st, xs[-1])
        assert cert.span_check
        assert dist_to_span(st.S, cert.x_star) == pytest.approx(cert.span_distance, abs=1e-12)

    def test_capacity(self):
        st = ResistingState.from_gamma(1.0, 4.0, 1.0, 30)
        with pytest.raises(CapacityError, match="use dim >="):
            for k in range(30):
                resist_query(st, np.zeros(30) + k)

    def test_complete_basis(self, rng):
        S = OrthonormalFamily(np.linalg.qr(rng.standard_normal((12, 5)))[0])
        B = complete_basis(S)
        np.testing.assert_allclose(B.T @ B, np.eye(12), atol=1e-12)
        np.testing.assert_array_equal(B[:, :5], S.members)


class TestSingleOracle:
    def test_gd_k20(self):
        oracle = SingleResistingIFO(1.0, 100.0, 1.0, 256)
        trace = run_solver(SolverConfig("gd", 20), oracle)
        cert = oracle.finalize(trace.x_final)
        assert cert.q == pytest.approx(9 / 11, rel=1e-14)
        assert cert.log_bound == pytest.approx(40 * math.log(9 / 11), rel=1e-12)
        assert cert.holds and cert.status == "pass"

    def test_ridge_bookkeeping(self, rng):
        a = SingleResistingIFO(1.0, 10.0, 1.0, 64)
        b = ResistingState.from_gamma(1.0, 10.0, 1.0, 64)
        x = np.zeros(64)
        for _ in range(5):
            v, g = a.query(0, x)
            vb, gb = resist_query(b, x)
            assert v + 0.5 * (x @ x) == pytest.approx(vb, rel=1e-12, abs=1e-12)
            np.testing.assert_allclose(g + x, gb, atol=1e-12)
            x = x - 0.1 * (g + x)


class TestResistingIFO:
    def test_isolation(self, rng):
        adv = ResistingIFO(3, 1.0, 20.0, 1.0, 64)
        x = rng.standard_normal(adv.dim)
        adv.query(0, x)
        adv.query(0, 2 * x)
        assert adv.states[1] is None and adv.states[2] is None
        adv.query(1, x)
        s0 = adv.states[0].S.members.copy()
        adv.query(1, 3 * x)
        np.testing.assert_array_equal(adv.states[0].S.members, s0)

    def test_per_component_rate(self):
        adv = ResistingIFO(4, 1.0, 5.0, 1.0, 64)
        assert adv.q == pytest.approx(3 - 2 * math.sqrt(2), rel=1e-14)

    def test_n1_matches_single(self, rng):
        adv = ResistingIFO(1, 1.0, 30.0, 1.0, 128)
        st = ResistingState.from_gamma(1.0, 30.0, 1.0, 128)
        x = np.zeros(128)
        for _ in range(6):
            v, g = adv.query(0, x)
            vs, gs = resist_query(st, x)
            assert v + 0.5 * (x @ x) == pytest.approx(vs, rel=1e-12, abs=1e-14)
            np.testing.assert_allclose(g + x, gs, atol=1e-12)
            x = x - 0.05 * gs + 0.01 * rng.standard_normal(128)

    def test_below_n_declared_budget(self, rng):
        n = 6
        adv = ResistingIFO(n, 1.0, 50.0, 2.0, 128, budget=n - 1)
        x = np.zeros(adv.dim)
        for i in range(n - 1):
            _, g = adv.query(i, x)
            x = x - 0.1 * g
        with pytest.raises(ContractViolation, match="budget"):
            adv.query(0, x)
        cert = adv.finalize(x)
        assert cert.bound_kind == "unqueried"
        assert cert.log_bound == 0.0
        assert cert.observed_error >= 2.0 * (1 - 1e-12)
        assert cert.holds
        assert lower_bound_curve(2.0, 50.0, n, n - 1).value == 2.0

    def test_below_n_undeclared_budget(self):
        n = 4
        adv = ResistingIFO(n, 1.0, 50.0, 1.0, 128)
        x = np.zeros(adv.dim)
        for i in range(2):
            _, g = adv.query(i, x)
            x = x - 0.1 * g
        cert = adv.finalize(x)
        assert cert.bound_kind == "unqueried-partial"
        assert cert.holds
        assert np.linalg.norm(cert.x_star) == pytest.approx(1.0, rel=1e-9)

    def test_jensen_equality(self):
        n, K = 4, 40
        adv = ResistingIFO(n, 1.0, 21.0, 1.0, 128)
        x = np.zeros(adv.dim)
        for k in range(K):
            _, g = adv.query(k % n, x)
            x = x - 0.01 * g
        cert = adv.finalize(x)
        assert cert.transcript.counts == (10,) * n
        assert cert.log_aggregate_bound == pytest.approx(cert.log_bound, abs=1e-12)

    def test_reference_bound(self):
        q = rate_q(101.0, 8)
        assert q == pytest.approx(rate_from_kappa(13.5), rel=1e-15)
        adv = ResistingIFO(8, 1.0, 101.0, 1.0, 512)
        trace = run_solver(SolverConfig("gd", 800), adv)
        cert = adv.finalize(trace.x_final)
        assert cert.log_bound == pytest.approx(200 * math.log(q), rel=1e-12)
        assert cert.holds and cert.span_check

    def test_consistency_and_smoothness(self, rng):
        n, mu, L = 3, 1.0, 30.0
        adv = ResistingIFO(n, mu, L, 1.0, 96, keep_vectors=True)
        trace = run_solver(SolverConfig("saga", 90, seed=1), adv)
        cert = adv.finalize(trace.x_final)
        prob = cert.problem
        for e in cert.transcript:
            v, g = prob.component(e.i, e.x)
            assert abs(v - e.value) <= 1e-9 * max(1.0, abs(e.value))
            assert np.linalg.norm(g - e.grad) <= 1e-9 * max(1.0, np.linalg.norm(e.grad))
        for comp in prob.components:
            for _ in range(10):
                u = rng.standard_normal(prob.dim)
                u /= np.linalg.norm(u)
                x = rng.standard_normal(prob.dim)
                f = lambda z: comp.value_grad(z)[0]  # noqa: E731
                t = 1e-2
                second = (f(x + t * u) - 2 * f(x) + f(x - t * u)) / t ** 2
                assert -1e-6 <= second <= L - mu + 1e-6

    def test_bad_constants(self):
        with pytest.raises(ContractViolation):
            ResistingIFO(2, 2.0, 1.0, 1.0, 64)
        with pytest.raises(ContractViolation):
            ResistingIFO(2, 1.0, 10.0, 1.0, 5)


class TestReplay:
    def test_gd(self):
        adv = ResistingIFO(4, 1.0, 41.0, 1.0, 128)
        trace = run_solver(SolverConfig("gd", 200), adv)
        cert = adv.finalize(trace.x_final)
        res = transcript_replay_check(gd_run(200), cert)
        assert res and res.first_divergence is None
        assert cert.replay_verified is True

    def test_seeded_sgd(self):
        cfg = SolverConfig("sgd", 200, seed=5)
        adv = ResistingIFO(4, 1.0, 41.0, 1.0, 128)
        trace = run_solver(cfg, adv)
        cert = adv.finalize(trace.x_final)
        assert transcript_replay_check(lambda o: run_solver(cfg, o), cert)
        other = SolverConfig("sgd", 200, seed=6)
        res = transcript_replay_check(lambda o: run_solver(other, o), cert)
        assert not res
        assert res.first_divergence is not None
        assert cert.replay_verified is False

    def test_single_certificate_not_replayable(self):
        oracle = SingleResistingIFO(1.0, 10.0, 1.0, 64)
        trace = run_solver(SolverConfig("gd", 5), oracle)
        with pytest.raises(ContractViolation):
            transcript_replay_check(gd_run(5), oracle.finalize(trace.x_final))


def test_randomized_not_asserted():
    adv = ResistingIFO(2, 1.0, 11.0, 1.0, 64)
    trace = run_solver(SolverConfig("sgd", 20, seed=0), adv)
    cert = adv.finalize(trace.x_final)
    assert assert_certificate(cert, deterministic=False) is None
    assert cert.status == NOT_ASSERTED and cert.passed is None
    assert assert_certificate(cert, deterministic=True) is cert.holds


def test_rho_consistent_with_gamma():
    st = ResistingState(1.0, 9.0, rho_for_norm(3.0, 0.5), 64)
    assert st.gamma == pytest.approx(3.0, rel=1e-14)

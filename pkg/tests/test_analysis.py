import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifobound.analysis import (
    REGIME_LARGE,
    REGIME_SMALL,
    concentration_check,
    empirical_spectrum,
    gamma_agm,
    gamma_asdca,
    gamma_sag,
    log_rate_q,
    lower_bound_calls,
    lower_bound_curve,
    magic_bound_margin,
    rate_q,
    rate_report,
    regime_table,
)
from ifobound.errors import ContractViolation
from ifobound.problems import RlsDataset, rate_from_kappa, sample_sphere_dataset


class TestRate:
    def test_examples(self):
        assert rate_q(1.0, 7) == 0.0
        assert rate_q(5.0, 4) == pytest.approx(3 - 2 * math.sqrt(2), rel=1e-14)
        assert rate_q(5.0, 4) == pytest.approx(0.1715729, abs=1e-7)
        assert rate_q(4.0, 1) == pytest.approx(1 / 3, rel=1e-15)

    def test_domain(self):
        with pytest.raises(ContractViolation):
            rate_q(0.5, 1)
        with pytest.raises(ContractViolation):
            rate_q(2.0, 0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1.0, 1e8))
    def test_single_function_rate(self, kappa):
        assert rate_q(kappa, 1) == rate_from_kappa(kappa)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1.0 + 1e-6, 1e8), st.integers(1, 10_000))
    def test_log_rate(self, kappa, n):
        q = rate_q(kappa, n)
        assert 0 <= q < 1
        assert log_rate_q(kappa, n) == pytest.approx(math.log(q), rel=1e-9, abs=1e-300)

    def test_report(self):
        r = rate_report(101.0, 8, gamma=2.0)
        assert r.kappa_c == pytest.approx(13.5)
        assert r.kappa_c <= r.kappa
        assert rate_report(9.0, 1).kappa_c == 9.0


class TestCurve:
    def test_below_n(self):
        assert lower_bound_curve(2.5, 50.0, 6, 5).value == 2.5
        assert lower_bound_curve(2.5, 50.0, 6, 0).value == 2.5

    def test_example(self):
        b = lower_bound_curve(1.0, 5.0, 2, 4)
        assert rate_q(5.0, 2) == pytest.approx(2 - math.sqrt(3), rel=1e-14)
        assert b.value == pytest.approx((7 - 4 * math.sqrt(3)) ** 2, rel=1e-12)
        assert b.value == pytest.approx(5.1548e-3, rel=1e-4)

    def test_underflow_kept_in_log(self):
        b = lower_bound_curve(1.0, 1e4, 2, 10 ** 6)
        assert b.value == 0.0 and math.isfinite(b.log) and b.log < -745

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1.0, 1e6), st.integers(1, 50), st.floats(0.01, 100.0))
    def test_monotone(self, kappa, n, gamma):
        logs = [lower_bound_curve(gamma, kappa, n, K).log for K in range(0, 4 * n + 3)]
        assert all(b <= a for a, b in zip(logs, logs[1:]))
        assert lower_bound_curve(gamma, kappa, n, n).value <= gamma

    def test_errors(self):
        with pytest.raises(ContractViolation):
            lower_bound_curve(1.0, 2.0, 1, -1)


class TestCalls:
    def test_eps_near_one(self):
        assert lower_bound_calls(5, 100.0, 1 - 1e-12)[0] == 5

    def test_example(self):
        assert lower_bound_calls(1, 4.0, math.exp(-2))[0] == 1

    def test_exact_threshold(self):
        n, kappa, eps = 8, 101.0, 1e-6
        K, _ = lower_bound_calls(n, kappa, eps)
        assert lower_bound_curve(1.0, kappa, n, K).value <= eps * (1 + 1e-12)
        assert lower_bound_curve(1.0, kappa, n, K - 1).value > eps

    def test_ratio_grid(self):
        ratios = []
        for n in range(1, 65):
            for kappa in np.geomspace(2, 1e4, 25):
                for eps in 10.0 ** -np.arange(2, 13):
                    k_exact, k_closed = lower_bound_calls(n, float(kappa), float(eps))
                    ratios.append(k_exact / k_closed)
        assert 1.0 <= min(ratios) and max(ratios) <= 4.0

    def test_kappa_one(self):
        assert lower_bound_calls(3, 1.0, 0.1) == (3, 3)


class TestMagicBound:
    def test_at_two(self):
        assert magic_bound_margin(2.0) == pytest.approx(0.23725, abs=1e-5)
        direct = math.log((math.sqrt(2) - 1) / (math.sqrt(2) + 1)) + 2.0
        assert magic_bound_margin(2.0) == pytest.approx(direct, rel=1e-13)

    def test_endpoints(self):
        assert magic_bound_margin(1 + 1e-9) > 0
        assert 0 < magic_bound_margin(1e9) < 1e-12

    @pytest.mark.parametrize("grid", ["x", "x-1"])
    def test_suite(self, grid):
        if grid == "x":
            xs = np.geomspace(1 + 1e-9, 1e9, 10 ** 4)
        else:
            xs = 1 + np.geomspace(1e-9, 1e9, 10 ** 4)
        phi = np.array([magic_bound_margin(x) for x in xs])
        assert np.all(phi > 0)
        assert np.all(np.diff(phi) < 0)

    def test_domain(self):
        with pytest.raises(ContractViolation):
            magic_bound_margin(1.0)


class TestGammas:
    def test_examples(self):
        assert gamma_asdca(11.0, 10) == pytest.approx(2.0)
        assert gamma_asdca(1.0, 5) == 1.0
        assert gamma_agm(3.0, 3.0) == 1.0
        assert gamma_sag(2.0, 0.5, 4) == pytest.approx(2.0)

    def test_domain(self):
        with pytest.raises(ContractViolation):
            gamma_sag(0.0, 1.0, 1)
        with pytest.raises(ContractViolation):
            gamma_agm(1.0, -1.0)
        with pytest.raises(ContractViolation):
            gamma_asdca(0.5, 1)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 1000), st.floats(1.0, 1e6), st.floats(1.0, 1e6))
    def test_asdca_shape(self, n, k1, k2):
        lo, hi = sorted((k1, k2))
        a = gamma_asdca(lo, n) * math.sqrt(n)
        b = gamma_asdca(hi, n) * math.sqrt(n)
        assert a <= b
        assert gamma_asdca(lo, n) >= 1


class TestSpectrum:
    def test_rank_one(self):
        R, mu = 1.5, 0.01
        ds = RlsDataset(A=np.array([[R, 0.0, 0.0]]), b=np.array([0.0]), R=R, mu=mu, seed=0)
        mu_f, L_f, kf = empirical_spectrum(ds)
        assert mu_f == pytest.approx(mu, rel=1e-10)
        assert L_f == pytest.approx(mu + R * R, rel=1e-10)
        assert kf == pytest.approx(L_f / mu_f)

    def test_concentrates(self):
        spreads = []
        for n in (100, 1000, 10000):
            ds = sample_sphere_dataset(n, 10, 1.0, 1e-3, seed=1)
            mu_f, L_f, _ = empirical_spectrum(ds)
            spreads.append(L_f - mu_f)
            assert ds.mu - 1e-12 <= mu_f <= L_f <= ds.mu + ds.R ** 2 + 1e-12
        assert spreads[0] > spreads[1] > spreads[2]

    def test_literal_loss_scale(self):
        ds = sample_sphere_dataset(50, 5, 1.0, 0.1, seed=2)
        a = empirical_spectrum(ds, loss_scale=0.5)
        b = empirical_spectrum(ds, loss_scale=1.0)
        assert b[1] - ds.mu == pytest.approx(2 * (a[1] - ds.mu), rel=1e-10)


class TestConcentration:
    def test_worked_example(self):
        c = concentration_check(50, 2000, 0.01, 1.0, 1.0, 1.5)
        assert c.lhs == pytest.approx(50 / 2000 + math.log(5000) / 2000, rel=1e-14)
        assert c.lhs == pytest.approx(0.02926, abs=1e-5)
        assert c.rhs == pytest.approx(1 / 18, rel=1e-14)
        assert c.satisfied
        z = math.sqrt(50 / 2000) + math.sqrt(math.log(200) / 2000)
        assert c.z == pytest.approx(z, rel=1e-14)
        assert c.deviation_factor == pytest.approx(max(z, z * z))

    def test_large_n(self):
        assert concentration_check(50, 10 ** 9, 0.01, kappa_f=10.0).satisfied

    def test_rhs_monotone(self):
        rhs = [concentration_check(10, 100, 0.1, kappa_f=k).rhs for k in (1, 2, 4, 8)]
        assert all(b < a for a, b in zip(rhs, rhs[1:]))

    def test_domain(self):
        with pytest.raises(ContractViolation):
            concentration_check(10, 100, 1.5)


class TestRegime:
    def test_small_kappa(self):
        n = 2000
        ds = sample_sphere_dataset(n, 50, 1.0, 1.0 / n, seed=0)
        mu_f, L_f, _ = empirical_spectrum(ds)
        rep = regime_table(n, ds.mu, ds.smoothness(), mu_f, L_f)
        assert rep.regime == REGIME_SMALL
        assert max(rep.gamma_asdca, rep.gamma_sag, rep.gamma_agm) <= 3
        assert "AGM" in rep.table() and rep.notes == ()

    def test_large_kappa(self):
        n, mu, L = 100, 1e-6, 1.0
        rep = regime_table(n, mu, L, 0.1, 0.5)
        assert rep.regime == REGIME_LARGE
        assert rep.gamma_asdca > 10 * rep.gamma_sag
        assert rep.ordering[-1] == "ASDCA"

    def test_single_component(self):
        rep = regime_table(1, 0.1, 2.0, 0.5, 1.5)
        assert rep.gamma_sag == pytest.approx(1 + 2.0 / 0.5)
        assert rep.gamma_agm == pytest.approx(math.sqrt(3.0))
        assert rep.ordering == ()
        assert rep.to_dict()["notes"]

    def test_inconsistent_constants_flagged(self):
        rep = regime_table(10, 1.0, 2.0, 0.5, 1.0)
        assert any("violate" in note for note in rep.notes)

"""Tests for generalization-bound calculators: classic inequalities, norm
profiles, spectral margin bounds, PAC-Bayes bounds, the stochastic-scorer
optimizer, code-length priors, and margin statistics."""

import math

import numpy as np
import pytest

from dltl import genbounds as gb
from dltl.netcore import NetConfig


class TestClassicBounds:
    def test_hoeffding_radius(self):
        """sqrt(log(1/delta) / (2m)); frozen at m = 10^4, delta = 0.01."""
        out = gb.classic_bounds(10_000, 0.01)
        np.testing.assert_allclose(out["hoeffding_eps"], 0.015174271293851465, rtol=1e-12)
        assert "sauer_growth" not in out

    def test_sauer_and_vc_rademacher(self):
        """(e m / d)^d at d = 1 is e m; the Rademacher bound follows the
        explicit square-root formula."""
        out = gb.classic_bounds(10, 0.5, vc_dim=1)
        np.testing.assert_allclose(out["sauer_growth"], math.e * 10, rtol=1e-12)
        np.testing.assert_allclose(out["vc_rademacher"], 0.89394991733922, rtol=1e-12)
        expect = math.sqrt((2.0 / 10) * (math.log(2.0) + 1.0 + math.log(10)))
        np.testing.assert_allclose(out["vc_rademacher"], expect, rtol=1e-12)

    def test_hoeffding_monotone(self):
        """Shrinks with m, grows as delta shrinks."""
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = int(rng.integers(10, 10_000))
            delta = float(rng.uniform(0.01, 0.5))
            base = gb.classic_bounds(m, delta)["hoeffding_eps"]
            assert gb.classic_bounds(2 * m, delta)["hoeffding_eps"] < base
            assert gb.classic_bounds(m, delta / 2)["hoeffding_eps"] > base

    def test_validation(self):
        with pytest.raises(ValueError, match="sample size"):
            gb.classic_bounds(0, 0.1)
        with pytest.raises(ValueError, match="delta"):
            gb.classic_bounds(10, 1.5)
        with pytest.raises(ValueError, match="d < m"):
            gb.classic_bounds(10, 0.1, vc_dim=10)
        with pytest.raises(ValueError, match="vc dimension"):
            gb.classic_bounds(10, 0.1, vc_dim=0)


class TestNormProfile:
    def test_norm_chain_on_random_matrices(self):
        """spectral <= frobenius <= two_one holds for every matrix."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            shape = (int(rng.integers(1, 8)), int(rng.integers(1, 8)))
            profile = gb.norm_profile([rng.standard_normal(shape)])
            s, f, b = profile.spectral[0], profile.frobenius[0], profile.two_one[0]
            assert s <= f + 1e-12
            assert f <= b + 1e-12

    def test_norm_values_on_known_matrix(self):
        w = np.array([[3.0, 0.0], [0.0, 4.0]])
        profile = gb.norm_profile([w])
        np.testing.assert_allclose(profile.spectral[0], 4.0, rtol=1e-12)
        np.testing.assert_allclose(profile.frobenius[0], 5.0, rtol=1e-12)
        np.testing.assert_allclose(profile.two_one[0], 7.0, rtol=1e-12)
        assert profile.shapes == ((2, 2),)
        assert profile.max_width == 2

    def test_chain_violations_rejected(self):
        with pytest.raises(ValueError, match="norm chain"):
            gb.NormProfile(spectral=(2.0,), frobenius=(1.0,), two_one=(3.0,),
                           shapes=((2, 2),))
        with pytest.raises(ValueError, match="norm chain"):
            gb.NormProfile(spectral=(1.0,), frobenius=(3.0,), two_one=(2.0,),
                           shapes=((2, 2),))
        with pytest.raises(ValueError, match="one entry per layer"):
            gb.NormProfile(spectral=(1.0, 1.0), frobenius=(1.0,), two_one=(1.0,),
                           shapes=((2, 2),))


class TestSpectralComplexities:
    def test_covering_complexity_all_ones(self):
        """Two unit layers give (1 + 1)^{3/2} = 2 sqrt(2)."""
        value = gb.spectral_complexity_covering((1.0, 1.0), (1.0, 1.0))
        np.testing.assert_allclose(value, 2.0 * math.sqrt(2.0), rtol=1e-12)

    def test_covering_complexity_homogeneous(self):
        """Scaling every s_l and b_l by beta scales the value by beta^{L+1}."""
        rng = np.random.default_rng(2)
        s = tuple(rng.uniform(0.5, 2.0, size=3))
        b = tuple(v * rng.uniform(1.0, 2.0) for v in s)
        base = gb.spectral_complexity_covering(s, b)
        beta = 1.7
        scaled = gb.spectral_complexity_covering(
            tuple(beta * v for v in s), tuple(beta * v for v in b)
        )
        np.testing.assert_allclose(scaled / base, beta**3, rtol=1e-10)
        np.testing.assert_allclose(
            gb.spectral_complexity_covering((1.7, 1.7), (1.7, 1.7)),
            2.0 * math.sqrt(2.0) * 2.89,
            rtol=1e-12,
        )

    def test_ratio_complexity_identity_layers(self):
        """R(I_2, I_2) = 1 * sqrt(2 + 2) = 2."""
        np.testing.assert_allclose(
            gb.spectral_complexity_ratio([np.eye(2), np.eye(2)]), 2.0, rtol=1e-12
        )

    def test_ratio_complexity_rescaling_invariant(self):
        """Balanced rescaling W_l -> (beta / |W_l|_2) W_l with beta the
        geometric mean of the spectral norms leaves R unchanged."""
        rng = np.random.default_rng(3)
        weights = [rng.standard_normal((4, 4)) for _ in range(3)]
        base = gb.spectral_complexity_ratio(weights)
        spectrals = [np.linalg.svd(w, compute_uv=False)[0] for w in weights]
        beta = math.exp(np.mean(np.log(spectrals)))
        rescaled = [(beta / s) * w for w, s in zip(weights, spectrals)]
        np.testing.assert_allclose(gb.spectral_complexity_ratio(rescaled), base, rtol=1e-10)

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            gb.spectral_complexity_covering((0.0, 1.0), (1.0, 1.0))
        with pytest.raises(ValueError, match="zero layer"):
            gb.spectral_complexity_ratio([np.zeros((2, 2))])


class TestBartlettBound:
    def _unit_profile(self):
        return gb.NormProfile(spectral=(1.0, 1.0), frobenius=(1.0, 1.0),
                              two_one=(1.0, 1.0), shapes=((4, 4), (4, 4)))

    def test_frozen_value(self):
        report = gb.bartlett_bound(self._unit_profile(), x_norm_f=2.0, gamma=1.0,
                                   m=50_000, delta=0.05)
        np.testing.assert_allclose(report.bound, 0.04426317985476634, rtol=1e-10)
        assert report.details["in_validity_regime"]
        assert report.family == "bartlett"

    def test_margin_risk_added(self):
        base = gb.bartlett_bound(self._unit_profile(), 2.0, 1.0, 50_000, 0.05)
        shifted = gb.bartlett_bound(self._unit_profile(), 2.0, 1.0, 50_000, 0.05,
                                    margin_risk=0.25)
        np.testing.assert_allclose(shifted.bound - base.bound, 0.25, rtol=1e-12)

    def test_monotone_in_m_and_gamma(self):
        rng = np.random.default_rng(4)
        profile = self._unit_profile()
        for _ in range(20):
            m = int(rng.integers(10_000, 100_000))
            gamma = float(rng.uniform(0.5, 2.0))
            base = gb.bartlett_bound(profile, 2.0, gamma, m, 0.05).bound
            assert gb.bartlett_bound(profile, 2.0, gamma, 4 * m, 0.05).bound < base
            assert gb.bartlett_bound(profile, 2.0, 2 * gamma, m, 0.05).bound < base

    def test_out_of_regime_clamps_to_one(self):
        report = gb.bartlett_bound(self._unit_profile(), 2.0, 1e-4, 10, 0.05)
        assert not report.details["in_validity_regime"]
        assert report.bound == 1.0

    def test_validation(self):
        profile = self._unit_profile()
        with pytest.raises(ValueError, match="gamma"):
            gb.bartlett_bound(profile, 2.0, 0.0, 100, 0.05)
        with pytest.raises(ValueError, match="X"):
            gb.bartlett_bound(profile, 0.0, 1.0, 100, 0.05)
        with pytest.raises(ValueError, match="margin risk"):
            gb.bartlett_bound(profile, 2.0, 1.0, 100, 0.05, margin_risk=1.5)


class TestAPosterioriGrid:
    def _profile(self, s, b):
        f = tuple((si + bi) / 2 for si, bi in zip(s, b))
        shapes = tuple((2, 2) for _ in s)
        return gb.NormProfile(spectral=s, frobenius=f, two_one=b, shapes=shapes)

    def test_budget_indices_and_delta_star(self):
        """Norms in [0.5, 1) at two hidden layers give index 2 everywhere, so
        delta* = delta / 6^6."""
        profile = self._profile((0.6, 0.6, 0.6), (0.9, 0.9, 0.9))
        out = gb.a_posteriori_grid(profile, 0.05)
        assert out["i_star"] == (2, 2, 2)
        assert out["j_star"] == (2, 2, 2)
        np.testing.assert_allclose(out["delta_star"], 0.05 / 6**6, rtol=1e-12)
        np.testing.assert_allclose(
            out["log_inv_delta_star"], math.log(6**6 / 0.05), rtol=1e-12
        )

    def test_class_strictly_contains_the_norm(self):
        """i*/L > s and j*/L > b with i*, j* minimal."""
        profile = self._profile((0.6, 1.4, 0.3), (0.9, 2.0, 0.5))
        out = gb.a_posteriori_grid(profile, 0.1)
        n_hidden = 2
        for idx, value in zip(out["i_star"], profile.spectral):
            assert idx / n_hidden > value
            assert (idx - 1) / n_hidden <= value
        for idx, value in zip(out["j_star"], profile.two_one):
            assert idx / n_hidden > value

    def test_budget_telescopes_to_delta(self):
        """sum_{i,j >= 1} delta / prod_l i(i+1) j(j+1) = delta, since each
        index contributes sum 1/(i(i+1)) = 1; numerical truncation."""
        inv = sum(1.0 / (i * (i + 1)) for i in range(1, 4000))
        np.testing.assert_allclose(inv**4, 1.0, rtol=2e-3)

    def test_validation(self):
        single = gb.NormProfile(spectral=(1.0,), frobenius=(1.0,), two_one=(1.0,),
                                shapes=((2, 2),))
        with pytest.raises(ValueError, match="two layers"):
            gb.a_posteriori_grid(single, 0.05)


class TestNeyshaburBound:
    def test_identity_layers_penalty_formula(self):
        """With R(theta) = 2 for two identity layers the penalty follows the
        explicit formula term by term."""
        weights = [np.eye(2), np.eye(2)]
        report = gb.neyshabur_bound(weights, gamma=1.0, B=1.0, m=1000, delta=0.05)
        depth, width, comp = 2, 2, 2.0
        expect_sq = (
            math.log(8.0 * depth * 1000 / 0.05)
            + math.log(1000) / (2.0 * depth)
            + 8.0 * math.e**4 * (comp / 1.0) ** 2 * depth**2 * width
            * math.log(2.0 * depth * width)
        ) / (2.0 * 1000 - 1.0)
        np.testing.assert_allclose(report.bound, math.sqrt(expect_sq), rtol=1e-12)
        assert report.details["margin_risk"] is None

    def test_margin_stats_added(self):
        config = NetConfig(widths=(2, 3, 1), activation="relu")
        rng = np.random.default_rng(5)
        weights = [rng.standard_normal((3, 2)), rng.standard_normal((1, 3))]
        x = rng.standard_normal((8, 2))
        y = np.sign(rng.standard_normal(8))
        stats = gb.margin_stats(weights, config, (x, y), gamma=0.5)
        base = gb.neyshabur_bound(weights, 0.5, 1.0, 8, 0.1)
        with_risk = gb.neyshabur_bound(weights, 0.5, 1.0, 8, 0.1, margin_stats=stats)
        np.testing.assert_allclose(with_risk.bound - base.bound, stats.hard_risk,
                                   rtol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            gb.neyshabur_bound([np.eye(2)], gamma=-1.0, B=1.0, m=10, delta=0.1)
        with pytest.raises(ValueError, match="no weight"):
            gb.neyshabur_bound([], gamma=1.0, B=1.0, m=10, delta=0.1)


class TestGaussianKL:
    def test_zero_for_matching_distributions(self):
        post = gb.GaussianPosterior(mean=np.ones(3), log_var=np.full(3, -1.0),
                                    prior_mean=np.ones(3), prior_log_var=-1.0)
        assert gb.gaussian_kl(post) == 0.0

    def test_unit_mean_shift(self):
        """Equal unit variances, one dimension, unit shift: KL = 1/2."""
        post = gb.GaussianPosterior(mean=np.array([1.0]), log_var=np.array([0.0]),
                                    prior_mean=np.array([0.0]), prior_log_var=0.0)
        np.testing.assert_allclose(gb.gaussian_kl(post), 0.5, rtol=1e-12)

    def test_against_direct_formula(self):
        rng = np.random.default_rng(6)
        mean = rng.standard_normal(4)
        log_var = rng.uniform(-2.0, 1.0, size=4)
        prior_mean = rng.standard_normal(4)
        lam_star = 0.3
        post = gb.GaussianPosterior(mean=mean, log_var=log_var,
                                    prior_mean=prior_mean, prior_log_var=lam_star)
        shift = mean - prior_mean
        expect = 0.5 * (
            math.exp(-lam_star) * (np.sum(np.exp(log_var)) + shift @ shift)
            + 4 * lam_star - np.sum(log_var) - 4
        )
        np.testing.assert_allclose(gb.gaussian_kl(post), expect, rtol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="sizes differ"):
            gb.GaussianPosterior(mean=np.ones(2), log_var=np.ones(3),
                                 prior_mean=np.ones(2), prior_log_var=0.0)
        with pytest.raises(ValueError, match="finite"):
            gb.GaussianPosterior(mean=np.array([np.inf]), log_var=np.zeros(1),
                                 prior_mean=np.zeros(1), prior_log_var=0.0)


class TestMcAllester:
    def test_frozen_zero_kl_value(self):
        """sqrt(log(4m/delta) / (2m - 1)) at m = 1000, delta = 0.05."""
        report = gb.pacbayes_mcallester(1000, 0.05, kl=0.0)
        np.testing.assert_allclose(report.bound, 0.07515127952493642, rtol=1e-12)
        np.testing.assert_allclose(
            report.bound, math.sqrt(math.log(4000 / 0.05) / 1999), rtol=1e-12
        )

    def test_monotone_in_kl_and_m(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            m = int(rng.integers(100, 50_000))
            kl = float(rng.uniform(0.0, 50.0))
            base = gb.pacbayes_mcallester(m, 0.05, kl=kl).bound
            assert gb.pacbayes_mcallester(m, 0.05, kl=kl + 1.0).bound > base
            assert gb.pacbayes_mcallester(4 * m, 0.05, kl=kl).bound < base

    def test_posterior_route_matches_kl_route(self):
        post = gb.GaussianPosterior(mean=np.array([1.0]), log_var=np.array([0.0]),
                                    prior_mean=np.array([0.0]), prior_log_var=0.0)
        via_post = gb.pacbayes_mcallester(500, 0.1, posterior=post)
        via_kl = gb.pacbayes_mcallester(500, 0.1, kl=0.5)
        np.testing.assert_allclose(via_post.bound, via_kl.bound, rtol=1e-12)

    def test_risk_sampling(self):
        """A constant risk_fn contributes itself with zero standard error."""
        post = gb.GaussianPosterior(mean=np.zeros(2), log_var=np.zeros(2),
                                    prior_mean=np.zeros(2), prior_log_var=0.0)
        report = gb.pacbayes_mcallester(1000, 0.05, posterior=post,
                                        risk_fn=lambda theta: 0.25, samples=50)
        np.testing.assert_allclose(
            report.bound, 0.25 + report.details["penalty"], rtol=1e-12
        )
        assert report.details["empirical_risk_se"] == 0.0

    def test_validation(self):
        post = gb.GaussianPosterior(mean=np.zeros(1), log_var=np.zeros(1),
                                    prior_mean=np.zeros(1), prior_log_var=0.0)
        with pytest.raises(ValueError, match="exactly one"):
            gb.pacbayes_mcallester(100, 0.05)
        with pytest.raises(ValueError, match="exactly one"):
            gb.pacbayes_mcallester(100, 0.05, kl=1.0, posterior=post)
        with pytest.raises(ValueError, match="at most one"):
            gb.pacbayes_mcallester(100, 0.05, posterior=post,
                                   risk_fn=lambda t: 0.0, empirical_risk=0.1)
        with pytest.raises(ValueError, match="needs a posterior"):
            gb.pacbayes_mcallester(100, 0.05, kl=1.0, risk_fn=lambda t: 0.0)
        with pytest.raises(ValueError, match="nonnegative"):
            gb.pacbayes_mcallester(100, 0.05, kl=-1.0)
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            gb.pacbayes_mcallester(100, 0.05, posterior=post,
                                   risk_fn=lambda t: 2.0, samples=5)


class TestDziugaiteRoy:
    def _toy(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((20, 3))
        y = np.sign(x @ np.array([1.0, -0.5, 0.25]))
        post = gb.GaussianPosterior(
            mean=np.zeros(3), log_var=-3.0 * np.ones(3),
            prior_mean=np.zeros(3), prior_log_var=-3.0,
        )
        return post, (x, y)

    def test_frozen_trajectory(self):
        """150 GD steps on the fixed toy problem: frozen start and end."""
        post, data = self._toy()
        report = gb.dziugaite_roy_optimize(post, data, b=100.0, c=0.1,
                                           delta=0.05, steps=150)
        trace = report.details["objective_trace"]
        np.testing.assert_allclose(trace[0], 1.6691266084067649, rtol=1e-9)
        np.testing.assert_allclose(report.bound, 1.1010605836853613, rtol=1e-9)
        assert report.details["steps_taken"] == 150

    def test_trace_non_increasing(self):
        """The line search only accepts strict decreases."""
        post, data = self._toy()
        report = gb.dziugaite_roy_optimize(post, data, b=100.0, c=0.1,
                                           delta=0.05, steps=150)
        trace = np.array(report.details["objective_trace"])
        assert np.all(np.diff(trace) < 0)

    def test_bound_is_surrogate_plus_penalty_on_grid(self):
        post, data = self._toy()
        report = gb.dziugaite_roy_optimize(post, data, b=100.0, c=0.1,
                                           delta=0.05, steps=60)
        d = report.details
        np.testing.assert_allclose(report.bound, d["surrogate_loss"] + d["penalty"],
                                   rtol=1e-12)
        np.testing.assert_allclose(
            d["lambda_star"], math.log(0.1) - d["j_star"] / 100.0, rtol=1e-12
        )
        np.testing.assert_allclose(d["delta_j"],
                                   6 * 0.05 / (math.pi**2 * d["j_star"] ** 2),
                                   rtol=1e-12)

    def test_zero_steps_reports_initial_objective(self):
        post, data = self._toy()
        report = gb.dziugaite_roy_optimize(post, data, b=100.0, c=0.1,
                                           delta=0.05, steps=0)
        assert report.details["steps_taken"] == 0
        assert len(report.details["objective_trace"]) == 1
        np.testing.assert_allclose(report.details["bound_continuous"],
                                   report.details["objective_trace"][0], rtol=1e-12)

    def test_validation(self):
        post, data = self._toy()
        with pytest.raises(ValueError, match="must be positive"):
            gb.dziugaite_roy_optimize(post, data, b=-1.0, c=0.1, delta=0.05, steps=1)
        with pytest.raises(ValueError, match="nonnegative"):
            gb.dziugaite_roy_optimize(post, data, b=100.0, c=0.1, delta=0.05, steps=-1)
        x, y = data
        with pytest.raises(ValueError, match="exactly \\+-1"):
            gb.dziugaite_roy_optimize(post, (x, 0.5 * y), b=100.0, c=0.1,
                                      delta=0.05, steps=1)
        with pytest.raises(ValueError, match="dimension"):
            gb.dziugaite_roy_optimize(post, (x[:, :2], y), b=100.0, c=0.1,
                                      delta=0.05, steps=1)


class TestCodeLengths:
    def test_kl_of_uniform_mass(self):
        """m(k) = 1, Z = 1 leaves KL = k log 2 nats."""
        np.testing.assert_allclose(gb.code_length_kl(8, lambda k: 1.0),
                                   8 * math.log(2.0), rtol=1e-12)

    def test_kl_mass_and_normalizer_terms(self):
        value = gb.code_length_kl(10, lambda k: 0.25, z=2.0)
        np.testing.assert_allclose(
            value, math.log(2.0) + 10 * math.log(2.0) - math.log(0.25), rtol=1e-12
        )

    def test_naive_code_length_frozen(self):
        """100 nonzeros in 10^6 weights with a 16-entry codebook."""
        np.testing.assert_allclose(gb.naive_code_length(100, 10**6, 16),
                                   2905.156856932417, rtol=1e-12)
        expect = 100 * (math.log2(10**6) + 4.0) + 32.0 * 16
        np.testing.assert_allclose(gb.naive_code_length(100, 10**6, 16), expect,
                                   rtol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="code length"):
            gb.code_length_kl(0, lambda k: 1.0)
        with pytest.raises(ValueError, match="mass"):
            gb.code_length_kl(4, lambda k: 0.0)
        with pytest.raises(ValueError, match="k ="):
            gb.naive_code_length(-1, 10, 2)


class TestMarginStats:
    def _setup(self):
        config = NetConfig(widths=(2, 3, 1), activation="relu")
        rng = np.random.default_rng(8)
        weights = [rng.standard_normal((3, 2)), rng.standard_normal((1, 3))]
        x = rng.standard_normal((12, 2))
        y = np.sign(rng.standard_normal(12))
        return config, weights, x, y

    def test_zero_gamma_is_zero_one_risk(self):
        config, weights, x, y = self._setup()
        stats = gb.margin_stats(weights, config, (x, y), gamma=0.0)
        from dltl.netcore import forward

        scores = forward(config, weights, x.T).output.ravel()
        np.testing.assert_allclose(stats.margins, y * scores, rtol=1e-12)
        np.testing.assert_allclose(stats.hard_risk, np.mean(y * scores < 0.0))
        np.testing.assert_allclose(stats.ramp_risk, np.mean(y * scores <= 0.0))

    def test_risks_monotone_in_gamma(self):
        config, weights, x, y = self._setup()
        gammas = [0.1, 0.5, 1.0, 2.0]
        hard = [gb.margin_stats(weights, config, (x, y), g).hard_risk for g in gammas]
        ramp = [gb.margin_stats(weights, config, (x, y), g).ramp_risk for g in gammas]
        assert all(a <= b for a, b in zip(hard, hard[1:]))
        assert all(a <= b for a, b in zip(ramp, ramp[1:]))

    def test_ramp_between_zero_one_and_hard(self):
        """0/1 at gamma=0 <= ramp at gamma <= hard at gamma."""
        config, weights, x, y = self._setup()
        zero_one = gb.margin_stats(weights, config, (x, y), 0.0).hard_risk
        for g in (0.25, 1.0, 3.0):
            stats = gb.margin_stats(weights, config, (x, y), g)
            assert zero_one <= stats.ramp_risk <= stats.hard_risk + 1e-12

    def test_validation(self):
        config, weights, x, y = self._setup()
        with pytest.raises(ValueError, match="nonnegative"):
            gb.margin_stats(weights, config, (x, y), -0.5)
        with pytest.raises(ValueError, match="exactly \\+-1"):
            gb.margin_stats(weights, config, (x, 0.5 * y), 0.1)
        wide = NetConfig(widths=(2, 3, 2), activation="relu")
        with pytest.raises(ValueError, match="scalar output"):
            gb.margin_stats(weights, wide, (x, y), 0.1)

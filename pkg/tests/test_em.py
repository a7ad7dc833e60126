import numpy as np
import pytest

from dyncs.em import em_loop, em_update, em_update_raw, init_heuristics, run_filter_em
from dyncs.model import DynamicDataset, ModelParams, generate_synthetic, rho_for_variance
from dyncs.posteriors import (
    PosteriorEstimates,
    support_marginal,
    support_pairwise,
    theta_crossmoment,
    theta_moments,
)
from dyncs.scheduler import SolverConfig, run_smooth

from oracles import quadrature_gauss_product3, quadrature_pairwise_cross


def params_with(sigma2=1.0, **kw):
    base = dict(lam=0.2, p01=0.05, zeta=0.0, alpha=0.1, sigma_e2=1e-2)
    base.update(kw)
    base["rho"] = base.pop("rho", rho_for_variance(sigma2, base["alpha"]))
    return ModelParams(**base)


def oracle_posteriors(dataset):
    """Exact posterior summaries computed from ground truth (zero variances)."""
    truth = dataset.truth
    s, theta = truth.s, truth.theta
    return PosteriorEstimates(
        x_mean=truth.x.copy(),
        x_var=np.zeros_like(s),
        s_prob=s.copy(),
        theta_mean=theta.copy(),
        theta_var=np.zeros_like(s),
        s_pair=s[1:] * s[:-1],
        theta_cross=np.conj(theta[1:]) * theta[:-1],
    )


class TestSupportQuantities:
    def test_marginal_values(self):
        assert support_marginal(0.5, 0.5, 0.5) == pytest.approx(0.5)
        assert support_marginal(1.0, 1.0, 1.0) == pytest.approx(1.0)
        assert support_marginal(0.3, 0.5, 0.5) == pytest.approx(0.3)

    def test_marginal_conflict_warns(self):
        with pytest.warns(UserWarning):
            out = support_marginal(np.array([0.0]), np.array([1.0]), np.array([0.0]))
        assert out[0] == 0.0

    def test_pairwise_deterministic_chain(self):
        p = ModelParams(lam=0.5, p01=0.0, alpha=0.5, rho=1.0, sigma_e2=1e-2)
        val = support_pairwise(np.array([1.0]), np.array([1.0]),
                               np.array([1.0]), np.array([1.0]), p)
        assert val[0] == pytest.approx(1.0)

    def test_pairwise_uninformative_half(self):
        p = ModelParams(lam=0.5, p01=0.5, alpha=0.5, rho=1.0, sigma_e2=1e-2)
        assert p.p10 == pytest.approx(0.5)
        val = support_pairwise(np.array([0.5]), np.array([0.5]),
                               np.array([0.5]), np.array([0.5]), p)
        assert val[0] == pytest.approx(0.25)

    def test_pairwise_all_masses_zero_raises(self):
        p = ModelParams(lam=0.5, p01=0.0, alpha=0.5, rho=1.0, sigma_e2=1e-2)
        with pytest.raises(FloatingPointError):
            support_pairwise(np.array([1.0]), np.array([1.0]),
                             np.array([0.0]), np.array([1.0]), p)


class TestAmplitudeQuantities:
    def test_moments_equal_variances(self):
        m, v = theta_moments(3.0, 3.0, 0.0, 3.0, 0.0, 3.0)
        assert v == pytest.approx(1.0)
        assert m == pytest.approx(1.0)

    def test_moments_uninformative_backward_reduces_to_two_terms(self):
        m3, v3 = theta_moments(1.0, 2.0, 3.0, 4.0, 0.0, np.inf)
        v2 = 1.0 / (1 / 2.0 + 1 / 4.0)
        m2 = v2 * (1.0 / 2.0 + 3.0 / 4.0)
        assert v3 == pytest.approx(v2)
        assert m3 == pytest.approx(m2)

    def test_moments_match_quadrature(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            msgs = [
                (rng.normal() + 1j * rng.normal(), rng.uniform(0.3, 2.0))
                for _ in range(3)
            ]
            m, v = theta_moments(msgs[0][0], msgs[0][1], msgs[1][0], msgs[1][1],
                                 msgs[2][0], msgs[2][1])
            m_ref, v_ref = quadrature_gauss_product3(msgs)
            assert abs(m - m_ref) < 1e-8
            assert abs(v - v_ref) < 1e-8

    def test_crossmoment_memoryless(self):
        p = params_with(alpha=1.0, rho=2.0, zeta=0.3 + 0.1j)
        m1, v1 = 1.0 + 0.5j, 0.7
        m2, v2 = -0.4 + 0.2j, 0.5
        got = theta_crossmoment(np.array([m1]), np.array([v1]),
                                np.array([m2]), np.array([v2]), p)
        # conditional independence: cross-covariance is zero, but the factor
        # still pulls the later mean toward its own prediction
        q = p.alpha**2 * p.rho
        v2_post = 1.0 / (1 / v2 + 1 / q)
        m2_post = v2_post * (m2 / v2 + p.alpha * p.zeta / q)
        assert got[0] == pytest.approx(m1 * np.conj(m2_post), abs=1e-12)

    def test_crossmoment_static_limit_gives_second_moment(self):
        p = params_with(alpha=1e-7, sigma2=1.0, zeta=0.0)
        m1, v1, m2, v2 = 1.2 + 0.3j, 0.8, 0.9 - 0.1j, 0.6
        got = theta_crossmoment(np.array([m1]), np.array([v1]),
                                np.array([m2]), np.array([v2]), p)
        v_fused = 1.0 / (1 / v1 + 1 / v2)
        m_fused = v_fused * (m1 / v1 + m2 / v2)
        assert got[0] == pytest.approx(v_fused + abs(m_fused) ** 2, rel=1e-5)

    def test_crossmoment_matches_quadrature(self):
        p = params_with(alpha=0.35, rho=1.1, zeta=0.4 - 0.2j)
        rng = np.random.default_rng(7)
        for _ in range(3):
            m1 = rng.normal() + 1j * rng.normal()
            m2 = rng.normal() + 1j * rng.normal()
            v1, v2 = rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)
            got = theta_crossmoment(np.array([m1]), np.array([v1]),
                                    np.array([m2]), np.array([v2]), p)
            ref = quadrature_pairwise_cross(m1, v1, m2, v2, p.alpha, p.rho, p.zeta)
            assert abs(got[0] - ref) < 1e-8

    def test_crossmoment_singular_raises(self):
        p = params_with(alpha=0.5)
        with pytest.raises(FloatingPointError):
            theta_crossmoment(np.array([0.0 + 0j]), np.array([np.inf]),
                              np.array([0.0 + 0j]), np.array([np.inf]), p)


class TestEmUpdate:
    def test_all_active_first_frame_gives_lam_one(self):
        p = params_with()
        d = generate_synthetic(p, n=16, m=8, t=3, seed=0)
        post = oracle_posteriors(d)
        post.s_prob[0] = 1.0
        raw = em_update_raw(post, p, d)
        assert raw["lam"] == pytest.approx(1.0)

    def test_no_transitions_gives_p01_zero(self):
        p = params_with(lam=0.3, p01=0.0)
        d = generate_synthetic(p, n=64, m=8, t=6, seed=1)
        post = oracle_posteriors(d)
        raw = em_update_raw(post, p, d)
        assert raw["p01"] == pytest.approx(0.0, abs=1e-12)

    def test_zeta_single_frame_is_mean_of_theta_means(self):
        p = params_with()
        d = generate_synthetic(p, n=32, m=16, t=1, seed=2)
        post = oracle_posteriors(d)
        raw = em_update_raw(post, p, d)
        assert raw["zeta"] == pytest.approx(complex(np.mean(post.theta_mean[0])))

    def test_oracle_posteriors_recover_generating_parameters(self):
        truth_p = ModelParams(lam=0.20, p01=0.10, zeta=1.0 + 0.5j, alpha=0.15,
                              rho=rho_for_variance(1.0, 0.15), sigma_e2=5e-3)
        d = generate_synthetic(truth_p, n=500, m=100, t=25, seed=3)
        post = oracle_posteriors(d)
        raw = em_update_raw(post, truth_p, d)
        assert raw["lam"] == pytest.approx(truth_p.lam, rel=0.20)
        assert raw["p01"] == pytest.approx(truth_p.p01, rel=0.20)
        assert abs(raw["zeta"] - truth_p.zeta) / abs(truth_p.zeta) < 0.20
        assert raw["alpha"] == pytest.approx(truth_p.alpha, rel=0.20)
        assert raw["rho"] == pytest.approx(truth_p.rho, rel=0.20)
        assert raw["sigma_e2"] == pytest.approx(truth_p.sigma_e2, rel=0.20)

    def test_oracle_posterior_recovery_tightens_with_size(self):
        # same consistency check at N=5000: sampling error shrinks below 5%
        truth_p = ModelParams(lam=0.20, p01=0.10, zeta=1.0 + 0.5j, alpha=0.15,
                              rho=rho_for_variance(1.0, 0.15), sigma_e2=5e-3)
        d = generate_synthetic(truth_p, n=5000, m=50, t=25, seed=17)
        raw = em_update_raw(oracle_posteriors(d), truth_p, d)
        assert raw["lam"] == pytest.approx(truth_p.lam, rel=0.05)
        assert raw["p01"] == pytest.approx(truth_p.p01, rel=0.05)
        assert abs(raw["zeta"] - truth_p.zeta) / abs(truth_p.zeta) < 0.05
        assert raw["alpha"] == pytest.approx(truth_p.alpha, rel=0.05)
        assert raw["rho"] == pytest.approx(truth_p.rho, rel=0.05)
        assert raw["sigma_e2"] == pytest.approx(truth_p.sigma_e2, rel=0.05)

    def test_clamping_keeps_domain(self):
        p = params_with()
        d = generate_synthetic(p, n=16, m=8, t=3, seed=4)
        post = oracle_posteriors(d)
        post.s_prob[:] = 1.0  # raw lam would be 1
        with pytest.warns(UserWarning):
            new = em_update(post, p, d)
        assert 0.0 < new.lam < 1.0
        assert 0.0 <= new.p01 <= 1.0
        assert new.p10 <= 1.0

    def test_per_group_learning_separates_rates(self):
        lam_a, lam_b = 0.1, 0.5
        pa = params_with(lam=lam_a, p01=0.05)
        pb = params_with(lam=lam_b, p01=0.05)
        da = generate_synthetic(pa, n=300, m=50, t=12, seed=5)
        db = generate_synthetic(pb, n=300, m=50, t=12, seed=6)
        # stitch two populations into one dataset (operators differ per half,
        # but the oracle posteriors never touch them)
        s = np.concatenate([da.truth.s, db.truth.s], axis=1)
        theta = np.concatenate([da.truth.theta, db.truth.theta], axis=1)
        post = PosteriorEstimates(
            x_mean=s * theta, x_var=np.zeros_like(s), s_prob=s.copy(),
            theta_mean=theta, theta_var=np.zeros_like(s),
            s_pair=s[1:] * s[:-1], theta_cross=np.conj(theta[1:]) * theta[:-1],
        )
        d = generate_synthetic(params_with(lam=0.3), n=600, m=50, t=12, seed=7)
        groups = np.repeat([0, 1], 300)
        result = em_update(post, pa, d, groups=groups)
        assert result[0].lam == pytest.approx(lam_a, rel=0.25)
        assert result[1].lam == pytest.approx(lam_b, rel=0.25)
        assert result[0].p01 == result[1].p01
        assert result[0].sigma_e2 == result[1].sigma_e2


class TestInitHeuristics:
    def test_contracts(self):
        p = params_with(lam=0.15, alpha=0.05, sigma2=1.0)
        d = generate_synthetic(p, n=128, m=64, t=8, seed=8, snr_db=25.0)
        init = init_heuristics(d)
        assert init.p01 == 0.10
        assert init.lam >= 0.10
        assert 1e-3 <= init.alpha <= 0.99
        assert init.rho > 0 and init.sigma_e2 > 0

    def test_alpha_tracks_correlation_with_shared_operator(self):
        # With a time-invariant operator the lag-one measurement correlation
        # estimates 1 - alpha well.
        sigma2 = 1.0
        for alpha_true in (0.05, 0.5):
            p = params_with(lam=0.3, alpha=alpha_true, sigma2=sigma2)
            d = generate_synthetic(p, n=400, m=200, t=30, seed=9, snr_db=30.0,
                                   time_invariant_a=True)
            init = init_heuristics(d)
            assert init.alpha == pytest.approx(alpha_true, abs=0.15)

    def test_zero_energy_rejected(self):
        d = generate_synthetic(params_with(), n=8, m=4, t=2, seed=10)
        dead = DynamicDataset(y=np.zeros_like(d.y), a=d.a)
        with pytest.raises(ValueError):
            init_heuristics(dead)


class TestEmLoop:
    def test_cap_zero_returns_initialization_untouched(self):
        p = params_with()
        d = generate_synthetic(p, n=32, m=16, t=4, seed=11)
        post, out_params, trace = em_loop(d, init_params=p, max_em_iters=0)
        assert out_params == p
        assert trace.n_iterations == 0
        assert post.x_mean.shape == (4, 32)

    def test_trace_length_bounded_by_cap(self):
        p = params_with(lam=0.15)
        d = generate_synthetic(p, n=48, m=24, t=5, seed=12, snr_db=25.0)
        _, _, trace = em_loop(d, init_params=d.params, max_em_iters=4, param_tol=0.0)
        assert trace.n_iterations <= 4
        assert len(trace.params_history) <= 5  # init + one per iteration

    def test_mis_set_init_recovers_near_known_parameter_run(self):
        sigma2 = 1.0
        truth = params_with(lam=0.15, p01=0.05, alpha=0.05, sigma2=sigma2)
        d = generate_synthetic(truth, n=256, m=128, t=10, seed=13, snr_db=25.0)
        true_p = d.params
        ref_state = run_smooth(d, true_p, SolverConfig())
        x = d.truth.x
        norms = np.sum(np.abs(x) ** 2, axis=1)

        def tnmse_db(mu):
            return 10 * np.log10(np.mean(np.sum(np.abs(mu - x) ** 2, axis=1) / norms))

        bad_init = true_p.replace(lam=min(2 * true_p.lam, 0.9), rho=2 * true_p.rho)
        post, learned, trace = em_loop(d, init_params=bad_init, max_em_iters=100)
        assert tnmse_db(post.x_mean) < tnmse_db(ref_state.mu) + 3.0

    def test_q_invariants_on_real_run(self):
        p = params_with(lam=0.25, p01=0.08)
        d = generate_synthetic(p, n=64, m=32, t=6, seed=14, snr_db=20.0)
        post, _, _ = em_loop(d, init_params=d.params, max_em_iters=2)
        assert np.all(post.s_prob >= 0) and np.all(post.s_prob <= 1)
        bound = np.minimum(post.s_prob[1:], post.s_prob[:-1]) + 1e-12
        assert np.all(post.s_pair <= bound)

    def test_filter_em_is_causal(self):
        p = params_with(lam=0.2)
        d = generate_synthetic(p, n=32, m=16, t=6, seed=15, snr_db=20.0)
        post1, params1, hist1 = run_filter_em(d, d.params)
        y2 = d.y.copy()
        y2[5] *= -1
        d2 = DynamicDataset(y=y2, a=d.a)
        post2, _, _ = run_filter_em(d2, d.params)
        assert np.array_equal(post1.x_mean[:5], post2.x_mean[:5])

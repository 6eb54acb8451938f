import numpy as np
import pytest

from arxnet.objective import (
    Hyperparameters,
    data_fit,
    data_logdet,
    default_hyperparameters,
    effective_variance,
    eval_L1,
    eval_L2,
    grad_v,
    posterior,
    prior_logdet,
    u_term,
    v_term,
)
from arxnet.regression import RegressionProblem, linear_layout


def make_problem(n_rows=10, p=3, m=1, k=3, seed=0, zero_phi=False):
    lay = linear_layout(p, m, node=0, k=k)
    rng = np.random.default_rng(seed)
    Phi = np.zeros((n_rows, lay.n_columns)) if zero_phi else rng.standard_normal((n_rows, lay.n_columns))
    y = rng.standard_normal(n_rows)
    return RegressionProblem(node=0, y=y, Phi=Phi, layout=lay)


def random_hyper(lay, seed=0, mode="combined", mask_self=False):
    rng = np.random.default_rng(seed)
    return Hyperparameters(
        beta=rng.lognormal(0.0, 0.7, lay.n_columns),
        gamma=rng.lognormal(0.0, 0.7, lay.n_groups),
        lam=float(rng.lognormal(-1.0, 0.5)),
        mode=mode,
        group_penalty_mask=(
            np.arange(lay.n_groups) == lay.self_index if mask_self else None
        ),
    )


def scalar_problem(phi=1.0, y=1.0):
    lay = linear_layout(1, 0, 0, 1)
    return RegressionProblem(node=0, y=np.array([y]), Phi=np.array([[phi]]), layout=lay)


class TestPosterior:
    def test_scalar_closed_form(self):
        prob = scalar_problem()
        h = Hyperparameters(beta=[2.0], gamma=[2.0], lam=1.0)
        post = posterior(prob, h)
        # precision = 1/2 + 1/2 + 1 = 2
        np.testing.assert_allclose(post.Sigma, [[0.5]])
        np.testing.assert_allclose(post.mu, [0.5])

    def test_zero_phi_prior_only(self):
        prob = make_problem(zero_phi=True)
        lay = prob.layout
        h = random_hyper(lay, seed=3)
        post = posterior(prob, h)
        np.testing.assert_allclose(post.mu, 0.0)
        np.testing.assert_allclose(np.diag(post.Sigma), effective_variance(lay, h), rtol=1e-12)

    def test_matches_independent_dense_solve(self):
        for seed in range(5):
            prob = make_problem(n_rows=10, k=3, seed=seed)
            h = random_hyper(prob.layout, seed=seed + 50)
            post = posterior(prob, h)
            # independent path: explicit precision matrix and numpy solve
            s = effective_variance(prob.layout, h)
            P = np.diag(1.0 / s) + prob.Phi.T @ prob.Phi / h.lam
            mu_ref = np.linalg.solve(P, prob.Phi.T @ prob.y / h.lam)
            sigma_ref = np.linalg.inv(P)
            np.testing.assert_allclose(post.mu, mu_ref, rtol=1e-8, atol=1e-12)
            np.testing.assert_allclose(post.Sigma, sigma_ref, rtol=1e-7, atol=1e-12)

    def test_mu_identity(self):
        prob = make_problem(n_rows=6, k=3, seed=2)  # fewer rows than columns
        h = random_hyper(prob.layout, seed=9)
        post = posterior(prob, h)
        mu_id = post.Sigma @ prob.Phi.T @ prob.y / h.lam
        np.testing.assert_allclose(post.mu, mu_id, rtol=1e-8, atol=1e-12)

    def test_paths_agree(self):
        prob = make_problem(n_rows=10, k=3, seed=4)
        h = random_hyper(prob.layout, seed=4)
        a = posterior(prob, h, _force_path="direct")
        b = posterior(prob, h, _force_path="factored")
        np.testing.assert_allclose(a.mu, b.mu, rtol=1e-8)
        np.testing.assert_allclose(a.Sigma, b.Sigma, rtol=1e-8, atol=1e-12)

    def test_pruned_coordinates_zero(self):
        prob = make_problem(seed=5)
        h = random_hyper(prob.layout, seed=5)
        beta = h.beta.copy()
        beta[[1, 4]] = 0.0
        h = h.replace(beta=beta)
        post = posterior(prob, h)
        assert post.mu[1] == 0.0 and post.mu[4] == 0.0
        assert np.all(post.Sigma[1] == 0.0) and np.all(post.Sigma[:, 4] == 0.0)

    def test_symmetry_and_psd(self):
        prob = make_problem(seed=6)
        h = random_hyper(prob.layout, seed=6)
        post = posterior(prob, h)
        np.testing.assert_allclose(post.Sigma, post.Sigma.T, atol=1e-10)
        assert np.all(np.diag(post.Sigma) >= 0)

    def test_nonpositive_lambda_rejected(self):
        prob = make_problem()
        h = random_hyper(prob.layout).replace(lam=0.0)
        with pytest.raises(ValueError):
            posterior(prob, h)


class TestObjectives:
    def test_zero_phi_closed_form(self):
        prob = make_problem(zero_phi=True, n_rows=7)
        h = random_hyper(prob.layout, seed=1)
        expected = (
            float(prob.y @ prob.y) / h.lam
            + float(np.sum(np.log(h.beta + h.gamma[prob.layout.group_of_column])))
            + 7 * np.log(h.lam)
        )
        got = eval_L1(prob, h, np.zeros(prob.layout.n_columns))
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        np.testing.assert_allclose(eval_L2(prob, h), expected, rtol=1e-12)

    def test_plugin_minimizer_reaches_L2(self):
        for seed in range(20):
            prob = make_problem(n_rows=10, k=3, seed=seed)
            h = random_hyper(prob.layout, seed=seed + 100)
            mu = posterior(prob, h).mu
            l1, l2 = eval_L1(prob, h, mu), eval_L2(prob, h)
            assert abs(l1 - l2) <= 1e-8 * max(1.0, abs(l2))

    def test_data_fit_identity(self):
        # min_w of the first two terms equals y' K^-1 y
        for seed in range(20):
            prob = make_problem(n_rows=8, k=3, seed=seed)
            h = random_hyper(prob.layout, seed=seed + 7)
            mu = posterior(prob, h).mu
            e_min = u_term(prob, h, mu)
            np.testing.assert_allclose(e_min, data_fit(prob, h), rtol=1e-8)

    def test_L1_above_L2_elsewhere(self):
        prob = make_problem(seed=3)
        h = random_hyper(prob.layout, seed=3)
        rng = np.random.default_rng(0)
        l2 = eval_L2(prob, h)
        for _ in range(10):
            w = rng.standard_normal(prob.layout.n_columns)
            assert eval_L1(prob, h, w) >= l2 - 1e-10

    def test_large_variance_limit_monotone(self):
        prob = make_problem(seed=8)
        lay = prob.layout
        fits = []
        for scale in (1.0, 10.0, 100.0, 1000.0):
            h = Hyperparameters(
                beta=np.full(lay.n_columns, scale),
                gamma=np.full(lay.n_groups, scale),
                lam=1.0,
            )
            fits.append(data_fit(prob, h))
        assert all(a >= b for a, b in zip(fits, fits[1:]))  # more prior mass, less data misfit

    def test_zero_weight_on_pruned_required(self):
        prob = make_problem(seed=9)
        h = random_hyper(prob.layout, seed=9)
        beta = h.beta.copy()
        beta[0] = 0.0
        h = h.replace(beta=beta)
        w = np.zeros(prob.layout.n_columns)
        w[0] = 0.5
        assert eval_L1(prob, h, w) == np.inf

    def test_useless_coordinate_shrink_decreases_L2(self):
        # plant a sparse truth; shrinking a decoy's variance lowers the objective
        rng = np.random.default_rng(12)
        lay = linear_layout(2, 0, 0, 2)
        Phi = rng.standard_normal((30, lay.n_columns))
        w_true = np.zeros(lay.n_columns)
        w_true[3] = 1.0
        y = Phi @ w_true + 0.05 * rng.standard_normal(30)
        prob = RegressionProblem(node=0, y=y, Phi=Phi, layout=lay)
        h = default_hyperparameters(lay, penalize_self_group=True)
        vals = []
        for b0 in (1.0, 0.1, 0.01, 1e-4):
            beta = h.beta.copy()
            beta[0] = b0  # a decoy coordinate
            vals.append(eval_L2(prob, h.replace(beta=beta, lam=0.05**2)))
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


class TestGradV:
    def test_zero_phi_closed_form(self):
        prob = make_problem(zero_phi=True, n_rows=9)
        h = random_hyper(prob.layout, seed=2)
        g = grad_v(prob, h)
        gidx = prob.layout.group_of_column
        np.testing.assert_allclose(g.g_lambda, 9 / h.lam, rtol=1e-12)
        np.testing.assert_allclose(g.g_beta, 1.0 / (h.gamma[gidx] + h.beta), rtol=1e-12)
        expected_gamma = [
            np.sum(1.0 / (h.gamma[i] + h.beta[prob.layout.group_slice(i)]))
            for i in range(prob.layout.n_groups)
        ]
        np.testing.assert_allclose(g.g_gamma, expected_gamma, rtol=1e-12)

    def test_scalar_closed_form(self):
        prob = scalar_problem()
        h = Hyperparameters(beta=[1.0], gamma=[1.0], lam=1.0)
        g = grad_v(prob, h)
        np.testing.assert_allclose(g.g_lambda, 2.0 / 3.0, rtol=1e-12)
        np.testing.assert_allclose(g.g_beta, [2.0 / 3.0], rtol=1e-12)
        np.testing.assert_allclose(g.g_gamma, [2.0 / 3.0], rtol=1e-12)

    def finite_difference(self, prob, h, rel=1e-6):
        g_beta = np.zeros_like(h.beta)
        for q in range(h.beta.size):
            step = rel * max(h.beta[q], 1e-3)
            hp = h.replace(beta=_bump(h.beta, q, step))
            hm = h.replace(beta=_bump(h.beta, q, -step))
            g_beta[q] = (v_term(prob, hp) - v_term(prob, hm)) / (2 * step)
        g_gamma = np.zeros_like(h.gamma)
        for i in range(h.gamma.size):
            step = rel * max(h.gamma[i], 1e-3)
            hp = h.replace(gamma=_bump(h.gamma, i, step))
            hm = h.replace(gamma=_bump(h.gamma, i, -step))
            g_gamma[i] = (v_term(prob, hp) - v_term(prob, hm)) / (2 * step)
        step = rel * h.lam
        g_lam = (v_term(prob, h.replace(lam=h.lam + step)) - v_term(prob, h.replace(lam=h.lam - step))) / (2 * step)
        return g_beta, g_gamma, g_lam

    @pytest.mark.parametrize("mode,mask_self", [
        ("combined", False),
        ("combined", True),
        ("element_only", False),
        ("group_only", False),
    ])
    def test_matches_finite_differences(self, mode, mask_self):
        prob = make_problem(n_rows=10, k=3, seed=11)
        h = random_hyper(prob.layout, seed=11, mode=mode, mask_self=mask_self)
        g = grad_v(prob, h)
        fd_beta, fd_gamma, fd_lam = self.finite_difference(prob, h)
        use_beta = mode in ("combined", "element_only")
        if use_beta:
            np.testing.assert_allclose(g.g_beta, -fd_beta, rtol=1e-5, atol=1e-8)
        if mode in ("combined", "group_only"):
            np.testing.assert_allclose(g.g_gamma, -fd_gamma, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(g.g_lambda, -fd_lam, rtol=1e-5)

    def test_masked_group_reports_zero(self):
        prob = make_problem(seed=13)
        h = random_hyper(prob.layout, seed=13, mask_self=True)
        g = grad_v(prob, h)
        assert g.g_gamma[prob.layout.self_index] == 0.0

    def test_strictly_positive_on_active(self):
        for seed in range(10):
            prob = make_problem(seed=seed)
            h = random_hyper(prob.layout, seed=seed)
            g = grad_v(prob, h)
            assert np.all(g.g_beta > 0)
            assert np.all(g.g_gamma > 0)
            assert g.g_lambda > 0

    def test_paths_agree(self):
        prob = make_problem(n_rows=20, k=3, seed=14)
        h = random_hyper(prob.layout, seed=14)
        ga = grad_v(prob, h, _force_path="direct")
        gb = grad_v(prob, h, _force_path="factored")
        np.testing.assert_allclose(ga.g_beta, gb.g_beta, rtol=1e-8)
        np.testing.assert_allclose(ga.g_gamma, gb.g_gamma, rtol=1e-8)
        np.testing.assert_allclose(ga.g_lambda, gb.g_lambda, rtol=1e-8)
        np.testing.assert_allclose(
            data_logdet(prob, h, "direct"), data_logdet(prob, h, "factored"), rtol=1e-10
        )
        np.testing.assert_allclose(
            data_fit(prob, h, "direct"), data_fit(prob, h, "factored"), rtol=1e-8
        )


class TestModes:
    def test_element_only_matches_classic_formulas(self):
        prob = make_problem(seed=15)
        lay = prob.layout
        rng = np.random.default_rng(15)
        beta = rng.lognormal(0.0, 0.5, lay.n_columns)
        lam = 0.5
        h = Hyperparameters(beta=beta, gamma=np.ones(lay.n_groups), lam=lam, mode="element_only")
        # classic quantities built directly
        K = lam * np.eye(prob.n_rows) + (prob.Phi * beta) @ prob.Phi.T
        Kinv = np.linalg.inv(K)
        np.testing.assert_allclose(
            eval_L2(prob, h),
            float(prob.y @ Kinv @ prob.y) + np.linalg.slogdet(K)[1],
            rtol=1e-10,
        )
        g = grad_v(prob, h)
        D = prob.Phi.T @ Kinv @ prob.Phi
        np.testing.assert_allclose(g.g_beta, np.diag(D), rtol=1e-8)
        assert np.all(g.g_gamma == 0.0)
        post = posterior(prob, h)
        sigma_ref = np.linalg.inv(np.diag(1.0 / beta) + prob.Phi.T @ prob.Phi / lam)
        np.testing.assert_allclose(post.Sigma, sigma_ref, rtol=1e-7, atol=1e-12)

    def test_group_only_expands_gamma(self):
        prob = make_problem(seed=16)
        lay = prob.layout
        gamma = np.random.default_rng(16).lognormal(0.0, 0.5, lay.n_groups)
        h = Hyperparameters(beta=np.ones(lay.n_columns), gamma=gamma, lam=1.0, mode="group_only")
        s = effective_variance(lay, h)
        np.testing.assert_allclose(s, gamma[lay.group_of_column])
        assert prior_logdet(lay, h) == 0.0

    def test_masked_group_behaves_element_only(self):
        prob = make_problem(seed=17)
        lay = prob.layout
        h = random_hyper(lay, seed=17, mask_self=True)
        s = effective_variance(lay, h)
        sl = lay.group_slice(lay.self_index)
        np.testing.assert_allclose(s[sl], h.beta[sl])


class TestConvexityNumerics:
    def test_u_jointly_convex_midpoints(self):
        prob = make_problem(seed=18)
        lay = prob.layout
        rng = np.random.default_rng(18)
        for _ in range(100):
            pts = []
            vals = []
            for _ in range(2):
                w = rng.standard_normal(lay.n_columns)
                h = Hyperparameters(
                    beta=rng.lognormal(0, 0.5, lay.n_columns),
                    gamma=rng.lognormal(0, 0.5, lay.n_groups),
                    lam=float(rng.lognormal(0, 0.5)),
                )
                pts.append((w, h))
                vals.append(u_term(prob, h, w))
            wm = 0.5 * (pts[0][0] + pts[1][0])
            hm = Hyperparameters(
                beta=0.5 * (pts[0][1].beta + pts[1][1].beta),
                gamma=0.5 * (pts[0][1].gamma + pts[1][1].gamma),
                lam=0.5 * (pts[0][1].lam + pts[1][1].lam),
            )
            assert u_term(prob, hm, wm) <= 0.5 * (vals[0] + vals[1]) + 1e-9

    def test_logdet_terms_concave_midpoints(self):
        prob = make_problem(seed=19)
        lay = prob.layout
        rng = np.random.default_rng(19)
        for _ in range(100):
            hs = [
                Hyperparameters(
                    beta=rng.lognormal(0, 0.5, lay.n_columns),
                    gamma=rng.lognormal(0, 0.5, lay.n_groups),
                    lam=float(rng.lognormal(0, 0.5)),
                )
                for _ in range(2)
            ]
            hm = Hyperparameters(
                beta=0.5 * (hs[0].beta + hs[1].beta),
                gamma=0.5 * (hs[0].gamma + hs[1].gamma),
                lam=0.5 * (hs[0].lam + hs[1].lam),
            )
            for f in (lambda h: data_logdet(prob, h), lambda h: prior_logdet(lay, h)):
                assert f(hm) >= 0.5 * (f(hs[0]) + f(hs[1])) - 1e-9


def _bump(arr, idx, step):
    out = arr.copy()
    out[idx] = out[idx] + step
    return out

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesda.core import Gaussian, NotSPDError, gaussian_logpdf
from bayesda.kalman import kalman_smoother
from bayesda.variational import (
    InverseProblem,
    NonlinearModel,
    as_nonlinear,
    fd_gradient,
    gain_3dvar,
    gaussian_fit_klpq,
    gaussian_fit_moment_match,
    linear_gaussian_posterior,
    map_estimate,
    minimize,
    roll_forward,
    step_3dvar,
    strong_4dvar_minimize,
    strong_4dvar_objective,
    w4dvar_gradient,
    w4dvar_minimize,
    w4dvar_objective,
)
from conftest import random_linear_model, random_spd


def half_model(K_obs=1.0):
    return NonlinearModel(psi=lambda v: v / 2, H=[[K_obs]], Sigma=[[1.0]], Gamma=[[1.0]],
                          init=Gaussian([0.0], [[1.0]]), jacobian_psi=lambda v: np.array([[0.5]]))


def sine_model():
    return NonlinearModel(
        psi=lambda v: np.sin(v) + 0.5 * v, H=[[1.0, 0.0]], Sigma=0.3 * np.eye(2), Gamma=[[0.2]],
        init=Gaussian([0.1, -0.2], np.eye(2)),
        jacobian_psi=lambda v: np.diag(np.cos(v) + 0.5))


class TestMinimize:
    def test_quadratic(self, rng):
        A = random_spd(rng, 4)
        b = rng.standard_normal(4)
        res = minimize(lambda x: 0.5 * x @ A @ x - b @ x, np.zeros(4), lambda x: A @ x - b, tol=1e-10)
        np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-9)
        assert res.converged

    def test_fd_gradient(self):
        f = lambda x: np.sum(np.sin(x) * x**2)
        x = np.array([0.3, -1.2, 2.0])
        exact = np.cos(x) * x**2 + 2 * x * np.sin(x)
        np.testing.assert_allclose(fd_gradient(f, x), exact, rtol=1e-7)


class TestThreeDVar:
    def test_gain_scalar(self):
        K, S = gain_3dvar(np.eye(1), np.eye(1), np.eye(1))
        assert K[0, 0] == pytest.approx(0.5) and S.array[0, 0] == pytest.approx(2.0)

    def test_gain_no_observation(self):
        K, _ = gain_3dvar(np.eye(2), np.zeros((1, 2)), np.eye(1))
        np.testing.assert_array_equal(K, 0.0)

    def test_gain_trusting_data(self):
        K, _ = gain_3dvar(np.eye(2), np.eye(2), 1e-10 * np.eye(2))
        np.testing.assert_allclose(K, np.eye(2), atol=1e-6)

    def test_step_hand_example(self):
        assert step_3dvar([1.0], [1.0], half_model(), [[0.5]])[0] == pytest.approx(0.75)

    def test_zero_gain_is_forecast(self):
        assert step_3dvar([1.0], [7.0], half_model(), [[0.0]])[0] == 0.5

    def test_confirming_data(self):
        assert step_3dvar([1.0], [0.5], half_model(), [[0.3]])[0] == 0.5


class TestWeak4DVar:
    def test_zero_at_exact_path(self):
        m = sine_model()
        V = roll_forward(m, m.init.mean, 4)
        Y = V[1:] @ m.H.T
        assert w4dvar_objective(V, m, Y) == 0.0

    def test_matches_smoother_quadratic(self, rng):
        lin = random_linear_model(rng, 2, 1)
        Y = rng.standard_normal((5, 1))
        means, _ = kalman_smoother(lin, Y)
        g = w4dvar_gradient(means, as_nonlinear(lin), Y)
        assert np.max(np.abs(g)) < 1e-8

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_gradient_matches_fd(self, seed):
        g = np.random.default_rng(seed)
        m = sine_model()
        V, Y = g.standard_normal((4, 2)), g.standard_normal((3, 1))
        analytic = w4dvar_gradient(V, m, Y)
        fd = fd_gradient(lambda x: w4dvar_objective(x, m, Y), V)
        np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-6)

    def test_minimizer_matches_smoother(self, rng):
        lin = random_linear_model(rng, 2, 1)
        Y = rng.standard_normal((6, 1))
        V, f, gnorm = w4dvar_minimize(as_nonlinear(lin), Y)
        means, _ = kalman_smoother(lin, Y)
        np.testing.assert_allclose(V, means, atol=1e-6)
        assert f <= w4dvar_objective(np.zeros_like(V), as_nonlinear(lin), Y)

    def test_fd_path_without_jacobian(self, rng):
        lin = random_linear_model(rng, 2, 1)
        M = lin.M
        nj = NonlinearModel(psi=lambda v: M @ v, H=lin.H, Sigma=lin.Sigma, Gamma=lin.Gamma, init=lin.init)
        Y = rng.standard_normal((3, 1))
        V, _, _ = w4dvar_minimize(nj, Y, tol=1e-7)
        np.testing.assert_allclose(V, kalman_smoother(lin, Y)[0], atol=1e-5)

    def test_perturbation_increases_objective(self, rng):
        m = sine_model()
        Y = rng.standard_normal((3, 1))
        V, f, _ = w4dvar_minimize(m, Y)
        for j in range(V.shape[0]):
            W = V.copy()
            W[j] += 1e-3
            assert w4dvar_objective(W, m, Y) > f

    def test_empty_data(self):
        with pytest.raises(ValueError, match="data nonempty"):
            w4dvar_minimize(sine_model(), np.empty((0, 1)))


class TestStrong4DVar:
    def test_recovers_initial_state(self):
        M = np.array([[0.9, 0.3], [-0.2, 0.8]])
        model = NonlinearModel(psi=lambda v: M @ v, H=[[1.0, 0.0]], Sigma=None, Gamma=[[1.0]],
                               init=Gaussian([0.0, 0.0], 1e6 * np.eye(2)), jacobian_psi=lambda v: M)
        v0 = np.array([1.3, -0.7])
        Y = roll_forward(model, v0, 8)[1:] @ model.H.T
        est, traj, _ = strong_4dvar_minimize(model, Y, tol=1e-12)
        np.testing.assert_allclose(est, v0, atol=1e-4)

    def test_zero_objective(self):
        m = sine_model()
        Y = roll_forward(m, m.init.mean, 3)[1:] @ m.H.T
        assert strong_4dvar_objective(m.init.mean, m, Y) == 0.0

    def test_small_signal_limit(self):
        """Constraint violation of w4DVAR minimizers shrinks as the model noise shrinks."""
        Y = np.array([[0.5], [-0.3], [0.9], [0.1]])
        def violation(sigma):
            m = NonlinearModel(psi=lambda v: np.sin(v) + 0.5 * v, H=[[1.0, 0.0]],
                               Sigma=sigma**2 * np.eye(2), Gamma=[[0.2]],
                               init=Gaussian([0.1, -0.2], np.eye(2)),
                               jacobian_psi=lambda v: np.diag(np.cos(v) + 0.5))
            V, _, _ = w4dvar_minimize(m, Y, init_V=roll_forward(m, m.init.mean, 4), tol=1e-12)
            return np.max(np.abs(V[1:] - m.propagate(V[:-1])))
        v = [violation(s) for s in (0.2, 0.1, 0.05)]
        assert v[0] / v[1] >= 2 and v[1] / v[2] >= 2


class TestMAP:
    def test_linear_gaussian(self, rng):
        A = rng.standard_normal((3, 2))
        Gamma, prior = random_spd(rng, 3), Gaussian(rng.standard_normal(2), random_spd(rng, 2))
        y = rng.standard_normal(3)
        prob = InverseProblem.gaussian(lambda u: A @ u, prior, Gamma, jacobian=lambda u: A)
        u, _ = map_estimate(prob, y, np.zeros(2), tol=1e-12)
        np.testing.assert_allclose(u, linear_gaussian_posterior(A, Gamma, prior, y).mean, atol=1e-6)

    def box_problem(self):
        return InverseProblem(forward=lambda u: u, noise_cov=[[1.0]],
                              log_prior=lambda u: 0.0 if abs(u[0]) < 1 else -np.inf)

    def test_uniform_prior_boundary(self):
        u, _ = map_estimate(self.box_problem(), [2.0], [0.0])
        assert u[0] == pytest.approx(1.0, abs=1e-6) and abs(u[0]) < 1

    def test_uniform_prior_interior(self):
        u, _ = map_estimate(self.box_problem(), [0.5], [0.0])
        assert u[0] == pytest.approx(0.5, abs=1e-6)


class TestGaussianFits:
    def test_zero_loss_returns_prior(self):
        g = gaussian_fit_klpq(lambda U: np.zeros(len(U)), 2.0, 2, grad=lambda U: np.zeros_like(U))
        np.testing.assert_allclose(g.mean, 0.0, atol=1e-6)
        np.testing.assert_allclose(g.cov.array, 0.5 * np.eye(2), atol=1e-6)

    def test_quadratic_loss_is_exact(self):
        A = np.array([[1.0, 0.5], [0.0, 1.0], [0.3, -0.2]])
        Gamma = np.diag([0.5, 0.2, 0.4])
        y = np.array([1.0, -0.5, 0.3])
        lam = 1.5
        Gi = np.linalg.inv(Gamma)
        loss = lambda U: 0.5 * np.einsum("ni,ij,nj->n", y - U @ A.T, Gi, y - U @ A.T)
        grad = lambda U: -(y - U @ A.T) @ Gi @ A
        g = gaussian_fit_klpq(loss, lam, 2, grad=grad)
        post = linear_gaussian_posterior(A, Gamma, Gaussian(np.zeros(2), np.eye(2) / lam), y)
        np.testing.assert_allclose(g.mean, post.mean, rtol=0.02, atol=1e-3)
        np.testing.assert_allclose(g.cov.array, post.cov.array, rtol=0.02, atol=1e-3)

    def test_mode_seeking(self):
        # pi ~ exp(-L) N(0, 1/lam) equal to a well-separated two-component mixture
        lam, a, s = 0.01, 3.0, 0.5
        def loss(U):
            u = U[:, 0]
            mix = 0.5 * np.exp(-0.5 * ((u - a) / s) ** 2) + 0.5 * np.exp(-0.5 * ((u + a) / s) ** 2)
            return -np.log(mix + 1e-300) - 0.5 * lam * u**2
        g = gaussian_fit_klpq(loss, lam, 1, n_starts=4)
        sd = np.sqrt(g.cov.array[0, 0])
        assert min(abs(g.mean[0] - a), abs(g.mean[0] + a)) <= sd

    def test_moment_match_hand(self):
        g = gaussian_fit_moment_match(np.array([[-1.0], [1.0]]))
        assert g.mean[0] == 0.0 and g.cov.array[0, 0] == 1.0

    def test_moment_match_degenerate(self):
        with pytest.raises(NotSPDError):
            gaussian_fit_moment_match(np.ones((5, 2)))

    def test_moment_match_large_sample(self, rng):
        C = random_spd(rng, 2)
        X = rng.multivariate_normal([1.0, -2.0], C, 100_000)
        g = gaussian_fit_moment_match(X)
        assert np.linalg.norm(g.mean - [1.0, -2.0]) / np.linalg.norm([1.0, -2.0]) < 0.05
        assert np.linalg.norm(g.cov.array - C) / np.linalg.norm(C) < 0.05

    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    @settings(max_examples=20, deadline=None)
    def test_moment_match_minimizes_cross_entropy(self, seed, n):
        """KL(pi || p) = const - E^pi log p, so the fit must maximize E^pi log p."""
        g = np.random.default_rng(seed)
        atoms, probs = g.standard_normal((n, 1)), g.dirichlet(np.ones(n))
        fit = gaussian_fit_moment_match(atoms, probs)
        score = lambda q: float(probs @ gaussian_logpdf(q, atoms))
        best = score(fit)
        for _ in range(100):
            var = fit.cov.array[0, 0] * np.exp(0.3 * g.standard_normal())
            other = Gaussian(fit.mean + 0.3 * g.standard_normal(1), [[var]])
            assert score(other) <= best + 1e-12

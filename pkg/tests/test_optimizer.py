import numpy as np
import pytest

from compfit.compressor import ThetaRaw, unconstrain
from compfit.io_wav import AudioBuffer
from compfit.optimizer import (
    FitStatus,
    LineSearchStall,
    NROptions,
    curvature_escape,
    fit,
    fit_chain,
    line_search,
    newton_minimize,
    solve_step,
)
from compfit.synth import CorpusSpec, Stimulus, make_stimulus, theta_star


class TestNROptions:
    def test_armijo_range_enforced(self):
        with pytest.raises(ValueError, match="armijo"):
            NROptions(armijo_alpha=0.5)
        with pytest.raises(ValueError, match="armijo"):
            NROptions(armijo_alpha=0.0)
        with pytest.raises(ValueError, match="min_step"):
            NROptions(min_step=0.0)


class TestSolveStep:
    def test_identity(self):
        g = np.array([1.0, -2.0, 3.0, 0.5, 0.0])
        nu, psd = solve_step(np.eye(5), g)
        assert np.array_equal(nu, g)
        assert psd

    def test_diagonal(self):
        nu, _ = solve_step(np.diag([2.0] * 5), np.array([2.0, 0, 0, 0, 0]))
        assert np.allclose(nu, [1.0, 0, 0, 0, 0], atol=0)

    def test_random_spd_residual(self, rng):
        for _ in range(20):
            A = rng.standard_normal((5, 5))
            H = A @ A.T + 0.1 * np.eye(5)
            g = rng.standard_normal(5)
            nu, psd = solve_step(H, g)
            assert psd
            assert np.linalg.norm(H @ nu - g) < 1e-12 * np.linalg.norm(g) * np.linalg.cond(H)

    def test_singular_raises(self):
        H = np.zeros((5, 5))
        with pytest.raises(np.linalg.LinAlgError):
            solve_step(H, np.ones(5))

    def test_non_psd_reported(self):
        H = np.diag([1.0, 1.0, -1.0, 1.0, 1.0])
        nu, psd = solve_step(H, np.ones(5))
        assert not psd


class TestLineSearch:
    def quad(self, x):
        return 0.5 * float(x @ x)

    def test_newton_step_accepts_tau_one(self):
        x = np.array([3.0, -4.0])
        g = x.copy()
        nu = x.copy()  # exact Newton direction for 0.5 x.x
        tau, newx, newloss = line_search(x, nu, self.quad, self.quad(x), g, NROptions())
        assert tau == 1.0
        assert newloss == 0.0

    def test_oversized_direction_backtracks(self):
        # direction scaled x1000: first accepted tau is near 2^-10 by the
        # Armijo inequality evaluated per halving (oracle loop below)
        x = np.array([3.0, -4.0])
        g = x.copy()
        nu = 1000.0 * x
        opts = NROptions()
        tau, _, _ = line_search(x, nu, self.quad, self.quad(x), g, opts)
        t_oracle = 1.0
        while True:
            cand = self.quad(x - t_oracle * nu)
            if cand <= self.quad(x) - opts.armijo_alpha * t_oracle * float(g @ nu):
                break
            t_oracle *= 0.5
        assert tau == t_oracle
        assert 2.0**-11 <= tau <= 2.0**-9

    def test_non_descent_rejected(self):
        x = np.array([1.0, 1.0])
        with pytest.raises(ValueError, match="non-descent"):
            line_search(x, -x, self.quad, self.quad(x), x.copy(), NROptions())

    def test_stall_raises(self):
        # loss that never decreases
        x = np.array([1.0])
        with pytest.raises(LineSearchStall):
            line_search(x, np.array([1.0]), lambda v: 1.0 + abs(float(v[0])),
                        2.0 - 1.0, np.array([1.0]), NROptions())


class TestCurvatureEscape:
    def test_orthogonal_and_norm_preserving(self, rng):
        g = rng.standard_normal(5)
        nu = rng.standard_normal(5)
        d = curvature_escape(nu, g, np.random.default_rng(3))
        cos = abs(np.dot(d, nu)) / (np.linalg.norm(d) * np.linalg.norm(nu))
        assert cos < 1e-12
        assert np.linalg.norm(d) == pytest.approx(np.linalg.norm(nu), rel=1e-12)
        assert np.dot(g, d) >= 0.0

    def test_deterministic_under_seed(self, rng):
        g = rng.standard_normal(5)
        nu = rng.standard_normal(5)
        d1 = curvature_escape(nu, g, np.random.default_rng(11))
        d2 = curvature_escape(nu, g, np.random.default_rng(11))
        assert np.array_equal(d1, d2)


class TestNewtonGeneric:
    def test_quadratic_one_iteration(self, rng):
        A = rng.standard_normal((5, 5))
        H0 = A @ A.T + np.eye(5)
        xstar = rng.standard_normal(5)

        def f(x):
            d = x - xstar
            return 0.5 * float(d @ H0 @ d)

        res = newton_minimize(f, lambda x: H0 @ (x - xstar), lambda x: H0,
                              rng.standard_normal(5), NROptions())
        assert res.status is FitStatus.Converged
        assert res.iters == 1
        assert res.steps[0].tau == 1.0  # undamped step is exact on quadratics
        assert np.allclose(res.x, xstar, atol=1e-9)

    def test_rosenbrock(self):
        def f(v):
            x, y = v
            return (1 - x) ** 2 + 100.0 * (y - x * x) ** 2

        def g(v):
            x, y = v
            return np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])

        def h(v):
            x, y = v
            return np.array([[2 - 400 * (y - 3 * x * x), -400 * x], [-400 * x, 200.0]])

        res = newton_minimize(f, g, h, np.array([-1.2, 1.0]), NROptions(grad_tol=1e-10))
        assert res.status is FitStatus.Converged
        assert res.iters <= 50
        assert np.allclose(res.x, [1.0, 1.0], atol=1e-8)

    def test_trajectory_monotone(self, rng):
        A = rng.standard_normal((5, 5))
        H0 = A @ A.T + np.eye(5)

        def f(x):
            return 0.5 * float(x @ H0 @ x) + float(np.sin(x).sum()) * 0.1

        def g(x):
            return H0 @ x + 0.1 * np.cos(x)

        res = newton_minimize(f, g, lambda x: H0 - 0.1 * np.diag(np.sin(x)),
                              rng.standard_normal(5) * 3, NROptions())
        traj = res.loss_trajectory
        assert all(b <= a for a, b in zip(traj, traj[1:]))


def _synthetic_pair(seed, sr=8000):
    curve = {
        "ct_db": [(0.0, -30.0)], "ratio": [(0.0, 5.0)], "attack_ms": [(0.0, 2.0)],
        "release_ms": [(0.0, 150.0)], "makeup_db": [(0.0, 1.0)],
    }
    spec = CorpusSpec(seed=seed, duration=6.0, sample_rate=sr, labels=[0.0],
                      theta_curve=curve, stimulus=Stimulus.NoiseBursts)
    params = theta_star(spec, 0.0)
    x = make_stimulus(spec)
    from compfit.compressor import compress_params

    y, _ = compress_params(x, params)
    return x, y, params


class TestFit:
    def test_recovery_single(self, bounds):
        x, y, params = _synthetic_pair(3)
        theta_true = unconstrain(params, bounds)
        rng = np.random.default_rng(0)
        init = ThetaRaw.from_array(theta_true.as_array() + rng.normal(0, 0.25, 5))
        r = fit(x, y, init, bounds, NROptions(rng_seed=0), threads=1)
        assert r.status is FitStatus.Converged
        assert r.loss_trajectory[-1] < 1e-12
        assert r.params.ratio == pytest.approx(params.ratio, rel=1e-4)
        assert r.params.attack_ms == pytest.approx(params.attack_ms, rel=1e-4)

    def test_init_at_truth_zero_or_one_iteration(self, bounds):
        x, y, params = _synthetic_pair(4)
        theta_true = unconstrain(params, bounds)
        r = fit(x, y, theta_true, bounds, NROptions(rng_seed=0), threads=1)
        assert r.iters <= 1
        assert r.status is FitStatus.Converged

    def test_trajectory_non_increasing(self, bounds):
        x, y, params = _synthetic_pair(5)
        theta_true = unconstrain(params, bounds)
        rng = np.random.default_rng(1)
        init = ThetaRaw.from_array(theta_true.as_array() + rng.normal(0, 0.4, 5))
        r = fit(x, y, init, bounds, NROptions(rng_seed=1), threads=1)
        traj = r.loss_trajectory
        assert all(b <= a for a, b in zip(traj, traj[1:]))

    def test_deterministic_under_seed(self, bounds):
        x, y, params = _synthetic_pair(6)
        theta_true = unconstrain(params, bounds)
        init = ThetaRaw.from_array(theta_true.as_array() + 0.3)
        r1 = fit(x, y, init, bounds, NROptions(rng_seed=9), threads=1)
        r2 = fit(x, y, init, bounds, NROptions(rng_seed=9), threads=1)
        assert r1.loss_trajectory == r2.loss_trajectory
        assert np.array_equal(r1.theta.as_array(), r2.theta.as_array())

    def test_hessian_attached(self, bounds):
        x, y, params = _synthetic_pair(7)
        r = fit(x, y, unconstrain(params, bounds), bounds, NROptions(), threads=1)
        assert r.hessian.matrix.shape == (5, 5)
        assert r.grad_norm < 1e-9


class TestFitChain:
    def _chain_corpus(self, labels, seed=11, sr=8000):
        curve = {
            "ct_db": [(0.0, -36.0), (1.0, -26.0)],
            "ratio": [(0.0, 6.0), (1.0, 3.0)],
            "attack_ms": [(0.0, 1.0), (1.0, 5.0)],
            "release_ms": [(0.0, 250.0), (1.0, 90.0)],
            "makeup_db": [(0.0, 2.0), (1.0, 0.0)],
        }
        spec = CorpusSpec(seed=seed, duration=6.0, sample_rate=sr, labels=sorted(labels),
                          theta_curve=curve, stimulus=Stimulus.NoiseBursts)
        from compfit.compressor import compress_params

        out = []
        for lab in labels:
            params = theta_star(spec, lab)
            x = make_stimulus(spec, np.random.default_rng([seed, int(lab * 100)]))
            y, _ = compress_params(x, params)
            out.append((lab, (x, y)))
        return out

    def test_single_entry_equals_fit(self, bounds):
        corpus = self._chain_corpus([0.5])
        lab, (x, y) = corpus[0]
        opts = NROptions(rng_seed=2)
        chain = fit_chain(corpus, None, bounds, opts, threads=1)
        solo = fit(x, y, None, bounds, opts, threads=1)
        assert chain[0][0] == lab
        assert chain[0][1].loss_trajectory == solo.loss_trajectory

    def test_warm_start_beats_cold(self, bounds):
        corpus = self._chain_corpus([0.0, 0.25, 0.5, 0.75, 1.0])
        opts = NROptions(rng_seed=3)
        chain = fit_chain(corpus, None, bounds, opts, threads=1)
        chain_iters = sum(r.iters for _, r in chain)
        cold_iters = sum(fit(x, y, None, bounds, opts, threads=1).iters for _, (x, y) in corpus)
        assert chain_iters < cold_iters

    def test_chain_determinism(self, bounds):
        corpus = self._chain_corpus([0.2, 0.8])
        opts = NROptions(rng_seed=4)
        c1 = fit_chain(corpus, None, bounds, opts, threads=1)
        c2 = fit_chain(corpus, None, bounds, opts, threads=1)
        for (_, r1), (_, r2) in zip(c1, c2):
            assert r1.loss_trajectory == r2.loss_trajectory

    def test_failure_does_not_abort(self, bounds):
        corpus = self._chain_corpus([0.3, 0.7])
        # corrupt the second pair with mismatched lengths
        lab, (x, y) = corpus[1]
        bad_y = AudioBuffer(y.samples[:-10], y.sample_rate)
        corpus[1] = (lab, (x, bad_y))
        chain = fit_chain(corpus, None, bounds, NROptions(rng_seed=5), threads=1)
        assert not isinstance(chain[0][1], Exception)
        assert isinstance(chain[1][1], Exception)

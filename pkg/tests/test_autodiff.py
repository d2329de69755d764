import numpy as np
import pytest

from compfit import scan
from compfit.autodiff import (
    HessianStrategy,
    MatchProblem,
    finite_diff_gradient,
    finite_diff_hessian,
    gradient_check_battery,
    hessian_check_battery,
    jvp_backward,
    jvp_compressor,
    loss,
    relative_error,
    vjp_backward,
    vjp_compressor,
)
from compfit.compressor import DB_LN, ThetaRaw, compress
from compfit.io_wav import AudioBuffer

from conftest import bursty_signal

SR = 44100


@pytest.fixture
def pair(rng, bounds, theta_b):
    x = AudioBuffer(bursty_signal(rng, 1200), SR)
    y, _ = compress(x, theta_b, bounds)
    return x, y


class TestLoss:
    def test_zero_at_generator(self, pair, bounds, theta_b):
        x, y = pair
        assert loss(theta_b, x, y, bounds) == 0.0

    def test_constant_offset(self, bounds, rng):
        # estimate differs from target by c on every evaluated sample
        n = 300
        x = AudioBuffer(np.full(n, 1e-6), SR)
        theta = ThetaRaw(10.0, 0.0, 0.0, 0.0, 0.0)  # inactive compressor, unity gain
        yhat, _ = compress(x, theta, bounds)
        c = 0.125
        y = AudioBuffer(yhat.samples + c, SR)
        assert loss(theta, x, y, bounds, preemph=False) == pytest.approx(n * c * c, rel=1e-12)

    def test_positive_away_from_minimum(self, pair, bounds, theta_b, rng):
        x, y = pair
        for _ in range(5):
            delta = rng.normal(0, 0.05, 5)
            theta = ThetaRaw.from_array(theta_b.as_array() + delta)
            assert loss(theta, x, y, bounds) > 0.0


class TestVjpCompressor:
    def test_zero_cotangent(self, pair, bounds, theta_a):
        x, _ = pair
        _, tr = compress(x, theta_a, bounds)
        g = vjp_compressor(tr, x, theta_a, np.zeros(len(x)), bounds)
        assert np.all(g == 0.0)

    def test_single_sample_hand_chain(self, bounds):
        # one sample above threshold: d yhat / d makeup via the k-path only
        x = AudioBuffer(np.array([0.5]), SR)
        theta = ThetaRaw(-20.0, 2.0, 0.3, -0.1, 0.2)
        yb, tr = compress(x, theta, bounds)
        v = np.array([1.0])
        g = vjp_compressor(tr, x, theta, v, bounds)
        # makeup component: d(x g k)/d gamma = x g k ln10/20
        assert g[1] == pytest.approx(float(yb.samples[0]) * DB_LN, rel=1e-12)

    def test_single_sample_ghat_cotangent_hand_chain(self, bounds):
        # one-step chain rule: the cotangent reaching ghat[0] is
        # v[0] * x[0] * 10^(gamma/20) * (1 - beta[0]); continue it by hand
        # through the gain computer and the threshold pass-through
        from compfit.compressor import constrain, level_db

        x = AudioBuffer(np.array([0.5]), SR)
        theta = ThetaRaw(-20.0, 2.0, 0.3, -0.1, 0.2)
        p = constrain(theta, bounds, SR)
        _, tr = compress(x, theta, bounds)
        v = np.array([1.3])
        ghat_bar = v[0] * 0.5 * 10 ** (p.makeup_db / 20.0) * (1.0 - tr.beta[0])
        lvl = level_db(x.samples)[0]
        expect_ct = ghat_bar * DB_LN * tr.g_hat[0] * (1.0 - 1.0 / p.ratio)
        g = vjp_compressor(tr, x, theta, v, bounds)
        assert g[0] == pytest.approx(expect_ct, rel=1e-12)
        assert lvl > p.ct_db  # the clamp really is active in this setup

    def test_matches_finite_differences(self, pair, bounds, theta_a, rng):
        x, _ = pair
        _, tr = compress(x, theta_a, bounds)
        v = rng.standard_normal(len(x))

        def f(theta):
            yh, _ = compress(x, theta, bounds)
            return float(np.dot(v, yh.samples))

        g = vjp_compressor(tr, x, theta_a, v, bounds)
        gfd = finite_diff_gradient(f, theta_a, 1e-6)
        assert relative_error(g, gfd) < 1e-6


class TestJvpCompressor:
    def test_zero_tangent(self, pair, bounds, theta_a):
        x, _ = pair
        _, tr = compress(x, theta_a, bounds)
        dy = jvp_compressor(tr, x, theta_a, np.zeros(5), bounds)
        assert np.all(dy == 0.0)

    def test_dot_product_transpose_identity(self, pair, bounds, theta_a, rng):
        x, _ = pair
        _, tr = compress(x, theta_a, bounds)
        for _ in range(10):
            v = rng.standard_normal(len(x))
            d = rng.standard_normal(5)
            lhs = float(np.dot(v, jvp_compressor(tr, x, theta_a, d, bounds)))
            rhs = float(np.dot(vjp_compressor(tr, x, theta_a, v, bounds), d))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    def test_matches_finite_differences(self, pair, bounds, theta_a, rng):
        x, _ = pair
        _, tr = compress(x, theta_a, bounds)
        d = rng.standard_normal(5)
        h = 1e-6
        t = theta_a.as_array()
        yp, _ = compress(x, ThetaRaw.from_array(t + h * d), bounds)
        ym, _ = compress(x, ThetaRaw.from_array(t - h * d), bounds)
        fd = (yp.samples - ym.samples) / (2 * h)
        dy = jvp_compressor(tr, x, theta_a, d, bounds)
        denom = max(float(np.max(np.abs(fd))), 1e-300)
        assert float(np.max(np.abs(dy - fd))) / denom < 1e-5


class TestSecondOrderSingle:
    def test_vjp_backward_zero(self, pair, bounds, theta_a):
        x, y = pair
        row = vjp_backward(x, y, theta_a, np.zeros(5), bounds)
        assert np.all(row == 0.0)

    def test_vjp_backward_rows_match_fd(self, pair, bounds, theta_a):
        x, y = pair

        def grad_fn(theta):
            prob_like = loss  # noqa: F841  (gradient via module helper below)
            from compfit.autodiff import gradient

            return gradient(theta, x, y, bounds, preemph=False)

        hfd = finite_diff_hessian(grad_fn, theta_a, 1e-6)
        for i in range(5):
            row = vjp_backward(x, y, theta_a, np.eye(5)[i], bounds, preemph=False)
            assert relative_error(row, hfd[i]) < 1e-5

    def test_jvp_backward_zero(self, pair, bounds, theta_a):
        x, y = pair
        col = jvp_backward(x, y, theta_a, np.zeros(5), bounds)
        assert np.all(col == 0.0)

    def test_row_column_symmetry(self, pair, bounds, theta_a):
        x, y = pair
        for i in range(5):
            row = vjp_backward(x, y, theta_a, np.eye(5)[i], bounds)
            col = jvp_backward(x, y, theta_a, np.eye(5)[i], bounds)
            scale = max(np.max(np.abs(row)), 1e-300)
            assert np.max(np.abs(row - col)) / scale < 1e-9

    def test_inactive_ballistics_rows_zero(self, bounds, rng):
        # threshold far above the signal: gain pinned at 1, the smoothing
        # coefficients cannot influence the loss
        x = AudioBuffer(rng.standard_normal(400) * 1e-4, SR)
        theta = ThetaRaw(20.0, 1.0, 0.0, 0.0, 0.0)
        y = AudioBuffer(x.samples * 0.9, SR)
        for i in (3, 4):
            row = vjp_backward(x, y, theta, np.eye(5)[i], bounds)
            assert np.all(row == 0.0)


class TestHessianStrategies:
    @pytest.mark.parametrize("preemph", [False, True])
    def test_all_strategies_agree(self, pair, bounds, theta_a, preemph):
        x, y = pair
        prob = MatchProblem(x, y, bounds=bounds, preemph=preemph,
                            chunk_sec=1.0, overlap_sec=0.0, threads=1)
        mats = [prob.hessian(theta_a, s).matrix for s in HessianStrategy]
        scale = np.max(np.abs(mats[0]))
        for i in range(len(mats)):
            for j in range(i + 1, len(mats)):
                assert np.max(np.abs(mats[i] - mats[j])) / scale < 1e-8

    def test_agrees_with_gradient_fd(self, pair, bounds, theta_a):
        x, y = pair
        prob = MatchProblem(x, y, bounds=bounds, preemph=True,
                            chunk_sec=1.0, overlap_sec=0.0, threads=1)
        hfd = finite_diff_hessian(prob.gradient, theta_a, 1e-6)
        for s in HessianStrategy:
            assert relative_error(prob.hessian(theta_a, s).matrix, hfd) < 1e-5

    def test_multichunk_threaded_agreement(self, bounds, theta_a, theta_b, rng):
        sr = 4000
        x = AudioBuffer(bursty_signal(rng, sr * 5, n_seg=30), sr)
        y, _ = compress(x, theta_b, bounds)
        prob1 = MatchProblem(x, y, bounds=bounds, chunk_sec=1.5, overlap_sec=0.25, threads=1)
        prob2 = MatchProblem(x, y, bounds=bounds, chunk_sec=1.5, overlap_sec=0.25, threads=4)
        assert len(prob1.chunks) > 2
        for s in HessianStrategy:
            h1 = prob1.hessian(theta_a, s).matrix
            h2 = prob2.hessian(theta_a, s).matrix
            # fixed-order reduction: identical bits regardless of threading
            assert np.array_equal(h1, h2), s
        hfd = finite_diff_hessian(prob1.gradient, theta_a, 1e-6)
        assert relative_error(prob1.hessian(theta_a).matrix, hfd) < 1e-5

    def test_psd_at_synthetic_minimum(self, pair, bounds, theta_b):
        x, y = pair
        prob = MatchProblem(x, y, bounds=bounds, preemph=False,
                            chunk_sec=1.0, overlap_sec=0.0, threads=1)
        H = prob.hessian(theta_b).matrix
        evals = np.linalg.eigvalsh(H)
        assert evals[0] >= -1e-10 * np.max(np.abs(H))

    def test_symmetry_report(self, pair, bounds, theta_a):
        x, y = pair
        prob = MatchProblem(x, y, bounds=bounds, chunk_sec=1.0, overlap_sec=0.0, threads=1)
        h = prob.hessian(theta_a)
        assert h.symmetrized
        assert h.asym < 1e-8
        assert np.max(np.abs(h.matrix - h.matrix.T)) == 0.0

    def test_makeup_only_quadratic_closed_form(self, bounds, rng):
        # compressor inactive: loss reduces to sum(mask (k P x - P y)^2);
        # its gamma-curvature has a closed form checked against FD
        x = AudioBuffer(rng.standard_normal(500) * 1e-4, SR)
        theta = ThetaRaw(20.0, 1.3, 0.0, 0.0, 0.0)
        y = AudioBuffer(x.samples * 0.75, SR)
        prob = MatchProblem(x, y, bounds=bounds, preemph=False,
                            chunk_sec=1.0, overlap_sec=0.0, threads=1)
        H = prob.hessian(theta).matrix
        k = 10 ** (1.3 / 20.0)
        xs = x.samples
        ys = y.samples
        closed = 2 * DB_LN**2 * k * float(np.dot(xs, 2 * k * xs - ys))
        assert H[1, 1] == pytest.approx(closed, rel=1e-10)
        hfd = finite_diff_hessian(prob.gradient, theta, 1e-6)
        assert H[1, 1] == pytest.approx(hfd[1, 1], rel=1e-6)


class TestReversedFilterIdentity:
    def test_vjp_filter_bitwise_vs_unrolled_adjoint(self, bounds, rng):
        # the reverse pass through the smoothing recursion must equal the
        # index-shifted reversed filter bit for bit (length <= 64)
        for n in (1, 2, 17, 64):
            beta = rng.uniform(0.5, 0.999, n)
            gbar = rng.standard_normal(n)
            direct = np.empty(n)
            acc = 0.0
            for i in range(n - 1, -1, -1):
                if i == n - 1:
                    acc = gbar[i]
                else:
                    acc = gbar[i] + beta[i + 1] * acc
                direct[i] = acc
            assert np.array_equal(scan.linrec_reversed(beta, gbar), direct)


class TestWarmupSemantics:
    def test_warmup_excluded_from_loss_but_in_derivative(self, bounds, theta_a, theta_b, rng):
        # chunked gradient must match finite differences of the chunked
        # loss (warm-up samples drive the state, not the error sum)
        sr = 2000
        x = AudioBuffer(bursty_signal(rng, sr * 4, n_seg=16), sr)
        y, _ = compress(x, theta_b, bounds)
        prob = MatchProblem(x, y, bounds=bounds, chunk_sec=1.2, overlap_sec=0.3, threads=1)
        assert len(prob.chunks) >= 3
        g = prob.gradient(theta_a)
        gfd = finite_diff_gradient(prob.loss, theta_a, 1e-6)
        assert relative_error(g, gfd) < 1e-6


class TestBatteries:
    def test_gradient_battery_small(self):
        mx, errs = gradient_check_battery(draws=8, samples=600, seed=5)
        assert len(errs) == 8
        assert mx < 1e-6

    def test_hessian_battery_small(self):
        pw, fd, rows = hessian_check_battery(instances=3, samples=600, seed=5)
        assert pw < 1e-8 and fd < 1e-5

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compfit import backend as backend_mod
from compfit import scan
from compfit.scan import (
    AFFINE_IDENTITY,
    AffineElem,
    affine_compose,
    linrec,
    linrec_reversed,
    linrec_scan,
    linrec_sequential,
)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


class TestAffineCompose:
    def test_identity_element(self):
        e = AffineElem(0.7, 2.0)
        assert affine_compose(e, AFFINE_IDENTITY) == e
        assert affine_compose(AFFINE_IDENTITY, e) == e

    def test_hand_composition(self):
        # y = a2*(a1*x + b1) + b2 with e1=(0.5, 1), e2=(0.25, 2)
        out = affine_compose(AffineElem(0.5, 1.0), AffineElem(0.25, 2.0))
        assert out.a == pytest.approx(0.125, abs=0)
        assert out.b == pytest.approx(2.25, abs=0)

    @settings(max_examples=200, deadline=None)
    @given(finite, finite, finite, finite, finite, finite)
    def test_associativity(self, a1, b1, a2, b2, a3, b3):
        e1, e2, e3 = AffineElem(a1, b1), AffineElem(a2, b2), AffineElem(a3, b3)
        left = affine_compose(affine_compose(e1, e2), e3)
        right = affine_compose(e1, affine_compose(e2, e3))
        assert left.a == pytest.approx(right.a, rel=1e-15, abs=1e-12)
        assert left.b == pytest.approx(right.b, rel=1e-15, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(finite, finite, finite)
    def test_compose_matches_application(self, a1, b1, x):
        e1, e2 = AffineElem(a1, b1), AffineElem(0.5, -1.0)
        c = affine_compose(e1, e2)
        direct = e2.a * (e1.a * x + e1.b) + e2.b
        assert c.a * x + c.b == pytest.approx(direct, rel=1e-12, abs=1e-9)


class TestLinrecSequential:
    def test_memoryless_when_a_zero(self):
        b = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(linrec_sequential(np.zeros(3), b, 5.0), b)

    def test_running_sum(self):
        n = 6
        y = linrec_sequential(np.ones(n), np.ones(n), 0.0)
        assert np.array_equal(y, np.arange(1.0, n + 1))

    def test_hand_unroll(self):
        y = linrec_sequential([0.5, 0.5], [1.0, 1.0], 2.0)
        assert np.array_equal(y, [2.0, 2.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            linrec_sequential([0.5], [1.0, 2.0], 0.0)


class TestLinrecScan:
    def test_length_one(self):
        y = linrec_scan(np.array([0.5]), np.array([2.0]), 3.0)
        assert y[0] == pytest.approx(2.0 + 0.5 * 3.0, abs=0)

    def test_matches_sequential_large(self, rng):
        n = 100_000
        a = rng.uniform(-0.999, 0.999, n)
        b = rng.standard_normal(n)
        ys = linrec_sequential(a, b, 0.7)
        yp = linrec_scan(a, b, 0.7)
        assert np.max(np.abs(ys - yp)) < 1e-12

    def test_many_random_instances(self, rng):
        # 10^4 instances across sizes; deviation bound 1e-12 throughout.
        worst = 0.0
        for _ in range(10_000):
            n = int(rng.integers(1, 120))
            a = rng.uniform(-0.999, 0.999, n)
            b = rng.standard_normal(n)
            dev = np.max(np.abs(linrec_scan(a, b, 0.5) - linrec_sequential(a, b, 0.5)))
            worst = max(worst, float(dev))
        assert worst < 1e-12

    def test_phase_count_logarithmic(self, rng):
        for n in (5000, 100_000, 1_000_000):
            a = rng.uniform(-0.9, 0.9, n)
            b = rng.standard_normal(n)
            linrec_scan(a, b, 0.0, workers=4)
            phases = scan.scan_stats()["phases"]
            assert 1 <= phases <= 2 * int(np.ceil(np.log2(n))) + 8

    def test_workers_do_not_change_much(self, rng):
        n = 50_000
        a = rng.uniform(-0.99, 0.99, n)
        b = rng.standard_normal(n)
        ref = linrec_sequential(a, b, 0.0)
        for w in (1, 2, 4, 8):
            assert np.max(np.abs(linrec_scan(a, b, 0.0, workers=w) - ref)) < 1e-12


class TestLinrecReversed:
    def test_hand_unroll_three_samples(self):
        # backward pass with constant multiplier 0.5 over ones
        y = linrec_reversed(np.full(3, 0.5), np.ones(3))
        assert np.allclose(y, [1.75, 1.5, 1.0], atol=0)

    def test_a_zero_gives_b(self):
        b = np.array([3.0, 1.0, -2.0])
        assert np.array_equal(linrec_reversed(np.zeros(3), b), b)

    def test_reverse_symmetry(self, rng):
        # reversed run == forward run on flipped inputs with the multiplier
        # displaced by one (the index shift leaves no slot at the far end)
        n = 257
        a = rng.uniform(-0.9, 0.9, n)
        b = rng.standard_normal(n)
        rev = linrec_reversed(a, b)
        c = np.concatenate(([0.0], a[:0:-1]))
        fwd = linrec_sequential(c, b[::-1], 0.0)
        assert np.array_equal(rev, fwd[::-1])

    def test_multiplier_index_shift(self):
        # y[0] = b[0] + a[1]*y[1]: a[0] must never be used
        a = np.array([np.nan, 0.5])
        b = np.array([1.0, 2.0])
        y = linrec_reversed(a, b)
        assert y[1] == 2.0 and y[0] == 1.0 + 0.5 * 2.0

    def test_scan_path_matches_sequential_path(self, rng):
        n = scan.PARALLEL_THRESHOLD * 3
        a = rng.uniform(-0.99, 0.99, n)
        b = rng.standard_normal(n)
        via_dispatch = linrec_reversed(a, b)
        direct = backend_mod.get_backend().linrec_rev(a, b)
        assert np.max(np.abs(via_dispatch - direct)) < 1e-12


class TestDispatcher:
    def test_below_threshold_is_bitwise_sequential(self, rng):
        n = scan.PARALLEL_THRESHOLD - 1
        a = rng.uniform(-0.9, 0.9, n)
        b = rng.standard_normal(n)
        assert np.array_equal(linrec(a, b, 0.3), linrec_sequential(a, b, 0.3))

    def test_above_threshold_matches(self, rng):
        n = scan.PARALLEL_THRESHOLD * 2
        a = rng.uniform(-0.9, 0.9, n)
        b = rng.standard_normal(n)
        assert np.max(np.abs(linrec(a, b, 0.3) - linrec_sequential(a, b, 0.3))) < 1e-12


@pytest.mark.skipif("cython" not in backend_mod.available_backends(),
                    reason="compiled kernels unavailable")
class TestBackendParity:
    def test_sequential_kernels_bitwise_equal(self, rng):
        from compfit import _kernels, _kernels_py

        for n in (1, 7, 100, 4097):
            a = rng.uniform(-0.99, 0.99, n)
            b = rng.standard_normal(n)
            assert np.array_equal(_kernels.linrec_fwd(a, b, 0.4), _kernels_py.linrec_fwd(a, b, 0.4))
            assert np.array_equal(_kernels.linrec_rev(a, b), _kernels_py.linrec_rev(a, b))
            gh = rng.uniform(0.01, 1.0, n)
            for kc, kp in zip(_kernels.ballistics_fwd(gh, 0.3, 0.05, 1.0),
                              _kernels_py.ballistics_fwd(gh, 0.3, 0.05, 1.0)):
                assert np.array_equal(kc, kp)

    def test_scan_backends_agree(self, rng):
        from compfit import _kernels, _kernels_py

        n = 30_000
        a = rng.uniform(-0.995, 0.995, n)
        b = rng.standard_normal(n)
        yc, _ = _kernels.scan_fwd(a, b, 0.2, 4)
        yp, _ = _kernels_py.scan_fwd(a, b, 0.2, 4)
        assert np.max(np.abs(yc - yp)) < 1e-12

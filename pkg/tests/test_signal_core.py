import logging

import numpy as np
import pytest

from usdeconv import signal_core as sc
from usdeconv.errors import NumericalError


def naive_dft(x):
    """O(n^2) transform straight from the definition."""
    n = len(x)
    k = np.arange(n)
    W = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return W @ np.asarray(x, dtype=complex)


def dense_A1(L_b):
    A = np.zeros((L_b, 2 * L_b - 1))
    A[: L_b - 1, L_b:] = np.eye(L_b - 1)
    return A


def dense_A2(L_b):
    A = np.zeros((L_b, 2 * L_b - 1))
    A[:, :L_b] = np.eye(L_b)
    return A


class TestDft:
    def test_impulse_is_flat(self):
        assert np.allclose(sc.dft_forward([1.0, 0.0, 0.0]), [1, 1, 1])

    def test_constant_is_dc(self):
        assert np.allclose(sc.dft_forward([1.0, 1.0, 1.0]), [3, 0, 0])

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal(7)
        assert np.allclose(sc.dft_forward(x), naive_dft(x), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("n", list(range(1, 65)))
    def test_round_trip(self, n):
        rng = np.random.default_rng(n)
        x = rng.standard_normal(n)
        back = sc.dft_inverse(sc.dft_forward(x))
        assert np.allclose(back, x, rtol=1e-12, atol=1e-12)

    def test_conjugate_symmetry_of_real_blocks(self):
        rng = np.random.default_rng(5)
        for n in (2, 5, 9, 31):
            spec = sc.dft_forward(rng.standard_normal(n))
            mirrored = np.conj(spec[(-np.arange(n)) % n])
            assert np.abs(spec - mirrored).max() < 1e-13 * np.abs(spec).max()

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            sc.dft_forward([])
        with pytest.raises(ValueError):
            sc.dft_inverse([])


class TestBlockDecompose:
    def test_even_split(self):
        plan = sc.BlockPlan.for_signal(4, 2)
        out = sc.block_decompose([1.0, 2.0, 3.0, 4.0], plan)
        assert np.array_equal(out.blocks, [[1, 2], [3, 4]])

    def test_floor_rule_drops_tail_with_warning(self, caplog):
        plan = sc.BlockPlan.for_signal(5, 2)
        assert plan.L_b == 2
        with caplog.at_level(logging.WARNING, logger="usdeconv.signal_core"):
            out = sc.block_decompose([1.0, 2.0, 3.0, 4.0, 5.0], plan)
        assert np.array_equal(out.blocks, [[1, 2], [3, 4]])
        assert any("dropping 1 trailing samples" in r.message for r in caplog.records)

    def test_paper_scale_split(self):
        plan = sc.BlockPlan.for_signal(1024, 2)
        assert plan.L_b == 512
        out = sc.block_decompose(np.arange(1024.0), plan)
        assert out.blocks.shape == (2, 512)

    def test_too_short_signal_rejected(self):
        with pytest.raises(ValueError):
            sc.BlockPlan.for_signal(1, 2)
        plan = sc.BlockPlan.for_signal(8, 2)
        with pytest.raises(ValueError):
            sc.block_decompose([1.0, 2.0], plan)


class TestTruncationOperators:
    def test_a1_small(self):
        assert np.array_equal(sc.apply_A1(np.array([1.0, 2.0, 3.0])), [3, 0])
        assert np.array_equal(sc.apply_A1(np.array([1.0, 2, 3, 4, 5])), [4, 5, 0])

    def test_a2_small(self):
        assert np.array_equal(sc.apply_A2(np.array([1.0, 2.0, 3.0])), [1, 2])
        assert np.array_equal(sc.apply_A2(np.array([1.0, 2, 3, 4, 5])), [1, 2, 3])

    @pytest.mark.parametrize("L_b", [2, 3, 5, 8])
    def test_matches_dense_matrices(self, L_b):
        rng = np.random.default_rng(L_b)
        v = rng.standard_normal(2 * L_b - 1)
        assert np.allclose(sc.apply_A1(v), dense_A1(L_b) @ v)
        assert np.allclose(sc.apply_A2(v), dense_A2(L_b) @ v)

    def test_wrong_length_rejected(self):
        for bad in ([1.0, 2.0], [1.0], [1.0, 2, 3, 4]):
            with pytest.raises(ValueError):
                sc.apply_A1(np.asarray(bad))
            with pytest.raises(ValueError):
                sc.apply_A2(np.asarray(bad))


class TestBlockedConvolution:
    def test_identity_channel(self):
        rng = np.random.default_rng(0)
        plan = sc.BlockPlan.for_signal(12, 3)
        x = sc.block_decompose(rng.standard_normal(12), plan)
        h = np.zeros(12)
        h[0] = 1.0
        hb = sc.block_decompose(h, plan)
        for b in (1, 2, 3):
            assert np.allclose(sc.blocked_convolve_block(x, hb, b),
                               x.blocks[b - 1], atol=1e-12)

    def test_first_block_is_leading_slice(self):
        rng = np.random.default_rng(1)
        plan = sc.BlockPlan.for_signal(8, 2)
        xv, hv = rng.standard_normal(8), rng.standard_normal(8)
        xb = sc.block_decompose(xv, plan)
        hb = sc.block_decompose(hv, plan)
        want = sc.direct_convolve(xv[:4], hv[:4])[:4]
        assert np.allclose(sc.blocked_convolve_block(xb, hb, 1), want, atol=1e-12)

    def test_concatenation_matches_direct_convolution(self):
        rng = np.random.default_rng(2)
        plan = sc.BlockPlan.for_signal(16, 4)
        xv, hv = rng.standard_normal(16), rng.standard_normal(16)
        xb = sc.block_decompose(xv, plan)
        hb = sc.block_decompose(hv, plan)
        got = np.concatenate([sc.blocked_convolve_block(xb, hb, b)
                              for b in range(1, 5)])
        assert np.abs(got - sc.direct_convolve(xv, hv)[:16]).max() < 1e-10

    def test_completeness_property(self):
        # >= 100 random instances across lengths and block counts.
        rng = np.random.default_rng(7)
        count = 0
        for L in (8, 16, 64):
            for B in (1, 2, 3, 4):
                for _ in range(9):
                    plan = sc.BlockPlan.for_signal(L, B)
                    n = plan.B * plan.L_b
                    xv, hv = rng.standard_normal(n), rng.standard_normal(n)
                    xb = sc.block_decompose(xv, plan)
                    hb = sc.block_decompose(hv, plan)
                    got = np.concatenate([
                        sc.blocked_convolve_block(xb, hb, b)
                        for b in range(1, B + 1)
                    ])
                    want = sc.direct_convolve(xv, hv)[:n]
                    assert np.abs(got - want).max() < 1e-10
                    count += 1
        assert count >= 100

    def test_mismatched_plans_rejected(self):
        a = sc.block_decompose(np.arange(8.0), sc.BlockPlan.for_signal(8, 2))
        b = sc.block_decompose(np.arange(8.0), sc.BlockPlan.for_signal(8, 4))
        with pytest.raises(ValueError):
            sc.blocked_convolve_block(a, b, 1)

    def test_block_index_out_of_range(self):
        a = sc.block_decompose(np.arange(8.0), sc.BlockPlan.for_signal(8, 2))
        for b in (0, 3):
            with pytest.raises(ValueError):
                sc.blocked_convolve_block(a, a, b)


class TestDirectConvolve:
    def test_small_cases(self):
        assert np.array_equal(sc.direct_convolve([1.0, 0.0], [3.0, 4.0]), [3, 4, 0])
        assert np.array_equal(sc.direct_convolve([1.0, 1.0], [1.0, 1.0]), [1, 2, 1])

    def test_commutativity(self):
        rng = np.random.default_rng(3)
        x, h = rng.standard_normal(9), rng.standard_normal(5)
        assert np.allclose(sc.direct_convolve(x, h), sc.direct_convolve(h, x),
                           rtol=1e-12, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sc.direct_convolve([], [1.0])


class TestRealIfft:
    def test_a2_of_pad_is_projection(self):
        rng = np.random.default_rng(4)
        x, h = rng.standard_normal(4), rng.standard_normal(4)
        full = sc.direct_convolve(x, h)
        assert np.allclose(sc.apply_A2(full), full[:4])

    def test_asymmetric_spectrum_rejected(self):
        spec = np.zeros(7, dtype=complex)
        spec[1] = 1.0  # breaks conjugate symmetry
        with pytest.raises(NumericalError):
            sc.real_ifft(spec)


class TestRfFrame:
    def test_validation(self):
        with pytest.raises(ValueError):
            sc.RfFrame(samples=np.zeros((1, 8)))
        with pytest.raises(ValueError):
            sc.RfFrame(samples=np.zeros((4, 1)))
        with pytest.raises(ValueError):
            sc.RfFrame(samples=np.full((2, 4), np.nan))
        with pytest.raises(ValueError):
            sc.RfFrame(samples=np.zeros((2, 4)), sample_rate=0.0)

    def test_properties(self):
        f = sc.RfFrame(samples=np.zeros((3, 5)), sample_rate=2.0)
        assert (f.M, f.L) == (3, 5)

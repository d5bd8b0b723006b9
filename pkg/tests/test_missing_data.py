import numpy as np
import pytest

from conftest import conv_matrix, random_estimate
from usdeconv import signal_core as sc
from usdeconv.config import SolverConfig
from usdeconv.crossrelation import (
    BlockedFrame,
    TrfEstimate,
    _cost_from_pair_errors,
    _pair_error_time,
    _pair_error_time_tail,
    run_bmcflms,
)
from usdeconv.errors import DegenerateChannelError
from usdeconv.missing_data import (
    MissingBlock,
    cost_Jb_prime,
    error_block_b_plus_1,
    extend_frame,
    missing_block,
    run_md_bmcflms,
    scale_factor,
    synthesize_rf,
)
from usdeconv.phantom import PhantomConfig, generate
from usdeconv.rmint import PsfEstimate


@pytest.fixture
def truth_setup():
    cfg = PhantomConfig(M=4, L=64, L_s=8, B=2, seed=20)
    truth, frame = generate(cfg)
    plan = sc.BlockPlan.for_signal(64, 2)
    h_true = TrfEstimate.from_time(truth.trfs.reshape(4, 2, plan.L_b), plan)
    psf_true = PsfEstimate(s=truth.psf)
    return cfg, truth, frame, plan, h_true, psf_true


class TestSynthesizeRf:
    def test_impulse_trf_returns_padded_pulse(self, truth_setup):
        cfg, truth, frame, plan, _, psf = truth_setup
        time = np.zeros((4, 2, plan.L_b))
        time[:, 0, 0] = 1.0
        h = TrfEstimate.from_time(time, plan)
        out = synthesize_rf(psf, h, 0)
        assert out.shape == (64 + 8 - 1,)
        assert np.array_equal(out[:8], truth.psf)
        assert np.all(out[8:] == 0.0)

    def test_truth_reproduces_frame(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        for i in range(4):
            out = synthesize_rf(psf, h_true, i)
            assert np.array_equal(out[:64], frame.samples[i])
            assert np.array_equal(out, truth.untruncated[i])

    def test_matches_direct_convolution(self, truth_setup):
        cfg, truth, frame, plan, _, psf = truth_setup
        rng = np.random.default_rng(0)
        h = random_estimate(rng, 4, plan)
        got = synthesize_rf(psf, h, 2)
        want = sc.direct_convolve(psf.s, h.time[2].reshape(-1))
        assert np.array_equal(got, want)


class TestScaleFactor:
    def test_identity(self):
        x = np.arange(1.0, 9.0)
        assert scale_factor(x, x) == 1.0

    def test_half_amplitude(self):
        x = np.arange(1.0, 9.0)
        assert scale_factor(x, 0.5 * x) == pytest.approx(2.0, rel=1e-12)

    def test_recovers_known_channel_scales(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        rng = np.random.default_rng(1)
        alphas = rng.uniform(0.5, 2.0, size=4)
        for i in range(4):
            synth = alphas[i] * synthesize_rf(psf, h_true, i)
            nu = scale_factor(frame.samples[i, :plan.L_b], synth[:plan.L_b])
            assert nu == pytest.approx(1.0 / alphas[i], rel=1e-6)

    def test_zero_synthesis_degenerate(self):
        with pytest.raises(DegenerateChannelError):
            scale_factor(np.ones(8), np.zeros(8))

    def test_lsq_mode(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal(16)
        x = 3.0 * y
        assert scale_factor(x, y, mode="lsq") == pytest.approx(3.0, rel=1e-12)
        with pytest.raises(DegenerateChannelError):
            scale_factor(np.ones(4), np.zeros(4), mode="lsq")

    def test_threshold_excludes_near_zeros(self):
        # one synthesized sample is tiny: a plain mean would explode
        x = np.array([1.0, 1.0, 1.0, 1.0])
        y = np.array([1.0, 1.0, 1.0, 1e-12])
        assert scale_factor(x, y) == pytest.approx(1.0, rel=1e-9)


class TestMissingBlock:
    def test_exact_inputs_reproduce_withheld_tail(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        mb = missing_block(psf, h_true, frame)
        assert np.allclose(mb.nu, 1.0, rtol=1e-12)
        withheld = truth.untruncated[:, 64:]
        assert np.array_equal(mb.tail[:, :7], withheld)
        assert np.all(mb.tail[:, 7:] == 0.0)

    def test_zero_psf_gives_zero_block(self, truth_setup):
        cfg, truth, frame, plan, h_true, _ = truth_setup
        psf0 = PsfEstimate(s=np.zeros(8))
        mb = missing_block(psf0, h_true, frame)
        assert np.all(mb.tail == 0.0)
        assert np.all(mb.nu == 1.0)

    def test_tail_support(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        rng = np.random.default_rng(3)
        h = random_estimate(rng, 4, plan)
        mb = missing_block(psf, h, frame)
        assert np.all(mb.tail[:, psf.L_s - 1:] == 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            MissingBlock(tail=np.full((2, 4), np.nan), nu=np.ones(2))
        with pytest.raises(ValueError):
            MissingBlock(tail=np.zeros((2, 4)), nu=np.array([1.0, 0.0]))


class TestErrorBlockBPlus1:
    def test_zero_at_truth(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        mb = missing_block(psf, h_true, frame)
        bf = extend_frame(BlockedFrame.from_frame(frame, plan), mb)
        scale = np.abs(truth.noiseless).max()
        for (i, j) in [(0, 1), (1, 3), (2, 0)]:
            e = error_block_b_plus_1(bf, h_true, i, j)
            assert np.abs(e).max() < 1e-10 * scale

    def test_antisymmetry(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        rng = np.random.default_rng(4)
        h = random_estimate(rng, 4, plan)
        mb = missing_block(psf, h, frame)
        bf = extend_frame(BlockedFrame.from_frame(frame, plan), mb)
        e01 = error_block_b_plus_1(bf, h, 0, 1)
        e10 = error_block_b_plus_1(bf, h, 1, 0)
        assert np.array_equal(e01, -e10)

    def test_matches_time_domain_oracle(self, truth_setup):
        # A1 terms pair measured blocks p=1..B with TRF block B-p+1;
        # A2 terms pair blocks p=2..B+1 (estimated last) with block B-p+2.
        cfg, truth, frame, plan, h_true, psf = truth_setup
        rng = np.random.default_rng(5)
        h = random_estimate(rng, 4, plan)
        mb = missing_block(psf, h, frame)
        bf = extend_frame(BlockedFrame.from_frame(frame, plan), mb)
        L_b, B = plan.L_b, plan.B
        i, j = 1, 2

        def comp(p, q):
            Ci = conv_matrix(bf.blocks[i, p - 1], L_b)
            Cj = conv_matrix(bf.blocks[j, p - 1], L_b)
            return Ci @ h.time[j, q - 1] - Cj @ h.time[i, q - 1]

        want = np.zeros(L_b)
        for p in range(1, B + 1):
            seg = comp(p, B - p + 1)
            want[: L_b - 1] += seg[L_b:]
        for p in range(2, B + 2):
            want += comp(p, B - p + 2)[:L_b]
        got = np.real(sc.ifft(error_block_b_plus_1(bf, h, i, j)))
        assert np.abs(got - want).max() < 1e-10

    def test_no_data_beyond_b_plus_1(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        mb = missing_block(psf, h_true, frame)
        bf = extend_frame(BlockedFrame.from_frame(frame, plan), mb)
        assert bf.num_blocks == plan.B + 1


class TestCostJbPrime:
    def test_reduces_to_constrained_cost(self, truth_setup):
        from usdeconv.constraint import cost_Jcorr
        from usdeconv.crossrelation import cost_Jb
        cfg, truth, frame, plan, h_true, psf = truth_setup
        rng = np.random.default_rng(6)
        h = random_estimate(rng, 4, plan)
        mb = missing_block(psf, h, frame)
        bf = extend_frame(BlockedFrame.from_frame(frame, plan), mb)
        psi = 0.2
        got = cost_Jb_prime(h, bf, 2, alpha1=1.0, alpha2=0.0, psi=psi)
        want = cost_Jb(h, bf, 2) - psi * cost_Jcorr(bf, h, 2)
        assert got == pytest.approx(want, rel=1e-12)

    def test_default_weights(self):
        cfg = SolverConfig()
        assert (cfg.alpha1, cfg.alpha2) == (0.1, 2.7e-5)

    def test_composite_gradient_finite_differences(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        rng = np.random.default_rng(7)
        h = random_estimate(rng, 4, plan)
        mb = missing_block(psf, h, frame)
        bf = extend_frame(BlockedFrame.from_frame(frame, plan), mb)
        L_b = plan.L_b
        a1, a2, psi = 0.1, 2.7e-2, 0.05
        b, k = 2, 1

        from usdeconv.constraint import constrained_gradient_block_b
        from usdeconv.crossrelation import (_bh_f1, _b1h_f1, _correlation_time,
                                            _full_antisym)
        # analytic: a1*grad_Jb + a2*grad_Jtail - psi*grad_Jcorr
        iu, ju = np.triu_indices(4, 1)
        _, _, Em = _pair_error_time_tail(bf.specs, h.specs, L_b)
        Sm = _full_antisym(iu, ju, _bh_f1(Em, L_b), 4)
        S1m = _full_antisym(iu, ju, _b1h_f1(Em, L_b), 4)
        cx = np.conj(bf.specs)
        B = plan.B
        g_tail = (np.einsum("if,if->f", cx[:, B - b, :], S1m[:, k, :])
                  + np.einsum("if,if->f", cx[:, B - b + 1, :], Sm[:, k, :]))
        g = a1 * constrained_gradient_block_b(h, bf, b, k, psi=psi / a1) + a2 * g_tail

        def cost_of(spec):
            hs = h.specs.copy()
            hs[k, b - 1, :] = spec
            _, _, E = _pair_error_time(bf.specs, hs, b, L_b)
            total = a1 * _cost_from_pair_errors(E, L_b)
            _, _, Et = _pair_error_time_tail(bf.specs, hs, L_b)
            total += a2 * _cost_from_pair_errors(Et, L_b)
            r = _correlation_time(bf.specs, hs, b, L_b)
            return total - psi * float(L_b * np.sum(np.abs(r) ** 2))

        s0 = h.specs[k, b - 1, :].copy()
        eps = 1e-6
        fd = np.zeros_like(s0)
        for f in range(s0.size):
            for part in (1.0, 1j):
                sp = s0.copy(); sp[f] += eps * part
                sm = s0.copy(); sm[f] -= eps * part
                fd[f] += ((cost_of(sp) - cost_of(sm)) / (2 * eps) / 2.0) * part
        mask = np.abs(g) > 1e-8
        rel = np.abs(fd - g)[mask] / np.abs(g)[mask]
        assert rel.max() < 1e-5

    def test_weight_validation(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        mb = missing_block(psf, h_true, frame)
        bf = extend_frame(BlockedFrame.from_frame(frame, plan), mb)
        with pytest.raises(ValueError):
            cost_Jb_prime(h_true, bf, 1, alpha1=-1.0, alpha2=0.0, psi=0.0)


class TestRunMdBmcflms:
    def test_requires_full_warm_start(self, truth_setup):
        cfg, truth, frame, plan, h_true, psf = truth_setup
        sconf = SolverConfig(B=2, max_iters=5, L_s=8, M_b=4)
        with pytest.raises(ValueError):
            run_md_bmcflms(frame, sconf, warm_start=None)
        partial = TrfEstimate.initial(4, plan)  # active_blocks == 1
        with pytest.raises(ValueError):
            run_md_bmcflms(frame, sconf, warm_start=partial)

    def test_noiseless_refinement_does_not_degrade(self):
        cfg = PhantomConfig(M=8, L=64, L_s=8, B=2, seed=21,
                            center_freq=0.25, frac_bandwidth=1.2)
        truth, frame = generate(cfg)
        sconf = SolverConfig(B=2, max_iters=400, tol=0.0, xi=0.0,
                             L_s=8, M_b=8, alpha2=2.7e-5)
        h1, rec1 = run_bmcflms(frame, sconf, truth=truth.trfs)
        h2, rec2, mb = run_md_bmcflms(frame, sconf, warm_start=h1,
                                      truth=truth.trfs)
        npm1 = rec1[-1].npm
        npm2 = rec2[-1].npm
        assert npm2 <= npm1 + 1e-9
        assert all(r.phase == "md" for r in rec2)

    def test_reduces_to_plain_continuation(self):
        # alpha2 = 0 and constraint off: the md update direction divides the
        # alpha1-weighted gradient by alpha1, so iterates match a plain
        # crossrelation continuation bit for bit.
        cfg = PhantomConfig(M=4, L=32, L_s=4, B=2, seed=22)
        truth, frame = generate(cfg)
        base = SolverConfig(B=2, max_iters=30, tol=0.0, xi=0.0, L_s=4, M_b=4)
        h0, _ = run_bmcflms(frame, base)

        md_cfg = base.replace(alpha2=0.0)
        h_md, rec_md, _ = run_md_bmcflms(frame, md_cfg, warm_start=h0)

        # manual continuation: rerun the plain block loop from the warm start
        from usdeconv.crossrelation import BlockedFrame as BF, _solve_blocks
        from usdeconv.constraint import ConstraintParams
        plan = h0.plan
        h_ref = h0.copy()
        h_ref.active_blocks = plan.B
        bf = BF.from_frame(frame, plan)
        _solve_blocks(bf, h_ref, base, ConstraintParams(xi=0.0), None,
                      phase="bmcflms", md=None)
        assert np.array_equal(h_md.time, h_ref.time)

    def test_logs_composite_cost(self):
        cfg = PhantomConfig(M=4, L=32, L_s=4, B=2, seed=23)
        truth, frame = generate(cfg)
        sconf = SolverConfig(B=2, max_iters=10, tol=0.0, xi=0.0, L_s=4, M_b=4)
        h0, _ = run_bmcflms(frame, sconf)
        h, rec, mb = run_md_bmcflms(frame, sconf, warm_start=h0)
        assert {r.block for r in rec} == {1, 2}
        assert all(np.isfinite(r.cost) for r in rec)

import numpy as np
import pytest

from usdeconv import signal_core as sc
from usdeconv.crossrelation import BlockedFrame, TrfEstimate
from usdeconv.phantom import PhantomConfig, generate


@pytest.fixture
def small_noiseless():
    """M=3, L=24, B=2 noiseless phantom with its blocked frame and truth."""
    cfg = PhantomConfig(M=3, L=24, L_s=4, B=2, seed=11)
    truth, frame = generate(cfg)
    plan = sc.BlockPlan.for_signal(frame.L, cfg.B)
    bf = BlockedFrame.from_frame(frame, plan)
    h_true = TrfEstimate.from_time(
        truth.trfs.reshape(cfg.M, cfg.B, plan.L_b), plan)
    return truth, frame, bf, h_true


def random_estimate(rng, M, plan, active=None):
    return TrfEstimate.from_time(
        rng.standard_normal((M, plan.B, plan.L_b)), plan, active_blocks=active)


def conv_matrix(x, n_cols):
    """Full linear convolution matrix: (len(x)+n_cols-1, n_cols)."""
    x = np.asarray(x, dtype=float)
    C = np.zeros((x.size + n_cols - 1, n_cols))
    for c in range(n_cols):
        C[c:c + x.size, c] = x
    return C

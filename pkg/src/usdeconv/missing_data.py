"""Re-synthesis of RF data from estimates, per-channel scale recovery,
estimation of the never-measured (B+1)-th data block, and the refinement
solver that folds the extra error block into the cost.

The scanner only records L samples per channel; the convolution tail of
``L_s - 1`` samples is lost. With a pulse estimate and the TRFs from the
first solver pass those samples can be re-synthesized (up to a per-channel
scale fixed against the measured first block), and the (B+1)-th error block
they enable contributes ``L_b * M(M-1)/2`` extra equations. The refinement
cost is ``alpha1 * J_b + alpha2 * J_{B+1} - psi * J_corr_b``, the estimated
block getting the small weight since it is itself derived data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import signal_core as sc
from .crossrelation import (
    BlockedFrame,
    IterationRecord,
    TrfEstimate,
    _cost_from_pair_errors,
    _MdTerms,
    _pair_error_time,
    _pair_error_time_tail,
    _solve_blocks,
)
from .constraint import ConstraintParams
from .errors import DegenerateChannelError
from .rmint import PsfEstimate, estimate_psf

# Ratio samples with |synthesized| below this fraction of the block maximum
# are excluded from the plain-mean scale estimator.
SCALE_RATIO_FLOOR = 1e-6


@dataclass(frozen=True)
class MissingBlock:
    """Estimated (B+1)-th data block and the per-channel scales behind it.

    Only the first ``L_s - 1`` samples of each channel's tail are nontrivial;
    the rest are structural zeros.
    """

    tail: np.ndarray  # (M, L_b)
    nu: np.ndarray    # (M,)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.tail)) and np.all(np.isfinite(self.nu))):
            raise ValueError("missing block contains non-finite values")
        if np.any(self.nu == 0.0):
            raise ValueError("scale factors must be nonzero")


def synthesize_rf(psf: PsfEstimate, h_est: TrfEstimate, i: int) -> np.ndarray:
    """Full re-synthesized channel ``s^ * h^_i``.

    Length ``B*L_b + L_s - 1``: the first ``B*L_b`` samples are comparable
    with the measured data, the rest are the missing tail.
    """
    h_full = h_est.time[i].reshape(-1)
    return np.convolve(psf.s, h_full)


def scale_factor(observed: np.ndarray, synthesized: np.ndarray,
                 mode: str = "ratio") -> float:
    """Per-channel scale between measured and synthesized first blocks.

    ``ratio`` averages the per-sample ratios, skipping samples where the
    synthesized magnitude is below ``1e-6`` of the block maximum (a plain
    mean would divide by near-zeros). ``lsq`` returns the least-squares
    ratio ``<observed, synthesized> / <synthesized, synthesized>``.
    """
    x = np.asarray(observed, dtype=np.float64).ravel()
    y = np.asarray(synthesized, dtype=np.float64).ravel()
    if x.size != y.size or x.size == 0:
        raise ValueError(f"block length mismatch: {x.size} vs {y.size}")
    if mode == "lsq":
        denom = float(y @ y)
        if denom == 0.0:
            raise DegenerateChannelError("synthesized block is identically zero")
        return float(x @ y) / denom
    if mode != "ratio":
        raise ValueError(f"unknown scale mode {mode!r}")
    keep = np.abs(y) > SCALE_RATIO_FLOOR * np.abs(y).max(initial=0.0)
    if not np.any(keep):
        raise DegenerateChannelError(
            "all synthesized samples below the ratio threshold"
        )
    return float(np.mean(x[keep] / y[keep]))


def missing_block(psf: PsfEstimate, h_est: TrfEstimate,
                  frame: sc.RfFrame, mode: str = "ratio") -> MissingBlock:
    """Scaled tail block per channel, zero-padded to ``L_b`` samples.

    A channel whose synthesized data is identically zero (e.g. a zero pulse
    estimate) contributes a zero tail with a neutral scale of 1 instead of
    failing; genuine scale degeneracies propagate.
    """
    plan = h_est.plan
    L_b, L_s = plan.L_b, psf.L_s
    if L_s > L_b:
        raise ValueError(f"pulse length {L_s} exceeds block length {L_b}")
    M = h_est.M
    if frame.M != M:
        raise ValueError(f"channel count mismatch: frame {frame.M}, estimate {M}")
    L_eff = plan.B * L_b
    tail = np.zeros((M, L_b))
    nu = np.ones(M)
    for i in range(M):
        synth = synthesize_rf(psf, h_est, i)
        if np.abs(synth).max(initial=0.0) == 0.0:
            continue
        nu[i] = scale_factor(frame.samples[i, :L_b], synth[:L_b], mode=mode)
        tail[i, : L_s - 1] = nu[i] * synth[L_eff:]
    return MissingBlock(tail=tail, nu=nu)


def extend_frame(blocked_frame: BlockedFrame, block: MissingBlock) -> BlockedFrame:
    """Blocked frame with the estimated block appended as data block B+1."""
    return blocked_frame.extended(block.tail)


def error_block_b_plus_1(extended_frame: BlockedFrame, h_est: TrfEstimate,
                         i: int, j: int) -> np.ndarray:
    """(B+1)-th block error of pair (i, j), length-``L_b`` transform.

    Sums the tail error components: measured blocks p = 1..B feed the
    shifted (A1) terms, blocks p = 2..B+1 — including the estimated block —
    feed the leading (A2) terms. There is no TRF block B+1, and data beyond
    block B+1 is never referenced.
    """
    iu, ju, E = _pair_error_time_tail(extended_frame.specs, h_est.specs,
                                      h_est.plan.L_b)
    lo, hi = min(i, j), max(i, j)
    idx = np.flatnonzero((iu == lo) & (ju == hi))
    if idx.size != 1:
        raise ValueError(f"invalid channel pair ({i}, {j})")
    e = E[idx[0]]
    return sc.fft(e if i < j else -e)


def cost_Jb_prime(h_est: TrfEstimate, extended_frame: BlockedFrame, b: int,
                  alpha1: float, alpha2: float, psi: float) -> float:
    """Composite cost ``alpha1*J_b + alpha2*J_{B+1} - psi*J_corr_b``."""
    from .constraint import cost_Jcorr  # noqa: PLC0415 (layering)

    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("cost weights must be >= 0")
    L_b = h_est.plan.L_b
    _, _, E = _pair_error_time(extended_frame.specs, h_est.specs, b, L_b)
    total = alpha1 * _cost_from_pair_errors(E, L_b)
    if alpha2 > 0:
        _, _, Em = _pair_error_time_tail(extended_frame.specs, h_est.specs, L_b)
        total += alpha2 * _cost_from_pair_errors(Em, L_b)
    if psi != 0.0:
        total -= psi * cost_Jcorr(extended_frame, h_est, b)
    return total


def run_md_bmcflms(frame: sc.RfFrame, config, warm_start: TrfEstimate,
                   psf: Optional[PsfEstimate] = None,
                   constraint: Optional[ConstraintParams] = None,
                   truth: Optional[np.ndarray] = None
                   ) -> tuple[TrfEstimate, list[IterationRecord], MissingBlock]:
    """Refine warm-started TRFs with the estimated (B+1)-th error block.

    The pulse (estimated here unless supplied) and the missing block are
    computed once up front and held fixed through the block loop; every
    update then renormalizes all B blocks jointly.

    Returns the refined estimate, the iteration log (phase ``"md"``, cost
    column holding the composite cost), and the missing block used.
    """
    config.validate()
    if not isinstance(warm_start, TrfEstimate):
        raise ValueError("md refinement requires a warm-start TrfEstimate")
    if warm_start.active_blocks != warm_start.plan.B:
        raise ValueError(
            f"warm start must cover all {warm_start.plan.B} blocks, "
            f"got {warm_start.active_blocks}"
        )
    if warm_start.norm_active() == 0.0:
        raise ValueError("warm start is identically zero")
    if constraint is None:
        constraint = ConstraintParams(xi=config.xi, rho=config.rho,
                                      gamma=config.gamma)
    plan = warm_start.plan
    if psf is None:
        psf = estimate_psf(frame, warm_start, config.L_s, delta=config.delta,
                           M_b=min(config.M_b, frame.M),
                           target_delay=config.psf_delay)
    block = missing_block(psf, warm_start, frame, mode=config.scale_mode)
    bf = extend_frame(BlockedFrame.from_frame(frame, plan), block)

    h = warm_start.copy()
    h.active_blocks = plan.B
    records = _solve_blocks(bf, h, config, constraint, truth, phase="md",
                            md=_MdTerms(alpha1=config.alpha1, alpha2=config.alpha2))
    return h, records, block

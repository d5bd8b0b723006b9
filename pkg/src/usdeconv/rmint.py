"""R-MINT estimation of the shared pulse from the first axial block.

A bank of per-channel equalizers is chosen so that the estimated first-block
TRFs jointly collapse to an impulse; pushing the measured first-block data
through the same bank then exposes the pulse. Channels are processed in
lateral groups of ``M_b`` to bound the equalizer system size, and the
per-group pulse estimates are averaged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .crossrelation import TrfEstimate
from .errors import NumericalError
from .signal_core import RfFrame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PsfEstimate:
    """Estimated pulse, ``L_s`` real coefficients."""

    s: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.s, dtype=np.float64))
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("PSF estimate must be a 1-D vector of length >= 2")
        if not np.all(np.isfinite(arr)):
            raise ValueError("PSF estimate contains non-finite values")
        object.__setattr__(self, "s", arr)

    @property
    def L_s(self) -> int:
        return self.s.size


@dataclass(frozen=True)
class EqualizerBank:
    """Stacked per-channel equalizers with their design metadata."""

    g: np.ndarray
    delta: float
    target_index: int
    residual: float


def build_channel_matrix(h_est: TrfEstimate,
                         channels: Sequence[int]) -> np.ndarray:
    """Horizontal stack of first-block TRF convolution matrices.

    Column ``c`` of channel ``i``'s block is the first-block TRF shifted by
    ``c`` (Toeplitz); the stack has shape ``(2*L_b - 1, len(channels)*L_b)``.
    """
    chans = list(channels)
    if not chans:
        raise ValueError("channel subset must be non-empty")
    L_b = h_est.plan.L_b
    cols = []
    for i in chans:
        first = np.concatenate([h_est.time[i, 0, :], np.zeros(L_b - 1)])
        cols.append(la.toeplitz(first, np.zeros(L_b)))
    return np.hstack(cols)


def solve_equalizer(H: np.ndarray, d: np.ndarray, delta: float) -> EqualizerBank:
    """Tikhonov-regularized least squares ``min ||Hg - d||^2 + delta*||g||^2``.

    Solved through a Cholesky factorization of the regularized normal
    matrix; ``delta`` here is absolute. With ``delta = 0`` a singular system
    raises :class:`NumericalError` carrying a conditioning diagnostic.
    """
    H = np.asarray(H, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).ravel()
    if H.ndim != 2 or H.shape[0] != d.size:
        raise ValueError(f"incompatible shapes H {H.shape}, d {d.shape}")
    if delta < 0 or not math.isfinite(delta):
        raise ValueError(f"delta must be >= 0, got {delta}")
    A = H.T @ H
    A[np.diag_indices_from(A)] += delta
    rhs = H.T @ d
    try:
        cf = la.cho_factor(A, lower=True)
        g = la.cho_solve(cf, rhs)
    except la.LinAlgError as exc:
        cond = np.linalg.cond(H.T @ H + delta * np.eye(A.shape[0]))
        raise NumericalError(
            f"equalizer system not positive definite (delta={delta:g}, "
            f"cond ~ {cond:.3e}); increase the regularization"
        ) from exc
    target = int(np.argmax(d != 0.0)) if np.any(d != 0.0) else 0
    residual = float(np.linalg.norm(H @ g - d))
    return EqualizerBank(g=g, delta=float(delta), target_index=target,
                         residual=residual)


def estimate_psf(frame: RfFrame, h_est: TrfEstimate, L_s: int,
                 delta: float = 1e-3, M_b: int = 8,
                 target_delay: int = 0) -> PsfEstimate:
    """Estimate the pulse from first-block data via lateral equalizer banks.

    Parameters
    ----------
    frame : RfFrame
        Measured data; only the first axial block is used.
    h_est : TrfEstimate
        TRF estimates supplying the first-block channel matrices.
    L_s : int
        Pulse length, ``2 <= L_s <= L_b``.
    delta : float
        Regularization weight relative to the largest diagonal entry of the
        normal matrix (scale-free conditioning control).
    M_b : int
        Channels per lateral block; ``floor(M / M_b)`` blocks are used and
        leftover channels are skipped with a logged warning.
    target_delay : int
        Index of the impulse the equalized channels should collapse to.

    Returns
    -------
    PsfEstimate
        Average over lateral blocks of the first ``L_s`` samples of the
        equalized first-block data.
    """
    L_b = h_est.plan.L_b
    M = frame.M
    if h_est.M != M:
        raise ValueError(f"channel count mismatch: frame {M}, estimate {h_est.M}")
    if not 2 <= L_s <= L_b:
        raise ValueError(f"L_s must satisfy 2 <= L_s <= L_b = {L_b}, got {L_s}")
    if not 1 <= M_b <= M:
        raise ValueError(f"M_b must satisfy 1 <= M_b <= M = {M}, got {M_b}")
    if not 0 <= target_delay < 2 * L_b - 1:
        raise ValueError(f"target delay {target_delay} out of range")
    n_groups = M // M_b
    leftover = M - n_groups * M_b
    if leftover:
        logger.warning("excluding %d leftover channels (M=%d, M_b=%d)",
                       leftover, M, M_b)

    d = np.zeros(2 * L_b - 1)
    d[target_delay] = 1.0
    x1 = frame.samples[:, :L_b]

    s_acc = np.zeros(L_s)
    for r in range(n_groups):
        chans = range(r * M_b, (r + 1) * M_b)
        H = build_channel_matrix(h_est, chans)
        diag_max = float(np.einsum("ij,ij->j", H, H).max())
        bank = solve_equalizer(H, d, delta * diag_max)
        g = bank.g.reshape(M_b, L_b)
        # D_{L_s} C_{x~1} g without materializing the data matrix.
        s_r = np.zeros(L_s)
        for local, i in enumerate(chans):
            s_r += np.convolve(x1[i], g[local])[:L_s]
        s_acc += s_r
    return PsfEstimate(s=s_acc / n_groups)

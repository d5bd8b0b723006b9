"""Correlation-energy constraint against misconvergence.

Crossrelation-based adaptation first drives the estimate toward the true
TRFs, then — once the residual is noise-dominated — drifts away again. The
energy of the blocked correlation between each channel's measured data and
its own TRF estimate peaks at that turning point, so subtracting a scheduled
multiple of it from the cost restrains the drift: the effective objective is
``J_bt = J_b - psi * J_corr_b`` with the coupling recomputed every iteration
from the current crossrelation cost and treated as a constant inside the
gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import signal_core as sc
from .crossrelation import (
    BlockedFrame,
    TrfEstimate,
    _b1h_f1,
    _bh_f1,
    _correlation_time,
    as_blocked,
    grad_Jb_block_b,
    grad_Jb_block_q,
)


@dataclass(frozen=True)
class ConstraintParams:
    """Coupling schedule parameters ``psi = xi * |rho * log10(J)| ** gamma``.

    Defaults follow the reference operating point (xi = 1e-4, rho = 2.55,
    gamma = 2.4); ``xi = 0`` switches the constraint off.
    """

    xi: float = 1e-4
    rho: float = 2.55
    gamma: float = 2.4

    def __post_init__(self):
        if self.xi < 0 or not math.isfinite(self.xi):
            raise ValueError(f"xi must be >= 0, got {self.xi}")
        if self.rho <= 0 or not math.isfinite(self.rho):
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.gamma <= 0 or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def coupling_factor(J: float, params: ConstraintParams) -> float:
    """Coupling ``psi`` for a crossrelation cost value ``J > 0``.

    Minimized (zero) at J = 1 and growing with ``|log10 J|`` on either side.
    Inside the solver loop J is clamped away from zero instead; this
    standalone form rejects non-positive J.
    """
    if not (J > 0 and math.isfinite(J)):
        raise ValueError(f"coupling factor needs finite J > 0, got {J}")
    return params.xi * abs(params.rho * math.log10(J)) ** params.gamma


def correlation_block(blocked_frame: BlockedFrame, h_est: TrfEstimate,
                      b: int, i: int) -> np.ndarray:
    """b-th block of ``x_i * h^_i`` via the blocked convolution identity."""
    if not 1 <= b <= h_est.active_blocks:
        raise ValueError(f"block {b} out of range 1..{h_est.active_blocks}")
    x_blocked = sc.BlockedSignal(blocks=blocked_frame.blocks[i],
                                 plan=blocked_frame.plan)
    h_blocked = sc.BlockedSignal(blocks=h_est.time[i], plan=h_est.plan)
    return sc.blocked_convolve_block(x_blocked, h_blocked, b)


def cost_Jcorr(frame, h_est: TrfEstimate, b: int) -> float:
    """Total block-b correlation energy across channels."""
    bf = as_blocked(frame, h_est.plan)
    L_b = h_est.plan.L_b
    r = _correlation_time(bf.specs, h_est.specs, b, L_b)
    return float(L_b * np.sum(np.abs(r) ** 2))


def constrained_gradient_block_b(h_est: TrfEstimate, frame, b: int, k: int,
                                 psi: float) -> np.ndarray:
    """Block-b gradient of ``J_b - psi * J_corr_b`` for channel k."""
    g = grad_Jb_block_b(h_est, frame, b, k)
    if psi == 0.0:
        return g
    bf = as_blocked(frame, h_est.plan)
    L_b = h_est.plan.L_b
    r_k = _correlation_time(bf.specs, h_est.specs, b, L_b)[k]
    return g - psi * (np.conj(bf.specs[k, 0, :]) * _bh_f1(r_k, L_b))


def constrained_gradient_block_q(h_est: TrfEstimate, frame, b: int, q: int,
                                 k: int, psi: float) -> np.ndarray:
    """Earlier-block (q < b) gradient of the constrained cost."""
    g = grad_Jb_block_q(h_est, frame, b, q, k)
    if psi == 0.0:
        return g
    bf = as_blocked(frame, h_est.plan)
    L_b = h_est.plan.L_b
    r_k = _correlation_time(bf.specs, h_est.specs, b, L_b)[k]
    xs = bf.specs
    return g - psi * (np.conj(xs[k, b - q - 1, :]) * _b1h_f1(r_k, L_b)
                      + np.conj(xs[k, b - q, :]) * _bh_f1(r_k, L_b))

"""Estimation and image-quality metrics.

Normalized projection misalignment (NPM) scores a channel estimate against
ground truth up to scale; resolution gain compares axial autocovariance
widths before and after deconvolution; envelope/log imaging renders frames
the way the rest of the toolkit displays them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

logger = logging.getLogger(__name__)

NPM_FLOOR_DB = -300.0

STANDARD_RG_LEVELS = (5.0, 10.0)


@dataclass(frozen=True)
class NpmValue:
    """NPM in decibels (lower is better); ``at_floor`` marks an exact match.

    Orthogonal estimates score 0 dB; a numerically zero projection residual
    is reported as the -300 dB floor rather than -inf so values serialize.
    """

    value: float
    at_floor: bool = False


@dataclass(frozen=True)
class RgReport:
    """Axial autocovariance widths at a -d dB level and their ratio."""

    r_original: float
    r_deconvolved: float
    gain: float
    level_db: float


def npm(h_true, h_est) -> NpmValue:
    """Normalized projection misalignment between two equal-length vectors.

    The truth is projected off the estimate's direction,
    ``zeta = h - (h.h^ / h^.h^) h^``, and the residual is reported as
    ``20*log10(||zeta|| / ||h||)``. Invariant to rescaling the estimate.
    """
    h = np.asarray(h_true, dtype=np.float64).ravel()
    e = np.asarray(h_est, dtype=np.float64).ravel()
    if h.size != e.size:
        raise ValueError(f"length mismatch: {h.size} vs {e.size}")
    hn = np.linalg.norm(h)
    en2 = float(e @ e)
    if hn == 0.0 or en2 == 0.0:
        raise ValueError("npm is undefined for zero vectors")
    zeta = h - (float(h @ e) / en2) * e
    ratio = np.linalg.norm(zeta) / hn
    if ratio < 10.0 ** (NPM_FLOOR_DB / 20.0):
        return NpmValue(value=NPM_FLOOR_DB, at_floor=True)
    return NpmValue(value=float(20.0 * math.log10(ratio)), at_floor=False)


def _autocovariance_2d(image: np.ndarray) -> np.ndarray:
    """Biased, mean-removed linear 2-D autocovariance, peak-normalized.

    Returns lags arranged with zero lag at the center of a
    ``(2M-1, 2L-1)`` array.
    """
    x = image - image.mean()
    m, n = x.shape
    spec = np.fft.fft2(x, s=(2 * m - 1, 2 * n - 1))
    acov = np.fft.ifft2(np.abs(spec) ** 2).real / x.size
    peak = acov[0, 0]
    if peak <= 0.0:
        raise ValueError("flat image: autocovariance peak is zero")
    return np.fft.fftshift(acov / peak)


def _width_at_level(slice_vals: np.ndarray, center: int, threshold: float) -> float:
    """Two-sided width where the unit-peak slice first falls below threshold.

    Sub-sample crossings are located by linear interpolation; a slice that
    never crosses on one side contributes its full extent on that side.
    """
    def one_side(step: int) -> float:
        prev = slice_vals[center]
        k = 1
        while True:
            idx = center + step * k
            if idx < 0 or idx >= slice_vals.size:
                return float(k - 1)
            cur = slice_vals[idx]
            if cur < threshold:
                return (k - 1) + (prev - threshold) / (prev - cur)
            prev = cur
            k += 1

    return one_side(+1) + one_side(-1)


def resolution_gain(rf_image, trf_image, d: float) -> RgReport:
    """Resolution gain ``G_d`` from axial autocovariance slice widths.

    Each image's normalized 2-D autocovariance is sliced axially through the
    peak (zero lateral lag) and the two-sided width where the slice first
    falls ``d`` dB below the peak (amplitude convention, threshold
    ``10**(-d/20)``) is measured with linear interpolation. The gain is
    ``R_o / R_d``.

    Parameters
    ----------
    rf_image : (M, L) array_like
        Pre-deconvolution data (channels x axial samples).
    trf_image : (M, L) array_like
        Post-deconvolution data of the same shape.
    d : float
        Level in dB; 5 and 10 are the standard choices, others are accepted
        with a logged warning.
    """
    if not (d > 0 and math.isfinite(d)):
        raise ValueError(f"level must be a positive finite dB value, got {d}")
    if float(d) not in STANDARD_RG_LEVELS:
        logger.warning("nonstandard resolution-gain level %s dB", d)
    rf = np.asarray(rf_image, dtype=np.float64)
    trf = np.asarray(trf_image, dtype=np.float64)
    if rf.ndim != 2 or trf.ndim != 2:
        raise ValueError("resolution_gain expects 2-D (M, L) images")
    threshold = 10.0 ** (-d / 20.0)

    widths = []
    for img in (rf, trf):
        acov = _autocovariance_2d(img)
        m2, n2 = acov.shape
        axial = acov[m2 // 2, :]
        w = _width_at_level(axial, n2 // 2, threshold)
        if w <= 0.0:
            raise ValueError("degenerate axial slice: zero width at level")
        widths.append(w)
    r_o, r_d = widths
    return RgReport(r_original=r_o, r_deconvolved=r_d, gain=r_o / r_d,
                    level_db=float(d))


def _auto_compression(env: np.ndarray) -> float:
    """Pick c so the 99th-percentile envelope maps to 0.9 of full scale."""
    p99 = float(np.percentile(env, 99.0))
    top = float(env.max())
    if top <= 0.0:
        return 1.0
    if p99 >= 0.9 * top or p99 <= 0.0:
        # No solution (near-uniform magnitudes); map the max to log(10).
        return 9.0 / top

    def f(log_c: float) -> float:
        c = math.exp(log_c)
        return math.log(c * p99 + 1.0) - 0.9 * math.log(c * top + 1.0)

    root = optimize.brentq(f, math.log(1e-12 / top), math.log(1e12 / top))
    return math.exp(root)


def envelope_log_image(data, c: float | None = None
                       ) -> tuple[np.ndarray, float]:
    """Log-compressed envelope image ``log(c * env + 1)``.

    The envelope is the magnitude of the DFT-based analytic signal taken
    along the axial (last) axis. With ``c=None`` the compression constant is
    chosen automatically (99th percentile at 0.9 of full scale).

    Returns
    -------
    (image, c) : ((M, L) ndarray, float)
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("envelope_log_image expects a 2-D (M, L) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")
    env = np.abs(signal.hilbert(x, axis=-1))
    if c is None:
        c = _auto_compression(env)
    elif c < 0 or not math.isfinite(c):
        raise ValueError(f"compression constant must be >= 0, got {c}")
    return np.log(c * env + 1.0), float(c)

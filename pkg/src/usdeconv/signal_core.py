"""Block decomposition, exact-length DFT helpers, truncation operators and
the blocked convolution identity.

A length-L signal is split into B contiguous blocks of ``L_b = floor(L / B)``
samples. The product of two block spectra (zero-padded to ``2*L_b - 1`` bins)
is one segment of the full linear convolution; block ``b`` of the first-L
part of the convolution is recovered by summing truncated segments::

    y~(b) = sum_{p=1..b-1} A1(x^p * h^(b-p)) + sum_{p=1..b} A2(x^p * h^(b-p+1))

where ``A2`` keeps the first ``L_b`` samples of a segment and ``A1`` moves
its last ``L_b - 1`` samples to the front, zeroing the final slot. All
block-wise frequency math in the toolkit runs through this module so that
these conventions live in one place.

Transforms use the exact odd length ``2*L_b - 1``; nothing is rounded up to
a power of two, because the truncation operators are only dimensionally
consistent at that length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft as _scipy_fft

from .errors import NumericalError

logger = logging.getLogger(__name__)

_FFT_WORKERS = 1

# Imaginary residue tolerated (relative to the result scale) when a spectrum
# that should be conjugate-symmetric is brought back to the time domain.
IMAG_RESIDUE_TOL = 1e-10


def set_fft_workers(n: int) -> None:
    """Cap the threads scipy may use for batched transforms.

    Transforms are bit-identical for any worker count; this only bounds
    parallelism.
    """
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def fft(x, n: int | None = None) -> np.ndarray:
    return _scipy_fft.fft(x, n=n, axis=-1, workers=_FFT_WORKERS)


def ifft(x, n: int | None = None) -> np.ndarray:
    return _scipy_fft.ifft(x, n=n, axis=-1, workers=_FFT_WORKERS)


def real_ifft(spec) -> np.ndarray:
    """Inverse transform expected to land on the real axis.

    Raises :class:`NumericalError` if the imaginary residue exceeds
    ``IMAG_RESIDUE_TOL`` relative to the result scale, which would indicate
    a silently broken conjugate symmetry upstream.
    """
    t = ifft(spec)
    scale = max(1.0, float(np.abs(t.real).max(initial=0.0)))
    residue = float(np.abs(t.imag).max(initial=0.0))
    if residue > IMAG_RESIDUE_TOL * scale:
        raise NumericalError(
            f"imaginary residue {residue:.3e} exceeds {IMAG_RESIDUE_TOL:.0e}"
            " of result scale; spectrum is not conjugate-symmetric"
        )
    return np.ascontiguousarray(t.real)


@dataclass(frozen=True)
class RfFrame:
    """M channels of L real RF samples plus sampling metadata.

    Parameters
    ----------
    samples : (M, L) array_like
        Real amplitudes, channel-major. Coerced to float64.
    sample_rate : float
        Samples per second (dimensionless pipelines use 1.0).
    """

    samples: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if s.ndim != 2:
            raise ValueError(f"samples must be 2-D (M, L), got {s.ndim}-D")
        if s.shape[0] < 2:
            raise ValueError(f"need at least 2 channels, got {s.shape[0]}")
        if s.shape[1] < 2:
            raise ValueError(f"need at least 2 samples per channel, got {s.shape[1]}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples contain non-finite values")
        if not (self.sample_rate > 0 and np.isfinite(self.sample_rate)):
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", s)

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def L(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class BlockPlan:
    """Block count, block length and the derived spectrum length."""

    B: int
    L_b: int

    def __post_init__(self):
        if self.B < 1:
            raise ValueError(f"block count must be >= 1, got {self.B}")
        if self.L_b < 2:
            raise ValueError(f"block length must be >= 2, got {self.L_b}")

    @property
    def spectrum_len(self) -> int:
        return 2 * self.L_b - 1

    @classmethod
    def for_signal(cls, L: int, B: int) -> "BlockPlan":
        """Plan for a length-L signal split into B blocks, L_b = floor(L/B)."""
        if B < 1:
            raise ValueError(f"block count must be >= 1, got {B}")
        if L < B:
            raise ValueError(f"signal length {L} shorter than block count {B}")
        return cls(B=B, L_b=L // B)


@dataclass(frozen=True)
class BlockedSignal:
    """Contiguous L_b-sample blocks of one real signal."""

    blocks: np.ndarray  # (B, L_b)
    plan: BlockPlan

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.blocks, dtype=np.float64))
        if b.shape != (self.plan.B, self.plan.L_b):
            raise ValueError(
                f"blocks shape {b.shape} does not match plan "
                f"({self.plan.B}, {self.plan.L_b})"
            )
        object.__setattr__(self, "blocks", b)


def dft_forward(block) -> np.ndarray:
    """Unnormalized forward DFT of one block.

    ``bin[k] = sum_t x[t] * exp(-2j*pi*k*t/n)`` with n = len(block).
    """
    x = np.asarray(block)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("dft_forward expects a non-empty 1-D vector")
    return fft(x)


def dft_inverse(spectrum) -> np.ndarray:
    """Inverse DFT with 1/n scaling; round-trips :func:`dft_forward`."""
    x = np.asarray(spectrum)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("dft_inverse expects a non-empty 1-D vector")
    return ifft(x)


def block_decompose(signal, plan: BlockPlan) -> BlockedSignal:
    """Partition a signal into the plan's contiguous blocks.

    Block b (1-indexed) holds samples ``(b-1)*L_b .. b*L_b - 1``. Samples
    beyond ``B*L_b`` are dropped with a logged warning (floor rule).
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("block_decompose expects a 1-D signal")
    used = plan.B * plan.L_b
    if x.size < used:
        raise ValueError(
            f"signal length {x.size} shorter than B*L_b = {used}"
        )
    if x.size > used:
        logger.warning(
            "dropping %d trailing samples (L=%d, B=%d, L_b=%d)",
            x.size - used, x.size, plan.B, plan.L_b,
        )
    return BlockedSignal(blocks=x[:used].reshape(plan.B, plan.L_b), plan=plan)


def apply_A1(conv_result) -> np.ndarray:
    """Last L_b - 1 samples of a 2*L_b - 1 segment, final slot zeroed.

    ``out[t] = in[L_b + t]`` for ``t < L_b - 1``; ``out[L_b - 1] = 0``.
    """
    v = np.asarray(conv_result)
    L_b = _segment_block_len(v)
    out = np.zeros(L_b, dtype=v.dtype)
    out[: L_b - 1] = v[L_b:]
    return out


def apply_A2(conv_result) -> np.ndarray:
    """First L_b samples of a 2*L_b - 1 convolution segment."""
    v = np.asarray(conv_result)
    L_b = _segment_block_len(v)
    return v[:L_b].copy()


def _segment_block_len(v: np.ndarray) -> int:
    if v.ndim != 1:
        raise ValueError("truncation operators expect a 1-D segment")
    n = v.size
    if n < 3 or n % 2 == 0:
        raise ValueError(
            f"segment length must be odd 2*L_b - 1 with L_b >= 2, got {n}"
        )
    return (n + 1) // 2


def a1_lastaxis(segments: np.ndarray, L_b: int) -> np.ndarray:
    """Vectorized :func:`apply_A1` over the last axis."""
    out = np.zeros(segments.shape[:-1] + (L_b,), dtype=segments.dtype)
    out[..., : L_b - 1] = segments[..., L_b:]
    return out


def a2_lastaxis(segments: np.ndarray, L_b: int) -> np.ndarray:
    """Vectorized :func:`apply_A2` over the last axis."""
    return segments[..., :L_b]


def blocked_convolve_block(x_blocks: BlockedSignal, h_blocks: BlockedSignal,
                           b: int) -> np.ndarray:
    """Block b of the truncated convolution of two blocked signals.

    Evaluates the segment sums of the blocked convolution identity with
    every inner convolution computed as a product of length ``2*L_b - 1``
    spectra.

    Parameters
    ----------
    x_blocks, h_blocks : BlockedSignal
        Must share the same plan.
    b : int
        Block index, 1-indexed, ``1 <= b <= B``.

    Returns
    -------
    (L_b,) ndarray
        Real samples of block b of the first ``B*L_b`` samples of ``x * h``.
    """
    plan = x_blocks.plan
    if h_blocks.plan != plan:
        raise ValueError(f"mismatched block plans: {plan} vs {h_blocks.plan}")
    if not 1 <= b <= plan.B:
        raise ValueError(f"block index {b} out of range 1..{plan.B}")
    n2 = plan.spectrum_len
    xs = fft(x_blocks.blocks, n=n2)
    hs = fft(h_blocks.blocks, n=n2)

    seg2 = np.zeros(n2, dtype=np.complex128)
    for p in range(1, b + 1):
        seg2 = seg2 + xs[p - 1] * hs[b - p]
    out = apply_A2(real_ifft(seg2))
    if b > 1:
        seg1 = np.zeros(n2, dtype=np.complex128)
        for p in range(1, b):
            seg1 = seg1 + xs[p - 1] * hs[b - p - 1]
        out = out + apply_A1(real_ifft(seg1))
    return out


def direct_convolve(x, h) -> np.ndarray:
    """Exact linear convolution by the time-domain definition.

    Test oracle for the blocked identity; never used on the solver's hot
    path.
    """
    xv = np.asarray(x, dtype=np.float64)
    hv = np.asarray(h, dtype=np.float64)
    if xv.size == 0 or hv.size == 0:
        raise ValueError("direct_convolve expects non-empty inputs")
    return np.convolve(xv, hv)

"""Synthetic 1-D SIMO phantom: random reflectivity channels driven by a
shared parametric pulse, truncated to channel length, with optional
inclusion, per-block pulse taper and calibrated white noise.

Randomness comes from numpy's PCG64 via ``default_rng``; every channel draws
from its own ``SeedSequence`` child stream so outputs are reproducible for a
given seed regardless of how generation is parallelized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .signal_core import BlockPlan, RfFrame

_INF = float("inf")


@dataclass(frozen=True)
class Inclusion:
    """Elliptic region of attenuated scatterer amplitude.

    Center and semi-axes are fractions of the channel/sample extents;
    scatterer amplitudes inside are multiplied by ``amplitude``.
    """

    center_channel: float = 0.5
    center_sample: float = 0.5
    semi_channels: float = 0.25
    semi_samples: float = 0.15
    amplitude: float = 0.5

    def mask(self, M: int, L: int) -> np.ndarray:
        ch = (np.arange(M)[:, None] / max(M - 1, 1) - self.center_channel)
        ax = (np.arange(L)[None, :] / max(L - 1, 1) - self.center_sample)
        return (ch / self.semi_channels) ** 2 + (ax / self.semi_samples) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomConfig:
    M: int = 8
    L: int = 128
    L_s: int = 16
    B: int = 2
    center_freq: float = 0.125          # cycles/sample
    frac_bandwidth: float = 0.5         # -6 dB fractional bandwidth
    scatterer_model: str = "gaussian"   # or "bernoulli-gaussian"
    density: float = 1.0
    inclusion: Optional[Inclusion] = None
    snr_db: Optional[float] = None
    attenuation_per_block: Optional[tuple[float, float]] = None
    seed: int = 0
    normalize: bool = True
    sample_rate: float = 1.0

    def validate(self) -> "PhantomConfig":
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if self.B < 1:
            raise ValueError(f"B must be >= 1, got {self.B}")
        if self.L % self.B != 0:
            raise ValueError(f"L = {self.L} must be divisible by B = {self.B}")
        plan = BlockPlan.for_signal(self.L, self.B)
        if not 2 <= self.L_s < plan.L_b:
            raise ValueError(
                f"L_s must satisfy 2 <= L_s < L_b = {plan.L_b}, got {self.L_s}"
            )
        if not 0.0 < self.center_freq < 0.5:
            raise ValueError(
                f"center frequency must lie in (0, 0.5) cycles/sample, got {self.center_freq}"
            )
        if not 0.0 < self.frac_bandwidth < 2.0:
            raise ValueError(f"fractional bandwidth out of range: {self.frac_bandwidth}")
        if self.scatterer_model not in ("gaussian", "bernoulli-gaussian"):
            raise ValueError(f"unknown scatterer model {self.scatterer_model!r}")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")
        if self.snr_db is not None and math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")
        if self.attenuation_per_block is not None:
            a, w = self.attenuation_per_block
            if not (0.0 < a <= 1.0 and 0.0 < w <= 1.0):
                raise ValueError(
                    f"per-block taper factors must lie in (0, 1], got {self.attenuation_per_block}"
                )
        return self


@dataclass(frozen=True)
class GroundTruth:
    """Everything the phantom knows that a scanner would not measure."""

    trfs: np.ndarray          # (M, L)
    psf: np.ndarray           # (L_s,) block-1 pulse
    untruncated: np.ndarray   # (M, L + L_s - 1)
    noiseless: np.ndarray     # (M, L)
    config: PhantomConfig


def gaussian_pulse(L_s: int, center_freq: float, frac_bandwidth: float,
                   amplitude: float = 1.0) -> np.ndarray:
    """Gaussian-modulated sinusoid, centered on the pulse support.

    ``frac_bandwidth`` is the two-sided -6 dB fractional bandwidth of the
    amplitude spectrum.
    """
    n = np.arange(L_s) - (L_s - 1) / 2.0
    sigma_f = frac_bandwidth * center_freq / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    sigma_t = 1.0 / (2.0 * math.pi * sigma_f)
    return amplitude * np.exp(-(n ** 2) / (2.0 * sigma_t ** 2)) * np.cos(
        2.0 * math.pi * center_freq * n)


def _block_pulses(config: PhantomConfig) -> list[np.ndarray]:
    """One pulse per data block 1..B+1; identical when no taper is set."""
    if config.attenuation_per_block is None:
        s = gaussian_pulse(config.L_s, config.center_freq, config.frac_bandwidth)
        return [s] * (config.B + 1)
    amp_f, bw_f = config.attenuation_per_block
    return [
        gaussian_pulse(config.L_s, config.center_freq,
                       config.frac_bandwidth * bw_f ** b,
                       amplitude=amp_f ** b)
        for b in range(config.B + 1)
    ]


def _draw_trf(rng: np.random.Generator, L: int, model: str,
              density: float) -> np.ndarray:
    if model == "gaussian":
        return rng.standard_normal(L)
    amp = rng.standard_normal(L)
    mask = rng.random(L) < density
    # Rescaled so the marginal variance matches the dense model.
    return amp * mask / math.sqrt(density)


def generate(config: PhantomConfig) -> tuple[GroundTruth, RfFrame]:
    """Draw a phantom scene and its measured frame.

    Per channel: ``x_i = truncate_L(s * h_i) + v_i``. With a per-block
    taper, block b of the noiseless data is taken from the convolution with
    the block-b pulse, making the pulse piecewise-constant over blocks; the
    withheld tail beyond sample L uses the (B+1)-th pulse. With
    ``normalize`` the reflectivities are rescaled so the noiseless frame has
    unit total energy.
    """
    config.validate()
    M, L, L_s, B = config.M, config.L, config.L_s, config.B
    plan = BlockPlan.for_signal(L, B)
    L_b = plan.L_b

    root = np.random.SeedSequence(config.seed)
    children = root.spawn(M + 1)
    trfs = np.stack([
        _draw_trf(np.random.default_rng(children[i]), L,
                  config.scatterer_model, config.density)
        for i in range(M)
    ])
    if config.inclusion is not None:
        mask = config.inclusion.mask(M, L)
        trfs = np.where(mask, config.inclusion.amplitude * trfs, trfs)

    pulses = _block_pulses(config)
    stationary = config.attenuation_per_block is None
    untruncated = np.empty((M, L + L_s - 1))
    for i in range(M):
        if stationary:
            untruncated[i] = np.convolve(pulses[0], trfs[i])
        else:
            for b in range(B):
                conv_b = np.convolve(pulses[b], trfs[i])
                untruncated[i, b * L_b:(b + 1) * L_b] = conv_b[b * L_b:(b + 1) * L_b]
            conv_tail = np.convolve(pulses[B], trfs[i])
            untruncated[i, L:] = conv_tail[L:]

    if config.normalize:
        energy = float(np.sum(untruncated[:, :L] ** 2))
        if energy == 0.0:
            raise ValueError("degenerate phantom: zero-energy frame")
        scale = 1.0 / math.sqrt(energy)
        trfs = trfs * scale
        untruncated = untruncated * scale

    noiseless = untruncated[:, :L].copy()
    truth = GroundTruth(trfs=trfs, psf=pulses[0], untruncated=untruncated,
                        noiseless=noiseless, config=config)
    frame = RfFrame(samples=noiseless, sample_rate=config.sample_rate)
    if config.snr_db is not None:
        frame = add_noise(frame, config.snr_db, children[M])
    return truth, frame


def add_noise(frame: RfFrame, snr_db: float, seed) -> RfFrame:
    """Additive white Gaussian noise at a frame-level SNR.

    The noise variance is ``P_signal / 10**(snr_db/10)`` with ``P_signal``
    the mean square over the whole frame. ``snr_db = inf`` returns the frame
    unchanged. ``seed`` may be an int or a ``SeedSequence``.
    """
    if math.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    power = float(np.mean(frame.samples ** 2))
    if power == 0.0:
        raise ValueError("cannot set an SNR on a zero-energy frame")
    if snr_db == _INF:
        return RfFrame(samples=frame.samples, sample_rate=frame.sample_rate)
    sigma = math.sqrt(power * 10.0 ** (-snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = sigma * rng.standard_normal(frame.samples.shape)
    return RfFrame(samples=frame.samples + noise, sample_rate=frame.sample_rate)

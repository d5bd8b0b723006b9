"""Blind multichannel deconvolution of SIMO ultrasound-style RF data.

Estimates per-channel tissue reflectivity functions and the shared pulse
from truncated, noisy frames using block-based frequency-domain adaptive
filtering with a correlation-energy anti-misconvergence constraint and a
missing-data refinement pass. Ships with a synthetic phantom generator, a
metrics suite and a CLI pipeline driver.
"""

from .config import SolverConfig
from .constraint import ConstraintParams, coupling_factor
from .crossrelation import (
    BlockedFrame,
    IterationRecord,
    TrfEstimate,
    run_bmcflms,
)
from .errors import (
    DataError,
    DegenerateChannelError,
    InvalidStateError,
    NumericalError,
)
from .metrics import NpmValue, RgReport, envelope_log_image, npm, resolution_gain
from .missing_data import MissingBlock, missing_block, run_md_bmcflms
from .phantom import GroundTruth, Inclusion, PhantomConfig, add_noise, generate
from .rmint import EqualizerBank, PsfEstimate, estimate_psf
from .signal_core import BlockPlan, BlockedSignal, RfFrame

__all__ = [
    "BlockPlan",
    "BlockedFrame",
    "BlockedSignal",
    "ConstraintParams",
    "DataError",
    "DegenerateChannelError",
    "EqualizerBank",
    "GroundTruth",
    "Inclusion",
    "InvalidStateError",
    "IterationRecord",
    "MissingBlock",
    "NpmValue",
    "NumericalError",
    "PhantomConfig",
    "PsfEstimate",
    "RfFrame",
    "RgReport",
    "SolverConfig",
    "TrfEstimate",
    "add_noise",
    "coupling_factor",
    "envelope_log_image",
    "estimate_psf",
    "generate",
    "missing_block",
    "npm",
    "resolution_gain",
    "run_bmcflms",
    "run_md_bmcflms",
]

__version__ = "0.1.0"

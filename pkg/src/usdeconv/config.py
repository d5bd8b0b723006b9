"""Solver configuration: every tunable in one place."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass
class SolverConfig:
    """Tunables for the block solvers and the PSF/missing-data stage.

    ``delta`` is relative: the equalizer regularizer is ``delta`` times the
    largest diagonal entry of the normal matrix. ``tol = 0`` disables the
    relative-cost plateau stop, leaving only the iteration cap.
    """

    B: int = 2
    max_iters: int = 500
    tol: float = 1e-8
    xi: float = 1e-4
    rho: float = 2.55
    gamma: float = 2.4
    alpha1: float = 0.1
    alpha2: float = 2.7e-5
    delta: float = 1e-3
    M_b: int = 8
    L_s: int = 16
    missing_data: bool = False
    seed: int = 0
    threads: int = 1
    scale_mode: str = "ratio"
    psf_delay: int = 0

    def validate(self) -> "SolverConfig":
        if self.B < 1:
            raise ValueError(f"B must be >= 1, got {self.B}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0 or not math.isfinite(self.tol):
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.xi < 0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")
        if self.rho <= 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.alpha1 <= 0:
            raise ValueError(f"alpha1 must be > 0, got {self.alpha1}")
        if self.alpha2 < 0:
            raise ValueError(f"alpha2 must be >= 0, got {self.alpha2}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.M_b < 1:
            raise ValueError(f"M_b must be >= 1, got {self.M_b}")
        if self.L_s < 2:
            raise ValueError(f"L_s must be >= 2, got {self.L_s}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.scale_mode not in ("ratio", "lsq"):
            raise ValueError(f"scale_mode must be 'ratio' or 'lsq', got {self.scale_mode!r}")
        if self.psf_delay < 0:
            raise ValueError(f"psf_delay must be >= 0, got {self.psf_delay}")
        return self

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_json(cls, path) -> "SolverConfig":
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        unknown = set(raw) - set(cls.field_names())
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw).validate()

    def replace(self, **kwargs) -> "SolverConfig":
        return dataclasses.replace(self, **kwargs).validate()

"""Variance schedules and the forward noising process.

Timesteps are 1-indexed: t ranges over [1, T], and alpha_bar(t) is the
cumulative product of (1 - beta) through step t.  The scaled-linear family
spaces sqrt(beta) linearly, matching the convention of the latent diffusion
models this trainer mirrors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from insertkit.errors import InvalidArgument

SCHEDULE_KINDS = ("linear", "scaled-linear")

DEFAULT_KIND = "scaled-linear"
DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012


@dataclass(frozen=True)
class NoiseSchedule:
    """Betas plus derived quantities, all float64 for downstream stats.

    Attributes:
        betas: (T,) per-step variances in (0, 1).
        kind: Family name, for checkpoint round-trips.
        beta_start / beta_end: The generating parameters.
    """

    betas: np.ndarray
    kind: str = "custom"
    beta_start: float = 0.0
    beta_end: float = 0.0
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise InvalidArgument(f"betas must be a nonempty 1-D array, got shape {betas.shape}")
        if not np.isfinite(betas).all() or (betas <= 0).any() or (betas >= 1).any():
            raise InvalidArgument("every beta must lie in (0, 1)")
        betas = betas.copy()
        betas.setflags(write=False)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        alphas.setflags(write=False)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def timesteps(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at 1-indexed timestep t."""
        if not (1 <= t <= self.timesteps):
            raise InvalidArgument(
                f"timestep must be in [1, {self.timesteps}], got {t}"
            )
        return float(self.alpha_bars[t - 1])

    def sigmas(self) -> np.ndarray:
        """Noise-to-signal sigma per timestep: sqrt((1 - ab) / ab).

        This is the change of variables that lets a variance-preserving
        model be driven by sigma-space samplers; ascending in t.
        """
        ab = self.alpha_bars
        return np.sqrt((1.0 - ab) / ab)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "timesteps": self.timesteps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }


def make_schedule(
    kind: str = DEFAULT_KIND,
    timesteps: int = DEFAULT_TIMESTEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build a named schedule.

    "linear" spaces beta itself; "scaled-linear" spaces sqrt(beta).  Both
    follow numpy.linspace semantics, so a single timestep yields
    [beta_start].
    """
    if kind not in SCHEDULE_KINDS:
        raise InvalidArgument(f"schedule kind must be one of {SCHEDULE_KINDS}, got {kind!r}")
    if timesteps < 1:
        raise InvalidArgument(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidArgument(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    else:
        betas = (
            np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), timesteps, dtype=np.float64)
            ** 2
        )
    return NoiseSchedule(betas, kind=kind, beta_start=beta_start, beta_end=beta_end)


def schedule_from_json(doc: dict) -> NoiseSchedule:
    return make_schedule(
        kind=doc["kind"],
        timesteps=int(doc["timesteps"]),
        beta_start=float(doc["beta_start"]),
        beta_end=float(doc["beta_end"]),
    )


def q_sample(z0, t: int, eps, schedule: NoiseSchedule):
    """Diffuse a clean latent to timestep t: sqrt(ab) z0 + sqrt(1-ab) eps.

    Works for numpy arrays and torch tensors alike; z0 and eps must share
    shape.  t is a single 1-indexed timestep.
    """
    if getattr(z0, "shape", None) != getattr(eps, "shape", None):
        raise InvalidArgument(
            f"z0 and eps shapes differ: {getattr(z0, 'shape', None)} vs {getattr(eps, 'shape', None)}"
        )
    ab = schedule.alpha_bar(int(t))
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps

"""Euler-ancestral sampling over a Karras sigma ladder.

The model is trained in variance-preserving (VP) form; the sampler runs in
variance-exploding (VE) coordinates.  The bridge:

    sigma(t) = sqrt((1 - alpha_bar_t) / alpha_bar_t)      (per-step table)
    model input  x / sqrt(sigma^2 + 1)                    (VE -> VP rescale)
    fractional t for a ladder sigma by log-linear interpolation into the
    schedule's sigma table
    denoised x0-estimate = x - sigma * eps

Each step makes exactly three model calls (the guidance triple), so a
run consumes 3 * steps forward passes.  All noise comes from one seeded
torch.Generator: the init draw, then one draw per ancestral step taken in
order, which makes runs bit-reproducible for a fixed (seed, steps, scales).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch

from insertkit.core.image import RasterImage
from insertkit.diffusion.codec import LatentCodec
from insertkit.diffusion.loss import cfg_predict
from insertkit.diffusion.schedule import NoiseSchedule
from insertkit.errors import InvalidArgument, NumericalDivergence


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    image_guidance: float = 1.5
    text_guidance: float = 7.5
    eta: float = 1.0
    rho: float = 7.0
    seed: int = 0
    sigma_min: float | None = None
    sigma_max: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgument("steps must be >= 1")
        if self.eta < 0.0 or self.rho <= 0.0:
            raise InvalidArgument("eta must be >= 0 and rho > 0")
        for name in ("sigma_min", "sigma_max"):
            value = getattr(self, name)
            if value is not None and value <= 0.0:
                raise InvalidArgument(f"{name} must be positive when set")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SamplerConfig":
        return cls(**doc)

    def with_seed(self, seed: int) -> "SamplerConfig":
        return replace(self, seed=int(seed))


def karras_sigmas(
    steps: int, sigma_min: float, sigma_max: float, rho: float = 7.0
) -> np.ndarray:
    """Descending sigma ladder with a trailing zero; length steps + 1."""
    if steps < 1:
        raise InvalidArgument("steps must be >= 1")
    if not 0.0 < sigma_min <= sigma_max:
        raise InvalidArgument(f"need 0 < sigma_min <= sigma_max, got {sigma_min}, {sigma_max}")
    if steps == 1:
        ladder = np.array([sigma_max], dtype=np.float64)
    else:
        ramp = np.linspace(0.0, 1.0, steps)
        inv_max = sigma_max ** (1.0 / rho)
        inv_min = sigma_min ** (1.0 / rho)
        ladder = (inv_max + ramp * (inv_min - inv_max)) ** rho
    return np.append(ladder, 0.0)


def ancestral_step(
    sigma_from: float, sigma_to: float, eta: float = 1.0
) -> tuple[float, float]:
    """Splits the step into a deterministic part (sigma_down) and injected
    noise (sigma_up); eta=0 recovers plain Euler, eta=1 full ancestral."""
    if sigma_to == 0.0:
        return 0.0, 0.0
    sigma_up = min(
        sigma_to,
        eta * math.sqrt(sigma_to**2 * (sigma_from**2 - sigma_to**2) / sigma_from**2),
    )
    sigma_down = math.sqrt(sigma_to**2 - sigma_up**2)
    return sigma_down, sigma_up


def timestep_for_sigma(sigma: float, schedule: NoiseSchedule) -> float:
    """Fractional 1-indexed timestep whose schedule sigma matches, by
    log-linear interpolation (clamped at the table ends)."""
    table = schedule.sigmas()
    log_sigma = math.log(max(sigma, table[0]))
    return float(
        np.interp(
            log_sigma,
            np.log(table),
            np.arange(1, schedule.timesteps + 1, dtype=np.float64),
        )
    )


def euler_ancestral_sample(
    model,
    source: RasterImage,
    text_embedding: np.ndarray | None,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    codec: LatentCodec,
) -> RasterImage:
    """Runs the full guided reverse process and decodes the result."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return _sample(model, source, text_embedding, config, schedule, codec)
    finally:
        if was_training:
            model.train()


def _sample(model, source, text_embedding, config, schedule, codec) -> RasterImage:
    cond = codec.encode(source)[None]
    table = schedule.sigmas()
    sigma_min = config.sigma_min if config.sigma_min is not None else float(table[0])
    sigma_max = config.sigma_max if config.sigma_max is not None else float(table[-1])
    ladder = karras_sigmas(config.steps, sigma_min, sigma_max, config.rho)

    if text_embedding is None:
        text = None
    else:
        seq = np.asarray(text_embedding, dtype=np.float32)
        if seq.ndim != 2:
            raise InvalidArgument("text_embedding must be a (S, D) array")
        text = torch.from_numpy(np.ascontiguousarray(seq))[None]

    generator = torch.Generator().manual_seed(int(config.seed))
    x = torch.randn(cond.shape, generator=generator) * float(ladder[0])

    for i in range(config.steps):
        sigma = float(ladder[i])
        sigma_next = float(ladder[i + 1])
        t = timestep_for_sigma(sigma, schedule)
        eps = cfg_predict(
            model,
            x / math.sqrt(sigma**2 + 1.0),
            torch.full((1,), t, dtype=x.dtype),
            cond,
            text,
            config.image_guidance,
            config.text_guidance,
        )
        if not torch.isfinite(eps).all():
            raise NumericalDivergence(
                f"non-finite noise prediction at sampler step {i}", step_index=i
            )
        denoised = x - sigma * eps
        sigma_down, sigma_up = ancestral_step(sigma, sigma_next, config.eta)
        d = (x - denoised) / sigma
        x = x + d * (sigma_down - sigma)
        if sigma_up > 0.0:
            x = x + torch.randn(x.shape, generator=generator) * sigma_up
        if not torch.isfinite(x).all():
            raise NumericalDivergence(
                f"state diverged at sampler step {i}", step_index=i
            )

    return codec.decode(x[0])

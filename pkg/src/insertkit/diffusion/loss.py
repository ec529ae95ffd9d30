"""Denoising objective with conditioning dropout, and guided prediction.

Training: standard epsilon-prediction MSE.  Each example independently drops
its conditioning according to one uniform draw u partitioned into bands

    u < p_image                     -> image dropped (text kept)
    p_image <= u < p_image+p_text   -> text dropped (image kept)
    ... < p_image+p_text+p_both     -> both dropped

A dropped image zeroes the concatenated source latent and clears the
present-flag; dropped text becomes the all-zero (null) token sequence.

Sampling: two-knob guidance over three predictions

    e = e(none) + s_img * (e(img) - e(none)) + s_txt * (e(img,txt) - e(img))

computed in the factored form (1-s_img)*e0 + (s_img-s_txt)*e1 + s_txt*e2 so
that scales (1, 1) reproduce the fully-conditioned prediction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from insertkit.errors import InvalidArgument, InvalidState


@dataclass(frozen=True)
class LossDraws:
    """All randomness consumed by one loss evaluation, made explicit so tests
    can pin it and assert invariances."""

    t: torch.Tensor  # (B,) long in [1, T]
    eps: torch.Tensor  # (B, C, h, w)
    drop_image: torch.Tensor  # (B,) bool
    drop_text: torch.Tensor  # (B,) bool


def sample_loss_draws(
    shape: tuple[int, ...],
    num_timesteps: int,
    drop_probs: tuple[float, float, float] = (0.05, 0.05, 0.05),
    generator: torch.Generator | None = None,
) -> LossDraws:
    p_image, p_text, p_both = _check_drop_probs(drop_probs)
    batch = shape[0]
    t = torch.randint(1, num_timesteps + 1, (batch,), generator=generator)
    eps = torch.randn(shape, generator=generator)
    u = torch.rand(batch, generator=generator)
    image_only = u < p_image
    text_only = (u >= p_image) & (u < p_image + p_text)
    both = (u >= p_image + p_text) & (u < p_image + p_text + p_both)
    return LossDraws(
        t=t,
        eps=eps,
        drop_image=image_only | both,
        drop_text=text_only | both,
    )


def _check_drop_probs(drop_probs) -> tuple[float, float, float]:
    if len(drop_probs) != 3:
        raise InvalidArgument("drop_probs must be (p_image, p_text, p_both)")
    p = tuple(float(x) for x in drop_probs)
    if any(x < 0.0 for x in p) or sum(p) > 1.0:
        raise InvalidArgument(f"drop_probs must be >= 0 and sum to <= 1, got {p}")
    return p


def training_loss(
    model,
    z0: torch.Tensor,
    cond: torch.Tensor,
    text: torch.Tensor,
    schedule,
    drop_probs: tuple[float, float, float] = (0.05, 0.05, 0.05),
    generator: torch.Generator | None = None,
    draws: LossDraws | None = None,
) -> torch.Tensor:
    """Mean squared error between predicted and true noise for one batch.

    z0/cond: (B, C, h, w) clean target and source latents; text: (B, S, D).
    Pass `draws` to replay fixed randomness; otherwise fresh draws are taken
    from `generator`.
    """
    if z0.shape != cond.shape:
        raise InvalidArgument(f"z0 {tuple(z0.shape)} != cond {tuple(cond.shape)}")
    if text.ndim != 3 or text.shape[0] != z0.shape[0]:
        raise InvalidArgument("text must be (B, S, D)")
    if draws is None:
        draws = sample_loss_draws(
            tuple(z0.shape), schedule.timesteps, drop_probs, generator
        )

    alpha_bar = torch.tensor(
        schedule.alpha_bars, dtype=z0.dtype, device=z0.device
    )[draws.t - 1]
    sqrt_ab = alpha_bar.sqrt()[:, None, None, None]
    sqrt_one_minus = (1.0 - alpha_bar).sqrt()[:, None, None, None]
    eps = draws.eps.to(z0.dtype)
    z_t = sqrt_ab * z0 + sqrt_one_minus * eps

    keep_image = (~draws.drop_image).to(z0.dtype)[:, None, None, None]
    keep_text = (~draws.drop_text).to(text.dtype)[:, None, None]
    pred = model(
        torch.cat([z_t, cond * keep_image], dim=1),
        draws.t.to(z0.dtype),
        text * keep_text,
        image_cond_present=~draws.drop_image,
    )
    return ((pred - eps) ** 2).mean()


def triplet_training_loss(
    triplets: Sequence,
    model,
    codec,
    text_encoder,
    schedule,
    drop_probs: tuple[float, float, float] = (0.05, 0.05, 0.05),
    generator: torch.Generator | None = None,
    draws: LossDraws | None = None,
) -> torch.Tensor:
    """The same objective starting from raw edit triplets: targets are
    encoded as the clean latent, sources as the conditioning latent, and
    instructions as embedding sequences."""
    from insertkit.diffusion.conditioning import pad_text_batch

    if not triplets:
        raise InvalidArgument("batch must be nonempty")
    try:
        z0 = torch.stack([codec.encode(tr.target) for tr in triplets])
        cond = torch.stack([codec.encode(tr.source) for tr in triplets])
    except RuntimeError as exc:
        raise InvalidState(f"codec latents do not stack: {exc}") from exc
    if z0.shape != cond.shape:
        raise InvalidState(
            f"codec produced mismatched latents: {tuple(z0.shape)} vs {tuple(cond.shape)}"
        )
    text = pad_text_batch([text_encoder.encode(tr.instruction) for tr in triplets])
    return training_loss(
        model, z0, cond, text, schedule, drop_probs, generator, draws
    )


def cfg_predict(
    model,
    z_t: torch.Tensor,
    t,
    image_cond: torch.Tensor,
    text_cond: torch.Tensor | None,
    image_scale: float,
    text_scale: float,
) -> torch.Tensor:
    """Combines exactly three model predictions under two guidance scales."""
    if z_t.shape != image_cond.shape:
        raise InvalidArgument(
            f"z_t {tuple(z_t.shape)} != image_cond {tuple(image_cond.shape)}"
        )
    batch = z_t.shape[0]
    if text_cond is None:
        text_cond = torch.zeros(
            batch, 1, model.config.text_dim, dtype=z_t.dtype, device=z_t.device
        )
    null_text = torch.zeros_like(text_cond)
    zero_image = torch.zeros_like(image_cond)

    e_none = model(
        torch.cat([z_t, zero_image], dim=1), t, null_text, image_cond_present=False
    )
    e_image = model(
        torch.cat([z_t, image_cond], dim=1), t, null_text, image_cond_present=True
    )
    e_full = model(
        torch.cat([z_t, image_cond], dim=1), t, text_cond, image_cond_present=True
    )
    s_img = float(image_scale)
    s_txt = float(text_scale)
    return (1.0 - s_img) * e_none + (s_img - s_txt) * e_image + s_txt * e_full

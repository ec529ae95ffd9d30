"""A small conditional U-Net denoiser.

Contract (shared by the trainer, the guidance combiner and the sampler):

    forward(z, t, text_cond, image_cond_present) -> eps

      z:    (B, 2C, H, W)  noisy latent with the source latent concatenated
            on channels (zeros when the image condition is absent)
      t:    scalar or (B,) timestep, integer or fractional
      text_cond: (B, S, D) embedding sequence, or None for the null token
      image_cond_present: bool or (B,) bools; the flag is embedded into the
            timestep signal so the net can tell dropped-image from black

Geometry notes: channel width doubles per entry of channel_mults with a
stride-2 downsample between levels; the middle block carries one single-head
cross-attention over the text tokens.  Two coordinate channels are appended
at the input (insertion is position-sensitive and convolutions alone are
translation-blind).  Key/value projections have no bias so zero-padded text
tokens contribute nothing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from insertkit.errors import InvalidArgument


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 3
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2)
    text_dim: int = 32
    time_dim: int = 64
    groups: int = 8

    def __post_init__(self):
        if self.latent_channels < 1 or self.base_channels < 1:
            raise InvalidArgument("channel counts must be positive")
        if not self.channel_mults:
            raise InvalidArgument("channel_mults must be nonempty")
        if self.base_channels % self.groups:
            raise InvalidArgument(
                f"base_channels {self.base_channels} must divide by groups {self.groups}"
            )
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["channel_mults"] = list(self.channel_mults)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DenoiserConfig":
        return cls(
            latent_channels=int(doc["latent_channels"]),
            base_channels=int(doc["base_channels"]),
            channel_mults=tuple(int(m) for m in doc["channel_mults"]),
            text_dim=int(doc["text_dim"]),
            time_dim=int(doc["time_dim"]),
            groups=int(doc["groups"]),
        )


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic transformer-style embedding; t may be fractional."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv x2 with FiLM timestep modulation."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(time_dim, 2 * out_ch)
        self.norm2 = nn.GroupNorm(min(groups, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        scale, shift = self.emb_proj(torch.nn.functional.silu(emb)).chunk(2, dim=1)
        h = self.norm2(h) * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(h))
        return h + self.skip(x)


class TextCrossAttention(nn.Module):
    """Single-head cross-attention from feature map queries to text tokens.

    All-zero token vectors are treated as padding and masked out of the
    softmax (large negative score, so gradients stay finite), which makes
    zero-padding ragged batches neutral.  A fully zero sequence — the null
    text condition — falls back to uniform weights over zero values, so it
    contributes nothing through the attention output.
    """

    PAD_SCORE = -1.0e9

    def __init__(self, channels: int, text_dim: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(min(groups, channels), channels)
        self.to_q = nn.Conv2d(channels, channels, 1)
        self.to_k = nn.Linear(text_dim, channels, bias=False)
        self.to_v = nn.Linear(text_dim, channels, bias=False)
        self.proj = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)
        self.scale = channels**-0.5

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x)).flatten(2).transpose(1, 2)  # (B, HW, C)
        k = self.to_k(text)  # (B, S, C)
        v = self.to_v(text)
        scores = q @ k.transpose(1, 2) * self.scale  # (B, HW, S)
        padding = (text.abs().sum(dim=-1) == 0)[:, None, :]  # (B, 1, S)
        all_padding = padding.all(dim=-1, keepdim=True)
        scores = scores + torch.where(padding & ~all_padding, self.PAD_SCORE, 0.0)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.proj(out)


class ToyDenoiser(nn.Module):
    """Desk-scale denoiser honoring the full conditioning contract."""

    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        cfg = self.config
        tdim = cfg.time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.flag_embed = nn.Embedding(2, tdim)

        chs = [cfg.base_channels * m for m in cfg.channel_mults]
        in_channels = 2 * cfg.latent_channels + 2  # source concat + coords
        self.conv_in = nn.Conv2d(in_channels, chs[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            self.down_blocks.append(ResBlock(prev, ch, tdim, cfg.groups))
            prev = ch
            if i < len(chs) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))

        self.mid_block1 = ResBlock(chs[-1], chs[-1], tdim, cfg.groups)
        self.mid_attn = TextCrossAttention(chs[-1], cfg.text_dim, cfg.groups)
        self.mid_block2 = ResBlock(chs[-1], chs[-1], tdim, cfg.groups)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        cur = chs[-1]
        for i in reversed(range(len(chs))):
            self.up_blocks.append(ResBlock(cur + chs[i], chs[i], tdim, cfg.groups))
            cur = chs[i]
            if i > 0:
                self.upsamples.append(nn.ConvTranspose2d(cur, cur, 4, stride=2, padding=1))

        self.out_norm = nn.GroupNorm(min(cfg.groups, chs[0]), chs[0])
        self.conv_out = nn.Conv2d(chs[0], cfg.latent_channels, 3, padding=1)

    def forward(
        self,
        z: torch.Tensor,
        t,
        text_cond: torch.Tensor | None = None,
        image_cond_present=True,
    ) -> torch.Tensor:
        cfg = self.config
        if z.ndim != 4 or z.shape[1] != 2 * cfg.latent_channels:
            raise InvalidArgument(
                f"z must be (B, {2 * cfg.latent_channels}, H, W), got {tuple(z.shape)}"
            )
        stride = 2 ** (len(cfg.channel_mults) - 1)
        if z.shape[2] % stride or z.shape[3] % stride:
            raise InvalidArgument(
                f"spatial dims {tuple(z.shape[2:])} must divide by {stride}"
            )
        b = z.shape[0]
        dtype, device = z.dtype, z.device

        t = torch.as_tensor(t, dtype=dtype, device=device)
        if t.ndim == 0:
            t = t.expand(b)
        flag = torch.as_tensor(image_cond_present, device=device)
        if flag.ndim == 0:
            flag = flag.expand(b)
        emb = self.time_mlp(sinusoidal_embedding(t, cfg.time_dim))
        emb = emb + self.flag_embed(flag.long()).to(dtype)

        if text_cond is None:
            text = torch.zeros(b, 1, cfg.text_dim, dtype=dtype, device=device)
        else:
            text = text_cond.to(dtype)
            if text.ndim != 3 or text.shape[0] != b or text.shape[2] != cfg.text_dim:
                raise InvalidArgument(
                    f"text_cond must be ({b}, S, {cfg.text_dim}), got {tuple(text.shape)}"
                )

        ys = torch.linspace(-1.0, 1.0, z.shape[2], dtype=dtype, device=device)
        xs = torch.linspace(-1.0, 1.0, z.shape[3], dtype=dtype, device=device)
        yv, xv = torch.meshgrid(ys, xs, indexing="ij")
        coords = torch.stack([xv, yv]).expand(b, 2, -1, -1)

        h = self.conv_in(torch.cat([z, coords], dim=1))
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)

        h = self.mid_block1(h, emb)
        h = self.mid_attn(h, text)
        h = self.mid_block2(h, emb)

        for j, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips[-1 - j]], dim=1), emb)
            if j < len(self.upsamples):
                h = self.upsamples[j](h)

        return self.conv_out(torch.nn.functional.silu(self.out_norm(h)))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

"""Denoising diffusion video decoder.

A compact 3D U-Net (2D convolutions per frame, factorized spatial and
temporal attention at the interior resolution) predicts v for a window of
frames conditioned on per-frame image tokens, a per-frame context mask, and
the diffusion time. Training draws one of four masked tasks per batch
(image, video, forward/backward autoregressive, interpolation); inference
runs a deterministic DDIM chain with an optional per-step mix of image-mode
and video-mode denoising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import ddim_step, ddim_times

TASKS = (
    "image_generation",
    "video_generation",
    "autoregressive_forward",
    "autoregressive_backward",
    "interpolation",
)


@dataclass(frozen=True)
class DecoderConfig:
    frames: int = 3               # T' frames per training window
    height: int = 32
    width: int = 64
    token_downsample: int = 4
    token_vocab: int = 64         # K; id K is the null (masked) token
    base_channels: int = 32
    token_channels: int = 16
    max_frames: int = 16
    ddim_steps: int = 20          # 50 reproduces the full-fidelity setting
    token_dropout_p: float = 0.15
    mix_probability: float = 0.25
    mix_weight: float = 0.5
    ema_decay: float = 0.999
    loss_l1: float = 0.1
    loss_l2: float = 1.0

    def __post_init__(self):
        if self.frames < 1 or self.frames > self.max_frames:
            raise ValueError("frames must lie in [1, max_frames]")
        if not 0.0 <= self.token_dropout_p <= 1.0:
            raise ValueError("token_dropout_p must lie in [0, 1]")


@dataclass
class DecoderTaskMask:
    """Per-frame masking pattern defining one decoder task.

    context[f] is True when frame f is given in pixels; tokens[f] is True
    when conditioning tokens for frame f are provided. `temporal` gates the
    temporal attention layers (off for single-image training).
    """

    task: str
    context: np.ndarray
    tokens: np.ndarray
    temporal: bool = True

    def __post_init__(self):
        self.context = np.asarray(self.context, dtype=bool)
        self.tokens = np.asarray(self.tokens, dtype=bool)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.context.shape != self.tokens.shape or self.context.ndim != 1:
            raise ValueError("context and tokens must be 1-D masks of equal length")
        if self.task == "image_generation":
            if len(self.context) != 1 or self.temporal:
                raise ValueError("image_generation uses a single frame with temporal off")
        if self.task.startswith("autoregressive") and self.context.sum() < 1:
            raise ValueError("autoregressive tasks need at least one context frame")
        if self.task == "interpolation" and self.tokens[~self.context].any():
            raise ValueError("interpolation provides no tokens for denoised frames")
        if self.context.all():
            raise ValueError("at least one frame must be denoised")

    @property
    def n_frames(self) -> int:
        return len(self.context)


def make_task_mask(task: str, frames: int, context_frames: int = 2) -> DecoderTaskMask:
    """Canonical per-frame masks for each training/inference task."""
    ctx = np.zeros(frames, dtype=bool)
    tok = np.ones(frames, dtype=bool)
    if task == "image_generation":
        return DecoderTaskMask(task, np.zeros(1, bool), np.ones(1, bool), temporal=False)
    if task == "video_generation":
        return DecoderTaskMask(task, ctx, tok)
    if task == "autoregressive_forward":
        k = min(context_frames, frames - 1)
        ctx[:k] = True
        tok = ~ctx  # tokens only for predicted frames; context comes as pixels
        return DecoderTaskMask(task, ctx, tok)
    if task == "autoregressive_backward":
        k = min(context_frames, frames - 1)
        ctx[frames - k:] = True
        tok = ~ctx
        return DecoderTaskMask(task, ctx, tok)
    if task == "interpolation":
        if frames < 3:
            raise ValueError("interpolation needs at least 3 frames")
        ctx[0] = ctx[-1] = True
        tok = np.zeros(frames, dtype=bool)  # guided solely by image context
        return DecoderTaskMask(task, ctx, tok)
    raise ValueError(f"unknown task {task!r}")


def sample_task(rng: np.random.Generator, frames: int) -> DecoderTaskMask:
    """Draw the four task families uniformly; autoregressive splits 50/50."""
    family = int(rng.integers(4))
    if family == 0:
        return make_task_mask("image_generation", 1)
    if family == 1:
        return make_task_mask("video_generation", frames)
    if family == 2:
        direction = "autoregressive_forward" if rng.random() < 0.5 else "autoregressive_backward"
        return make_task_mask(direction, frames)
    return make_task_mask("interpolation", frames)


def token_dropout(tokens: torch.Tensor, p: float, null_id: int,
                  generator: torch.Generator) -> torch.Tensor:
    """Independently replace each token with the null id with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("dropout probability must lie in [0, 1]")
    if p == 0.0:
        return tokens.clone()
    drop = torch.rand(tokens.shape, generator=generator) < p
    return torch.where(drop, torch.full_like(tokens, null_id), tokens)


class SinusoidalTime(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=torch.float32) / half)
        ang = t.float().unsqueeze(-1) * freqs.unsqueeze(0) * 2 * math.pi
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SpatialAttention(nn.Module):
    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = self.norm(x).flatten(2).transpose(1, 2)
        out, _ = self.attn(seq, seq, seq, need_weights=False)
        return x + out.transpose(1, 2).view(b, c, h, w)


class TemporalAttention(nn.Module):
    """Attention across the frame axis at every spatial location."""

    def __init__(self, channels: int, max_frames: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.frame_pos = nn.Parameter(torch.randn(max_frames, channels) * 0.02)

    def forward(self, x: torch.Tensor, n_frames: int) -> torch.Tensor:
        bf, c, h, w = x.shape
        b = bf // n_frames
        seq = self.norm(x).view(b, n_frames, c, h * w).permute(0, 3, 1, 2)
        seq = seq.reshape(b * h * w, n_frames, c) + self.frame_pos[:n_frames].unsqueeze(0)
        out, _ = self.attn(seq, seq, seq, need_weights=False)
        out = out.view(b, h * w, n_frames, c).permute(0, 2, 3, 1).reshape(bf, c, h, w)
        return x + out


class VideoDenoiser(nn.Module):
    """v-prediction U-Net over a window of frames."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        time_dim = ch * 4
        self.time_embed = nn.Sequential(
            SinusoidalTime(ch), nn.Linear(ch, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.token_embed = nn.Embedding(cfg.token_vocab + 1, cfg.token_channels)

        in_ch = 3 + 1 + cfg.token_channels
        self.stem = nn.Conv2d(in_ch, ch, 3, padding=1)
        self.down1 = ResBlock(ch, ch * 2, time_dim)
        self.pool1 = nn.Conv2d(ch * 2, ch * 2, 4, stride=2, padding=1)
        self.down2 = ResBlock(ch * 2, ch * 3, time_dim)
        self.pool2 = nn.Conv2d(ch * 3, ch * 3, 4, stride=2, padding=1)

        self.mid1 = ResBlock(ch * 3, ch * 3, time_dim)
        self.mid_spatial = SpatialAttention(ch * 3)
        self.mid_temporal = TemporalAttention(ch * 3, cfg.max_frames)
        self.mid2 = ResBlock(ch * 3, ch * 3, time_dim)

        self.up2 = ResBlock(ch * 3 + ch * 3, ch * 2, time_dim)
        self.up1 = ResBlock(ch * 2 + ch * 2, ch, time_dim)
        self.out_norm = nn.GroupNorm(min(8, ch), ch)
        self.out_conv = nn.Conv2d(ch, 3, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    @property
    def null_token(self) -> int:
        return self.cfg.token_vocab

    def forward(
        self,
        x: torch.Tensor,            # (B, F, 3, H, W) noisy/context pixels in [-1, 1]
        context_mask: torch.Tensor, # (B, F) bool, True = clean context frame
        tokens: torch.Tensor,       # (B, F, h, w) long, null id = K
        t: torch.Tensor,            # (B,) diffusion times
        temporal: bool = True,
    ) -> torch.Tensor:
        b, f, _, height, width = x.shape
        t_emb = self.time_embed(t.reshape(b, 1).expand(b, f).reshape(b * f))

        tok_map = self.token_embed(tokens).permute(0, 1, 4, 2, 3)
        tok_map = tok_map.reshape(b * f, -1, tokens.shape[2], tokens.shape[3])
        tok_map = F.interpolate(tok_map, size=(height, width), mode="nearest")

        ctx = context_mask.float().reshape(b * f, 1, 1, 1).expand(b * f, 1, height, width)
        h0 = torch.cat([x.reshape(b * f, 3, height, width), ctx, tok_map], dim=1)

        h1 = self.down1(self.stem(h0), t_emb)
        h2 = self.down2(self.pool1(h1), t_emb)
        hm = self.mid1(self.pool2(h2), t_emb)
        hm = self.mid_spatial(hm)
        if temporal and f > 1:
            hm = self.mid_temporal(hm, f)
        hm = self.mid2(hm, t_emb)

        u2 = F.interpolate(hm, size=h2.shape[-2:], mode="nearest")
        u2 = self.up2(torch.cat([u2, h2], dim=1), t_emb)
        u1 = F.interpolate(u2, size=h1.shape[-2:], mode="nearest")
        u1 = self.up1(torch.cat([u1, h1], dim=1), t_emb)
        v = self.out_conv(F.silu(self.out_norm(u1)))
        return v.view(b, f, 3, height, width)


def decoder_loss(
    v_hat: torch.Tensor,
    v_tgt: torch.Tensor,
    context_mask: torch.Tensor,
    loss_l1: float,
    loss_l2: float,
) -> torch.Tensor:
    """Weighted L1 + L2 on the v residual over denoised-frame elements only."""
    denoised = ~context_mask.bool()
    if not denoised.any():
        raise ValueError("no denoised frames in batch")
    residual = v_hat[denoised] - v_tgt[denoised]
    return loss_l1 * residual.abs().mean() + loss_l2 * (residual ** 2).mean()


def mixed_denoise(
    model: VideoDenoiser,
    x_t: torch.Tensor,
    t: torch.Tensor,
    tokens: torch.Tensor,
    context_mask: torch.Tensor,
    mix_weight: float,
    mix_probability: float,
    generator: torch.Generator,
) -> torch.Tensor:
    """Video-mode denoising, randomly blended with per-frame image-mode.

    With probability `mix_probability` per call the output is
    w * image_mode + (1 - w) * video_mode; otherwise video-mode alone.
    """
    triggered = (
        mix_probability > 0.0
        and mix_weight > 0.0
        and bool(torch.rand((), generator=generator) < mix_probability)
    )
    if not triggered:
        return model(x_t, context_mask, tokens, t, temporal=True)
    image_v = model(x_t, context_mask, tokens, t, temporal=False)
    if mix_weight >= 1.0:
        return image_v
    video_v = model(x_t, context_mask, tokens, t, temporal=True)
    return mix_weight * image_v + (1.0 - mix_weight) * video_v


def ema_update(shadow, live, decay: float):
    """shadow <- decay * shadow + (1 - decay) * live, elementwise."""
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    if isinstance(shadow, dict):
        if shadow.keys() != live.keys():
            raise ValueError("parameter name mismatch")
        for key in shadow:
            ema_update_tensor_(shadow[key], live[key], decay)
        return shadow
    ema_update_tensor_(shadow, live, decay)
    return shadow


def ema_update_tensor_(shadow: torch.Tensor, live: torch.Tensor, decay: float) -> None:
    if shadow.shape != live.shape:
        raise ValueError(f"shape mismatch {tuple(shadow.shape)} vs {tuple(live.shape)}")
    shadow.mul_(decay).add_(live.detach(), alpha=1.0 - decay)


class EmaTracker:
    """Shadow copy of a module's parameters under exponential averaging."""

    def __init__(self, model: nn.Module, decay: float):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    def update(self, model: nn.Module) -> None:
        state = model.state_dict()
        for key, value in state.items():
            if value.dtype.is_floating_point:
                ema_update_tensor_(self.shadow[key], value, self.decay)
            else:
                self.shadow[key] = value.detach().clone()

    def copy_to(self, model: nn.Module) -> None:
        model.load_state_dict(self.shadow)


def sample_window(
    model: VideoDenoiser,
    tokens: torch.Tensor,          # (F, h, w) long; null id where withheld
    context_frames: dict[int, torch.Tensor],  # frame idx -> (3, H, W) in [0, 1]
    mask: DecoderTaskMask,
    steps: int,
    seed_generator: torch.Generator,
    mix_weight: float | None = None,
    mix_probability: float | None = None,
) -> torch.Tensor:
    """DDIM-decode one window; returns (F, 3, H, W) frames in [0, 1].

    Context frames pass through unchanged; denoised frames start from seeded
    noise and follow the deterministic chain.
    """
    cfg = model.cfg
    f = mask.n_frames
    mix_weight = cfg.mix_weight if mix_weight is None else mix_weight
    mix_probability = cfg.mix_probability if mix_probability is None else mix_probability

    x = torch.randn(1, f, 3, cfg.height, cfg.width, generator=seed_generator)
    ctx = torch.from_numpy(mask.context).unsqueeze(0)
    for idx, pixels in context_frames.items():
        x[0, idx] = pixels * 2.0 - 1.0
    tok = tokens.unsqueeze(0)

    times = ddim_times(steps)
    model.eval()
    with torch.no_grad():
        for t_hi, t_lo in zip(times[:-1], times[1:]):
            t_b = torch.full((1,), t_hi)
            v_hat = mixed_denoise(
                model, x, t_b, tok, ctx, mix_weight, mix_probability, seed_generator
            )
            stepped = ddim_step(x, v_hat, t_hi, t_lo)
            denoised = ~mask.context
            x[0, denoised] = stepped[0, denoised]
    return ((x[0].clamp(-1.0, 1.0) + 1.0) / 2.0)

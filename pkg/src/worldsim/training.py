"""Shared training machinery: optimizers, LR schedules, stage trainers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .seeding import np_rng, torch_gen
from .synthworld import Episode, tokenize_caption
from .tokenizer import (
    ImageTokenizer,
    PatchDiscriminator,
    SemanticTeacher,
    TokenizerConfig,
    TokenizerLossWeights,
    hinge_d_loss,
    tokenizer_loss,
)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.95)
    grad_clip: float = 1.0
    warmup_steps: int = 50
    final_lr_scale: float = 0.1


def make_optimizer(model: nn.Module, cfg: OptimizerConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay, betas=cfg.betas
    )


def lr_scale(step: int, total_steps: int, cfg: OptimizerConfig) -> float:
    """Linear warm-up followed by cosine decay to final_lr_scale."""
    warmup = min(cfg.warmup_steps, max(total_steps // 10, 1))
    if step < warmup:
        return (step + 1) / warmup
    span = max(total_steps - warmup, 1)
    progress = min((step - warmup) / span, 1.0)
    return cfg.final_lr_scale + (1 - cfg.final_lr_scale) * 0.5 * (1 + np.cos(np.pi * progress))


def apply_lr(optimizer: torch.optim.Optimizer, base_lr: float, scale: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = base_lr * scale


def clip_and_step(model: nn.Module, optimizer: torch.optim.Optimizer, clip: float) -> None:
    if clip > 0:
        nn.utils.clip_grad_norm_(model.parameters(), clip)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def frames_to_batch(episodes: list[Episode], picks: list[tuple[int, int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Gather (episode, frame) picks into image and semantics tensors."""
    images = np.stack([episodes[e].frames.frames[f] for e, f in picks])
    sem = np.stack([episodes[e].semantics[f] for e, f in picks])
    return (
        torch.from_numpy(images).permute(0, 3, 1, 2).contiguous(),
        torch.from_numpy(sem.astype(np.int64)),
    )


def train_tokenizer(
    episodes: list[Episode],
    cfg: TokenizerConfig,
    weights: TokenizerLossWeights,
    steps: int,
    batch_size: int = 8,
    seed: int = 0,
    opt_cfg: OptimizerConfig | None = None,
    log=None,
    stop_loss: float | None = None,
) -> tuple[ImageTokenizer, SemanticTeacher, dict]:
    """Train the image tokenizer on frames drawn from the episode corpus."""
    opt_cfg = opt_cfg or OptimizerConfig(lr=1e-4, weight_decay=0.01, betas=(0.5, 0.9))
    torch.manual_seed(torch_gen(seed, "tokenizer-init").initial_seed())
    model = ImageTokenizer(cfg)
    teacher = SemanticTeacher(cfg.code_dim)
    optimizer = make_optimizer(model, opt_cfg)
    rng = np_rng(seed, "tokenizer-batches")

    discriminator = d_optimizer = None
    if weights.gan > 0:
        discriminator = PatchDiscriminator(base_channels=cfg.base_channels)
        d_optimizer = make_optimizer(discriminator, opt_cfg)

    n_frames = [len(ep.frames) for ep in episodes]
    last_components: dict = {}
    for step in range(steps):
        picks = [
            (int(e), int(rng.integers(n_frames[int(e)])))
            for e in rng.integers(len(episodes), size=batch_size)
        ]
        images, semantics = frames_to_batch(episodes, picks)
        result = model(images, teacher=teacher.features(semantics, cfg.downsample))
        fake_logits = None
        if discriminator is not None:
            d_loss = hinge_d_loss(
                discriminator(images), discriminator(result.reconstruction.detach())
            )
            d_loss.backward()
            clip_and_step(discriminator, d_optimizer, opt_cfg.grad_clip)
            fake_logits = discriminator(result.reconstruction)
        loss, components = tokenizer_loss(result, images, weights, fake_logits=fake_logits)
        loss.backward()
        apply_lr(optimizer, opt_cfg.lr, lr_scale(step, steps, opt_cfg))
        clip_and_step(model, optimizer, opt_cfg.grad_clip)
        last_components = components
        if log is not None and (step % 25 == 0 or step == steps - 1):
            log.append(step=step, metric="tokenizer/loss", value=components["total"])
        if stop_loss is not None and components["total"] < stop_loss:
            break
    model.eval()
    return model, teacher, last_components


def reconstruction_l2(model: ImageTokenizer, images: torch.Tensor) -> float:
    """Mean per-pixel squared reconstruction error in eval mode."""
    with torch.no_grad():
        result = model(images)
        return float(((result.reconstruction - images) ** 2).mean())


# --------------------------------------------------------------- world model

@dataclass
class TokenizedEpisode:
    """Per-episode tensors at the world-model frame rate."""

    tokens: torch.Tensor    # (steps, n) long, row-major flattened grids
    caption_ids: torch.Tensor  # (m,) long
    actions: torch.Tensor   # (steps, 2) float (speed, curvature)


def tokenize_episodes(
    tokenizer: ImageTokenizer,
    episodes: list[Episode],
    text_slots: int,
    subsample: int = 4,
    batch_frames: int = 32,
) -> list[TokenizedEpisode]:
    """Encode every episode once with the frozen tokenizer."""
    tokenizer.eval()
    out = []
    with torch.no_grad():
        for ep in episodes:
            frames = ep.frames.frames[::subsample]
            ids = torch.tensor(tokenize_caption(ep.caption, text_slots), dtype=torch.long)
            actions = torch.from_numpy(
                np.stack([ep.actions.speed[::subsample], ep.actions.curvature[::subsample]], axis=1)
            ).float()
            token_chunks = []
            for lo in range(0, frames.shape[0], batch_frames):
                imgs = torch.from_numpy(frames[lo:lo + batch_frames]).permute(0, 3, 1, 2)
                token_chunks.append(tokenizer.encode(imgs))
            grids = torch.cat(token_chunks)
            out.append(TokenizedEpisode(
                tokens=grids.reshape(grids.shape[0], -1),  # row-major per step
                caption_ids=ids, actions=actions,
            ))
    return out


def action_stats(tokenized: list[TokenizedEpisode]) -> tuple[tuple[float, float], tuple[float, float]]:
    """Dataset mean/std for speed and curvature (std floored for stability)."""
    acts = torch.cat([te.actions for te in tokenized])
    speed, curv = acts[:, 0], acts[:, 1]
    return (
        (float(speed.mean()), max(float(speed.std()), 1e-3)),
        (float(curv.mean()), max(float(curv.std()), 1e-4)),
    )


def sample_window_batch(
    tokenized: list[TokenizedEpisode],
    steps: int,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Random T-step windows: (text_ids, image_tokens, actions) batch tensors."""
    text, img, act = [], [], []
    for _ in range(batch_size):
        te = tokenized[int(rng.integers(len(tokenized)))]
        max_start = te.tokens.shape[0] - steps
        start = int(rng.integers(max_start + 1)) if max_start > 0 else 0
        img.append(te.tokens[start:start + steps])
        act.append(te.actions[start:start + steps])
        text.append(te.caption_ids.unsqueeze(0).expand(steps, -1))
    return torch.stack(text), torch.stack(img), torch.stack(act)


def validation_loss(model, tokenized: list["TokenizedEpisode"], steps: int,
                    batch_size: int = 16, seed: int = 0) -> float:
    """Text-conditioned cross-entropy on held-out windows (nats/token)."""
    from .world_model import world_model_loss

    rng = np_rng(seed, "wm-validation")
    model.eval()
    losses = []
    with torch.no_grad():
        for _ in range(4):
            text, img, act = sample_window_batch(tokenized, steps, batch_size, rng)
            losses.append(float(world_model_loss(model, text, img, act)))
    return float(np.mean(losses))


# --------------------------------------------------------------- decoder

def build_decoder_batch(
    episodes: list[Episode],
    base_tokens: list[torch.Tensor],  # per-episode (T, h, w) tokens at the base rate
    mask,
    cfg,
    batch_size: int,
    rng: np.random.Generator,
    generator: torch.Generator,
):
    """Assemble one diffusion training batch for a sampled task mask."""
    from .decoder import token_dropout
    from .diffusion import noise as noise_op
    from .diffusion import v_target as v_target_op

    f = mask.n_frames
    frames_list, tokens_list = [], []
    factors = (4, 2, 1)
    for _ in range(batch_size):
        e = int(rng.integers(len(episodes)))
        factor = int(factors[int(rng.integers(len(factors)))])
        total = len(episodes[e].frames)
        span = (f - 1) * factor + 1
        start = int(rng.integers(max(total - span, 0) + 1))
        idx = [start + k * factor for k in range(f)]
        frames_list.append(torch.from_numpy(episodes[e].frames.frames[idx]))
        tokens_list.append(base_tokens[e][idx])
    frames = torch.stack(frames_list).permute(0, 1, 4, 2, 3).contiguous()  # (B,F,3,H,W)
    tokens = torch.stack(tokens_list)

    x0 = frames * 2.0 - 1.0
    eps = torch.randn(x0.shape, generator=generator)
    t = torch.rand(batch_size, generator=generator)
    t_b = t.view(-1, 1, 1, 1, 1)
    x_t = noise_op(x0, eps, t_b)
    v_tgt = v_target_op(x0, eps, t_b)

    ctx = torch.from_numpy(mask.context).unsqueeze(0).expand(batch_size, f)
    x_in = torch.where(ctx[:, :, None, None, None], x0, x_t)

    null_id = cfg.token_vocab
    tok_in = token_dropout(tokens, cfg.token_dropout_p, null_id, generator)
    provided = torch.from_numpy(mask.tokens).view(1, f, 1, 1)
    tok_in = torch.where(provided, tok_in, torch.full_like(tok_in, null_id))
    return x_in, ctx, tok_in, t, v_tgt


def train_decoder(
    episodes: list[Episode],
    tokenizer: ImageTokenizer,
    cfg,
    steps: int,
    batch_size: int = 4,
    seed: int = 0,
    opt_cfg: OptimizerConfig | None = None,
    log=None,
):
    """Train the video decoder on the four masked tasks; returns (model, ema)."""
    from .decoder import EmaTracker, VideoDenoiser, decoder_loss, sample_task
    from .seeding import derive_seed

    opt_cfg = opt_cfg or OptimizerConfig(lr=5e-5, weight_decay=0.01, betas=(0.9, 0.99))
    torch.manual_seed(derive_seed(seed, "decoder-init"))
    model = VideoDenoiser(cfg)
    ema = EmaTracker(model, cfg.ema_decay)
    optimizer = make_optimizer(model, opt_cfg)
    rng = np_rng(seed, "decoder-batches")
    generator = torch_gen(seed, "decoder-noise")

    base_tokens = []
    tokenizer.eval()
    with torch.no_grad():
        for ep in episodes:
            imgs = torch.from_numpy(ep.frames.frames).permute(0, 3, 1, 2)
            base_tokens.append(tokenizer.encode(imgs))

    last = float("nan")
    for step in range(steps):
        mask = sample_task(rng, cfg.frames)
        x_in, ctx, tok, t, v_tgt = build_decoder_batch(
            episodes, base_tokens, mask, cfg, batch_size, rng, generator
        )
        v_hat = model(x_in, ctx, tok, t, temporal=mask.temporal)
        loss = decoder_loss(v_hat, v_tgt, ctx, cfg.loss_l1, cfg.loss_l2)
        loss.backward()
        apply_lr(optimizer, opt_cfg.lr, lr_scale(step, steps, opt_cfg))
        clip_and_step(model, optimizer, opt_cfg.grad_clip)
        ema.update(model)
        last = float(loss.detach())
        if log is not None and (step % 25 == 0 or step == steps - 1):
            log.append(step=step, metric="decoder/loss", value=last)
    model.eval()
    return model, ema, last


def train_world_model(
    tokenized: list[TokenizedEpisode],
    cfg,
    steps: int,
    batch_size: int = 8,
    seed: int = 0,
    conditioning_ratios: tuple[float, float, float] = (0.2, 0.4, 0.4),
    opt_cfg: OptimizerConfig | None = None,
    log=None,
    stop_loss: float | None = None,
    eval_hook=None,
    eval_every: int = 100,
    metric_prefix: str = "world_model",
):
    """Train a world model on tokenized episodes; returns (model, last_loss)."""
    from .seeding import derive_seed
    from .world_model import WorldModel, assign_conditioning_modes, world_model_loss

    opt_cfg = opt_cfg or OptimizerConfig(lr=1e-4, weight_decay=0.1, betas=(0.9, 0.95))
    torch.manual_seed(derive_seed(seed, "world-model-init"))
    model = WorldModel(cfg)
    optimizer = make_optimizer(model, opt_cfg)
    rng = np_rng(seed, "wm-batches")

    last = float("nan")
    for step in range(steps):
        text, img, act = sample_window_batch(tokenized, cfg.layout.steps, batch_size, rng)
        modes = assign_conditioning_modes(batch_size, conditioning_ratios,
                                          derive_seed(seed, "wm-modes", step))
        loss = world_model_loss(model, text, img, act, modes)
        loss.backward()
        apply_lr(optimizer, opt_cfg.lr, lr_scale(step, steps, opt_cfg))
        clip_and_step(model, optimizer, opt_cfg.grad_clip)
        last = float(loss.detach())
        if log is not None and (step % 25 == 0 or step == steps - 1):
            log.append(step=step, metric=f"{metric_prefix}/loss", value=last)
        if eval_hook is not None and (step + 1) % eval_every == 0 and step + 1 < steps:
            model.eval()
            eval_hook(model, step + 1)
            model.train()
        if stop_loss is not None and last < stop_loss:
            break
    model.eval()
    return model, last

"""Autoregressive multimodal world model.

A causal transformer over interleaved per-step token groups ordered
text - image - action, with factorized (temporal + slot) positional
embeddings. Only image tokens carry loss; text embeds through a trainable
closed-vocabulary lookup, and the two action scalars embed through
independent linear maps on normalized values. Conditioning dropout swaps
text/action embeddings for learned null vectors so the model supports
unconditional, action-conditioned, and text-conditioned generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .seeding import np_rng
from .synthworld import VOCABULARY

MODES = ("unconditioned", "action_conditioned", "text_conditioned")


@dataclass(frozen=True)
class SequenceLayout:
    """Per-step slot structure of the token stream."""

    steps: int = 6            # T time steps in the context window
    text_slots: int = 4       # m
    image_slots: int = 128    # n
    action_slots: int = 2     # l
    width: int = 128          # d

    def __post_init__(self):
        if min(self.steps, self.image_slots, self.width) < 1:
            raise ValueError("steps, image_slots, and width must be >= 1")
        if self.text_slots < 0 or self.action_slots < 0:
            raise ValueError("slot counts must be >= 0")

    @property
    def step_len(self) -> int:
        return self.text_slots + self.image_slots + self.action_slots

    @property
    def total_len(self) -> int:
        return self.steps * self.step_len

    def slot_modality(self, slot: int) -> str:
        if slot < self.text_slots:
            return "text"
        if slot < self.text_slots + self.image_slots:
            return "image"
        if slot < self.step_len:
            return "action"
        raise ValueError(f"slot {slot} out of range")

    def image_positions(self) -> np.ndarray:
        """Stream positions of all image tokens, shape (T, n)."""
        base = np.arange(self.steps)[:, None] * self.step_len
        return base + self.text_slots + np.arange(self.image_slots)[None, :]


def sequence_length(steps: int, text_slots: int, image_slots: int, action_slots: int) -> int:
    """Total flattened stream length T * (m + n + l)."""
    return steps * (text_slots + image_slots + action_slots)


@dataclass(frozen=True)
class WorldModelConfig:
    layout: SequenceLayout = field(default_factory=SequenceLayout)
    image_vocab: int = 64     # K, matches the tokenizer codebook
    text_vocab: int = len(VOCABULARY)
    n_layers: int = 4
    n_heads: int = 4
    # Normalization for the raw action scalars, recorded in checkpoints.
    speed_stats: tuple[float, float] = (8.0, 3.5)
    curvature_stats: tuple[float, float] = (0.0, 0.01)

    def __post_init__(self):
        if self.layout.width % self.n_heads:
            raise ValueError("width must divide evenly into heads")
        if self.speed_stats[1] <= 0 or self.curvature_stats[1] <= 0:
            raise ValueError("normalization stds must be positive")


def assign_conditioning_modes(batch_size: int, ratios: tuple[float, float, float],
                              seed: int) -> list[str]:
    """Per-example conditioning mode, sampled at the given ratios.

    Ratios order is (unconditioned, action_conditioned, text_conditioned)
    and must sum to 1.
    """
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise ValueError(f"conditioning ratios must sum to 1, got {sum(ratios)}")
    rng = np_rng(seed, "conditioning-modes")
    draws = rng.choice(3, size=batch_size, p=ratios)
    return [MODES[int(i)] for i in draws]


def mode_flags(modes: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
    """Map modes to (drop_text, drop_action) boolean tensors."""
    drop_text = torch.tensor([m in ("unconditioned", "action_conditioned") for m in modes])
    drop_action = torch.tensor([m in ("unconditioned", "text_conditioned") for m in modes])
    return drop_text, drop_action


class CausalSelfAttention(nn.Module):
    def __init__(self, width: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = width // n_heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, past: tuple[torch.Tensor, torch.Tensor] | None = None):
        b, m, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def split(t):
            return t.view(b, m, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        total = k.shape[2]
        if m == total:
            out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        elif m == 1:
            out = F.scaled_dot_product_attention(q, k, v)
        else:
            # New block attends to the whole past plus its own causal prefix.
            mask = torch.ones(m, total, dtype=torch.bool, device=x.device)
            mask[:, total - m:] = torch.tril(torch.ones(m, m, dtype=torch.bool, device=x.device))
            out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        out = out.transpose(1, 2).reshape(b, m, -1)
        return self.proj(out), (k, v)


class Block(nn.Module):
    def __init__(self, width: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = CausalSelfAttention(width, n_heads)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )

    def forward(self, x, past=None):
        attn_out, kv = self.attn(self.ln1(x), past=past)
        x = x + attn_out
        x = x + self.mlp(self.ln2(x))
        return x, kv


class WorldModel(nn.Module):
    def __init__(self, cfg: WorldModelConfig):
        super().__init__()
        self.cfg = cfg
        lay = cfg.layout
        d = lay.width
        self.text_lookup = nn.Embedding(cfg.text_vocab, d)
        self.text_proj = nn.Linear(d, d)
        self.image_embed = nn.Embedding(cfg.image_vocab, d)
        self.speed_proj = nn.Linear(1, d)
        self.curvature_proj = nn.Linear(1, d)
        self.null_text = nn.Parameter(torch.randn(d) * 0.02)
        self.null_action = nn.Parameter(torch.randn(d) * 0.02)
        self.bos = nn.Parameter(torch.randn(d) * 0.02)
        self.temporal_pos = nn.Parameter(torch.randn(lay.steps, d) * 0.02)
        self.spatial_pos = nn.Parameter(torch.randn(lay.step_len, d) * 0.02)
        self.blocks = nn.ModuleList(Block(d, cfg.n_heads) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(d)
        # Zero-initialized head: the untrained prior is exactly uniform.
        self.head = nn.Linear(d, cfg.image_vocab)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    # ------------------------------------------------------------- embeddings

    def embed_text(self, word_ids: torch.Tensor) -> torch.Tensor:
        """Word ids (..., m) -> embeddings (..., m, d)."""
        if int(word_ids.min()) < 0 or int(word_ids.max()) >= self.cfg.text_vocab:
            raise ValueError("word id outside vocabulary")
        return self.text_proj(self.text_lookup(word_ids))

    def embed_actions(self, speed: torch.Tensor, curvature: torch.Tensor) -> torch.Tensor:
        """Scalar actions (...,) -> embeddings (..., 2, d), one slot per scalar."""
        if not (torch.isfinite(speed).all() and torch.isfinite(curvature).all()):
            raise ValueError("actions must be finite")
        s_mu, s_sd = self.cfg.speed_stats
        c_mu, c_sd = self.cfg.curvature_stats
        s = ((speed - s_mu) / s_sd).unsqueeze(-1)
        c = ((curvature - c_mu) / c_sd).unsqueeze(-1)
        return torch.stack([self.speed_proj(s.float()), self.curvature_proj(c.float())], dim=-2)

    def positional(self, t_index: int, slots: slice | None = None) -> torch.Tensor:
        """Factorized position table for one time step: temporal[t] + spatial[s]."""
        spatial = self.spatial_pos if slots is None else self.spatial_pos[slots]
        return self.temporal_pos[t_index].unsqueeze(0) + spatial

    def embed_step_parts(
        self,
        t_index: int,
        text_ids: torch.Tensor | None,      # (B, m)
        image_tokens: torch.Tensor | None,  # (B, n) or fewer during generation
        actions: torch.Tensor | None,       # (B, 2) raw (speed, curvature)
        drop_text: torch.Tensor | None = None,
        drop_action: torch.Tensor | None = None,
    ) -> list[torch.Tensor]:
        """Embeddings (content + position) for the provided parts of one step."""
        lay = self.cfg.layout
        parts = []
        if text_ids is not None:
            emb = self.embed_text(text_ids)
            if drop_text is not None and drop_text.any():
                emb = torch.where(drop_text[:, None, None], self.null_text.expand_as(emb), emb)
            parts.append(emb + self.positional(t_index, slice(0, lay.text_slots)))
        if image_tokens is not None:
            n_img = image_tokens.shape[1]
            emb = self.image_embed(image_tokens)
            pos = self.positional(t_index, slice(lay.text_slots, lay.text_slots + n_img))
            parts.append(emb + pos)
        if actions is not None:
            emb = self.embed_actions(actions[:, 0], actions[:, 1])
            if drop_action is not None and drop_action.any():
                emb = torch.where(drop_action[:, None, None], self.null_action.expand_as(emb), emb)
            parts.append(emb + self.positional(t_index, slice(lay.step_len - lay.action_slots,
                                                              lay.step_len)))
        return parts

    def assemble(
        self,
        text_ids: torch.Tensor,      # (B, T, m)
        image_tokens: torch.Tensor,  # (B, T, n)
        actions: torch.Tensor,       # (B, T, 2)
        drop_text: torch.Tensor | None = None,
        drop_action: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Flattened stream embeddings (B, T * step_len, d) in text-image-action order."""
        lay = self.cfg.layout
        t_steps = image_tokens.shape[1]
        if t_steps > lay.steps:
            raise ValueError(f"{t_steps} steps exceed the context window of {lay.steps}")
        if text_ids.shape[1] != t_steps or actions.shape[1] != t_steps:
            raise ValueError("modalities must cover the same number of steps")
        if text_ids.shape[2] != lay.text_slots or image_tokens.shape[2] != lay.image_slots:
            raise ValueError("slot counts do not match the layout")
        chunks = []
        for t in range(t_steps):
            chunks.extend(
                self.embed_step_parts(
                    t, text_ids[:, t], image_tokens[:, t], actions[:, t],
                    drop_text=drop_text, drop_action=drop_action,
                )
            )
        return torch.cat(chunks, dim=1)

    # ------------------------------------------------------------- transformer

    def hidden_states(self, embs: torch.Tensor, past: list | None = None,
                      prepend_bos: bool | None = None):
        """Run the causal stack; returns (hidden, past_kv).

        When `past` is None a learned BOS embedding is prepended, so hidden[q]
        has seen exactly the stream prefix before position q.
        """
        if prepend_bos is None:
            prepend_bos = past is None
        if prepend_bos:
            bos = self.bos.expand(embs.shape[0], 1, embs.shape[-1])
            embs = torch.cat([bos, embs], dim=1) if embs.shape[1] else bos
        new_past = []
        x = embs
        for i, block in enumerate(self.blocks):
            x, kv = block(x, past=None if past is None else past[i])
            new_past.append(kv)
        return self.ln_f(x), new_past

    def forward_logits(
        self,
        text_ids: torch.Tensor,
        image_tokens: torch.Tensor,
        actions: torch.Tensor,
        drop_text: torch.Tensor | None = None,
        drop_action: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Per-position logits (B, L, K); entry p predicts the stream token at p."""
        embs = self.assemble(text_ids, image_tokens, actions, drop_text, drop_action)
        hidden, _ = self.hidden_states(embs)
        return self.head(hidden[:, :-1])

    def image_logits(self, *args, **kwargs) -> torch.Tensor:
        """Logits gathered at image-token positions, shape (B, T, n, K)."""
        logits = self.forward_logits(*args, **kwargs)
        lay = self.cfg.layout
        t_steps = logits.shape[1] // lay.step_len
        positions = torch.from_numpy(self.cfg.layout.image_positions()[:t_steps].ravel())
        gathered = logits[:, positions]
        return gathered.view(logits.shape[0], t_steps, lay.image_slots, -1)

    def count_params_excluding_embeddings(self) -> int:
        """Parameter count without embedding tables or position tables."""
        excluded = {
            id(self.text_lookup.weight), id(self.image_embed.weight),
            id(self.temporal_pos), id(self.spatial_pos),
        }
        return sum(p.numel() for p in self.parameters() if id(p) not in excluded)


def world_model_loss(
    model: WorldModel,
    text_ids: torch.Tensor,
    image_tokens: torch.Tensor,
    actions: torch.Tensor,
    modes: list[str] | None = None,
) -> torch.Tensor:
    """Mean negative log-likelihood (nats) over image-token positions only."""
    drop_text = drop_action = None
    if modes is not None:
        drop_text, drop_action = mode_flags(modes)
    logits = model.image_logits(text_ids, image_tokens, actions, drop_text, drop_action)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), image_tokens.reshape(-1)
    )

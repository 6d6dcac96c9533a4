"""Discrete image autoencoder.

A small convolutional encoder maps frames to a feature grid that is
nearest-neighbor quantized against a learnable codebook (projected and
L2-normalized before lookup); a mirrored decoder reconstructs pixels.
Training combines reconstruction terms, the embedding/commitment
quantization losses, an optional patch-GAN term, and distillation of the
quantized features toward a frozen semantic-class teacher table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .seeding import torch_gen
from .synthworld import NUM_CLASSES


@dataclass(frozen=True)
class TokenizerConfig:
    downsample: int = 4        # D: spatial reduction per side
    vocab_size: int = 64       # K: codebook entries
    code_dim: int = 16         # e: quantized code width
    base_channels: int = 32
    max_channels: int = 128

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.downsample < 1 or (self.downsample & (self.downsample - 1)):
            raise ValueError("downsample must be a positive power of two")


@dataclass(frozen=True)
class TokenizerLossWeights:
    """Multipliers for the tokenizer loss components."""

    l1: float = 0.2
    l2: float = 2.0
    perceptual: float = 0.1
    gan: float = 0.0  # adversarial term off by default at desk scale
    codebook: float = 1.0
    distill: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")


@dataclass
class TokenGrid:
    """Discrete image tokens for one frame."""

    tokens: np.ndarray  # (H/D, W/D) integer ids in [0, K)
    downsample: int
    vocab_size: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens)
        if self.tokens.ndim != 2:
            raise ValueError("token grid must be 2-D")
        if self.tokens.min() < 0 or self.tokens.max() >= self.vocab_size:
            raise ValueError("token ids out of range")


def token_grid_shape(height: int, width: int, downsample: int) -> tuple[int, int]:
    """Grid dims for an image; dims must divide exactly."""
    if height % downsample or width % downsample:
        raise ValueError(
            f"image dims ({height}, {width}) not divisible by downsample {downsample}"
        )
    return height // downsample, width // downsample


def bit_compression(height: int, width: int, downsample: int, vocab_size: int) -> float:
    """Ratio of raw 8-bit RGB size to token-stream size in bits."""
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    gh, gw = token_grid_shape(height, width, downsample)
    return (height * width * 3 * 8) / (gh * gw * math.log2(vocab_size))


def codebook_usage(token_stream, vocab_size: int) -> float:
    """Fraction of the vocabulary observed in a token stream."""
    arr = np.asarray(token_stream).ravel()
    if arr.size == 0:
        raise ValueError("empty token stream")
    return len(np.unique(arr)) / vocab_size


class SemanticTeacher:
    """Frozen seeded embedding of semantic class ids.

    Each tokenizer cell maps to the unit-norm embedding of the majority
    class inside that cell; stands in for a pretrained feature teacher.
    """

    def __init__(self, code_dim: int, num_classes: int = NUM_CLASSES, seed: int = 1234):
        gen = torch_gen(seed, "semantic-teacher")
        table = torch.randn(num_classes, code_dim, generator=gen)
        self.table = F.normalize(table, dim=-1)
        self.num_classes = num_classes

    def cell_classes(self, semantics: torch.Tensor, downsample: int) -> torch.Tensor:
        """Majority class id per (D x D) cell; ties go to the lowest id."""
        if semantics.dim() == 2:
            semantics = semantics.unsqueeze(0)
        sem = semantics.long()
        if int(sem.max()) >= self.num_classes or int(sem.min()) < 0:
            raise ValueError("semantic class id out of range")
        b, h, w = sem.shape
        gh, gw = token_grid_shape(h, w, downsample)
        one_hot = F.one_hot(sem, self.num_classes)
        counts = one_hot.view(b, gh, downsample, gw, downsample, self.num_classes).sum((2, 4))
        return counts.argmax(-1)  # argmax returns the first (lowest) max

    def features(self, semantics: torch.Tensor, downsample: int) -> torch.Tensor:
        """Teacher feature grid (B, H/D, W/D, e) of unit-norm class embeddings."""
        return self.table[self.cell_classes(semantics, downsample)]


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class Encoder(nn.Module):
    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        stages = int(math.log2(cfg.downsample))
        ch = cfg.base_channels
        layers: list[nn.Module] = [nn.Conv2d(3, ch, 3, padding=1)]
        for _ in range(stages):
            nxt = min(ch * 2, cfg.max_channels)
            layers += [_norm(ch), nn.SiLU(), nn.Conv2d(ch, nxt, 4, stride=2, padding=1)]
            ch = nxt
        layers += [_norm(ch), nn.SiLU(), nn.Conv2d(ch, ch, 3, padding=1)]
        self.net = nn.Sequential(*layers)
        self.out_channels = ch

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images)


class Decoder(nn.Module):
    def __init__(self, cfg: TokenizerConfig, in_channels: int):
        super().__init__()
        stages = int(math.log2(cfg.downsample))
        ch = in_channels
        layers: list[nn.Module] = [nn.Conv2d(in_channels, ch, 3, padding=1)]
        for _ in range(stages):
            nxt = max(ch // 2, cfg.base_channels)
            layers += [
                _norm(ch), nn.SiLU(),
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, nxt, 3, padding=1),
            ]
            ch = nxt
        layers += [_norm(ch), nn.SiLU(), nn.Conv2d(ch, 3, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(grid))


class Codebook(nn.Module):
    """Learnable embedding table looked up on L2-normalized projections."""

    def __init__(self, in_dim: int, code_dim: int, vocab_size: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.code_dim = code_dim
        self.in_proj = nn.Linear(in_dim, code_dim)
        self.out_proj = nn.Linear(code_dim, in_dim)
        self.entries = nn.Parameter(torch.randn(vocab_size, code_dim) * 0.5)

    def normalized_entries(self) -> torch.Tensor:
        return F.normalize(self.entries, dim=-1)

    def lookup(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Nearest entry per feature vector.

        Returns (tokens, normalized projected features, selected normalized
        entries). Distances are exact squared L2 between unit vectors; ties
        resolve to the lowest entry index.
        """
        flat = features.reshape(-1, features.shape[-1])
        proj = F.normalize(self.in_proj(flat), dim=-1)
        entries = self.normalized_entries()
        dist = ((proj.unsqueeze(1) - entries.unsqueeze(0)) ** 2).sum(-1)
        tokens = dist.argmin(dim=1)
        shape = features.shape[:-1]
        return (
            tokens.reshape(shape),
            proj.reshape(*shape, self.code_dim),
            entries[tokens].reshape(*shape, self.code_dim),
        )


@dataclass
class TokenizerForwardResult:
    """Everything the loss needs from one training forward pass."""

    reconstruction: torch.Tensor          # (B, 3, H, W) in [0, 1]
    features_norm: torch.Tensor           # (B, h, w, e) normalized projections
    quantized_st: torch.Tensor            # (B, h, w, e) straight-through codes
    codes: torch.Tensor                   # (B, h, w, e) selected entries (no ST)
    tokens: torch.Tensor                  # (B, h, w) long
    teacher: torch.Tensor | None = None   # (B, h, w, e) teacher features

    @property
    def quantized_dual(self) -> torch.Tensor:
        """Code values with gradient reaching both encoder and entries.

        Teacher-facing terms use this tensor so distillation shapes the
        codebook itself, not only the encoder projections.
        """
        return self.codes + (self.features_norm - self.features_norm.detach())


class ImageTokenizer(nn.Module):
    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.codebook = Codebook(self.encoder.out_channels, cfg.code_dim, cfg.vocab_size)
        self.decoder = Decoder(cfg, self.encoder.out_channels)

    def encode_features(self, images: torch.Tensor) -> torch.Tensor:
        """Continuous feature grid (B, H/D, W/D, C); dims must divide by D."""
        if images.dim() == 3:
            images = images.unsqueeze(0)
        token_grid_shape(images.shape[-2], images.shape[-1], self.cfg.downsample)
        return self.encoder(images).permute(0, 2, 3, 1)

    def quantize(self, features: torch.Tensor):
        """Token grid plus straight-through quantized features."""
        tokens, proj, codes = self.codebook.lookup(features)
        quantized = proj + (codes - proj).detach()
        return tokens, quantized, proj, codes

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Images (B, 3, H, W) -> token ids (B, H/D, W/D)."""
        tokens, _, _, _ = self.quantize(self.encode_features(images))
        return tokens

    def decode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token ids -> images (B, 3, H, W) in [0, 1]."""
        if tokens.dim() == 2:
            tokens = tokens.unsqueeze(0)
        if int(tokens.max()) >= self.cfg.vocab_size or int(tokens.min()) < 0:
            raise ValueError("token id out of range")
        codes = self.codebook.normalized_entries()[tokens]
        return self.decode_codes(codes)

    def decode_codes(self, codes: torch.Tensor) -> torch.Tensor:
        grid = self.codebook.out_proj(codes).permute(0, 3, 1, 2)
        return self.decoder(grid)

    def forward(self, images: torch.Tensor,
                teacher: torch.Tensor | None = None) -> TokenizerForwardResult:
        features = self.encode_features(images)
        tokens, quantized, proj, codes = self.quantize(features)
        recon = self.decode_codes(quantized)
        return TokenizerForwardResult(
            reconstruction=recon,
            features_norm=proj,
            quantized_st=quantized,
            codes=codes,
            tokens=tokens,
            teacher=teacher,
        )


class PatchDiscriminator(nn.Module):
    """Small patch-level critic for the optional hinge-GAN term."""

    def __init__(self, base_channels: int = 32):
        super().__init__()
        ch = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(3, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(ch * 2, 1, 3, padding=1),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images)


def hinge_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


def hinge_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return -fake_logits.mean()


COMMITMENT_WEIGHT = 0.25


def tokenizer_loss(
    result: TokenizerForwardResult,
    images: torch.Tensor,
    weights: TokenizerLossWeights,
    fake_logits: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted training loss and its per-component breakdown.

    Components: L1/L2 reconstruction, perceptual proxy (L2 to the teacher in
    code space), optional generator hinge term, embedding+commitment
    quantization loss, and (1 - cosine) distillation to the teacher.
    """
    if images.dim() == 3:
        images = images.unsqueeze(0)
    l1 = (result.reconstruction - images).abs().mean()
    l2 = ((result.reconstruction - images) ** 2).mean()

    zero = torch.zeros((), dtype=images.dtype, device=images.device)
    if result.teacher is not None:
        quantized = result.quantized_dual
        perceptual = ((quantized - result.teacher) ** 2).mean()
        distill = 1.0 - F.cosine_similarity(quantized, result.teacher, dim=-1).mean()
    else:
        perceptual = zero
        distill = zero

    embedding = ((result.codes - result.features_norm.detach()) ** 2).mean()
    commitment = ((result.features_norm - result.codes.detach()) ** 2).mean()
    quantization = embedding + COMMITMENT_WEIGHT * commitment

    gan = hinge_g_loss(fake_logits) if fake_logits is not None else zero

    total = (
        weights.l1 * l1
        + weights.l2 * l2
        + weights.perceptual * perceptual
        + weights.gan * gan
        + weights.codebook * quantization
        + weights.distill * distill
    )
    components = {
        "l1": float(l1.detach()),
        "l2": float(l2.detach()),
        "perceptual": float(perceptual.detach()),
        "gan": float(gan.detach()),
        "codebook": float(quantization.detach()),
        "distill": float(distill.detach()),
        "total": float(total.detach()),
    }
    return total, components

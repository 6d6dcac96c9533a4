"""Generation stack: top-k sampling, classifier-free guidance with token and
frame schedules, negative prompting, perplexity diagnostics, sliding-window
autoregressive rollouts, and the staged video decoding pipeline (backward
autoregressive windows plus two 2x temporal interpolation passes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .decoder import DecoderTaskMask, VideoDenoiser, make_task_mask, sample_window
from .seeding import torch_gen
from .synthworld import FrameSequence, tokenize_caption
from .world_model import WorldModel

# ----------------------------------------------------------------- sampling


def top_k_filter(logits: torch.Tensor, k: int) -> torch.Tensor:
    """Renormalized distribution over the k largest logits.

    Boundary ties resolve to lower token ids; everything outside the top k
    gets probability zero.
    """
    vocab = logits.shape[-1]
    if not 1 <= k <= vocab:
        raise ValueError(f"k must lie in [1, {vocab}], got {k}")
    logits = logits.double()
    _, order = torch.sort(logits, dim=-1, descending=True, stable=True)
    keep = order[..., :k]
    filtered = torch.full_like(logits, float("-inf"))
    filtered.scatter_(-1, keep, logits.gather(-1, keep))
    return torch.softmax(filtered, dim=-1)


def cfg_logits(l_cond: torch.Tensor, l_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: (1 + scale) * cond - scale * uncond."""
    if l_cond.shape != l_uncond.shape:
        raise ValueError("conditioned/unconditioned logits must share a shape")
    if scale == 0.0:
        return l_cond.clone()
    return (1.0 + scale) * l_cond - scale * l_uncond


@dataclass(frozen=True)
class GuidanceSchedule:
    """Guidance scale scheduled over tokens (linear) and frames (cosine decay).

    The effective scale at (token i, frame f) is token_profile(i) *
    frame_profile(f); the token profile runs linearly from scale_start at
    i = 0 to scale_end at i = n-1, and the frame profile decays from 1.0 at
    f = 0 (after an optional plateau) to frame_floor at the final frame.
    """

    scale_start: float = 2.0
    scale_end: float = 0.0
    frame_floor: float = 0.25
    plateau_frames: int = 0
    horizon: int = 1

    def token_profile(self, token_idx: int, n_tokens: int) -> float:
        if not 0 <= token_idx < n_tokens:
            raise ValueError("token index out of range")
        if n_tokens == 1:
            return self.scale_start
        u = token_idx / (n_tokens - 1)
        return self.scale_start + (self.scale_end - self.scale_start) * u

    def frame_profile(self, frame_idx: int) -> float:
        if frame_idx < 0:
            raise ValueError("frame index out of range")
        last = self.horizon - 1
        if last <= 0:
            return 1.0
        if frame_idx >= last:
            return self.frame_floor
        if frame_idx <= self.plateau_frames:
            return 1.0
        u = (frame_idx - self.plateau_frames) / (last - self.plateau_frames)
        return self.frame_floor + (1.0 - self.frame_floor) * 0.5 * (1 + math.cos(math.pi * u))


def guidance_scale(token_idx: int, frame_idx: int, sched: GuidanceSchedule,
                   n_tokens: int) -> float:
    """Effective guidance scale: token profile times frame multiplier."""
    return sched.token_profile(token_idx, n_tokens) * sched.frame_profile(frame_idx)


def default_top_k(vocab_size: int) -> int:
    """Scale the reference k=50-at-8192 to another vocabulary size."""
    return max(1, round(50 * vocab_size / 8192))


# ----------------------------------------------------------------- rollout


@dataclass
class StepRecord:
    """One completed time step in the rollout window."""

    tokens: torch.Tensor          # (n,) long
    action: torch.Tensor | None   # (2,) or None for null conditioning


@dataclass
class RolloutConfig:
    horizon: int
    k: int = 8
    seed: int = 0
    positive_prompt: str | None = None
    negative_prompt: str | None = None
    action_override: np.ndarray | None = None   # (horizon, 2) raw (speed, curvature)
    guidance: GuidanceSchedule | None = None
    context_tokens: np.ndarray | None = None    # (S, h, w) pre-tokenized frames
    context_actions: np.ndarray | None = None   # (S, 2)
    # Provenance only; text conditioning requires an explicit positive_prompt.
    context_caption: str | None = None

    def validate(self, image_vocab: int) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 1 <= self.k <= image_vocab:
            raise ValueError(f"k must lie in [1, {image_vocab}]")
        if self.action_override is not None and len(self.action_override) < self.horizon:
            raise ValueError("action_override must cover the full horizon")


def window_plan(window_steps: int, context_steps: int, horizon: int) -> list[dict]:
    """Eviction schedule for a sliding window of whole time steps.

    Entry j describes generated frame j: how many oldest steps leave before
    it and how many steps remain in the window while it is generated.
    """
    if window_steps < 1 or horizon < 1 or context_steps < 0:
        raise ValueError("invalid window plan arguments")
    plan = []
    held = min(context_steps, window_steps)
    for _ in range(horizon):
        evict = max(0, held - (window_steps - 1))
        held -= evict
        plan.append({"evictions": evict, "steps_before": held})
        held += 1
    return plan


class _Branch:
    """One conditioning branch (conditioned / unconditioned / negative)."""

    def __init__(self, model: WorldModel, text_ids: torch.Tensor | None):
        self.model = model
        self.text_ids = text_ids  # None -> null text embedding
        self.past = None
        self.last_hidden = None

    def _step_parts(self, t_index: int, step: StepRecord | None,
                    new_step_text_only: bool = False) -> list[torch.Tensor]:
        model = self.model
        lay = model.cfg.layout
        if self.text_ids is None:
            text = torch.zeros(1, lay.text_slots, dtype=torch.long)
            drop_text = torch.ones(1, dtype=torch.bool)
        else:
            text = self.text_ids.unsqueeze(0)
            drop_text = torch.zeros(1, dtype=torch.bool)
        if new_step_text_only:
            return model.embed_step_parts(t_index, text, None, None, drop_text=drop_text)
        if step.action is None:
            action = torch.zeros(1, 2)
            drop_action = torch.ones(1, dtype=torch.bool)
        else:
            action = step.action.unsqueeze(0)
            drop_action = torch.zeros(1, dtype=torch.bool)
        return model.embed_step_parts(
            t_index, text, step.tokens.unsqueeze(0), action,
            drop_text=drop_text, drop_action=drop_action,
        )

    def prime(self, steps: list[StepRecord]) -> None:
        parts = []
        for t, step in enumerate(steps):
            parts.extend(self._step_parts(t, step))
        parts.extend(self._step_parts(len(steps), None, new_step_text_only=True))
        embs = torch.cat(parts, dim=1) if parts else torch.zeros(1, 0, self.model.cfg.layout.width)
        with torch.no_grad():
            hidden, self.past = self.model.hidden_states(embs)
        self.last_hidden = hidden[:, -1]

    def next_logits(self) -> torch.Tensor:
        return self.model.head(self.last_hidden)[0]

    def feed(self, embedding: torch.Tensor) -> None:
        with torch.no_grad():
            hidden, self.past = self.model.hidden_states(
                embedding.view(1, 1, -1), past=self.past
            )
        self.last_hidden = hidden[:, -1]


def generate_frame(
    model: WorldModel,
    steps: list[StepRecord],
    frame_idx: int,
    k: int,
    generator: torch.Generator,
    prompt_ids: torch.Tensor | None = None,
    uncond_ids: torch.Tensor | None = None,
    guidance: GuidanceSchedule | None = None,
) -> tuple[torch.Tensor, np.ndarray]:
    """Sample the n image tokens of the next frame.

    Returns (tokens (n,), per-token perplexity profile). Guidance is active
    only when a prompt and a schedule are supplied; the unconditioned branch
    uses the learned null text embedding unless `uncond_ids` (negative
    prompting) substitutes other text.
    """
    lay = model.cfg.layout
    if len(steps) >= lay.steps:
        raise ValueError("window already full; evict before generating")
    model.eval()
    t_new = len(steps)

    cond = _Branch(model, prompt_ids)
    cond.prime(steps)
    use_guidance = guidance is not None and prompt_ids is not None
    uncond = None
    if use_guidance:
        uncond = _Branch(model, uncond_ids)
        uncond.prime(steps)

    tokens = torch.empty(lay.image_slots, dtype=torch.long)
    perplexity = np.empty(lay.image_slots)
    with torch.no_grad():
        for i in range(lay.image_slots):
            logits = cond.next_logits()
            if use_guidance:
                scale = guidance_scale(i, frame_idx, guidance, lay.image_slots)
                logits = cfg_logits(logits, uncond.next_logits(), scale)
            probs = top_k_filter(logits, k)
            choice = torch.multinomial(probs, 1, generator=generator)[0]
            tokens[i] = choice
            perplexity[i] = 1.0 / float(probs[choice])

            emb = model.image_embed(choice) + model.positional(
                t_new, slice(lay.text_slots + i, lay.text_slots + i + 1)
            )[0]
            cond.feed(emb)
            if use_guidance:
                uncond.feed(emb)
    return tokens, perplexity


def rollout(model: WorldModel, config: RolloutConfig) -> dict:
    """Generate `horizon` frames of image tokens with a sliding window.

    Returns a dict with token grids, perplexity profiles, and the window
    plan actually executed.
    """
    lay = model.cfg.layout
    config.validate(model.cfg.image_vocab)
    generator = torch_gen(config.seed, "rollout")

    # Text conditioning only when explicitly prompted; otherwise the text
    # slots take the learned null embedding (the trained unconditional or
    # action-conditioned modes).
    prompt_ids = None
    if config.positive_prompt is not None:
        prompt_ids = torch.tensor(
            tokenize_caption(config.positive_prompt, lay.text_slots), dtype=torch.long
        )
    uncond_ids = None
    if config.negative_prompt is not None:
        uncond_ids = torch.tensor(
            tokenize_caption(config.negative_prompt, lay.text_slots), dtype=torch.long
        )

    steps: list[StepRecord] = []
    if config.context_tokens is not None:
        ctx_tokens = torch.as_tensor(np.asarray(config.context_tokens), dtype=torch.long)
        for s in range(ctx_tokens.shape[0]):
            action = None
            if config.context_actions is not None:
                action = torch.as_tensor(config.context_actions[s], dtype=torch.float32)
            steps.append(StepRecord(tokens=ctx_tokens[s].reshape(-1), action=action))
        # Keep only the most recent whole steps that fit alongside one new step.
        steps = steps[-(lay.steps - 1):] if len(steps) > lay.steps - 1 else steps

    plan = window_plan(lay.steps, len(steps), config.horizon)
    grids: list[np.ndarray] = []
    profiles: list[np.ndarray] = []
    grid_shape = None

    for j in range(config.horizon):
        for _ in range(plan[j]["evictions"]):
            steps.pop(0)
        tokens, perplexity = generate_frame(
            model, steps, j, config.k, generator,
            prompt_ids=prompt_ids, uncond_ids=uncond_ids, guidance=config.guidance,
        )
        action = None
        if config.action_override is not None:
            action = torch.as_tensor(config.action_override[j], dtype=torch.float32)
        steps.append(StepRecord(tokens=tokens, action=action))
        grids.append(tokens.numpy().copy())
        profiles.append(perplexity)

    return {
        "token_frames": grids,
        "perplexity": profiles,
        "window_plan": plan,
        "prompt_ids": None if prompt_ids is None else prompt_ids.tolist(),
    }


# ----------------------------------------------------------------- decoding


def frame_counts(n_frames: int) -> tuple[int, int, int]:
    """Frame counts through the two 2x interpolation stages."""
    if n_frames < 2:
        raise ValueError("need at least 2 frames to upsample")
    return n_frames, 2 * n_frames - 1, 4 * n_frames - 3


@dataclass
class DecodeWindow:
    frames: list[int]     # global frame indices covered by this window
    targets: list[int]    # decoded here, exactly once across the plan
    context: list[int]    # previously decoded frames passed as pixels
    mode: str


def decode_plan(n_frames: int, window: int, direction: str = "backward") -> list[DecodeWindow]:
    """Windowed decoding plan covering every frame exactly once.

    The first window decodes `window` frames from tokens alone; each later
    window reuses 2 already-decoded boundary frames as pixel context and
    decodes up to window - 2 new frames, proceeding backward (default) or
    forward.
    """
    if window < 3:
        raise ValueError("window must be >= 3")
    if n_frames < window:
        raise ValueError(f"need at least {window} frames, got {n_frames}")
    if direction not in ("backward", "forward"):
        raise ValueError("direction must be 'backward' or 'forward'")

    windows = []
    chunk = window - 2
    if direction == "backward":
        first = list(range(n_frames - window, n_frames))
        windows.append(DecodeWindow(first, first, [], "video_generation"))
        pos = n_frames - window
        while pos > 0:
            new = min(chunk, pos)
            frames = list(range(pos - new, pos + 2))
            windows.append(DecodeWindow(
                frames, frames[:new], [pos, pos + 1], "autoregressive_backward"
            ))
            pos -= new
    else:
        first = list(range(window))
        windows.append(DecodeWindow(first, first, [], "video_generation"))
        pos = window
        while pos < n_frames:
            new = min(chunk, n_frames - pos)
            frames = list(range(pos - 2, pos + new))
            windows.append(DecodeWindow(
                frames, frames[2:], [pos - 2, pos - 1], "autoregressive_forward"
            ))
            pos += new
    return windows


def _window_mask(win: DecodeWindow) -> DecoderTaskMask:
    ctx = np.array([f in win.context for f in win.frames])
    tok = ~ctx  # tokens for decode targets; context arrives as pixels
    if win.mode == "video_generation":
        tok = np.ones(len(win.frames), dtype=bool)
    return DecoderTaskMask(win.mode, ctx, tok)


def decode_rollout(
    token_frames: np.ndarray,
    decoder: VideoDenoiser,
    seed: int,
    input_rate: float = 6.25,
    steps: int | None = None,
    direction: str = "backward",
) -> tuple[FrameSequence, dict]:
    """Decode token frames to pixels and temporally upsample 2x twice.

    Returns the decoded FrameSequence at 4x the input frame rate plus a
    report of the masks used (interpolation stages never see tokens).
    """
    cfg = decoder.cfg
    tokens = torch.as_tensor(np.asarray(token_frames), dtype=torch.long)
    n = tokens.shape[0]
    steps = cfg.ddim_steps if steps is None else steps
    report = {"windows": [], "interpolation_tokens_provided": False}

    decoded: dict[int, torch.Tensor] = {}
    for w_idx, win in enumerate(decode_plan(n, cfg.frames, direction)):
        mask = _window_mask(win)
        win_tokens = torch.full(
            (len(win.frames), tokens.shape[1], tokens.shape[2]),
            decoder.null_token, dtype=torch.long,
        )
        for pos, f in enumerate(win.frames):
            if mask.tokens[pos]:
                win_tokens[pos] = tokens[f]
        ctx_frames = {
            pos: decoded[f]
            for pos, f in enumerate(win.frames) if f in win.context
        }
        out = sample_window(
            decoder, win_tokens, ctx_frames, mask, steps,
            seed_generator=torch_gen(seed, "decode", w_idx),
        )
        for pos, f in enumerate(win.frames):
            if f in win.targets:
                decoded[f] = out[pos]
        report["windows"].append(
            {"mode": win.mode, "targets": win.targets, "context": win.context}
        )

    frames = [decoded[f] for f in range(n)]
    for stage in ("interp_2x", "interp_4x"):
        new_frames = _interpolate_stage(decoder, frames, steps, seed, stage, report)
        frames = new_frames
    video = torch.stack(frames).permute(0, 2, 3, 1).numpy()
    return FrameSequence(frames=video, rate=input_rate * 4), report


def _interpolate_stage(decoder, frames, steps, seed, stage, report) -> list[torch.Tensor]:
    """Insert one frame between each adjacent pair, tokens fully withheld."""
    cfg = decoder.cfg
    mask = make_task_mask("interpolation", 3)
    assert not mask.tokens.any()
    report.setdefault("stages", []).append(
        {"stage": stage, "task": "interpolation", "tokens_provided": bool(mask.tokens.any())}
    )
    grid_h = cfg.height // cfg.token_downsample
    grid_w = cfg.width // cfg.token_downsample
    null_tokens = torch.full((3, grid_h, grid_w), decoder.null_token, dtype=torch.long)

    out: list[torch.Tensor] = [frames[0]]
    for i in range(len(frames) - 1):
        ctx = {0: frames[i], 2: frames[i + 1]}
        win = sample_window(
            decoder, null_tokens, ctx, mask, steps,
            seed_generator=torch_gen(seed, stage, i),
        )
        out.append(win[1])
        out.append(frames[i + 1])
    return out

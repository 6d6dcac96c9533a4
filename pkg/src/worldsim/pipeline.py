"""Stage orchestration: wires configs, datasets, models, and checkpoints.

Every CLI subcommand and service endpoint is a thin wrapper around one of
these functions. Stage outputs land under the config's output root:

    dataset/train, dataset/val      episode corpora
    checkpoints/*.wsck              tokenizer / world model / decoder
    metrics/*.jsonl                 training metrics
    scaling/records.jsonl, fit.json, fit.svg
    rollouts/<name>/                token tensors, PNG frames, GIF, manifest
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch

from .balance import BalanceSpec, sample_dataset
from .checkpoint import (
    arrays_to_state,
    config_hash,
    load_checkpoint,
    save_checkpoint,
    state_to_arrays,
)
from .config import PipelineConfig, echo_effective_config
from .dataset import load_dataset, save_dataset
from .decoder import DecoderConfig, VideoDenoiser
from .inference import GuidanceSchedule, RolloutConfig, decode_rollout, rollout
from .metrics import MetricsLog
from .seeding import derive_seed
from .synthworld import Episode, generate_episode, subsample_temporal
from .tensorio import write_tensor
from .tokenizer import ImageTokenizer, TokenizerConfig, TokenizerLossWeights
from .training import (
    OptimizerConfig,
    action_stats,
    tokenize_episodes,
    train_decoder,
    train_tokenizer,
    train_world_model,
)
from .world_model import SequenceLayout, WorldModel, WorldModelConfig

VAL_SEED_BASE = 10_000  # held-out seed range for validation episodes


def pipeline_config_hash(config: PipelineConfig) -> str:
    """Hash of the run-relevant configuration; the output path is excluded
    so identical runs in different directories produce identical artifacts."""
    payload = config.to_dict()
    payload.pop("out_root", None)
    return config_hash(payload)


def _paths(config: PipelineConfig) -> dict[str, Path]:
    root = config.output_root()
    return {
        "root": root,
        "train_data": root / "dataset" / "train",
        "val_data": root / "dataset" / "val",
        "tokenizer": root / "checkpoints" / "tokenizer.wsck",
        "world_model": root / "checkpoints" / "world_model.wsck",
        "decoder": root / "checkpoints" / "decoder.wsck",
        "metrics": root / "metrics",
        "scaling": root / "scaling",
        "rollouts": root / "rollouts",
    }


def default_balance_spec(config: PipelineConfig) -> BalanceSpec:
    data = config.data
    return BalanceSpec(
        features=(
            ("weather_idx", tuple(float(i) - 0.5 for i in range(len(data.weather) + 1))),
            ("mean_speed", (data.speed_min, (data.speed_min + data.speed_max) / 2,
                            data.speed_max)),
            ("mean_curvature", (data.curvature_min, 0.0, data.curvature_max)),
        ),
        exponent=data.balance_exponent,
    )


def stage_generate_data(config: PipelineConfig) -> dict[str, Path]:
    paths = _paths(config)
    echo_effective_config(config, paths["root"])
    world = config.data.world_config(config.seed, config.tokenizer.downsample)

    train = [generate_episode(world, s) for s in range(config.data.train_episodes)]
    spec = None
    if config.data.balance:
        spec = default_balance_spec(config)
        train = sample_dataset(train, spec, seed=derive_seed(config.seed, "balance"))
        if not train:
            raise RuntimeError("balanced sampling discarded every episode")
    val = [generate_episode(world, VAL_SEED_BASE + s)
           for s in range(config.data.val_episodes)]

    save_dataset(paths["train_data"], train, world, spec)
    save_dataset(paths["val_data"], val, world, None)
    return {"train": paths["train_data"], "val": paths["val_data"]}


# ------------------------------------------------------------- tokenizer

def tokenizer_config(config: PipelineConfig) -> TokenizerConfig:
    tok = config.tokenizer
    return TokenizerConfig(
        downsample=tok.downsample, vocab_size=tok.vocab_size,
        code_dim=tok.code_dim, base_channels=tok.base_channels,
    )


def tokenizer_weights(config: PipelineConfig) -> TokenizerLossWeights:
    tok = config.tokenizer
    return TokenizerLossWeights(
        l1=tok.weight_l1, l2=tok.weight_l2, perceptual=tok.weight_perceptual,
        gan=tok.weight_gan, codebook=tok.weight_codebook, distill=tok.weight_distill,
    )


def save_tokenizer_checkpoint(path: Path, model: ImageTokenizer, config_digest: str,
                              step: int, seed: int,
                              loss_weights: TokenizerLossWeights | None = None) -> None:
    header = {
        "config_hash": config_digest,
        "step": step,
        "creation_seed": seed,
        "model": dataclasses.asdict(model.cfg),
        "loss_weights": None if loss_weights is None else dataclasses.asdict(loss_weights),
    }
    save_checkpoint(path, "tokenizer", header, state_to_arrays(model))


def load_tokenizer_checkpoint(path: str | Path, force: bool = False) -> ImageTokenizer:
    header, arrays = load_checkpoint(path, expected_kind="tokenizer")
    model = ImageTokenizer(TokenizerConfig(**header["model"]))
    model.load_state_dict(arrays_to_state(arrays))
    model.eval()
    return model


def stage_train_tokenizer(config: PipelineConfig, dataset_dir: Path | None = None) -> Path:
    paths = _paths(config)
    episodes = load_dataset(dataset_dir or paths["train_data"])
    log = MetricsLog(paths["metrics"] / "tokenizer.jsonl")
    opt = OptimizerConfig(
        lr=config.tokenizer.lr, weight_decay=config.tokenizer.weight_decay,
        betas=(config.tokenizer.beta1, config.tokenizer.beta2),
    )
    model, _, _ = train_tokenizer(
        episodes, tokenizer_config(config), tokenizer_weights(config),
        steps=config.tokenizer.train_steps, batch_size=config.tokenizer.batch_size,
        seed=derive_seed(config.seed, "tokenizer"), opt_cfg=opt, log=log,
    )
    save_tokenizer_checkpoint(
        paths["tokenizer"], model, pipeline_config_hash(config),
        step=config.tokenizer.train_steps, seed=config.seed,
        loss_weights=tokenizer_weights(config),
    )
    return paths["tokenizer"]


def stage_tokenize(tokenizer_path: Path, dataset_dir: Path, out_dir: Path,
                   subsample: int = 1) -> list[Path]:
    """Encode every dataset episode to token-grid tensors on disk."""
    model = load_tokenizer_checkpoint(tokenizer_path)
    episodes = load_dataset(dataset_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with torch.no_grad():
        for ep in episodes:
            frames = subsample_temporal(ep.frames, subsample).frames
            imgs = torch.from_numpy(frames).permute(0, 3, 1, 2)
            tokens = model.encode(imgs).numpy().astype(np.int32)
            path = out_dir / f"ep_{ep.metadata['seed']:06d}_tokens.wst"
            write_tensor(path, tokens)
            written.append(path)
    return written


# ------------------------------------------------------------- world model

def world_model_config(config: PipelineConfig, speed_stats, curvature_stats) -> WorldModelConfig:
    wm = config.world_model
    layout = SequenceLayout(
        steps=wm.steps, text_slots=wm.text_slots, image_slots=config.image_slots,
        action_slots=wm.action_slots, width=wm.width,
    )
    return WorldModelConfig(
        layout=layout, image_vocab=config.tokenizer.vocab_size,
        n_layers=wm.layers, n_heads=wm.heads,
        speed_stats=speed_stats, curvature_stats=curvature_stats,
    )


def save_world_model_checkpoint(path: Path, model: WorldModel, config_digest: str,
                                step: int, seed: int) -> None:
    from .synthworld import VOCABULARY

    cfg = model.cfg
    header = {
        "config_hash": config_digest,
        "step": step,
        "creation_seed": seed,
        "layout": dataclasses.asdict(cfg.layout),
        "image_vocab": cfg.image_vocab,
        "text_vocab": cfg.text_vocab,
        "vocabulary": list(VOCABULARY),
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "speed_stats": list(cfg.speed_stats),
        "curvature_stats": list(cfg.curvature_stats),
    }
    save_checkpoint(path, "world_model", header, state_to_arrays(model))


def load_world_model_checkpoint(path: str | Path) -> WorldModel:
    header, arrays = load_checkpoint(path, expected_kind="world_model")
    cfg = WorldModelConfig(
        layout=SequenceLayout(**header["layout"]),
        image_vocab=header["image_vocab"], text_vocab=header["text_vocab"],
        n_layers=header["n_layers"], n_heads=header["n_heads"],
        speed_stats=tuple(header["speed_stats"]),
        curvature_stats=tuple(header["curvature_stats"]),
    )
    model = WorldModel(cfg)
    model.load_state_dict(arrays_to_state(arrays))
    model.eval()
    return model


def stage_train_world_model(config: PipelineConfig, tokenizer_path: Path | None = None) -> Path:
    paths = _paths(config)
    tokenizer = load_tokenizer_checkpoint(tokenizer_path or paths["tokenizer"])
    episodes = load_dataset(paths["train_data"])
    tokenized = tokenize_episodes(
        tokenizer, episodes, config.world_model.text_slots,
        subsample=config.world_model.subsample,
    )
    speed_stats, curvature_stats = action_stats(tokenized)
    wm_cfg = world_model_config(config, speed_stats, curvature_stats)
    log = MetricsLog(paths["metrics"] / "world_model.jsonl")
    opt = OptimizerConfig(
        lr=config.world_model.lr, weight_decay=config.world_model.weight_decay,
        betas=(config.world_model.beta1, config.world_model.beta2),
        grad_clip=config.world_model.grad_clip,
    )
    model, _ = train_world_model(
        tokenized, wm_cfg,
        steps=config.world_model.train_steps,
        batch_size=config.world_model.batch_size,
        seed=derive_seed(config.seed, "world-model"),
        conditioning_ratios=config.world_model.conditioning_ratios,
        opt_cfg=opt, log=log,
    )
    save_world_model_checkpoint(
        paths["world_model"], model, pipeline_config_hash(config),
        step=config.world_model.train_steps, seed=config.seed,
    )
    return paths["world_model"]


# ------------------------------------------------------------- decoder

def decoder_config(config: PipelineConfig) -> DecoderConfig:
    dec = config.decoder
    return DecoderConfig(
        frames=dec.frames, height=config.data.frame_height,
        width=config.data.frame_width, token_downsample=config.tokenizer.downsample,
        token_vocab=config.tokenizer.vocab_size, base_channels=dec.base_channels,
        token_channels=dec.token_channels, ddim_steps=dec.ddim_steps,
        token_dropout_p=dec.token_dropout, mix_probability=dec.mix_probability,
        mix_weight=dec.mix_weight, ema_decay=dec.ema_decay,
        loss_l1=dec.weight_l1, loss_l2=dec.weight_l2,
    )


def save_decoder_checkpoint(path: Path, model: VideoDenoiser, ema_shadow: dict,
                            config_digest: str, step: int, seed: int) -> None:
    from .diffusion import _COSINE_OFFSET

    header = {
        "config_hash": config_digest,
        "step": step,
        "creation_seed": seed,
        "model": dataclasses.asdict(model.cfg),
        "noise_schedule": {"kind": "cosine", "offset": _COSINE_OFFSET},
    }
    arrays = state_to_arrays(model, prefix="live.")
    arrays.update({f"ema.{k}": v.detach().cpu().numpy() for k, v in ema_shadow.items()})
    save_checkpoint(path, "decoder", header, arrays)


def load_decoder_checkpoint(path: str | Path, use_ema: bool = True) -> VideoDenoiser:
    header, arrays = load_checkpoint(path, expected_kind="decoder")
    model = VideoDenoiser(DecoderConfig(**header["model"]))
    prefix = "ema." if use_ema else "live."
    model.load_state_dict(arrays_to_state(arrays, prefix=prefix))
    model.eval()
    return model


def stage_train_decoder(config: PipelineConfig, tokenizer_path: Path | None = None) -> Path:
    paths = _paths(config)
    tokenizer = load_tokenizer_checkpoint(tokenizer_path or paths["tokenizer"])
    episodes = load_dataset(paths["train_data"])
    log = MetricsLog(paths["metrics"] / "decoder.jsonl")
    dec = config.decoder
    opt = OptimizerConfig(
        lr=dec.lr, weight_decay=dec.weight_decay, betas=(dec.beta1, dec.beta2),
    )
    model, ema, _ = train_decoder(
        episodes, tokenizer, decoder_config(config),
        steps=dec.train_steps, batch_size=dec.batch_size,
        seed=derive_seed(config.seed, "decoder"), opt_cfg=opt, log=log,
    )
    save_decoder_checkpoint(
        paths["decoder"], model, ema.shadow, pipeline_config_hash(config),
        step=dec.train_steps, seed=config.seed,
    )
    return paths["decoder"]


# ------------------------------------------------------------- rollout

def context_from_episode(episode: Episode, tokenizer: ImageTokenizer,
                         subsample: int, max_steps: int) -> dict:
    frames = subsample_temporal(episode.frames, subsample)
    imgs = torch.from_numpy(frames.frames).permute(0, 3, 1, 2)
    with torch.no_grad():
        tokens = tokenizer.encode(imgs).numpy()
    actions = np.stack(
        [episode.actions.speed[::subsample], episode.actions.curvature[::subsample]],
        axis=1,
    )
    keep = min(max_steps, tokens.shape[0])
    return {
        "tokens": tokens[:keep],
        "actions": actions[:keep],
        "caption": episode.caption,
    }


def stage_rollout(
    config: PipelineConfig,
    out_dir: Path,
    world_model_path: Path | None = None,
    decoder_path: Path | None = None,
    tokenizer_path: Path | None = None,
    context_episode: Path | None = None,
    horizon: int | None = None,
    prompt: str | None = None,
    negative_prompt: str | None = None,
    actions_file: Path | None = None,
    k: int | None = None,
    seed: int | None = None,
    decode: bool = True,
) -> dict:
    from .dataset import load_episode

    paths = _paths(config)
    inf = config.inference
    model = load_world_model_checkpoint(world_model_path or paths["world_model"])

    horizon = inf.horizon if horizon is None else horizon
    seed = config.seed if seed is None else seed
    k = inf.k if k is None else k

    context = None
    if context_episode is not None:
        tokenizer = load_tokenizer_checkpoint(tokenizer_path or paths["tokenizer"])
        context = context_from_episode(
            load_episode(context_episode), tokenizer,
            config.world_model.subsample, model.cfg.layout.steps - 1,
        )

    action_override = None
    if actions_file is not None:
        action_override = np.asarray(json.loads(Path(actions_file).read_text()),
                                     dtype=np.float32)

    guidance = None
    if prompt is not None:
        guidance = GuidanceSchedule(
            scale_start=inf.guidance_start, scale_end=inf.guidance_end,
            frame_floor=inf.frame_floor, plateau_frames=inf.plateau_frames,
            horizon=horizon,
        )

    roll_cfg = RolloutConfig(
        horizon=horizon, k=k, seed=seed,
        positive_prompt=prompt, negative_prompt=negative_prompt,
        action_override=action_override, guidance=guidance,
        context_tokens=None if context is None else context["tokens"],
        context_actions=None if context is None else context["actions"],
        context_caption=None if context is None else context["caption"],
    )
    result = rollout(model, roll_cfg)

    grid_h = config.data.frame_height // config.tokenizer.downsample
    grid_w = config.data.frame_width // config.tokenizer.downsample
    token_stack = np.stack(result["token_frames"]).reshape(-1, grid_h, grid_w)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(out_dir / "token_frames.wst", token_stack.astype(np.int32))

    guidance_samples = None
    if guidance is not None:
        from .inference import guidance_scale

        n = model.cfg.layout.image_slots
        guidance_samples = [
            {"token": i, "frame": f, "scale": guidance_scale(i, f, guidance, n)}
            for i in (0, n // 2, n - 1)
            for f in (0, horizon - 1)
        ]

    manifest = {
        "format_version": config.format_version,
        "horizon": horizon, "k": k, "seed": seed,
        "prompt": prompt, "negative_prompt": negative_prompt,
        "context_episode": None if context_episode is None else str(context_episode),
        "perplexity_profiles": [p.tolist() for p in result["perplexity"]],
        "window_plan": result["window_plan"],
        "guidance": None if guidance is None else dataclasses.asdict(guidance),
        "guidance_samples": guidance_samples,
    }

    if decode:
        decoder = load_decoder_checkpoint(decoder_path or paths["decoder"])
        base_rate = config.data.base_rate / config.world_model.subsample
        video, decode_report = decode_rollout(
            token_stack, decoder, seed=derive_seed(seed, "decode"),
            input_rate=base_rate,
        )
        write_video_outputs(out_dir, video)
        manifest["decode"] = {
            "frames_written": len(video),
            "rate": video.rate,
            "stages": decode_report["stages"],
        }

    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return {"out_dir": out_dir, "manifest": manifest}


def write_video_outputs(out_dir: Path, video) -> None:
    """PNG frame directory plus an animated GIF."""
    from PIL import Image

    frames_dir = Path(out_dir) / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    images = []
    for i, frame in enumerate(video.frames):
        img = Image.fromarray((np.clip(frame, 0, 1) * 255).astype(np.uint8))
        img.save(frames_dir / f"frame_{i:04d}.png")
        images.append(img)
    duration_ms = max(int(1000.0 / video.rate), 20)
    images[0].save(
        Path(out_dir) / "video.gif", save_all=True, append_images=images[1:],
        duration=duration_ms, loop=0,
    )


# ------------------------------------------------------------- scaling

def stage_scaling_study(config: PipelineConfig) -> dict:
    from .scaling import (
        plot_fit_svg,
        run_scaling_study,
        save_fit_report,
        save_records,
    )

    paths = _paths(config)
    scal = config.scaling
    world = scaling_world_config(config)
    train_eps = [generate_episode(world, s) for s in range(scal.train_episodes)]
    val_eps = [generate_episode(world, VAL_SEED_BASE + s) for s in range(scal.val_episodes)]

    tok_cfg = TokenizerConfig(
        downsample=config.tokenizer.downsample, vocab_size=config.tokenizer.vocab_size,
        code_dim=config.tokenizer.code_dim, base_channels=config.tokenizer.base_channels,
    )
    tokenizer, _, _ = train_tokenizer(
        train_eps, tok_cfg, tokenizer_weights(config),
        steps=min(config.tokenizer.train_steps, 300),
        seed=derive_seed(config.seed, "scaling-tokenizer"),
    )

    train_tok = tokenize_episodes(tokenizer, train_eps, scal.text_slots,
                                  subsample=config.world_model.subsample)
    val_tok = tokenize_episodes(tokenizer, val_eps, scal.text_slots,
                                subsample=config.world_model.subsample)
    speed_stats, curvature_stats = action_stats(train_tok)

    image_slots = (scal.frame_height // config.tokenizer.downsample) * (
        scal.frame_width // config.tokenizer.downsample)
    layout = SequenceLayout(
        steps=scal.steps, text_slots=scal.text_slots,
        image_slots=image_slots, action_slots=2, width=32,
    )

    log = MetricsLog(paths["metrics"] / "scaling.jsonl")
    records, fit, report = run_scaling_study(
        train_tok, val_tok, layout, config.tokenizer.vocab_size,
        sizes=scal.sizes, steps=scal.train_steps, batch_size=scal.batch_size,
        seed=derive_seed(config.seed, "scaling"),
        speed_stats=speed_stats, curvature_stats=curvature_stats, log=log,
    )

    scaling_dir = paths["scaling"]
    scaling_dir.mkdir(parents=True, exist_ok=True)
    save_records(scaling_dir / "records.jsonl", records)
    save_fit_report(scaling_dir / "fit.json", fit, report)
    if fit is not None:
        points = [(r.compute, r.final_loss) for r in records if not r.failed]
        plot_fit_svg(scaling_dir / "fit.svg", points, fit)
    return {"records": scaling_dir / "records.jsonl", "fit": scaling_dir / "fit.json",
            "report": report}


def scaling_world_config(config: PipelineConfig):
    scal = config.scaling
    return dataclasses.replace(
        config.data.world_config(config.seed, config.tokenizer.downsample),
        frame_height=scal.frame_height, frame_width=scal.frame_width,
    )

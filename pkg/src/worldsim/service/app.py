"""HTTP service wrapping the core package.

Loaded checkpoints are cached in a registry keyed by path, so a running
service can answer many rollout/analysis requests against the same models.
"""

from __future__ import annotations

import dataclasses
import tempfile
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..balance import compute_bin_weights, keep_probability
from ..config import PipelineConfig
from ..diffusion import cosine_schedule
from ..inference import decode_plan, frame_counts
from ..scaling import PowerLawFit, fit_power_law, predict_loss
from ..synthworld import caption_episode, generate_episode
from ..tokenizer import bit_compression
from ..world_model import sequence_length
from . import schemas


def create_app(config: PipelineConfig | None = None) -> FastAPI:
    config = config or PipelineConfig()
    app = FastAPI(title="worldsim", version=__version__)
    app.state.config = config
    app.state.registry = {}

    def _get_model(kind: str, path: str):
        from ..pipeline import (
            load_decoder_checkpoint,
            load_tokenizer_checkpoint,
            load_world_model_checkpoint,
        )

        key = (kind, str(Path(path).resolve()))
        if key not in app.state.registry:
            loaders = {
                "tokenizer": load_tokenizer_checkpoint,
                "world_model": load_world_model_checkpoint,
                "decoder": load_decoder_checkpoint,
            }
            if kind not in loaders:
                raise HTTPException(422, f"unknown checkpoint kind {kind!r}")
            try:
                app.state.registry[key] = loaders[kind](path)
            except FileNotFoundError:
                raise HTTPException(404, f"checkpoint {path} not found")
            except ValueError as exc:
                raise HTTPException(422, str(exc))
        return app.state.registry[key]

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/captions", response_model=schemas.CaptionResponse)
    def caption(req: schemas.CaptionRequest):
        try:
            text = caption_episode(req.model_dump())
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.CaptionResponse(caption=text)

    @app.post("/balance/weights", response_model=schemas.BinWeightsResponse)
    def balance_weights(req: schemas.BinWeightsRequest):
        try:
            weights = compute_bin_weights(req.counts, req.exponent)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.BinWeightsResponse(weights=[float(w) for w in weights])

    @app.post("/balance/keep-probability", response_model=schemas.KeepProbabilityResponse)
    def keep_prob(req: schemas.KeepProbabilityRequest):
        weights = {
            name: (tuple(spec["edges"]), np.asarray(spec["weights"], dtype=float))
            for name, spec in req.features.items()
        }
        try:
            p = keep_probability(req.example, weights)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.KeepProbabilityResponse(probability=p)

    @app.post("/plan/sequence-length", response_model=schemas.SequenceLengthResponse)
    def plan_sequence_length(req: schemas.SequenceLengthRequest):
        return schemas.SequenceLengthResponse(
            length=sequence_length(req.steps, req.text_slots, req.image_slots,
                                   req.action_slots)
        )

    @app.post("/plan/frame-counts", response_model=schemas.FrameCountsResponse)
    def plan_frame_counts(req: schemas.FrameCountsRequest):
        try:
            base, mid, full = frame_counts(req.frames)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.FrameCountsResponse(
            base=base, after_first_upsample=mid, after_second_upsample=full
        )

    @app.post("/plan/bit-compression", response_model=schemas.BitCompressionResponse)
    def plan_bit_compression(req: schemas.BitCompressionRequest):
        try:
            ratio = bit_compression(req.height, req.width, req.downsample, req.vocab_size)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.BitCompressionResponse(ratio=ratio)

    @app.post("/plan/decode-windows", response_model=schemas.DecodeWindowsResponse)
    def plan_decode_windows(req: schemas.DecodeWindowsRequest):
        try:
            plan = decode_plan(req.frames, req.window, req.direction)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.DecodeWindowsResponse(
            windows=[schemas.DecodeWindowModel(**dataclasses.asdict(w)) for w in plan]
        )

    @app.post("/schedule/cosine", response_model=schemas.ScheduleResponse)
    def schedule(req: schemas.ScheduleRequest):
        try:
            alpha, sigma = cosine_schedule(torch.tensor(req.times, dtype=torch.float64))
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.ScheduleResponse(
            alpha=[float(a) for a in alpha], sigma=[float(s) for s in sigma]
        )

    @app.post("/scaling/fit", response_model=schemas.FitResponse)
    def scaling_fit(req: schemas.FitRequest):
        try:
            fit = fit_power_law(req.points)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.FitResponse(**fit.to_dict())

    @app.post("/scaling/predict", response_model=schemas.PredictResponse)
    def scaling_predict(req: schemas.PredictRequest):
        try:
            fit = PowerLawFit(a=req.a, b=req.b, c=req.c, residual=0.0,
                              max_compute=req.max_compute)
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                loss = predict_loss(fit, req.compute)
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        return schemas.PredictResponse(loss=loss, extrapolation=fit.is_extrapolation(req.compute))

    @app.post("/episodes/generate", response_model=schemas.GenerateEpisodeResponse)
    def episodes_generate(req: schemas.GenerateEpisodeRequest):
        world = app.state.config.data.world_config(
            app.state.config.seed, app.state.config.tokenizer.downsample
        )
        if req.episode_length is not None or req.num_agents is not None:
            world = dataclasses.replace(
                world,
                episode_length=req.episode_length or world.episode_length,
                num_agents=world.num_agents if req.num_agents is None else req.num_agents,
            )
        ep = generate_episode(world, req.seed)
        return schemas.GenerateEpisodeResponse(
            seed=req.seed, caption=ep.caption, features=ep.metadata,
            frames_shape=list(ep.frames.frames.shape),
            mean_speed=ep.metadata["mean_speed"],
            mean_curvature=ep.metadata["mean_curvature"],
        )

    @app.post("/checkpoints/load", response_model=schemas.LoadCheckpointResponse)
    def checkpoints_load(req: schemas.LoadCheckpointRequest):
        _get_model(req.kind, req.path)
        from ..checkpoint import load_checkpoint

        header, _ = load_checkpoint(req.path)
        return schemas.LoadCheckpointResponse(
            model_id=f"{req.kind}:{Path(req.path).resolve()}",
            kind=req.kind, step=header.get("step"),
        )

    @app.post("/rollout", response_model=schemas.RolloutResponse)
    def run_rollout(req: schemas.RolloutRequest):
        from ..pipeline import stage_rollout

        cfg = app.state.config
        try:
            result = stage_rollout(
                cfg,
                out_dir=Path(req.out_dir),
                world_model_path=Path(req.world_model),
                decoder_path=None if req.decoder is None else Path(req.decoder),
                tokenizer_path=None if req.tokenizer is None else Path(req.tokenizer),
                context_episode=None if req.context_episode is None
                                else Path(req.context_episode),
                horizon=req.horizon,
                prompt=req.prompt,
                negative_prompt=req.negative_prompt,
                actions_file=_actions_to_file(req.actions),
                k=req.k,
                seed=req.seed,
                decode=req.decode,
            )
        except FileNotFoundError as exc:
            raise HTTPException(404, str(exc))
        except ValueError as exc:
            raise HTTPException(422, str(exc))
        manifest = result["manifest"]
        profiles = manifest["perplexity_profiles"]
        mean_perp = float(np.mean([v for p in profiles for v in p]))
        decoded = manifest.get("decode", {}).get("frames_written")
        return schemas.RolloutResponse(
            out_dir=str(result["out_dir"]),
            n_token_frames=len(profiles),
            decoded_frames=decoded,
            mean_perplexity=mean_perp,
        )

    return app


def _actions_to_file(actions) -> Path | None:
    if actions is None:
        return None
    import json

    tmp = tempfile.NamedTemporaryFile(
        mode="w", suffix=".json", delete=False, prefix="worldsim_actions_"
    )
    json.dump([list(a) for a in actions], tmp)
    tmp.close()
    return Path(tmp.name)

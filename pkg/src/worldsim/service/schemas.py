"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class CaptionRequest(BaseModel):
    weather: str
    light: str
    signal: str


class CaptionResponse(BaseModel):
    caption: str


class BinWeightsRequest(BaseModel):
    counts: list[float]
    exponent: float = Field(ge=0.0, le=1.0)


class BinWeightsResponse(BaseModel):
    weights: list[float]


class KeepProbabilityRequest(BaseModel):
    example: dict[str, float]
    features: dict[str, dict]  # name -> {"edges": [...], "weights": [...]}


class KeepProbabilityResponse(BaseModel):
    probability: float


class SequenceLengthRequest(BaseModel):
    steps: int = Field(ge=1)
    text_slots: int = Field(ge=0)
    image_slots: int = Field(ge=1)
    action_slots: int = Field(ge=0)


class SequenceLengthResponse(BaseModel):
    length: int


class FrameCountsRequest(BaseModel):
    frames: int = Field(ge=2)


class FrameCountsResponse(BaseModel):
    base: int
    after_first_upsample: int
    after_second_upsample: int


class BitCompressionRequest(BaseModel):
    height: int
    width: int
    downsample: int
    vocab_size: int


class BitCompressionResponse(BaseModel):
    ratio: float


class DecodeWindowsRequest(BaseModel):
    frames: int
    window: int
    direction: str = "backward"


class DecodeWindowModel(BaseModel):
    frames: list[int]
    targets: list[int]
    context: list[int]
    mode: str


class DecodeWindowsResponse(BaseModel):
    windows: list[DecodeWindowModel]


class ScheduleRequest(BaseModel):
    times: list[float]


class ScheduleResponse(BaseModel):
    alpha: list[float]
    sigma: list[float]


class FitRequest(BaseModel):
    points: list[tuple[float, float]]  # (compute, loss)


class FitResponse(BaseModel):
    a: float
    b: float
    c: float
    residual: float
    max_compute: float


class PredictRequest(BaseModel):
    a: float
    b: float
    c: float
    max_compute: float = 0.0
    compute: float


class PredictResponse(BaseModel):
    loss: float
    extrapolation: bool


class GenerateEpisodeRequest(BaseModel):
    seed: int = 0
    episode_length: int | None = None
    num_agents: int | None = None


class GenerateEpisodeResponse(BaseModel):
    seed: int
    caption: str
    features: dict
    frames_shape: list[int]
    mean_speed: float
    mean_curvature: float


class LoadCheckpointRequest(BaseModel):
    path: str
    kind: str  # tokenizer | world_model | decoder


class LoadCheckpointResponse(BaseModel):
    model_id: str
    kind: str
    step: int | None = None


class RolloutRequest(BaseModel):
    world_model: str
    decoder: str | None = None
    tokenizer: str | None = None
    context_episode: str | None = None
    horizon: int = Field(default=4, ge=1)
    prompt: str | None = None
    negative_prompt: str | None = None
    actions: list[tuple[float, float]] | None = None
    k: int | None = None
    seed: int = 0
    decode: bool = False
    out_dir: str


class RolloutResponse(BaseModel):
    out_dir: str
    n_token_frames: int
    decoded_frames: int | None = None
    mean_perplexity: float

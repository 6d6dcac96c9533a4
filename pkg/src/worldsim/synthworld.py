"""Procedural driving micro-world.

Renders top-down episodes of an ego vehicle following a curved road with
other agents, a cycling traffic light, and a weather/lighting tint. Every
pixel carries a semantic class id, which doubles as the ground-truth signal
for tokenizer distillation. Generation is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import np_rng

# Semantic classes; exhaustive and mutually exclusive per pixel.
CLASS_BACKGROUND = 0
CLASS_ROAD = 1
CLASS_MARKING = 2
CLASS_VEHICLE = 3
CLASS_TRAFFIC_LIGHT = 4
NUM_CLASSES = 5

WEATHER_WORDS = {"sun": "sunny", "rain": "rainy", "fog": "foggy"}
LIGHT_LEVELS = ("day", "dusk", "night")
SIGNAL_STATES = ("green", "yellow", "red")

# Closed caption vocabulary; id 0 is the pad token.
VOCABULARY = (
    "<pad>",
    "sunny", "rainy", "foggy",
    "day", "dusk", "night",
    "scene", "light",
    "green", "yellow", "red",
)
WORD_TO_ID = {w: i for i, w in enumerate(VOCABULARY)}
PAD_ID = 0

# View geometry (meters per pixel): rows span distance ahead, columns lateral.
_MPP_LONG = 1.5
_MPP_LAT = 0.75
_ROAD_HALF_WIDTH = 3.5
_LANE_OFFSET = 1.75
_VEHICLE_HALF_LEN = 2.2
_VEHICLE_HALF_WID = 1.1
_LIGHT_SPACING = 60.0
_LIGHT_CYCLE = ((4.0, "green"), (1.0, "yellow"), (3.0, "red"))
# Steering responsiveness: lateral meters per (curvature error * meter
# traveled). Deliberately arcade-snappy so action effects are visible within
# a frame or two at this resolution.
_LATERAL_GAIN = 100.0
_MAX_LATERAL = 2.5
_MANEUVER_FRAMES = (8, 16)  # steering jumps re-drawn every 0.3-0.6 s

_AGENT_PALETTE = np.array(
    [
        (0.86, 0.22, 0.18),
        (0.90, 0.85, 0.25),
        (0.80, 0.80, 0.82),
        (0.25, 0.70, 0.75),
        (0.55, 0.30, 0.65),
        (0.95, 0.55, 0.15),
    ],
    dtype=np.float32,
)
_SIGNAL_COLORS = {
    "green": (0.10, 0.85, 0.20),
    "yellow": (0.95, 0.80, 0.10),
    "red": (0.90, 0.10, 0.10),
}


@dataclass(frozen=True)
class WorldConfig:
    """Static parameters of the micro-world generator."""

    frame_height: int = 32
    frame_width: int = 64
    episode_length: int = 100
    base_rate: float = 25.0
    num_agents: int = 3
    weather_set: tuple[str, ...] = ("sun", "rain", "fog")
    light_set: tuple[str, ...] = ("day", "dusk", "night")
    road_curvature_range: tuple[float, float] = (-0.02, 0.02)
    speed_range: tuple[float, float] = (2.0, 14.0)
    seed: int = 0
    # Frames must tile evenly into tokenizer cells of this size.
    downsample_divisor: int = 4

    def __post_init__(self):
        if self.downsample_divisor < 1:
            raise ValueError("downsample_divisor must be >= 1")
        if self.frame_height % self.downsample_divisor or self.frame_width % self.downsample_divisor:
            raise ValueError(
                f"frame dims ({self.frame_height}, {self.frame_width}) must be divisible "
                f"by {self.downsample_divisor}"
            )
        if self.episode_length < 2:
            raise ValueError("episode_length must be >= 2")
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")
        if self.num_agents < 0:
            raise ValueError("num_agents must be >= 0")
        if not self.weather_set:
            raise ValueError("weather_set must be non-empty")
        for w in self.weather_set:
            if w not in WEATHER_WORDS:
                raise ValueError(f"unknown weather category {w!r}")
        if not self.light_set:
            raise ValueError("light_set must be non-empty")
        for lt in self.light_set:
            if lt not in LIGHT_LEVELS:
                raise ValueError(f"unknown light category {lt!r}")
        for name, rng in (("road_curvature_range", self.road_curvature_range),
                          ("speed_range", self.speed_range)):
            if rng[0] > rng[1]:
                raise ValueError(f"{name} must satisfy min <= max")


@dataclass
class FrameSequence:
    """Ordered RGB frames in [0, 1] with a frame rate in Hz."""

    frames: np.ndarray  # (T, H, W, 3) float32
    rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must have shape (T, H, W, 3), got {self.frames.shape}")
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class ActionTrace:
    """Per-frame ego controls: speed (m/s) and curvature (1/m)."""

    speed: np.ndarray
    curvature: np.ndarray

    def __post_init__(self):
        self.speed = np.asarray(self.speed, dtype=np.float32)
        self.curvature = np.asarray(self.curvature, dtype=np.float32)
        if self.speed.shape != self.curvature.shape or self.speed.ndim != 1:
            raise ValueError("speed and curvature must be 1-D arrays of equal length")

    def __len__(self) -> int:
        return self.speed.shape[0]


@dataclass
class Episode:
    """One generated clip with actions, semantics, features, and a caption."""

    frames: FrameSequence
    actions: ActionTrace
    semantics: np.ndarray  # (T, H, W) uint8 class ids
    metadata: dict
    caption: str

    def __post_init__(self):
        self.semantics = np.asarray(self.semantics, dtype=np.uint8)
        n = len(self.frames)
        if not (len(self.actions) == n and self.semantics.shape[0] == n):
            raise ValueError("frames, actions, and semantics must have equal length")
        if self.semantics.shape[1:] != self.frames.frames.shape[1:3]:
            raise ValueError("semantics must be aligned with frames")


def caption_episode(metadata: dict) -> str:
    """Fixed-template caption from the episode feature record.

    Template: "<weather adjective> <light> scene <signal> light".
    """
    try:
        weather_word = WEATHER_WORDS[metadata["weather"]]
    except KeyError as exc:
        raise ValueError(f"unknown weather category: {metadata.get('weather')!r}") from exc
    light = metadata["light"]
    if light not in LIGHT_LEVELS:
        raise ValueError(f"unknown light category: {light!r}")
    signal = metadata["signal"]
    if signal not in SIGNAL_STATES:
        raise ValueError(f"unknown signal state: {signal!r}")
    return f"{weather_word} {light} scene {signal} light"


def tokenize_caption(text: str, num_slots: int) -> list[int]:
    """Whitespace-tokenize into exactly `num_slots` word ids (pad/truncate)."""
    ids = []
    for word in text.split():
        if word not in WORD_TO_ID:
            raise ValueError(f"word {word!r} not in the closed vocabulary")
        ids.append(WORD_TO_ID[word])
    ids = ids[:num_slots]
    return ids + [PAD_ID] * (num_slots - len(ids))


def _signal_state(t_seconds: float, phase: float) -> str:
    period = sum(d for d, _ in _LIGHT_CYCLE)
    u = (t_seconds + phase) % period
    for duration, state in _LIGHT_CYCLE:
        if u < duration:
            return state
        u -= duration
    return _LIGHT_CYCLE[-1][1]


def _sample_actions(config: WorldConfig, rng: np.random.Generator):
    """Sample the ego controls and derived state.

    The curvature trace is the ego's steering command. The road has its own
    curvature field; steering away from it drifts the ego laterally across
    the lane, so actions carry information the current frame alone does не
    reveal. Returns (trace, arc positions, road-field params, lateral offsets).
    """
    n = config.episode_length
    t = np.arange(n) / config.base_rate
    v_lo, v_hi = config.speed_range
    k_lo, k_hi = config.road_curvature_range

    v_base = rng.uniform(v_lo, v_hi)
    v_amp = 0.15 * (v_hi - v_lo)
    v_phase = rng.uniform(0, 2 * np.pi)
    speed = np.clip(v_base + v_amp * np.sin(2 * np.pi * t / 6.0 + v_phase), v_lo, v_hi)

    # Road curvature field over arc length.
    k_bias = rng.uniform(k_lo + 0.1 * (k_hi - k_lo), k_hi - 0.1 * (k_hi - k_lo))
    k_amp = 0.25 * (k_hi - k_lo)
    k_wavelen = rng.uniform(60.0, 140.0)
    k_phase = rng.uniform(0, 2 * np.pi)
    road_params = (k_bias, k_amp, k_wavelen, k_phase)

    arc = np.concatenate([[0.0], np.cumsum(speed[:-1] / config.base_rate)])
    road_curv = _curvature_at(arc, road_params, config)

    # Steering = road curvature + driver wander. The wander mixes a smooth
    # drift with piecewise-constant maneuvers that past frames cannot
    # predict, so the action tokens carry irreducible signal.
    smooth_amp = 0.2 * (k_hi - k_lo)
    wander_wavelen = rng.uniform(1.5, 4.0)  # seconds
    wander_phase = rng.uniform(0, 2 * np.pi)
    smooth = smooth_amp * np.sin(2 * np.pi * t / wander_wavelen + wander_phase)

    maneuver = np.zeros(n)
    i = 0
    while i < n:
        hold = int(rng.integers(_MANEUVER_FRAMES[0], _MANEUVER_FRAMES[1] + 1))
        maneuver[i:i + hold] = rng.uniform(-0.5, 0.5) * (k_hi - k_lo)
        i += hold
    steering = np.clip(road_curv + smooth + maneuver, k_lo, k_hi)

    # Lateral drift from the steering error, clipped to stay on the road.
    lateral = np.zeros(n)
    for i in range(1, n):
        step = _LATERAL_GAIN * (steering[i - 1] - road_curv[i - 1]) \
            * speed[i - 1] / config.base_rate
        lateral[i] = np.clip(lateral[i - 1] + step, -_MAX_LATERAL, _MAX_LATERAL)

    trace = ActionTrace(
        speed=speed.astype(np.float32), curvature=steering.astype(np.float32)
    )
    return trace, arc, road_params, lateral


def _curvature_at(arc_pos, params, config: WorldConfig):
    k_bias, k_amp, k_wavelen, k_phase = params
    k_lo, k_hi = config.road_curvature_range
    return np.clip(k_bias + k_amp * np.sin(2 * np.pi * arc_pos / k_wavelen + k_phase), k_lo, k_hi)


def _apply_tint(rgb: np.ndarray, weather: str, light: str, rng: np.random.Generator) -> np.ndarray:
    out = rgb
    if weather == "sun":
        out = out * np.array([1.05, 1.0, 0.92], dtype=np.float32) + 0.03
    elif weather == "rain":
        out = out * np.array([0.72, 0.76, 0.86], dtype=np.float32)
        out = out + rng.normal(0.0, 0.02, size=out.shape).astype(np.float32)
    elif weather == "fog":
        out = 0.55 * out + 0.45 * 0.75
    if light == "dusk":
        out = out * np.array([0.80, 0.70, 0.65], dtype=np.float32)
    elif light == "night":
        out = out * 0.42
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def generate_episode(config: WorldConfig, seed: int) -> Episode:
    """Render one episode; deterministic in (config, seed)."""
    rng = np_rng(config.seed, "episode", seed)
    H, W = config.frame_height, config.frame_width
    n = config.episode_length

    weather_idx = int(rng.integers(len(config.weather_set)))
    weather = config.weather_set[weather_idx]
    light_choice = int(rng.integers(len(config.light_set)))
    light = config.light_set[light_choice]
    light_idx = LIGHT_LEVELS.index(light)
    cell_lat = int(rng.integers(8))
    cell_lon = int(rng.integers(8))
    light_phase = float(rng.uniform(0, sum(d for d, _ in _LIGHT_CYCLE)))
    light_offset = float(rng.uniform(0, _LIGHT_SPACING))

    actions, ego_arc, curv_params, lateral_offset = _sample_actions(config, rng)

    agent_lane = rng.integers(0, 2, size=config.num_agents) * 2 - 1  # -1 left, +1 right
    agent_speed = rng.uniform(*config.speed_range, size=config.num_agents)
    agent_start = rng.uniform(5.0, _LIGHT_SPACING, size=config.num_agents)
    agent_color = _AGENT_PALETTE[rng.integers(0, len(_AGENT_PALETTE), size=config.num_agents)]

    noise_rng = np_rng(config.seed, "episode", seed, "noise")

    cols = np.arange(W, dtype=np.float32)
    view_max = (H - 1) * _MPP_LONG
    d_grid = np.arange(H, dtype=np.float32) * _MPP_LONG  # ascending distance ahead
    half_road_px = _ROAD_HALF_WIDTH / _MPP_LAT

    frames = np.empty((n, H, W, 3), dtype=np.float32)
    semantics = np.empty((n, H, W), dtype=np.uint8)

    for i in range(n):
        s_ego = ego_arc[i]
        t_sec = i / config.base_rate

        # Road center lateral offset by Euler integration of the heading,
        # shifted by the ego's in-lane drift (the whole scene moves opposite
        # to the ego's lateral position).
        kappa = _curvature_at(s_ego + d_grid, curv_params, config)
        heading = np.concatenate([[0.0], np.cumsum(kappa[:-1] * _MPP_LONG)])
        lateral = np.concatenate([[0.0], np.cumsum(np.sin(heading[:-1]) * _MPP_LONG)])
        center_col = W / 2 + (lateral - lateral_offset[i]) / _MPP_LAT

        rgb = np.empty((H, W, 3), dtype=np.float32)
        rgb[:] = (0.16, 0.34, 0.16)
        sem = np.full((H, W), CLASS_BACKGROUND, dtype=np.uint8)

        # Row r shows distance d_grid[H-1-r]; build masks on the distance grid
        # then flip to image rows.
        dist_center = center_col[:, None]  # (H, 1)
        lateral_px = cols[None, :] - dist_center
        road_mask = np.abs(lateral_px) <= half_road_px
        dash = ((s_ego + d_grid) % 4.0) < 2.0
        marking_mask = (np.abs(lateral_px) <= 0.5) & dash[:, None]

        def to_rows(mask):
            return mask[::-1]

        rgb[to_rows(road_mask)] = (0.30, 0.30, 0.33)
        sem[to_rows(road_mask)] = CLASS_ROAD
        rgb[to_rows(marking_mask)] = (0.92, 0.92, 0.85)
        sem[to_rows(marking_mask)] = CLASS_MARKING

        # Other agents, wrapped so traffic keeps flowing through the view.
        for a in range(config.num_agents):
            rel = (agent_start[a] + agent_speed[a] * t_sec - s_ego) % (view_max + 20.0)
            if rel > view_max:
                continue
            lane_px = agent_lane[a] * _LANE_OFFSET / _MPP_LAT
            long_mask = np.abs(d_grid - rel) <= _VEHICLE_HALF_LEN
            lat_mask = np.abs(lateral_px - lane_px) <= _VEHICLE_HALF_WID / _MPP_LAT
            v_mask = long_mask[:, None] & lat_mask
            rgb[to_rows(v_mask)] = agent_color[a]
            sem[to_rows(v_mask)] = CLASS_VEHICLE

        # Ego vehicle fixed at the bottom center of its own view.
        ego_long = d_grid <= 2 * _VEHICLE_HALF_LEN
        ego_lat = np.abs(cols[None, :] - W / 2) <= _VEHICLE_HALF_WID / _MPP_LAT
        ego_mask = ego_long[:, None] & ego_lat
        rgb[to_rows(ego_mask)] = (0.20, 0.40, 0.90)
        sem[to_rows(ego_mask)] = CLASS_VEHICLE

        # Traffic light block beside the road at the next light position.
        d_light = (light_offset - s_ego) % _LIGHT_SPACING
        if d_light <= view_max:
            state = _signal_state(t_sec, light_phase)
            side_px = (_ROAD_HALF_WIDTH + 1.5) / _MPP_LAT
            l_long = np.abs(d_grid - d_light) <= 1.5
            l_lat = np.abs(lateral_px - side_px) <= 1.0
            l_mask = l_long[:, None] & l_lat
            rgb[to_rows(l_mask)] = _SIGNAL_COLORS[state]
            sem[to_rows(l_mask)] = CLASS_TRAFFIC_LIGHT

        frames[i] = _apply_tint(rgb, weather, light, noise_rng)
        semantics[i] = sem

    metadata = {
        "weather": weather,
        "weather_idx": weather_idx,
        "light": light,
        "light_idx": light_idx,
        "signal": _signal_state(0.0, light_phase),
        "mean_speed": float(actions.speed.mean()),
        "mean_curvature": float(actions.curvature.mean()),
        "cell_lat": cell_lat,
        "cell_lon": cell_lon,
        "seed": int(seed),
    }
    metadata["signal_idx"] = SIGNAL_STATES.index(metadata["signal"])
    caption = caption_episode(metadata)

    return Episode(
        frames=FrameSequence(frames=frames, rate=config.base_rate),
        actions=actions,
        semantics=semantics,
        metadata=metadata,
        caption=caption,
    )


def subsample_temporal(seq: FrameSequence, factor: int) -> FrameSequence:
    """Keep frames at indices 0, factor, 2*factor, ...; rate divides by factor."""
    if factor < 1:
        raise ValueError("subsample factor must be >= 1")
    return FrameSequence(frames=seq.frames[::factor].copy(), rate=seq.rate / factor)

"""On-disk episode corpus.

Layout under a dataset root:

    manifest.json              format version, episode names, balance spec, world config
    episodes/<name>/frames.wst     (T, H, W, 3) uint8
    episodes/<name>/semantics.wst  (T, H, W) uint8 class ids
    episodes/<name>/meta.json      actions, caption, feature record, seed, rate

Frames are stored quantized to uint8 and loaded back as float32 in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION
from .balance import BalanceSpec
from .synthworld import ActionTrace, Episode, FrameSequence, WorldConfig
from .tensorio import read_tensor, write_tensor


def episode_name(seed: int) -> str:
    return f"ep_{seed:06d}"


def save_episode(root: str | Path, ep: Episode) -> Path:
    root = Path(root)
    ep_dir = root / "episodes" / episode_name(ep.metadata["seed"])
    ep_dir.mkdir(parents=True, exist_ok=True)
    frames_u8 = np.clip(np.rint(ep.frames.frames * 255.0), 0, 255).astype(np.uint8)
    write_tensor(ep_dir / "frames.wst", frames_u8)
    write_tensor(ep_dir / "semantics.wst", ep.semantics)
    meta = {
        "format_version": FORMAT_VERSION,
        "rate": ep.frames.rate,
        "caption": ep.caption,
        "features": ep.metadata,
        "actions": {
            "speed": [float(v) for v in ep.actions.speed],
            "curvature": [float(v) for v in ep.actions.curvature],
        },
    }
    with open(ep_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    return ep_dir


def load_episode(ep_dir: str | Path) -> Episode:
    ep_dir = Path(ep_dir)
    with open(ep_dir / "meta.json") as fh:
        meta = json.load(fh)
    frames = read_tensor(ep_dir / "frames.wst").astype(np.float32) / 255.0
    semantics = read_tensor(ep_dir / "semantics.wst")
    return Episode(
        frames=FrameSequence(frames=frames, rate=meta["rate"]),
        actions=ActionTrace(
            speed=np.array(meta["actions"]["speed"], dtype=np.float32),
            curvature=np.array(meta["actions"]["curvature"], dtype=np.float32),
        ),
        semantics=semantics,
        metadata=meta["features"],
        caption=meta["caption"],
    )


def write_manifest(root: str | Path, names: list[str], config: WorldConfig,
                   spec: BalanceSpec | None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "episodes": names,
        "world_config": asdict(config),
        "balance_spec": None if spec is None else {
            "features": [[name, list(edges)] for name, edges in spec.features],
            "exponent": spec.exponent,
        },
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def read_manifest(root: str | Path) -> dict:
    with open(Path(root) / "manifest.json") as fh:
        return json.load(fh)


def save_dataset(root: str | Path, episodes: list[Episode], config: WorldConfig,
                 spec: BalanceSpec | None = None) -> None:
    names = []
    for ep in episodes:
        save_episode(root, ep)
        names.append(episode_name(ep.metadata["seed"]))
    write_manifest(root, names, config, spec)


def load_dataset(root: str | Path) -> list[Episode]:
    root = Path(root)
    manifest = read_manifest(root)
    return [load_episode(root / "episodes" / name) for name in manifest["episodes"]]

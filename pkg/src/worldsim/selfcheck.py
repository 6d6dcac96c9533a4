"""Fast invariant battery for `worldsim selfcheck` (runs in seconds)."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
import torch


def run_selfcheck() -> list[tuple[str, bool, str]]:
    checks = [
        ("tensor file round trip", _check_tensorio),
        ("checkpoint round trip", _check_checkpoint),
        ("noise schedule identity", _check_schedule),
        ("v-parameterization round trip", _check_v_round_trip),
        ("ddim oracle consistency", _check_ddim),
        ("quantizer vs exhaustive search", _check_quantizer),
        ("top-k filter invariants", _check_top_k),
        ("guidance identity and cancellation", _check_cfg),
        ("balance endpoint identities", _check_balance),
        ("sequence and frame arithmetic", _check_arithmetic),
        ("caption determinism", _check_captions),
        ("sliding window plan", _check_window_plan),
        ("decode plan coverage", _check_decode_plan),
        ("episode determinism", _check_episode),
    ]
    results = []
    for name, fn in checks:
        try:
            fn()
            results.append((name, True, ""))
        except Exception as exc:  # noqa: BLE001 - report any failure
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results


def _check_tensorio():
    from .tensorio import read_tensor, write_tensor

    with tempfile.TemporaryDirectory() as tmp:
        arr = np.random.default_rng(0).random((3, 5, 2)).astype(np.float32)
        path = Path(tmp) / "t.wst"
        write_tensor(path, arr)
        assert np.array_equal(read_tensor(path), arr)


def _check_checkpoint():
    from .checkpoint import load_checkpoint, save_checkpoint

    with tempfile.TemporaryDirectory() as tmp:
        arrays = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
        path = Path(tmp) / "c.wsck"
        save_checkpoint(path, "test", {"config_hash": "x", "step": 1}, arrays)
        header, back = load_checkpoint(path, expected_kind="test")
        assert header["step"] == 1
        assert np.array_equal(back["w"], arrays["w"])


def _check_schedule():
    from .diffusion import cosine_schedule

    t = torch.linspace(0, 1, 1000)
    alpha, sigma = cosine_schedule(t)
    assert float((alpha ** 2 + sigma ** 2 - 1).abs().max()) <= 1e-6
    a0, s0 = cosine_schedule(0.0)
    assert float(a0) == 1.0 and float(s0) == 0.0


def _check_v_round_trip():
    from .diffusion import noise, recover_x0, v_target

    gen = torch.Generator().manual_seed(0)
    for _ in range(100):
        x0 = torch.randn(4, 4, generator=gen)
        eps = torch.randn(4, 4, generator=gen)
        t = float(torch.rand((), generator=gen))
        x_t = noise(x0, eps, t)
        assert float((recover_x0(x_t, v_target(x0, eps, t), t) - x0).abs().max()) <= 1e-5


def _check_ddim():
    from .diffusion import ddim_step, noise, v_target

    gen = torch.Generator().manual_seed(1)
    x0 = torch.randn(2, 8, generator=gen)
    eps = torch.randn(2, 8, generator=gen)
    for t_hi, t_lo in [(1.0, 0.5), (0.5, 0.1), (0.1, 0.0)]:
        stepped = ddim_step(noise(x0, eps, t_hi), v_target(x0, eps, t_hi), t_hi, t_lo)
        assert float((stepped - noise(x0, eps, t_lo)).abs().max()) <= 1e-5


def _check_quantizer():
    from .tokenizer import Codebook

    torch.manual_seed(2)
    cb = Codebook(in_dim=5, code_dim=4, vocab_size=16)
    feats = torch.randn(200, 5)
    tokens, proj, _ = cb.lookup(feats)
    entries = cb.normalized_entries().detach().numpy()
    proj_np = proj.detach().numpy()
    for i in range(200):
        dists = ((proj_np[i] - entries) ** 2).sum(axis=1)
        assert int(tokens[i]) == int(np.argmin(dists))


def _check_top_k():
    from .inference import top_k_filter

    gen = torch.Generator().manual_seed(3)
    for _ in range(20):
        logits = torch.randn(32, generator=gen)
        k = int(torch.randint(1, 33, (1,), generator=gen))
        probs = top_k_filter(logits, k)
        assert int((probs > 0).sum()) == k
        assert abs(float(probs.sum()) - 1.0) <= 1e-9


def _check_cfg():
    from .inference import cfg_logits

    gen = torch.Generator().manual_seed(4)
    cond = torch.randn(16, generator=gen)
    uncond = torch.randn(16, generator=gen)
    assert torch.equal(cfg_logits(cond, uncond, 0.0), cond)
    assert torch.allclose(cfg_logits(cond, cond, 1.7), cond, atol=1e-6)


def _check_balance():
    from .balance import compute_bin_weights

    assert np.allclose(compute_bin_weights([3, 1], 0.0), [1.0, 1.0])
    assert np.allclose(compute_bin_weights([9, 1], 1.0), [1 / 9, 1.0])
    assert np.allclose(compute_bin_weights([1, 1, 1, 1], 0.7), 1.0)


def _check_arithmetic():
    from .inference import frame_counts
    from .tokenizer import bit_compression, token_grid_shape
    from .world_model import sequence_length

    assert sequence_length(26, 32, 576, 2) == 15860
    assert token_grid_shape(288, 512, 16) == (18, 32)
    assert frame_counts(7) == (7, 13, 25)
    ratio = bit_compression(288, 512, 16, 8192)
    assert abs(ratio - (288 * 512 * 3 * 8) / (18 * 32 * 13)) < 1e-9


def _check_captions():
    from .synthworld import caption_episode

    meta = {"weather": "rain", "light": "night", "signal": "red"}
    assert caption_episode(meta) == "rainy night scene red light"
    assert caption_episode(meta) == caption_episode(meta)


def _check_window_plan():
    from .inference import window_plan

    plan = window_plan(6, 1, 10)
    assert sum(p["evictions"] for p in plan) == 5
    assert all(p["evictions"] == 0 for p in window_plan(6, 1, 5))


def _check_decode_plan():
    from .inference import decode_plan

    for n, w in [(7, 7), (8, 7), (17, 7), (8, 3)]:
        plan = decode_plan(n, w)
        targets = sorted(f for win in plan for f in win.targets)
        assert targets == list(range(n))


def _check_episode():
    from .synthworld import WorldConfig, generate_episode

    cfg = WorldConfig(episode_length=4)
    a = generate_episode(cfg, 1)
    b = generate_episode(cfg, 1)
    assert np.array_equal(a.frames.frames, b.frames.frames)
    assert a.caption == b.caption

import numpy as np
import pytest
import torch

from worldsim.decoder import DecoderConfig, VideoDenoiser
from worldsim.inference import (
    GuidanceSchedule,
    RolloutConfig,
    cfg_logits,
    decode_plan,
    decode_rollout,
    default_top_k,
    frame_counts,
    generate_frame,
    guidance_scale,
    rollout,
    top_k_filter,
    window_plan,
)
from worldsim.seeding import torch_gen
from worldsim.world_model import SequenceLayout, WorldModel, WorldModelConfig

TINY_WM = WorldModelConfig(
    layout=SequenceLayout(steps=4, text_slots=2, image_slots=4, action_slots=2, width=32),
    image_vocab=16,
    n_layers=2,
    n_heads=2,
    speed_stats=(0.0, 1.0),
    curvature_stats=(0.0, 1.0),
)


def _wm(seed=0):
    torch.manual_seed(seed)
    model = WorldModel(TINY_WM)
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        model.head.weight.copy_(torch.randn(model.head.weight.shape, generator=gen) * 0.3)
    model.eval()
    return model


# ----------------------------------------------------------------- top-k

def test_top_k_one_is_argmax():
    probs = top_k_filter(torch.tensor([1.0, 2.0, 3.0]), 1)
    assert probs.tolist() == [0.0, 0.0, 1.0]


def test_top_k_full_is_softmax():
    logits = torch.tensor([0.5, -1.0, 2.0])
    assert torch.allclose(top_k_filter(logits, 3), torch.softmax(logits.double(), dim=-1))


def test_top_k_tie_break_prefers_lower_ids():
    probs = top_k_filter(torch.tensor([0.0, 0.0, 0.0, float("-inf")]), 2)
    assert torch.allclose(probs, torch.tensor([0.5, 0.5, 0.0, 0.0]).double())


def test_top_k_support_and_normalization():
    gen = torch.Generator().manual_seed(0)
    for _ in range(20):
        logits = torch.randn(32, generator=gen)
        k = int(torch.randint(1, 33, (1,), generator=gen))
        probs = top_k_filter(logits, k)
        assert int((probs > 0).sum()) == k
        assert float(probs.sum()) == pytest.approx(1.0, abs=1e-9)


def test_top_k_counts_only_finite_support():
    logits = torch.tensor([1.0, float("-inf"), float("-inf"), 0.0])
    probs = top_k_filter(logits, 3)
    assert int((probs > 0).sum()) == 2


def test_top_k_range_validation():
    with pytest.raises(ValueError):
        top_k_filter(torch.zeros(4), 0)
    with pytest.raises(ValueError):
        top_k_filter(torch.zeros(4), 5)


def test_default_top_k_matches_reference_scale():
    assert default_top_k(8192) == 50
    assert default_top_k(64) == 1


# ----------------------------------------------------------------- CFG

def test_cfg_identity_at_zero_scale():
    gen = torch.Generator().manual_seed(1)
    cond = torch.randn(16, generator=gen)
    uncond = torch.randn(16, generator=gen)
    out = cfg_logits(cond, uncond, 0.0)
    assert torch.equal(out, cond)


def test_cfg_substitution_example():
    out = cfg_logits(torch.tensor([2.0]), torch.tensor([1.0]), 1.0)
    assert float(out) == pytest.approx(3.0)


def test_cfg_cancels_when_branches_agree():
    x = torch.randn(8)
    for scale in (0.0, 0.7, 2.5):
        assert torch.allclose(cfg_logits(x, x.clone(), scale), x, atol=1e-6)


def test_cfg_shape_mismatch():
    with pytest.raises(ValueError):
        cfg_logits(torch.zeros(3), torch.zeros(4), 1.0)


# ----------------------------------------------------------------- guidance schedule

def test_guidance_endpoints():
    sched = GuidanceSchedule(scale_start=2.0, scale_end=0.5, frame_floor=0.25, horizon=6)
    n = 9
    assert guidance_scale(0, 0, sched, n) == pytest.approx(2.0)
    assert sched.token_profile(n - 1, n) == pytest.approx(0.5)
    assert sched.frame_profile(5) == pytest.approx(0.25)


def test_guidance_flat_degenerate():
    sched = GuidanceSchedule(scale_start=1.5, scale_end=1.5, frame_floor=1.0, horizon=10)
    for i in (0, 3, 8):
        for f in (0, 4, 9):
            assert guidance_scale(i, f, sched, 9) == pytest.approx(1.5)


def test_guidance_token_midpoint():
    sched = GuidanceSchedule(scale_start=2.0, scale_end=0.0, frame_floor=1.0, horizon=1)
    assert sched.token_profile(4, 9) == pytest.approx(1.0)  # midpoint of odd n


def test_guidance_plateau():
    sched = GuidanceSchedule(scale_start=1.0, scale_end=1.0, frame_floor=0.0,
                             plateau_frames=3, horizon=10)
    assert sched.frame_profile(0) == 1.0
    assert sched.frame_profile(3) == 1.0
    assert sched.frame_profile(5) < 1.0
    assert sched.frame_profile(9) == 0.0


# ----------------------------------------------------------------- window plan

def test_window_plan_no_eviction_when_it_fits():
    plan = window_plan(6, 1, 5)
    assert all(p["evictions"] == 0 for p in plan)


def test_window_plan_eviction_schedule():
    plan = window_plan(6, 1, 10)
    evictions = [p["evictions"] for p in plan]
    assert sum(evictions) == 5
    assert evictions[:5] == [0, 0, 0, 0, 0]
    assert evictions[5] == 1  # first eviction at the step that would overflow


def test_window_plan_validation():
    with pytest.raises(ValueError):
        window_plan(0, 0, 5)


# ----------------------------------------------------------------- generation

def test_generate_frame_deterministic():
    model = _wm()
    a, pa = generate_frame(model, [], 0, k=4, generator=torch_gen(5, "g"))
    b, pb = generate_frame(model, [], 0, k=4, generator=torch_gen(5, "g"))
    assert torch.equal(a, b)
    assert np.array_equal(pa, pb)


def test_generate_frame_greedy_perplexity_is_one():
    model = _wm()
    tokens, perplexity = generate_frame(model, [], 0, k=1, generator=torch_gen(6, "g"))
    assert np.allclose(perplexity, 1.0)


def test_generate_frame_greedy_ignores_seed():
    model = _wm()
    a, _ = generate_frame(model, [], 0, k=1, generator=torch_gen(6, "g"))
    b, _ = generate_frame(model, [], 0, k=1, generator=torch_gen(1234, "other"))
    assert torch.equal(a, b)


def test_generate_frame_perplexity_at_least_one():
    model = _wm()
    _, perplexity = generate_frame(model, [], 0, k=16, generator=torch_gen(7, "g"))
    assert np.all(perplexity >= 1.0 - 1e-9)


def test_rollout_token_frames_and_determinism():
    model = _wm()
    config = RolloutConfig(horizon=6, k=4, seed=9)
    out1 = rollout(model, config)
    out2 = rollout(model, config)
    assert len(out1["token_frames"]) == 6
    for a, b in zip(out1["token_frames"], out2["token_frames"]):
        assert np.array_equal(a, b)
    # window spans 4 steps; 6 generated frames from empty context evict twice
    assert sum(p["evictions"] for p in out1["window_plan"]) == 2


def test_rollout_with_prompt_and_guidance_runs():
    model = _wm()
    config = RolloutConfig(
        horizon=2, k=4, seed=1,
        positive_prompt="sunny day scene green light",
        negative_prompt="rainy night scene red light",
        guidance=GuidanceSchedule(horizon=2),
    )
    out = rollout(model, config)
    assert len(out["token_frames"]) == 2


def test_rollout_respects_context_and_actions():
    model = _wm()
    ctx = np.zeros((2, 2, 2), dtype=np.int64)
    actions = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=np.float32)
    config = RolloutConfig(
        horizon=3, k=4, seed=2,
        context_tokens=ctx, context_actions=actions,
        action_override=np.tile([2.0, 0.5], (3, 1)),
    )
    out = rollout(model, config)
    assert len(out["token_frames"]) == 3


def test_rollout_validation():
    model = _wm()
    with pytest.raises(ValueError):
        rollout(model, RolloutConfig(horizon=0))
    with pytest.raises(ValueError):
        rollout(model, RolloutConfig(horizon=1, k=99))


# ----------------------------------------------------------------- decode plan

def test_frame_counts_examples():
    assert frame_counts(7) == (7, 13, 25)
    assert frame_counts(2) == (2, 3, 5)
    assert frame_counts(26) == (26, 51, 101)
    with pytest.raises(ValueError):
        frame_counts(1)


def test_decode_plan_single_window():
    plan = decode_plan(7, 7)
    assert len(plan) == 1
    assert plan[0].targets == list(range(7))


def test_decode_plan_window_counts():
    assert len(decode_plan(17, 7)) == 3   # 1 + ceil(10 / 5)
    assert len(decode_plan(8, 7)) == 2


def test_decode_plan_boundary_window():
    plan = decode_plan(8, 7)
    second = plan[1]
    assert second.targets == [0]
    assert second.context == [1, 2]


def test_decode_plan_covers_each_frame_once():
    for n, w in [(8, 3), (12, 3), (17, 7), (7, 7), (9, 4)]:
        for direction in ("backward", "forward"):
            plan = decode_plan(n, w, direction)
            targets = [f for win in plan for f in win.targets]
            assert sorted(targets) == list(range(n))
            decoded = set()
            order = plan
            for win in order:
                for c in win.context:
                    assert c in decoded
                decoded.update(win.targets)


def test_decode_plan_validation():
    with pytest.raises(ValueError):
        decode_plan(2, 3)
    with pytest.raises(ValueError):
        decode_plan(10, 2)
    with pytest.raises(ValueError):
        decode_plan(10, 3, "sideways")


# ----------------------------------------------------------------- decode rollout

@pytest.fixture(scope="module")
def tiny_decoder():
    torch.manual_seed(3)
    return VideoDenoiser(DecoderConfig(frames=3, height=16, width=32,
                                       base_channels=16, token_channels=8, ddim_steps=2))


def test_decode_rollout_counts_and_determinism(tiny_decoder):
    tokens = np.random.default_rng(0).integers(0, 64, size=(4, 4, 8))
    video1, report1 = decode_rollout(tokens, tiny_decoder, seed=10, steps=2)
    video2, _ = decode_rollout(tokens, tiny_decoder, seed=10, steps=2)
    assert len(video1) == 4 * 4 - 3
    assert video1.rate == pytest.approx(25.0)
    assert np.array_equal(video1.frames, video2.frames)


def test_decode_rollout_interpolation_never_sees_tokens(tiny_decoder):
    tokens = np.random.default_rng(1).integers(0, 64, size=(3, 4, 8))
    _, report = decode_rollout(tokens, tiny_decoder, seed=11, steps=2)
    stages = [s for s in report["stages"] if s["task"] == "interpolation"]
    assert len(stages) == 2
    assert all(not s["tokens_provided"] for s in stages)


def test_decode_rollout_backward_by_default(tiny_decoder):
    tokens = np.random.default_rng(2).integers(0, 64, size=(5, 4, 8))
    _, report = decode_rollout(tokens, tiny_decoder, seed=12, steps=2)
    modes = [w["mode"] for w in report["windows"]]
    assert modes[0] == "video_generation"
    assert all(m == "autoregressive_backward" for m in modes[1:])

"""Continuous-time diffusion primitives.

Cosine noise schedule on t in [0, 1] with alpha^2 + sigma^2 = 1, the
v-parameterization (v = alpha*eps - sigma*x0), and the deterministic DDIM
update expressed directly in terms of a predicted v.
"""

from __future__ import annotations

import math

import torch

_COSINE_OFFSET = 0.008
_ALPHA_BAR_FLOOR = 1e-12


def _raw_alpha_bar(t: torch.Tensor) -> torch.Tensor:
    s = _COSINE_OFFSET
    return torch.cos((t + s) / (1 + s) * math.pi / 2) ** 2


def cosine_alpha_bar(t: torch.Tensor | float) -> torch.Tensor:
    """Squared signal level of the cosine schedule, clipped to (0, 1].

    Normalized by the t=0 value computed with the identical expression so
    the endpoint is exactly (alpha, sigma) = (1, 0) in floating point.
    """
    t = torch.as_tensor(t, dtype=torch.float64)
    if torch.any(t < 0) or torch.any(t > 1):
        raise ValueError("diffusion time must lie in [0, 1]")
    num = _raw_alpha_bar(t)
    den = _raw_alpha_bar(torch.zeros((), dtype=torch.float64))
    return (num / den).clamp(_ALPHA_BAR_FLOOR, 1.0)


def cosine_schedule(t: torch.Tensor | float) -> tuple[torch.Tensor, torch.Tensor]:
    """(alpha, sigma) at diffusion time t; alpha decreasing, sigma increasing."""
    a_bar = cosine_alpha_bar(t)
    return torch.sqrt(a_bar).float(), torch.sqrt(1.0 - a_bar).float()


def noise(x0: torch.Tensor, eps: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
    """Forward-noised state alpha*x0 + sigma*eps."""
    alpha, sigma = cosine_schedule(t)
    return alpha * x0 + sigma * eps


def v_target(x0: torch.Tensor, eps: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
    """Training target v = alpha*eps - sigma*x0."""
    alpha, sigma = cosine_schedule(t)
    return alpha * eps - sigma * x0


def recover_x0(x_t: torch.Tensor, v: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
    """Invert the (noise, v_target) pair: x0 = alpha*x_t - sigma*v."""
    alpha, sigma = cosine_schedule(t)
    return alpha * x_t - sigma * v


def predicted_eps(x_t: torch.Tensor, v: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
    """Noise implied by a v prediction: eps = sigma*x_t + alpha*v."""
    alpha, sigma = cosine_schedule(t)
    return sigma * x_t + alpha * v


def ddim_step(
    x_t: torch.Tensor,
    v_hat: torch.Tensor,
    t: float,
    t_next: float,
) -> torch.Tensor:
    """Deterministic (eta=0) DDIM update from time t to t_next <= t."""
    if t_next > t:
        raise ValueError(f"t_next ({t_next}) must not exceed t ({t})")
    x0_hat = recover_x0(x_t, v_hat, t)
    eps_hat = predicted_eps(x_t, v_hat, t)
    alpha_n, sigma_n = cosine_schedule(t_next)
    return alpha_n * x0_hat + sigma_n * eps_hat


def ddim_times(steps: int) -> list[float]:
    """Uniform decreasing diffusion times 1 -> 0 for a DDIM chain."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return [1.0 - i / steps for i in range(steps + 1)]

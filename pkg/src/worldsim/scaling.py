"""Scaling-study driver and power-law fitting.

Trains a family of world-model sizes on a fixed dataset, accounts compute
as 6N FLOPs per trained token, EMA-smooths loss curves, fits
f(x) = c + (x/a)^b to (compute, final validation loss) points by nonlinear
least squares in log-compute space with multi-start initialization, and
extrapolates the largest model's loss.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

EXTRAPOLATION_FACTOR = 20.0


def compute_per_token(n_params: int | float) -> float:
    """FLOPs for one forward-backward pass of a single token: 6N."""
    if n_params <= 0:
        raise ValueError("parameter count must be positive")
    return 6.0 * n_params


def ema_smooth(series, decay: float) -> np.ndarray:
    """Exponential smoothing y_i = decay*y_{i-1} + (1-decay)*x_i with y_0 = x_0."""
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    arr = np.asarray(series, dtype=float)
    if arr.size == 0:
        raise ValueError("series must be non-empty")
    out = np.empty_like(arr)
    out[0] = arr[0]
    for i in range(1, arr.size):
        out[i] = decay * out[i - 1] + (1 - decay) * arr[i]
    return out


@dataclass
class PowerLawFit:
    """Fitted f(x) = c + (x/a)^b with its residual and fitted range."""

    a: float
    b: float
    c: float
    residual: float            # RMSE in the fitted units (nats)
    max_compute: float = 0.0   # largest compute seen during fitting

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("scale parameter a must be positive")
        if self.c < 0:
            raise ValueError("offset c must be non-negative")

    def is_extrapolation(self, compute: float) -> bool:
        return self.max_compute > 0 and compute > EXTRAPOLATION_FACTOR * self.max_compute

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c,
                "residual": self.residual, "max_compute": self.max_compute}

    @classmethod
    def from_dict(cls, d: dict) -> "PowerLawFit":
        return cls(a=d["a"], b=d["b"], c=d["c"], residual=d["residual"],
                   max_compute=d.get("max_compute", 0.0))


def predict_loss(fit: PowerLawFit, compute: float) -> float:
    """Evaluate the law; warns when compute is beyond the extrapolation range."""
    if compute <= 0:
        raise ValueError("compute must be positive")
    if fit.is_extrapolation(compute):
        warnings.warn(
            f"predicting at {compute:.3g} FLOPs, more than {EXTRAPOLATION_FACTOR:.0f}x "
            f"the fitted range ({fit.max_compute:.3g})",
            stacklevel=2,
        )
    return fit.c + (compute / fit.a) ** fit.b


def _model(params: np.ndarray, log_x: np.ndarray) -> np.ndarray:
    c, b, log_a = params
    return c + np.exp(b * (log_x - log_a))


def fit_power_law(points, n_starts: int = 8, seed: int = 0) -> PowerLawFit:
    """Least-squares fit of c + (x/a)^b to (compute, loss) points.

    Runs `n_starts` seeded initializations (c anchored near the minimum
    loss, b from the endpoint slope) and keeps the best-residual solution.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (compute, loss) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x <= 0):
        raise ValueError("compute values must be positive")
    span = math.log10(x.max() / x.min())
    if span < 2.0:
        warnings.warn(
            f"compute spans only {span:.2f} decades; the fit may be poorly "
            "constrained (2+ recommended)",
            stacklevel=2,
        )
    order = np.argsort(x)
    x, y = x[order], y[order]
    log_x = np.log(x)

    def residuals(params):
        return _model(params, log_x) - y

    y_min, y_max = float(y.min()), float(y.max())
    spread = max(y_max - y_min, 1e-9)
    rng = np.random.default_rng(seed)

    starts = []
    for frac in (0.9, 0.5, 0.0, 0.99):
        c0 = max(y_min * frac, 0.0)
        top = max(y[0] - c0, 1e-9)
        bot = max(y[-1] - c0, 1e-9)
        b0 = (math.log(bot) - math.log(top)) / (log_x[-1] - log_x[0])
        if abs(b0) < 1e-12:
            b0 = -0.1
        log_a0 = log_x[0] - math.log(top) / b0
        starts.append((c0, b0, log_a0))
    while len(starts) < n_starts:
        base = starts[len(starts) % 4]
        jitter = rng.normal(scale=(0.1 * y_min + 1e-6, 0.3, 2.0))
        starts.append((max(base[0] + jitter[0], 0.0), base[1] + jitter[1],
                       base[2] + jitter[2]))

    best = None
    for start in starts[:n_starts]:
        try:
            sol = least_squares(
                residuals, x0=np.asarray(start),
                bounds=([0.0, -np.inf, -np.inf], [np.inf, np.inf, np.inf]),
                max_nfev=2000,
            )
        except Exception:
            continue
        rmse = float(np.sqrt(np.mean(sol.fun ** 2)))
        if best is None or rmse < best[0]:
            best = (rmse, sol.x)
    if best is None:
        raise RuntimeError("all fit starts failed")

    rmse, (c, b, log_a) = best
    return PowerLawFit(a=float(np.exp(log_a)), b=float(b), c=float(c),
                       residual=rmse, max_compute=float(x.max()))


# ------------------------------------------------------------------ study


@dataclass
class RunRecord:
    """One trained size in the scaling family."""

    tag: str
    width: int
    layers: int
    params_ex_embedding: int
    tokens_seen: int
    compute: float
    final_loss: float
    curve: list = field(default_factory=list)  # (step, validation loss) pairs
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "tag": self.tag, "width": self.width, "layers": self.layers,
            "params_ex_embedding": self.params_ex_embedding,
            "tokens_seen": self.tokens_seen, "compute": self.compute,
            "final_loss": self.final_loss, "curve": self.curve, "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**{k: d[k] for k in (
            "tag", "width", "layers", "params_ex_embedding", "tokens_seen",
            "compute", "final_loss", "curve", "failed",
        )})


DESK_SIZE_FAMILY = ((32, 2), (48, 2), (64, 3), (96, 3), (128, 4))


def run_scaling_study(
    train_tokenized,
    val_tokenized,
    layout_base,
    image_vocab: int,
    sizes=DESK_SIZE_FAMILY,
    steps: int = 400,
    batch_size: int = 8,
    seed: int = 0,
    speed_stats=(8.0, 3.5),
    curvature_stats=(0.0, 0.01),
    eval_every: int = 100,
    log=None,
) -> tuple[list[RunRecord], PowerLawFit | None, dict]:
    """Train every size on the same data/token budget and fit the law.

    The fit uses all non-failed sizes except the largest; the report compares
    the largest model's actual loss with the fit's prediction.
    """
    from dataclasses import replace

    from .training import train_world_model, validation_loss
    from .world_model import WorldModelConfig

    if len(sizes) < 2:
        raise ValueError("need at least 2 sizes")

    records: list[RunRecord] = []
    for width, layers in sizes:
        layout = replace(layout_base, width=width)
        cfg = WorldModelConfig(
            layout=layout, image_vocab=image_vocab, n_layers=layers,
            n_heads=max(2, width // 32),
            speed_stats=speed_stats, curvature_stats=curvature_stats,
        )
        tag = f"d{width}_l{layers}"
        curve = []

        def eval_hook(model, step, tag=tag, curve=curve):
            loss = validation_loss(model, val_tokenized, layout_base.steps, seed=seed)
            curve.append((step, loss))
            if log is not None:
                log.append(step=step, metric=f"scaling/{tag}/val_loss", value=loss)

        model, _ = train_world_model(
            train_tokenized, cfg, steps=steps, batch_size=batch_size,
            seed=seed, log=log, eval_hook=eval_hook, eval_every=eval_every,
            metric_prefix=f"scaling/{tag}",
        )
        final = validation_loss(model, val_tokenized, layout_base.steps, seed=seed)
        curve.append((steps, final))

        n_params = model.count_params_excluding_embeddings()
        tokens_seen = steps * batch_size * layout_base.steps * layout_base.image_slots
        record = RunRecord(
            tag=tag, width=width, layers=layers,
            params_ex_embedding=n_params, tokens_seen=tokens_seen,
            compute=compute_per_token(n_params) * tokens_seen,
            final_loss=final, curve=curve,
            failed=not math.isfinite(final),
        )
        if record.failed:
            warnings.warn(f"size {tag} diverged; excluding from the fit")
        records.append(record)

    usable = [r for r in records if not r.failed]
    usable.sort(key=lambda r: r.compute)
    fit = None
    report = {"sizes": [r.tag for r in records]}
    if len(usable) >= 5:
        held_out = usable[-1]
        fit_points = [(r.compute, r.final_loss) for r in usable[:-1]]
        fit = fit_power_law(fit_points, seed=seed)
        predicted = predict_loss(fit, held_out.compute)
        report.update({
            "held_out": held_out.tag,
            "predicted_loss": predicted,
            "actual_loss": held_out.final_loss,
            "relative_error": abs(predicted - held_out.final_loss)
                              / max(held_out.final_loss, 1e-9),
        })
    return records, fit, report


# ------------------------------------------------------------------ persistence


def save_records(path: str | Path, records: list[RunRecord]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict()) + "\n")


def load_records(path: str | Path) -> list[RunRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(RunRecord.from_dict(json.loads(line)))
    return records


def save_fit_report(path: str | Path, fit: PowerLawFit | None, report: dict) -> None:
    payload = {"fit": None if fit is None else fit.to_dict(), "report": report}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def plot_fit_svg(path: str | Path, points, fit: PowerLawFit,
                 width: int = 480, height: int = 320) -> None:
    """Minimal SVG scatter of (compute, loss) points with the fitted curve."""
    pts = np.asarray(points, dtype=float)
    x, y = np.log10(pts[:, 0]), pts[:, 1]
    xs = np.linspace(x.min(), x.max(), 100)
    ys = np.array([predict_loss(fit, 10 ** u) for u in xs])

    x_lo, x_hi = x.min(), x.max()
    y_lo = min(y.min(), ys.min())
    y_hi = max(y.max(), ys.max())
    pad = 0.05 * max(y_hi - y_lo, 1e-9)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    margin = 40

    def sx(u):
        return margin + (u - x_lo) / max(x_hi - x_lo, 1e-9) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    curve = " ".join(f"{sx(u):.1f},{sy(v):.1f}" for u, v in zip(xs, ys))
    dots = "".join(
        f'<circle cx="{sx(u):.1f}" cy="{sy(v):.1f}" r="4" fill="#c33"/>'
        for u, v in zip(x, y)
    )
    label = f"f(x) = {fit.c:.3f} + (x / {fit.a:.3g})^{fit.b:.3f}"
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<polyline points="{curve}" fill="none" stroke="#36c" stroke-width="2"/>'
        f"{dots}"
        f'<text x="{margin}" y="20" font-size="12" font-family="monospace">{label}</text>'
        f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="11" text-anchor="middle">'
        f"log10 compute (FLOPs)</text>"
        "</svg>"
    )
    Path(path).write_text(svg)

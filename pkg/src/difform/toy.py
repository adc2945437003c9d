"""Two-dimensional ill-conditioned quadratics: SGD versus Adam trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .optim import AdaptiveState, adam_step

ETA_SGD = 0.4
ETA_ADAM = 1.0
DIVERGENCE_BOUND = 1e12
KAPPAS = (1.0, 10.0, 100.0, 1000.0)


@dataclass(frozen=True)
class ToyProblem:
    kappa: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and self.kappa >= 1):
            raise ValidationError(f"kappa must be >= 1, got {self.kappa}")
        if not math.isfinite(self.theta):
            raise ValidationError("theta must be finite")

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, s], [-s, c]])


def toy_eval(p: ToyProblem, x: float, y: float):
    """f(x, y) = x_t^2 + kappa y_t^2 with (x_t, y_t) = R(theta) (x, y); returns (value, grad)."""
    R = p.rotation
    xt, yt = R @ np.array([x, y], dtype=np.float64)
    value = xt * xt + p.kappa * yt * yt
    grad = R.T @ np.array([2.0 * xt, 2.0 * p.kappa * yt])
    return float(value), grad


@dataclass
class ToyRun:
    trajectory: np.ndarray   # (iters + 1, 2), truncated at divergence
    distance: float          # inf if diverged
    diverged: bool

    def to_csv(self) -> str:
        lines = ["iter,x,y"]
        lines += [f"{i},{x!r},{y!r}" for i, (x, y) in enumerate(self.trajectory)]
        return "\n".join(lines) + "\n"


def run_toy(p: ToyProblem, optimizer: str = "adam", iters: int = 1000, start=(5.0, 5.0), eta: float | None = None,
            betas=(0.9, 0.999), eps=1e-8) -> ToyRun:
    """Plain gradient descent or Adam from ``start`` for ``iters`` steps.

    A run whose iterate leaves the ball of radius 1e12 is stopped and
    reported as diverged with infinite distance.
    """
    if optimizer not in ("sgd", "adam"):
        raise ValidationError(f"optimizer must be 'sgd' or 'adam', got {optimizer!r}")
    if eta is None:
        eta = ETA_SGD if optimizer == "sgd" else ETA_ADAM
    if not (math.isfinite(eta) and eta > 0):
        raise ValidationError("eta must be positive")
    pos = np.array(start, dtype=np.float64)
    traj = [pos.copy()]
    state = AdaptiveState.zeros(2, beta1=betas[0], beta2=betas[1], eps=eps)
    for _ in range(int(iters)):
        _, g = toy_eval(p, *pos)
        if optimizer == "sgd":
            pos = pos - eta * g
        else:
            pos = pos + eta * adam_step(state, -g)
        if not np.all(np.isfinite(pos)) or np.max(np.abs(pos)) > DIVERGENCE_BOUND:
            return ToyRun(np.array(traj), math.inf, True)
        traj.append(pos.copy())
    return ToyRun(np.array(traj), float(np.hypot(*pos)), False)


def loss_image(p: ToyProblem, extent: float = 6.0, size: int = 128) -> np.ndarray:
    """log(1 + f) on a size x size grid over [-extent, extent]^2; rows are y (top = +y)."""
    xs = np.linspace(-extent, extent, size)
    X, Y = np.meshgrid(xs, xs[::-1])
    R = p.rotation
    xt = R[0, 0] * X + R[0, 1] * Y
    yt = R[1, 0] * X + R[1, 1] * Y
    return np.log1p(xt * xt + p.kappa * yt * yt)


def render_figure(p: ToyProblem, run: ToyRun, extent: float = 6.0, size: int = 128, levels: int = 12) -> np.ndarray:
    """8-bit raster: banded log-loss contours with the trajectory drawn in white."""
    L = loss_image(p, extent, size)
    q = (L - L.min()) / max(L.max() - L.min(), 1e-12)
    img = (40 + 140 * q).astype(np.uint8)
    band = np.floor(q * levels)
    edge = np.zeros_like(img, dtype=bool)
    edge[:, 1:] |= band[:, 1:] != band[:, :-1]
    edge[1:, :] |= band[1:, :] != band[:-1, :]
    img[edge] = 0
    for x, y in run.trajectory:
        if abs(x) <= extent and abs(y) <= extent:
            c = int(round((x + extent) / (2 * extent) * (size - 1)))
            r = int(round((extent - y) / (2 * extent) * (size - 1)))
            img[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = 255
    return img

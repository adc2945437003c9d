"""Multi-scale registration driver, run logging and hyperparameter sweeps."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .affine import AffineTransform, affine_to_field
from .diffeo import DEFAULT_STEP_CAP, apply_update, cap_step, eulerian_direction, exp_map, svf_pullback
from .errors import NumericalError, ValidationError
from .grid import DisplacementField, GridMeta, LabelImage, ScalarImage, VelocityField, downsample_image
from .interp import gaussian_smooth, jacobian_det, resample_field, upsample_field, warp_labels
from .optim import AdaptiveState, adam_step, upsample_state
from .similarity import get_loss

SCHEMA_VERSION = 1


@dataclass
class PyramidSchedule:
    scales: tuple = (4, 2, 1)
    iterations: tuple = (50, 50, 50)

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        self.iterations = tuple(int(t) for t in self.iterations)
        if not self.scales or len(self.scales) != len(self.iterations):
            raise ValidationError("scales and iterations must be non-empty and of equal length")
        if any(s < 1 for s in self.scales):
            raise ValidationError("scales must be >= 1")
        if any(a <= b for a, b in zip(self.scales, self.scales[1:])):
            raise ValidationError(f"scales must be strictly decreasing, got {self.scales}")
        if any(t < 0 for t in self.iterations):
            raise ValidationError("iteration counts must be non-negative")


@dataclass
class RegistrationConfig:
    loss: str = "ssd"
    window_radius: int = 2
    eta: float = 0.5
    sigma_grad: float = 1.0
    sigma_warp: float = 0.5
    use_jac: bool = False
    mode: str = "direct"
    svf_steps: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    step_cap: float = DEFAULT_STEP_CAP
    conv_window: int = 10
    conv_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.loss not in ("ssd", "lncc", "dice"):
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.mode not in ("direct", "svf"):
            raise ValidationError(f"mode must be 'direct' or 'svf', got {self.mode!r}")
        if self.mode == "svf" and self.loss == "dice":
            raise ValidationError("svf mode supports ssd and lncc only")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValidationError(f"eta must be a positive finite number, got {self.eta}")
        for name in ("sigma_grad", "sigma_warp"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be >= 0, got {v}")
        if self.window_radius < 1:
            raise ValidationError("window_radius must be >= 1")
        if self.svf_steps < 0:
            raise ValidationError("svf_steps must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValidationError("invalid Adam hyperparameters")
        if self.step_cap is not None and self.step_cap < 0:
            raise ValidationError("step_cap must be >= 0 (0 disables the cap)")
        if self.conv_window < 1 or self.conv_tol < 0:
            raise ValidationError("invalid convergence monitor settings")

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **dataclasses.asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RegistrationConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names - {"schema_version", "scales", "iterations"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class LogRecord:
    scale: float
    iteration: int
    loss: float
    max_step: float
    wall_time: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def append(self, rec: LogRecord):
        self.records.append(rec)

    def losses(self, scale=None):
        return [r.loss for r in self.records if scale is None or r.scale == scale]

    def to_csv(self, timing: bool = True) -> str:
        """Per-iteration table; ``timing=False`` drops the wall-clock column so replays compare bit-exactly."""
        lines = ["scale,iteration,loss,max_step" + (",wall_time" if timing else "")]
        for r in self.records:
            row = f"{r.scale!r},{r.iteration},{r.loss!r},{r.max_step!r}"
            lines.append(row + (f",{r.wall_time:.6f}" if timing else ""))
        return "\n".join(lines) + "\n"


def _converged(losses, window, tol) -> bool:
    # tol = 0 disables early stopping
    if tol <= 0 or len(losses) <= window:
        return False
    old, new = losses[-window - 1], losses[-1]
    rel = (old - new) / (window * max(abs(old), 1e-12))
    return rel < tol


def _scale_meta(meta: GridMeta, s: float) -> GridMeta:
    if s == 1:
        return meta
    return meta.with_dims(tuple(int(math.ceil(n / s)) for n in meta.dims))


def _initial_field(init, meta: GridMeta, full_meta: GridMeta) -> DisplacementField:
    if init is None:
        return DisplacementField(meta, np.zeros((meta.ndim,) + meta.dims))
    if isinstance(init, AffineTransform):
        init = affine_to_field(init, full_meta)
    if not isinstance(init, DisplacementField):
        raise ValidationError("init must be an AffineTransform or DisplacementField")
    if init.meta.dims not in (meta.dims, full_meta.dims):
        raise ValidationError(f"init field grid {init.meta.dims} matches neither {meta.dims} nor {full_meta.dims}")
    return resample_field(DisplacementField(init.meta, init.data), meta)


def register(fixed: ScalarImage, moving: ScalarImage, cfg: RegistrationConfig | None = None,
             sched: PyramidSchedule | None = None, init=None):
    """Coarse-to-fine diffeomorphic registration of ``moving`` onto ``fixed``.

    Returns the full-resolution displacement field phi (so that
    ``warp_image(moving, phi)`` approximates ``fixed``) and a :class:`RunLog`.
    """
    cfg = cfg or RegistrationConfig()
    sched = sched or PyramidSchedule()
    cfg.validate()
    if fixed.meta.dims != moving.meta.dims:
        raise ValidationError(f"fixed {fixed.meta.dims} and moving {moving.meta.dims} must share a grid")
    full = fixed.meta
    for s in sched.scales:
        if any(math.ceil(n / s) < 2 for n in full.dims):
            raise ValidationError(f"scale {s} leaves fewer than 2 samples on grid {full.dims}")
    loss_fn = get_loss(cfg.loss, cfg.window_radius)
    log = RunLog()
    t0 = time.perf_counter()

    phi = None
    state = None
    for level, (s, T_k) in enumerate(zip(sched.scales, sched.iterations)):
        F = downsample_image(fixed, s)
        M = downsample_image(moving, s)
        meta = F.meta
        d = meta.ndim
        if phi is None:
            phi = _initial_field(init, meta, full)
            if cfg.mode == "svf":
                # initial displacement is used as the starting velocity
                phi = VelocityField(meta, phi.data)
            state = AdaptiveState.zeros(phi.data.shape, meta, cfg.beta1, cfg.beta2, cfg.adam_eps)
        else:
            phi = upsample_field(phi, meta, "linear")
            state = upsample_state(state, meta)

        losses = []
        for i in range(T_k):
            if cfg.mode == "direct":
                ev = loss_fn(F, M, phi)
                grad = ev.grad
            else:
                disp = exp_map(phi, cfg.svf_steps)
                ev = loss_fn(F, M, disp)
                grad = svf_pullback(phi, ev.grad, cfg.svf_steps)
            if not math.isfinite(ev.value) or not np.all(np.isfinite(grad)):
                log.final = {"status": "diverged", "scale": s, "iteration": i}
                raise NumericalError(f"non-finite loss at scale {s}, iteration {i}", log)
            losses.append(ev.value)
            if cfg.sigma_grad > 0:
                grad = gaussian_smooth(grad, (cfg.sigma_grad,) * d)
            if cfg.mode == "direct":
                v = eulerian_direction(grad, phi, cfg.use_jac)
            else:
                v = -grad
            direction = adam_step(state, v)
            if cfg.mode == "direct":
                new_phi = apply_update(phi, direction, cfg.eta, cfg.sigma_warp, cfg.step_cap)
            else:
                step = cap_step(cfg.eta * direction, cfg.step_cap)
                vel = phi.data + step
                if cfg.sigma_warp > 0:
                    vel = gaussian_smooth(vel, (cfg.sigma_warp,) * d)
                new_phi = VelocityField(meta, vel)
            max_step = float(np.sqrt(np.max(np.sum((new_phi.data - phi.data) ** 2, axis=0))))
            phi = new_phi
            log.append(LogRecord(s, i, ev.value, max_step, time.perf_counter() - t0))
            if _converged(losses, cfg.conv_window, cfg.conv_tol):
                break

    if phi.meta.dims != full.dims:
        phi = upsample_field(phi, full, "linear")
    if cfg.mode == "svf":
        phi = exp_map(VelocityField(full, phi.data), cfg.svf_steps)
    phi = DisplacementField(full, phi.data)

    final_loss = loss_fn(fixed, moving, phi).value
    detj = jacobian_det(phi).data
    log.final = {
        "status": "ok",
        "final_loss": final_loss,
        "singularity_fraction": float(np.mean(detj <= 0)),
        "min_jacobian_det": float(detj.min()),
        "iterations": len(log.records),
        "wall_time": time.perf_counter() - t0,
    }
    if cfg.mode == "direct" and cfg.step_cap == DEFAULT_STEP_CAP and log.final["singularity_fraction"] > 0:
        log.final["status"] = "folded"
        raise NumericalError("direct-mode registration produced a non-invertible field", log)
    return phi, log


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepPair:
    fixed: ScalarImage
    moving: ScalarImage
    fixed_labels: LabelImage | None = None
    moving_labels: LabelImage | None = None


def config_seed(base_seed: int, index: int) -> int:
    h = hashlib.sha256(f"{base_seed}:{index}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def _pair_metric(pair: SweepPair, phi, log, metric):
    if metric == "loss":
        return log.final["final_loss"]
    from .analysis import overlap_report

    if pair.fixed_labels is None or pair.moving_labels is None:
        raise ValidationError("overlap metric needs label images for every pair")
    warped = warp_labels(pair.moving_labels, phi)
    return float(overlap_report(warped, pair.fixed_labels).TO)


def _run_config(args):
    index, params, pairs, base, sched, metric = args
    t0 = time.perf_counter()
    row = {"index": index, **params, "metric_mean": float("nan"), "metric_sd": float("nan"),
           "wall_time": 0.0, "status": "ok", "error": ""}
    try:
        cfg = RegistrationConfig(**{**base, **params, "seed": config_seed(base.get("seed", 0), index)})
        values = []
        for pair in pairs:
            phi, log = register(pair.fixed, pair.moving, cfg, sched)
            values.append(_pair_metric(pair, phi, log, metric))
        row["metric_mean"] = float(np.mean(values))
        row["metric_sd"] = float(np.std(values))
    except Exception as exc:  # recorded per row; the sweep goes on
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["wall_time"] = time.perf_counter() - t0
    return row


def sweep(pairs, grid: dict, metric: str = "loss", workers: int = 1, base_config: dict | None = None,
          sched: PyramidSchedule | None = None) -> list[dict]:
    """Run :func:`register` over the product grid of ``eta`` x ``sigma_warp`` x ``sigma_grad``.

    ``grid`` maps each of those names to a list of values. Returns one row per
    configuration, in grid order, regardless of ``workers``.
    """
    if metric not in ("loss", "overlap"):
        raise ValidationError(f"metric must be 'loss' or 'overlap', got {metric!r}")
    keys = ("eta", "sigma_warp", "sigma_grad")
    base = dict(base_config or {})
    base.pop("schema_version", None)
    values = [list(grid.get(k, [base.get(k, getattr(RegistrationConfig, k))])) for k in keys]
    if any(len(v) == 0 for v in values):
        raise ValidationError("sweep grid must be non-empty along every axis")
    if not pairs:
        raise ValidationError("sweep needs at least one image pair")
    sched = sched or PyramidSchedule()
    jobs = [(i, dict(zip(keys, combo)), pairs, base, sched, metric) for i, combo in enumerate(product(*values))]
    if workers <= 1:
        return [_run_config(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_config, jobs))


SWEEP_COLUMNS = ("index", "eta", "sigma_warp", "sigma_grad", "metric_mean", "metric_sd", "wall_time", "status", "error")


def sweep_to_csv(rows, timing: bool = True) -> str:
    """One row per configuration; ``timing=False`` drops the wall-clock column."""
    import csv
    import io

    cols = [c for c in SWEEP_COLUMNS if timing or c != "wall_time"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([f"{r[c]:.6f}" if c == "wall_time" else repr(r[c]) if isinstance(r[c], float) else r[c]
                    for c in cols])
    return buf.getvalue()


def sweep_heatmaps(rows):
    """Metric grids over (sigma_warp, sigma_grad), one per eta.

    Returns ``{eta: (sigma_warp_values, sigma_grad_values, grid)}`` with NaN
    where a configuration failed.
    """
    out = {}
    for eta in sorted({r["eta"] for r in rows}):
        sub = [r for r in rows if r["eta"] == eta]
        sw = sorted({r["sigma_warp"] for r in sub})
        sg = sorted({r["sigma_grad"] for r in sub})
        grid = np.full((len(sw), len(sg)), np.nan)
        for r in sub:
            if r["status"] == "ok":
                grid[sw.index(r["sigma_warp"]), sg.index(r["sigma_grad"])] = r["metric_mean"]
        out[eta] = (sw, sg, grid)
    return out

"""Command-line interface.

Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure (or a
replay whose outputs differ from the recorded digests).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import io as fio
from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


class _Run:
    """Collects input and output paths for the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.inputs = []
        self.outputs = []
        self.volatile = []
        self.config_hash = ""
        self.started = fio.now_iso()

    def inp(self, path):
        if path is not None:
            self.inputs.append(path)
        return path

    def out(self, path):
        fio.ensure_parent(path)
        self.outputs.append(path)
        return path

    def timing(self, path):
        fio.ensure_parent(path)
        self.volatile.append(str(path))
        return path

    def finish(self):
        if not self.outputs:
            return None
        m = fio.RunManifest(
            command=self.args.command, argv=self.argv, seed=self.args.seed, config_hash=self.config_hash,
            inputs=fio.digests(self.inputs), outputs=fio.digests(self.outputs), volatile=self.volatile, backend=kernels.BACKEND,
            started=self.started, finished=fio.now_iso(), cwd=os.getcwd())
        return m.write(self.outputs[0])


# ---------------------------------------------------------------------------
# commands

def _timing_path(path) -> str:
    p = Path(path)
    return str(p.with_name(p.stem + ".timing" + p.suffix))


def _load_config(path, seed):
    from .pipeline import PyramidSchedule, RegistrationConfig

    raw = fio.read_json(path) if path else {}
    sched = PyramidSchedule(tuple(raw.get("scales", (4, 2, 1))), tuple(raw.get("iterations", (50, 50, 50))))
    cfg = RegistrationConfig.from_dict({**raw, "seed": seed})
    return cfg, sched, raw


def cmd_register(args, run):
    from .affine import AffineTransform
    from .interp import warp_image
    from .pipeline import register

    fixed = fio.read_image(run.inp(args.fixed))
    moving = fio.read_image(run.inp(args.moving))
    cfg, sched, raw = _load_config(run.inp(args.config), args.seed)
    run.config_hash = fio.config_hash({**cfg.to_dict(), "scales": sched.scales, "iterations": sched.iterations})
    init = None
    if args.init_affine:
        init = AffineTransform.from_json(Path(run.inp(args.init_affine)).read_text())
    elif args.init_field:
        init = fio.read_field(run.inp(args.init_field))
    phi, log = register(fixed, moving, cfg, sched, init)
    fio.write_field(run.out(args.out_field), phi)
    fio.write_image(run.out(args.out_warped), warp_image(moving, phi))
    if args.log:
        Path(run.out(args.log)).write_text(log.to_csv(timing=False))
        Path(run.timing(_timing_path(args.log))).write_text(log.to_csv(timing=True))
    print(json.dumps({k: v for k, v in log.final.items() if k != "wall_time"}, sort_keys=True))


def cmd_affine(args, run):
    from .affine import affine_register

    fixed = fio.read_image(run.inp(args.fixed))
    moving = fio.read_image(run.inp(args.moving))
    T = affine_register(fixed, moving, loss=args.loss, iters=args.iters, eta=args.eta,
                        scales=tuple(args.scales), window_radius=args.window_radius)
    Path(run.out(args.out)).write_text(T.to_json() + "\n")


def cmd_apply(args, run):
    from .affine import AffineTransform, affine_to_field
    from .interp import warp_image, warp_labels

    src = args.image or args.labels
    if args.field:
        phi = fio.read_field(run.inp(args.field))
    else:
        T = AffineTransform.from_json(Path(run.inp(args.affine)).read_text())
        if T.meta is None:
            raise ValidationError(f"{args.affine}: affine has no grid; pass a displacement field instead")
        phi = affine_to_field(T, T.meta)
    if args.labels:
        lab = fio.read_labels(run.inp(src))
        _, _, etype, _ = fio.read_mhd(src)
        fio.write_labels(run.out(args.out), warp_labels(lab, phi), etype)
    else:
        img = fio.read_image(run.inp(src))
        _, _, etype, _ = fio.read_mhd(src)
        out = warp_image(img, phi)
        if etype in ("MET_SHORT", "MET_UCHAR"):
            out.data[:] = np.round(out.data)
        fio.write_image(run.out(args.out), out, etype)


def cmd_metrics(args, run):
    from .analysis import landmark_error, overlap_report, singularity_fraction

    if args.metric == "overlap":
        rep = overlap_report(fio.read_labels(run.inp(args.warped)), fio.read_labels(run.inp(args.fixed)))
        doc = rep.to_dict()
    elif args.metric == "landmarks":
        phi = fio.read_field(run.inp(args.field))
        moving_meta = fio.read_mhd(run.inp(args.moving_image))[1] if args.moving_image else None
        rep = landmark_error(fio.read_landmarks(run.inp(args.fixed_landmarks)),
                             fio.read_landmarks(run.inp(args.moving_landmarks)), phi, moving_meta)
        doc = rep.to_dict()
    elif args.metric == "singularity":
        from .interp import jacobian_det

        phi = fio.read_field(run.inp(args.field))
        det = jacobian_det(phi).data
        doc = {"singularity_fraction": singularity_fraction(phi), "n_folded": int((det <= 0).sum()),
               "n_voxels": int(det.size), "min_jacobian_det": float(det.min())}
    else:  # endpoint
        phi = fio.read_field(run.inp(args.field))
        truth = fio.read_field(run.inp(args.truth))
        if phi.meta.dims != truth.meta.dims:
            raise ValidationError("field and ground truth grids differ")
        e0 = float(np.mean(np.sqrt(np.sum(truth.data ** 2, axis=0))))
        e1 = float(np.mean(np.sqrt(np.sum((phi.data - truth.data) ** 2, axis=0))))
        doc = {"mean_endpoint_error_identity": e0, "mean_endpoint_error": e1,
               "reduction": 1.0 - e1 / e0 if e0 > 0 else 0.0}
    doc["schema_version"] = 1
    text = fio.dumps_json(doc)
    if args.out:
        Path(run.out(args.out)).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_conditioning(args, run):
    from .analysis import conditioning_report

    rep = conditioning_report(fio.read_image(run.inp(args.fixed)), fio.read_image(run.inp(args.moving)),
                              tuple(args.factors))
    out = Path(run.out(args.out))
    out.write_text(rep.to_json() + "\n")
    Path(run.out(str(out.with_suffix(".hist.csv")))).write_text(rep.hist_csv())


def cmd_toy(args, run):
    from .toy import ToyProblem, render_figure, run_toy

    p = ToyProblem(args.kappa, args.theta)
    res = run_toy(p, args.optimizer, args.iters, tuple(args.start), args.eta)
    Path(run.out(args.out)).write_text(res.to_csv())
    if args.figure:
        fio.write_pgm(run.out(args.figure), render_figure(p, res))
    print(json.dumps({"final_distance": res.distance, "diverged": res.diverged}))


def _read_pairs(path):
    from .pipeline import SweepPair

    base = Path(path).parent
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        toks = line.split("#", 1)[0].split()
        if not toks:
            continue
        if len(toks) not in (2, 4):
            raise ValidationError(f"{path}: line {lineno} needs 'fixed moving [fixed_labels moving_labels]'")
        paths = [str(base / t) for t in toks]
        imgs = [fio.read_image(p) for p in paths[:2]]
        labs = [fio.read_labels(p) for p in paths[2:]] or [None, None]
        pairs.append((paths, SweepPair(imgs[0], imgs[1], labs[0], labs[1])))
    return pairs


def cmd_sweep(args, run):
    from .pipeline import sweep, sweep_heatmaps, sweep_to_csv

    pairs = _read_pairs(run.inp(args.pairs))
    for paths, _ in pairs:
        for p in paths:
            run.inp(p)
    grid = fio.read_json(run.inp(args.grid))
    cfg, sched, raw = _load_config(run.inp(args.config), args.seed)
    base = cfg.to_dict()
    run.config_hash = fio.config_hash({"base": base, "grid": grid, "metric": args.metric})
    grid = {k: v for k, v in grid.items() if k != "schema_version"}
    unknown = set(grid) - {"eta", "sigma_warp", "sigma_grad"}
    if unknown:
        raise ValidationError(f"{args.grid}: unknown grid axes {sorted(unknown)}")
    rows = sweep([p for _, p in pairs], grid, args.metric, args.workers, base, sched)
    Path(run.out(args.out)).write_text(sweep_to_csv(rows, timing=False))
    Path(run.timing(_timing_path(args.out))).write_text(sweep_to_csv(rows, timing=True))
    stem = Path(args.out).with_suffix("")
    for eta, (sw, sg, g) in sweep_heatmaps(rows).items():
        pgm = run.out(f"{stem}.eta_{eta!r}.pgm")
        fio.write_heatmap(pgm, g, sw, sg, extra={"eta": eta, "rows_axis": "sigma_warp", "cols_axis": "sigma_grad",
                                                 "metric": args.metric})
        run.outputs.append(str(Path(pgm).with_suffix(".json")))
    failed = sum(r["status"] != "ok" for r in rows)
    print(json.dumps({"configs": len(rows), "failed": failed}))


def cmd_synth(args, run):
    from .grid import LandmarkSet
    from .interp import sample_at
    from .synth import label_phantom, synthetic_pair

    fixed, moving, truth = synthetic_pair(args.seed, (args.size,) * args.ndim, args.amplitude)
    out = Path(args.out_dir)
    fio.write_image(run.out(str(out / "fixed.mhd")), fixed)
    fio.write_image(run.out(str(out / "moving.mhd")), moving)
    fio.write_field(run.out(str(out / "truth.mhd")), truth, "MET_DOUBLE")
    fio.write_labels(run.out(str(out / "fixed_labels.mhd")), label_phantom(fixed))
    fio.write_labels(run.out(str(out / "moving_labels.mhd")), label_phantom(moving))
    rng = np.random.default_rng(args.seed)
    n = args.size
    P = rng.uniform(0.2 * (n - 1), 0.8 * (n - 1), size=(args.landmarks, args.ndim))
    Q = P + sample_at(truth.data, P.T).T
    fio.write_landmarks(run.out(str(out / "fixed_landmarks.csv")), LandmarkSet.from_points(P))
    fio.write_landmarks(run.out(str(out / "moving_landmarks.csv")), LandmarkSet.from_points(Q))


def cmd_replay(args, run):
    import subprocess

    m = fio.RunManifest.from_dict(fio.read_json(args.manifest))
    if m.version != __version__:
        print(f"warning: manifest written by version {m.version}, running {__version__}", file=sys.stderr)
    for p, digest in m.inputs.items():
        if not Path(p).exists() or fio.file_digest(p) != digest:
            raise ValidationError(f"input {p} is missing or differs from the recorded digest")
    cmd = [sys.executable, "-m", "difform.cli"] + m.argv
    proc = subprocess.run(cmd, cwd=m.cwd or None)
    if proc.returncode != 0:
        return proc.returncode
    diffs = [p for p, dg in m.outputs.items() if not Path(p).exists() or fio.file_digest(p) != dg]
    print(json.dumps({"outputs": len(m.outputs), "mismatched": diffs}))
    return EXIT_NUMERICAL if diffs else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="difform", description="Multi-scale diffeomorphic registration with adaptive optimizers.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
        return sp

    r = add("register", "deformable registration of --moving onto --fixed")
    r.add_argument("--fixed", required=True)
    r.add_argument("--moving", required=True)
    r.add_argument("--config", help="JSON with loss, eta, sigma_grad, sigma_warp, mode, scales, iterations, ...")
    r.add_argument("--out-field", required=True)
    r.add_argument("--out-warped", required=True)
    g = r.add_mutually_exclusive_group()
    g.add_argument("--init-affine")
    g.add_argument("--init-field")
    r.add_argument("--log")

    a = add("affine", "affine pre-alignment")
    a.add_argument("--fixed", required=True)
    a.add_argument("--moving", required=True)
    a.add_argument("--loss", choices=("auto", "ssd", "lncc", "dice"), default="auto",
                   help="auto: dice for binary masks, lncc otherwise")
    a.add_argument("--out", required=True)
    a.add_argument("--iters", type=int, default=200)
    a.add_argument("--eta", type=float, default=0.01)
    a.add_argument("--scales", type=float, nargs="+", default=[1.0])
    a.add_argument("--window-radius", type=int, default=2)

    ap = add("apply", "resample an image or label map through a transform")
    g = ap.add_mutually_exclusive_group(required=True)
    g.add_argument("--image")
    g.add_argument("--labels")
    g = ap.add_mutually_exclusive_group(required=True)
    g.add_argument("--field")
    g.add_argument("--affine")
    ap.add_argument("--out", required=True)

    m = add("metrics", "evaluation reports")
    m.add_argument("metric", choices=("overlap", "landmarks", "singularity", "endpoint"))
    m.add_argument("--warped", help="warped label map (overlap)")
    m.add_argument("--fixed", help="fixed label map (overlap)")
    m.add_argument("--field", help="displacement field (landmarks, singularity, endpoint)")
    m.add_argument("--truth", help="ground-truth field (endpoint)")
    m.add_argument("--fixed-landmarks")
    m.add_argument("--moving-landmarks")
    m.add_argument("--moving-image", help="grid of the moving image, if it differs from the field's")
    m.add_argument("--out")

    c = add("conditioning", "per-voxel Hessian condition numbers at factors 1, 2, 4")
    c.add_argument("--fixed", required=True)
    c.add_argument("--moving", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--factors", type=int, nargs="+", default=[1, 2, 4])

    t = add("toy", "SGD or Adam on x^2 + kappa y^2 rotated by theta")
    t.add_argument("--kappa", type=float, required=True)
    t.add_argument("--theta", type=float, default=0.0)
    t.add_argument("--optimizer", choices=("sgd", "adam"), required=True)
    t.add_argument("--iters", type=int, default=1000)
    t.add_argument("--eta", type=float)
    t.add_argument("--start", type=float, nargs=2, default=[5.0, 5.0])
    t.add_argument("--out", required=True)
    t.add_argument("--figure", help="PGM raster of contours and trajectory")

    s = add("sweep", "grid search over eta x sigma_warp x sigma_grad")
    s.add_argument("--pairs", required=True, help="text file: 'fixed moving [fixed_labels moving_labels]' per line")
    s.add_argument("--grid", required=True)
    s.add_argument("--metric", choices=("overlap", "loss"), default="loss")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--config")
    s.add_argument("--out", required=True)

    y = add("synth", "write a synthetic phantom pair with its ground-truth warp")
    y.add_argument("--out-dir", required=True)
    y.add_argument("--size", type=int, default=32)
    y.add_argument("--ndim", type=int, choices=(2, 3), default=3)
    y.add_argument("--amplitude", type=float, default=3.0)
    y.add_argument("--landmarks", type=int, default=20)

    rp = add("replay", "re-run the command recorded in a manifest and compare output digests")
    rp.add_argument("manifest")
    return p


COMMANDS = {"register": cmd_register, "affine": cmd_affine, "apply": cmd_apply, "metrics": cmd_metrics,
            "conditioning": cmd_conditioning, "toy": cmd_toy, "sweep": cmd_sweep, "synth": cmd_synth,
            "replay": cmd_replay}


def _check_metric_args(args):
    need = {"overlap": ("warped", "fixed"), "landmarks": ("field", "fixed_landmarks", "moving_landmarks"),
            "singularity": ("field",), "endpoint": ("field", "truth")}[args.metric]
    missing = [n for n in need if getattr(args, n) is None]
    if missing:
        raise ValidationError(f"metrics {args.metric} needs " + ", ".join("--" + n.replace("_", "-") for n in missing))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "metrics":
            _check_metric_args(args)
        run = _Run(args, argv)
        code = COMMANDS[args.command](args, run)
        if args.command != "replay":
            run.finish()
        return EXIT_OK if code is None else code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

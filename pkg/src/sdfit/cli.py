"""Command-line interface.

Subcommands
-----------
fit           train a field on a point cloud and write checkpoint + log
extract       pull the zero level set out of a checkpoint (mesh or contour)
metrics       compare two shapes (mesh/cloud files) with CD / CD^2 / CA
verify        run the numerical self-checks (ssa, toy-circle, lambda-sweep)
demo2d        end-to-end 2D demo: synthetic cloud -> fit -> contour -> metrics

Exit codes: 0 success, 1 failed verification, 2 usage or input error,
3 empty level set, 4 numerical abort during training.

All numerical imports happen inside the command functions so that
``--threads`` can pin the BLAS thread pools before numpy is first loaded.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

__all__ = ["main", "build_parser"]

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _set_thread_count(n: int) -> None:
    if "numpy" in sys.modules:
        logging.getLogger("sdfit").warning(
            "numpy already imported; --threads may not take full effect"
        )
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(n)


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------


def _effective_config(args, base=None):
    """defaults -> profile/base -> --config file -> --set overrides -> flags."""
    from .config import (
        apply_overrides,
        default_run_config,
        load_run_config,
        with_out_dir,
        with_seed,
    )

    cfg = base if base is not None else default_run_config()
    if getattr(args, "config", None):
        cfg = load_run_config(args.config, base=cfg)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    if getattr(args, "out_dir", None):
        cfg = with_out_dir(cfg, args.out_dir)
    return cfg


def _echo_config(cfg, out_dir: str | None = None) -> None:
    """Print the fully-resolved configuration and mirror it to disk."""
    from .config import config_to_ini, write_run_config

    text = config_to_ini(cfg)
    sys.stdout.write(text)
    sys.stdout.flush()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_run_config(cfg, os.path.join(out_dir, "effective_config.ini"))


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _cmd_fit(args) -> int:
    from .clouds import load_cloud
    from .training import fit

    cfg = _effective_config(args)
    if not cfg.input_path:
        print("fit: no input cloud given (set io.input in the config or --set io.input=PATH)",
              file=sys.stderr)
        return 2
    if not os.path.exists(cfg.input_path):
        print(f"fit: input file not found: {cfg.input_path}", file=sys.stderr)
        return 2

    out_dir = cfg.out_dir
    _echo_config(cfg, out_dir)
    cloud = load_cloud(cfg.input_path)
    log_path = os.path.join(out_dir, "train_log.csv")
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    state = fit(
        cloud,
        cfg.train,
        field_config=cfg.field,
        sampling=cfg.sampling,
        log_path=log_path,
        checkpoint_path=ckpt_path,
    )
    last = state.history[-1] if state.history else None
    total = f"{last['total']:.6g}" if last is not None else "n/a"
    print(f"fit: finished {state.iteration} iterations (final total loss {total})")
    print(f"fit: checkpoint -> {ckpt_path}")
    print(f"fit: training log -> {log_path}")
    return 0


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------


def _denormalized_contour(contour, transform):
    from .meshing import Contour2D

    return Contour2D(vertices=transform.invert(contour.vertices), edges=contour.edges)


def _padded_bbox(np, *point_arrays, pad_fraction: float = 0.08):
    """Bounding box around the stacked points, with a visual margin."""
    from .fields import BoundingBox

    pts = np.vstack(point_arrays)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = pad_fraction * max(float(np.max(hi - lo)), 1e-6)
    return BoundingBox(tuple(lo - pad), tuple(hi + pad))


def _cmd_extract(args) -> int:
    import numpy as np

    from .fields import BoundingBox
    from .meshing import (
        EmptyLevelSet,
        TriangleMesh,
        export_mesh_obj,
        marching_cubes,
        marching_squares,
        save_contour_csv,
        save_contour_svg,
    )
    from .training import load_train_checkpoint

    if not os.path.exists(args.checkpoint):
        print(f"extract: checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return 2
    state = load_train_checkpoint(args.checkpoint)
    field = state.field
    dim = field.config.input_dim
    box = BoundingBox.unit(dim)
    out_dir = args.out_dir or "out"
    os.makedirs(out_dir, exist_ok=True)

    if dim == 3:
        mesh = marching_cubes(field, box, args.resolution)
        verts = state.transform.invert(mesh.vertices)
        mesh = TriangleMesh(vertices=verts, faces=mesh.faces)
        out_path = args.out or os.path.join(out_dir, "mesh.obj")
        export_mesh_obj(out_path, mesh)
        print(f"extract: {mesh.n_faces} faces, area {mesh.total_area:.6g} -> {out_path}")
        return 0

    contour = marching_squares(field, box, args.resolution)
    if contour.n_segments == 0:
        raise EmptyLevelSet(
            f"no zero level set found in the unit box at resolution {args.resolution}"
        )
    contour = _denormalized_contour(contour, state.transform)
    out_path = args.out or os.path.join(out_dir, "contour.csv")
    save_contour_csv(out_path, contour)
    svg_path = os.path.splitext(out_path)[0] + ".svg"
    save_contour_svg(svg_path, contour, _padded_bbox(np, contour.vertices))
    print(
        f"extract: {contour.n_segments} segments, length {contour.total_length:.6g}"
        f" -> {out_path}, {svg_path}"
    )
    return 0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _load_shape_samples(path: str, n_samples: int, rng):
    """Return (points, normals_or_None) for a mesh, contour, or cloud file."""
    from .clouds import load_cloud
    from .meshing import (
        load_contour_csv,
        load_mesh_obj,
        sample_contour_uniform,
        sample_mesh_uniform,
    )

    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        mesh = load_mesh_obj(path)
        pts, face_idx = sample_mesh_uniform(mesh, n_samples, rng, return_face_indices=True)
        normals = mesh.face_unit_normals[face_idx]
        return pts, normals
    if ext == ".csv":
        contour = load_contour_csv(path)
        return sample_contour_uniform(contour, n_samples, rng), None
    cloud = load_cloud(path)
    return cloud.points, cloud.normals


def _cmd_metrics(args) -> int:
    from ._rng import stream
    from .metrics import compute_metrics, metrics_csv_row, write_metrics_csv

    for path in (args.shape_a, args.shape_b):
        if not os.path.exists(path):
            print(f"metrics: file not found: {path}", file=sys.stderr)
            return 2

    seed = args.seed if args.seed is not None else 0
    rng = stream(seed, "metrics")
    a_pts, a_normals = _load_shape_samples(args.shape_a, args.n_samples, rng)
    b_pts, b_normals = _load_shape_samples(args.shape_b, args.n_samples, rng)
    result = compute_metrics(a_pts, b_pts, a_normals=a_normals, b_normals=b_normals)

    shape = args.shape or os.path.splitext(os.path.basename(args.shape_a))[0]
    variant = args.variant or os.path.splitext(os.path.basename(args.shape_b))[0]
    row = metrics_csv_row(shape, variant, result, args.n_samples, seed)
    if args.out:
        write_metrics_csv(args.out, [row], append=os.path.exists(args.out))
        print(f"metrics: appended row -> {args.out}")
    import math

    ca = "n/a" if math.isnan(result.ca_degrees) else f"{result.ca_degrees:.4f} deg"
    print(
        f"metrics: CD {result.cd:.6g} (x100: {result.cd_scaled:.4f}), "
        f"CD^2 {result.cd2:.6g} (x1e4: {result.cd2_scaled:.4f}), CA {ca}"
    )
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _report(checks) -> int:
    """Print PASS/FAIL lines; return 0 iff every check passed."""
    n_fail = 0
    for name, ok, detail in checks:
        tag = "PASS" if ok else "FAIL"
        print(f"{tag} {name}: {detail}")
        if not ok:
            n_fail += 1
    total = len(checks)
    print(f"verify: {total - n_fail}/{total} checks passed")
    return 0 if n_fail == 0 else 1


def _verify_ssa(out_dir: str, seed: int):
    import numpy as np

    from ._rng import stream
    from .analysis import SsaExperiment, run_ssa_experiment
    from .fields import AnalyticSdf, BoundingBox

    checks = []
    radius = 0.35
    area = 4.0 * np.pi * radius**2
    box = BoundingBox.unit(3)
    sphere = AnalyticSdf.sphere(radius=radius)

    # sharpness sweep on the exact sphere: limit, spread, and mesh oracle
    exp = SsaExperiment(
        field=sphere, box=box, sharpness_grid=(10.0, 100.0, 1000.0),
        n_samples=5000, repeats=100, mesh_resolution=128,
    )
    report = run_ssa_experiment(exp, stream(seed, "analysis"))
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "ssa_sweep.csv"))
    report.write_svg(os.path.join(out_dir, "ssa_sweep.svg"))
    by_alpha = {row.sharpness: row for row in report.rows}
    r100, r1000 = by_alpha[100.0], by_alpha[1000.0]
    rel = abs(r100.mean_estimate - area) / area
    checks.append((
        "sphere-limit", rel < 0.03,
        f"mean estimate {r100.mean_estimate:.5f} vs surface area {area:.5f} "
        f"(rel err {rel:.2%}, sharpness 100, {exp.n_samples}x{exp.repeats} samples)",
    ))
    oracle_rel = abs(r100.oracle_integral - area) / area
    checks.append((
        "mesh-oracle", oracle_rel < 0.03,
        f"mesh surface integral {r100.oracle_integral:.5f} vs {area:.5f} "
        f"(rel err {oracle_rel:.2%})",
    ))
    checks.append((
        "variance-grows", r1000.stdev > r100.stdev,
        f"stdev {r1000.stdev:.4f} at sharpness 1000 > {r100.stdev:.4f} at 100",
    ))

    # large-sample single shot
    from .losses import ssa_loss

    rng = stream(seed, "analysis", 1)
    est, _ = ssa_loss(sphere, box, 100.0, 2_000_000, rng)
    rel = abs(est - area) / area
    checks.append((
        "large-sample", rel < 0.03,
        f"single 2e6-sample estimate {est:.5f} (rel err {rel:.2%})",
    ))

    # non-unit gradient: scaling f by c rescales the estimate by 1/c
    for c in (0.5, 2.0):
        scaled = AnalyticSdf.scaled(sphere, c)
        rng = stream(seed, "analysis", 2)
        value, _ = ssa_loss(scaled, box, 100.0, 2_000_000, rng)
        target = area / c
        rel = abs(value - target) / target
        checks.append((
            f"gradient-scale-{c:g}", rel < 0.03,
            f"estimate {value:.5f} vs area/{c:g} = {target:.5f} (rel err {rel:.2%})",
        ))

    # constant field: no zero set, closed-form expectation
    const = AnalyticSdf.constant(0.2, dim=3)
    rng = stream(seed, "analysis", 3)
    value, _ = ssa_loss(const, box, 100.0, 1_000_000, rng)
    target = 50.0 * np.exp(-20.0)
    checks.append((
        "constant-field", abs(value - target) <= 1e-12,
        f"flat field value {value:.3e} vs closed form {target:.3e}",
    ))
    return checks


def _verify_toy_circle(out_dir: str, seed: int):
    import numpy as np

    from ._rng import stream
    from .analysis import (
        ToyCircleSpec,
        run_toy_circle_experiment,
        toy_circle_descent,
        toy_circle_minimizer,
        write_toy_circle_csv,
        write_toy_circle_svg,
    )

    checks = []
    os.makedirs(out_dir, exist_ok=True)

    # quadratic data term: linear shrinkage with a collapse threshold
    spec = ToyCircleSpec(radius=0.5, weight=0.1, exponent=2)
    closed = toy_circle_minimizer(spec)
    checks.append((
        "p2-closed-form", abs(closed - 0.18584) < 1e-4,
        f"radius 0.5, weight 0.1 -> optimal radius {closed:.5f} (expected 0.18584)",
    ))

    rows = run_toy_circle_experiment(0.5, tuple(np.linspace(0.0, 0.25, 11)), exponent=2)
    write_toy_circle_csv(rows, os.path.join(out_dir, "toy_circle_p2.csv"))
    write_toy_circle_svg(rows, os.path.join(out_dir, "toy_circle_p2.svg"))
    worst = max(row.abs_error for row in rows)
    checks.append((
        "p2-sweep-descent", worst < 1e-3,
        f"11-point weight sweep, worst |descent - closed form| {worst:.2e}",
    ))

    # random radii/weights away from the collapse boundary
    rng = stream(seed, "analysis")
    worst = 0.0
    for _ in range(20):
        r = float(rng.uniform(0.2, 1.0))
        mu = float(rng.uniform(0.0, 0.3))
        if abs(r - np.pi * mu) < 0.02:
            mu = max(0.0, (r - 0.05) / np.pi)  # step off the kink
        spec = ToyCircleSpec(radius=r, weight=mu, exponent=2)
        got = toy_circle_descent(spec, r)
        worst = max(worst, abs(got - toy_circle_minimizer(spec)))
    checks.append((
        "p2-random-cases", worst < 1e-3,
        f"20 random (radius, weight) pairs, worst abs error {worst:.2e}",
    ))

    # absolute-value data term: all-or-nothing threshold at weight 1/(2 pi)
    spec_keep = ToyCircleSpec(radius=0.5, weight=0.1, exponent=1)
    got_keep = toy_circle_descent(spec_keep, spec_keep.radius)
    checks.append((
        "p1-below-threshold", abs(got_keep - 0.5) < 1e-3,
        f"weight 0.1 < 1/(2 pi): descent keeps radius ({got_keep:.6f} vs 0.5)",
    ))
    spec_drop = ToyCircleSpec(radius=0.5, weight=0.2, exponent=1)
    got_drop = toy_circle_descent(spec_drop, spec_drop.radius)
    checks.append((
        "p1-above-threshold", got_drop < 1e-2,
        f"weight 0.2 > 1/(2 pi): circle collapses (final radius {got_drop:.2e})",
    ))
    rows1 = run_toy_circle_experiment(0.5, tuple(np.linspace(0.0, 0.25, 11)), exponent=1)
    write_toy_circle_csv(rows1, os.path.join(out_dir, "toy_circle_p1.csv"))
    write_toy_circle_svg(rows1, os.path.join(out_dir, "toy_circle_p1.svg"))
    return checks


def _verify_lambda_sweep(out_dir: str, seed: int):
    from dataclasses import replace

    from .analysis import lambda_sweep, write_lambda_sweep_csv
    from .demos import demo_profile, make_demo_cloud

    checks = []
    os.makedirs(out_dir, exist_ok=True)
    cloud = make_demo_cloud("noisy-circle", seed=seed)
    profile = demo_profile()
    train = replace(profile.train, iterations=800, warmup_iters=100, seed=seed)
    weights = (0.0, 0.1, 0.5, 1.0)
    rows = lambda_sweep(
        cloud, weights, train,
        field_config=profile.field, sampling=profile.sampling,
        resolution=256, n_eval_samples=2000,
    )
    write_lambda_sweep_csv(rows, os.path.join(out_dir, "lambda_sweep.csv"))
    by_w = {row.eikonal_weight: row for row in rows}
    checks.append((
        "zero-weight-flagged", by_w[0.0].degenerate_risk,
        "run without the unit-gradient penalty is flagged as degenerate-risk",
    ))
    finite = [row for row in rows if row.eikonal_weight > 0.0]
    all_fit = all(row.cd_to_cloud < 0.05 for row in finite)
    worst = max(row.cd_to_cloud for row in finite)
    checks.append((
        "regularized-fits", all_fit,
        f"all weighted runs stay near the cloud (worst CD {worst:.4f} normalized)",
    ))
    len_low = by_w[0.1].surface_measure
    len_high = by_w[1.0].surface_measure
    checks.append((
        "length-control", len_high <= len_low * 1.25,
        f"contour length {len_high:.4f} at weight 1.0 vs {len_low:.4f} at 0.1 "
        "(stronger regularization does not inflate the surface)",
    ))
    return checks


_VERIFY_SUITES = {
    "ssa": _verify_ssa,
    "toy-circle": _verify_toy_circle,
    "lambda-sweep": _verify_lambda_sweep,
}


def _cmd_verify(args) -> int:
    seed = args.seed if args.seed is not None else 0
    suites = list(_VERIFY_SUITES) if args.suite == "all" else [args.suite]
    checks = []
    for name in suites:
        out_dir = os.path.join(args.out_dir or "out", name.replace("-", "_"))
        checks.extend(_VERIFY_SUITES[name](out_dir, seed))
    return _report(checks)


# ---------------------------------------------------------------------------
# demo2d
# ---------------------------------------------------------------------------


def _cmd_demo2d(args) -> int:
    from dataclasses import replace

    import numpy as np

    from ._rng import stream
    from .demos import demo_boundary_samples, demo_profile, make_demo_cloud
    from .fields import BoundingBox
    from .meshing import (
        EmptyLevelSet,
        marching_squares,
        sample_contour_uniform,
        save_contour_csv,
        save_contour_svg,
    )
    from .metrics import compute_metrics, metrics_csv_row, write_metrics_csv
    from .training import fit

    base = demo_profile()
    if args.variant:
        base = replace(base, train=replace(base.train,
                                           loss=replace(base.train.loss, variant=args.variant)))
    cfg = _effective_config(args, base=base)
    variant = cfg.train.loss.variant
    out_dir = cfg.out_dir
    _echo_config(cfg, out_dir)

    cloud = make_demo_cloud(args.shape, seed=cfg.train.seed)
    state = fit(
        cloud, cfg.train, field_config=cfg.field, sampling=cfg.sampling,
        log_path=os.path.join(out_dir, f"{args.shape}_{variant}_log.csv"),
    )
    contour = marching_squares(state.field, BoundingBox.unit(2), args.resolution)
    if contour.n_segments == 0:
        raise EmptyLevelSet(
            f"demo fit produced no zero level set (shape {args.shape}, {variant})"
        )
    contour = _denormalized_contour(contour, state.transform)

    stem = os.path.join(out_dir, f"{args.shape}_{variant}")
    save_contour_csv(stem + "_contour.csv", contour)
    save_contour_svg(stem + ".svg", contour,
                     _padded_bbox(np, contour.vertices, cloud.points),
                     cloud_points=cloud.points)

    # metrics against the exact generating boundary
    rng = stream(cfg.train.seed, "metrics")
    reference = demo_boundary_samples(args.shape, args.n_samples, rng)
    fitted = sample_contour_uniform(contour, args.n_samples, rng)
    result = compute_metrics(reference, fitted)
    row = metrics_csv_row(args.shape, variant, result, args.n_samples, cfg.train.seed)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(metrics_path, [row], append=os.path.exists(metrics_path))

    print(f"demo2d: contour -> {stem}_contour.csv, picture -> {stem}.svg")
    print(
        f"demo2d: CD to exact boundary {result.cd:.6g} "
        f"(x100: {result.cd_scaled:.4f}), CD^2 x1e4: {result.cd2_scaled:.4f}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdfit",
        description="Fit implicit neural surfaces to unoriented point clouds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_flags=True):
        p.add_argument("--threads", type=int, default=None,
                       help="pin BLAS/OpenMP thread pools to this count")
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.add_argument("--out-dir", default=None, help="output directory")
        if config_flags:
            p.add_argument("--config", default=None, help="INI config file")
            p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                           help="override one config entry (repeatable)")

    p_fit = sub.add_parser("fit", help="train a field on a point cloud")
    add_common(p_fit)
    p_fit.set_defaults(handler=_cmd_fit)

    p_ext = sub.add_parser("extract", help="extract the zero level set of a checkpoint")
    add_common(p_ext, config_flags=False)
    p_ext.add_argument("--checkpoint", default="out/model.ckpt",
                       help="trained checkpoint to read")
    p_ext.add_argument("--resolution", type=int, default=512,
                       help="marching grid resolution")
    p_ext.add_argument("--out", default=None, help="output path (.obj or .csv)")
    p_ext.set_defaults(handler=_cmd_extract)

    p_met = sub.add_parser("metrics", help="compare two shape files")
    add_common(p_met, config_flags=False)
    p_met.add_argument("shape_a", help="reference shape (.obj, .xyz, .txt, .ply)")
    p_met.add_argument("shape_b", help="candidate shape (.obj, .xyz, .txt, .ply)")
    p_met.add_argument("--n-samples", type=int, default=30000,
                       help="surface samples per mesh")
    p_met.add_argument("--shape", default=None, help="label for the shape column")
    p_met.add_argument("--variant", default=None, help="label for the variant column")
    p_met.add_argument("--out", default=None, help="append a row to this CSV")
    p_met.set_defaults(handler=_cmd_metrics)

    p_ver = sub.add_parser("verify", help="run numerical self-checks")
    add_common(p_ver, config_flags=False)
    p_ver.add_argument("suite", choices=sorted(_VERIFY_SUITES) + ["all"],
                       help="which suite to run")
    p_ver.set_defaults(handler=_cmd_verify)

    p_demo = sub.add_parser("demo2d", help="end-to-end 2D reconstruction demo")
    add_common(p_demo)
    p_demo.add_argument("shape", choices=("cross", "sparse-box", "noisy-circle"),
                        help="synthetic input shape")
    p_demo.add_argument("--variant", default=None,
                        choices=("igr", "siren", "neural-pull", "diffcd"),
                        help="loss variant to train")
    p_demo.add_argument("--resolution", type=int, default=256,
                        help="contour extraction resolution")
    p_demo.add_argument("--n-samples", type=int, default=5000,
                        help="samples for the boundary metrics")
    p_demo.set_defaults(handler=_cmd_demo2d)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        _set_thread_count(args.threads)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    from .meshing import EmptyLevelSet
    from .training import NumericalAbort

    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EmptyLevelSet as exc:
        print(f"error: empty level set: {exc}", file=sys.stderr)
        return 3
    except NumericalAbort as exc:
        print(f"error: numerical abort in {exc.component}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())

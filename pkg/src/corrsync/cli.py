"""Command-line interface.

Subcommands cover the full pipeline: flow graph inspection, soft propagation,
baseline propagation, partial matching, benchmarking, the lattice and holonomy
experiments, synthetic collection generation, and stability reports.

Every output starts with a provenance header (version, command, seed, config)
and is written atomically; identical invocations produce byte-identical files.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import direct_propagate, mst_propagate, shortest_path_propagate
from .benchmark import (
    METHODS,
    add_far_shape,
    default_grid,
    remove_shape,
    run_benchmark,
    stability_report,
    synth_collection,
)
from .collection import atomic_write, load_collection, save_collection
from .errors import CorrsyncError
from .flow import directed_flow_matrix
from .geometry import (
    GeodesicLegPath,
    SphereTriangle,
    TangentVector,
    build_lattice,
    holonomy_deficit,
    lattice_walks,
    random_triangle,
    tangent_toward,
    transport_along_path,
)
from .matching import (
    Shape,
    baseline_pairwise_align,
    detect_extrema,
    fps_landmarks,
    gp_partial_match,
    interpolate_dense,
    joint_fps_refine,
    stable_curvature_match,
)
from .soft import propagate_soft


def _fmt(x: float) -> str:
    return repr(float(x))


def _provenance_header(command: str, seed, config: dict) -> str:
    cfg = json.dumps(config, sort_keys=True, default=str)
    return (
        f"# corrsync {__version__}\n"
        f"# command: {command}\n"
        f"# seed: {seed}\n"
        f"# config: {cfg}\n"
    )


def _emit(out_path: str | None, text: str) -> None:
    if out_path:
        atomic_write(out_path, text)
    else:
        sys.stdout.write(text)


def _info(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message, file=sys.stderr)


def _load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    if not os.path.exists(path):
        raise CorrsyncError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CorrsyncError(f"config line {lineno}: expected KEY=VALUE")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


class _Options:
    """Resolution order: command line flag, then config file, then built-in default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_config(getattr(args, "config", None))

    def get(self, name: str, default, cast=None):
        value = getattr(self.args, name, None)
        if value is None:
            raw = self.config.get(name)
            if raw is None:
                value = default
            else:
                value = raw
        if value is None:
            return None
        if cast is not None and not isinstance(value, cast if isinstance(cast, type) else float):
            try:
                value = cast(value)
            except (TypeError, ValueError):
                raise CorrsyncError(f"option {name!r}: cannot read {value!r}")
        return value

    def config_dict(self, **pairs) -> dict:
        return {k: v for k, v in sorted(pairs.items())}


def _parse_lams(raw) -> tuple[float, ...]:
    if isinstance(raw, (int, float)):
        return (float(raw),)
    return tuple(float(part) for part in str(raw).split(","))


def _collection(opts: _Options):
    manifest = opts.args.manifest
    return load_collection(manifest, allow_duplicates=bool(opts.args.allow_duplicates))


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_flow(args) -> int:
    opts = _Options(args)
    collection = _collection(opts)
    i = collection.index(args.source)
    j = collection.index(args.target)
    flow = directed_flow_matrix(collection.D, i, j, beta=collection.beta, W=collection.W)
    lines = [
        _provenance_header(
            "flow", opts.get("seed", 0, int),
            opts.config_dict(manifest=args.manifest, source=args.source, target=args.target),
        )
    ]
    lines.append("# section: matrix\n")
    for row in flow.F.astype(int):
        lines.append(",".join(str(v) for v in row) + "\n")
    lines.append("# section: edges\n")
    lines.append("from,to,weight\n")
    for a in range(flow.n):
        for b in np.flatnonzero(flow.F[a]):
            lines.append(f"{a},{int(b)},{_fmt(flow.WF[a, b])}\n")
    _emit(args.out, "".join(lines))
    _info(args, f"flow {args.source}->{args.target}: {int(flow.F.sum())} edges")
    return 0


def _cmd_propagate(args) -> int:
    opts = _Options(args)
    collection = _collection(opts)
    lam = opts.get("lam", 0.978, float)
    max_paths = opts.get("max_paths", 10**6, int)
    points = None
    if args.points and args.points != "landmarks":
        points = [int(p) for p in args.points.split(",")]
    soft = propagate_soft(
        collection, args.source, args.target, lam=lam, source_points=points,
        max_paths=max_paths, strict=bool(args.strict),
    )
    payload = {
        "source": args.source,
        "target": args.target,
        "lambda": lam,
        "rows": [
            {
                "source_index": v,
                "support": [[t, m] for t, m in sorted(soft.rows[v].items())],
            }
            for v in sorted(soft.rows)
        ],
        "provenance": {
            "version": __version__,
            "command": "propagate",
            "seed": opts.get("seed", 0, int),
            "config": opts.config_dict(
                manifest=args.manifest, beta=collection.beta,
                strict=bool(args.strict), path_count=soft.path_count,
            ),
        },
    }
    _emit(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _info(args, f"propagated {len(soft.rows)} rows over {soft.path_count} paths")
    return 0


def _cmd_baseline(args) -> int:
    opts = _Options(args)
    collection = _collection(opts)
    if args.method == "direct":
        cmap, route = direct_propagate(collection, args.source, args.target), None
    elif args.method == "mst":
        cmap, route = mst_propagate(collection, args.source, args.target)
    else:
        cmap, route = shortest_path_propagate(
            collection, args.source, args.target, epsilon=opts.get("epsilon", None, float)
        )
    lines = [
        _provenance_header(
            "baseline", opts.get("seed", 0, int),
            opts.config_dict(
                manifest=args.manifest, method=args.method,
                source=args.source, target=args.target,
                route=route if route is None else list(route),
            ),
        )
    ]
    if cmap.kind == "discrete":
        for s, t in enumerate(cmap.indices):
            lines.append(f"{s},{int(t)}\n")
    else:
        mat = cmap.matrix
        for s in range(mat.shape[0]):
            for pos in range(mat.indptr[s], mat.indptr[s + 1]):
                lines.append(f"{s},{int(mat.indices[pos])},{_fmt(mat.data[pos])}\n")
    _emit(args.out, "".join(lines))
    _info(args, f"{args.method} route: {route}")
    return 0


def _cmd_match(args) -> int:
    opts = _Options(args)
    collection = _collection(opts)
    try:
        a_id, b_id = args.pair.split(",")
    except ValueError:
        raise CorrsyncError(f"--pair expects two comma-separated shape ids, got {args.pair!r}")
    shape_a = collection.shape(a_id)
    shape_b = collection.shape(b_id)
    k = opts.get("knn", 8, int)
    oracle_a = collection.oracle(a_id, k=k)
    oracle_b = collection.oracle(b_id, k=k)
    lam = opts.get("lam", 0.978, float)
    n_land = opts.get("landmarks", 10, int)
    max_matches = opts.get("max_matches", 15, int)

    if shape_a.landmark_indices:
        from .matching import LandmarkSet

        lm_a = LandmarkSet(a_id, tuple(shape_a.landmark_indices), "provided")
    else:
        lm_a = fps_landmarks(shape_a, n_land, 0, oracle_a)
    if shape_b.landmark_indices:
        from .matching import LandmarkSet

        lm_b = LandmarkSet(b_id, tuple(shape_b.landmark_indices), "provided")
    else:
        lm_b = fps_landmarks(shape_b, n_land, 0, oracle_b)

    soft_ab = propagate_soft(collection, a_id, b_id, lam=lam, source_points=list(lm_a.indices))
    soft_ba = propagate_soft(collection, b_id, a_id, lam=lam, source_points=list(lm_b.indices))
    partial = gp_partial_match(
        soft_ab, soft_ba, lm_a, lm_b, args.radius, oracle_a, oracle_b
    )

    if shape_a.scalar_field is not None and shape_b.scalar_field is not None:
        align = baseline_pairwise_align(shape_a, shape_b)
        moved = Shape(id=a_id, points=shape_a.points @ align.rotation.T + align.translation)
        extrema_a = detect_extrema(moved, oracle_a, hops=opts.get("hops", 1, int),
                                   field=shape_a.scalar_field)
        extrema_b = detect_extrema(shape_b, oracle_b, hops=opts.get("hops", 1, int))
        seeds = stable_curvature_match(
            moved, shape_b, extrema_a, extrema_b, args.delta, oracle_a, oracle_b
        )
    else:
        from .matching import MatchList

        seeds = MatchList(a_id, b_id, [])
    refined = joint_fps_refine(seeds, partial, max_matches, oracle_a, oracle_b)

    lines = [
        _provenance_header(
            "match", opts.get("seed", 0, int),
            opts.config_dict(
                manifest=args.manifest, pair=args.pair, radius=args.radius,
                delta=args.delta, max_matches=max_matches, lam=lam,
            ),
        ),
        "source_index,target_index,provenance\n",
    ]
    for m in refined.matched():
        lines.append(f"{m.source},{m.target},{m.provenance}\n")
    _emit(args.out, "".join(lines))
    unmatched = len(refined.entries) - len(refined.matched())
    if args.interpolated:
        dense = interpolate_dense(refined, shape_a, shape_b, oracle_a,
                                  k=opts.get("interp_k", 4, int))
        body = "".join(f"{s},{int(t)}\n" for s, t in enumerate(dense.indices))
        atomic_write(args.interpolated, body)
    _info(args, f"{len(refined.matched())} matches ({unmatched} unmatched entries)")
    return 0


def _curve_rows(curves) -> list[str]:
    rows = []
    for curve in curves:
        lam_repr = "" if curve.lam is None else _fmt(curve.lam)
        for t, f in zip(curve.thresholds, curve.fractions):
            rows.append(f"{curve.method},{lam_repr},{_fmt(t)},{_fmt(f)}\n")
    return rows


def _curves_svg(curves) -> str:
    width, height, margin = 640, 420, 50
    palette = ["#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#16a085"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
    ]
    tmax = max(float(c.thresholds[-1]) for c in curves) or 1.0
    for ci, curve in enumerate(curves):
        pts = []
        for t, f in zip(curve.thresholds, curve.fractions):
            x = margin + (width - 2 * margin) * float(t) / tmax
            y = height - margin - (height - 2 * margin) * float(f)
            pts.append(f"{x:.2f},{y:.2f}")
        color = palette[ci % len(palette)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{" ".join(pts)}"/>'
        )
        label = curve.method if curve.lam is None else f"{curve.method} λ={curve.lam}"
        parts.append(
            f'<text x="{width - margin - 150}" y="{margin + 16 * ci}" '
            f'fill="{color}" font-size="12">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _cmd_benchmark(args) -> int:
    opts = _Options(args)
    collection = _collection(opts)
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    lams = _parse_lams(opts.get("lam", 0.978))
    grid = default_grid(opts.get("grid_count", 100, int), opts.get("grid_max", 0.5, float))
    result = run_benchmark(
        collection,
        methods=methods,
        lams=lams,
        to_mean=bool(args.to_mean),
        grid=grid,
        normalize=not args.unnormalized,
        epsilon=opts.get("epsilon", None, float),
        max_paths=opts.get("max_paths", 10**6, int),
    )
    header = _provenance_header(
        "benchmark", opts.get("seed", 0, int),
        opts.config_dict(
            manifest=args.manifest, methods=",".join(methods),
            lams=[float(l) for l in lams], to_mean=bool(args.to_mean),
            normalized=not args.unnormalized,
        ),
    )
    _emit(args.out, header + "method,lambda,threshold,fraction\n" + "".join(_curve_rows(result.curves)))
    if args.svg:
        atomic_write(args.svg, _curves_svg(result.curves))
    _info(args, f"{len(result.curves)} curves over {len(result.pairs)} pairs")
    return 0


def _cmd_lattice(args) -> int:
    opts = _Options(args)
    side = opts.get("side", 31, int)
    seed = opts.get("seed", 0, int)
    lattice = build_lattice(side)
    report = lattice_walks(
        lattice,
        mode=args.mode,
        count=opts.get("walks", 100, int),
        seed=seed,
        source=opts.get("source", None, int),
        target=opts.get("target", None, int),
        beta=opts.get("beta", 1.0, float),
        max_steps=opts.get("max_steps", 100_000, int),
    )
    lines = [
        _provenance_header(
            "lattice", seed,
            opts.config_dict(side=side, mode=args.mode, walks=len(report.walks),
                             discarded=report.discarded),
        ),
        "walk_id,step,x,y\n",
    ]
    for wid, walk in enumerate(report.walks):
        for step, v in enumerate(walk):
            x, y = lattice.coords[v]
            lines.append(f"{wid},{step},{_fmt(x)},{_fmt(y)}\n")
    _emit(args.out, "".join(lines))
    _info(
        args,
        f"{len(report.walks)} {report.mode} walks, {report.discarded} discarded, "
        f"max deviation {max(report.deviations):.4f}",
    )
    return 0


def _cmd_holonomy(args) -> int:
    opts = _Options(args)
    seed = opts.get("seed", 0, int)
    trials = opts.get("trials", 50, int)
    rng = np.random.default_rng(seed)
    lines = [
        _provenance_header("holonomy", seed, opts.config_dict(trials=trials)),
        "trial,area,deficit,bound,bound_satisfied,integration_gap\n",
    ]
    worst_gap = 0.0
    for trial in range(trials):
        tri = random_triangle(rng)
        v = tangent_toward(tri.p, tri.q)
        tv = TangentVector(tri.p, v)
        res = holonomy_deficit(tri, tv)
        numeric = transport_along_path(GeodesicLegPath((tri.p, tri.r, tri.q)), tv, method="rk4")
        gap = float(np.linalg.norm(numeric.vector - res.two_leg))
        worst_gap = max(worst_gap, gap)
        lines.append(
            f"{trial},{_fmt(res.area)},{_fmt(res.deficit)},{_fmt(res.bound)},"
            f"{int(res.bound_satisfied)},{_fmt(gap)}\n"
        )
    _emit(args.out, "".join(lines))
    _info(args, f"{trials} trials, worst closed-vs-integrated gap {worst_gap:.3e}")
    return 0


def _cmd_synth(args) -> int:
    opts = _Options(args)
    collection = synth_collection(
        n_shapes=opts.get("shapes", 8, int),
        n_points=opts.get("points", 300, int),
        deform_amplitude=opts.get("amplitude", 0.08, float),
        seed=opts.get("seed", 0, int),
        map_source="truth" if args.truth_maps else "align",
        landmark_count=opts.get("landmarks", 16, int),
        allow_duplicates=bool(args.allow_duplicates),
    )
    manifest = save_collection(collection, args.out_dir)
    print(manifest)
    return 0


def _cmd_stability(args) -> int:
    opts = _Options(args)
    collection = _collection(opts)
    if args.add_far is not None:
        after = add_far_shape(collection, factor=args.add_far)
        edit = {"kind": "add_far", "factor": args.add_far}
    else:
        after = remove_shape(collection, args.remove)
        edit = {"kind": "remove", "shape": args.remove}
    lam = opts.get("lam", 0.0, float)
    report = stability_report(collection, after, lam=lam)
    payload = {
        "edit": edit,
        "shared_ids": list(report.shared_ids),
        "mst_before": [list(e) for e in report.mst_before],
        "mst_after": [list(e) for e in report.mst_after],
        "mst_changed": report.mst_changed,
        "flow_edge_diff": {f"{a}->{b}": v for (a, b), v in sorted(report.flow_edge_diff.items())},
        "tv": {f"{a}->{b}": v for (a, b), v in sorted(report.tv.items())},
        "provenance": {
            "version": __version__,
            "command": "stability",
            "seed": opts.get("seed", 0, int),
            "config": opts.config_dict(manifest=args.manifest, lam=lam, **edit),
        },
    }
    _emit(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _info(args, f"mst_changed={report.mst_changed}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    if manifest:
        p.add_argument("--manifest", required=True, help="collection manifest JSON")
        p.add_argument("--allow-duplicates", action="store_true")
    p.add_argument("--config", help="KEY=VALUE defaults file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="worker thread cap")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    p.add_argument("--out", default=None, help="output path (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrsync",
        description="Correspondence synchronization across shape collections",
    )
    parser.add_argument("--version", action="version", version=f"corrsync {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="emit one pair's directed flow graph")
    _add_common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(func=_cmd_flow)

    p = sub.add_parser("propagate", help="soft correspondence for one pair")
    _add_common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--points", default="landmarks",
                   help="comma-separated source vertices, or 'landmarks'")
    p.add_argument("--strict", action="store_true",
                   help="drop the direct path when it falls below the threshold")
    p.add_argument("--max-paths", dest="max_paths", type=int, default=None)
    p.set_defaults(func=_cmd_propagate)

    p = sub.add_parser("baseline", help="single-route propagation")
    _add_common(p)
    p.add_argument("--method", required=True, choices=("direct", "mst", "shortest"))
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--epsilon", type=float, default=None,
                   help="pruning threshold for --method shortest")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("match", help="sparse landmark matching for one pair")
    _add_common(p)
    p.add_argument("--pair", required=True, help="source,target shape ids")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--max-matches", dest="max_matches", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--landmarks", type=int, default=None,
                   help="farthest-point landmark count when shapes carry none")
    p.add_argument("--hops", type=int, default=None)
    p.add_argument("--knn", type=int, default=None)
    p.add_argument("--interpolated", default=None,
                   help="also write a dense interpolated map to this path")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("benchmark", help="error curves for propagation methods")
    _add_common(p)
    p.add_argument("--methods", default=None, help="comma-separated subset of "
                   + ",".join(METHODS))
    p.add_argument("--lambda", dest="lam", default=None,
                   help="threshold or comma-separated sweep")
    p.add_argument("--to-mean", dest="to_mean", action="store_true",
                   help="only score pairs into the central hub shape")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--grid-count", dest="grid_count", type=int, default=None)
    p.add_argument("--grid-max", dest="grid_max", type=float, default=None)
    p.add_argument("--unnormalized", action="store_true")
    p.add_argument("--max-paths", dest="max_paths", type=int, default=None)
    p.add_argument("--svg", default=None, help="also render curves to this SVG path")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("lattice", help="grid walk comparison")
    _add_common(p, manifest=False)
    p.add_argument("--mode", required=True, choices=("standard", "nonbacktracking", "eop"))
    p.add_argument("--walks", type=int, default=None)
    p.add_argument("--side", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--source", type=int, default=None)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.set_defaults(func=_cmd_lattice)

    p = sub.add_parser("holonomy", help="transport deficit trials on the sphere")
    _add_common(p, manifest=False)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=_cmd_holonomy)

    p = sub.add_parser("synth", help="generate a synthetic collection")
    _add_common(p, manifest=False)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--shapes", type=int, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--landmarks", type=int, default=None)
    p.add_argument("--truth-maps", dest="truth_maps", action="store_true",
                   help="store exact identity maps instead of aligned ones")
    p.add_argument("--allow-duplicates", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("stability", help="collection edit impact report")
    _add_common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--add-far", dest="add_far", nargs="?", const=10.0,
                       type=float, default=None,
                       help="add a uniformly distant shape (optional factor)")
    group.add_argument("--remove", default=None, help="shape id to remove")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=_cmd_stability)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CorrsyncError as exc:
        print(f"corrsync: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"corrsync: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``probebake {import,bake,eval,render,tod,fixtures}``."""

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy import linalg

from .baker import NumericalError
from .config import load_config

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3


def _vec3(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return tuple(parts)


def _add_config_flags(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--density", type=float)
    p.add_argument("--bake-dirs", type=int)
    p.add_argument("--train-dirs", type=int)
    p.add_argument("--train-min-angle", type=float)
    p.add_argument("--lambda", dest="reg_lambda", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", nargs=2, type=float, metavar=("START", "END"))
    p.add_argument("--probe-count", help="integer or 'auto'")
    p.add_argument("--n-assoc", type=int)
    p.add_argument("--seed", type=int)


def _config(args):
    overrides = {k: getattr(args, k, None) for k in
                 ("density", "bake_dirs", "train_dirs", "train_min_angle", "reg_lambda", "iters",
                  "probe_count", "n_assoc", "seed")}
    if getattr(args, "lr", None):
        overrides["lr"] = list(args.lr)
    return load_config(args.config, overrides)


def cmd_import(args):
    from .pipeline import import_mesh

    config = _config(args)
    res = import_mesh(args.mesh, config, args.dump_samples)
    print(f"{args.mesh}: {res.probe_count} probes, {res.n_vertices} vertices, "
          f"{res.elapsed:.1f} s -> {res.paths[0]}")
    return EXIT_OK


def cmd_bake(args):
    from .codec import save_pmap
    from .pipeline import bake_scene

    config = _config(args)
    pmap, coeffs, meta = bake_scene(args.scene, config)
    out = args.out or str(Path(args.scene).with_suffix(".pmap"))
    save_pmap(pmap, out, meta)
    if args.dump_probes:
        from .baker import ProbeSet

        Path(args.dump_probes).write_text(ProbeSet(coeffs).dump_text())
    print(f"{args.scene}: {pmap.probe_count} probes in {pmap.width}x{pmap.height} probemap -> {out}")
    return EXIT_OK


def cmd_eval(args):
    from .pipeline import evaluate_scene, report_json

    config = _config(args)
    reports = evaluate_scene(args.scene, args.pmap, config, args.lod)
    text = report_json(reports)
    if args.out:
        Path(args.out).write_text(text + "\n")
    for r in reports:
        print(f"{r.label:9s} mRMSE {r.mrmse:.6f}  memory {r.memory_bytes} B")
    return EXIT_OK


def cmd_render(args):
    from .evaluate import Camera
    from .pipeline import render_scene

    config = _config(args)
    camera = Camera(args.eye, args.look_at, args.up, args.fov)
    _, decoded = render_scene(args.scene, args.pmap, args.out, config, args.lod,
                              (args.width, args.height), camera, args.reference, args.normal_map)
    if decoded:
        print(f"decoded {decoded['probes']} probes reading {decoded['texels']} texels")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_tod(args):
    from .pipeline import tod_blend

    config = _config(args)
    a, b = args.maps
    out = args.out or str(Path(a).with_name(f"{Path(a).stem}_t{args.t:g}.pmap"))
    tod_blend(a, b, args.t, out, config)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fixtures(args):
    from .fixtures import write_fixtures

    for path in write_fixtures(args.outdir):
        print(path)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="probebake", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="distribute probes on a mesh and write its .assoc")
    p.add_argument("mesh")
    p.add_argument("--dump-samples", metavar="CSV", help="write surface samples as CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("bake", help="bake a scene into a .pmap")
    p.add_argument("scene")
    p.add_argument("--out")
    p.add_argument("--dump-probes", metavar="TXT", help="write 27 floats per probe")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("eval", help="score fitted probes against the projection baseline")
    p.add_argument("scene")
    p.add_argument("--pmap", required=True)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--lod", type=int, choices=(0, 1), default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a baked scene to PNG or PPM")
    p.add_argument("scene")
    p.add_argument("--pmap")
    p.add_argument("--out", required=True)
    p.add_argument("--lod", type=int, choices=(0, 1), default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--eye", type=_vec3, default=(0.0, -3.4, 1.0))
    p.add_argument("--look-at", type=_vec3, default=(0.0, 0.0, 1.0))
    p.add_argument("--up", type=_vec3, default=(0.0, 0.0, 1.0))
    p.add_argument("--fov", type=float, default=45.0)
    p.add_argument("--normal-map", type=float, default=0.3, help="procedural bump amplitude")
    p.add_argument("--reference", action="store_true", help="ray-traced reference instead of probes")
    _add_config_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("tod", help="blend two probemaps")
    p.add_argument("--maps", nargs=2, required=True, metavar=("A", "B"))
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_tod)

    p = sub.add_parser("fixtures", help="write the built-in test scenes")
    p.add_argument("outdir")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "render" and not args.reference and not args.pmap:
        print("error: render needs --pmap unless --reference is given", file=sys.stderr)
        return EXIT_BAD_INPUT
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (NumericalError, linalg.LinAlgError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())

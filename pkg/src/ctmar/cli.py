"""``ctmar`` command line: phantom -> simulate -> li / fbp / mar -> metrics.

Exit codes: 0 ok, 1 usage, 2 I/O or unreadable file, 3 validation, 4 numerical failure.
Every command is deterministic; all randomness comes from ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, set_threads
from .errors import DivergenceError, FormatError, ValidationError
from .geometry import fan_from_config, geometry_config, image_from_config, load_config
from .mar import SolverConfig, iterative_mar, li_inpaint, trace_refine
from .metrics import evaluate
from .phantom import phantom_from_config
from .ril import make_plan, ril_forward
from .simulate import NoiseSpec, default_spectrum, load_spectrum, make_instance
from .tensor_io import WindowSpec, export_png, load_tensor, save_tensor

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("ctmar")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class NumericalFailure(Exception):
    pass


def _dtype(args):
    return np.float64 if getattr(args, "f64", False) else np.float32


def _write_manifest(path, command, config, outputs):
    doc = {"tool": "ctmar", "version": __version__, "command": command,
           "config": config, "outputs": outputs}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _maybe_manifest(args, command, config, outputs):
    if args.manifest:
        _write_manifest(args.manifest, command, config, outputs)


def _geometry(path):
    cfg = load_config(path)
    side, spacing = image_from_config(cfg)
    return fan_from_config(cfg), side, spacing


# -- commands ---------------------------------------------------------------------

def cmd_phantom(args):
    cfg = load_config(args.config)
    if args.side is not None:
        cfg["side"] = args.side
    image, mask = phantom_from_config(cfg)
    dt = _dtype(args)
    save_tensor(image.astype(dt), args.out)
    outputs = {"phantom": str(args.out)}
    if args.metal_out:
        save_tensor(mask.astype(dt), args.metal_out)
        outputs["metal"] = str(args.metal_out)
    _maybe_manifest(args, "phantom", cfg, outputs)


def cmd_simulate(args):
    fan, side, spacing = _geometry(args.geom)
    x = load_tensor(args.phantom)
    mask = load_tensor(args.metal)
    if x.shape != (side, side) or mask.shape != (side, side):
        raise ValidationError(f"phantom {x.shape} / metal {mask.shape} do not match side {side}")
    spectrum = load_spectrum(args.spectrum) if args.spectrum else default_spectrum()
    noise = None if args.no_noise else NoiseSpec(args.photons, args.seed)
    plan = make_plan(fan, side, spacing)
    dt = _dtype(args)
    inst = make_instance(x, mask, spectrum, fan, noise, plan, args.supersample, dtype=dt)
    outdir = Path(args.outdir)
    paths = inst.save(outdir)
    config = dict(inst.meta, geometry=geometry_config(fan, side, spacing),
                  precision="f64" if dt is np.float64 else "f32", fbp_gain=plan.gain)
    _write_manifest(outdir / "manifest.json", "simulate", config, paths)


def cmd_fbp(args):
    fan, side, spacing = _geometry(args.geom)
    y = load_tensor(args.sino)
    plan = make_plan(fan, side, spacing, dtype=y.dtype)
    save_tensor(ril_forward(y, plan), args.out)
    _maybe_manifest(args, "fbp", {"geometry": geometry_config(fan, side, spacing),
                                  "fbp_gain": plan.gain}, {"image": str(args.out)})


def cmd_li(args):
    y = load_tensor(args.sino)
    trace = load_tensor(args.trace)
    save_tensor(li_inpaint(y, trace), args.out)
    _maybe_manifest(args, "li", {}, {"sinogram": str(args.out)})


def cmd_mar(args):
    cfg = SolverConfig.from_json(args.config) if args.config else SolverConfig()
    fan, side, spacing = _geometry(args.geom)
    y = load_tensor(args.sino)
    trace = load_tensor(args.trace)
    outputs = {"image": str(args.out)}
    if args.mode == "iterative":
        init = load_tensor(args.init) if args.init else np.zeros((side, side))
        x = iterative_mar(y, trace, cfg, init, fan, spacing, log_path=args.log)
    else:
        if not args.ref:
            raise ValidationError("trace-refine needs --ref (reference image)")
        plan = make_plan(fan, side, spacing)
        y_ref = trace_refine(li_inpaint(y, trace), trace, load_tensor(args.ref), cfg, plan,
                             log_path=args.log)
        x = ril_forward(y_ref, plan)
        if args.sino_out:
            save_tensor(y_ref.astype(y.dtype), args.sino_out)
            outputs["sinogram"] = str(args.sino_out)
    save_tensor(np.asarray(x).astype(y.dtype), args.out)
    if args.log:
        outputs["log"] = str(args.log)
    _maybe_manifest(args, "mar", {"mode": args.mode, "solver": cfg.to_dict(),
                                  "geometry": geometry_config(fan, side, spacing)}, outputs)


def cmd_metrics(args):
    x = load_tensor(args.x)
    ref = load_tensor(args.ref)
    exclude = load_tensor(args.exclude_metal) > 0.5 if args.exclude_metal else None
    if args.fov:
        from .geometry import fov_mask

        outside = ~fov_mask(ref.shape[0], args.spacing)
        exclude = outside if exclude is None else (exclude | outside)
    rep = evaluate(x, ref, args.peak, exclude)
    if rep.identical:
        print("identical")
    else:
        print(f"psnr_db {rep.psnr:.6f}")
    print(f"ssim {rep.ssim:.6f}")
    print(f"pixels {rep.n_pixels}")
    print(f"peak {rep.peak:.6g}")


def cmd_gradcheck(args):
    from .checks import run_gradcheck

    results = run_gradcheck(f64=args.f64, side=args.side, seed=args.seed, n_pairs=args.pairs)
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<24s} max_rel {r.max_rel:.3e}  tol {r.tol:.0e}  {status}")
        ok &= r.passed
    if not ok:
        raise NumericalFailure("gradient / adjoint check failed")


def cmd_export_png(args):
    export_png(load_tensor(getattr(args, "in")), WindowSpec(args.center, args.width), args.out)


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctmar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ctmar {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--manifest", type=Path, default=None,
                        help="write a JSON manifest of config and outputs here")
        return sp

    sp = add("phantom", cmd_phantom, "build an ellipse phantom from JSON")
    sp.add_argument("--config", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--metal-out", type=Path)
    sp.add_argument("--side", type=int)
    sp.add_argument("--f64", action="store_true", help="write float64 instead of float32")

    sp = add("simulate", cmd_simulate, "synthesize a metal-corrupted instance")
    sp.add_argument("--phantom", required=True, type=Path)
    sp.add_argument("--metal", required=True, type=Path)
    sp.add_argument("--spectrum", type=Path, help="spectrum CSV (default: built-in)")
    sp.add_argument("--geom", required=True, type=Path)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--photons", type=float, default=NoiseSpec.photons)
    sp.add_argument("--no-noise", action="store_true")
    sp.add_argument("--supersample", type=int, default=4)
    sp.add_argument("--outdir", required=True, type=Path)
    sp.add_argument("--f64", action="store_true")

    sp = add("fbp", cmd_fbp, "fan-beam FBP of a sinogram")
    sp.add_argument("--sino", required=True, type=Path)
    sp.add_argument("--geom", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)

    sp = add("li", cmd_li, "linear-interpolation inpainting of the metal trace")
    sp.add_argument("--sino", required=True, type=Path)
    sp.add_argument("--trace", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)

    sp = add("mar", cmd_mar, "iterative MAR or RIL-driven trace refinement")
    sp.add_argument("--mode", required=True, choices=["iterative", "trace-refine"])
    sp.add_argument("--config", type=Path, help="solver JSON (default settings if omitted)")
    sp.add_argument("--sino", required=True, type=Path, help="corrupted fan sinogram")
    sp.add_argument("--trace", required=True, type=Path)
    sp.add_argument("--geom", required=True, type=Path)
    sp.add_argument("--init", type=Path, help="iterative: initial image (default zeros)")
    sp.add_argument("--ref", type=Path, help="trace-refine: reference image")
    sp.add_argument("--sino-out", type=Path, help="trace-refine: refined sinogram")
    sp.add_argument("--log", type=Path, help="per-iteration CSV log")
    sp.add_argument("--out", required=True, type=Path)

    sp = add("metrics", cmd_metrics, "PSNR / SSIM of an image against a reference")
    sp.add_argument("--x", required=True, type=Path)
    sp.add_argument("--ref", required=True, type=Path)
    sp.add_argument("--exclude-metal", type=Path, help="metal mask to leave out")
    sp.add_argument("--fov", action="store_true", help="also leave out pixels outside the FOV")
    sp.add_argument("--spacing", type=float, default=1.0)
    sp.add_argument("--peak", type=float, default=None)

    sp = add("gradcheck", cmd_gradcheck, "adjoint dot tests and finite-difference gradients")
    sp.add_argument("--f64", action="store_true")
    sp.add_argument("--side", type=int, default=32)
    sp.add_argument("--pairs", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("export-png", cmd_export_png, "window a tensor into an 8-bit PNG")
    sp.add_argument("--in", required=True, type=Path)
    sp.add_argument("--center", required=True, type=float)
    sp.add_argument("--width", required=True, type=float)
    sp.add_argument("--out", required=True, type=Path)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        args.func(args)
    except (OSError, FormatError) as exc:
        print(f"ctmar: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"ctmar: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivergenceError, NumericalFailure, FloatingPointError) as exc:
        print(f"ctmar: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

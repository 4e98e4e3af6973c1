"""Command-line front end.

Every command writes its outputs to explicitly named paths and a JSON run
manifest next to them (``<output>.manifest.json``). ``rerun`` replays a
manifest and reproduces byte-identical dataset and CSV files.

Exit codes: 0 success, 2 invalid arguments, 3 solver/runtime failure,
4 file or format errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, fileio
from .dictlearn import SolverDivergedError, method_config, solve
from .kspace import AcquiredData, EchoStack, adjoint, forward, make_mask, per_echo_masks
from .metrics import difference_image, snr_db
from .patches import BOUNDARIES, PatchConfig
from .phantom import PhantomSpec, make_phantom
from .tuning import TuneGrid, format_tune_table, lcurve_tune

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

METHODS = ("rsddl", "lrddl", "shallow-dl", "zero-fill")
DEEP = ("rsddl", "lrddl")
CSV_COLUMNS = ("method", "layers", "lines", "snr_db")

log = logging.getLogger("echodl")


class UsageError(ValueError):
    pass


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list
    cwd: str
    config: dict
    seeds: dict
    inputs: list
    outputs: list
    version: str = __version__
    wall_time: float = 0.0
    metrics: dict = dataclasses.field(default_factory=dict)

    def write(self, path):
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


def _lines_from(args, height):
    if args.lines is not None:
        return args.lines
    if height % args.accel:
        raise UsageError(f"acceleration {args.accel} does not divide height {height}")
    return height // args.accel


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# -- commands -----------------------------------------------------------------


def cmd_phantom(args):
    spec = PhantomSpec(
        size=args.size,
        n_echoes=args.echoes,
        echo_spacing_ms=args.echo_spacing,
        seed=args.seed,
    )
    img = make_phantom(spec)
    fileio.save(args.output, img, meta={"kind": "phantom"})
    print(f"phantom {spec.size}x{spec.size}, {spec.n_echoes} echoes -> {args.output}")
    config = {"size": spec.size, "echoes": spec.n_echoes, "echo_spacing_ms": spec.echo_spacing_ms}
    return config, {"seed": args.seed}, [], [args.output], {}


def cmd_mask(args):
    lines = _lines_from(args, args.size)
    seed = args.seed ^ args.echo
    mask = make_mask(args.size, lines, args.center_fraction, seed)
    fileio.save(args.output, mask)
    print(f"mask {lines}/{args.size} lines, seed {seed} -> {args.output}")
    config = {"size": args.size, "lines": lines, "center_fraction": args.center_fraction, "echo": args.echo}
    return config, {"base_seed": args.seed, "mask_seed": seed}, [], [args.output], {}


def cmd_undersample(args):
    truth = fileio.load(args.input)
    if not isinstance(truth, EchoStack):
        raise UsageError(f"{args.input} does not hold images")
    lines = _lines_from(args, truth.height)
    masks = per_echo_masks(truth.height, lines, truth.n_echoes, args.seed, args.center_fraction, truth.width)
    d = forward(truth, masks, noise_sigma=args.noise_sigma, seed=args.seed)
    fileio.save(args.output, d)
    print(f"undersampled {truth.n_echoes} echoes to {lines}/{truth.height} lines -> {args.output}")
    config = {"lines": lines, "center_fraction": args.center_fraction, "noise_sigma": args.noise_sigma}
    seeds = {"base_seed": args.seed, "echo_seeds": [m.seed for m in masks]}
    return config, seeds, [args.input], [args.output], {}


def _solver_config(args):
    base = method_config({"rsddl": "rsddl", "lrddl": "lrddl"}.get(args.method, "shallow"))
    kw = {
        name: getattr(args, name)
        for name in ("lam", "gamma", "mu1", "mu2", "mu3", "outer_iters", "inner_iters", "tol")
        if getattr(args, name) is not None
    }
    patch = PatchConfig(
        args.patch_size or base.patch.patch_size,
        args.stride or base.patch.stride,
        args.boundary or base.patch.boundary,
    )
    if args.method in DEEP:
        kw.update(layers=args.layers or 3)
    return dataclasses.replace(base, patch=patch, seed=args.seed, **kw)


def cmd_recon(args):
    if args.layers is not None and args.method not in DEEP:
        raise UsageError(f"--layers applies to deep methods only, not {args.method}")
    if args.method != "zero-fill" and args.seed is None:
        raise UsageError("--seed is required for dictionary methods")
    if args.tune and args.method == "zero-fill":
        raise UsageError("--tune has no effect on zero-fill")
    d = fileio.load(args.input)
    if not isinstance(d, AcquiredData):
        raise UsageError(f"{args.input} does not hold k-space data")
    truth = fileio.load(args.truth) if args.truth else None
    inputs = [args.input] + ([args.truth] if args.truth else [])
    lines = d.masks[0].n_lines
    outputs = [args.output]
    metrics = {}

    if args.method == "zero-fill":
        images, config, layers = adjoint(d), {}, 0
    else:
        cfg = _solver_config(args)
        if args.tune:
            records = []
            grid = TuneGrid(args.lambda_grid, args.gamma_grid, cfg)
            cfg = lcurve_tune(grid, d, records=records)
            print(format_tune_table(records))
            metrics["tuned"] = {"lam": cfg.lam, "gamma": cfg.gamma}
        images, report = solve(d, cfg, truth)
        config, layers = cfg.to_dict(), cfg.layers
        report_path = Path(str(args.output) + ".report.json")
        report_path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
        outputs.append(str(report_path))
        metrics.update(iterations=report.iterations_run, final_objective=report.objective_trace[-1])

    meta = {"method": args.method, "layers": layers, "lines": lines}
    fileio.save(args.output, images, meta=meta)
    if truth is not None:
        metrics["snr_db"] = snr_db(images, truth)
        print(f"{args.method}: SNR {metrics['snr_db']:.2f} dB")
    print(f"{args.method} reconstruction -> {args.output}")
    config = {"method": args.method, **config}
    return config, {"seed": args.seed}, inputs, outputs, metrics


def snr_rows(truth, recon_paths):
    rows = []
    for path in recon_paths:
        img, meta = fileio.load(path, with_meta=True)
        if not isinstance(img, EchoStack):
            raise UsageError(f"{path} does not hold images")
        rows.append(
            {
                "method": meta.get("method", Path(path).stem),
                "layers": meta.get("layers", ""),
                "lines": meta.get("lines", ""),
                "snr_db": snr_db(img, truth),
                "_image": img,
                "_path": path,
            }
        )
    return rows


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r["method"], r["layers"], r["lines"], f"{r['snr_db']:.4f}"])
    return buf.getvalue()


def format_table(rows) -> str:
    out = [f"{'method':<12} {'layers':>6} {'lines':>6} {'SNR (dB)':>10}"]
    out += [f"{r['method']:<12} {r['layers']!s:>6} {r['lines']!s:>6} {r['snr_db']:>10.2f}" for r in rows]
    return "\n".join(out)


def cmd_eval(args):
    truth = fileio.load(args.truth)
    if not isinstance(truth, EchoStack):
        raise UsageError(f"{args.truth} does not hold images")
    rows = snr_rows(truth, args.recons)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    csv_path = out / args.csv
    csv_path.write_bytes(format_csv(rows).encode("utf-8"))
    txt_path = csv_path.with_suffix(".txt")
    table = format_table(rows)
    txt_path.write_text(table + "\n")
    print(table)
    outputs += [str(csv_path), str(txt_path)]

    if not args.no_png:
        tmag = truth.magnitude()
        img_window = (0.0, float(tmag.max()))
        # difference maps share the truth window so darkness compares across methods
        diff_window = img_window
        for j in range(truth.n_echoes):
            p = out / f"truth_echo{j:02d}.png"
            fileio.export_png(tmag[j], p, img_window)
            outputs.append(str(p))
        for r in rows:
            stem = Path(r["_path"]).stem
            mag = r["_image"].magnitude()
            for j in range(truth.n_echoes):
                p = out / f"{stem}_echo{j:02d}.png"
                q = out / f"{stem}_diff_echo{j:02d}.png"
                fileio.export_png(mag[j], p, img_window)
                fileio.export_png(difference_image(r["_image"], truth, j), q, diff_window)
                outputs += [str(p), str(q)]

    metrics = {Path(r["_path"]).name: r["snr_db"] for r in rows}
    return {"csv": args.csv}, {}, [args.truth] + list(args.recons), outputs, metrics


def cmd_rerun(args):
    man = RunManifest.read(args.manifest)
    prev = os.getcwd()
    os.chdir(man.cwd)
    try:
        return main(man.argv)
    finally:
        os.chdir(prev)


# -- parser -------------------------------------------------------------------


def _add_lines(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--lines", type=int, help="phase-encode lines per echo")
    g.add_argument("--accel", type=int, help="acceleration factor (height / lines)")
    p.add_argument("--center-fraction", type=float, default=0.33)


def build_parser():
    ap = argparse.ArgumentParser(prog="echodl", description="Multi-echo MRI deep dictionary reconstruction")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="synthesize a multi-echo phantom")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--echoes", type=int, default=8)
    p.add_argument("--echo-spacing", type=float, default=PhantomSpec.echo_spacing_ms)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_phantom, output_key="output")

    p = sub.add_parser("mask", help="write a single phase-encode sampling mask")
    p.add_argument("--size", type=int, default=256)
    _add_lines(p)
    p.add_argument("--seed", type=int, required=True, help="base seed")
    p.add_argument("--echo", type=int, default=0, help="echo index; mask seed is seed XOR echo")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_mask, output_key="output")

    p = sub.add_parser("undersample", help="simulate per-echo undersampled acquisition")
    p.add_argument("-i", "--input", required=True)
    _add_lines(p)
    p.add_argument("--seed", type=int, required=True, help="base seed; echo j uses seed XOR j")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_undersample, output_key="output")

    p = sub.add_parser("recon", help="reconstruct images from k-space data")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--layers", type=int, choices=(2, 3, 4))
    p.add_argument("--seed", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mu1", type=float)
    p.add_argument("--mu2", type=float)
    p.add_argument("--mu3", type=float)
    p.add_argument("--outer-iters", type=int)
    p.add_argument("--inner-iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--boundary", choices=BOUNDARIES)
    p.add_argument("--tune", action="store_true", help="pick lam and gamma on the L-curve first")
    p.add_argument("--lambda-grid", type=_floats, default=(0.003, 0.01, 0.03, 0.1))
    p.add_argument("--gamma-grid", type=_floats, default=(1.0, 3.0, 10.0))
    p.add_argument("--truth", help="ground-truth images for SNR reporting")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_recon, output_key="output")

    p = sub.add_parser("eval", help="SNR table, reconstruction and difference PNGs")
    p.add_argument("--truth", required=True)
    p.add_argument("recons", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--csv", default="snr.csv")
    p.add_argument("--no-png", action="store_true")
    p.set_defaults(func=cmd_eval, output_key="out_dir")

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun, output_key=None)
    return ap


def _run(args, argv):
    t0 = time.perf_counter()
    result = args.func(args)
    if args.output_key is None:
        return result
    config, seeds, inputs, outputs, metrics = result
    man = RunManifest(
        command=args.command,
        argv=list(argv),
        cwd=os.getcwd(),
        config=config,
        seeds=seeds,
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
        wall_time=time.perf_counter() - t0,
        metrics=metrics,
    )
    target = getattr(args, args.output_key)
    path = Path(target) / "manifest.json" if args.command == "eval" else manifest_path(target)
    man.write(path)
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _run(args, argv)
    except (fileio.DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverDivergedError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, TypeError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit():
    sys.exit(main())

"""Command-line entry point: ``egpp {pp,eval,bench,synth,losses,arch}``.

Exit codes: 0 ok, 2 invalid input or flags, 3 file I/O or parse failure,
4 empty input. Reports use 4-decimal fixed formatting unless ``--raw``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import archspec, formats, losses, metrics, synth
from .edge_guided import (
    CONVENTIONAL_RNG,
    MODES,
    PPConfig,
    boundary_masks,
    edge_guided_pp,
    gradient_response,
    normalize_weights,
    post_process,
    synthesize,
)

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_EMPTY = 0, 2, 3, 4
THREADS_ENV = "EGPP_THREADS"


class EmptyInputError(Exception):
    pass


def _default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _log(msg):
    print(msg, file=sys.stderr)


def _fmt(v, raw):
    return repr(float(v)) if raw else f"{v:.4f}"


def _emit(rows, header, report, raw, out=None):
    """Print a table of (label, values...) rows as text, tsv or json."""
    out = out or sys.stdout
    if report == "json":
        payload = [dict(zip(header, r)) for r in rows]
        out.write(json.dumps(payload, indent=None if raw else 1) + "\n")
        return
    sep = "\t" if report == "tsv" else None
    cells = [[str(h) for h in header]]
    for r in rows:
        cells.append([v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else _fmt(v, raw))
                      for v in r])
    if sep:
        out.write("\n".join(sep.join(c) for c in cells) + "\n")
    else:
        widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
        out.write("\n".join("  ".join(v.rjust(w) if i else v.ljust(w)
                                      for i, (v, w) in enumerate(zip(c, widths))).rstrip()
                            for c in cells) + "\n")


# --------------------------------------------------------------------------
# pp


def _pp_config(args, mode):
    rng = args.rng
    if rng is None:
        rng = CONVENTIONAL_RNG if mode == "pp" else PPConfig().rng
    return PPConfig().with_overrides(radius=args.radius, gain=args.gain, offset=args.offset,
                                     rng=rng, ramp_slope=args.ramp_slope)


def _read_normalized(path, units):
    """Disparity in normalized units plus the factor that restores file units."""
    disp, valid, file_units = formats.read_disparity(path)
    if units == "auto":
        units = "px" if file_units == "px" else "norm"
    if units == "px":
        width = disp.shape[1]
        _log(f"{path}: pixel disparity normalized by width {width}")
        return disp / width, float(width)
    return disp, 1.0


def cmd_pp(args):
    cfg = _pp_config(args, args.mode)
    d_l, scale = _read_normalized(args.d_l, args.units)
    d_flip, scale_b = _read_normalized(args.d_flipped, args.units)
    if scale != scale_b:
        raise ValueError(f"inputs disagree on width: {scale} vs {scale_b}")
    out = post_process(d_l, d_flip, mode=args.mode, cfg=cfg, threads=args.threads) * scale
    fmt = args.format or ("png16" if Path(args.output).suffix.lower() == ".png" else "pfm")
    if fmt == "png16":
        formats.write_png16_disparity(args.output, out)
    else:
        formats.write_pfm(args.output, out)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def _eval_entry(entry, cfg, pred_units):
    pred, _, pred_file_units = formats.read_disparity(entry.pred_path)
    gt, gt_valid, _ = formats.read_disparity(entry.gt_path)
    units = pred_file_units if pred_units == "auto" else pred_units
    if units in ("raw", "norm"):
        pred = pred * pred.shape[1]
    return metrics.evaluate_disparity(pred, gt, entry.camera, cfg, gt_valid=gt_valid)


def cmd_eval(args):
    cfg = metrics.EvalConfig(min_depth_m=args.min_depth, max_depth_m=float(args.max_depth),
                             crop=args.crop, median_scale=args.median_scale)
    manifest = formats.load_manifest(args.manifest)
    if len(manifest) == 0:
        raise EmptyInputError(f"manifest {args.manifest} has no entries")
    _log(f"pred units: {args.pred_units} (normalized predictions are scaled by their width to pixels)")
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        reports = list(pool.map(lambda e: _eval_entry(e, cfg, args.pred_units), manifest.entries))
    header = ("file",) + metrics.MetricReport.COLUMNS + ("n_valid",)
    rows = []
    for e, r in zip(manifest.entries, reports):
        rows.append((e.tag or e.pred_path.name, *r.values(), r.n_valid))
    agg = metrics.aggregate(reports)
    rows.append(("mean", *agg.values(), agg.n_valid))
    _emit(rows, header, args.report, args.raw)
    return EXIT_OK


# --------------------------------------------------------------------------
# bench


def _time_ms(fn, iters):
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return np.array(samples)


def bench_scene(height, width, seed=0):
    """A scene-like pair at the requested size for timing."""
    params = synth.SceneParams(height=height, width=width, n_occluders=max(1, width // 40),
                               occluder_width=(max(1, width // 16), max(1, width // 5)),
                               occluder_height=(max(1, height // 4), max(1, height * 3 // 4)),
                               fade_px=max(1, width // 64), border_fade_px=max(1, width // 80), seed=seed)
    scene = synth.generate_scene(params)
    return scene.d_l, scene.d_flip2


def run_bench(height, width, iters, cfg=PPConfig(), threads=1, seed=0):
    """Timing summary (ms) of the fused call and of the staged reference route."""
    d_l, d_pp = bench_scene(height, width, seed)
    edge_guided_pp(d_l, d_pp, cfg, threads=threads)  # compile / warm caches
    total = _time_ms(lambda: edge_guided_pp(d_l, d_pp, cfg, threads=threads), iters)

    masks = boundary_masks(height, width, cfg.rng, cfg.ramp_slope)
    state = {}

    def filt():
        state["r"] = gradient_response(d_l, cfg.radius, "right_edge")
        state["r_pp"] = gradient_response(d_pp, cfg.radius, "left_edge")

    def conf():
        state["e"] = expit((state["r"] - cfg.offset) * cfg.gain)
        state["e_pp"] = expit((state["r_pp"] - cfg.offset) * cfg.gain)

    def norm():
        state["w"] = normalize_weights(state["e"], state["e_pp"], cfg.eps)

    def synth_stage():
        w, w_pp = state["w"]
        synthesize(d_l, d_pp, w * d_l + w_pp * d_pp, masks)

    stages = {}
    for name, fn in (("filter", filt), ("confidences", conf), ("normalize", norm),
                     ("synthesize", synth_stage)):
        fn()
        stages[name] = float(np.median(_time_ms(fn, iters)))
    return {
        "height": height, "width": width, "iters": iters, "threads": threads,
        "median_ms": float(np.median(total)), "p95_ms": float(np.percentile(total, 95)),
        "stages_ms": stages,
    }


def cmd_bench(args):
    if args.iters < 1:
        raise ValueError("--iters must be >= 1")
    cfg = _pp_config(args, "egpp")
    res = run_bench(args.height, args.width, args.iters, cfg, args.threads, args.seed)
    if args.report == "json":
        print(json.dumps(res))
        return EXIT_OK
    rows = [("edge_guided_pp median", res["median_ms"]), ("edge_guided_pp p95", res["p95_ms"])]
    rows += [(f"stage {k} (staged route, median)", v) for k, v in res["stages_ms"].items()]
    print(f"# {res['height']}x{res['width']}, {res['iters']} iters, threads={res['threads']}")
    _emit(rows, ("measure", "ms"), args.report, args.raw)
    return EXIT_OK


# --------------------------------------------------------------------------
# synth


def cmd_synth(args):
    params = synth.SceneParams(height=args.height, width=args.width, n_occluders=args.occluders,
                               fade_px=args.fade, border_fade_px=args.border_fade, seed=args.seed,
                               noise_sigma=args.noise)
    cfg = _pp_config(args, "egpp")
    report = synth.run_suite(params, cfg, n_scenes=args.n_scenes, band_px=args.band, threads=args.threads)
    rows = [(str(r.seed), r.method, r.rmse, r.band_rmse, r.halo) for r in report.rows]
    if args.aggregate:
        rows += [("mean", m, r.rmse, r.band_rmse, r.halo) for m, r in report.aggregate().items()]
    _emit(rows, ("seed", "method", "rmse", "band_rmse", "halo"), args.report, args.raw)
    return EXIT_OK


# --------------------------------------------------------------------------
# losses


def cmd_losses(args):
    img_l = formats.read_image(args.image_l)
    img_r = formats.read_image(args.image_r)
    d_l, _ = _read_normalized(args.disp_l, args.units)
    d_r, _ = _read_normalized(args.disp_r, args.units)
    weights = losses.LossWeights(*args.weights)
    rep = losses.compute_losses(img_l, img_r, d_l, d_r, weights, alpha=args.alpha)
    _emit([tuple(rep.as_dict().values())], tuple(rep.as_dict()), args.report, args.raw)
    return EXIT_OK


# --------------------------------------------------------------------------
# arch


def cmd_arch(args):
    arch = archspec.get_builtin(args.name)
    if args.report == "json":
        shapes = archspec.infer_shapes(arch, args.height, args.width)
        print(json.dumps({
            "name": arch.name, "params": archspec.count_params(arch),
            "layers": [{"name": l.name, "kind": l.kind, "kernel": l.kernel, "in_ch": l.in_ch,
                        "out_ch": l.out_ch, "scale": l.scale, "input": l.input_ref,
                        "params": archspec.layer_params(l),
                        "output": [s.height, s.width, s.channels]}
                       for l, s in zip(arch.layers, shapes)],
        }))
    else:
        sys.stdout.write(archspec.render_table(arch, args.height, args.width,
                                               sep="\t" if args.report == "tsv" else None))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_pp_flags(p):
    g = p.add_argument_group("post-processing")
    g.add_argument("--radius", type=int, help="detection radius N (default 10)")
    g.add_argument("--gain", type=float, help="sigmoid gain a (default 32)")
    g.add_argument("--offset", type=float, help="sigmoid offset b (default 0.5)")
    g.add_argument("--rng", type=float, help="reserved boundary fraction (default 0.02 egpp, 0.05 pp)")
    g.add_argument("--ramp-slope", type=float, help="boundary ramp slope (default 20)")


def _add_report_flags(p):
    p.add_argument("--report", choices=("text", "tsv", "json"), default="text",
                   help="human-readable table, tab-separated, or JSON")
    p.add_argument("--raw", action="store_true", help="full-precision numbers instead of 4 decimals")


def build_parser():
    parser = argparse.ArgumentParser(prog="egpp", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pp", parents=[common], help="post-process a prediction pair")
    p.add_argument("d_l", help="disparity predicted from the image (.pfm or .png)")
    p.add_argument("d_flipped", help="disparity predicted from the mirrored image, not yet flipped back")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mode", choices=MODES, default="egpp")
    p.add_argument("--format", choices=("pfm", "png16"), help="output format (default from extension)")
    p.add_argument("--units", choices=("auto", "px", "norm"), default="auto",
                   help="input disparity units; auto: PNG is pixels, PFM is normalized")
    _add_pp_flags(p)
    p.set_defaults(func=cmd_pp)

    p = sub.add_parser("eval", parents=[common], help="evaluate predictions listed in a manifest")
    p.add_argument("manifest")
    p.add_argument("--max-depth", type=int, choices=(80, 50), default=80)
    p.add_argument("--min-depth", type=float, default=1e-3)
    p.add_argument("--crop", choices=("none", "garg"), default="none")
    p.add_argument("--median-scale", action="store_true")
    p.add_argument("--pred-units", choices=("auto", "px", "norm"), default="auto",
                   help="auto: PNG is pixels, PFM is normalized")
    _add_report_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time edge-guided post-processing")
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    _add_pp_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", parents=[common], help="run the synthetic dis-occlusion suite")
    d = synth.SceneParams()
    p.add_argument("--n-scenes", type=int, default=20)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--height", type=int, default=d.height)
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--occluders", type=int, default=d.n_occluders)
    p.add_argument("--fade", type=int, default=d.fade_px)
    p.add_argument("--border-fade", type=int, default=d.border_fade_px)
    p.add_argument("--noise", type=float, default=0.0, help="additive Gaussian noise sigma")
    p.add_argument("--band", type=int, default=None, help="edge band half-width (default 2N)")
    p.add_argument("--aggregate", action="store_true", help="append per-method mean rows")
    _add_pp_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("losses", parents=[common], help="score the training objective on one pair")
    p.add_argument("image_l")
    p.add_argument("image_r")
    p.add_argument("disp_l")
    p.add_argument("disp_r")
    p.add_argument("--weights", type=float, nargs=3, default=(1.0, 0.5, 1.0),
                   metavar=("AP", "DS", "LR"))
    p.add_argument("--alpha", type=float, default=0.85)
    p.add_argument("--units", choices=("auto", "px", "norm"), default="auto")
    _add_report_flags(p)
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("arch", parents=[common], help="print a built-in encoder table")
    p.add_argument("name", choices=sorted(archspec.BUILTINS))
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--report", choices=("text", "tsv", "json"), default="text")
    p.set_defaults(func=cmd_arch)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2
    try:
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        return args.func(args)
    except EmptyInputError as exc:
        _log(f"egpp: {exc}")
        return EXIT_EMPTY
    except (formats.FormatError, OSError) as exc:
        _log(f"egpp: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _log(f"egpp: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``sphpoly {lut-build,error-report,render,validate}``.

Every flag can also come from a JSON ``--config`` file whose keys are the
flag names with dashes replaced by underscores; flags given on the command
line win.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend
from .approx import ApproxConfig
from .intarith import WIDTHS, IntegerOverflowError
from .io import read_camera, read_particles, read_transfer_function, write_image
from .kernel import kernel_constants, load_kernel
from .lut import DEFAULT_N, build_lut, load_lut, overall_error_E_star, save_lut
from .quantize import (
    DEFAULT_CLUSTERING,
    choose_quanta,
    dataset_stats,
    optimal_tau,
    quantization_error,
    variance_sigma,
)
from .raycast import Camera, TransferFunction, render
from .validate import validate

THREADS_ENV = "SPHPOLY_THREADS"
K_RANGE = (1, 8)
D_RANGE = (1, 6)
FIGURE_VARIANCE = 1e5
DEFAULT_K, DEFAULT_D = 4, 3

DEFAULTS = {
    "kernel": "cubic",
    "K": None,
    "D": None,
    "N": DEFAULT_N,
    "int_width": 64,
    "seed": 0,
    "threads": 1,
    "variance": None,
    "clustering": DEFAULT_CLUSTERING,
    "lut": None,
    "tf": None,
    "camera": None,
    "particles": None,
    "out": None,
    "report": None,
    "backend": None,
    "resolution": 32,
    "K_list": None,
    "D_list": None,
    "widths": None,
    "format": "table",
}


def _ranged(name, lo, hi):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}")
        if not lo <= v <= hi:
            raise argparse.ArgumentTypeError(f"{name} must be in [{lo}, {hi}], got {v}")
        return v

    return parse


def _width(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"int width must be an integer, got {text!r}")
    if v not in WIDTHS:
        raise argparse.ArgumentTypeError(f"int width must be one of {WIDTHS}, got {v}")
    return v


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text!r}")
        return v

    return parse


def _list(item):
    def parse(text):
        return [item(x) for x in text.split(",") if x.strip()]

    return parse


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default values for any flag")
    common.add_argument("--kernel", help="builtin kernel id or kernel JSON file (default: cubic)")
    common.add_argument("--K", type=_ranged("K", *K_RANGE), help="non-trivial pieces per particle")
    common.add_argument("--D", type=_ranged("D", *D_RANGE), help="approximation order")
    common.add_argument("--N", type=_ranged("N", 2, 1 << 24), help="look-up table entries")
    common.add_argument("--int-width", dest="int_width", type=_width, help="integer width: 32, 64 or 128")
    common.add_argument("--seed", type=int, help="random seed for the knot optimizer")
    common.add_argument("--threads", type=_positive(int), help=f"worker processes (env {THREADS_ENV} overrides)")
    common.add_argument("--lut", help="look-up table file (.splt)")
    common.add_argument("--variance", type=_positive(float), help="data variance factor a_max / phi_repr")
    common.add_argument("--backend", choices=("cython", "python"), help="numeric backend")

    parser = argparse.ArgumentParser(prog="sphpoly", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lut-build", parents=[common], help="optimize and write a look-up table")
    p.add_argument("--out", help="output .splt path")

    p = sub.add_parser("error-report", parents=[common], help="E*, Q_D and combined error over a grid")
    p.add_argument("--K-list", dest="K_list", type=_list(_ranged("K", *K_RANGE)), help="comma-separated K values")
    p.add_argument("--D-list", dest="D_list", type=_list(_ranged("D", *D_RANGE)), help="comma-separated D values")
    p.add_argument("--widths", type=_list(_width), help="comma-separated integer widths")
    p.add_argument("--format", choices=("table", "json"))

    for name, text in (("render", "render particles to an image"), ("validate", "oracle cross-checks on a dataset")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--particles", help="particle file (CSV or SPRT binary)")
        p.add_argument("--camera", help="camera JSON file or inline JSON")
        p.add_argument("--clustering", type=_positive(float), help="clustering factor in the field bound")
        if name == "render":
            p.add_argument("--tf", help="transfer function CSV (value,r,g,b,absorption)")
            p.add_argument("--out", help="output image (.ppm or .png)")
            p.add_argument("--report", help="render report JSON (default: next to the image)")
        else:
            p.add_argument("--resolution", type=_positive(int), help="rays per side of the reduced camera")
    return parser


def resolve_config(args, parser):
    """Merge defaults, the JSON config file and explicit flags, then validate."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            parser.error(f"unknown config keys {sorted(unknown)}")
        cfg.update(data)
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            cfg[key] = value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cfg["threads"] = int(env)
        except ValueError:
            parser.error(f"{THREADS_ENV} must be an integer, got {env!r}")
    if cfg["K"] is None or cfg["D"] is None:
        # Unset order and piece count follow the table when one is given.
        ref = load_lut(cfg["lut"]) if cfg.get("lut") else None
        cfg["K"] = cfg["K"] if cfg["K"] is not None else (ref.K if ref else DEFAULT_K)
        cfg["D"] = cfg["D"] if cfg["D"] is not None else (ref.D if ref else DEFAULT_D)
    if not (K_RANGE[0] <= int(cfg["K"]) <= K_RANGE[1]):
        parser.error(f"K must be in {list(K_RANGE)}")
    if not (D_RANGE[0] <= int(cfg["D"]) <= D_RANGE[1]):
        parser.error(f"D must be in {list(D_RANGE)}")
    if int(cfg["int_width"]) not in WIDTHS:
        parser.error(f"int width must be one of {WIDTHS}")
    if int(cfg["threads"]) < 1:
        parser.error("threads must be positive")
    cfg["command"] = args.command
    return cfg


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _get_lut(cfg, kernel, K=None, D=None):
    K = cfg["K"] if K is None else K
    D = cfg["D"] if D is None else D
    if cfg["lut"]:
        lut = load_lut(cfg["lut"])
        if (lut.K, lut.D) != (K, D) or lut.kernel_id != kernel.kernel_id:
            raise SystemExit(
                f"error: {cfg['lut']} holds ({lut.kernel_id}, K={lut.K}, D={lut.D}), "
                f"requested ({kernel.kernel_id}, K={K}, D={D})"
            )
        return lut
    _log(f"building look-up table K={K} D={D} N={cfg['N']} ...")
    return build_lut(kernel, ApproxConfig(K, D), N=cfg["N"], seed=cfg["seed"], threads=cfg["threads"])


def cmd_lut_build(cfg):
    kernel = load_kernel(cfg["kernel"])
    if not cfg["out"]:
        raise SystemExit("error: lut-build needs --out")
    t0 = time.perf_counter()
    lut = build_lut(kernel, ApproxConfig(cfg["K"], cfg["D"]), N=cfg["N"], seed=cfg["seed"], threads=cfg["threads"])
    save_lut(lut, cfg["out"])
    E = overall_error_E_star(lut, kernel_constants(kernel))
    print(f"kernel={kernel.kernel_id} K={lut.K} D={lut.D} N={lut.N} E*={E:.6e} time={time.perf_counter() - t0:.1f}s")
    return 0


def error_rows(kernel, Ks, Ds, widths, variance, lut_for):
    """Rows of ``E*``, ``Q_D`` and the combined error.

    ``lut_for(K, D)`` supplies the table for ``E*``.
    """
    constants = kernel_constants(kernel)
    rows = []
    for K in Ks:
        for D in Ds:
            E = overall_error_E_star(lut_for(K, D), constants)
            for w in widths:
                sigma = variance_sigma(variance, w, kernel)
                tau = optimal_tau(D, constants, kernel.q, sigma)
                Q = quantization_error(D, constants, kernel.q, tau, sigma)
                rows.append({"K": K, "D": D, "int_width": w, "E_star": E, "Q_D": Q,
                             "combined": math.hypot(E, Q), "tau_normalized": tau})
    return rows


def trend_flags(rows):
    """Whether ``E*`` falls and ``Q_D`` rises with ``D`` for every (K, width)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["K"], r["int_width"]), []).append(r)
    e_falls = q_rises = True
    for g in groups.values():
        g = sorted(g, key=lambda r: r["D"])
        e_falls &= all(a["E_star"] > b["E_star"] for a, b in zip(g, g[1:]))
        q_rises &= all(a["Q_D"] < b["Q_D"] for a, b in zip(g, g[1:]))
    return {"E_star_falls_in_D": e_falls, "Q_D_rises_in_D": q_rises}


def cmd_error_report(cfg):
    kernel = load_kernel(cfg["kernel"])
    Ks = cfg["K_list"] or [cfg["K"]]
    Ds = cfg["D_list"] or [cfg["D"]]
    widths = cfg["widths"] or [cfg["int_width"]]
    variance = cfg["variance"] if cfg["variance"] is not None else FIGURE_VARIANCE
    if cfg["lut"] and (len(Ks) > 1 or len(Ds) > 1):
        raise SystemExit("error: --lut covers one (K, D); drop --K-list/--D-list or the table")
    rows = error_rows(kernel, Ks, Ds, widths, variance, lambda K, D: _get_lut(cfg, kernel, K, D))
    flags = trend_flags(rows)
    if cfg["format"] == "json":
        print(json.dumps({"kernel": kernel.kernel_id, "variance": variance, "rows": rows, "trends": flags}, indent=2))
    else:
        print(f"{'K':>2} {'D':>2} {'width':>5} {'E*':>12} {'Q_D':>12} {'combined':>12}")
        for r in rows:
            print(f"{r['K']:>2} {r['D']:>2} {r['int_width']:>5} {r['E_star']:12.4e} {r['Q_D']:12.4e} {r['combined']:12.4e}")
        print(" ".join(f"{k}={v}" for k, v in flags.items()))
    return 0


def _default_camera(particles, q, n):
    """Orthographic view down -z framing all influence spheres."""
    if not particles:
        return Camera(width=n, height=n)
    pos = np.array([p.position for p in particles])
    r = np.array([q * p.h for p in particles])
    lo = np.min(pos - r[:, None], axis=0)
    hi = np.max(pos + r[:, None], axis=0)
    c = 0.5 * (lo + hi)
    extent = 1.05 * float(max(hi[0] - lo[0], hi[1] - lo[1]))
    eye = (c[0], c[1], lo[2] - 1.0)
    return Camera(eye=eye, target=(c[0], c[1], c[2]), width=n, height=n, extent=extent)


def _load_scene(cfg, kernel, n_default):
    if not cfg["particles"]:
        raise SystemExit(f"error: {cfg['command']} needs --particles")
    particles = read_particles(cfg["particles"])
    camera = read_camera(cfg["camera"]) if cfg["camera"] else _default_camera(particles, kernel.q, n_default)
    return particles, camera


def _quanta(cfg, particles, lut, kernel):
    stats = dataset_stats(particles, lut, clustering=cfg["clustering"], variance=cfg["variance"], kernel=kernel)
    return choose_quanta(cfg["D"], kernel_constants(kernel), kernel.q, stats, cfg["int_width"]), stats


def cmd_render(cfg):
    kernel = load_kernel(cfg["kernel"])
    particles, camera = _load_scene(cfg, kernel, 128)
    if not cfg["out"]:
        raise SystemExit("error: render needs --out")
    tf = read_transfer_function(cfg["tf"]) if cfg["tf"] else TransferFunction([0.0, 1.0], [[0, 0, 0], [1, 1, 1]], [0.0, 1.0])
    out = Path(cfg["out"])
    report_path = Path(cfg["report"]) if cfg["report"] else out.with_suffix(".json")
    if not particles:
        image = np.zeros((camera.height, camera.width, 3))
        write_image(image, out)
        report_path.write_text(json.dumps({"particles": 0, "overflow_count": 0, "camera": camera.to_dict()}, indent=2))
        return 0
    lut = _get_lut(cfg, kernel)
    quanta, stats = _quanta(cfg, particles, lut, kernel)
    try:
        result = render(particles, camera, lut, quanta, tf, threads=cfg["threads"], backend=cfg["backend"])
    except IntegerOverflowError as exc:
        _log(f"overflow: {exc}")
        report_path.write_text(json.dumps({"overflow_count": 1, "error": str(exc), "particle": str(exc.particle),
                                           "quanta": quanta.to_dict(), "stats": stats.to_dict()}, indent=2))
        return 3
    report = dict(result.report)
    report.update({"stats": stats.to_dict(), "camera": camera.to_dict(),
                   "E_star": overall_error_E_star(lut, kernel_constants(kernel)), "lut_N": lut.N})
    write_image(result.image, out)
    report_path.write_text(json.dumps(report, indent=2, default=str))
    if result.report["overflow_count"]:
        _log(f"overflow on {result.report['overflow_count']} rays; see {report_path}")
        return 3
    return 0


def cmd_validate(cfg):
    kernel = load_kernel(cfg["kernel"])
    particles, camera = _load_scene(cfg, kernel, cfg["resolution"])
    if not particles:
        raise SystemExit("error: no particles to validate")
    if cfg["camera"]:
        # Reduced resolution with the same view.
        n = cfg["resolution"]
        scale = n / camera.height
        camera = Camera.from_dict({**camera.to_dict(), "height": n, "width": max(1, round(camera.width * scale))})
    lut = _get_lut(cfg, kernel)
    quanta, _ = _quanta(cfg, particles, lut, kernel)
    results = validate(particles, camera, lut, quanta, kernel, kernel_constants(kernel), backend=cfg["backend"])
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "lut-build": cmd_lut_build,
    "error-report": cmd_error_report,
    "render": cmd_render,
    "validate": cmd_validate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = resolve_config(args, parser)
    if cfg["backend"] == "cython" and _backend.accel is None:
        parser.error("the compiled backend is not available in this installation")
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())

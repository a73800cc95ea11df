"""Command-line entry point: synth, detect, flow, simstudy, and render.

Exit codes: 0 success, 2 configuration/usage error, 3 data error (missing
or malformed inputs, degenerate data, failed numerics).  All outputs are
pure functions of the inputs, flags, and seed, so repeated runs are
byte-identical.

Raster figures are binary PPM (P6) heatmaps using a fixed five-anchor
colormap (dark purple - blue - teal - green - yellow, linearly interpolated
over the grid's value range); flow overlays rasterize subsampled arrows with
integer Bresenham lines.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .detect import (
    DEFAULT_RHO_GRID,
    ConvergenceError,
    ThresholdRule,
    classify,
    lda_fit,
    lda_predict,
    load_samples,
    lsm_fit,
    lsm_predict,
    save_samples,
    threshold_detect,
)
from .flow import (
    DEFAULT_ALPHA_GRID,
    FlowField,
    PosteriorSummary,
    bayes_flow,
    hs_system,
    ice_system,
    posterior_given_alpha,
)
from .gmrf import Lattice2D, NotPositiveDefiniteError
from .metrics import flow_errors
from .raster import (
    Grid,
    GridParseError,
    _format_value,
    derivatives,
    load_grid,
    load_stack,
    save_grid,
)
from .synth import (
    PlumeScenario,
    evaluation_mask,
    generate_labeled,
    generate_plume,
    load_scenario,
)

COLORMAP_ANCHORS = (
    (0.00, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.50, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.00, (253, 231, 37)),
)


class UsageError(Exception):
    """Bad flag combination; maps to exit code 2."""


class DataError(Exception):
    """Missing or malformed data; maps to exit code 3."""


# ---------------------------------------------------------------------------
# PPM rendering


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 image: header 'P6\\n<w> <h>\\n255\\n' then raw RGB rows."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an rgb array of shape (rows, cols, 3)")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def colormap(t: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the anchor colormap to uint8 RGB."""
    xs = np.array([a[0] for a in COLORMAP_ANCHORS])
    out = np.empty(t.shape + (3,), dtype=np.uint8)
    for c in range(3):
        ys = np.array([a[1][c] for a in COLORMAP_ANCHORS], dtype=np.float64)
        out[..., c] = np.rint(np.interp(t, xs, ys)).astype(np.uint8)
    return out


def grid_to_rgb(g: Grid) -> np.ndarray:
    """Heatmap of a grid normalized over its own range (constant grids map to 0.5)."""
    v = g.to_2d()
    lo, hi = float(v.min()), float(v.max())
    t = np.full_like(v, 0.5) if hi == lo else (v - lo) / (hi - lo)
    return colormap(t)


def _draw_line(rgb: np.ndarray, r0: int, c0: int, r1: int, c1: int, color) -> None:
    h, w = rgb.shape[:2]
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        if 0 <= r < h and 0 <= c < w:
            rgb[r, c] = color
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr


def overlay_arrows(rgb: np.ndarray, w: FlowField, stride: int | None = None) -> np.ndarray:
    """Draw subsampled flow arrows (black lines, white base pixel) onto a copy.

    Arrows start every ``stride`` pixels and are auto-scaled so the longest
    sampled vector spans 0.8 * stride pixels.
    """
    out = rgb.copy()
    if stride is None:
        stride = max(1, max(w.rows, w.cols) // 16)
    u = w.u.to_2d()[::stride, ::stride]
    v = w.v.to_2d()[::stride, ::stride]
    longest = float(np.hypot(u, v).max())
    scale = 0.8 * stride / longest if longest > 0 else 0.0
    for bi, i in enumerate(range(0, w.rows, stride)):
        for bj, j in enumerate(range(0, w.cols, stride)):
            tip_r = int(round(i + scale * v[bi, bj]))
            tip_c = int(round(j + scale * u[bi, bj]))
            _draw_line(out, i, j, tip_r, tip_c, (0, 0, 0))
            if 0 <= i < out.shape[0] and 0 <= j < out.shape[1]:
                out[i, j] = (255, 255, 255)
    return out


# ---------------------------------------------------------------------------
# Flag parsing helpers


def parse_alpha_grid(spec: str) -> np.ndarray:
    """Parse 'lo:hi:n-log' into n log-spaced values from lo to hi."""
    parts = spec.split(":")
    if len(parts) != 3 or not parts[2].endswith("-log"):
        raise UsageError(f"grid spec must look like 'lo:hi:n-log', got {spec!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        n = int(parts[2][: -len("-log")])
    except ValueError:
        raise UsageError(f"unparseable grid spec {spec!r}") from None
    if lo <= 0 or hi <= 0 or hi < lo or n < 1:
        raise UsageError(f"grid spec needs 0 < lo <= hi and n >= 1, got {spec!r}")
    return np.logspace(math.log10(lo), math.log10(hi), n)


def _load_scenario_arg(path: str | None) -> PlumeScenario:
    if path is None:
        return PlumeScenario()
    try:
        return load_scenario(path)
    except OSError as e:
        raise DataError(f"cannot read scenario: {e}") from e
    except ValueError as e:
        raise DataError(f"bad scenario file: {e}") from e


def _save_summary(summary: PosteriorSummary, path) -> None:
    lines = [
        f"sigma2 {_format_value(summary.sigma2)}",
        f"map_alpha {_format_value(summary.map_alpha)}",
        f"jitter {_format_value(summary.jitter)}",
        f"n_alphas {len(summary.alpha_grid)}",
    ]
    for j, alpha in enumerate(summary.alpha_grid):
        lines.append(f"alpha_{j} {_format_value(float(alpha))}")
        lines.append(f"log_marginal_{j} {_format_value(float(summary.log_marginals[j]))}")
        lines.append(f"weight_{j} {_format_value(float(summary.alpha_weights[j]))}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Simulation study (shared by the CLI and the acceptance suite)


def simulation_study(
    sc: PlumeScenario,
    seed: int,
    alpha_grid=None,
    sigma2: float = 1.0,
    mask_mode: str = "plume",
):
    """Run {hs, ice} x {each fixed alpha, Bayesian} on a generated sequence.

    Errors are computed per consecutive frame pair against the constant true
    flow (masked to the plume unless mask_mode='full') and averaged over
    pairs with equal weight.  Returns (rows, fields, ground_truth) where
    rows are (method, label, angular, magnitude) with label an alpha value
    or 'bayes', and fields holds each method's first-pair Bayesian mean flow.
    """
    if mask_mode not in ("plume", "full"):
        raise UsageError(f"mask must be 'plume' or 'full', got {mask_mode!r}")
    grid = np.asarray(DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid)
    gt = generate_plume(sc, seed)
    lat = Lattice2D(sc.rows, sc.cols)
    n_pairs = sc.n_frames - 1
    masks = [
        evaluation_mask(gt, p, amplitude=sc.amplitude) if mask_mode == "plume" else None
        for p in range(n_pairs)
    ]
    rows: list[tuple[str, str, float, float]] = []
    fields: dict[str, FlowField] = {}
    for method, build in (("hs", hs_system), ("ice", ice_system)):
        systems = [
            build(derivatives(gt.frames[p], gt.frames[p + 1]), sigma2) for p in range(n_pairs)
        ]

        def pair_errors(est_fields):
            ang = mag = 0.0
            for p, est in enumerate(est_fields):
                report = flow_errors(est, gt.true_flow, masks[p])
                ang += report.mean_abs_angular_error
                mag += report.mean_abs_magnitude_error
            return ang / n_pairs, mag / n_pairs

        for alpha in grid:
            ests = [
                posterior_given_alpha(s, lat, float(alpha), want_variances=False)[0]
                for s in systems
            ]
            ang, mag = pair_errors(ests)
            rows.append((method, _format_value(float(alpha)), ang, mag))
        summaries = [
            bayes_flow(s, lat, grid, want_variances=False) for s in systems
        ]
        ang, mag = pair_errors([s.mean for s in summaries])
        rows.append((method, "bayes", ang, mag))
        fields[method] = summaries[0].mean
    return rows, fields, gt


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_synth(args) -> int:
    sc = _load_scenario_arg(args.scenario)
    gt = generate_plume(sc, args.seed)
    os.makedirs(args.output, exist_ok=True)
    for k, frame in enumerate(gt.frames):
        save_grid(frame, os.path.join(args.output, f"frame_{k}.grid"))
        save_grid(gt.noiseless[k], os.path.join(args.output, f"noiseless_{k}.grid"))
    save_grid(gt.true_flow.u, os.path.join(args.output, "true_u.grid"))
    save_grid(gt.true_flow.v, os.path.join(args.output, "true_v.grid"))
    if gt.boundary_warning:
        print("warning: plume center within 3 radii of the grid edge", file=sys.stderr)
    if args.samples:
        try:
            samples = generate_labeled(sc, args.seed, cutoff=args.cutoff)
        except ValueError as e:
            raise DataError(str(e)) from e
        save_samples(samples, args.samples)
    return 0


def _cmd_detect(args) -> int:
    try:
        stack = load_stack(args.input)
    except OSError as e:
        raise DataError(f"cannot read stack: {e}") from e
    except (GridParseError, ValueError) as e:
        raise DataError(f"bad stack: {e}") from e

    prob = None
    if args.detector in ("ash", "ash-no108"):
        rule = ThresholdRule(use_bt108=(args.detector == "ash"))
        try:
            binary = threshold_detect(stack, rule)
        except ValueError as e:
            raise DataError(str(e)) from e
    else:
        if not args.samples:
            raise UsageError(f"--detector {args.detector} requires --samples")
        try:
            samples = load_samples(args.samples)
        except OSError as e:
            raise DataError(f"cannot read samples: {e}") from e
        except ValueError as e:
            raise DataError(f"bad samples file: {e}") from e
        try:
            if args.detector == "lda":
                prob = lda_predict(lda_fit(samples), stack)
            else:
                rho_grid = (
                    parse_alpha_grid(args.rho_grid) if args.rho_grid else DEFAULT_RHO_GRID
                )
                model = lsm_fit(samples, bins=args.bins, rho_grid=rho_grid)
                prob = lsm_predict(model, stack)
        except (ValueError, ConvergenceError, NotPositiveDefiniteError) as e:
            raise DataError(str(e)) from e
        binary = classify(prob, args.cutoff)

    save_grid(binary, args.output)
    if args.prob_output:
        if prob is None:
            raise UsageError("--prob-output only applies to lda/lsm detectors")
        save_grid(prob, args.prob_output)
    return 0


def _cmd_flow(args) -> int:
    if args.alpha is not None and args.alpha_grid is not None:
        raise UsageError("--alpha and --alpha-grid are mutually exclusive")
    try:
        frame_a = load_grid(args.input[0])
        frame_b = load_grid(args.input[1])
    except OSError as e:
        raise DataError(f"cannot read frames: {e}") from e
    except GridParseError as e:
        raise DataError(str(e)) from e
    try:
        d = derivatives(frame_a, frame_b)
        system = (hs_system if args.method == "hs" else ice_system)(d, args.sigma2)
    except ValueError as e:
        raise DataError(str(e)) from e
    if args.alpha is not None:
        if args.alpha <= 0:
            raise UsageError(f"--alpha must be positive, got {args.alpha}")
        grid = np.array([args.alpha])
    elif args.alpha_grid is not None:
        grid = parse_alpha_grid(args.alpha_grid)
    else:
        grid = DEFAULT_ALPHA_GRID
    lat = Lattice2D(frame_a.rows, frame_a.cols)
    try:
        summary = bayes_flow(system, lat, grid)
    except (ValueError, NotPositiveDefiniteError) as e:
        raise DataError(str(e)) from e
    os.makedirs(args.output, exist_ok=True)
    mean = summary.mean
    save_grid(mean.u, os.path.join(args.output, "u.grid"))
    save_grid(mean.v, os.path.join(args.output, "v.grid"))
    save_grid(mean.var_u, os.path.join(args.output, "var_u.grid"))
    save_grid(mean.var_v, os.path.join(args.output, "var_v.grid"))
    _save_summary(summary, os.path.join(args.output, "summary.txt"))
    return 0


def _cmd_simstudy(args) -> int:
    sc = _load_scenario_arg(args.scenario)
    grid = parse_alpha_grid(args.alpha_grid) if args.alpha_grid else DEFAULT_ALPHA_GRID
    try:
        rows, fields, gt = simulation_study(
            sc, args.seed, grid, sigma2=args.sigma2, mask_mode=args.mask
        )
    except (ValueError, NotPositiveDefiniteError) as e:
        raise DataError(str(e)) from e
    os.makedirs(args.output, exist_ok=True)
    lines = [
        f"{method} {label} {_format_value(ang)} {_format_value(mag)}"
        for method, label, ang, mag in rows
    ]
    with open(os.path.join(args.output, "errors.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    for k, frame in enumerate(gt.frames):
        write_ppm(os.path.join(args.output, f"frame_{k}.ppm"), grid_to_rgb(frame))
    for method, mean in fields.items():
        write_ppm(os.path.join(args.output, f"{method}_bayes_u.ppm"), grid_to_rgb(mean.u))
        write_ppm(os.path.join(args.output, f"{method}_bayes_v.ppm"), grid_to_rgb(mean.v))
        overlay = overlay_arrows(grid_to_rgb(gt.frames[0]), mean)
        write_ppm(os.path.join(args.output, f"{method}_bayes_arrows.ppm"), overlay)
    return 0


def _cmd_render(args) -> int:
    try:
        g = load_grid(args.input)
    except OSError as e:
        raise DataError(f"cannot read grid: {e}") from e
    except GridParseError as e:
        raise DataError(str(e)) from e
    rgb = grid_to_rgb(g)
    if (args.flow_u is None) != (args.flow_v is None):
        raise UsageError("--flow-u and --flow-v must be given together")
    if args.flow_u:
        try:
            w = FlowField(u=load_grid(args.flow_u), v=load_grid(args.flow_v))
        except OSError as e:
            raise DataError(f"cannot read flow grids: {e}") from e
        except (GridParseError, ValueError) as e:
            raise DataError(str(e)) from e
        if not w.u.same_shape(g):
            raise DataError("flow grids must match the rendered grid's dimensions")
        rgb = overlay_arrows(rgb, w, stride=args.stride)
    write_ppm(args.output, rgb)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dustflow",
        description="Dust detection and Bayesian transport-field estimation on raster imagery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic plume sequence (and labeled samples)")
    p.add_argument("--scenario", help="scenario key=value file (defaults used when omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="output directory for frames and truth grids")
    p.add_argument("--samples", help="also write labeled samples to this path")
    p.add_argument("--cutoff", type=float, default=0.01, help="plume-membership threshold for labels")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("detect", help="run a dust detector over a channel stack")
    p.add_argument("--input", required=True, help="stack directory (contains stack.manifest)")
    p.add_argument("--detector", required=True, choices=("ash", "ash-no108", "lda", "lsm"))
    p.add_argument("--output", required=True, help="binary detection grid path")
    p.add_argument("--prob-output", help="probability grid path (lda/lsm only)")
    p.add_argument("--samples", help="labeled training samples (required for lda/lsm)")
    p.add_argument("--cutoff", type=float, default=0.5, help="probability cutoff for lda/lsm")
    p.add_argument("--bins", type=int, default=100, help="lsm bins per axis")
    p.add_argument("--rho-grid", help="lsm smoothness grid as lo:hi:n-log")
    p.set_defaults(handler=_cmd_detect)

    p = sub.add_parser("flow", help="estimate the transport field for a frame pair")
    p.add_argument("--input", required=True, nargs=2, metavar=("FRAME_A", "FRAME_B"))
    p.add_argument("--method", choices=("hs", "ice"), default="ice")
    p.add_argument("--alpha", type=float, help="fixed smoothness scale (skips averaging)")
    p.add_argument("--alpha-grid", help="averaging grid as lo:hi:n-log")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--output", required=True, help="output directory for flow grids and summary")
    p.set_defaults(handler=_cmd_flow)

    p = sub.add_parser("simstudy", help="fixed-alpha vs Bayesian comparison on a synthetic scenario")
    p.add_argument("--scenario", help="scenario key=value file (defaults used when omitted)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--alpha-grid", help="grid as lo:hi:n-log (default 0.01:100:20-log)")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--mask", choices=("plume", "full"), default="plume")
    p.add_argument("--output", required=True, help="output directory for the table and heatmaps")
    p.set_defaults(handler=_cmd_simstudy)

    p = sub.add_parser("render", help="render a grid as a PPM heatmap, optionally with flow arrows")
    p.add_argument("--input", required=True, help="grid to render")
    p.add_argument("--output", required=True, help="PPM path")
    p.add_argument("--flow-u", help="horizontal flow grid for the arrow overlay")
    p.add_argument("--flow-v", help="vertical flow grid for the arrow overlay")
    p.add_argument("--stride", type=int, help="arrow spacing in pixels")
    p.set_defaults(handler=_cmd_render)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(run())

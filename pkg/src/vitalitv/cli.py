"""Command-line interface.

Subcommands: denoise, anova, rates, certify, grids.  Exit codes: 0 on
success, 1 on validation errors or bad inputs, 2 when a certification
check fails.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _parse_shape(text):
    return tuple(int(tok) for tok in text.split(","))


def _cmd_denoise(args):
    from .diff_ops import vitali_tv
    from .solver import FitConfig, fit_all_margins, fit_margin
    from .tensor import read_vtf, write_vtf

    y = read_vtf(args.input)
    cfg = FitConfig(
        lam=args.lam, sigma=args.sigma, lambda_scale=args.lambda_scale,
        solver_kind=args.solver, tol=args.tol,
    )
    if args.margin_only:
        res = fit_margin(y, args.k, cfg)
        out = res.fitted
        summary = {
            "mode": "margin",
            "k": args.k,
            "lambda": res.lam,
            "objective": res.objective,
            "kkt_residual": res.kkt_residual,
            "iterations": res.iterations,
        }
    else:
        margins, out = fit_all_margins(y, args.k, cfg)
        summary = {
            "mode": "anova",
            "k": args.k,
            "margins": {
                f"M={list(key.axes)} h={list(key.h)}": {
                    "lambda": r.lam,
                    "iterations": r.iterations,
                    "kkt_residual": r.kkt_residual,
                }
                for key, r in margins.items()
            },
        }
    summary["shape"] = list(y.shape)
    summary["tv_k_in"] = vitali_tv(y, args.k)
    summary["tv_k_out"] = vitali_tv(out, args.k)
    write_vtf(args.output, out)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_anova(args):
    from .dictionary import anova_decompose, margin_dimension
    from .tensor import frobenius_sq, read_vtf

    y = read_vtf(args.input)
    parts = anova_decompose(y, args.k)
    lines = ["axes,h,dim,norm_sq"]
    for key in sorted(parts):
        dim = margin_dimension(key, y.shape, args.k)
        lines.append(
            f"\"{' '.join(str(a) for a in key.axes)}\",\"{' '.join(str(h) for h in key.h)}\","
            f"{dim},{frobenius_sq(parts[key]):.17g}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_rates(args):
    import os

    from .harness import load_config, rates_csv, rates_svg, run_rate_experiment

    config = load_config(args.config)
    result = run_rate_experiment(config)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "rates.csv")
    with open(csv_path, "w") as fh:
        fh.write(rates_csv(result))
    if args.svg:
        with open(os.path.join(args.out_dir, "rates.svg"), "w") as fh:
            fh.write(rates_svg(result))
    print(f"n sizes: {result.sizes}")
    print(f"mean mse: {['%.5g' % m for m in result.mean_mse]}")
    print(f"slope (all / tail): {result.slope:.4f} / {result.slope_tail:.4f}")
    print(f"wrote {csv_path}")
    return 0


def _cmd_certify(args):
    from .certify import certification_report
    from .harness import certify_csv

    rows = certification_report(k=args.k, d=args.d, n=args.n, seed=args.seed)
    text = certify_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if not r.passed]
    for row in failed:
        print(f"FAIL {row.check_name} ({row.params}): lhs={row.lhs:.3e} rhs={row.rhs:.3e}", file=sys.stderr)
    return 2 if failed else 0


def _cmd_grids(args):
    from .active_sets import mesh_grid, regular_grid, write_active_set

    if args.kind == "regular":
        aset = regular_grid(args.shape, args.k, args.s_per_axis)
        write_active_set(args.out, aset)
        print(f"wrote {aset.size} jumps to {args.out}")
    else:
        mg = mesh_grid(args.shape, args.k, args.delta)
        pts = mg.enlarged if args.enlarged else mg.jumps
        write_active_set(args.out, pts)
        print(f"wrote {len(pts)} indices to {args.out} (s={mg.size})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="vitalitv", description="Tensor denoising with Vitali TV trend filtering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="denoise a VTF1 tensor")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="tuning parameter (default: universal rule for --sigma)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--lambda-scale", type=float, default=1.0)
    p.add_argument("--solver", choices=["coordinate-descent", "accelerated-proximal-gradient"],
                   default="coordinate-descent")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--margin-only", action="store_true", help="fit only the free margin")
    p.add_argument("--summary", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("anova", help="per-margin norms of a VTF1 tensor")
    p.add_argument("input")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_anova)

    p = sub.add_parser("rates", help="run a Monte Carlo rate experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("certify", help="run the certification battery")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("grids", help="emit active-set / mesh-grid index files")
    p.add_argument("kind", choices=["regular", "mesh"])
    p.add_argument("--shape", type=_parse_shape, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--s-per-axis", type=int, default=2)
    p.add_argument("--delta", type=int, default=2)
    p.add_argument("--enlarged", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_grids)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # solver non-convergence etc.
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

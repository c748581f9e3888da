"""Signal generators, Monte Carlo rate experiments and result serialization.

Experiments draw Gaussian noise from per-replicate seed sequences split
off a root seed, so serial runs, reruns and any replicate subset produce
identical numbers; CSV output is formatted deterministically and is the
interface of record (the optional SVG is a convenience view).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .certify import fit_loglog_slope as fit_slope
from .dictionary import axis_dictionaries, project_margin
from .solver import (
    ConvergenceError,
    FitConfig,
    fit_all_margins,
    fit_margin,
    slow_rate_lambda,
    universal_lambda,
)
from .tensor import ShapeError, frobenius_sq


# ---------------------------------------------------------------------------
# signals


@dataclass(frozen=True)
class SignalPiece:
    """Axis-aligned box (1-based, inclusive) with per-axis polynomial factors.

    The value on the box is the product over axes of polynomials in
    x = j / n evaluated at the index; coefficient tuples are low-order
    first and must have degree <= k-1.
    """

    box: tuple
    coeffs: tuple


@dataclass(frozen=True)
class SignalSpec:
    pieces: tuple
    name: str = "custom"


def generate_signal(spec, shape, k):
    """Evaluate a piecewise-polynomial spec into a tensor.

    The boxes must partition the full index set; any overlap or gap is
    an error.  Per-piece degrees are checked against k.
    """
    shape = tuple(int(n) for n in shape)
    d = len(shape)
    covered = np.zeros(shape, dtype=bool)
    out = np.zeros(shape)
    for piece in spec.pieces:
        if len(piece.box) != d or len(piece.coeffs) != d:
            raise ShapeError(f"piece {piece} has wrong rank for shape {shape}")
        axes_vals = []
        sl = []
        for (lo, hi), cs, n in zip(piece.box, piece.coeffs, shape):
            if not (1 <= lo <= hi <= n):
                raise ShapeError(f"box {piece.box} leaves the index range of {shape}")
            if len(cs) > k:
                raise ValueError(f"piece polynomial degree {len(cs) - 1} exceeds k-1 = {k - 1}")
            x = np.arange(lo, hi + 1) / float(n)
            axes_vals.append(np.polynomial.polynomial.polyval(x, np.asarray(cs, dtype=np.float64)))
            sl.append(slice(lo - 1, hi))
        sl = tuple(sl)
        if covered[sl].any():
            raise ValueError("signal pieces overlap")
        covered[sl] = True
        block = np.ones([len(v) for v in axes_vals])
        for i, v in enumerate(axes_vals):
            bshape = [1] * d
            bshape[i] = len(v)
            block = block * v.reshape(bshape)
        out[sl] = block
    if not covered.all():
        raise ValueError("signal pieces do not cover the index set")
    return out


def step_signal_spec(n, s0):
    """One axis, s0 jumps: an alternating 0/1 staircase on s0+1 blocks."""
    if s0 < 0 or s0 > n - 2:
        raise ShapeError(f"cannot place {s0} jumps on {n} points")
    cuts = [1 + int(round(m * (n - 1) / (s0 + 1.0))) for m in range(1, s0 + 1)]
    bounds = [1] + [c + 1 for c in cuts] + [n + 1]
    pieces = []
    for m in range(s0 + 1):
        pieces.append(SignalPiece(box=((bounds[m], bounds[m + 1] - 1),), coeffs=((float(m % 2),),)))
    return SignalSpec(pieces=tuple(pieces), name=f"step:s0={s0}")


def sawtooth_signal_spec(n, teeth=None):
    """Staircase zigzag with many small jumps and total variation ~1.

    The default tooth count n**(1/3) sits at the critical scale where
    the l1 (total-variation-ball) difficulty dominates the jump-count
    difficulty, which is the regime the slow-rate tuning targets.
    """
    teeth = int(round(n ** (1.0 / 3.0))) if teeth is None else int(teeth)
    levels = ((np.arange(n) * teeth) // n) % 2
    pieces = []
    start = 0
    for j in range(1, n + 1):
        if j == n or levels[j] != levels[start]:
            pieces.append(
                SignalPiece(box=((start + 1, j),), coeffs=((float(levels[start]) / teeth,),))
            )
            start = j
    return SignalSpec(pieces=tuple(pieces), name=f"sawtooth:teeth={teeth}")


def quadrant_signal_spec(shape, value=1.0):
    """Indicator of the lower corner box (d-dimensional quadrant)."""
    shape = tuple(int(n) for n in shape)
    halves = [n // 2 for n in shape]
    pieces = []
    import itertools

    for corner in itertools.product((0, 1), repeat=len(shape)):
        box = tuple(
            (1, h) if c == 0 else (h + 1, n) for c, h, n in zip(corner, halves, shape)
        )
        val = float(value) if all(c == 0 for c in corner) else 0.0
        pieces.append(SignalPiece(box=box, coeffs=tuple((val if i == 0 else 1.0,) for i in range(len(shape)))))
    return SignalSpec(pieces=tuple(pieces), name="quadrant")


def constant_signal_spec(shape, value=0.0):
    box = tuple((1, int(n)) for n in shape)
    coeffs = tuple((float(value) if i == 0 else 1.0,) for i in range(len(shape)))
    return SignalSpec(pieces=(SignalPiece(box=box, coeffs=coeffs),), name=f"constant:{value}")


def named_signal_spec(name, shape, k):
    """Parse "kind" or "kind:key=val,..." into a SignalSpec."""
    kind, _, argstr = name.partition(":")
    args = {}
    if argstr:
        for tok in argstr.split(","):
            key, _, val = tok.partition("=")
            args[key.strip()] = float(val)
    if kind == "step":
        if len(shape) != 1:
            raise ShapeError("step signal is one-dimensional")
        return step_signal_spec(shape[0], int(args.get("s0", 2)))
    if kind == "sawtooth":
        if len(shape) != 1:
            raise ShapeError("sawtooth signal is one-dimensional")
        teeth = args.get("teeth")
        return sawtooth_signal_spec(shape[0], None if teeth is None else int(teeth))
    if kind == "quadrant":
        return quadrant_signal_spec(shape, args.get("value", 1.0))
    if kind == "constant":
        return constant_signal_spec(shape, args.get("value", 0.0))
    raise ValueError(f"unknown signal {name!r}")


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    """Settings for one Monte Carlo rate experiment.

    ``n_schedule`` lists per-axis extents (square shapes), strictly
    increasing; ``lambda_rule`` is one of universal, grid-scaled,
    slow-rate, sweep (sweep takes multipliers of the universal level and
    keeps the best mse per replicate).  ``mode`` is "margin" (fit the
    free margin, record margin mse) or "anova" (fit all margins, record
    whole-tensor mse).
    """

    d: int = 1
    k: int = 1
    n_schedule: tuple = (256, 512, 1024)
    sigma: float = 0.5
    replicates: int = 20
    lambda_rule: str = "universal"
    lambda_scale: float = 1.0
    grid_size: int = 1
    sweep: tuple = (0.25, 0.5, 1.0, 2.0)
    signal: str = "step:s0=2"
    mode: str = "margin"
    seed: int = 0
    tol: float = 1e-6
    solver_kind: str = "coordinate-descent"
    max_iters: int = 200_000

    def validate(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        sched = tuple(int(n) for n in self.n_schedule)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("n_schedule must be strictly increasing")
        if self.mode not in ("margin", "anova"):
            raise ValueError(f"unknown mode {self.mode!r}")
        return self


@dataclass
class RateResult:
    """Per-size mean errors and fitted log-log slopes."""

    config: ExperimentConfig
    sizes: list
    mean_mse: list
    stderr_mse: list
    slope: float
    slope_half_width: float
    slope_tail: float
    slope_tail_half_width: float
    rows: list = field(repr=False)


def _rule_lambda(config, shape, k):
    n = float(np.prod(shape))
    if config.lambda_rule == "universal":
        return config.lambda_scale * universal_lambda(n, config.sigma)
    if config.lambda_rule == "grid-scaled":
        scale = config.grid_size ** (-(2 * k - 1) / (2.0 * len(shape)))
        return config.lambda_scale * scale * universal_lambda(n, config.sigma)
    if config.lambda_rule == "slow-rate":
        return slow_rate_lambda(n, len(shape), k, config.sigma, scale=config.lambda_scale)
    raise ValueError(f"unknown lambda_rule {config.lambda_rule!r}")


def _replicate_seed(root, i_n, rep):
    return int(np.random.SeedSequence((root, i_n, rep)).generate_state(1)[0])


def run_rate_experiment(config):
    """Run the Monte Carlo loop and fit the error-decay slope.

    Rows carry (n, replicate, mse, lambda, converged, seed); failed
    replicates are recorded as non-converged and excluded from means.
    The tail slope uses only the larger half of the schedule.
    """
    config.validate()
    k, d = config.k, config.d
    rows = []
    sizes, means, stderrs = [], [], []
    for i_n, n_axis in enumerate(config.n_schedule):
        shape = (int(n_axis),) * d
        n_total = int(np.prod(shape))
        spec = named_signal_spec(config.signal, shape, k)
        f0 = generate_signal(spec, shape, k)
        dicts = axis_dictionaries(shape, k)
        f0_margin = project_margin(f0, dicts)
        lam0 = _rule_lambda(config, shape, k) if config.lambda_rule != "sweep" else None
        mses = []
        for rep in range(config.replicates):
            seed = _replicate_seed(config.seed, i_n, rep)
            rng = np.random.default_rng(np.random.SeedSequence((config.seed, i_n, rep)))
            y = f0 + config.sigma * rng.standard_normal(shape)
            lams = [lam0] if lam0 is not None else [
                mult * universal_lambda(n_total, config.sigma) for mult in config.sweep
            ]
            best = None
            lam_used = lams[0]
            converged = True
            for lam in lams:
                cfg = FitConfig(
                    lam=lam, tol=config.tol, solver_kind=config.solver_kind,
                    max_iters=config.max_iters, sigma=config.sigma,
                    lambda_scale=config.lambda_scale, grid_size=config.grid_size,
                )
                try:
                    if config.mode == "margin":
                        res = fit_margin(y, k, cfg)
                        mse = frobenius_sq(res.fitted - f0_margin) / n_total
                    else:
                        _, assembled = fit_all_margins(y, k, cfg)
                        mse = frobenius_sq(assembled - f0) / n_total
                except ConvergenceError:
                    converged = False
                    continue
                if best is None or mse < best:
                    best, lam_used = mse, lam
            if best is None:
                rows.append((n_total, rep, float("nan"), lam_used, 0, seed))
                continue
            rows.append((n_total, rep, best, lam_used, 1 if converged else 0, seed))
            mses.append(best)
        if mses:
            arr = np.asarray(mses)
            sizes.append(n_total)
            means.append(float(arr.mean()))
            stderrs.append(float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0)
    fittable = all(m > 0 for m in means) and len(sizes) >= 2
    slope, half = fit_slope(sizes, means) if fittable else (float("nan"), float("nan"))
    tail = max(2, (len(sizes) + 1) // 2)
    slope_t, half_t = fit_slope(sizes[-tail:], means[-tail:]) if fittable else (float("nan"), float("nan"))
    return RateResult(
        config=config, sizes=sizes, mean_mse=means, stderr_mse=stderrs,
        slope=slope, slope_half_width=half, slope_tail=slope_t,
        slope_tail_half_width=half_t, rows=rows,
    )


# ---------------------------------------------------------------------------
# serialization


def rates_csv(result):
    buf = io.StringIO()
    buf.write("n,replicate,mse,lambda,converged,seed\n")
    for n, rep, mse, lam, conv, seed in result.rows:
        buf.write(f"{n},{rep},{mse:.17g},{lam:.17g},{conv},{seed}\n")
    return buf.getvalue()


def certify_csv(rows):
    buf = io.StringIO()
    buf.write("check_name,params,lhs,rhs,pass\n")
    for row in rows:
        buf.write(f"{row.check_name},{row.params},{row.lhs:.17g},{row.rhs:.17g},{1 if row.passed else 0}\n")
    return buf.getvalue()


def rates_svg(result, width=480, height=360):
    """Minimal log-log scatter with the fitted line, as a standalone SVG."""
    xs = np.log10(result.sizes)
    ys = np.log10(result.mean_mse)
    pad = 40
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    spanx = (x1 - x0) or 1.0
    spany = (y1 - y0) or 1.0

    def px(x):
        return pad + (x - x0) / spanx * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / spany * (height - 2 * pad)

    intercept = ys[-1] - result.slope * xs[-1]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{px(x0):.1f}" y1="{py(result.slope * x0 + intercept):.1f}" '
        f'x2="{px(x1):.1f}" y2="{py(result.slope * x1 + intercept):.1f}" stroke="#888" stroke-dasharray="4"/>',
    ]
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="4" fill="#2b6"/>')
    parts.append(
        f'<text x="{pad}" y="{pad - 10}" font-size="12">log10 mse vs log10 n, slope {result.slope:.3f}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# config files


_CONFIG_FIELDS = {
    "d": int,
    "k": int,
    "n_schedule": lambda s: tuple(int(tok) for tok in s.split(",")),
    "sigma": float,
    "replicates": int,
    "lambda_rule": str,
    "lambda_scale": float,
    "grid_size": int,
    "sweep": lambda s: tuple(float(tok) for tok in s.split(",")),
    "signal": str,
    "mode": str,
    "seed": int,
    "tol": float,
    "solver_kind": str,
    "max_iters": int,
}


def parse_config(text):
    """Flat "key = value" lines; '#' starts a comment.  VTF_SEED overrides seed."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _CONFIG_FIELDS[key](val)
    env_seed = os.environ.get("VTF_SEED")
    if env_seed is not None:
        values["seed"] = int(env_seed)
    return ExperimentConfig(**values).validate()


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())

"""Penalized least-squares estimators in synthesis form.

The margin estimator minimizes, over coefficient tensors b of reduced
shape,

    || proj(Y) - X b ||_2^2 / n + 2 * lam * ||b||_1,

where proj is the projection onto the span of all-tail product atoms
and X maps coefficients to that span (per axis: iterated cumulative
sums followed by removal of the head span).  Differences of order k
invert X exactly, so lam = 0 reduces to coefficients diff_k(Y).

Columns of X are correlated, so two iterative solvers are provided: an
accelerated proximal-gradient loop (with gradient restarts, on
norm-equilibrated columns) and a working-set coordinate descent that
solves small dense subproblems and screens the full optimality system
between rounds.  Convergence is declared on the KKT residual, never on
objective stall.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .dictionary import anova_decompose, axis_dictionaries, margin_expand, margin_flatten, margin_keys
from .diff_ops import DiffSpec, total_diff
from .tensor import ShapeError, check_tensor, frobenius_sq


class ConvergenceError(RuntimeError):
    """Solver ran out of iterations; carries the last KKT residual."""

    def __init__(self, message, kkt_residual):
        super().__init__(message)
        self.kkt_residual = kkt_residual


def universal_lambda(n, sigma, t=None):
    """Noise-overruling tuning level sigma * sqrt((2 log(2n) + 2t) / n)."""
    n = float(n)
    if t is None:
        t = np.log(2 * n)
    return float(sigma * np.sqrt((2 * np.log(2 * n) + 2 * t) / n))


def slow_rate_lambda(n, d, k, sigma, scale=1.0):
    """Tuning level for the l1 regime: n**(-(H+2k-1)/(2H+2k-1)) times log factors."""
    from .active_sets import harmonic_number

    h = harmonic_number(d)
    expo = (h + 2 * k - 1) / (2 * h + 2 * k - 1)
    logexpo = h / (2 * h + 2 * k - 1)
    return float(scale * sigma * float(n) ** (-expo) * np.log(float(n)) ** logexpo)


@dataclass
class FitConfig:
    """Settings for the synthesis-form fits.

    ``lam`` is the tuning parameter (scalar; for fit_all_margins a
    MarginKey->float mapping is also accepted, or None for the default
    rule built from sigma / grid_size / lambda_scale).  ``tol`` is the
    KKT tolerance; None means 1e-8 * (1 + ||Y||^2/n).  margin_scale
    picks the sub-margin operator normalization (see DiffSpec).
    """

    lam: object = None
    max_iters: int = 200_000
    tol: float = None
    solver_kind: str = "coordinate-descent"
    margin_scale: str = "consistent"
    sigma: float = 1.0
    lambda_scale: float = 1.0
    grid_size: int = 1
    warm_start: np.ndarray = None
    check_every: int = 25


@dataclass
class FitResult:
    """Converged fit: coefficients, fitted tensor and optimality data."""

    coefficients: np.ndarray
    fitted: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    lam: float
    converged: bool = True


class SynthesisOperator:
    """Fast application of the all-tail product dictionary and its adjoint."""

    def __init__(self, shape, k):
        self.shape = tuple(int(n) for n in shape)
        self.k = int(k)
        self.dicts = axis_dictionaries(self.shape, self.k)
        self.reduced_shape = tuple(n - self.k for n in self.shape)
        norms = None
        for d1 in self.dicts:
            col = np.linalg.norm(d1.tail, axis=0)
            norms = col if norms is None else np.multiply.outer(norms, col)
        self.col_norms = norms
        self.n = float(np.prod(self.shape))

    def _tails_apply(self, c, axis):
        k, n = self.k, self.shape[axis]
        shape = list(c.shape)
        shape[axis] = n
        out = np.zeros(shape)
        sl = [slice(None)] * c.ndim
        sl[axis] = slice(k, n)
        out[tuple(sl)] = c
        for _ in range(k):
            np.cumsum(out, axis=axis, out=out)
        return out / float(n) ** (k - 1) if k > 1 else out

    def _tails_adjoint(self, r, axis):
        k, n = self.k, self.shape[axis]
        out = np.flip(r, axis)
        for _ in range(k):
            out = np.cumsum(out, axis=axis)
        out = np.flip(out, axis)
        sl = [slice(None)] * r.ndim
        sl[axis] = slice(k, n)
        out = out[tuple(sl)]
        return out / float(n) ** (k - 1) if k > 1 else out

    def project(self, f):
        out = f
        for axis, d1 in enumerate(self.dicts):
            out = d1.project_out_head(out, axis)
        return out

    def apply(self, b):
        """X b: reduced-shape coefficients to a full-shape margin tensor."""
        out = b
        for axis, d1 in enumerate(self.dicts):
            out = d1.project_out_head(self._tails_apply(out, axis), axis)
        return out

    def adjoint(self, r):
        """X' r: full-shape tensor to reduced-shape atom inner products."""
        out = r
        for axis, d1 in enumerate(self.dicts):
            out = self._tails_adjoint(d1.project_out_head(out, axis), axis)
        return out

    def atom_column(self, idx0):
        """Gram column X' X e_idx for one 0-based reduced index."""
        e = np.zeros(self.reduced_shape)
        e[idx0] = 1.0
        return self.adjoint(self.apply(e))


@lru_cache(maxsize=64)
def _equilibrated_opnorm_sq(shape, k):
    """Squared operator norm of the column-normalized dictionary map."""
    op = SynthesisOperator(shape, k)
    v = np.ones(op.reduced_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(80):
        w = op.adjoint(op.apply(v / op.col_norms)) / op.col_norms
        lam_new = float(np.linalg.norm(w))
        v = w / lam_new
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return lam * 1.0001  # slack so the power-iteration estimate is an upper bound


def _soft(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def _kkt_residual(grad, b, lam):
    """Max violation of the subgradient optimality system.

    At zero coefficients |grad| may reach 2*lam; elsewhere grad must
    equal -2*lam*sign(b).
    """
    two_lam = 2.0 * lam
    active = b != 0
    viol_zero = np.maximum(np.abs(grad) - two_lam, 0.0)
    viol_zero[active] = 0.0
    viol_act = np.abs(grad + two_lam * np.sign(b))
    viol_act[~active] = 0.0
    return float(max(viol_zero.max(initial=0.0), viol_act.max(initial=0.0)))


def lambda_max(y, k):
    """Smallest lam at which the all-zero coefficient tensor is optimal."""
    y = check_tensor(y)
    op = SynthesisOperator(y.shape, k)
    return float(np.abs(op.adjoint(op.project(y))).max() / op.n)


def _fista(op, y_perp, lam, b0, tol, max_iters, check_every):
    scale = op.col_norms
    lip = 2.0 * _equilibrated_opnorm_sq(op.shape, op.k) / op.n
    thr = 2.0 * lam / (lip * scale)
    bt = b0 * scale
    zt = bt.copy()
    t_mom = 1.0
    target = op.adjoint(y_perp)
    it = 0
    res = np.inf
    while it < max_iters:
        # gradient of the smooth part at the extrapolated point, equilibrated
        grad_t = 2.0 / op.n * (op.adjoint(op.apply(zt / scale)) / scale - target / scale)
        bt_new = _soft(zt - grad_t / lip, thr)
        if float(np.vdot(zt - bt_new, bt_new - bt)) > 0.0:
            # momentum points uphill: restart it
            t_mom = 1.0
            zt = bt.copy()
            it += 1
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        zt = bt_new + ((t_mom - 1.0) / t_new) * (bt_new - bt)
        bt = bt_new
        t_mom = t_new
        it += 1
        if it % check_every == 0 or it == max_iters:
            b = bt / scale
            grad = 2.0 / op.n * (op.adjoint(op.apply(b)) - target)
            res = _kkt_residual(grad, b, lam)
            if res <= tol:
                return b, res, it
    return bt / scale, res, it


def _cd_passes(gram, target_a, thr, b, passes):
    """Cyclic coordinate descent sweeps on the dense restricted problem (in place)."""
    diag = np.diag(gram)
    q = gram @ b
    for _ in range(passes):
        for i in range(len(b)):
            old = b[i]
            c = target_a[i] - q[i] + diag[i] * old
            new = np.sign(c) * max(abs(c) - thr, 0.0) / diag[i]
            if new != old:
                q += gram[:, i] * (new - old)
                b[i] = new
    return b


def _refined_solve(a, b):
    """Linear solve with two iterative-refinement passes.

    The restricted Grams here can be extremely ill-conditioned (adjacent
    higher-order atoms are nearly collinear); refinement drives the
    backward residual to roundoff, which is the quantity the KKT check
    ends up seeing.
    """
    try:
        x = np.linalg.solve(a, b)
        for _ in range(2):
            x += np.linalg.solve(a, b - a @ x)
    except np.linalg.LinAlgError:
        ridge = 1e-13 * np.trace(a) / len(a)
        eye = ridge * np.eye(len(a))
        x = np.linalg.solve(a + eye, b)
        for _ in range(2):
            x += np.linalg.solve(a + eye, b - a @ x)
    return x


def _solve_small_lasso(gram, target_a, thr, b0, max_steps=500):
    """Restricted lasso by feature-sign search.

    Minimizes b' G b - 2 t' b + 2 thr ||b||_1 exactly: solve the linear
    system under the current sign pattern, line-search through the sign
    crossings when the solution flips a sign, activate the worst
    violating zero coordinate otherwise.  Handles the near-collinear
    columns that defeat plain cyclic descent.
    """
    b = _cd_passes(gram, target_a, thr, b0.astype(float).copy(), passes=3)
    b[np.abs(b) < 1e-15] = 0.0
    theta = np.sign(b)
    active = b != 0
    fptol = 1e-10 * (1.0 + thr)

    def obj(x):
        return float(x @ (gram @ x) - 2.0 * (target_a @ x) + 2.0 * thr * np.abs(x).sum())

    for _ in range(max_steps):
        grad = 2.0 * (gram @ b - target_a)
        slack = np.where(~active, np.abs(grad) - 2.0 * thr, -np.inf)
        i = int(np.argmax(slack))
        if slack[i] > fptol:
            active[i] = True
            theta[i] = -np.sign(grad[i])
        elif not active.any():
            return b
        s = np.flatnonzero(active)
        sub = gram[np.ix_(s, s)]
        x = _refined_solve(sub, target_a[s] - thr * theta[s])
        bs = b[s]
        flipped = np.sign(x) != theta[s]
        if not flipped.any():
            b[s] = x
        else:
            diffs = x - bs
            with np.errstate(divide="ignore", invalid="ignore"):
                cross = np.where(diffs != 0.0, -bs / diffs, np.inf)
            candidates = sorted({float(g) for g in cross if 0.0 < g <= 1.0} | {1.0})
            best_val, best_vec = None, None
            for g in candidates:
                trial = b.copy()
                trial[s] = bs + g * diffs
                trial[np.abs(trial) < 1e-15] = 0.0
                val = obj(trial)
                if best_val is None or val < best_val:
                    best_val, best_vec = val, trial
            b = best_vec
        b[np.abs(b) < 1e-15] = 0.0
        active = b != 0
        theta = np.sign(b)
        grad = 2.0 * (gram @ b - target_a)
        ok_active = not active.any() or np.abs(grad[active] + 2.0 * thr * theta[active]).max() <= fptol
        ok_zero = active.all() or (np.abs(grad[~active]) - 2.0 * thr).max() <= fptol
        if ok_active and ok_zero:
            return b
    return _admm_small_lasso(gram, target_a, thr, b)


def _sub_kkt(gram, target_a, thr, b):
    grad = 2.0 * (gram @ b - target_a)
    active = b != 0
    viol = np.maximum(np.abs(grad) - 2.0 * thr, 0.0)
    viol[active] = 0.0
    va = np.abs(grad + 2.0 * thr * np.sign(b))
    va[~active] = 0.0
    return float(max(viol.max(initial=0.0), va.max(initial=0.0)))


def _admm_small_lasso(gram, target_a, thr, b0, iters=4000, tol_scale=1e-13):
    """Rescue solver for restricted lassos with pathological conditioning.

    Scaled ADMM with a factored ridge system and over-relaxation; the
    sign pattern found is polished by a refined sign-restricted solve,
    which makes the stationarity on the support exact to roundoff.
    """
    m = len(target_a)
    rho = max(np.trace(gram) / m, 1e-12)
    system = 2.0 * gram + rho * np.eye(m)
    chol = np.linalg.cholesky(system)

    def solve(rhs):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))

    z = b0.copy()
    u = np.zeros(m)
    tol = tol_scale * (1.0 + float(np.abs(target_a).max()))
    best, best_res = z.copy(), _sub_kkt(gram, target_a, thr, z)
    for it in range(iters):
        x = solve(2.0 * target_a + rho * (z - u))
        x_rel = 1.6 * x + (1.0 - 1.6) * z
        z_new = _soft(x_rel + u, 2.0 * thr / rho)
        u += x_rel - z_new
        z = z_new
        if it % 50 == 49:
            polished = z.copy()
            s = np.flatnonzero(polished)
            if len(s):
                xs = _refined_solve(gram[np.ix_(s, s)], target_a[s] - thr * np.sign(polished[s]))
                keep = np.sign(xs) == np.sign(polished[s])
                if keep.all():
                    polished[s] = xs
            res = _sub_kkt(gram, target_a, thr, polished)
            if res < best_res:
                best, best_res = polished.copy(), res
            if best_res <= tol:
                break
    return best


def _working_set_cd(op, y_perp, lam, b0, tol, max_iters, check_every, max_active=4000):
    target = op.adjoint(y_perp)
    red = op.reduced_shape
    b = b0.copy()
    flat_b = b.ravel()
    active = list(np.flatnonzero(flat_b))
    gram_cols = {}

    def gram_col(j):
        col = gram_cols.get(j)
        if col is None:
            col = op.atom_column(np.unravel_index(j, red)).ravel()
            gram_cols[j] = col
        return col

    target_flat = target.ravel()
    it = 0
    stalls = 0
    res = np.inf
    while it < max_iters:
        if active:
            if len(active) > max_active:
                raise ConvergenceError(
                    f"working set exceeded {max_active} coordinates", kkt_residual=np.inf
                )
            gram = np.empty((len(active), len(active)))
            for col_i, j in enumerate(active):
                gram[:, col_i] = gram_col(j)[active]
            sub_b = flat_b[active].copy()
            sub_b = _solve_small_lasso(gram, target_flat[active], lam * op.n, sub_b)
            flat_b.fill(0.0)
            flat_b[active] = sub_b
        it += 1
        bt = flat_b.reshape(red)
        grad = 2.0 / op.n * (op.adjoint(op.apply(bt)) - target)
        res = _kkt_residual(grad, bt, lam)
        if res <= tol:
            return bt, res, it
        gflat = np.abs(grad.ravel())
        gflat[flat_b != 0] = 0.0
        for j in active:
            gflat[j] = 0.0
        order = np.argsort(gflat)[::-1]
        new = [int(j) for j in order[:50] if gflat[j] > 2.0 * lam]
        if not new:
            # residual sits on the active set: re-solve it more tightly
            stalls += 1
            if stalls >= 3:
                return bt, res, it
        else:
            stalls = 0
        active = sorted(set(active) | set(new) | set(np.flatnonzero(flat_b)))
    return flat_b.reshape(red), res, it


def fit_margin(y, k, config=None):
    """Fit the free-margin component of ``y`` by the l1-penalized synthesis problem.

    With lam = 0 this returns the plain projection (coefficients are the
    order-k differences of y).  With lam >= lambda_max(y, k) the zero fit
    is returned directly.  Otherwise the configured iterative solver runs
    until the KKT residual drops below tol.
    """
    config = config or FitConfig()
    y = check_tensor(y)
    if config.lam is None:
        lam = config.lambda_scale * universal_lambda(np.prod(y.shape), config.sigma)
    elif np.isscalar(config.lam):
        lam = config.lam
    else:
        raise ValueError("fit_margin needs a scalar lam (or None for the universal rule)")
    lam = float(lam)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    op = SynthesisOperator(y.shape, k)
    y_perp = op.project(y)
    tol = config.tol
    if tol is None:
        tol = 1e-8 * (1.0 + frobenius_sq(y) / op.n)

    def finish(b, res, iters):
        fitted = op.apply(b)
        obj = frobenius_sq(y_perp - fitted) / op.n + 2.0 * lam * float(np.abs(b).sum())
        return FitResult(
            coefficients=b, fitted=fitted, objective=obj, kkt_residual=res,
            iterations=iters, lam=lam,
        )

    if lam == 0.0:
        b = total_diff(y, DiffSpec(k=k, shape=y.shape))
        return finish(b, 0.0, 0)
    target = op.adjoint(y_perp)
    if float(np.abs(target).max()) / op.n <= lam:
        return finish(np.zeros(op.reduced_shape), 0.0, 0)
    b0 = config.warm_start
    b0 = np.zeros(op.reduced_shape) if b0 is None else np.asarray(b0, dtype=np.float64).copy()
    if config.solver_kind == "accelerated-proximal-gradient":
        b, res, iters = _fista(op, y_perp, lam, b0, tol, config.max_iters, config.check_every)
    elif config.solver_kind == "coordinate-descent":
        b, res, iters = _working_set_cd(op, y_perp, lam, b0, tol, config.max_iters, config.check_every)
    else:
        raise ValueError(f"unknown solver_kind {config.solver_kind!r}")
    if res > tol:
        raise ConvergenceError(
            f"no convergence in {config.max_iters} iterations (kkt {res:.3e} > tol {tol:.3e})",
            kkt_residual=res,
        )
    return finish(b, res, iters)


def duality_gap(y, k, lam, beta):
    """Primal-dual gap certificate for the synthesis problem at ``beta``.

    Scales the residual into the dual-feasible set; the returned gap
    upper-bounds the objective suboptimality, so a tiny gap certifies
    near-optimality independently of the iteration history.
    """
    y = check_tensor(y)
    op = SynthesisOperator(y.shape, k)
    beta = np.asarray(beta, dtype=np.float64)
    y_perp = op.project(y)
    r = y_perp - op.apply(beta)
    primal = frobenius_sq(r) / op.n + 2.0 * lam * float(np.abs(beta).sum())
    corr = float(np.abs(op.adjoint(r)).max())
    scale = 1.0 if corr <= lam * op.n else lam * op.n / corr
    u = (2.0 * scale / op.n) * r
    dual = float(np.vdot(u, y_perp)) - op.n * frobenius_sq(u) / 4.0
    return primal - dual


def kkt_check(y, k, lam, beta):
    """Max subgradient-optimality violation of coefficients ``beta`` for (y, lam)."""
    y = check_tensor(y)
    op = SynthesisOperator(y.shape, k)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != op.reduced_shape:
        raise ShapeError(f"coefficients shape {beta.shape}, expected {op.reduced_shape}")
    grad = 2.0 / op.n * op.adjoint(op.apply(beta) - op.project(y))
    return _kkt_residual(grad, beta, float(lam))


def default_margin_lambda(key, shape, k, config):
    """Default per-margin tuning level, shaped like the adaptive-rate choice.

    lambda_{M,h} = scale * |M|^{3/2} * grid^{-(2k-1)/2}
                   * sigma * sqrt((4 log(2 n_M) + 2 d log(k+1)) / n),
    with ``grid`` the per-axis jump count knob (config.grid_size).
    """
    d = len(shape)
    n = float(np.prod(shape))
    n_m = float(np.prod([shape[a] for a in key.axes]))
    m = len(key.axes)
    base = config.sigma * np.sqrt((4.0 * np.log(2.0 * n_m) + 2.0 * d * np.log(k + 1.0)) / n)
    return float(config.lambda_scale * m ** 1.5 * config.grid_size ** (-(2 * k - 1) / 2.0) * base)


def fit_all_margins(y, k, config=None):
    """Estimate every margin and assemble the denoised tensor.

    Components with an empty free-axis set are estimated by projection
    (least squares); every other margin is flattened to its free axes
    and fitted by the synthesis solver with its own tuning parameter.
    Returns (per-margin dict of FitResult, assembled tensor).
    """
    config = config or FitConfig()
    y = check_tensor(y)
    d = y.ndim
    dicts = axis_dictionaries(y.shape, k)
    parts = anova_decompose(y, k, dicts)
    lam_map = config.lam if isinstance(config.lam, dict) else None
    results = {}
    assembled = np.zeros_like(y)
    for key in margin_keys(d, k):
        comp = parts[key]
        if not key.axes:
            results[key] = FitResult(
                coefficients=np.zeros(()), fitted=comp, objective=0.0,
                kkt_residual=0.0, iterations=0, lam=0.0,
            )
            assembled += comp
            continue
        if lam_map is not None:
            lam = lam_map[key]
        elif np.isscalar(config.lam) and config.lam is not None:
            lam = float(config.lam)
        else:
            lam = default_margin_lambda(key, y.shape, k, config)
        sub_shape = tuple(y.shape[a] for a in key.axes)
        if config.margin_scale == "paper" and len(key.axes) < d:
            lam = lam * float(np.prod(sub_shape)) ** (k - 1)
        ybar = margin_flatten(comp, key, dicts)
        sub_cfg = replace(config, lam=lam, warm_start=None)
        res = fit_margin(ybar, k, sub_cfg)
        fitted_full = margin_expand(res.fitted, key, dicts)
        results[key] = replace(res, fitted=fitted_full)
        assembled += fitted_full
    return results, assembled

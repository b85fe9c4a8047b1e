"""Group-lasso solver for the density-ratio loss.

Minimizes loss(delta) + lambda * sum_e ||delta_e|| over per-edge blocks via
accelerated proximal gradient descent with backtracking line search.  The
proximal map of the group penalty shrinks each block toward zero and sets it
to exactly zero when its norm falls below the threshold, so the estimated
change support never needs a cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, DivergenceError, ShapeError
from .features import DeltaParams, FeatureTensor, check_pair
from .kliep import _loss_and_grad, _loss_value

_BACKTRACK_SLACK = 1e-12
_MIN_STEP = 1e-20
_FIXED_POINT_FACTOR = 10.0
_CONSECUTIVE_SMALL = 3


@dataclass(frozen=True)
class SolverOptions:
    """Knobs for :func:`solve_group_lasso`.

    step="backtracking" halves the step until the local quadratic model
    majorizes the loss; step="fixed" uses ``step_size`` as-is and raises
    DivergenceError if the objective leaves the finite range.  Acceleration
    enables the momentum sequence; monotone_restart drops the momentum
    whenever it would increase the objective, which keeps the objective
    trace non-increasing.
    """

    max_iterations: int = 2000
    tolerance: float = 1e-8
    step: str = "backtracking"
    step_size: float = 1.0
    backtrack_factor: float = 0.5
    acceleration: bool = True
    monotone_restart: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DataError("max_iterations must be >= 1")
        if not (self.tolerance > 0):
            raise DataError("tolerance must be > 0")
        if self.step not in ("backtracking", "fixed"):
            raise DataError(f"unknown step rule {self.step!r}")
        if not (self.step_size > 0):
            raise DataError("step_size must be > 0")
        if not (0 < self.backtrack_factor < 1):
            raise DataError("backtrack_factor must be in (0, 1)")


@dataclass(frozen=True)
class SolveReport:
    """What happened during one solve: trace, iterations, and termination."""

    objective_trace: np.ndarray
    iterations: int
    active_set: tuple[tuple[int, int], ...]
    termination: str  # "converged" or "max-iter"
    lambda_: float
    step_size: float
    n_backtracks: int = 0


def group_soft_threshold(block: np.ndarray, threshold: float) -> np.ndarray:
    """Proximal map of threshold * ||.||: shrink the block, exact zero inside."""
    block = np.asarray(block, dtype=np.float64)
    nrm = float(np.linalg.norm(block))
    if nrm <= threshold:
        return np.zeros_like(block)
    return (1.0 - threshold / nrm) * block


def _prox_flat(v: np.ndarray, threshold: float, block_size: int) -> np.ndarray:
    """Blockwise group soft threshold of a flat vector; zeros are exact."""
    if threshold == 0.0:
        return v.copy()
    blocks = v.reshape(-1, block_size)
    norms = np.linalg.norm(blocks, axis=1)
    scale = np.where(norms > threshold, 1.0 - threshold / np.where(norms > 0, norms, 1.0), 0.0)
    out = np.where(scale[:, None] > 0.0, blocks * scale[:, None], 0.0)
    return out.reshape(-1)


def penalty(values: np.ndarray, lambda_: float, block_size: int) -> float:
    return float(lambda_ * np.linalg.norm(values.reshape(-1, block_size), axis=1).sum())


def lambda_max(fp: FeatureTensor, fq: FeatureTensor) -> float:
    """Smallest penalty at which the all-zero solution is stationary.

    Equals the largest block norm of the loss gradient at zero, i.e. of the
    feature mean difference between the two samples.  For any lambda at or
    above this value the zero vector satisfies the optimality condition, so
    the solver returns exact zeros.
    """
    check_pair(fp, fq)
    g0 = fq.values.mean(axis=0) - fp.values.mean(axis=0)
    b = fq.block_size
    return float(np.linalg.norm(g0.reshape(-1, b), axis=1).max())


def solve_group_lasso(
    fp: FeatureTensor,
    fq: FeatureTensor,
    lambda_: float,
    options: SolverOptions | None = None,
    warm_start: DeltaParams | None = None,
) -> tuple[DeltaParams, SolveReport]:
    """Fit the group-penalized density-ratio objective.

    Parameters
    ----------
    fp, fq : FeatureTensor
        Numerator and denominator feature tensors over the same edge set.
    lambda_ : float
        Group penalty level, >= 0.
    options : SolverOptions, optional
    warm_start : DeltaParams, optional
        Starting point (must share the edge set); defaults to zeros.

    Returns
    -------
    (DeltaParams, SolveReport)
        The blocks of the solution are exactly zero off the active set.
        With monotone restart (the default) the objective trace is
        non-increasing, and "converged" additionally certifies a proximal
        fixed-point residual below 10x the tolerance.
    """
    check_pair(fp, fq)
    if not (lambda_ >= 0):
        raise DataError(f"lambda must be >= 0, got {lambda_!r}")
    opts = options or SolverOptions()
    bsz = fq.block_size
    if warm_start is not None:
        if warm_start.edge_set != fq.edge_set or warm_start.block_size != bsz:
            raise ShapeError("warm start does not match the feature tensors")
        x = warm_start.values.copy()
    else:
        x = np.zeros(fq.width)

    q = fq.values
    mean_p = fp.values.mean(axis=0)
    lam = float(lambda_)
    eta = opts.step_size
    backtracking = opts.step == "backtracking"
    n_backtracks = 0

    def fval(v: np.ndarray) -> float:
        return _loss_value(v, mean_p, q) + penalty(v, lam, bsz)

    def prox_from(point: np.ndarray, step: float) -> tuple[np.ndarray, float, float, int]:
        """One proximal step from `point`, backtracking if enabled.

        Returns (z, F(z), step used, backtrack count).
        """
        lp, g = _loss_and_grad(point, mean_p, q)
        if backtracking:
            tries = 0
            while True:
                z = _prox_flat(point - step * g, step * lam, bsz)
                lz = _loss_value(z, mean_p, q)
                dz = z - point
                bound = lp + float(g @ dz) + float(dz @ dz) / (2.0 * step)
                if lz <= bound + _BACKTRACK_SLACK * max(1.0, abs(lp)):
                    break
                step *= opts.backtrack_factor
                tries += 1
                if step < _MIN_STEP:
                    raise DivergenceError("line search collapsed; loss is not locally smooth")
            return z, lz + penalty(z, lam, bsz), step, tries
        z = _prox_flat(point - step * g, step * lam, bsz)
        fz = _loss_value(z, mean_p, q) + penalty(z, lam, bsz)
        if not math.isfinite(fz):
            raise DivergenceError(f"objective became non-finite with fixed step {step}")
        return z, fz, step, 0

    fx = fval(x)
    if not math.isfinite(fx):
        raise DivergenceError("objective is non-finite at the starting point")
    y = x.copy()
    t = 1.0
    trace = [fx]
    x_best, f_best = x, fx
    small_streak = 0
    termination = "max-iter"
    iterations = opts.max_iterations

    for k in range(1, opts.max_iterations + 1):
        z, fz, eta, tries = prox_from(y, eta)
        n_backtracks += tries
        if opts.acceleration and opts.monotone_restart and fz > fx:
            # momentum overshot: drop it and step from the last iterate
            t = 1.0
            z, fz, eta, tries = prox_from(x, eta)
            n_backtracks += tries
            if fz > fx:
                z, fz = x, fx  # no progress this round; keep the iterate
        if not math.isfinite(fz):
            raise DivergenceError("objective became non-finite")
        rel_change = abs(fx - fz) / max(1.0, abs(fz))
        if opts.acceleration:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = z + ((t - 1.0) / t_next) * (z - x)
            t = t_next
        else:
            y = z
        x, fx = z, fz
        trace.append(fx)
        if fx < f_best:
            x_best, f_best = x, fx
        small_streak = small_streak + 1 if rel_change < opts.tolerance else 0
        if small_streak >= _CONSECUTIVE_SMALL:
            # certify with the proximal fixed-point residual before stopping
            _, g = _loss_and_grad(x, mean_p, q)
            xp = _prox_flat(x - eta * g, eta * lam, bsz)
            if float(np.max(np.abs(xp - x), initial=0.0)) <= _FIXED_POINT_FACTOR * opts.tolerance:
                termination = "converged"
                iterations = k
                break
            small_streak = 0

    if f_best < fx:
        # only reachable without monotone restart (plain FISTA can ripple)
        x = x_best
    delta = DeltaParams(edge_set=fq.edge_set, values=x, block_size=bsz)
    report = SolveReport(
        objective_trace=np.asarray(trace),
        iterations=iterations,
        active_set=delta.support(),
        termination=termination,
        lambda_=lam,
        step_size=eta,
        n_backtracks=n_backtracks,
    )
    return delta, report


def lambda_grid(lambda_max_value: float, size: int = 40, span: float = 100.0) -> np.ndarray:
    """Log-spaced penalty grid from lambda_max down to lambda_max/span."""
    if not (lambda_max_value > 0):
        raise DataError("lambda_max must be > 0 to build a grid")
    if size < 2:
        raise DataError("grid size must be >= 2")
    if not (span > 1):
        raise DataError("span must be > 1")
    return np.geomspace(lambda_max_value, lambda_max_value / span, size)


def reg_path(
    fp: FeatureTensor,
    fq: FeatureTensor,
    lambdas,
    options: SolverOptions | None = None,
) -> list[tuple[float, DeltaParams, SolveReport]]:
    """Solve along a strictly decreasing penalty grid with warm starts.

    Each solve starts from the previous solution.  Any solver error aborts
    the whole path.
    """
    lams = [float(l) for l in lambdas]
    if not lams:
        raise DataError("empty lambda grid")
    for a, b in zip(lams, lams[1:]):
        if not (a > b):
            raise DataError("lambda grid must be strictly decreasing")
    if not (lams[-1] > 0):
        raise DataError("lambda grid must be positive")
    out: list[tuple[float, DeltaParams, SolveReport]] = []
    warm: DeltaParams | None = None
    for lam in lams:
        delta, report = solve_group_lasso(fp, fq, lam, options=options, warm_start=warm)
        out.append((lam, delta, report))
        warm = delta
    return out

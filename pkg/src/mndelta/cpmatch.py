"""Sparse precision-difference estimation from two sample covariances.

For Gaussian data the difference Delta = Theta_q - Theta_p of the two
precision matrices satisfies S_p Delta S_q + S_p - S_q ~= 0 at the population
covariances, so a sparse estimate is obtained from

    minimize ||Delta||_1  subject to  ||S_p Delta S_q + S_p - S_q||_inf <= eps,
    Delta symmetric.

The program is solved by ADMM on the splitting Z = S_p Delta S_q with a
linearized Delta update: one gradient step on the augmented quadratic
followed by elementwise soft thresholding of the symmetrized point.  Small
entries of the result are then hard-thresholded to read off a support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, InfeasibleError, ShapeError
from .features import Dataset


@dataclass(frozen=True)
class CovariancePair:
    """Two same-shape symmetric covariance matrices with nonnegative diagonals."""

    sp: np.ndarray
    sq: np.ndarray

    def __post_init__(self):
        sp = np.array(self.sp, dtype=np.float64, copy=True)
        sq = np.array(self.sq, dtype=np.float64, copy=True)
        for name, s in (("sp", sp), ("sq", sq)):
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ShapeError(f"{name} must be square, got shape {s.shape}")
            if not np.all(np.isfinite(s)):
                raise DataError(f"{name} contains non-finite entries")
            if not np.allclose(s, s.T, atol=1e-12, rtol=0.0):
                raise DataError(f"{name} is not symmetric")
            if np.any(np.diag(s) < 0):
                raise DataError(f"{name} has a negative diagonal entry")
        if sp.shape != sq.shape:
            raise ShapeError(f"covariance shapes differ: {sp.shape} vs {sq.shape}")
        sp.setflags(write=False)
        sq.setflags(write=False)
        object.__setattr__(self, "sp", sp)
        object.__setattr__(self, "sq", sq)

    @property
    def m(self) -> int:
        return self.sp.shape[0]


@dataclass(frozen=True)
class AdmmOptions:
    """Iteration knobs for :func:`solve_cp`.

    ``mu`` is the linearization weight; left at None it is set just above
    rho * (||S_p||_2 ||S_q||_2)^2, the smallest value for which the
    linearized update majorizes the quadratic.  Values below that bound are
    rejected.
    """

    rho: float = 1.0
    mu: float | None = None
    max_iterations: int = 5000
    primal_tolerance: float = 1e-6
    dual_tolerance: float = 1e-6

    def __post_init__(self):
        if not (self.rho > 0):
            raise DataError("rho must be > 0")
        if self.mu is not None and not (self.mu > 0):
            raise DataError("mu must be > 0 when given")
        if self.max_iterations < 1:
            raise DataError("max_iterations must be >= 1")
        if not (self.primal_tolerance > 0 and self.dual_tolerance > 0):
            raise DataError("tolerances must be > 0")


@dataclass(frozen=True)
class AdmmReport:
    iterations: int
    termination: str  # "converged" or "max-iter"
    primal_residual: float
    dual_residual: float
    objective: float
    epsilon: float
    rho: float
    mu: float


def sample_covariance(data: Dataset) -> np.ndarray:
    """Mean-centered second-moment matrix (1/n factor), symmetrized."""
    if data.samples.ndim != 2:
        raise ShapeError("sample covariance needs scalar variables (2-D data)")
    x = data.samples
    xc = x - x.mean(axis=0)
    c = (xc.T @ xc) / x.shape[0]
    return (c + c.T) / 2.0


def quasi_residual(delta_mat: np.ndarray, sp: np.ndarray, sq: np.ndarray) -> np.ndarray:
    """The matching residual S_p Delta S_q + S_p - S_q."""
    delta_mat = np.asarray(delta_mat, dtype=np.float64)
    sp = np.asarray(sp, dtype=np.float64)
    sq = np.asarray(sq, dtype=np.float64)
    if delta_mat.shape != sp.shape or sp.shape != sq.shape:
        raise ShapeError("delta and covariances must share one square shape")
    return sp @ delta_mat @ sq + sp - sq


def _soft(a: np.ndarray, t: float) -> np.ndarray:
    return np.sign(a) * np.maximum(np.abs(a) - t, 0.0)


def threshold(delta_mat: np.ndarray, tau: float) -> np.ndarray:
    """Zero out entries with magnitude strictly below tau (exact zeros)."""
    if tau < 0:
        raise DataError("tau must be >= 0")
    delta_mat = np.asarray(delta_mat, dtype=np.float64)
    return np.where(np.abs(delta_mat) < tau, 0.0, delta_mat)


def solve_cp(
    sp: np.ndarray,
    sq: np.ndarray,
    epsilon: float = 0.2,
    options: AdmmOptions | None = None,
) -> tuple[np.ndarray, AdmmReport]:
    """Minimum-l1 symmetric Delta with the matching residual inside the box.

    Parameters
    ----------
    sp, sq : array
        Sample covariances of the two datasets.
    epsilon : float
        Sup-norm slack on the residual.  Zero is allowed only when both
        covariances are invertible (otherwise no exact solution exists).
    options : AdmmOptions, optional

    Returns
    -------
    (delta, AdmmReport)
        ``delta`` is symmetric.  If the iteration cap is hit while the
        residual is still materially outside the box, InfeasibleError is
        raised instead of returning a misleading answer.
    """
    pair = CovariancePair(sp, sq)
    sp, sq = pair.sp, pair.sq
    if not (epsilon >= 0):
        raise DataError(f"epsilon must be >= 0, got {epsilon!r}")
    opts = options or AdmmOptions()

    if epsilon == 0:
        for name, s in (("sp", sp), ("sq", sq)):
            ev = np.linalg.eigvalsh(s)
            if np.min(np.abs(ev)) <= 1e-12 * max(1.0, float(np.max(np.abs(ev)))):
                raise InfeasibleError(
                    f"epsilon=0 needs invertible covariances, but {name} is singular"
                )

    rho = opts.rho
    norm_p = float(np.linalg.norm(sp, 2))
    norm_q = float(np.linalg.norm(sq, 2))
    mu_floor = rho * (norm_p * norm_q) ** 2
    if opts.mu is None:
        mu = mu_floor * 1.01 if mu_floor > 0 else 1.0
    else:
        if opts.mu < mu_floor:
            raise DataError(
                f"mu={opts.mu} is below the majorization bound {mu_floor:.6g}"
            )
        mu = float(opts.mu)

    m = pair.m
    center = sq - sp
    lo = center - epsilon
    hi = center + epsilon
    delta = np.zeros((m, m))
    z = np.clip(np.zeros((m, m)), lo, hi)
    u = np.zeros((m, m))
    a_delta = np.zeros((m, m))  # S_p Delta S_q for the current delta

    primal = np.inf
    dual = np.inf
    termination = "max-iter"
    iterations = opts.max_iterations
    for k in range(1, opts.max_iterations + 1):
        grad = rho * (sp @ (a_delta - z + u) @ sq)
        v = delta - grad / mu
        delta_new = _soft((v + v.T) / 2.0, 1.0 / mu)
        a_new = sp @ delta_new @ sq
        w = a_new + u
        z_new = np.clip(w, lo, hi)
        u = w - z_new
        primal = float(np.max(np.abs(a_new - z_new)))
        dual = float(
            rho * np.max(np.abs(sp @ (z_new - z) @ sq))
            + mu * np.max(np.abs(delta_new - delta))
        )
        delta, z, a_delta = delta_new, z_new, a_new
        if primal <= opts.primal_tolerance and dual <= opts.dual_tolerance:
            termination = "converged"
            iterations = k
            break

    delta = (delta + delta.T) / 2.0
    residual = float(np.max(np.abs(quasi_residual(delta, sp, sq))))
    if termination == "max-iter":
        scale = float(np.max(np.abs(center))) + epsilon
        if residual > epsilon + max(0.05 * scale, 1e3 * opts.primal_tolerance):
            raise InfeasibleError(
                f"iteration cap hit with residual {residual:.3g} far outside "
                f"the epsilon={epsilon} box"
            )
    report = AdmmReport(
        iterations=iterations,
        termination=termination,
        primal_residual=primal,
        dual_residual=dual,
        objective=float(np.abs(delta).sum()),
        epsilon=float(epsilon),
        rho=rho,
        mu=mu,
    )
    return delta, report

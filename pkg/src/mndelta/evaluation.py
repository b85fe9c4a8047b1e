"""Recovery metrics, ROC/AUC benchmarking, and theory diagnostics.

The unit of evaluation is the edge: an estimate marks an edge as changed
when its parameter block (or matrix entry) is nonzero, and is scored against
the true change support S.  TPR is the recovered fraction of S, TNR the
fraction of the complement kept zero; either rate is undefined (None) when
its reference set is empty.  ROC curves sweep a regularization or threshold
parameter and are summarized by trapezoidal AUC with pinned endpoints.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import kliep, solvers, synthgen
from .cpmatch import AdmmOptions, sample_covariance, solve_cp, threshold
from .exceptions import DataError, MnDeltaError, ShapeError
from .features import (
    DeltaParams,
    EdgeSet,
    FeatureMap,
    FeatureTensor,
    build_edge_set,
    eval_features,
)
from .solvers import SolverOptions


class RatePair(NamedTuple):
    tpr: float | None
    tnr: float | None


def _support_indices(estimate, truth: DeltaParams) -> np.ndarray:
    """0-based positions (in the truth's edge order) the estimate marks active."""
    es = truth.edge_set
    if isinstance(estimate, DeltaParams):
        if estimate.edge_set != es:
            raise ShapeError("estimate and truth are over different edge sets")
        return estimate.support_indices()
    mat = np.asarray(estimate)
    if mat.ndim != 2 or mat.shape != (es.m, es.m):
        raise ShapeError(f"matrix estimate must be {es.m}x{es.m}, got {mat.shape}")
    active = [j for j, (u, v) in enumerate(es.edges) if mat[u - 1, v - 1] != 0.0]
    return np.asarray(active, dtype=np.intp)


def tpr_tnr(estimate, truth: DeltaParams) -> RatePair:
    """True-positive and true-negative rates of a support estimate.

    ``estimate`` is a DeltaParams over the truth's edge set or a symmetric
    matrix read at the truth's edges.  Rates over an empty reference set are
    returned as None rather than a made-up value.
    """
    est = set(int(j) for j in _support_indices(estimate, truth))
    s = set(int(j) for j in truth.support_indices())
    n_edges = truth.edge_set.n_edges
    sc_size = n_edges - len(s)
    tpr = None if not s else len(est & s) / len(s)
    if sc_size == 0:
        tnr = None
    else:
        false_pos = len(est - s)
        tnr = (sc_size - false_pos) / sc_size
    return RatePair(tpr=tpr, tnr=tnr)


@dataclass(frozen=True)
class RocCurve:
    """Operating points of a support-estimate sweep, one per distinct FPR.

    ``points`` is (k, 2) with columns (fpr, tpr), sorted by fpr; duplicate
    FPRs from the raw sweep are collapsed to their best TPR.  ``params``
    holds the sweep parameter that achieved each kept point.
    """

    points: np.ndarray
    params: np.ndarray
    sweep: str

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        par = np.array(self.params, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ShapeError("points must be (k, 2)")
        if par.shape != (pts.shape[0],):
            raise ShapeError("params must have one entry per point")
        if np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12):
            raise DataError("rates must lie in [0, 1]")
        pts.setflags(write=False)
        par.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "params", par)


def roc_from_path(path: Iterable[Sequence], truth: DeltaParams, sweep: str = "lambda") -> RocCurve:
    """Build an ROC curve from a sweep of estimates.

    ``path`` yields (param, estimate) or (param, estimate, report) tuples,
    e.g. the output of :func:`mndelta.solvers.reg_path` or a threshold sweep
    of a matrix estimate.  Needs a truth with nonempty S and S^c.
    """
    best: dict[float, tuple[float, float]] = {}
    n_entries = 0
    for entry in path:
        if len(entry) < 2:
            raise DataError("path entries must be (param, estimate, ...)")
        param = float(entry[0])
        rates = tpr_tnr(entry[1], truth)
        if rates.tpr is None or rates.tnr is None:
            raise DataError("ROC needs both rates defined (nonempty S and S^c)")
        fpr = 1.0 - rates.tnr
        n_entries += 1
        if fpr not in best or rates.tpr > best[fpr][0]:
            best[fpr] = (rates.tpr, param)
    if n_entries == 0:
        raise DataError("empty path")
    fprs = sorted(best)
    pts = np.array([[f, best[f][0]] for f in fprs])
    par = np.array([best[f][1] for f in fprs])
    return RocCurve(points=pts, params=par, sweep=sweep)


def auc(curve: RocCurve) -> float:
    """Area under the curve with (0, 0) and (1, 1) pinned.

    Points are sorted internally, so the input order of the sweep never
    changes the value.
    """
    pts = np.vstack([curve.points, [0.0, 0.0], [1.0, 1.0]])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


@dataclass(frozen=True)
class DiagnosticRecord:
    """Support-recovery theory quantities at the true parameters.

    ``lambda_min`` is the smallest eigenvalue of the Fisher information
    restricted to the true support; ``alpha`` is the incoherence margin
    1 - max over off-support rows of the l1 norm of I_{tS} I_{SS}^{-1}.
    Positive values of both back the sparsistency guarantees.
    """

    lambda_min: float | None
    alpha: float | None
    dependency_ok: bool
    incoherence_ok: bool
    singular: bool
    n_support: int
    width: int


def diagnose_assumptions(
    delta_star: DeltaParams,
    fq: FeatureTensor,
    support: EdgeSet | Iterable[Sequence[int]] | None = None,
    max_dim: int = 4096,
) -> DiagnosticRecord:
    """Evaluate the recovery-theory quantities at the true parameters.

    ``support`` defaults to the nonzero blocks of ``delta_star``; it can be
    overridden with an explicit edge collection.  A singular on-support
    information block is reported (flags False), not raised.
    """
    es = fq.edge_set
    if support is None:
        s_idx = [int(j) for j in delta_star.support_indices()]
    else:
        pairs = support.edges if isinstance(support, EdgeSet) else support
        try:
            s_idx = sorted({es.index_of(int(p[0]), int(p[1])) for p in pairs})
        except KeyError as exc:
            raise DataError(f"support edge not in the feature edge set: {exc}") from exc
    if not s_idx:
        raise DataError("empty support: nothing to diagnose")
    info = kliep.hessian(delta_star, fq, max_dim=max_dim)
    b = fq.block_size
    flat_s = np.asarray([j * b + k for j in s_idx for k in range(b)], dtype=np.intp)
    mask = np.ones(info.shape[0], dtype=bool)
    mask[flat_s] = False
    flat_sc = np.flatnonzero(mask)

    i_ss = info[np.ix_(flat_s, flat_s)]
    evals = np.linalg.eigvalsh(i_ss)
    lam_min = float(evals[0])
    scale = max(1.0, float(np.max(np.abs(evals))))
    if lam_min <= 1e-12 * scale:
        return DiagnosticRecord(
            lambda_min=lam_min,
            alpha=None,
            dependency_ok=False,
            incoherence_ok=False,
            singular=True,
            n_support=len(s_idx),
            width=fq.width,
        )
    if flat_sc.size == 0:
        alpha = None
        incoherence_ok = True  # no off-support rows to violate the margin
    else:
        i_sc_s = info[np.ix_(flat_sc, flat_s)]
        coef = np.linalg.solve(i_ss, i_sc_s.T).T  # one row per off-support coordinate
        # entrywise l1 of I_{tS} I_SS^{-1}, grouped per off-support edge block
        group_l1 = np.abs(coef).sum(axis=1).reshape(-1, b).sum(axis=1)
        alpha = float(1.0 - group_l1.max())
        incoherence_ok = alpha > 0
    return DiagnosticRecord(
        lambda_min=lam_min,
        alpha=alpha,
        dependency_ok=True,
        incoherence_ok=incoherence_ok,
        singular=False,
        n_support=len(s_idx),
        width=fq.width,
    )


@dataclass(frozen=True)
class BenchmarkConfig:
    """Lattice change-detection benchmark settings.

    Each trial builds a side x side 4-neighbor lattice model, removes
    sqrt(m) = side edges, draws ``n_samples`` from each model, and scores
    both estimators by AUC over their sweeps.
    """

    methods: tuple[str, ...] = ("kliep", "cp")
    dims: tuple[int, ...] = (9, 16, 25, 36, 49, 64, 81, 100)
    trials: int = 50
    seed: int = 1
    n_samples: int = 50
    epsilon: float = 0.2
    lambda_grid_size: int = 40
    lambda_span: float = 100.0
    tau_grid_size: int = 40
    max_failure_rate: float = 0.1
    solver_options: SolverOptions = field(
        default_factory=lambda: SolverOptions(tolerance=1e-6, max_iterations=500)
    )
    admm_options: AdmmOptions = field(default_factory=AdmmOptions)

    def __post_init__(self):
        for meth in self.methods:
            if meth not in ("kliep", "cp"):
                raise DataError(f"unknown method {meth!r}")
        if not self.methods:
            raise DataError("methods must be nonempty")
        for m in self.dims:
            side = math.isqrt(int(m))
            if side * side != m or side < 2:
                raise DataError(f"dims must be perfect squares >= 4, got {m}")
        if self.trials < 1:
            raise DataError("trials must be >= 1")
        if self.n_samples < 2:
            raise DataError("n_samples must be >= 2")
        if not (0 <= self.max_failure_rate <= 1):
            raise DataError("max_failure_rate must be in [0, 1]")


@dataclass(frozen=True)
class TrialRecord:
    method: str
    m: int
    trial: int
    seed: int
    auc: float
    curve_points: tuple[tuple[float, float], ...]
    curve_params: tuple[float, ...]


@dataclass(frozen=True)
class BenchmarkResult:
    records: tuple[TrialRecord, ...]
    failures: tuple[dict, ...]
    summary: dict
    n_tasks: int


def _trial_seeds(base_seed: int, m: int, trial: int) -> tuple[int, int, int, int]:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(m, trial))
    state = ss.generate_state(4, dtype=np.uint64)
    return tuple(int(s) for s in state)


def _run_trial(args) -> dict:
    config, m, trial = args
    removal_seed, seed_p, seed_q, record_seed = _trial_seeds(config.seed, m, trial)
    out = {"m": m, "trial": trial, "seed": record_seed, "ok": True, "error": None}
    try:
        side = math.isqrt(m)
        model_p, model_q = synthgen.lattice_change_pair(side, side, removal_seed)
        data_p = synthgen.sample_gaussian(model_p, config.n_samples, seed_p)
        data_q = synthgen.sample_gaussian(model_q, config.n_samples, seed_q)
        truth = synthgen.true_delta(model_p.theta, model_q.theta)
        if "kliep" in config.methods:
            es = build_edge_set(m)
            fmap = FeatureMap.product()
            fp = eval_features(data_p, es, fmap)
            fq = eval_features(data_q, es, fmap)
            lmax = solvers.lambda_max(fp, fq)
            if lmax <= 0:
                raise DataError("degenerate data: lambda_max is zero")
            grid = solvers.lambda_grid(lmax, config.lambda_grid_size, config.lambda_span)
            path = solvers.reg_path(fp, fq, grid, options=config.solver_options)
            curve = roc_from_path(((lam, d) for lam, d, _ in path), truth, sweep="lambda")
            out["kliep"] = {
                "auc": auc(curve),
                "points": [tuple(p) for p in curve.points],
                "params": [float(x) for x in curve.params],
            }
        if "cp" in config.methods:
            s_p = sample_covariance(data_p)
            s_q = sample_covariance(data_q)
            delta_hat, _ = solve_cp(s_p, s_q, config.epsilon, config.admm_options)
            top = float(np.max(np.abs(delta_hat)))
            taus = np.linspace(0.0, top, config.tau_grid_size) if top > 0 else np.array([0.0])
            sweep = [(tau, threshold(delta_hat, tau)) for tau in taus]
            curve = roc_from_path(sweep, truth, sweep="tau")
            out["cp"] = {
                "auc": auc(curve),
                "points": [tuple(p) for p in curve.points],
                "params": [float(x) for x in curve.params],
            }
    except Exception as exc:  # failure recorded, not raised: the run decides
        out["ok"] = False
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def run_benchmark(config: BenchmarkConfig, jobs: int = 1) -> BenchmarkResult:
    """Run the lattice benchmark grid.

    ``jobs`` > 1 distributes trials over worker processes; results are
    aggregated in a fixed (m, trial) order, so the output is identical for
    any job count.  A failure rate above ``config.max_failure_rate`` raises.
    """
    if jobs < 1:
        raise DataError("jobs must be >= 1")
    tasks = [(config, m, t) for m in config.dims for t in range(config.trials)]
    if jobs == 1 or len(tasks) == 1:
        raw = [_run_trial(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_run_trial, tasks, chunksize=4))
    raw.sort(key=lambda r: (r["m"], r["trial"]))

    records: list[TrialRecord] = []
    failures: list[dict] = []
    for r in raw:
        if not r["ok"]:
            failures.append({"m": r["m"], "trial": r["trial"], "seed": r["seed"], "error": r["error"]})
            continue
        for method in config.methods:
            part = r[method]
            records.append(
                TrialRecord(
                    method=method,
                    m=r["m"],
                    trial=r["trial"],
                    seed=r["seed"],
                    auc=part["auc"],
                    curve_points=tuple((float(a), float(b)) for a, b in part["points"]),
                    curve_params=tuple(part["params"]),
                )
            )
    rate = len(failures) / len(tasks)
    if rate > config.max_failure_rate:
        raise MnDeltaError(
            f"{len(failures)}/{len(tasks)} benchmark trials failed "
            f"(rate {rate:.2f} > {config.max_failure_rate})"
        )
    summary: dict = {}
    for method in config.methods:
        for m in config.dims:
            aucs = np.array([rec.auc for rec in records if rec.method == method and rec.m == m])
            key = f"{method}/m={m}"
            if aucs.size == 0:
                summary[key] = {"auc_mean": None, "auc_stderr": None, "n_ok": 0}
            else:
                stderr = float(aucs.std(ddof=1) / math.sqrt(aucs.size)) if aucs.size > 1 else 0.0
                summary[key] = {
                    "auc_mean": float(aucs.mean()),
                    "auc_stderr": stderr,
                    "n_ok": int(aucs.size),
                }
    return BenchmarkResult(
        records=tuple(records),
        failures=tuple(failures),
        summary=summary,
        n_tasks=len(tasks),
    )


def illustrative_recovery(
    seed: int = 7,
    alphas: Sequence[float] = (0.75, 1.0, 1.25, 1.5),
    m: int = 50,
    density: float = 0.1,
    n_remove: int = 6,
    n_samples: int = 500,
    options: SolverOptions | None = None,
) -> dict:
    """Sparse-change recovery demo on one random-graph pair.

    Fits the group-penalized ratio model at lambda = alpha * log(m) / n for
    each alpha (largest first, warm-started downward) and scores the
    recovered support.  Returns the models, data seeds, and one record per
    alpha sorted by alpha.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0,))
    pair_seed, seed_p, seed_q = (int(s) for s in ss.generate_state(3, dtype=np.uint64))
    model_p, model_q = synthgen.random_change_pair(m, density, n_remove, pair_seed)
    data_p = synthgen.sample_gaussian(model_p, n_samples, seed_p)
    data_q = synthgen.sample_gaussian(model_q, n_samples, seed_q)
    truth = synthgen.true_delta(model_p.theta, model_q.theta)

    es = build_edge_set(m)
    fmap = FeatureMap.product()
    fp = eval_features(data_p, es, fmap)
    fq = eval_features(data_q, es, fmap)

    base = math.log(m) / n_samples
    opts = options or SolverOptions(tolerance=1e-7, max_iterations=3000)
    records = []
    warm = None
    for alpha in sorted(set(float(a) for a in alphas), reverse=True):
        lam = alpha * base
        delta, report = solvers.solve_group_lasso(fp, fq, lam, options=opts, warm_start=warm)
        warm = delta
        rates = tpr_tnr(delta, truth)
        records.append(
            {
                "alpha": alpha,
                "lambda": lam,
                "tpr": rates.tpr,
                "tnr": rates.tnr,
                "n_active": len(report.active_set),
                "termination": report.termination,
                "objective": float(report.objective_trace[-1]),
                "delta": delta,
            }
        )
    records.sort(key=lambda r: r["alpha"])
    return {
        "model_p": model_p,
        "model_q": model_q,
        "truth": truth,
        "records": records,
        "seeds": {"pair": pair_seed, "sample_p": seed_p, "sample_q": seed_q},
        "n_samples": n_samples,
    }

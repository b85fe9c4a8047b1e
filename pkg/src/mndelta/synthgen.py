"""Synthetic Gaussian Markov networks with known structural changes.

A graph adjacency A is turned into a precision matrix Theta = 2 I + 0.4 A;
a changed twin is made by deleting a few edges.  Both matrices are kept
positive definite, by resampling and, as a last resort, by raising the
diagonal.  Zero-mean Gaussian samples from the pair give benchmark data with
a known change support and known true change parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, GenerationError, NumericError, ShapeError
from .features import Dataset, DeltaParams, build_edge_set

_MAX_RESAMPLE = 100


def _check_adjacency(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise DataError("adjacency must be symmetric")
    if not np.all((a == 0) | (a == 1)):
        raise DataError("adjacency entries must be 0 or 1")
    if np.any(np.diag(a) != 0):
        raise DataError("adjacency must have a zero diagonal")
    return a.astype(np.int8)


def _is_pd(theta: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(theta)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass(frozen=True)
class GaussianMN:
    """A Gaussian Markov network: adjacency, precision matrix, provenance."""

    adjacency: np.ndarray
    theta: np.ndarray
    seed: int | None = None
    repaired: bool = False

    def __post_init__(self):
        a = _check_adjacency(self.adjacency)
        t = np.array(self.theta, dtype=np.float64, copy=True)
        if t.shape != a.shape:
            raise ShapeError("theta and adjacency shapes differ")
        if not np.allclose(t, t.T, atol=1e-12, rtol=0.0):
            raise DataError("theta must be symmetric")
        if not _is_pd(t):
            raise GenerationError("theta is not positive definite")
        a.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "theta", t)

    @property
    def m(self) -> int:
        return self.theta.shape[0]


def gen_random_graph(m: int, density: float, seed: int) -> np.ndarray:
    """Erdos-Renyi style adjacency: each of the m(m-1)/2 pairs is an edge
    independently with probability ``density``."""
    if not isinstance(m, int) or m < 2:
        raise DataError(f"m must be an integer >= 2, got {m!r}")
    if not (0.0 <= density <= 1.0):
        raise DataError(f"density must be in [0, 1], got {density!r}")
    rng = np.random.default_rng(seed)
    a = np.zeros((m, m), dtype=np.int8)
    iu = np.triu_indices(m, k=1)
    mask = rng.random(len(iu[0])) < density
    a[iu] = mask.astype(np.int8)
    return a + a.T


def gen_lattice_graph(side: int) -> np.ndarray:
    """4-neighbor grid over side x side nodes, row-major node order."""
    if not isinstance(side, int) or side < 2:
        raise DataError(f"side must be an integer >= 2, got {side!r}")
    m = side * side
    a = np.zeros((m, m), dtype=np.int8)
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                a[i, i + 1] = a[i + 1, i] = 1
            if r + 1 < side:
                a[i, i + side] = a[i + side, i] = 1
    return a


def perturb_remove_edges(adjacency: np.ndarray, n_remove: int, seed: int) -> np.ndarray:
    """Delete ``n_remove`` distinct edges chosen uniformly at random."""
    a = _check_adjacency(adjacency).copy()
    if n_remove < 0:
        raise DataError("n_remove must be >= 0")
    rows, cols = np.nonzero(np.triu(a, k=1))
    if n_remove > len(rows):
        raise DataError(f"cannot remove {n_remove} edges from a graph with {len(rows)}")
    if n_remove == 0:
        return a
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(rows), size=n_remove, replace=False)
    a[rows[pick], cols[pick]] = 0
    a[cols[pick], rows[pick]] = 0
    return a


def build_precision(adjacency: np.ndarray, repair_diagonal: bool = False) -> tuple[np.ndarray, bool]:
    """Theta = 2 I + 0.4 A, optionally made diagonally dominant if needed.

    Returns (theta, repaired).  Without repair a non-positive-definite
    result raises GenerationError.  Repair sets every diagonal entry to the
    largest row sum of off-diagonal magnitudes plus 0.1, which forces strict
    diagonal dominance and hence positive definiteness.
    """
    a = _check_adjacency(adjacency)
    m = a.shape[0]
    theta = 2.0 * np.eye(m) + 0.4 * a.astype(np.float64)
    if _is_pd(theta):
        return theta, False
    if not repair_diagonal:
        raise GenerationError("2 I + 0.4 A is not positive definite for this graph")
    off = np.abs(theta).sum(axis=1) - np.abs(np.diag(theta))
    np.fill_diagonal(theta, float(off.max()) + 0.1)
    if not _is_pd(theta):
        raise GenerationError("diagonal repair failed to produce a positive definite theta")
    return theta, True


def _pair_from_attempts(make_pair, seed: int) -> tuple[GaussianMN, GaussianMN]:
    """Retry graph generation until both precisions are PD, then repair."""
    rng = np.random.default_rng(seed)
    last = None
    last_exc: Exception | None = None
    for _ in range(_MAX_RESAMPLE):
        sub = [int(s) for s in rng.integers(0, 2**63 - 1, size=2)]
        try:
            a_p, a_q = make_pair(sub[0], sub[1])
        except DataError as exc:
            last_exc = exc
            continue
        last = (a_p, a_q)
        try:
            t_p, _ = build_precision(a_p)
            t_q, _ = build_precision(a_q)
        except GenerationError:
            continue
        return (
            GaussianMN(adjacency=a_p, theta=t_p, seed=seed),
            GaussianMN(adjacency=a_q, theta=t_q, seed=seed),
        )
    if last is None:
        raise GenerationError(f"could not draw a usable graph pair: {last_exc}")
    a_p, a_q = last
    t_p, rep_p = build_precision(a_p, repair_diagonal=True)
    t_q, rep_q = build_precision(a_q, repair_diagonal=True)
    return (
        GaussianMN(adjacency=a_p, theta=t_p, seed=seed, repaired=rep_p),
        GaussianMN(adjacency=a_q, theta=t_q, seed=seed, repaired=rep_q),
    )


def random_change_pair(m: int, density: float, n_remove: int, seed: int) -> tuple[GaussianMN, GaussianMN]:
    """A random graph and a twin with ``n_remove`` edges deleted.

    Draws are resampled (up to 100 times) until both precisions are
    positive definite without repair; after that the diagonal repair is
    applied to the last draw.
    """

    def make(seed_a: int, seed_b: int):
        a_p = gen_random_graph(m, density, seed_a)
        if int(np.triu(a_p, k=1).sum()) < n_remove:
            raise DataError(
                f"graph drew fewer than n_remove={n_remove} edges; density too low"
            )
        a_q = perturb_remove_edges(a_p, n_remove, seed_b)
        return a_p, a_q

    return _pair_from_attempts(make, seed)


def lattice_change_pair(side: int, n_remove: int, seed: int) -> tuple[GaussianMN, GaussianMN]:
    """A 4-neighbor lattice and a twin with ``n_remove`` edges deleted."""
    a_base = gen_lattice_graph(side)

    def make(_seed_a: int, seed_b: int):
        return a_base, perturb_remove_edges(a_base, n_remove, seed_b)

    return _pair_from_attempts(make, seed)


def sample_gaussian(model: GaussianMN, n: int, seed: int) -> Dataset:
    """Draw n zero-mean samples with covariance inv(theta)."""
    if n < 1:
        raise DataError("n must be >= 1")
    try:
        sigma = np.linalg.inv(model.theta)
        sigma = (sigma + sigma.T) / 2.0
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance factorization failed: {exc}") from exc
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, model.m))
    return Dataset(samples=z @ chol.T)


def true_delta(theta_p: np.ndarray, theta_q: np.ndarray) -> DeltaParams:
    """Exact change parameters of the product-feature ratio model.

    With densities proportional to exp(-x' Theta x / 2), the log-ratio's
    coefficient on x_u x_v is -(Theta_p - Theta_q)_uv for u > v and
    -(Theta_p - Theta_q)_uu / 2 on the squares, laid out over the full edge
    set in sorted-(u, v) order.
    """
    theta_p = np.asarray(theta_p, dtype=np.float64)
    theta_q = np.asarray(theta_q, dtype=np.float64)
    if theta_p.shape != theta_q.shape or theta_p.ndim != 2 or theta_p.shape[0] != theta_p.shape[1]:
        raise ShapeError("precision matrices must share one square shape")
    m = theta_p.shape[0]
    d = theta_p - theta_q
    es = build_edge_set(m)
    vals = np.empty(es.n_edges)
    for j, (u, v) in enumerate(es.edges):
        vals[j] = -d[u - 1, v - 1] / 2.0 if u == v else -d[u - 1, v - 1]
    return DeltaParams(edge_set=es, values=vals, block_size=1)


def changed_edges(model_p: GaussianMN, model_q: GaussianMN) -> tuple[tuple[int, int], ...]:
    """1-based (u, v) pairs (u > v) where the two adjacencies differ."""
    if model_p.m != model_q.m:
        raise ShapeError("models have different sizes")
    diff = model_p.adjacency != model_q.adjacency
    out = []
    for u in range(2, model_p.m + 1):
        for v in range(1, u):
            if diff[u - 1, v - 1]:
                out.append((u, v))
    return tuple(out)


def ground_truth_to_json(model_p: GaussianMN, model_q: GaussianMN) -> dict:
    """Serializable record of a synthetic change pair."""
    delta_star = true_delta(model_p.theta, model_q.theta)
    return {
        "m": model_p.m,
        "adjacency_p": model_p.adjacency.astype(int).tolist(),
        "adjacency_q": model_q.adjacency.astype(int).tolist(),
        "theta_p": model_p.theta.tolist(),
        "theta_q": model_q.theta.tolist(),
        "repaired": bool(model_p.repaired or model_q.repaired),
        "seed": model_p.seed,
        "changed_edges": [list(e) for e in changed_edges(model_p, model_q)],
        "delta_star": delta_star.to_json_dict(),
    }

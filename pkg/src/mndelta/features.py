"""Core data model: datasets, edge sets, pairwise features, and parameter blocks.

Variables are indexed 1..m.  An edge is an unordered pair written (u, v) with
u >= v; self-pairs (u, u) are legal and are part of the full edge set.  Edges
are always kept in sorted-(u, v) order so that every consumer (solvers,
serialization, evaluation) agrees on block layout without extra bookkeeping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import DataError, ShapeError

EDGE_ORDER = "sorted-uv"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EdgeSet:
    """An ordered collection of unordered variable pairs over m variables.

    Parameters
    ----------
    m : int
        Number of variables.
    edges : tuple of (int, int)
        1-based pairs (u, v) with u >= v, strictly increasing in (u, v) order.

    Use :func:`build_edge_set` instead of calling this constructor directly;
    it canonicalizes and validates arbitrary pair lists.
    """

    m: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 1:
            raise DataError(f"m must be a positive integer, got {self.m!r}")
        prev = None
        for u, v in self.edges:
            if not (isinstance(u, int) and isinstance(v, int)):
                raise DataError(f"edge indices must be ints, got ({u!r}, {v!r})")
            if not (1 <= v <= u <= self.m):
                raise DataError(f"edge ({u}, {v}) out of range for m={self.m}")
            if prev is not None and (u, v) <= prev:
                raise DataError(f"edges not in strict sorted-(u, v) order near ({u}, {v})")
            prev = (u, v)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index_of(self, u: int, v: int) -> int:
        """Position of edge (u, v) in the ordering; raises KeyError if absent."""
        key = (max(u, v), min(u, v))
        try:
            return self._index[key]
        except KeyError:
            raise KeyError(f"edge {key} not in edge set") from None

    @property
    def _index(self) -> dict[tuple[int, int], int]:
        # cached lazily on first use; dict build is O(E)
        cache = getattr(self, "_index_cache", None)
        if cache is None:
            cache = {e: j for j, e in enumerate(self.edges)}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def u_indices(self) -> np.ndarray:
        """0-based first-variable index per edge (for array gathers)."""
        return np.fromiter((u - 1 for u, _ in self.edges), dtype=np.intp, count=self.n_edges)

    def v_indices(self) -> np.ndarray:
        return np.fromiter((v - 1 for _, v in self.edges), dtype=np.intp, count=self.n_edges)


def full_edge_count(m: int) -> int:
    """Number of edges in the full set over m variables, self-pairs included."""
    return (m * m + m) // 2


def build_edge_set(m: int, pairs: Iterable[Sequence[int]] | None = None) -> EdgeSet:
    """Build a canonical edge set over m variables.

    With ``pairs=None`` returns the full set: all (u, v) with u >= v,
    self-pairs included, in sorted-(u, v) order.  Otherwise the given pairs
    are normalized to u >= v, deduplicated, validated against 1..m, and
    sorted.
    """
    if not isinstance(m, int) or m < 1:
        raise DataError(f"m must be a positive integer, got {m!r}")
    if pairs is None:
        edges = tuple((u, v) for u in range(1, m + 1) for v in range(1, u + 1))
        return EdgeSet(m=m, edges=edges)
    seen = set()
    for pair in pairs:
        if len(pair) != 2:
            raise DataError(f"edge must be a pair, got {pair!r}")
        a, b = int(pair[0]), int(pair[1])
        u, v = (a, b) if a >= b else (b, a)
        if not (1 <= v <= u <= m):
            raise DataError(f"edge ({a}, {b}) out of range for m={m}")
        seen.add((u, v))
    return EdgeSet(m=m, edges=tuple(sorted(seen)))


@dataclass(frozen=True)
class Dataset:
    """An i.i.d. sample matrix with named dimensionality.

    ``samples`` has shape (n, m) for scalar variables or (n, m, c) when each
    variable carries a c-vector of components (used by the image pipeline,
    where each variable is an RGB triple).  Values must be finite.
    """

    samples: np.ndarray

    def __post_init__(self):
        a = _readonly(self.samples)
        if a.ndim not in (2, 3):
            raise ShapeError(f"samples must be 2-D or 3-D, got ndim={a.ndim}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ShapeError(f"samples must be non-empty, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DataError("samples contain non-finite values")
        object.__setattr__(self, "samples", a)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def n_components(self) -> int:
        return 1 if self.samples.ndim == 2 else self.samples.shape[2]


@dataclass(frozen=True)
class FeatureMap:
    """A pairwise feature function psi(x_u, x_v) producing one value per edge.

    Two kinds are supported:

    - ``"product"``: psi = x_u * x_v (scalar variables).  This is the
      sufficient statistic of a Gaussian pairwise model.
    - ``"rbf"``: psi = exp(-||x_u - x_v||^2 / bandwidth), defined for scalar
      or vector-valued variables.

    Every kind here produces scalar features, so the block size is 1.
    """

    kind: str
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in ("product", "rbf"):
            raise DataError(f"unknown feature map kind {self.kind!r}")
        if self.kind == "rbf":
            if self.bandwidth is None or not (self.bandwidth > 0):
                raise DataError("rbf feature map needs bandwidth > 0")
        elif self.bandwidth is not None:
            raise DataError("product feature map takes no bandwidth")

    @classmethod
    def product(cls) -> "FeatureMap":
        return cls(kind="product")

    @classmethod
    def rbf(cls, bandwidth: float) -> "FeatureMap":
        return cls(kind="rbf", bandwidth=float(bandwidth))

    @property
    def block_size(self) -> int:
        return 1


@dataclass(frozen=True)
class FeatureTensor:
    """Per-sample, per-edge feature values: shape (n, n_edges * block_size).

    Column j holds psi evaluated on edge ``edge_set.edges[j]`` (block size is
    1 for the built-in maps, so columns and edges are in bijection).
    """

    values: np.ndarray
    edge_set: EdgeSet
    feature_map: FeatureMap

    def __post_init__(self):
        a = _readonly(self.values)
        if a.ndim != 2:
            raise ShapeError(f"feature values must be 2-D, got ndim={a.ndim}")
        want = self.edge_set.n_edges * self.feature_map.block_size
        if a.shape[1] != want:
            raise ShapeError(
                f"feature width {a.shape[1]} != n_edges*block_size = {want}"
            )
        if not np.all(np.isfinite(a)):
            raise DataError("feature values contain non-finite entries")
        object.__setattr__(self, "values", a)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def block_size(self) -> int:
        return self.feature_map.block_size


def eval_features(data: Dataset, edge_set: EdgeSet, feature_map: FeatureMap) -> FeatureTensor:
    """Evaluate a pairwise feature map on every sample and edge.

    Parameters
    ----------
    data : Dataset
        (n, m) for scalar variables; (n, m, c) is accepted for the rbf map.
    edge_set : EdgeSet
        Edges to evaluate; ``edge_set.m`` must equal ``data.m``.
    feature_map : FeatureMap

    Returns
    -------
    FeatureTensor
        Column order follows the edge set's sorted-(u, v) order.
    """
    if edge_set.m != data.m:
        raise ShapeError(f"edge set over m={edge_set.m} but data has m={data.m}")
    x = data.samples
    ui = edge_set.u_indices()
    vi = edge_set.v_indices()
    if feature_map.kind == "product":
        if x.ndim != 2:
            raise ShapeError("product features need scalar variables (2-D data)")
        vals = x[:, ui] * x[:, vi]
    else:  # rbf
        diff = x[:, ui] - x[:, vi]
        if diff.ndim == 3:
            sq = np.einsum("nec,nec->ne", diff, diff)
        else:
            sq = diff * diff
        vals = np.exp(-sq / feature_map.bandwidth)
    return FeatureTensor(values=vals, edge_set=edge_set, feature_map=feature_map)


@dataclass(frozen=True)
class DeltaParams:
    """Blockwise parameter vector delta, one block of coefficients per edge.

    ``values`` is the flat concatenation of per-edge blocks in edge order.
    With scalar features (block size 1) entry j is the coefficient of edge
    ``edge_set.edges[j]``.
    """

    edge_set: EdgeSet
    values: np.ndarray
    block_size: int = 1

    def __post_init__(self):
        a = _readonly(self.values)
        if a.ndim != 1:
            raise ShapeError("delta values must be a flat vector")
        if self.block_size < 1:
            raise DataError(f"block size must be >= 1, got {self.block_size}")
        if a.shape[0] != self.edge_set.n_edges * self.block_size:
            raise ShapeError(
                f"delta length {a.shape[0]} != n_edges*block_size = "
                f"{self.edge_set.n_edges * self.block_size}"
            )
        if not np.all(np.isfinite(a)):
            raise DataError("delta contains non-finite entries")
        object.__setattr__(self, "values", a)

    @classmethod
    def zeros(cls, edge_set: EdgeSet, block_size: int = 1) -> "DeltaParams":
        return cls(edge_set=edge_set, values=np.zeros(edge_set.n_edges * block_size), block_size=block_size)

    def blocks(self) -> np.ndarray:
        """(n_edges, block_size) view of the coefficients."""
        return self.values.reshape(self.edge_set.n_edges, self.block_size)

    def block_norms(self) -> np.ndarray:
        return np.linalg.norm(self.blocks(), axis=1)

    def support_indices(self) -> np.ndarray:
        """0-based edge positions whose block is not identically zero."""
        return np.flatnonzero(np.any(self.blocks() != 0.0, axis=1))

    def support(self) -> tuple[tuple[int, int], ...]:
        """Edges (u, v) with a nonzero block, in sorted-(u, v) order."""
        return tuple(self.edge_set.edges[j] for j in self.support_indices())

    def to_json_dict(self, lambda_: float | None = None, objective: float | None = None) -> dict:
        """Serialize to the interchange layout used by result files."""
        blocks = self.blocks()
        return {
            "m": self.edge_set.m,
            "b": self.block_size,
            "edge_order": EDGE_ORDER,
            "lambda": None if lambda_ is None else float(lambda_),
            "blocks": [
                [u, v, [float(c) for c in blocks[j]]]
                for j, (u, v) in enumerate(self.edge_set.edges)
            ],
            "objective": None if objective is None else float(objective),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DeltaParams":
        try:
            m = int(d["m"])
            b = int(d["b"])
            order = d["edge_order"]
            raw = d["blocks"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed delta record: {exc}") from exc
        if order != EDGE_ORDER:
            raise DataError(f"unsupported edge order {order!r}")
        pairs = [(int(r[0]), int(r[1])) for r in raw]
        es = build_edge_set(m, pairs)
        if len(pairs) != es.n_edges or pairs != list(es.edges):
            raise DataError("delta record edges are not in canonical sorted-(u, v) order")
        vals = np.empty(es.n_edges * b)
        for j, r in enumerate(raw):
            coeffs = r[2]
            if len(coeffs) != b:
                raise DataError(f"block for edge {tuple(r[:2])} has wrong size")
            vals[j * b:(j + 1) * b] = coeffs
        return cls(edge_set=es, values=vals, block_size=b)


def delta_to_matrix(delta: DeltaParams) -> np.ndarray:
    """Place scalar edge coefficients into a symmetric (m, m) matrix."""
    if delta.block_size != 1:
        raise ShapeError("matrix form needs scalar blocks")
    m = delta.edge_set.m
    out = np.zeros((m, m))
    for j, (u, v) in enumerate(delta.edge_set.edges):
        out[u - 1, v - 1] = delta.values[j]
        out[v - 1, u - 1] = delta.values[j]
    return out


def matrix_to_delta(mat: np.ndarray, edge_set: EdgeSet | None = None) -> DeltaParams:
    """Read per-edge coefficients out of a symmetric matrix.

    Entries are taken at (u-1, v-1).  With no edge set given, the full set
    over ``mat.shape[0]`` variables is used.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"need a square matrix, got shape {mat.shape}")
    if edge_set is None:
        edge_set = build_edge_set(mat.shape[0])
    elif edge_set.m != mat.shape[0]:
        raise ShapeError(f"edge set over m={edge_set.m}, matrix is {mat.shape[0]}x{mat.shape[0]}")
    vals = np.array([mat[u - 1, v - 1] for u, v in edge_set.edges])
    return DeltaParams(edge_set=edge_set, values=vals, block_size=1)


class Normalizer(NamedTuple):
    value: float
    log: float


def _logsumexp(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    hi = float(np.max(a))
    return hi + math.log(float(np.sum(np.exp(a - hi))))


def empirical_normalizer(delta: DeltaParams, fq: FeatureTensor) -> Normalizer:
    """Sample-average normalizer of the ratio model under the denominator data.

    Returns both the normalizer N and log N, the latter computed in the log
    domain so large inner products cannot overflow.
    """
    _check_alignment(delta, fq)
    s = fq.values @ delta.values
    log_n = _logsumexp(s) - math.log(fq.n)
    try:
        value = math.exp(log_n)
    except OverflowError:
        value = math.inf  # the log-domain field stays exact
    return Normalizer(value=value, log=log_n)


def ratio_hat(features: np.ndarray, delta: DeltaParams, fq: FeatureTensor) -> np.ndarray | float:
    """Evaluate the fitted density ratio at pre-featurized points.

    ``features`` is one feature row (width,) or a stack (k, width) laid out
    like ``fq``'s columns.  Returns a scalar for a single row.
    """
    _check_alignment(delta, fq)
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    if single:
        f = f[None, :]
    if f.ndim != 2 or f.shape[1] != fq.width:
        raise ShapeError(f"feature rows must have width {fq.width}, got shape {f.shape}")
    log_n = empirical_normalizer(delta, fq).log
    out = np.exp(f @ delta.values - log_n)
    return float(out[0]) if single else out


def _check_alignment(delta: DeltaParams, ft: FeatureTensor) -> None:
    if delta.edge_set != ft.edge_set:
        raise ShapeError("delta and feature tensor are over different edge sets")
    if delta.block_size != ft.block_size:
        raise ShapeError("delta and feature tensor disagree on block size")


def check_pair(fp: FeatureTensor, fq: FeatureTensor) -> None:
    """Require two feature tensors to share edge set and feature map."""
    if fp.edge_set != fq.edge_set:
        raise ShapeError("feature tensors are over different edge sets")
    if fp.feature_map != fq.feature_map:
        raise ShapeError("feature tensors use different feature maps")


def load_csv(path) -> Dataset:
    """Load a numeric sample matrix from CSV (rows = samples).

    A single optional header row of non-numeric labels is skipped.  Ragged
    rows or non-numeric body cells raise DataError.
    """
    rows: list[list[float]] = []
    header_seen = False
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, row in enumerate(reader):
            if not row or all(c.strip() == "" for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if not rows and not header_seen:
                    header_seen = True
                    continue
                raise DataError(f"{path}: non-numeric value on row {i + 1}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: ragged row {i + 1} (expected {width} columns)")
    return Dataset(samples=np.asarray(rows, dtype=np.float64))


def save_csv(data: Dataset | np.ndarray, path) -> None:
    """Write a sample matrix as plain CSV (no header)."""
    a = data.samples if isinstance(data, Dataset) else np.asarray(data)
    if a.ndim != 2:
        raise ShapeError("only 2-D sample matrices can be written to CSV")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in a:
            writer.writerow([repr(float(v)) for v in row])

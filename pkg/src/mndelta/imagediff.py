"""Change detection between two registered images.

Each image is tiled into overlapping square windows on a fixed grid; every
window is one variable of a Markov network whose samples are the per-pixel
RGB triples inside the window.  Adjacent windows are connected by an RBF
feature on the pixel difference, and the group-lasso ratio fit between the
two images marks the window pairs whose joint statistics changed.

Pixel differences are taken in the integer (0..255) domain before the RBF is
applied: differences of 8-bit values are exact in float64, so adding one
constant brightness offset to both images leaves every feature value, and
hence the detected edge set, bit-identical.  The normalized [0, 1] scale and
its bandwidth are kept as the public contract; the integer-domain evaluation
uses the equivalent bandwidth * 255^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError, ShapeError
from .features import Dataset, EdgeSet, FeatureMap, build_edge_set, eval_features
from .solvers import SolverOptions, lambda_max, solve_group_lasso

_MAXVAL = 255


def load_image(path, allow_png: bool = False) -> np.ndarray:
    """Read an RGB image as float64 (height, width, 3) normalized to [0, 1].

    Binary PPM (P6, 8-bit) is always supported.  PNG requires ``allow_png``
    and the Pillow optional dependency.
    """
    path = str(path)
    if path.lower().endswith(".png"):
        if not allow_png:
            raise ConfigError("PNG input is disabled; pass allow_png=True (needs the png extra)")
        try:
            from PIL import Image
        except ImportError as exc:
            raise ConfigError("PNG support needs Pillow (install the 'png' extra)") from exc
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
        return arr / float(_MAXVAL)
    return _load_ppm(path)


def _load_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        return data[start:pos]

    magic = next_token()
    if magic != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6) file, magic={magic!r}")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise DataError(f"{path}: bad PPM header: {exc}") from exc
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad PPM dimensions {width}x{height}")
    if not (0 < maxval <= _MAXVAL):
        raise DataError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after the header
    need = width * height * 3
    body = data[pos:pos + need]
    if len(body) != need:
        raise DataError(f"{path}: PPM body has {len(body)} bytes, expected {need}")
    arr = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    return (arr / float(maxval)).reshape(height, width, 3)


def save_image(image: np.ndarray, path) -> None:
    """Write a [0, 1] RGB array as binary PPM (P6, 8-bit)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be (h, w, 3), got {image.shape}")
    q = np.rint(np.clip(image, 0.0, 1.0) * _MAXVAL).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n{_MAXVAL}\n".encode("ascii"))
        fh.write(q.tobytes())


@dataclass(frozen=True)
class WindowGrid:
    """Sliding-window layout: window ids are 1..m in row-major grid order."""

    height: int
    width: int
    window: int
    stride: int
    gy: int
    gx: int

    @classmethod
    def for_image(cls, height: int, width: int, window: int = 16, stride: int = 5) -> "WindowGrid":
        if window < 1 or stride < 1:
            raise ConfigError(f"window and stride must be >= 1, got {window}, {stride}")
        if window > height or window > width:
            raise ShapeError(f"window {window} exceeds image size {height}x{width}")
        gy = (height - window) // stride + 1
        gx = (width - window) // stride + 1
        return cls(height=height, width=width, window=window, stride=stride, gy=gy, gx=gx)

    @property
    def m(self) -> int:
        return self.gy * self.gx

    def cell(self, window_id: int) -> tuple[int, int]:
        """(grid row, grid col) of a 1-based window id."""
        if not (1 <= window_id <= self.m):
            raise DataError(f"window id {window_id} out of range 1..{self.m}")
        return (window_id - 1) // self.gx, (window_id - 1) % self.gx

    def origin(self, window_id: int) -> tuple[int, int]:
        """Top-left pixel (y, x) of a window."""
        r, c = self.cell(window_id)
        return r * self.stride, c * self.stride


@dataclass(frozen=True)
class WindowDataset:
    """Window-tiled image: values[i, w, :] is the RGB triple at within-window
    offset i (row-major) of window w+1, normalized to [0, 1]."""

    values: np.ndarray
    grid: WindowGrid

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        k = self.grid.window
        if v.shape != (k * k, self.grid.m, 3):
            raise ShapeError(f"window data must be ({k * k}, {self.grid.m}, 3), got {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise DataError("window values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def tile_windows(image: np.ndarray, grid: WindowGrid) -> WindowDataset:
    """Cut an image into the grid's windows.

    Sample i of window w is the pixel at row-major offset i inside the
    window, so all windows are described by aligned sample positions.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be (h, w, 3), got {image.shape}")
    if image.shape[:2] != (grid.height, grid.width):
        raise ShapeError(
            f"image is {image.shape[:2]}, grid expects {(grid.height, grid.width)}"
        )
    k, s = grid.window, grid.stride
    view = np.lib.stride_tricks.sliding_window_view(image, (k, k), axis=(0, 1))
    view = view[::s, ::s]  # (gy, gx, 3, k, k)
    out = view.transpose(3, 4, 0, 1, 2).reshape(k * k, grid.m, 3)
    return WindowDataset(values=out, grid=grid)


def neighbor_edges(grid: WindowGrid) -> EdgeSet:
    """4-neighbor window pairs on the grid (no self-pairs)."""
    pairs = []
    for r in range(grid.gy):
        for c in range(grid.gx):
            w = r * grid.gx + c + 1
            if c + 1 < grid.gx:
                pairs.append((w + 1, w))
            if r + 1 < grid.gy:
                pairs.append((w + grid.gx, w))
    return build_edge_set(grid.m, pairs)


@dataclass(frozen=True)
class ImageDiffConfig:
    window: int = 16
    stride: int = 5
    bandwidth: float = 0.5  # on the [0, 1] pixel scale
    target: int = 40
    max_halvings: int = 15
    solver: SolverOptions = field(
        default_factory=lambda: SolverOptions(tolerance=1e-7, max_iterations=1500)
    )

    def __post_init__(self):
        if not (self.bandwidth > 0):
            raise ConfigError("bandwidth must be > 0")
        if self.target < 1:
            raise ConfigError("target must be >= 1")
        if self.max_halvings < 1:
            raise ConfigError("max_halvings must be >= 1")


@dataclass(frozen=True)
class ImageDiffReport:
    lambda_max: float
    lambda_final: float | None
    n_active: int
    target: int
    reached: bool
    warning: str | None
    trace: tuple[tuple[float, int], ...]
    grid: WindowGrid
    bandwidth: float
    n_edges: int
    # ratio orientation: the first image argument is always the numerator,
    # so callers that swap inputs can tell which fit they are looking at
    direction: str = "p/q"


def _as_unit_image(name: str, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"{name} must be (h, w, 3), got {image.shape}")
    if image.min() < -1e-9 or image.max() > 1.0 + 1e-9:
        raise DataError(f"{name} values must lie in [0, 1]")
    return image


def detect_changes(
    image_p: np.ndarray,
    image_q: np.ndarray,
    config: ImageDiffConfig | None = None,
) -> tuple[list[dict], np.ndarray, ImageDiffReport]:
    """Find window pairs whose joint pixel statistics differ between images.

    Fits the group-penalized ratio model over the window grid, halving the
    penalty from lambda_max until more than ``config.target`` edges are
    active (or the halving floor is hit; then a warning is set).  Identical
    inputs yield an empty edge list and a warning instead of a spurious fit.

    Returns (edges, overlay, report): ``edges`` is a list of dicts with the
    window pair, their grid cells, and the block norm, sorted by norm
    descending; ``overlay`` is image_q with green borders drawn around every
    window incident to a reported edge.
    """
    cfg = config or ImageDiffConfig()
    image_p = _as_unit_image("image_p", image_p)
    image_q = _as_unit_image("image_q", image_q)
    if image_p.shape != image_q.shape:
        raise ShapeError(f"image shapes differ: {image_p.shape} vs {image_q.shape}")
    grid = WindowGrid.for_image(image_p.shape[0], image_p.shape[1], cfg.window, cfg.stride)
    edges = neighbor_edges(grid)

    # integer-domain pixel values: differences of 8-bit values are exact in
    # float64, which makes the feature tensors invariant under a shared
    # constant brightness shift
    raw_p = np.rint(tile_windows(image_p, grid).values * _MAXVAL)
    raw_q = np.rint(tile_windows(image_q, grid).values * _MAXVAL)
    fmap = FeatureMap.rbf(cfg.bandwidth * _MAXVAL * _MAXVAL)
    fp = eval_features(Dataset(samples=raw_p), edges, fmap)
    fq = eval_features(Dataset(samples=raw_q), edges, fmap)

    lmax = lambda_max(fp, fq)
    if lmax == 0.0:
        report = ImageDiffReport(
            lambda_max=0.0,
            lambda_final=None,
            n_active=0,
            target=cfg.target,
            reached=False,
            warning="feature tensors are identical; nothing to detect",
            trace=(),
            grid=grid,
            bandwidth=cfg.bandwidth,
            n_edges=edges.n_edges,
        )
        return [], image_q.copy(), report

    trace: list[tuple[float, int]] = []
    warm = None
    delta = None
    lam = lmax
    for _ in range(cfg.max_halvings):
        lam = lam / 2.0
        delta, rep = solve_group_lasso(fp, fq, lam, options=cfg.solver, warm_start=warm)
        warm = delta
        n_active = len(rep.active_set)
        trace.append((lam, n_active))
        if n_active > cfg.target:
            break

    n_active = trace[-1][1]
    reached = n_active > cfg.target
    warning = None
    if not reached:
        warning = (
            f"penalty floor lambda_max/2^{cfg.max_halvings} reached with only "
            f"{n_active} active edges (target {cfg.target})"
        )

    norms = delta.block_norms()
    found = []
    for j in delta.support_indices():
        u, v = delta.edge_set.edges[j]
        found.append(
            {
                "u": u,
                "v": v,
                "u_cell": list(grid.cell(u)),
                "v_cell": list(grid.cell(v)),
                "norm": float(norms[j]),
            }
        )
    found.sort(key=lambda e: (-e["norm"], e["u"], e["v"]))
    window_ids = sorted({e["u"] for e in found} | {e["v"] for e in found})
    overlay = overlay_windows(image_q, grid, window_ids)
    report = ImageDiffReport(
        lambda_max=lmax,
        lambda_final=lam,
        n_active=n_active,
        target=cfg.target,
        reached=reached,
        warning=warning,
        trace=tuple(trace),
        grid=grid,
        bandwidth=cfg.bandwidth,
        n_edges=edges.n_edges,
    )
    return found, overlay, report


def overlay_windows(image: np.ndarray, grid: WindowGrid, window_ids) -> np.ndarray:
    """Copy of the image with a green 1-pixel border around each window."""
    out = np.asarray(image, dtype=np.float64).copy()
    green = np.array([0.0, 1.0, 0.0])
    k = grid.window
    for wid in window_ids:
        y0, x0 = grid.origin(int(wid))
        y1, x1 = y0 + k - 1, x0 + k - 1
        out[y0, x0:x1 + 1] = green
        out[y1, x0:x1 + 1] = green
        out[y0:y1 + 1, x0] = green
        out[y0:y1 + 1, x1] = green
    return out

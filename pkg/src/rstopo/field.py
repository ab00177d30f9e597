"""Point samplers, Gaussian KDE on a grid, and superlevel persistence of grids.

Superlevel sets use 4-connectivity between grid cells; their complements use
8-connectivity, which keeps the H1 computation consistent with planar
duality.  Output diagrams are in increasing coordinates (values negated).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagram import PersistenceDiagram

GRID_MAGIC = b"RSTG"

_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_N8 = _N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """Scalar field sampled on a regular grid; ``values[i, j]`` sits at
    ``(origin[0] + j * cell_size[0], origin[1] + i * cell_size[1])``."""

    values: np.ndarray
    origin: tuple = (0.0, 0.0)
    cell_size: tuple = (1.0, 1.0)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("grid values must be a 2-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        object.__setattr__(self, "cell_size", tuple(float(c) for c in self.cell_size))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + self.cell_size[0] * np.arange(self.width)
        ys = self.origin[1] + self.cell_size[1] * np.arange(self.height)
        return xs, ys


# --- samplers and density estimation -------------------------------------------

def sample_two_circles(n_large: int = 500, n_small: int = 300, diam_large: float = 4.0,
                       diam_small: float = 2.0, seed: int = 0, jitter: float = 0.0) -> np.ndarray:
    """Uniform-angle samples on two concentric circles centred at the origin.

    ``jitter`` > 0 adds isotropic Gaussian noise of that standard deviation.
    """
    if n_large < 0 or n_small < 0:
        raise ValueError("counts must be non-negative")
    if diam_large <= 0 or diam_small <= 0:
        raise ValueError("diameters must be positive")
    rng = np.random.default_rng(seed)
    parts = []
    for n, diam in ((n_large, diam_large), (n_small, diam_small)):
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        parts.append(0.5 * diam * np.column_stack([np.cos(theta), np.sin(theta)]))
    cloud = np.vstack(parts)
    if jitter > 0:
        cloud = cloud + rng.normal(scale=jitter, size=cloud.shape)
    return cloud


def kde_grid(cloud, bandwidth: float = 0.3, shape: tuple[int, int] = (128, 128),
             pad: float = 3.0) -> ScalarGrid:
    """Isotropic Gaussian KDE evaluated on a grid covering the padded bounding box.

    ``shape`` is ``(width, height)``.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("cannot estimate a density from an empty cloud")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    width, height = shape
    if width < 2 or height < 2:
        raise ValueError("grid must be at least 2x2")
    lo = pts.min(axis=0) - pad * bandwidth
    hi = pts.max(axis=0) + pad * bandwidth
    xs = np.linspace(lo[0], hi[0], width)
    ys = np.linspace(lo[1], hi[1], height)
    # the Gaussian kernel factorises over the two axes
    ex = np.exp(-((xs[:, None] - pts[None, :, 0]) ** 2) / (2 * bandwidth ** 2))
    ey = np.exp(-((ys[:, None] - pts[None, :, 1]) ** 2) / (2 * bandwidth ** 2))
    dens = (ey @ ex.T) / (pts.shape[0] * 2 * np.pi * bandwidth ** 2)
    return ScalarGrid(dens, origin=(xs[0], ys[0]), cell_size=(xs[1] - xs[0], ys[1] - ys[0]))


# --- persistence ---------------------------------------------------------------

def _find(parent: list[int], i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def _elder_pairs(values: np.ndarray, order: np.ndarray, offsets, with_outside: bool):
    """Union-find sweep in the given cell order.

    Returns (pairs, root) where each pair is (value at component birth,
    value at the merge that killed it) and ``root`` is the surviving cell.
    With ``with_outside`` a virtual cell older than everything is attached to
    the grid boundary.
    """
    h, w = values.shape
    flat = values.ravel()
    n = flat.size
    outside = n
    parent = list(range(n + 1))
    rank = [0] * (n + 1)  # position in the sweep; lower is older
    active = [False] * (n + 1)
    if with_outside:
        active[outside] = True
        rank[outside] = -1
    pairs = []
    for pos, idx in enumerate(order.tolist()):
        r, c = divmod(idx, w)
        active[idx] = True
        rank[idx] = pos
        roots = set()
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                j = rr * w + cc
                if active[j]:
                    roots.add(_find(parent, j))
            elif with_outside:
                roots.add(_find(parent, outside))
        if not roots:
            continue
        elder = min(roots, key=rank.__getitem__)
        parent[idx] = elder
        for root in roots:
            if root != elder:
                pairs.append((flat[root], flat[idx]))
                parent[root] = elder
    last = _find(parent, int(order[0]))
    return pairs, last


def superlevel_h0(grid: ScalarGrid) -> PersistenceDiagram:
    """H0 diagram of the superlevel filtration (elder rule, 4-connectivity).

    The component of the global maximum is returned as an essential class
    whose death is the grid minimum.
    """
    v = grid.values
    order = np.argsort(-v.ravel(), kind="stable")
    pairs, root = _elder_pairs(v, order, _N4, with_outside=False)
    flat = v.ravel()
    births = [-b for b, _ in pairs] + [-flat[root]]
    deaths = [-d for _, d in pairs] + [-flat.min()]
    ess = [False] * len(pairs) + [True]
    return PersistenceDiagram(births, deaths, ess, degree=0, source_meta="superlevel H0")


def superlevel_h1(grid: ScalarGrid) -> PersistenceDiagram:
    """H1 diagram of the superlevel filtration, via the complement.

    A hole of the superlevel set is a bounded 8-connected component of the
    sublevel complement.  Such a component appearing at value ``v`` and
    merging at value ``w`` gives the superlevel pair (birth ``w``, death ``v``).
    """
    v = grid.values
    order = np.argsort(v.ravel(), kind="stable")
    pairs, _ = _elder_pairs(v, order, _N8, with_outside=True)
    births = [-w for _, w in pairs]
    deaths = [-b for b, _ in pairs]
    return PersistenceDiagram(births, deaths, np.zeros(len(pairs), dtype=bool), degree=1,
                              source_meta="superlevel H1")


def betti_at_level(grid: ScalarGrid, u: float, degree: int,
                   diagram: PersistenceDiagram | None = None) -> int:
    """Betti number of the superlevel set {f >= u} read off the diagram."""
    if degree not in (0, 1):
        raise ValueError("degree must be 0 or 1")
    if diagram is None:
        diagram = superlevel_h0(grid) if degree == 0 else superlevel_h1(grid)
    b_level = -diagram.births
    d_level = -diagram.deaths
    alive = (b_level >= u) & ((d_level < u) | diagram.essential)
    return int(alive.sum())


# --- I/O -----------------------------------------------------------------------

def write_grid(grid: ScalarGrid, path, format: str = "binary") -> None:
    path = Path(path)
    if format == "binary":
        header = GRID_MAGIC + struct.pack("<II", grid.width, grid.height)
        header += struct.pack("<4d", *grid.origin, *grid.cell_size)
        path.write_bytes(header + grid.values.astype("<f8").tobytes())
    elif format == "csv":
        lines = [",".join(repr(float(x)) for x in row) for row in grid.values]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unsupported grid format {format!r}")


def read_grid(path, format: str | None = None) -> ScalarGrid:
    path = Path(path)
    raw = path.read_bytes()
    if format is None:
        format = "binary" if raw[:4] == GRID_MAGIC else "csv"
    if format == "binary":
        if raw[:4] != GRID_MAGIC:
            raise ValueError(f"{path}: missing RSTG magic")
        width, height = struct.unpack_from("<II", raw, 4)
        ox, oy, dx, dy = struct.unpack_from("<4d", raw, 12)
        vals = np.frombuffer(raw, dtype="<f8", offset=44)
        if vals.size != width * height:
            raise ValueError(f"{path}: expected {width * height} values, found {vals.size}")
        return ScalarGrid(vals.reshape(height, width), (ox, oy), (dx, dy))
    if format == "csv":
        rows = [r for r in raw.decode("utf-8").splitlines() if r.strip()]
        return ScalarGrid(np.array([[float(x) for x in r.split(",")] for r in rows]))
    raise ValueError(f"unsupported grid format {format!r}")


def read_cloud(path) -> np.ndarray:
    """Point cloud CSV with header ``x,y``."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns")
    return arr


def write_cloud(cloud, path) -> None:
    pts = np.asarray(cloud, dtype=float).reshape(-1, 2)
    lines = ["x,y"] + [f"{x!r},{y!r}" for x, y in pts.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

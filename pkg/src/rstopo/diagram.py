"""Persistence diagrams, their projected form, and the interaction-distance rule.

All diagrams are held in increasing coordinates: superlevel filtration values
are negated on the way in, so ``death >= birth`` for every stored point.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

CSV_HEADER = ("degree", "birth", "death", "essential")


class DiagramFormatError(ValueError):
    """A diagram file could not be parsed."""


@dataclass(frozen=True)
class PersistencePoint:
    birth: float
    death: float
    degree: int
    essential: bool = False

    @property
    def persistence(self) -> float:
        return self.death - self.birth


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """Multiset of (birth, death) pairs in one homology degree.

    Zero-persistence finite points are dropped at construction.  Essential
    classes are kept with ``essential=True``; their ``death`` is whatever
    finite value the producer recorded (the field minimum for grids).
    """

    births: np.ndarray
    deaths: np.ndarray
    essential: np.ndarray
    degree: int = 0
    source_meta: str = ""

    def __post_init__(self):
        b = np.array(self.births, dtype=float).reshape(-1)
        d = np.array(self.deaths, dtype=float).reshape(-1)
        e = np.array(self.essential, dtype=bool).reshape(-1)
        if e.size == 0 and b.size:
            e = np.zeros(b.size, dtype=bool)
        if not (b.size == d.size == e.size):
            raise ValueError("births, deaths and essential flags differ in length")
        if self.degree < 0:
            raise ValueError("homology degree must be non-negative")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(d))):
            raise ValueError("diagram values must be finite")
        bad = np.flatnonzero(d < b)
        if bad.size:
            raise ValueError(f"point {bad[0]} has death < birth")
        keep = e | (d > b)
        for name, arr in (("births", b), ("deaths", d), ("essential", e)):
            arr = arr[keep]
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_points(cls, points: Iterable[PersistencePoint], degree: int = 0,
                    source_meta: str = "") -> "PersistenceDiagram":
        pts = list(points)
        for i, p in enumerate(pts):
            if p.degree != degree:
                raise ValueError(f"point {i} has degree {p.degree}, diagram has {degree}")
        return cls(
            births=[p.birth for p in pts],
            deaths=[p.death for p in pts],
            essential=[p.essential for p in pts],
            degree=degree,
            source_meta=source_meta,
        )

    @classmethod
    def from_pairs(cls, pairs, degree: int = 0, source_meta: str = "") -> "PersistenceDiagram":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], np.zeros(len(arr), dtype=bool), degree, source_meta)

    @property
    def points(self) -> list[PersistencePoint]:
        return [
            PersistencePoint(float(b), float(d), self.degree, bool(e))
            for b, d, e in zip(self.births, self.deaths, self.essential)
        ]

    def __len__(self) -> int:
        return self.births.size

    def finite(self) -> "PersistenceDiagram":
        keep = ~self.essential
        return PersistenceDiagram(self.births[keep], self.deaths[keep], self.essential[keep],
                                  self.degree, self.source_meta)

    def close_essential(self) -> "PersistenceDiagram":
        """Treat essential classes as finite points dying at their recorded death."""
        return PersistenceDiagram(self.births, self.deaths, np.zeros(len(self), dtype=bool),
                                  self.degree, self.source_meta)

    def persistence(self) -> np.ndarray:
        """Persistence ``death - birth`` of the finite points."""
        keep = ~self.essential
        return self.deaths[keep] - self.births[keep]

    def multiset(self) -> list[tuple]:
        return sorted(zip(self.births.tolist(), self.deaths.tolist(), self.essential.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return self.degree == other.degree and self.multiset() == other.multiset()

    def __repr__(self) -> str:
        return (f"PersistenceDiagram(degree={self.degree}, n={len(self)}, "
                f"essential={int(self.essential.sum())})")


@dataclass(frozen=True, eq=False)
class ProjectedDiagram:
    """Points ``(birth, death - birth)`` living in R x R+."""

    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 2)
        if np.any(p[:, 1] < 0):
            raise ValueError("projected points must have a non-negative second coordinate")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.N

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProjectedDiagram):
            return NotImplemented
        return np.array_equal(self.points, other.points)


def project(pd: PersistenceDiagram) -> ProjectedDiagram:
    """Map each finite point (b, d) to (b, d - b)."""
    ess = np.flatnonzero(pd.essential)
    if ess.size:
        raise ValueError(f"cannot project essential point at index {ess[0]}; use pd.finite()")
    return ProjectedDiagram(np.column_stack([pd.births, pd.deaths - pd.births]))


def unproject(ppd: ProjectedDiagram | np.ndarray, degree: int = 0,
              source_meta: str = "") -> PersistenceDiagram:
    """Map each projected point (x, y) back to (x, x + y); points with y == 0 vanish."""
    p = ppd.points if isinstance(ppd, ProjectedDiagram) else np.asarray(ppd, dtype=float).reshape(-1, 2)
    if np.any(p[:, 1] < 0):
        raise ValueError("negative second coordinate in projected diagram")
    keep = p[:, 1] > 0
    x, y = p[keep, 0], p[keep, 1]
    return PersistenceDiagram(x, x + y, np.zeros(x.size, dtype=bool), degree, source_meta)


@dataclass(frozen=True)
class ModelConfig:
    """Structural settings of the Gibbs model.

    ``data_dim`` may be the string ``"unknown"``, which selects the global
    exponent 1/2 in the interaction-distance rule.
    """

    K: int = 2
    delta_star: float = 1.0
    data_dim: Union[int, str] = 2
    degree: int = 0
    delta: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.delta_star > 0:
            raise ValueError("delta_star must be positive")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.data_dim != "unknown" and not (isinstance(self.data_dim, (int, np.integer))
                                               and self.data_dim >= 1):
            raise ValueError("data_dim must be a positive integer or 'unknown'")

    @classmethod
    def for_diagram(cls, ppd: ProjectedDiagram, K: int = 2, delta_star: float = 1.0,
                    data_dim: Union[int, str] = 2, degree: int = 0) -> "ModelConfig":
        delta = resolve_delta(ppd, degree, data_dim, delta_star)
        return cls(K=K, delta_star=delta_star, data_dim=data_dim, degree=degree, delta=delta)

    def to_dict(self) -> dict:
        return {"K": self.K, "delta_star": self.delta_star, "data_dim": self.data_dim,
                "degree": self.degree, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(K=int(d["K"]), delta_star=float(d["delta_star"]), data_dim=d["data_dim"],
                   degree=int(d["degree"]), delta=float(d["delta"]))


def delta_exponent(degree: int, data_dim: Union[int, str]) -> float:
    if data_dim == "unknown":
        return 0.5
    if degree == 0:
        return 1.0 / data_dim
    return degree / ((degree + 1) * data_dim)


def resolve_delta(ppd: ProjectedDiagram, degree: int = 0, data_dim: Union[int, str] = 2,
                  delta_star: float = 1.0) -> float:
    """Interaction distance: ``delta_star * N**-alpha * max(range x1, range x2)``."""
    if not delta_star > 0:
        raise ValueError("delta_star must be positive")
    p = ppd.points if isinstance(ppd, ProjectedDiagram) else np.asarray(ppd, dtype=float)
    n = p.shape[0]
    if n < 2:
        raise ValueError("need at least two points to resolve delta")
    spread = float(max(np.ptp(p[:, 0]), np.ptp(p[:, 1])))
    if spread == 0:
        raise ValueError("diagram has zero spread in both coordinates")
    return delta_star * n ** (-delta_exponent(degree, data_dim)) * spread


# --- CSV I/O -------------------------------------------------------------------

def _format_float(x: float) -> str:
    return repr(float(x))


def write_diagram(pd: PersistenceDiagram, path, format: str = "csv") -> None:
    if format != "csv":
        raise ValueError(f"unsupported diagram format {format!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for b, d, e in zip(pd.births, pd.deaths, pd.essential):
        w.writerow([pd.degree, _format_float(b), _format_float(d), "true" if e else "false"])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_diagram(path, format: str = "csv", degree: int | None = None) -> PersistenceDiagram:
    """Read a diagram CSV.  Errors carry the 1-based line number."""
    if format != "csv":
        raise ValueError(f"unsupported diagram format {format!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DiagramFormatError(f"{path}: {exc.strerror or exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise DiagramFormatError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
    births, deaths, ess, degrees = [], [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DiagramFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            deg, b, d = int(row[0]), float(row[1]), float(row[2])
        except ValueError as exc:
            raise DiagramFormatError(f"{path}:{lineno}: {exc}") from exc
        flag = row[3].strip().lower()
        if flag not in ("true", "false"):
            raise DiagramFormatError(f"{path}:{lineno}: essential must be true or false")
        if d < b:
            raise DiagramFormatError(f"{path}:{lineno}: death {d} < birth {b}")
        if not (np.isfinite(b) and np.isfinite(d)):
            raise DiagramFormatError(f"{path}:{lineno}: non-finite value")
        degrees.add(deg)
        births.append(b)
        deaths.append(d)
        ess.append(flag == "true")
    if len(degrees) > 1:
        raise DiagramFormatError(f"{path}: mixed homology degrees {sorted(degrees)}")
    deg = degrees.pop() if degrees else (0 if degree is None else degree)
    if degree is not None and deg != degree:
        raise DiagramFormatError(f"{path}: file holds degree {deg}, expected {degree}")
    return PersistenceDiagram(births, deaths, ess, deg, source_meta=str(path))

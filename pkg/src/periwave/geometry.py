"""Cell, waveguide and mesh geometry.

All domains are unions of unit periodicity cells subdivided into ``n x n``
square bilinear elements.  Holes are rasterized by centroid membership, so a
hole boundary is represented by the staircase of element edges around it.

Coordinates
-----------
* cell ``[0, 1]^2``,
* strip ``(0, 1) x (-T, T)`` with the waveguide rows ``|x2| < h``,
* truncated plane ``(-L, L)^2`` with the waveguide in ``x1 > 0, |x2| < h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import shapely.geometry as sg


class GeometryError(ValueError):
    """Raised for invalid shapes, meshes or mesh parameters."""


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"disk radius must be positive, got {self.radius}")

    def contains(self, x, y):
        """Open-set membership, vectorized over ``x`` and ``y``."""
        cx, cy = self.center
        return (np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2 < self.radius ** 2

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r, cx + r, cy + r)

    def shifted(self, dx, dy):
        return Disk((self.center[0] + dx, self.center[1] + dy), self.radius)


@dataclass(frozen=True)
class AxisRect:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise GeometryError(f"rectangle needs lo < hi componentwise, got {self.lo}, {self.hi}")

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x > self.lo[0]) & (x < self.hi[0]) & (y > self.lo[1]) & (y < self.hi[1])

    def bounds(self):
        return (self.lo[0], self.lo[1], self.hi[0], self.hi[1])

    def shifted(self, dx, dy):
        return AxisRect((self.lo[0] + dx, self.lo[1] + dy), (self.hi[0] + dx, self.hi[1] + dy))


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(a), float(b)) for a, b in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        ring = sg.LinearRing(verts)
        if not ring.is_simple:
            raise GeometryError("polygon is self-intersecting")
        if not ring.is_ccw:
            raise GeometryError("polygon vertices must be counterclockwise")

    def contains(self, x, y):
        # even-odd ray casting; boundary points count as outside often enough
        # that centroid rasterization never depends on it
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        v = np.asarray(self.vertices)
        xj, yj = v[-1]
        for xi, yi in v:
            crosses = (yi > y) != (yj > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (xj - xi) * (y - yi) / (yj - yi) + xi
            inside ^= crosses & (x < xint)
            xj, yj = xi, yi
        return inside

    def bounds(self):
        v = np.asarray(self.vertices)
        return (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    def shifted(self, dx, dy):
        return Polygon(tuple((a + dx, b + dy) for a, b in self.vertices))


Shape = Union[Disk, AxisRect, Polygon]


def _as_shapely(shape: Shape):
    if isinstance(shape, Disk):
        return sg.Point(shape.center)
    if isinstance(shape, AxisRect):
        return sg.box(*shape.bounds())
    return sg.Polygon(shape.vertices)


def closures_disjoint(a: Shape, b: Shape) -> bool:
    """True when the closures of two shapes do not meet."""
    if isinstance(a, Disk) and isinstance(b, Disk):
        return math.dist(a.center, b.center) > a.radius + b.radius
    if isinstance(b, Disk):
        a, b = b, a
    if isinstance(a, Disk):
        other = _as_shapely(b)
        center = sg.Point(a.center)
        return not other.covers(center) and other.distance(center) > a.radius
    return not _as_shapely(a).intersects(_as_shapely(b))


def inside_box(shape: Shape, lo: tuple[float, float], hi: tuple[float, float]) -> bool:
    """Closure of ``shape`` lies in the open box ``(lo, hi)``."""
    x0, y0, x1, y1 = shape.bounds()
    return x0 > lo[0] and y0 > lo[1] and x1 < hi[0] and y1 < hi[1]


def shape_name(shape: Shape) -> str:
    if isinstance(shape, Disk):
        return f"disk(center={tuple(shape.center)}, r={shape.radius})"
    if isinstance(shape, AxisRect):
        return f"rect({tuple(shape.lo)}, {tuple(shape.hi)})"
    return f"polygon({len(shape.vertices)} vertices)"


# ---------------------------------------------------------------------------
# Cell and waveguide declarations
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class UnitCellGeometry:
    """Perforation of the unit cell; ``holes`` may be empty."""

    holes: tuple[Shape, ...] = ()
    margin_d: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(self.holes))


@dataclass(frozen=True)
class WaveguideSpec:
    """Semi-infinite row of foreign holes in ``(0, 1) x (-h, h)``.

    ``holes1`` are given in the coordinates of the first waveguide cell,
    ``x1 in (0, 1)`` and ``x2 in (-h, h)``.  The coefficient patch lives on the
    :class:`~periwave.operator.CoefficientField`; ``transition_R`` is the number
    of leading cells ``0 <= alpha1 < R`` whose patch may differ from the
    periodic one.
    """

    half_width_h: int
    holes1: tuple[Shape, ...] = ()
    transition_R: int = 0

    def __post_init__(self):
        object.__setattr__(self, "holes1", tuple(self.holes1))
        if int(self.half_width_h) != self.half_width_h or self.half_width_h < 1:
            raise GeometryError("waveguide half width h must be a positive integer")
        if int(self.transition_R) != self.transition_R or self.transition_R < 0:
            raise GeometryError("transition R must be a nonnegative integer")


def _check_holes(holes: Sequence[Shape], lo, hi, margin, where, violations):
    for shape in holes:
        if not inside_box(shape, lo, hi):
            violations.append(f"{where}: {shape_name(shape)} touches the margin strip of width {margin}")
    for i in range(len(holes)):
        for j in range(i + 1, len(holes)):
            if not closures_disjoint(holes[i], holes[j]):
                violations.append(
                    f"{where}: {shape_name(holes[i])} and {shape_name(holes[j])} overlap")


def validate_cell(geom: UnitCellGeometry) -> ValidationReport:
    report = ValidationReport()
    d = geom.margin_d
    if not 0 < d < 0.5:
        report.violations.append(f"margin d={d} outside (0, 0.5)")
        return report
    _check_holes(geom.holes, (d, d), (1 - d, 1 - d), d, "cell", report.violations)
    return report


def validate_waveguide(geom: UnitCellGeometry, wg: WaveguideSpec) -> ValidationReport:
    report = validate_cell(geom)
    d = geom.margin_d
    h = wg.half_width_h
    _check_holes(wg.holes1, (d, -h + d), (1 - d, h - d), d, "waveguide", report.violations)
    return report


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform grid of square elements on ``origin + [0, nx/n] x [0, ny/n]``.

    Element arrays are indexed ``[iy, ix]`` and node arrays ``[jy, jx]`` with
    node ``(jy, jx)`` at ``origin + (jx, jy) / n``.
    """

    n: int
    nx: int
    ny: int
    origin: tuple[int, int]
    active: np.ndarray
    waveguide: np.ndarray

    @property
    def h_elem(self) -> float:
        return 1.0 / self.n

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def node_shape(self) -> tuple[int, int]:
        return (self.ny + 1, self.nx + 1)

    def node_coords(self):
        xs = self.origin[0] + np.arange(self.nx + 1) / self.n
        ys = self.origin[1] + np.arange(self.ny + 1) / self.n
        return np.meshgrid(xs, ys)

    def centroids(self):
        return _centroids(self.n, self.nx, self.ny, self.origin)

    def element_nodes(self) -> np.ndarray:
        """Flat node ids of each element, counterclockwise from lower left."""
        iy, ix = np.divmod(np.arange(self.n_elements), self.nx)
        w = self.nx + 1
        ll = iy * w + ix
        return np.stack([ll, ll + 1, ll + 1 + w, ll + w], axis=1)


@dataclass(frozen=True, eq=False)
class CellMesh(Mesh):
    pass


@dataclass(frozen=True, eq=False)
class StripMesh(Mesh):
    T: int = 0
    h: int = 0
    cap_bc: str = "dirichlet"


@dataclass(frozen=True, eq=False)
class PlaneMesh(Mesh):
    L: int = 0
    h: int = 0


def _centroids(n, nx, ny, origin):
    xs = origin[0] + (np.arange(nx) + 0.5) / n
    ys = origin[1] + (np.arange(ny) + 0.5) / n
    return np.meshgrid(xs, ys)


def _in_any(holes, x, y):
    mask = np.zeros(np.shape(x), dtype=bool)
    for shape in holes:
        mask |= shape.contains(x, y)
    return mask


def _check_n(n):
    if int(n) != n or n < 4:
        raise GeometryError(f"need at least 4 subdivisions per cell, got {n}")


def rasterize_cell(geom: UnitCellGeometry, n: int) -> CellMesh:
    _check_n(n)
    report = validate_cell(geom)
    if not report.ok:
        raise GeometryError("; ".join(report.violations))
    x, y = _centroids(n, n, n, (0, 0))
    active = ~_in_any(geom.holes, x, y)
    return CellMesh(n=n, nx=n, ny=n, origin=(0, 0), active=active,
                    waveguide=np.zeros_like(active))


def _activity(geom, wg, n, x, y, wave):
    """Activity of elements with centroids ``x, y``; ``wave`` marks waveguide cells."""
    fx = x - np.floor(x)
    fy = y - np.floor(y)
    # waveguide holes are declared in the first waveguide cell, x2 global
    in_bg = _in_any(geom.holes, fx, fy)
    in_wg = _in_any(wg.holes1, fx, y) if wg is not None else np.zeros_like(in_bg)
    return ~np.where(wave, in_wg, in_bg)


def build_strip_mesh(geom: UnitCellGeometry, wg: WaveguideSpec, T: int, n: int,
                     cap_bc: str = "dirichlet") -> StripMesh:
    _check_n(n)
    h = wg.half_width_h
    if int(T) != T or T < h + 2:
        raise GeometryError(f"strip half height T={T} must be an integer >= h + 2 = {h + 2}")
    if cap_bc not in ("dirichlet", "neumann"):
        raise GeometryError(f"unknown cap boundary condition {cap_bc!r}")
    report = validate_waveguide(geom, wg)
    if not report.ok:
        raise GeometryError("; ".join(report.violations))
    x, y = _centroids(n, n, 2 * T * n, (0, -T))
    wave = np.abs(y) < h
    active = _activity(geom, wg, n, x, y, wave)
    return StripMesh(n=n, nx=n, ny=2 * T * n, origin=(0, -T), active=active,
                     waveguide=wave, T=int(T), h=h, cap_bc=cap_bc)


def build_truncated_plane_mesh(geom: UnitCellGeometry, wg: WaveguideSpec, L: int,
                               n: int) -> PlaneMesh:
    _check_n(n)
    h = wg.half_width_h
    need = max(2 * h, wg.transition_R + 2)
    if int(L) != L or L < need:
        raise GeometryError(f"plane half extent L={L} must be an integer >= {need}")
    report = validate_waveguide(geom, wg)
    if not report.ok:
        raise GeometryError("; ".join(report.violations))
    x, y = _centroids(n, 2 * L * n, 2 * L * n, (-L, -L))
    wave = (x > 0) & (np.abs(y) < h)
    active = _activity(geom, wg, n, x, y, wave)
    return PlaneMesh(n=n, nx=2 * L * n, ny=2 * L * n, origin=(-L, -L), active=active,
                     waveguide=wave, L=int(L), h=h)

"""Singular (Weyl) sequences on the truncated plane.

A discrete Bloch eigenvector of the cell, or a guided strip eigenvector, is
tiled over the plane with its Floquet phase and cut off by a plateau window
supported in ``[2^j, 2^(j+1)]`` (in both directions for Bloch waves, in
``x1`` only for guided waves).  Because the tiled vector solves the plane
equations exactly away from the window ramps, the residual lives on the
ramps and ``||A u_j - lambda u_j|| ~ 2^(-j/2)``.  Only matrix-vector products
with the assembled plane pair are used.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .assembly import AssembledPair
from .geometry import GeometryError


def smoothstep(s):
    """Quintic ramp: 0 for s <= 0, 1 for s >= 1, C^2 in between."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


@dataclass(frozen=True)
class PlateauSpec:
    j: int
    d: float = 0.5

    def __post_init__(self):
        if self.j < 0 or int(self.j) != self.j:
            raise ValueError(f"scale index must be a nonnegative integer, got {self.j}")
        if not self.d > 0:
            raise ValueError("ramp width must be positive")

    @property
    def lo(self) -> float:
        return float(2 ** self.j)

    @property
    def hi(self) -> float:
        return float(2 ** (self.j + 1))

    def chi(self, t):
        return smoothstep(np.asarray(t, dtype=float) / self.d)

    def chi_j(self, t):
        t = np.asarray(t, dtype=float)
        return self.chi(t - self.lo) * self.chi(self.hi - t)

    def bloch_window(self, x1, x2):
        return self.chi_j(x1) * self.chi_j(x2)

    def floquet_window(self, x1, x2):
        return self.chi_j(x1) * self.chi(np.asarray(x2) + self.hi) * self.chi(self.hi - np.asarray(x2))


def plateau(spec: PlateauSpec):
    """The two-dimensional window ``X_j(x1, x2)`` as a callable."""
    return spec.bloch_window


def gradient_energy(spec: PlateauSpec, samples_per_unit: int = 64) -> float:
    """``int |grad X_j|^2`` by the trapezoid rule on a uniform grid."""
    t = np.linspace(spec.lo - 1, spec.hi + 1, int((spec.hi - spec.lo + 2) * samples_per_unit) + 1)
    f = spec.chi_j(t)
    df = np.gradient(f, t)
    # separable: |grad X|^2 = f'(x1)^2 f(x2)^2 + f(x1)^2 f'(x2)^2
    return float(2 * np.trapezoid(df ** 2, t) * np.trapezoid(f ** 2, t))


@dataclass
class WeylElement:
    j: int
    u: np.ndarray
    norm_sq: float
    box: tuple
    window: np.ndarray
    tiled: np.ndarray


@dataclass
class WeylRecord:
    """One scale: ``residual`` is for the normalized element, the frame
    contributions and ``off_frame_max`` for the unnormalized one (the latter
    relative to the largest residual entry)."""

    j: int
    box: tuple
    norm_sq: float
    residual: float
    vertical_frames: float
    horizontal_frames: float
    off_frame_max: float


@dataclass
class WeylRun:
    lam: float
    kind: str
    records: list
    slope: float
    slope_ci: tuple
    norm_slope: float
    norm_slope_ci: tuple
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "lambda": self.lam, "kind": self.kind,
            "records": [asdict(r) for r in self.records],
            "slope": self.slope, "slope_ci": list(self.slope_ci),
            "norm_slope": self.norm_slope, "norm_slope_ci": list(self.norm_slope_ci),
            "notes": list(self.notes),
        }


def _plane_coords(pair: AssembledPair):
    mesh = pair.mesh
    n, L = mesh.n, mesh.L
    jy, jx = np.indices(mesh.node_shape)
    return jx, jy, -L + jx / n, -L + jy / n


def _check_box(pair: AssembledPair, spec: PlateauSpec, vertical_extent: float):
    L = pair.mesh.L
    if spec.hi + 1 > L or vertical_extent + 1 > L:
        raise GeometryError(f"window of scale j={spec.j} does not fit in the plane of half extent {L}")


def build_bloch_weyl_element(plane: AssembledPair, cell: AssembledPair, cell_vec, eta,
                             j: int, d: float = 0.5) -> WeylElement:
    spec = PlateauSpec(j, d)
    _check_box(plane, spec, spec.hi)
    if spec.lo < plane.mesh.h:
        raise GeometryError(f"window of scale j={j} touches the waveguide rows |x2| < {plane.mesh.h}")
    n, L = plane.mesh.n, plane.mesh.L
    Uc = cell.nodal_values(cell_vec)
    jx, jy, x1, x2 = _plane_coords(plane)
    a1, i1 = np.divmod(jx, n)
    a2, i2 = np.divmod(jy, n)
    ph = np.exp(1j * (eta[0] * (a1 - L) + eta[1] * (a2 - L)))
    X = spec.bloch_window(x1, x2)
    tiled = ph[..., None] * Uc[i2, i1]
    return _finish(plane, tiled, X, spec, ((spec.lo, spec.hi), (spec.lo, spec.hi)))


def build_floquet_weyl_element(plane: AssembledPair, strip: AssembledPair, strip_vec, zeta: float,
                               j: int, d: float = 0.5, transition_R: int = 0) -> WeylElement:
    spec = PlateauSpec(j, d)
    _check_box(plane, spec, spec.hi)
    if spec.lo <= transition_R:
        raise GeometryError(f"window of scale j={j} starts inside the transition zone R={transition_R}")
    n, L = plane.mesh.n, plane.mesh.L
    T = strip.mesh.T
    Us = strip.nodal_values(strip_vec)
    jx, jy, x1, x2 = _plane_coords(plane)
    a1, i1 = np.divmod(jx, n)
    row = jy - n * (L - T)
    inside = (row >= 0) & (row <= 2 * T * n)
    X = spec.floquet_window(x1, x2)
    vals = Us[np.clip(row, 0, 2 * T * n), i1] * inside[..., None]
    tiled = np.exp(1j * zeta * (a1 - L))[..., None] * vals
    return _finish(plane, tiled, X, spec, ((spec.lo, spec.hi), (-spec.hi, spec.hi)))


def _finish(plane, tiled, X, spec, box):
    v = plane.from_nodal(X[..., None] * tiled)
    norm_sq = float(np.real(np.vdot(v, plane.M @ v)))
    if not norm_sq > 0:
        raise GeometryError(f"window of scale j={spec.j} carries no mass")
    return WeylElement(spec.j, v / np.sqrt(norm_sq), norm_sq, box, X, plane.from_nodal(tiled))


def _ramp_nodes(X):
    """Nodes whose surrounding elements see a non-constant window."""
    pad = np.pad(X, 1, mode="edge")
    stack = np.stack([pad[1 + dy:pad.shape[0] - 1 + dy, 1 + dx:pad.shape[1] - 1 + dx]
                      for dy in (-1, 0, 1) for dx in (-1, 0, 1)])
    return stack.max(axis=0) > stack.min(axis=0)


def weyl_record(plane: AssembledPair, element: WeylElement, lam: float) -> WeylRecord:
    """Residual of one normalized element in the lumped-mass dual norm."""
    u = element.u
    f = plane.K @ u - lam * (plane.M @ u)
    w = plane.lumped_mass()
    fn = np.abs(f) ** 2 / w
    res = float(np.sqrt(fn.sum()))

    nc = plane.ncomp
    ramp = plane.from_nodal(np.repeat(_ramp_nodes(element.window)[..., None], nc, axis=-1)).astype(bool)
    _, _, x1, _ = _plane_coords(plane)
    spec = PlateauSpec(element.j)
    margin = 2.0 / plane.mesh.n + 1.0
    near_x = (np.abs(x1 - spec.lo) <= margin) | (np.abs(x1 - spec.hi) <= margin)
    vert = plane.from_nodal(np.repeat(near_x[..., None], nc, axis=-1)).astype(bool) & ramp
    horiz = ramp & ~vert
    scale = np.abs(f).max() if f.size else 0.0
    off = float(np.abs(f[~ramp]).max() / scale) if scale > 0 and (~ramp).any() else 0.0
    # frame parts are reported for the unnormalized v_j
    s = np.sqrt(element.norm_sq)
    return WeylRecord(element.j, element.box, element.norm_sq, res,
                      float(s * np.sqrt(fn[vert].sum())), float(s * np.sqrt(fn[horiz].sum())), off)


def _fit(js, ys):
    fit = stats.linregress(js, ys)
    dof = len(js) - 2
    half = float(stats.t.ppf(0.975, dof) * fit.stderr) if dof > 0 else float("inf")
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half))


def supports_disjoint(records: Sequence[WeylRecord]) -> bool:
    """Open support boxes are pairwise disjoint (they may share edges)."""
    boxes = [r.box[0] for r in records]
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            (p, q), (s, t) = boxes[a], boxes[b]
            if max(p, s) < min(q, t):
                return False
    return True


def residual_decay(records: Sequence[WeylRecord], lam: float, kind: str) -> WeylRun:
    """Least-squares slopes of ``log2 r_j`` and ``log2 ||v_j||^2`` against ``j``."""
    records = sorted(records, key=lambda r: r.j)
    if len(records) < 3:
        raise ValueError(f"need at least three scales, got {len(records)}")
    if not supports_disjoint(records):
        raise ValueError("support boxes overlap; scales must be distinct")
    js = np.array([r.j for r in records], dtype=float)
    r = np.array([r.residual for r in records])
    notes = []
    if np.any(r <= 0):
        notes.append("zero residual at some scale; slope undefined")
        r = np.maximum(r, np.finfo(float).tiny)
    slope, ci = _fit(js, np.log2(r))
    nslope, nci = _fit(js, np.log2([rec.norm_sq for rec in records]))
    return WeylRun(lam, kind, records, slope, ci, nslope, nci, notes)


def run_harness(plane: AssembledPair, build, lam: float, js: Sequence[int], kind: str) -> WeylRun:
    """Evaluate ``build(j)`` for every scale and fit the decay law."""
    recs = [weyl_record(plane, build(j), lam) for j in js]
    run = residual_decay(recs, lam, kind)
    if kind == "floquet":
        h = [rec.horizontal_frames for rec in run.records]
        v = [rec.vertical_frames for rec in run.records]
        if h[-1] > h[0]:
            run.notes.append("horizontal frame residual does not decay; mode may decay slowly")
        if max(v) > 2 * min(v):
            run.notes.append("vertical frame residual varies strongly with j")
    return run


def plane_extent_for(j_max: int) -> int:
    """Smallest plane half extent holding the windows up to ``j_max``."""
    return 2 ** (j_max + 1) + 2

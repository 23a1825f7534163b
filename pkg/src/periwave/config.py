"""Run configuration: strict JSON schema and conversion to domain objects.

Schema errors (bad JSON, unknown keys, wrong types) are parse errors.
Physical preconditions (overlapping holes, indefinite coefficients, grid
sizes) are checked afterwards by :func:`check_config`, before any solve.
"""
from __future__ import annotations

import hashlib
import json
import math
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .eigensolve import SolverOptions
from .geometry import (AxisRect, Disk, GeometryError, Polygon, UnitCellGeometry, WaveguideSpec,
                       validate_cell, validate_waveguide)
from .operator import (CoefficientField, ConfigurationError, Override, hermitian_matrix,
                       symbol_by_kind)
from .spectra import SweepTolerances


class ConfigError(ValueError):
    """Raised for unreadable or schema-violating configs (exit code 2)."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Number = Union[float, int]
Entry = Union[Number, tuple[Number, Number]]


class DiskCfg(_Strict):
    type: Literal["disk"]
    center: tuple[float, float]
    radius: float


class RectCfg(_Strict):
    type: Literal["rect"]
    lo: tuple[float, float]
    hi: tuple[float, float]


class PolygonCfg(_Strict):
    type: Literal["polygon"]
    vertices: list[tuple[float, float]]


ShapeCfg = Union[DiskCfg, RectCfg, PolygonCfg]


class CellCfg(_Strict):
    holes: list[ShapeCfg] = Field(default_factory=list)
    margin: float = 0.05


class WaveguideCfg(_Strict):
    h: int
    holes: list[ShapeCfg] = Field(default_factory=list)
    transition_R: int = 0


class GeometryCfg(_Strict):
    cell: CellCfg
    waveguide: Optional[WaveguideCfg] = None


class OverrideCfg(_Strict):
    shape: ShapeCfg
    A: Optional[list[list[Entry]]] = None
    rho: Optional[float] = None


class TransitionCfg(_Strict):
    alpha1: int
    overrides: list[OverrideCfg]


class OperatorCfg(_Strict):
    kind: Literal["scalar", "elasticity"]
    A0: list[list[Entry]]
    rho0: float
    hole_bc: Literal["neumann", "dirichlet"]
    overrides: list[OverrideCfg] = Field(default_factory=list)
    A1: Optional[list[list[Entry]]] = None
    patch: list[OverrideCfg] = Field(default_factory=list)
    transition: list[TransitionCfg] = Field(default_factory=list)


class DiscretizationCfg(_Strict):
    n: int
    M_grid: int
    K: int
    M_line: int = 9
    K_cell: int = 4
    K_strip: int = 8
    n_zeta: int = 17
    T: list[int] = Field(default_factory=lambda: [6, 10])
    cap_bc: list[Literal["dirichlet", "neumann"]] = Field(default_factory=lambda: ["dirichlet", "neumann"])


class TolerancesCfg(_Strict):
    tol_band: float = 1e-2
    tol_stab: float = 1e-3
    beta_min: float = 0.05
    fit_residual_max: float = 0.5
    eig_tol: float = 1e-8
    dense_max: int = 2000


class BandPointCfg(_Strict):
    eta_pi: tuple[float, float]
    band: int = 1
    detune: float = 0.0


class TrappedPointCfg(_Strict):
    zeta_pi: float
    mode: int = 0
    T: Optional[int] = None
    detune: float = 0.0


class WeylCfg(_Strict):
    n: int = 8
    j_min: int = 2
    j_max: int = 5
    d: float = 0.5
    slope_window: tuple[float, float] = (-0.8, -0.2)
    band_point: Optional[BandPointCfg] = None
    trapped_point: Optional[TrappedPointCfg] = None


class OutputsCfg(_Strict):
    formats: list[Literal["json", "csv", "svg"]] = Field(default_factory=lambda: ["json", "csv", "svg"])


class RunConfig(_Strict):
    geometry: GeometryCfg
    operator: OperatorCfg
    discretization: DiscretizationCfg
    tolerances: TolerancesCfg = TolerancesCfg()
    weyl: Optional[WeylCfg] = None
    outputs: OutputsCfg = OutputsCfg()
    seed: int = 0


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"])
            lines.append(f"{source}: {loc}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# Conversion
# ---------------------------------------------------------------------------

def to_shape(cfg: ShapeCfg):
    if isinstance(cfg, DiskCfg):
        return Disk(tuple(cfg.center), cfg.radius)
    if isinstance(cfg, RectCfg):
        return AxisRect(tuple(cfg.lo), tuple(cfg.hi))
    return Polygon(tuple(tuple(v) for v in cfg.vertices))


def to_matrix(rows, name: str = "matrix") -> np.ndarray:
    """Row-major entries (numbers or ``[re, im]`` pairs) to a Hermitian matrix."""
    vals = [[complex(e[0], e[1]) if isinstance(e, (tuple, list)) else complex(e) for e in row]
            for row in rows]
    lens = {len(r) for r in vals}
    if len(lens) != 1:
        raise ConfigurationError("matrix rows have different lengths")
    a = np.array(vals, dtype=complex)
    return hermitian_matrix(a.real.copy() if not np.any(a.imag) else a, name)


def _overrides(items, where):
    return tuple(Override(to_shape(o.shape), None if o.A is None else to_matrix(o.A, f"{where}[{k}].A"),
                          o.rho) for k, o in enumerate(items))


def to_geometry(cfg: RunConfig) -> UnitCellGeometry:
    c = cfg.geometry.cell
    return UnitCellGeometry(tuple(to_shape(s) for s in c.holes), c.margin)


def to_waveguide(cfg: RunConfig) -> Optional[WaveguideSpec]:
    w = cfg.geometry.waveguide
    if w is None:
        return None
    return WaveguideSpec(w.h, tuple(to_shape(s) for s in w.holes), w.transition_R)


def unperturbed_waveguide(geom: UnitCellGeometry, h: int = 1) -> WaveguideSpec:
    """A waveguide declaration that reproduces the background lattice."""
    holes = tuple(s.shifted(0.0, float(k)) for k in range(-h, h) for s in geom.holes)
    return WaveguideSpec(h, holes, 0)


def to_field(cfg: RunConfig) -> CoefficientField:
    o = cfg.operator
    return CoefficientField(
        A0=to_matrix(o.A0, "operator.A0"), rho0=o.rho0,
        overrides=_overrides(o.overrides, "operator.overrides"),
        A1=None if o.A1 is None else to_matrix(o.A1, "operator.A1"),
        patch=_overrides(o.patch, "operator.patch"),
        transition=tuple((t.alpha1, _overrides(t.overrides, f"operator.transition[{k}]"))
                         for k, t in enumerate(o.transition)),
        hole_bc=o.hole_bc)


def to_solver(cfg: RunConfig) -> SolverOptions:
    t = cfg.tolerances
    return SolverOptions(tol=t.eig_tol, dense_max=t.dense_max, seed=cfg.seed)


def to_sweep_tolerances(cfg: RunConfig) -> SweepTolerances:
    t = cfg.tolerances
    return SweepTolerances(tol_band=t.tol_band, tol_stab=t.tol_stab, beta_min=t.beta_min,
                           fit_residual_max=t.fit_residual_max)


# ---------------------------------------------------------------------------
# Preconditions
# ---------------------------------------------------------------------------

def check_config(cfg: RunConfig, command: str = "validate") -> list[str]:
    """Every precondition that can be checked without solving; [] if fine."""
    out: list[str] = []
    try:
        geom = to_geometry(cfg)
        wg = to_waveguide(cfg)
    except (GeometryError, ValueError) as exc:
        return [str(exc)]
    rep = validate_cell(geom) if wg is None else validate_waveguide(geom, wg)
    out += rep.violations

    try:
        field = to_field(cfg)
        sym = symbol_by_kind(cfg.operator.kind)
        if field.m != sym.m:
            out.append(f"operator {cfg.operator.kind} needs {sym.m}x{sym.m} coefficients, got {field.m}x{field.m}")
        else:
            _probe_coefficients(field, geom, wg)
    except (ConfigurationError, GeometryError, ValueError) as exc:
        out.append(str(exc))

    d = cfg.discretization
    if d.n < 4:
        out.append(f"discretization.n={d.n} must be >= 4")
    if d.M_grid < 5 or d.M_grid % 2 == 0:
        out.append(f"discretization.M_grid={d.M_grid} must be odd and >= 5")
    if d.K < 1:
        out.append(f"discretization.K={d.K} must be >= 1")
    if d.M_line < 3:
        out.append(f"discretization.M_line={d.M_line} must be >= 3")
    if d.K_cell < 1 or d.K_strip < 1:
        out.append("discretization.K_cell and K_strip must be >= 1")
    t = cfg.tolerances
    for name in ("tol_band", "tol_stab", "eig_tol"):
        if not getattr(t, name) > 0:
            out.append(f"tolerances.{name} must be positive")

    if command in ("dispersion", "spectrum") or (command == "validate" and wg is not None):
        if wg is None and command == "dispersion":
            out.append("dispersion needs geometry.waveguide")
        if wg is not None:
            if d.n_zeta < 9:
                out.append(f"discretization.n_zeta={d.n_zeta} must be >= 9")
            if len(set(d.T)) < 2:
                out.append("discretization.T needs at least two distinct strip heights")
            elif max(d.T) < wg.half_width_h + 4:
                out.append(f"largest strip height must be >= h + 4 = {wg.half_width_h + 4}")
            if min(d.T, default=0) < wg.half_width_h + 2:
                out.append(f"every strip height must be >= h + 2 = {wg.half_width_h + 2}")
            if not d.cap_bc:
                out.append("discretization.cap_bc must not be empty")

    if command in ("weyl",) or (command == "validate" and cfg.weyl is not None):
        out += _check_weyl(cfg, wg)
    return out


def _probe_coefficients(field, geom, wg):
    """Evaluate every coefficient class once (positivity check)."""
    n = 16
    c = (np.arange(n) + 0.5) / n
    fx, fy = np.meshgrid(c, c)
    field.classify(fx, fy, fy, np.zeros_like(fx, dtype=bool))
    if wg is not None:
        h = wg.half_width_h
        y = -h + (np.arange(2 * h * n) + 0.5) / n
        gx, gy = np.meshgrid(c, y)
        for a1 in sorted({k for k, _ in field.transition} | {None}, key=lambda v: -1 if v is None else v):
            field.classify(gx, gy % 1.0, gy, np.ones_like(gx, dtype=bool),
                           None if a1 is None else np.full(gx.shape, a1))


def _check_weyl(cfg: RunConfig, wg) -> list[str]:
    w = cfg.weyl
    if w is None:
        return ["weyl section missing"]
    out = []
    if w.j_max - w.j_min + 1 < 3:
        out.append("weyl needs at least three scales")
    if w.j_min < 0:
        out.append("weyl.j_min must be >= 0")
    if w.n < 4:
        out.append("weyl.n must be >= 4")
    if not w.d > 0:
        out.append("weyl.d must be positive")
    lo, hi = w.slope_window
    if not lo < hi:
        out.append("weyl.slope_window must be increasing")
    h = wg.half_width_h if wg is not None else 1
    if w.j_min >= 0 and 2 ** w.j_min < h:
        out.append(f"weyl windows at j={w.j_min} touch the waveguide rows |x2| < {h}")
    if w.trapped_point is not None:
        if wg is None:
            out.append("weyl.trapped_point needs geometry.waveguide")
        elif 2 ** w.j_min <= wg.transition_R:
            out.append(f"weyl.j_min must satisfy 2^j > transition_R = {wg.transition_R}")
    return out


# ---------------------------------------------------------------------------
# Canonical hashing
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def product_key(cfg: RunConfig, product: str) -> str:
    """Content hash of every config field the named product depends on."""
    d = cfg.model_dump(mode="json")
    disc = d["discretization"]
    tol = d["tolerances"]
    op = d["operator"]
    bands_op = {k: op[k] for k in ("kind", "A0", "rho0", "hole_bc", "overrides")}
    solver = {"eig_tol": tol["eig_tol"], "dense_max": tol["dense_max"], "seed": d["seed"]}
    if product == "bands":
        sub = {"cell": d["geometry"]["cell"], "operator": bands_op, "solver": solver,
               "disc": {k: disc[k] for k in ("n", "M_grid", "K")}}
    elif product == "dispersion":
        sub = {"geometry": d["geometry"], "operator": op, "solver": solver, "tol": tol,
               "disc": {k: disc[k] for k in ("n", "M_line", "K_cell", "K_strip", "n_zeta", "T", "cap_bc")}}
    elif product.startswith("weyl"):
        sub = {"geometry": d["geometry"], "operator": op, "solver": solver, "tol": tol,
               "disc": disc, "weyl": d["weyl"]}
    else:
        raise ValueError(f"unknown product {product!r}")
    from . import __version__
    blob = canonical_json({"product": product, "version": __version__, "config": sub})
    return hashlib.sha256(blob.encode()).hexdigest()


def round_sig(x, digits: int = 12):
    """Round to ``digits`` significant digits; nested lists are handled."""
    if isinstance(x, (list, tuple)):
        return [round_sig(v, digits) for v in x]
    x = float(x)
    if not math.isfinite(x) or x == 0:
        return x
    return float(f"{x:.{digits}g}")

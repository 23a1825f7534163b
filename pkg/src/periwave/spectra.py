"""Band functions, partial bands, strip spectra, guided modes and the union formula.

The essential spectrum of the perturbed plane is assembled as

    sigma_es(A) = sigma_es(A0)  U  sigma_sharp

where ``sigma_es(A0)`` is the union of the cell bands and ``sigma_sharp``
collects strip eigenvalues (at some quasi-momentum ``zeta``) lying outside
every partial band ``B_k(zeta)``.  Strip eigenvalues are only accepted as
guided modes after a decay fit and a truncation/cap stability check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assembly import (_N, TWO_PI, AssembledPair, assemble_cell_pair, assemble_strip_pair,
                       canonical_angle)
from .eigensolve import EigenResult, SolverOptions
from .geometry import (GeometryError, StripMesh, UnitCellGeometry, WaveguideSpec,
                       build_strip_mesh, rasterize_cell)
from .intervals import Interval, IntervalUnion
from .operator import CoefficientField, OperatorSymbol
from .parallel import run_tasks


def eta_grid(count: int) -> np.ndarray:
    """``count`` equispaced samples of the closed period ``[0, 2*pi]``.

    Both ends are sampled (they describe the same problem) so that an odd
    count always contains ``pi``.
    """
    if count < 1:
        raise ValueError("grid needs at least one point")
    if count == 1:
        return np.zeros(1)
    return TWO_PI * np.arange(count) / (count - 1)


# ---------------------------------------------------------------------------
# Cell bands
# ---------------------------------------------------------------------------

@dataclass
class Band:
    index: int
    lo: float
    hi: float

    def interval(self) -> Interval:
        return Interval(self.lo, self.hi)


@dataclass
class BandFunction:
    """``values[k, i, j]`` is the (k+1)-th eigenvalue at ``(eta[i], eta[j])``."""

    eta: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def continuity_modulus(self) -> float:
        """Largest difference quotient between neighbouring samples."""
        if len(self.eta) < 2:
            return 0.0
        d = np.diff(self.eta)
        q1 = np.abs(np.diff(self.values, axis=1)) / d[None, :, None]
        q2 = np.abs(np.diff(self.values, axis=2)) / d[None, None, :]
        return float(max(q1.max(), q2.max()))

    def is_ordered(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=0) >= 0))


@dataclass
class BandSummary:
    bands: list[Band]
    union: IntervalUnion
    gaps: IntervalUnion
    ceiling: float


def _cell_task(args):
    mesh, sym, field, eta, K, solver = args
    pair = assemble_cell_pair(mesh, sym, field, eta)
    return solver.solve(pair, K).eigenvalues


def sample_band_functions(geom: UnitCellGeometry, field: CoefficientField, sym: OperatorSymbol,
                          n: int, M_grid: int, K: int, solver: SolverOptions = SolverOptions(),
                          workers: int = 1) -> BandFunction:
    if M_grid < 5 or M_grid % 2 == 0:
        raise ValueError(f"band grid size must be odd and >= 5, got {M_grid}")
    if K < 1:
        raise ValueError("need at least one band")
    mesh = rasterize_cell(geom, n)
    eta = eta_grid(M_grid)
    tasks = [(mesh, sym, field, (e1, e2), K, solver) for e1 in eta for e2 in eta]
    try:
        vals = run_tasks(_cell_task, tasks, workers)
    except Exception as exc:
        raise type(exc)(f"band sampling failed: {exc}") from exc
    values = np.array(vals).reshape(M_grid, M_grid, K).transpose(2, 0, 1)
    bf = BandFunction(eta=eta, values=values,
                      provenance={"n": n, "M_grid": M_grid, "K": K, "tol": solver.tol})
    bf.provenance["continuity_modulus"] = bf.continuity_modulus()
    bf.provenance["ordered"] = bf.is_ordered()
    return bf


def _summarize(values: np.ndarray, resolution: float = 1e-9) -> BandSummary:
    """``values`` has shape ``(K, ...)``: one row of samples per band.

    Separations below ``resolution * max(1, ceiling)`` are solver noise
    (touching or crossing bands) and are closed up.
    """
    flat = values.reshape(values.shape[0], -1)
    bands = [Band(k + 1, float(row.min()), float(row.max())) for k, row in enumerate(flat)]
    union = IntervalUnion(b.interval() for b in bands)
    ceiling = float(flat[-1].min())
    eps = resolution * max(1.0, abs(ceiling))
    parts = list(union)
    tiny = [Interval(a.hi, b.lo) for a, b in zip(parts, parts[1:]) if b.lo - a.hi <= eps]
    union = union | IntervalUnion(tiny)
    bottom = float(flat[0].min())
    gaps = IntervalUnion([Interval(bottom, ceiling)]) - union if ceiling > bottom else IntervalUnion()
    return BandSummary(bands, union, gaps, ceiling)


def bands_from_samples(bf: BandFunction) -> BandSummary:
    """Bands as sample ranges; gaps are only claimed below ``min_eta Lambda_K``."""
    return _summarize(bf.values)


@dataclass
class PartialBands:
    zeta: float
    eta2: np.ndarray
    values: np.ndarray
    bands: list[Band]
    union: IntervalUnion
    ceiling: float


def partial_bands(geom: UnitCellGeometry, field: CoefficientField, sym: OperatorSymbol, n: int,
                  zeta: float, M_line: int, K: int, solver: SolverOptions = SolverOptions(),
                  mesh=None) -> PartialBands:
    """Bands of the strip operator at ``zeta``: an ``eta2`` sweep at ``eta1 = zeta``."""
    mesh = mesh if mesh is not None else rasterize_cell(geom, n)
    eta2 = eta_grid(M_line)
    values = np.array([_cell_task((mesh, sym, field, (zeta, e2), K, solver)) for e2 in eta2]).T
    s = _summarize(values)
    return PartialBands(canonical_angle(zeta), eta2, values, s.bands, s.union, s.ceiling)


# ---------------------------------------------------------------------------
# Strip problem
# ---------------------------------------------------------------------------

@dataclass
class StripSolve:
    mesh: StripMesh
    pair: AssembledPair
    result: EigenResult


def strip_spectrum(geom: UnitCellGeometry, wg: WaveguideSpec, field: CoefficientField,
                   sym: OperatorSymbol, zeta: float, T: int, n: int, K: int,
                   cap_bc: str = "dirichlet", solver: SolverOptions = SolverOptions()) -> StripSolve:
    mesh = build_strip_mesh(geom, wg, T, n, cap_bc)
    pair = assemble_strip_pair(mesh, sym, field, zeta, cap_bc)
    return StripSolve(mesh, pair, solver.solve(pair, K))


def row_profile(pair: AssembledPair, vec) -> np.ndarray:
    """L2 norm of ``vec`` on each unit cell row of the mesh, bottom to top."""
    mesh = pair.mesh
    U = pair.nodal_values(vec)
    corners = np.stack([U[:-1, :-1], U[:-1, 1:], U[1:, 1:], U[1:, :-1]], axis=2)
    Mref = (_N.T @ _N) * 0.25 / mesh.n ** 2
    e = np.einsum("yxac,ab,yxbc->yx", corners.conj(), Mref, corners).real
    e = np.where(mesh.active, e, 0.0)
    rows = e.sum(axis=1).reshape(-1, mesh.n).sum(axis=1)
    return np.sqrt(np.maximum(rows, 0.0))


@dataclass
class DecayFit:
    beta: float
    residual: float
    rows_used: int


def fit_decay_rate(profile: Sequence[float], h: int, T: int, floor: float = 1e-13) -> DecayFit:
    """Exponential decay rate of a per-row profile away from the waveguide.

    ``profile[r]`` belongs to the cell row ``[r - T, r - T + 1]``.  Rows whose
    inner edge ``|x2|`` lies in ``[h + 1, T - 2]`` are fitted with a common
    slope and one intercept per side; rows under ``floor * peak`` are dropped.
    """
    p = np.asarray(profile, dtype=float)
    if p.size != 2 * T:
        raise ValueError(f"profile has {p.size} rows, strip has {2 * T}")
    if T < h + 4:
        raise ValueError(f"decay fit needs T >= h + 4, got T={T}, h={h}")
    peak = p.max()
    xs, ys, side = [], [], []
    for r, val in enumerate(p):
        a = r - T
        inner = a if a >= 0 else -a - 1
        if h + 1 <= inner <= T - 2 and val > floor * peak and val > 0:
            xs.append(inner)
            ys.append(math.log(val))
            side.append(1 if a >= 0 else 0)
    if len(xs) < 3:
        return DecayFit(float("nan"), float("inf"), len(xs))
    xs = np.array(xs, dtype=float)
    side = np.array(side)
    cols = [xs]
    for s in (0, 1):
        if np.any(side == s):
            cols.append((side == s).astype(float))
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, np.array(ys), rcond=None)
    resid = np.array(ys) - X @ coef
    return DecayFit(float(-coef[0]), float(np.sqrt(np.mean(resid ** 2))), len(xs))


def classify_strip_eigenvalues(eigs: Sequence[float], partial: PartialBands,
                               tol_band: float) -> list[str]:
    """``in_gap`` only when farther than ``tol_band`` from every partial band.

    Values above the partial-band trust ceiling are ``above_ceiling``: an
    uncomputed band could cover them.
    """
    out = []
    for lam in eigs:
        if lam > partial.ceiling:
            out.append("above_ceiling")
        elif partial.union.distance(lam) > tol_band:
            out.append("in_gap")
        else:
            out.append("in_band")
    return out


@dataclass
class StabilityRecord:
    candidate: float
    values: dict
    spread: float
    accepted: bool


def _stability(lam: float, spectra: dict, tol_stab: float) -> StabilityRecord:
    vals = {}
    for key, eigs in spectra.items():
        eigs = np.asarray(eigs)
        vals[key] = float(eigs[np.argmin(np.abs(eigs - lam))])
    arr = np.array(list(vals.values()))
    spread = float((arr.max() - arr.min()) / max(abs(lam), 1e-300))
    return StabilityRecord(lam, vals, spread, spread < tol_stab)


def truncation_stability(geom: UnitCellGeometry, wg: WaveguideSpec, field: CoefficientField,
                         sym: OperatorSymbol, zeta: float, lam: float, T_list: Sequence[int],
                         n: int, K: int, cap_bcs: Sequence[str] = ("dirichlet", "neumann"),
                         tol_stab: float = 1e-3, solver: SolverOptions = SolverOptions()) -> StabilityRecord:
    """Relative spread of the eigenvalue nearest ``lam`` over all (T, cap) pairs."""
    if len(T_list) < 2:
        raise ValueError("truncation study needs at least two strip heights")
    spectra = {}
    for T, cap in itertools.product(T_list, cap_bcs):
        spectra[f"T{T}-{cap}"] = strip_spectrum(geom, wg, field, sym, zeta, T, n, K, cap,
                                                solver).result.eigenvalues
    return _stability(lam, spectra, tol_stab)


# ---------------------------------------------------------------------------
# Dispersion sweep
# ---------------------------------------------------------------------------

@dataclass
class TrappedMode:
    zeta: float
    lam: float
    beta_fit: float
    fit_residual: float
    stability: StabilityRecord
    profile: list
    certified: bool
    reasons: list = field(default_factory=list)
    multiplicity: int = 1  # certified modes sharing (zeta, lambda) up to solver resolution

    def to_json(self) -> dict:
        return {
            "zeta": self.zeta, "lambda": self.lam, "beta_fit": self.beta_fit,
            "fit_residual": self.fit_residual, "certified": self.certified,
            "multiplicity": self.multiplicity,
            "stability": {"values": self.stability.values, "spread": self.stability.spread},
            "profile": self.profile, "reasons": self.reasons,
        }


@dataclass
class DispersionSegment:
    branch_id: int
    zetas: list
    lambdas: list
    classes: list
    certified: list
    endpoints: tuple = ("interior", "interior")

    def certified_runs(self):
        """Lambda ranges of maximal runs of consecutive certified samples."""
        runs = []
        for ok, grp in itertools.groupby(zip(self.certified, self.lambdas), key=lambda t: t[0]):
            if ok:
                lams = [lam for _, lam in grp]
                runs.append((min(lams), max(lams)))
        return runs

    @property
    def in_gap(self) -> bool:
        return any(c == "in_gap" for c in self.classes)

    def to_json(self) -> dict:
        return {"branch": self.branch_id, "zeta": self.zetas, "lambda": self.lambdas,
                "class": self.classes, "certified": self.certified,
                "endpoints": list(self.endpoints)}


@dataclass
class DispersionResult:
    zetas: np.ndarray
    segments: list
    trapped_modes: list
    unstable: list
    partial: list
    ceiling: float
    splits: int
    provenance: dict


@dataclass(frozen=True)
class SweepTolerances:
    tol_band: float = 1e-2
    tol_stab: float = 1e-3
    beta_min: float = 0.05
    fit_residual_max: float = 0.5
    overlap_ambiguity: float = 0.01
    overlap_min: float = 0.5


def _strip_task(args):
    geom, wg, field, sym, zeta, T, n, K, cap, solver, keep_vectors = args
    s = strip_spectrum(geom, wg, field, sym, zeta, T, n, K, cap, solver)
    out = {"eigenvalues": s.result.eigenvalues}
    if keep_vectors:
        out["vectors"] = s.result.eigenvectors
        out["profiles"] = [row_profile(s.pair, s.result.eigenvectors[:, k])
                           for k in range(len(s.result))]
    return out


def _partial_task(args):
    geom, field, sym, n, zeta, M_line, K, solver = args
    return partial_bands(geom, field, sym, n, zeta, M_line, K, solver)


def _match_branches(vectors, eigs, M0, tol: SweepTolerances):
    """Follow eigenpairs across consecutive zeta samples.

    Returns ``(branches, splits)``; a branch is a list of ``(zeta index,
    eigen index)``.  A link needs a dominant M-overlap; near-ties end the
    branch instead of guessing.
    """
    branches = [[(0, k)] for k in range(len(eigs[0]))]
    open_ = {k: b for k, b in enumerate(branches)}
    splits = 0
    for i in range(len(eigs) - 1):
        A, B = vectors[i], vectors[i + 1]
        O = np.abs(A.conj().T @ (M0 @ B))
        spread = np.ptp(np.concatenate([eigs[i], eigs[i + 1]])) or 1.0
        # value proximity first: overlaps only count among close eigenvalues
        near = np.abs(eigs[i][:, None] - eigs[i + 1][None, :]) <= 0.5 * spread
        O = np.where(near, O, 0.0)
        nxt = {}
        taken = set()
        for a in np.argsort(-O.max(axis=1), kind="stable"):
            if a not in open_:
                continue
            row = O[a].copy()
            row[list(taken)] = 0.0
            order = np.argsort(-row, kind="stable")
            best = row[order[0]]
            second = row[order[1]] if len(order) > 1 else 0.0
            if best < tol.overlap_min or second >= (1 - tol.overlap_ambiguity) * best:
                splits += 1
                continue
            b = int(order[0])
            taken.add(b)
            open_[a].append((i + 1, b))
            nxt[b] = open_[a]
        for b in range(len(eigs[i + 1])):
            if b not in nxt:
                br = [(i + 1, b)]
                branches.append(br)
                nxt[b] = br
        open_ = nxt
    return branches, splits


def sweep_dispersion(geom: UnitCellGeometry, wg: WaveguideSpec, field: CoefficientField,
                     sym: OperatorSymbol, n_zeta: int, T_list: Sequence[int], n: int, K: int,
                     cap_bcs: Sequence[str] = ("dirichlet", "neumann"), M_line: int = 9,
                     K_cell: int = 4, tol: SweepTolerances = SweepTolerances(),
                     solver: SolverOptions = SolverOptions(), workers: int = 1) -> DispersionResult:
    """Strip spectra over a uniform zeta grid, branches, and certified guided modes."""
    if n_zeta < 9:
        raise ValueError(f"zeta grid needs at least 9 points, got {n_zeta}")
    if len(T_list) < 2:
        raise ValueError("truncation study needs at least two strip heights")
    T_list = sorted(int(t) for t in T_list)
    T_main = T_list[-1]
    if T_main < wg.half_width_h + 4:
        raise GeometryError("largest strip height must be at least h + 4 for the decay fit")
    zetas = eta_grid(n_zeta)
    combos = list(itertools.product(T_list, cap_bcs))
    main = (T_main, cap_bcs[0])

    tasks = [(geom, field, sym, n, z, M_line, K_cell, solver) for z in zetas]
    partial = run_tasks(_partial_task, tasks, workers)
    stasks = [(geom, wg, field, sym, z, T, n, K, cap, solver, (T, cap) == main)
              for z in zetas for T, cap in combos]
    sres = run_tasks(_strip_task, stasks, workers)
    by = {}
    for (z_i, combo), res in zip(itertools.product(range(n_zeta), combos), sres):
        by[z_i, combo] = res
    ceiling = min(p.ceiling for p in partial)

    main_eigs = [by[i, main]["eigenvalues"] for i in range(n_zeta)]
    main_vecs = [by[i, main]["vectors"] for i in range(n_zeta)]
    mesh0 = build_strip_mesh(geom, wg, T_main, n, main[1])
    M0 = assemble_strip_pair(mesh0, sym, field, 0.0, main[1]).M
    classes = [classify_strip_eigenvalues(main_eigs[i], partial[i], tol.tol_band)
               for i in range(n_zeta)]

    trapped = {}
    modes, unstable = [], []
    for i in range(n_zeta):
        for k, cls in enumerate(classes[i]):
            if cls != "in_gap":
                continue
            lam = float(main_eigs[i][k])
            prof = by[i, main]["profiles"][k]
            fit = fit_decay_rate(prof, wg.half_width_h, T_main)
            stab = _stability(lam, {f"T{T}-{c}": by[i, (T, c)]["eigenvalues"] for T, c in combos},
                              tol.tol_stab)
            reasons = []
            if not fit.beta > tol.beta_min:
                reasons.append("no decay")
            if not fit.residual <= tol.fit_residual_max:
                reasons.append("poor exponential fit")
            if not stab.accepted:
                reasons.append("truncation unstable")
            peak = prof.max()
            mode = TrappedMode(float(zetas[i]), lam, fit.beta, fit.residual, stab,
                               [float(x / peak) for x in prof], not reasons, reasons)
            trapped[i, k] = mode
            (modes if mode.certified else unstable).append(mode)

    for m in modes:
        m.multiplicity = sum(1 for o in modes if o.zeta == m.zeta
                             and abs(o.lam - m.lam) <= 1e-9 * max(1.0, abs(m.lam)))

    branches, splits = _match_branches(main_vecs, main_eigs, M0, tol)
    segments = []
    for b_id, br in enumerate(branches):
        zs = [float(zetas[i]) for i, _ in br]
        ls = [float(main_eigs[i][k]) for i, k in br]
        cl = [classes[i][k] for i, k in br]
        ok = [bool((i, k) in trapped and trapped[i, k].certified) for i, k in br]
        ends = []
        for i, k in (br[0], br[-1]):
            lam = main_eigs[i][k]
            edge = min((min(abs(lam - b.lo), abs(lam - b.hi)) for b in partial[i].bands),
                       default=math.inf)
            if br[0][0] == 0 and br[-1][0] == n_zeta - 1:
                ends.append("periodic")
            elif edge <= 2 * tol.tol_band:
                ends.append("band_edge")
            else:
                ends.append("interior")
        segments.append(DispersionSegment(b_id, zs, ls, cl, ok, tuple(ends)))

    prov = {"n": n, "n_zeta": n_zeta, "T": T_list, "cap_bc": list(cap_bcs), "K": K,
            "M_line": M_line, "K_cell": K_cell, "tol_band": tol.tol_band,
            "tol_stab": tol.tol_stab, "beta_min": tol.beta_min, "eig_tol": solver.tol}
    return DispersionResult(zetas, segments, modes, unstable, partial, ceiling, splits, prov)


# ---------------------------------------------------------------------------
# Set algebra of the main result
# ---------------------------------------------------------------------------

def sigma_sharp(segments: Sequence[DispersionSegment]) -> IntervalUnion:
    """Union of the certified parts of all dispersion curves."""
    return IntervalUnion(Interval(lo, hi) for seg in segments for lo, hi in seg.certified_runs())


class ReportError(AssertionError):
    pass


@dataclass
class SpectrumReport:
    bands: list
    sigma_es0: IntervalUnion
    gaps: IntervalUnion
    sigma_sharp: IntervalUnion
    sigma_es: IntervalUnion
    sigma_ad: IntervalUnion
    trust_ceiling: float
    flags: list = field(default_factory=list)
    trapped_modes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def verify(self) -> None:
        """Re-check the union formula and the disjointness of the additional part."""
        if self.sigma_es != self.sigma_es0 | self.sigma_sharp:
            raise ReportError("sigma_es differs from sigma_es0 U sigma_sharp")
        if self.sigma_ad != self.sigma_sharp - self.sigma_es0:
            raise ReportError("sigma_ad differs from sigma_sharp minus sigma_es0")
        if not self.sigma_ad.isdisjoint(self.sigma_es0):
            raise ReportError("sigma_ad meets sigma_es0")

    def to_json(self) -> dict:
        return {
            "bands": [{"k": b.index, "lo": b.lo, "hi": b.hi} for b in self.bands],
            "gaps": self.gaps.to_json(),
            "sigma_es0": self.sigma_es0.to_json(),
            "sigma_sharp": self.sigma_sharp.to_json(),
            "sigma_es": self.sigma_es.to_json(),
            "sigma_ad": self.sigma_ad.to_json(),
            "trust_ceiling": self.trust_ceiling,
            "flags": list(self.flags),
            "trapped_modes": [m.to_json() for m in self.trapped_modes],
            "provenance": self.provenance,
        }


def essential_spectrum_union(sigma0: IntervalUnion, sharp: IntervalUnion, *,
                             ceiling0: Optional[float] = None, ceiling_sharp: Optional[float] = None,
                             bands: Sequence[Band] = (), trapped_modes: Sequence = (),
                             provenance: Optional[dict] = None) -> SpectrumReport:
    flags = []
    c0 = math.inf if ceiling0 is None else ceiling0
    cs = math.inf if ceiling_sharp is None else ceiling_sharp
    ceiling = min(c0, cs)
    if ceiling0 is not None and ceiling_sharp is not None and ceiling0 != ceiling_sharp:
        flags.append(f"trust ceilings differ ({ceiling0:.12g} vs {ceiling_sharp:.12g}); "
                     f"clipped to {ceiling:.12g}")
    if math.isfinite(ceiling):
        sharp = sharp & IntervalUnion([Interval(-math.inf, ceiling, False, True)])
        gaps = IntervalUnion([Interval(0.0, ceiling)]) - sigma0 if ceiling > 0 else IntervalUnion()
    else:
        gaps = IntervalUnion()
    report = SpectrumReport(
        bands=list(bands), sigma_es0=sigma0, gaps=gaps, sigma_sharp=sharp,
        sigma_es=sigma0 | sharp, sigma_ad=sharp - sigma0,
        trust_ceiling=ceiling if math.isfinite(ceiling) else None, flags=flags,
        trapped_modes=list(trapped_modes), provenance=dict(provenance or {}))
    report.verify()
    return report

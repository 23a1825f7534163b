"""Command line interface: ``periwave validate|bands|dispersion|spectrum|weyl``.

Each command turns a JSON config into a product (a plain JSON-able dict),
looks it up in or stores it into the content-addressed cache, and renders
the output files from the product alone.  Floats are rounded to twelve
significant digits before any set algebra so emitted sets verify exactly
after a JSON round trip and reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import svg
from .assembly import BlochMomentum, assemble_cell_pair, assemble_plane_pair
from .config import (ConfigError, RunConfig, check_config, load_config, product_key, round_sig,
                     to_field, to_geometry, to_solver, to_sweep_tolerances, to_waveguide,
                     unperturbed_waveguide)
from .eigensolve import EigenSolveError, lowest_eigenpairs
from .geometry import GeometryError, build_truncated_plane_mesh, rasterize_cell
from .intervals import Interval, IntervalUnion
from .operator import ConfigurationError, symbol_by_kind
from .spectra import (Band, ReportError, _summarize, classify_strip_eigenvalues,
                      essential_spectrum_union, fit_decay_rate, partial_bands, row_profile,
                      sample_band_functions, sigma_sharp, strip_spectrum, sweep_dispersion)
from .weyl import (build_bloch_weyl_element, build_floquet_weyl_element, plane_extent_for,
                   run_harness)

log = logging.getLogger("periwave")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_SLOPE = 4

CACHE_ENV = "PERIWAVE_CACHE_DIR"


class SolverFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

class Cache:
    """Products stored as JSON under ``root/<key[:2]>/<key>.json``."""

    def __init__(self, root=None, enabled: bool = True):
        if root is None:
            root = os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "periwave"
        self.root = Path(root)
        self.enabled = enabled
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str):
        if not self.enabled:
            return None
        p = self._path(key)
        if p.is_file():
            self.hits += 1
            return json.loads(p.read_text(encoding="utf-8"))
        self.misses += 1
        return None

    def put(self, key: str, product: dict) -> None:
        if not self.enabled:
            return
        p = self._path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(_dumps(product), encoding="utf-8")
        tmp.replace(p)

    def fetch(self, key: str, compute):
        product = self.get(key)
        if product is None:
            # normalize through JSON so fresh and cached products are identical
            product = json.loads(_dumps(compute()))
            self.put(key, product)
        return product


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Products
# ---------------------------------------------------------------------------

def compute_bands(cfg: RunConfig, workers: int = 1) -> dict:
    d = cfg.discretization
    bf = sample_band_functions(to_geometry(cfg), to_field(cfg), symbol_by_kind(cfg.operator.kind),
                               d.n, d.M_grid, d.K, to_solver(cfg), workers)
    values = np.array(round_sig(bf.values.tolist()))
    s = _summarize(values)
    return {
        "eta": round_sig(bf.eta.tolist()),
        "values": values.tolist(),
        "bands": [{"k": b.index, "lo": b.lo, "hi": b.hi} for b in s.bands],
        "sigma_es0": s.union.to_json(),
        "gaps": s.gaps.to_json(),
        "trust_ceiling": s.ceiling,
        "continuity_modulus": round_sig(bf.continuity_modulus()),
        "ordered": bf.is_ordered(),
        "provenance": {"n": d.n, "M_grid": d.M_grid, "K": d.K, "eig_tol": cfg.tolerances.eig_tol,
                       "seed": cfg.seed, "hole_bc": cfg.operator.hole_bc, "kind": cfg.operator.kind},
    }


def compute_dispersion(cfg: RunConfig, workers: int = 1) -> dict:
    d = cfg.discretization
    wg = to_waveguide(cfg)
    res = sweep_dispersion(to_geometry(cfg), wg, to_field(cfg), symbol_by_kind(cfg.operator.kind),
                           d.n_zeta, d.T, d.n, d.K_strip, tuple(d.cap_bc), d.M_line, d.K_cell,
                           to_sweep_tolerances(cfg), to_solver(cfg), workers)
    for seg in res.segments:
        seg.zetas = round_sig(seg.zetas)
        seg.lambdas = round_sig(seg.lambdas)
    sharp = sigma_sharp(res.segments)

    def mode_json(m):
        out = m.to_json()
        out["zeta"], out["lambda"] = round_sig(m.zeta), round_sig(m.lam)
        out["beta_fit"], out["fit_residual"] = round_sig(m.beta_fit), round_sig(m.fit_residual)
        out["stability"] = {"values": {k: round_sig(v) for k, v in m.stability.values.items()},
                            "spread": round_sig(m.stability.spread)}
        out["profile"] = round_sig(m.profile)
        return out

    partial = []
    for p in res.partial:
        vals = np.array(round_sig(p.values.tolist()))
        s = _summarize(vals)
        partial.append({"zeta": round_sig(p.zeta),
                        "bands": [{"k": b.index, "lo": b.lo, "hi": b.hi} for b in s.bands],
                        "union": s.union.to_json(), "ceiling": s.ceiling})
    return {
        "zeta": round_sig(res.zetas.tolist()),
        "segments": [seg.to_json() for seg in res.segments],
        "trapped_modes": [mode_json(m) for m in res.trapped_modes],
        "unstable_candidates": [mode_json(m) for m in res.unstable],
        "partial_bands": partial,
        "trust_ceiling": min(p["ceiling"] for p in partial),
        "sigma_sharp": sharp.to_json(),
        "branch_splits": res.splits,
        "provenance": res.provenance,
    }


def compute_spectrum(bands: dict, disp) -> dict:
    sigma0 = IntervalUnion.from_json(bands["sigma_es0"])
    if disp is None:
        sharp, c_sharp, modes, unstable = IntervalUnion(), None, [], []
    else:
        sharp = IntervalUnion.from_json(disp["sigma_sharp"])
        c_sharp, modes, unstable = disp["trust_ceiling"], disp["trapped_modes"], disp["unstable_candidates"]
    report = essential_spectrum_union(
        sigma0, sharp, ceiling0=bands["trust_ceiling"], ceiling_sharp=c_sharp,
        bands=[Band(b["k"], b["lo"], b["hi"]) for b in bands["bands"]],
        provenance={"bands": bands["provenance"],
                    "dispersion": None if disp is None else disp["provenance"]})
    out = report.to_json()
    out["trapped_modes"] = modes
    out["unstable_candidates"] = unstable
    if disp is None:
        out["flags"].append("no waveguide declared; sigma_sharp is empty")
    return out


def verify_spectrum_json(out: dict) -> None:
    """Re-check the union formula on the serialized sets."""
    s0 = IntervalUnion.from_json(out["sigma_es0"])
    sh = IntervalUnion.from_json(out["sigma_sharp"])
    es = IntervalUnion.from_json(out["sigma_es"])
    ad = IntervalUnion.from_json(out["sigma_ad"])
    if es != s0 | sh:
        raise ReportError("emitted sigma_es is not sigma_es0 U sigma_sharp")
    if ad != sh - s0 or not ad.isdisjoint(s0):
        raise ReportError("emitted sigma_ad is not sigma_sharp minus sigma_es0")


def _weyl_plane(cfg: RunConfig, geom, wg, field, sym):
    w = cfg.weyl
    wg_plane = wg if wg is not None else unperturbed_waveguide(geom, 1)
    mesh = build_truncated_plane_mesh(geom, wg_plane, plane_extent_for(w.j_max), w.n)
    return assemble_plane_pair(mesh, sym, field)


def compute_weyl(cfg: RunConfig, target: str) -> dict:
    w = cfg.weyl
    geom, wg, field = to_geometry(cfg), to_waveguide(cfg), to_field(cfg)
    sym = symbol_by_kind(cfg.operator.kind)
    solver = to_solver(cfg)
    js = list(range(w.j_min, w.j_max + 1))
    if target == "band-point":
        bp = w.band_point
        if bp is None:
            raise ConfigurationError("weyl.band_point is required for --target band-point")
        eta = (math.pi * bp.eta_pi[0], math.pi * bp.eta_pi[1])
        cell = assemble_cell_pair(rasterize_cell(geom, w.n), sym, field, BlochMomentum(*eta))
        res = lowest_eigenpairs(cell, bp.band, solver.tol, dense_max=solver.dense_max, seed=solver.seed)
        lam0 = float(res.eigenvalues[bp.band - 1])
        vec = res.eigenvectors[:, bp.band - 1]
        plane = _weyl_plane(cfg, geom, wg, field, sym)

        def build(j):
            return build_bloch_weyl_element(plane, cell, vec, eta, j, w.d)
        kind, detune, where = "bloch", bp.detune, {"eta": [eta[0], eta[1]], "band": bp.band}
    elif target == "trapped-point":
        tp = w.trapped_point
        if tp is None:
            raise ConfigurationError("weyl.trapped_point is required for --target trapped-point")
        if wg is None:
            raise ConfigurationError("trapped-point target needs a waveguide")
        zeta = math.pi * tp.zeta_pi
        T = tp.T if tp.T is not None else max(cfg.discretization.T)
        d = cfg.discretization
        st = strip_spectrum(geom, wg, field, sym, zeta, T, w.n, d.K_strip, "dirichlet", solver)
        pb = partial_bands(geom, field, sym, w.n, zeta, d.M_line, d.K_cell, solver)
        cls = classify_strip_eigenvalues(st.result.eigenvalues, pb, cfg.tolerances.tol_band)
        gap_idx = [k for k, c in enumerate(cls) if c == "in_gap"]
        if tp.mode >= len(gap_idx):
            raise SolverFailure(f"only {len(gap_idx)} in-gap strip eigenvalues at zeta={zeta:.6g}; "
                                f"mode {tp.mode} unavailable")
        k = gap_idx[tp.mode]
        vec = st.result.eigenvectors[:, k]
        fit = fit_decay_rate(row_profile(st.pair, vec), wg.half_width_h, T)
        if not fit.beta > 0:
            raise SolverFailure(f"strip eigenvalue {st.result.eigenvalues[k]:.6g} shows no decay")
        lam0 = float(st.result.eigenvalues[k])
        plane = _weyl_plane(cfg, geom, wg, field, sym)

        def build(j):
            return build_floquet_weyl_element(plane, st.pair, vec, zeta, j, w.d, wg.transition_R)
        kind, detune = "floquet", tp.detune
        where = {"zeta": zeta, "mode": tp.mode, "T": T, "beta_fit": round_sig(fit.beta)}
    else:
        raise ValueError(f"unknown target {target!r}")

    main = run_harness(plane, build, lam0 + detune, js, kind)
    out = {"target": target, "kind": kind, "where": where, "lambda_eigen": round_sig(lam0),
           "slope_window": list(w.slope_window), "d": w.d, "n": w.n,
           "plane_half_extent": plane.mesh.L, "run": _run_json(main)}
    if kind == "bloch":
        control = run_harness(plane, build, lam0 + detune + 1.0, js, kind)
        out["detuned_control"] = _run_json(control)
    lo, hi = w.slope_window
    out["slope_in_window"] = bool(lo <= out["run"]["slope"] <= hi)
    return out


def _run_json(run) -> dict:
    d = run.to_json()
    for r in d["records"]:
        for key in ("norm_sq", "residual", "vertical_frames", "horizontal_frames", "off_frame_max"):
            r[key] = round_sig(r[key])
        r["box"] = [list(b) for b in r["box"]]
    for key in ("lambda", "slope", "norm_slope"):
        d[key] = round_sig(d[key])
    d["slope_ci"] = round_sig(d["slope_ci"])
    d["norm_slope_ci"] = round_sig(d["norm_slope_ci"])
    return d


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _csv(rows, header) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _path_indices(M: int):
    """Gamma-X-M-Gamma through the closed grid of odd size ``M``."""
    c = (M - 1) // 2
    path = [(i, 0) for i in range(c + 1)]
    path += [(c, i) for i in range(1, c + 1)]
    path += [(i, i) for i in range(c - 1, -1, -1)]
    return path, [(0, "G"), (c, "X"), (2 * c, "M"), (3 * c, "G")]


def render_bands(p: dict) -> dict:
    eta = p["eta"]
    vals = p["values"]
    rows = [(k + 1, i, j, eta[i], eta[j], vals[k][i][j])
            for k in range(len(vals)) for i in range(len(eta)) for j in range(len(eta))]
    path, ticks = _path_indices(len(eta))
    series = [svg.Series([(t, vals[k][i][j]) for t, (i, j) in enumerate(path)],
                         color=svg.PALETTE[k % len(svg.PALETTE)], markers=True)
              for k in range(len(vals))]
    plot = svg.Plot("Band functions along G-X-M-G", "quasi-momentum path", "lambda", series,
                    bands=[(b["lo"], b["hi"]) for b in p["bands"]], xticks=ticks)
    return {"bands.json": _dumps(p), "bands.csv": _csv(rows, ["k", "i1", "i2", "eta1", "eta2", "lambda"]),
            "bands.svg": svg.render(plot)}


def render_dispersion(p: dict) -> dict:
    rows = [(s["branch"], z, lam, c, int(ok))
            for s in p["segments"] for z, lam, c, ok in zip(s["zeta"], s["lambda"], s["class"], s["certified"])]
    # partial bands as grey vertical bars, drawn first
    series = [svg.Series([(pb["zeta"], b["lo"]), (pb["zeta"], b["hi"])], color="#cccccc", width=4.0)
              for pb in p["partial_bands"] for b in pb["bands"]]
    for s in p["segments"]:
        pts = list(zip(s["zeta"], s["lambda"]))
        series.append(svg.Series(pts, color="#7f7f7f", width=1.0))
        for ok_run in _runs(s):
            series.append(svg.Series(ok_run, color="#d62728", width=2.0, markers=True))
    plot = svg.Plot("Strip dispersion (certified guided modes in red)", "zeta", "lambda", series,
                    xticks=[(0.0, "0"), (math.pi, "pi"), (2 * math.pi, "2pi")])
    return {"dispersion.json": _dumps(p),
            "dispersion.csv": _csv(rows, ["branch", "zeta", "lambda", "class", "certified"]),
            "dispersion.svg": svg.render(plot)}


def _runs(seg):
    out, cur = [], []
    for z, lam, ok in zip(seg["zeta"], seg["lambda"], seg["certified"]):
        if ok:
            cur.append((z, lam))
        elif cur:
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out


def render_spectrum(p: dict) -> dict:
    return {"spectrum.json": _dumps(p)}


def render_weyl(p: dict) -> dict:
    rows = []
    for name in ("run", "detuned_control"):
        run = p.get(name)
        if run is None:
            continue
        for r in run["records"]:
            rows.append((name, r["j"], r["norm_sq"], r["residual"], r["vertical_frames"],
                         r["horizontal_frames"], r["off_frame_max"]))
    return {"weyl.json": _dumps(p),
            "weyl.csv": _csv(rows, ["run", "j", "norm_sq", "residual", "vertical_frames",
                                    "horizontal_frames", "off_frame_max"])}


def _write(out_dir: Path, files: dict, formats) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        if name.rsplit(".", 1)[-1] not in formats:
            continue
        (out_dir / name).write_text(text, encoding="utf-8")
        written.append(name)
    return written


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load(path, command):
    cfg = load_config(path)
    problems = check_config(cfg, command)
    return cfg, problems


def cmd_validate(args) -> int:
    cfg, problems = _load(args.config, "validate")
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


def _bands_product(cfg, cache, workers):
    return cache.fetch(product_key(cfg, "bands"), lambda: compute_bands(cfg, workers))


def _dispersion_product(cfg, cache, workers):
    return cache.fetch(product_key(cfg, "dispersion"), lambda: compute_dispersion(cfg, workers))


def cmd_bands(args, cfg, cache) -> int:
    p = _bands_product(cfg, cache, args.workers)
    _write(Path(args.out), render_bands(p), cfg.outputs.formats)
    print(f"bands: {len(p['bands'])} computed, gaps {IntervalUnion.from_json(p['gaps'])!r}")
    return EXIT_OK


def cmd_dispersion(args, cfg, cache) -> int:
    p = _dispersion_product(cfg, cache, args.workers)
    _write(Path(args.out), render_dispersion(p), cfg.outputs.formats)
    print(f"dispersion: {len(p['trapped_modes'])} certified guided samples, "
          f"{len(p['unstable_candidates'])} rejected candidates, "
          f"sigma_sharp {IntervalUnion.from_json(p['sigma_sharp'])!r}")
    return EXIT_OK


def cmd_spectrum(args, cfg, cache) -> int:
    bands = _bands_product(cfg, cache, args.workers)
    disp = _dispersion_product(cfg, cache, args.workers) if cfg.geometry.waveguide is not None else None
    out = compute_spectrum(bands, disp)
    verify_spectrum_json(json.loads(_dumps(out)))
    files = render_bands(bands)
    if disp is not None:
        files.update(render_dispersion(disp))
    files.update(render_spectrum(out))
    _write(Path(args.out), files, cfg.outputs.formats)
    for flag in out["flags"]:
        print(f"flag: {flag}")
    print(f"sigma_es {IntervalUnion.from_json(out['sigma_es'])!r}")
    print(f"sigma_ad {IntervalUnion.from_json(out['sigma_ad'])!r}")
    return EXIT_OK


def cmd_weyl(args, cfg, cache) -> int:
    p = cache.fetch(product_key(cfg, f"weyl-{args.target}"), lambda: compute_weyl(cfg, args.target))
    _write(Path(args.out), render_weyl(p), cfg.outputs.formats)
    run = p["run"]
    lo, hi = p["slope_window"]
    print(f"weyl {p['kind']}: slope {run['slope']:.4f} CI [{run['slope_ci'][0]:.4f}, "
          f"{run['slope_ci'][1]:.4f}], norm slope {run['norm_slope']:.4f}")
    if "detuned_control" in p:
        print(f"detuned control slope {p['detuned_control']['slope']:.4f}")
    for note in run["notes"]:
        print(f"note: {note}")
    if not p["slope_in_window"]:
        print(f"slope outside window [{lo}, {hi}]", file=sys.stderr)
        return EXIT_SLOPE
    return EXIT_OK


COMMANDS = {"bands": cmd_bands, "dispersion": cmd_dispersion, "spectrum": cmd_spectrum,
            "weyl": cmd_weyl}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="periwave",
                                     description="Band gaps and guided modes of periodic media with an open waveguide.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("validate", "bands", "dispersion", "spectrum", "weyl"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")
        p.add_argument("--no-cache", action="store_true", help="recompute, do not read or write the cache")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "weyl":
            p.add_argument("--target", choices=("band-point", "trapped-point"), default="band-point")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args)
        cfg, problems = _load(args.config, args.command)
    except ConfigError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.workers < 1:
        print("invalid: --workers must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    cache = Cache(enabled=not args.no_cache)
    try:
        return COMMANDS[args.command](args, cfg, cache)
    except (GeometryError, ConfigurationError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EigenSolveError, SolverFailure, ReportError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

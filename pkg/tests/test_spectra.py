import math

import numpy as np
import pytest

from periwave.config import unperturbed_waveguide
from periwave.eigensolve import SolverOptions
from periwave.geometry import Disk, UnitCellGeometry, WaveguideSpec
from periwave.intervals import Interval, IntervalUnion
from periwave.operator import CoefficientField, Override, scalar_symbol
from periwave.spectra import (BandFunction, DispersionSegment, PartialBands, ReportError,
                              bands_from_samples, classify_strip_eigenvalues,
                              essential_spectrum_union, eta_grid, fit_decay_rate, partial_bands,
                              row_profile, sample_band_functions, sigma_sharp, strip_spectrum,
                              sweep_dispersion, truncation_stability)

TWO_PI_SQ = 2 * np.pi ** 2


@pytest.fixture(scope="module")
def filled_row_sweep():
    geom = UnitCellGeometry((Disk((0.5, 0.5), 0.3),))
    field = CoefficientField(np.eye(2), 1.0, hole_bc="dirichlet")
    return sweep_dispersion(geom, WaveguideSpec(1), field, scalar_symbol(), 17, [6, 10], 16, 8)


def test_eta_grid_contains_pi():
    g = eta_grid(9)
    assert g[4] == np.pi and g[0] == 0 and g[-1] == 2 * np.pi


def test_free_band_one(free):
    bf = sample_band_functions(*free, 16, 9, 1)
    assert abs(bf.values[0, 0, 0]) < 1e-10
    assert bf.values[0, 4, 4] == pytest.approx(TWO_PI_SQ, rel=2e-2)
    s = bands_from_samples(bf)
    assert s.bands[0].lo == pytest.approx(0, abs=1e-10)
    assert s.bands[0].hi == pytest.approx(TWO_PI_SQ, rel=2e-2)


def test_free_bands_have_no_gap(free):
    s = bands_from_samples(sample_band_functions(*free, 8, 5, 5))
    assert not s.gaps


def test_conjugation_symmetry_of_bands():
    geom = UnitCellGeometry((Disk((0.4, 0.55), 0.25),))
    field = CoefficientField(np.array([[1.0, 0.4], [0.4, 2.0]]), 1.0,
                             overrides=(Override(Disk((0.4, 0.55), 0.1), rho=3.0),))
    bf = sample_band_functions(geom, field, scalar_symbol(), 8, 9, 4)
    flipped = bf.values[:, ::-1, ::-1]
    assert np.allclose(bf.values, flipped, rtol=1e-8, atol=1e-8)
    assert bf.is_ordered() and bf.provenance["ordered"]
    assert np.isfinite(bf.continuity_modulus())


def test_dirichlet_lowest_is_positive(dirichlet_disks):
    bf = sample_band_functions(*dirichlet_disks, 8, 5, 1)
    assert bf.values[0, 0, 0] > 1.0


def test_single_sample_bands():
    bf = BandFunction(np.zeros(1), np.array([[[1.0]], [[2.5]]]))
    s = bands_from_samples(bf)
    assert [(b.lo, b.hi) for b in s.bands] == [(1.0, 1.0), (2.5, 2.5)]


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="staircase Dirichlet holes converge at first order; "
                                       "n=16 vs n=32 gap edges differ by 5-12%")
def test_dirichlet_gap_self_refinement(dirichlet_disks):
    coarse = bands_from_samples(sample_band_functions(*dirichlet_disks, 16, 9, 6))
    fine = bands_from_samples(sample_band_functions(*dirichlet_disks, 32, 17, 6))
    lo_c, hi_c = coarse.bands[0].hi, coarse.bands[1].lo
    lo_f, hi_f = fine.bands[0].hi, fine.bands[1].lo
    assert lo_c == pytest.approx(lo_f, rel=3e-2)
    assert hi_c == pytest.approx(hi_f, rel=3e-2)


def test_partial_band_free(free):
    pb = partial_bands(*free, 16, 0.0, 9, 2)
    assert pb.bands[0].lo == pytest.approx(0, abs=1e-10)
    assert pb.bands[0].hi == pytest.approx(np.pi ** 2, rel=2e-2)
    point = partial_bands(*free, 8, 0.7, 1, 1)
    assert point.bands[0].lo == point.bands[0].hi


def test_partial_bands_inside_full_bands(dirichlet_disks):
    bf = sample_band_functions(*dirichlet_disks, 8, 9, 4)
    s = bands_from_samples(bf)
    slack = bf.continuity_modulus() * (bf.eta[1] - bf.eta[0])
    for i in (0, 2, 4):
        pb = partial_bands(*dirichlet_disks, 8, bf.eta[i], 9, 4)
        for b, full in zip(pb.bands, s.bands):
            assert full.lo - slack <= b.lo and b.hi <= full.hi + slack


@pytest.mark.parametrize("zeta", [0.0, np.pi / 2, np.pi])
def test_unperturbed_strip_inside_partial_bands(dirichlet_disks, zeta):
    geom, field, sym = dirichlet_disks
    pb = partial_bands(geom, field, sym, 16, zeta, 9, 6)
    for T in (4, 8):
        ev = strip_spectrum(geom, unperturbed_waveguide(geom), field, sym, zeta, T, 16, 10).result.eigenvalues
        for lam in ev[ev <= pb.ceiling]:
            assert pb.union.distance(lam) <= 1e-8 * lam


def test_filled_row_has_gap_eigenvalue(dirichlet_disks):
    geom, field, sym = dirichlet_disks
    s = strip_spectrum(geom, WaveguideSpec(1), field, sym, 0.0, 6, 16, 6)
    pb = partial_bands(geom, field, sym, 16, 0.0, 9, 4)
    gap = Interval(pb.bands[0].hi, pb.bands[1].lo, False, False)
    assert any(gap.contains(lam) for lam in s.result.eigenvalues) or \
        any(lam < pb.bands[0].lo for lam in s.result.eigenvalues)


def _pb(intervals, ceiling=10.0):
    u = IntervalUnion.closed(intervals)
    return PartialBands(0.0, np.zeros(1), np.zeros((1, 1)), [], u, ceiling)


def test_classification_rules():
    pb = _pb([(1, 2), (4, 5)])
    assert classify_strip_eigenvalues([1.5, 3.0, 2.005, 3.995, 11.0], pb, 1e-2) == \
        ["in_band", "in_gap", "in_band", "in_band", "above_ceiling"]


def test_decay_fit_synthetic():
    T, h = 10, 1
    prof = [math.exp(-0.7 * (r - T if r >= T else T - r - 1)) for r in range(2 * T)]
    fit = fit_decay_rate(prof, h, T)
    assert fit.beta == pytest.approx(0.7, abs=1e-3)
    flat = fit_decay_rate([1.0] * (2 * T), h, T)
    assert abs(flat.beta) < 1e-12
    with pytest.raises(ValueError):
        fit_decay_rate(prof, h, 4)


def test_decay_fit_rejects_inband_state(free):
    geom, field, sym = free
    s = strip_spectrum(geom, WaveguideSpec(1), field, sym, 0.0, 8, 8, 3, "neumann")
    for k in range(2):
        fit = fit_decay_rate(row_profile(s.pair, s.result.eigenvectors[:, k]), 1, 8)
        assert not (fit.beta > 0.05 and fit.residual <= 0.5)


def test_filled_row_sweep(filled_row_sweep):
    res = filled_row_sweep
    gap_segments = [s for s in res.segments if s.in_gap and any(s.certified)]
    assert gap_segments
    for seg in gap_segments:
        steps = np.abs(np.diff(seg.lambdas))
        assert steps.max() <= 5 * max(np.median(steps), 1e-12)
    for m in res.trapped_modes:
        assert m.beta_fit > 0 and m.stability.accepted and m.certified


def test_sweep_conjugation_symmetry(filled_row_sweep):
    res = filled_row_sweep
    by_zeta = {}
    for seg in res.segments:
        for z, lam, c in zip(seg.zetas, seg.lambdas, seg.classes):
            if c == "in_gap":
                by_zeta.setdefault(round(z, 9), []).append(lam)
    for z, lams in by_zeta.items():
        mirror = round((2 * np.pi - z) % (2 * np.pi), 9) if z not in (0.0,) else round(2 * np.pi, 9)
        if mirror in by_zeta:
            assert np.allclose(sorted(lams), sorted(by_zeta[mirror]), rtol=1e-6)


def test_unperturbed_sweep_has_no_gap_segments(dirichlet_disks):
    geom, field, sym = dirichlet_disks
    res = sweep_dispersion(geom, unperturbed_waveguide(geom), field, sym, 9, [5, 6], 8, 6,
                           K_cell=6)
    assert not res.trapped_modes
    assert not sigma_sharp(res.segments)


def test_truncation_stability(dirichlet_disks, free):
    geom, field, sym = dirichlet_disks
    s = strip_spectrum(geom, WaveguideSpec(1), field, sym, 0.0, 6, 16, 2)
    lam = s.result.eigenvalues[0]
    fit = fit_decay_rate(row_profile(s.pair, s.result.eigenvectors[:, 0]), 1, 6)
    rec = truncation_stability(geom, WaveguideSpec(1), field, sym, 0.0, lam, [5, 6], 16, 4)
    assert rec.accepted
    assert rec.spread <= max(1e-10, 10 * math.exp(-2 * fit.beta * (5 - 1)))
    # a box state of the free strip moves like 1/T^2
    g, f, sy = free
    box = (np.pi / 8) ** 2
    rec = truncation_stability(g, WaveguideSpec(1), f, sy, 0.0, box, [4, 5], 8, 2)
    assert not rec.accepted
    with pytest.raises(ValueError):
        truncation_stability(g, WaveguideSpec(1), f, sy, 0.0, box, [4], 8, 2)


def _seg(lams, ok):
    return DispersionSegment(0, list(range(len(lams))), lams, ["in_gap"] * len(lams), ok)


def test_sigma_sharp_examples():
    assert not sigma_sharp([])
    assert list(sigma_sharp([_seg([1.0, 2.0, 1.5], [True] * 3)])) == [Interval(1.0, 2.0)]
    u = sigma_sharp([_seg([1.0, 2.0], [True, True]), _seg([1.5, 3.0], [True, True])])
    assert list(u) == [Interval(1.0, 3.0)]
    # uncertified samples interrupt a run
    u = sigma_sharp([_seg([1.0, 1.1, 5.0, 5.1], [True, True, False, True])])
    assert list(u) == [Interval(1.0, 1.1), Interval(5.1, 5.1)]


def test_union_formula_examples():
    s0 = IntervalUnion.closed([(0, 1), (2, 3)])
    r = essential_spectrum_union(s0, IntervalUnion.closed([(0.2, 0.5)]))
    assert r.sigma_es == s0 and not r.sigma_ad
    r = essential_spectrum_union(s0, IntervalUnion.closed([(1.4, 1.6)]))
    assert len(r.sigma_es) == 3 and list(r.sigma_ad) == [Interval(1.4, 1.6)]
    r = essential_spectrum_union(IntervalUnion.closed([(0, 1)]), IntervalUnion.closed([(0.9, 1.2)]))
    assert list(r.sigma_ad) == [Interval(1, 1.2, False, True)]
    assert r.sigma_ad.isdisjoint(r.sigma_es0)


def test_union_ceiling_mismatch_clips_and_flags():
    r = essential_spectrum_union(IntervalUnion.closed([(0, 1)]), IntervalUnion.closed([(1.5, 3)]),
                                 ceiling0=2.0, ceiling_sharp=5.0)
    assert r.flags and r.trust_ceiling == 2.0
    assert list(r.sigma_sharp) == [Interval(1.5, 2.0)]
    r.verify()


def test_report_verify_catches_tampering():
    r = essential_spectrum_union(IntervalUnion.closed([(0, 1)]), IntervalUnion.closed([(2, 3)]))
    r.sigma_es = IntervalUnion.closed([(0, 1)])
    with pytest.raises(ReportError):
        r.verify()


def test_trapped_mode_multiplicity(filled_row_sweep):
    for m in filled_row_sweep.trapped_modes:
        assert m.multiplicity >= 1
        assert m.to_json()["multiplicity"] == m.multiplicity

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from periwave.assembly import BlochMomentum, assemble_cell_pair, assemble_plane_pair
from periwave.eigensolve import lowest_eigenpairs
from periwave.geometry import (Disk, GeometryError, UnitCellGeometry, WaveguideSpec,
                               build_truncated_plane_mesh, rasterize_cell)
from periwave.operator import CoefficientField, scalar_symbol
from periwave.spectra import strip_spectrum
from periwave.weyl import (PlateauSpec, WeylRecord, build_bloch_weyl_element,
                           build_floquet_weyl_element, gradient_energy, plane_extent_for,
                           residual_decay, run_harness, smoothstep, supports_disjoint, weyl_record)

JS = [2, 3, 4]


@pytest.fixture(scope="module")
def free_plane():
    g, f, sym = UnitCellGeometry(()), CoefficientField(np.eye(2), 1.0), scalar_symbol()
    plane = assemble_plane_pair(build_truncated_plane_mesh(g, WaveguideSpec(1), plane_extent_for(4), 4), sym, f)
    eta = (np.pi, np.pi)
    cell = assemble_cell_pair(rasterize_cell(g, 4), sym, f, BlochMomentum(*eta))
    res = lowest_eigenpairs(cell, 1, method="dense")
    return plane, cell, res.eigenvectors[:, 0], eta, float(res.eigenvalues[0])


@pytest.fixture(scope="module")
def guided():
    g = UnitCellGeometry((Disk((0.5, 0.5), 0.3),))
    f, sym, wg = CoefficientField(np.eye(2), 1.0, hole_bc="dirichlet"), scalar_symbol(), WaveguideSpec(1)
    plane = assemble_plane_pair(build_truncated_plane_mesh(g, wg, plane_extent_for(4), 8), sym, f)
    s = strip_spectrum(g, wg, f, sym, 0.0, 6, 8, 1)
    return plane, s.pair, s.result.eigenvectors[:, 0], float(s.result.eigenvalues[0])


@given(st.floats(-3, 3))
def test_smoothstep_range(s):
    v = smoothstep(s)
    assert 0.0 <= v <= 1.0
    assert smoothstep(s) + smoothstep(1 - s) == pytest.approx(1.0, abs=1e-12)


def test_plateau_shape():
    spec = PlateauSpec(3, 0.5)
    assert spec.bloch_window(10.0, 12.0) == 1.0
    assert spec.bloch_window(8.4, 12.0) < 1.0
    assert spec.bloch_window(7.9, 12.0) == 0.0 and spec.bloch_window(10.0, 16.1) == 0.0
    assert spec.floquet_window(10.0, -15.0) == 1.0 and spec.floquet_window(10.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        PlateauSpec(-1)
    with pytest.raises(ValueError):
        PlateauSpec(2, 0.0)


def test_gradient_energy_grows_like_side_length():
    e = [gradient_energy(PlateauSpec(j)) for j in (3, 4, 5, 6)]
    ratios = np.array(e[1:]) / np.array(e[:-1])
    assert np.allclose(ratios, 2.0, rtol=0.1)


def test_bloch_element_is_exact_off_ramps(free_plane):
    plane, cell, vec, eta, lam = free_plane
    el = build_bloch_weyl_element(plane, cell, vec, eta, 3)
    assert np.real(np.vdot(el.u, plane.M @ el.u)) == pytest.approx(1.0, rel=1e-12)
    rec = weyl_record(plane, el, lam)
    assert rec.off_frame_max < 1e-8
    assert rec.vertical_frames > 0 and rec.horizontal_frames > 0


def test_global_phase_invariance(free_plane):
    plane, cell, vec, eta, lam = free_plane
    a = weyl_record(plane, build_bloch_weyl_element(plane, cell, vec, eta, 3), lam)
    b = weyl_record(plane, build_bloch_weyl_element(plane, cell, np.exp(0.7j) * vec, eta, 3), lam)
    assert a.residual == pytest.approx(b.residual, rel=1e-10)


def test_bloch_residual_decays(free_plane):
    plane, cell, vec, eta, lam = free_plane
    run = run_harness(plane, lambda j: build_bloch_weyl_element(plane, cell, vec, eta, j), lam, JS, "bloch")
    assert supports_disjoint(run.records)
    assert run.slope < -0.3
    assert run.norm_slope == pytest.approx(2.0, abs=0.3)
    assert run.to_json()["kind"] == "bloch"


def test_box_must_fit(free_plane):
    plane, cell, vec, eta, _ = free_plane
    with pytest.raises(GeometryError):
        build_bloch_weyl_element(plane, cell, vec, eta, 5)


def test_fit_needs_three_disjoint_scales():
    recs = [WeylRecord(j, ((2.0 ** j, 2.0 ** (j + 1)), (0, 1)), 1.0, 2.0 ** -j, 0, 0, 0) for j in (2, 3)]
    with pytest.raises(ValueError):
        residual_decay(recs, 1.0, "bloch")
    with pytest.raises(ValueError):
        residual_decay(recs + [recs[0]], 1.0, "bloch")
    run = residual_decay(recs + [WeylRecord(4, ((16.0, 32.0), (0, 1)), 1.0, 2.0 ** -4, 0, 0, 0)],
                         1.0, "bloch")
    assert run.slope == pytest.approx(-1.0)


def test_floquet_element(guided):
    plane, strip, vec, lam = guided
    with pytest.raises(GeometryError):
        build_floquet_weyl_element(plane, strip, vec, 0.0, 2, transition_R=4)
    run = run_harness(plane, lambda j: build_floquet_weyl_element(plane, strip, vec, 0.0, j),
                      lam, JS, "floquet")
    assert run.norm_slope == pytest.approx(1.0, abs=0.2)
    assert run.slope < -0.3
    v = [r.vertical_frames for r in run.records]
    assert max(v) <= 2 * min(v)
    h = [r.horizontal_frames for r in run.records]
    assert max(h) < 1e-3 * min(v)

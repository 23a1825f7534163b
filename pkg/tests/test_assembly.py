import io

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from periwave.assembly import (AssemblyError, BlochMomentum, apply_operator, assemble_cell_pair,
                               assemble_plane_pair, assemble_strip_pair, canonical_angle,
                               dump_triplets, phase)
from periwave.geometry import (AxisRect, Disk, UnitCellGeometry, WaveguideSpec, build_strip_mesh,
                               build_truncated_plane_mesh, rasterize_cell)
from periwave.operator import CoefficientField, scalar_symbol

from conftest import fourier_oracle


def _dense_eigs(pair, k):
    return sla.eigh(pair.K.toarray(), pair.M.toarray(), eigvals_only=True)[:k]


def _exactly_hermitian(A):
    return (A - A.conj().T).count_nonzero() == 0


def test_free_cell_zero_row_sums(free):
    geom, field, sym = free
    pair = assemble_cell_pair(rasterize_cell(geom, 8), sym, field, BlochMomentum(0, 0))
    assert np.allclose(pair.K @ np.ones(pair.dim), 0, atol=1e-12)


def test_free_cell_corner_of_zone(free):
    geom, field, sym = free
    pair = assemble_cell_pair(rasterize_cell(geom, 16), sym, field, BlochMomentum(np.pi, np.pi))
    lam = _dense_eigs(pair, 4)
    assert np.allclose(lam, 2 * np.pi ** 2, rtol=5e-3)
    # second order in h: the n=8 error is about four times larger
    coarse = _dense_eigs(assemble_cell_pair(rasterize_cell(geom, 8), sym, field,
                                            BlochMomentum(np.pi, np.pi)), 1)[0]
    ratio = (coarse - 2 * np.pi ** 2) / (lam[0] - 2 * np.pi ** 2)
    assert 3.5 < ratio < 4.5


def test_elasticity_translation_kernel(elastic):
    geom, field, sym = elastic
    pair = assemble_cell_pair(rasterize_cell(geom, 8), sym, field, BlochMomentum(0, 0))
    lam = _dense_eigs(pair, 4)
    assert np.all(np.abs(lam[:2]) < 1e-10) and lam[2] > 1.0
    for c in ([1, 0], [0, 1]):
        v = np.tile(c, pair.dim // 2).astype(float)
        assert np.allclose(pair.K @ v, 0, atol=1e-12)


def test_strip_free_dirichlet_caps_separable(free):
    geom, field, sym = free
    T = 4
    mesh = build_strip_mesh(geom, WaveguideSpec(1), T, 16, "dirichlet")
    lam = _dense_eigs(assemble_strip_pair(mesh, sym, field, 0.0), 6)
    a = np.arange(-2, 3)[:, None]
    b = np.arange(1, 40)[None, :]
    exact = np.sort(((2 * np.pi * a) ** 2 + (np.pi * b / (2 * T)) ** 2).ravel())[:6]
    assert np.allclose(lam, exact, rtol=1e-2)


def test_strip_neumann_caps_constant_mode(free):
    geom, field, sym = free
    mesh = build_strip_mesh(geom, WaveguideSpec(1), 4, 8, "neumann")
    pair = assemble_strip_pair(mesh, sym, field, 0.0)
    assert abs(_dense_eigs(pair, 1)[0]) < 1e-10
    assert np.allclose(pair.K @ np.ones(pair.dim), 0, atol=1e-12)


def test_zeta_reduction_is_exact(dirichlet_disks):
    geom, field, sym = dirichlet_disks
    mesh = build_strip_mesh(geom, WaveguideSpec(1), 3, 8)
    a = assemble_strip_pair(mesh, sym, field, 0.0)
    b = assemble_strip_pair(mesh, sym, field, 2 * np.pi - 1e-12)
    assert canonical_angle(2 * np.pi - 1e-12) == 0.0
    assert (a.K != b.K).nnz == 0 and (a.M != b.M).nnz == 0


def test_plane_free_constants_and_size(free):
    geom, field, sym = free
    mesh = build_truncated_plane_mesh(geom, WaveguideSpec(1), 2, 4)
    pair = assemble_plane_pair(mesh, sym, field)
    assert pair.dim == (4 * 4 + 1) ** 2
    assert np.allclose(pair.K @ np.ones(pair.dim), 0, atol=1e-12)


def test_plane_dim_counts_active_nodes(elastic):
    geom = UnitCellGeometry((Disk((0.5, 0.5), 0.3),))
    _, field, sym = elastic
    mesh = build_truncated_plane_mesh(geom, WaveguideSpec(1), 2, 8)
    pair = assemble_plane_pair(mesh, sym, field)
    touched = np.zeros(mesh.node_shape, dtype=bool).ravel()
    touched[mesh.element_nodes()[mesh.active.ravel()].ravel()] = True
    assert pair.dim == 2 * touched.sum()


def test_plane_stencils_match_cell_stencils():
    geom = UnitCellGeometry((Disk((0.5, 0.5), 0.3),))
    field = CoefficientField(np.array([[2.0, 0.3], [0.3, 1.0]]), 1.5)
    sym = scalar_symbol()
    n = 8
    plane = assemble_plane_pair(build_truncated_plane_mesh(geom, WaveguideSpec(1), 3, n), sym, field)
    cell = assemble_cell_pair(rasterize_cell(geom, n), sym, field, BlochMomentum(0, 0))
    pw = plane.mesh.nx + 1
    for jy, jx in [(5, 4), (9, 3), (12, 11), (2 * n + 3, 6), (4 * n + 4, 12)]:  # x1 < -1
        p = plane.node_dof[jy * pw + jx]
        c = cell.node_dof[(jy % n) * (n + 1) + jx % n]
        if p < 0:
            assert c < 0
            continue
        for A, B in ((plane.K, cell.K), (plane.M, cell.M)):
            row = A.getrow(p)
            got = {}
            for q, v in zip(row.indices, row.data):
                node = plane.dof_node[q]
                key = ((node % pw - jx) % n, (node // pw - jy) % n)
                got[key] = got.get(key, 0) + v
            ref = {}
            crow = B.getrow(c)
            for q, v in zip(crow.indices, crow.data):
                node = cell.dof_node[q]
                key = ((node % (n + 1) - jx % n) % n, (node // (n + 1) - jy % n) % n)
                ref[key] = ref.get(key, 0) + v
            assert got.keys() == ref.keys()
            for k in got:
                assert got[k] == pytest.approx(ref[k], rel=1e-13, abs=1e-13)


def test_apply_operator_examples(free):
    geom, field, sym = free
    pair = assemble_cell_pair(rasterize_cell(geom, 8), sym, field, BlochMomentum(0.3, 1.1))
    Kv, Mv = apply_operator(pair, np.zeros(pair.dim))
    assert not np.any(Kv) and not np.any(Mv)
    e = np.zeros(pair.dim)
    e[5] = 1
    Kv, Mv = apply_operator(pair, e)
    assert np.array_equal(Kv, pair.K.toarray()[:, 5]) and np.array_equal(Mv, pair.M.toarray()[:, 5])
    rng = np.random.default_rng(1)
    v = rng.standard_normal(pair.dim) + 1j * rng.standard_normal(pair.dim)
    q = np.vdot(v, pair.K @ v)
    assert abs(q.imag) <= 1e-12 * sla.norm(pair.K.toarray()) * np.vdot(v, v).real
    with pytest.raises(ValueError):
        apply_operator(pair, np.zeros(pair.dim + 1))


def test_phase_exactness():
    assert phase(np.pi / 2) == 1j and phase(np.pi) == -1 and phase(3 * np.pi / 2) == -1j
    assert phase(-0.7) == phase(0.7).conjugate()


etas = st.floats(0, 2 * np.pi, allow_nan=False)


@settings(max_examples=20, deadline=None)
@given(e1=etas, e2=etas, r=st.floats(0.1, 0.35), bc=st.sampled_from(["neumann", "dirichlet"]))
def test_exact_structure(e1, e2, r, bc):
    geom = UnitCellGeometry((Disk((0.5, 0.5), r),))
    field = CoefficientField(np.array([[1.5, 0.2], [0.2, 0.8]]), 1.3, hole_bc=bc)
    sym = scalar_symbol()
    mesh = rasterize_cell(geom, 8)
    a = assemble_cell_pair(mesh, sym, field, BlochMomentum(e1, e2))
    assert _exactly_hermitian(a.K) and _exactly_hermitian(a.M)
    b = assemble_cell_pair(mesh, sym, field, BlochMomentum(e1 + 2 * np.pi, e2 - 2 * np.pi))
    assert (a.K != b.K).nnz == 0
    c = assemble_cell_pair(mesh, sym, field, BlochMomentum(-e1, -e2))
    assert (c.K != a.K.conj()).nnz == 0
    rng = np.random.default_rng(0)
    V = rng.standard_normal((a.dim, 10)) + 1j * rng.standard_normal((a.dim, 10))
    kq = np.einsum("ij,ij->j", V.conj(), a.K @ V)
    mq = np.einsum("ij,ij->j", V.conj(), a.M @ V)
    assert np.all(kq.real >= -1e-10 * np.abs(kq)) and np.all(mq.real > 0)


def test_errors(free):
    geom, field, sym = free
    blocked = UnitCellGeometry((AxisRect((0.05, 0.05), (0.95, 0.95)),), 0.01)
    mesh = rasterize_cell(blocked, 4)
    with pytest.raises(AssemblyError):
        assemble_cell_pair(mesh, sym, field, BlochMomentum(0, 0))
    dfield = CoefficientField(np.eye(2), 1.0, hole_bc="dirichlet")
    # holes on every other element of a 4x4 grid touch every node
    holes = tuple(AxisRect((a - 0.05, b - 0.05), (a + 0.05, b + 0.05))
                  for a in (0.375, 0.875) for b in (0.375, 0.875))
    mesh = rasterize_cell(UnitCellGeometry(holes), 4)
    assert mesh.active.sum() == 12
    with pytest.raises(AssemblyError):
        assemble_cell_pair(mesh, sym, dfield, BlochMomentum(0, 0))


def test_dump_triplets_sorted(free):
    geom, field, sym = free
    pair = assemble_cell_pair(rasterize_cell(geom, 4), sym, field, BlochMomentum(0.5, 0))
    buf = io.StringIO()
    dump_triplets(pair.K, buf)
    rows = [tuple(map(int, line.split()[:2])) for line in buf.getvalue().splitlines()]
    assert rows == sorted(rows) and len(rows) == pair.K.nnz
    buf2 = io.StringIO()
    dump_triplets(pair.K, buf2)
    assert buf.getvalue() == buf2.getvalue()


def test_cell_matches_fourier_oracle_at_generic_eta(free):
    geom, field, sym = free
    eta = (0.9, 2.1)
    lam = _dense_eigs(assemble_cell_pair(rasterize_cell(geom, 16), sym, field, BlochMomentum(*eta)), 3)
    assert np.allclose(lam, fourier_oracle(eta, 3), rtol=2e-2)

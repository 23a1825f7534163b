"""Sparse stiffness/mass pairs for the cell, strip and truncated plane.

Bilinear (Q1) elements with 2x2 Gauss quadrature.  Quasi-periodicity is
imposed by identifying a wrap node with its master node up to a phase,
``u(x + e_p) = exp(i eta_p) u(x)``, which is spectrally the same as working
with ``L(x, grad + i eta)`` on periodic functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .geometry import CellMesh, Mesh, PlaneMesh, StripMesh
from .operator import CoefficientField, OperatorSymbol

TWO_PI = 2.0 * math.pi
# angles are snapped to multiples of 2*pi / 2**40 so that eta, eta + 2*pi and
# 2*pi - 1e-12 map to bit-identical phases
_TURNS = 1 << 40


class AssemblyError(RuntimeError):
    pass


def _turns(angle: float) -> int:
    return int(round(float(angle) / TWO_PI * _TURNS)) % _TURNS


def canonical_angle(angle: float) -> float:
    """Reduce an angle to ``[0, 2*pi)`` on the snapping lattice."""
    return _turns(angle) * (TWO_PI / _TURNS)


def phase(angle: float) -> complex:
    """``exp(i angle)`` with exact conjugation symmetry and exact quarter turns."""
    t = _turns(angle)
    if t > _TURNS // 2:
        return phase(-angle).conjugate()
    q, r = divmod(t, _TURNS // 4)
    if r == 0:
        return (1.0 + 0j, 1j, -1.0 + 0j)[q]
    return complex(np.exp(1j * (t * (TWO_PI / _TURNS))))


@dataclass(frozen=True)
class BlochMomentum:
    eta1: float
    eta2: float

    def __post_init__(self):
        object.__setattr__(self, "eta1", canonical_angle(self.eta1))
        object.__setattr__(self, "eta2", canonical_angle(self.eta2))

    def __iter__(self):
        return iter((self.eta1, self.eta2))


@dataclass(frozen=True, eq=False)
class AssembledPair:
    """Hermitian pair ``(K, M)`` with the node-to-dof bookkeeping.

    ``node_dof[i]`` is the dof block of mesh node ``i`` (``-1`` when the node
    was eliminated) and ``node_phase[i]`` the factor relating the node value
    to its master dof.  Vector problems store ``ncomp`` consecutive dofs per
    node block.
    """

    K: sp.csr_matrix
    M: sp.csr_matrix
    node_dof: np.ndarray
    node_phase: np.ndarray
    dof_node: np.ndarray
    ncomp: int
    mesh: Mesh
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    def nodal_values(self, x) -> np.ndarray:
        """Expand a dof vector to node values, shape ``(ny+1, nx+1, ncomp)``."""
        x = np.asarray(x).reshape(-1, self.ncomp)
        out = np.zeros((self.node_dof.size, self.ncomp), dtype=np.result_type(x, self.node_phase))
        keep = self.node_dof >= 0
        out[keep] = x[self.node_dof[keep]] * self.node_phase[keep, None]
        return out.reshape(self.mesh.node_shape + (self.ncomp,))

    def from_nodal(self, values) -> np.ndarray:
        """Restrict node values to the dof vector (master nodes only)."""
        values = np.asarray(values).reshape(-1, self.ncomp)
        return values[self.dof_node].ravel()

    def lumped_mass(self) -> np.ndarray:
        return np.asarray(abs(self.M).sum(axis=1)).ravel()


# ---------------------------------------------------------------------------
# Reference element
# ---------------------------------------------------------------------------

_GAUSS = 0.5 + np.array([-0.5, 0.5]) / math.sqrt(3.0)
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


def _shape_data():
    """Shape values ``N[g, a]`` and reference gradients ``dN[g, a, d]``."""
    pts = np.array([(s, t) for t in _GAUSS for s in _GAUSS])
    N = np.empty((4, 4))
    dN = np.empty((4, 4, 2))
    for g, (s, t) in enumerate(pts):
        for a, (cx, cy) in enumerate(_CORNERS):
            fs = s if cx else 1 - s
            ft = t if cy else 1 - t
            N[g, a] = fs * ft
            dN[g, a, 0] = (1 if cx else -1) * ft
            dN[g, a, 1] = fs * (1 if cy else -1)
    return N, dN


_N, _DN = _shape_data()


def element_strain_matrices(sym: OperatorSymbol, n: int) -> np.ndarray:
    """``B[g]`` with ``D(grad) u = B[g] @ u_e`` at Gauss point ``g``.

    Element dofs are node-major: ``a * ncomp + c``.
    """
    nc = sym.n
    B = np.zeros((4, sym.m, 4 * nc))
    for g in range(4):
        for a in range(4):
            grad = _DN[g, a] * n
            for c in range(nc):
                B[g, :, a * nc + c] = sym.coeffs[0][:, c] * grad[0] + sym.coeffs[1][:, c] * grad[1]
    return B


def element_stiffness(sym: OperatorSymbol, A: np.ndarray, n: int) -> np.ndarray:
    B = element_strain_matrices(sym, n)
    w = 0.25 / n ** 2
    Ke = sum(w * B[g].T @ A @ B[g] for g in range(4))
    return (Ke + Ke.conj().T) / 2


def element_mass(ncomp: int, rho: float, n: int) -> np.ndarray:
    w = 0.25 / n ** 2
    Me = rho * w * (_N.T @ _N)
    return np.kron(Me, np.eye(ncomp))


# ---------------------------------------------------------------------------
# Global assembly
# ---------------------------------------------------------------------------

def _element_classes(mesh: Mesh, field: CoefficientField, use_transition: bool):
    x, y = mesh.centroids()
    x = x.ravel()
    y = y.ravel()
    alpha1 = np.floor(x).astype(np.int64) if use_transition else None
    return field.classify(x - np.floor(x), y - np.floor(y), y, mesh.waveguide.ravel(), alpha1)


def _hermitize(A):
    A = A.tocsr()
    A = ((A + A.conj().T) * 0.5).tocsr()
    A.sort_indices()
    return A


def _assemble(mesh: Mesh, sym: OperatorSymbol, field: CoefficientField, *,
              wrap_x: bool, wrap_y: bool, eta=(0.0, 0.0), cap_dirichlet: bool = False,
              use_transition: bool = False, meta: Optional[dict] = None) -> AssembledPair:
    n, nx, ny, nc = mesh.n, mesh.nx, mesh.ny, sym.n
    if field.m != sym.m:
        raise AssemblyError(f"coefficient matrices are {field.m}x{field.m}, symbol needs {sym.m}x{sym.m}")
    W = nx + 1
    n_nodes = (ny + 1) * W
    jy, jx = np.divmod(np.arange(n_nodes), W)

    p1 = phase(eta[0])
    p2 = phase(eta[1])
    mx, my = jx.copy(), jy.copy()
    node_phase = np.ones(n_nodes, dtype=complex)
    if wrap_x:
        wx = jx == nx
        mx[wx] = 0
        node_phase[wx] *= p1
    if wrap_y:
        wy = jy == ny
        my[wy] = 0
        node_phase[wy] *= p2
    master = my * W + mx

    enodes = mesh.element_nodes()
    active = mesh.active.ravel()
    if not active.any():
        raise AssemblyError("no active elements")

    used = np.zeros(n_nodes, dtype=bool)
    used[master[enodes[active]].ravel()] = True
    blocked = np.zeros(n_nodes, dtype=bool)
    if field.hole_bc == "dirichlet" and not active.all():
        blocked[master[enodes[~active]].ravel()] = True
    if cap_dirichlet:
        blocked[master[(jy == 0) | (jy == ny)]] = True
    keep = used & ~blocked
    if not keep.any():
        raise AssemblyError("Dirichlet elimination removed every degree of freedom")
    dof_node = np.flatnonzero(keep)
    master_dof = np.full(n_nodes, -1, dtype=np.int64)
    master_dof[dof_node] = np.arange(dof_node.size)
    node_dof = master_dof[master]
    node_phase = np.where(node_dof >= 0, node_phase, 0)

    cls, classes = _element_classes(mesh, field, use_transition)
    cls = cls[active]
    Ke = np.stack([element_stiffness(sym, A, n) for A, _, _ in classes])
    Me = np.stack([element_mass(nc, rho, n) for _, rho, _ in classes])

    en = enodes[active]
    ldof = (node_dof[en][:, :, None] * nc + np.arange(nc)).reshape(len(en), 4 * nc)
    ldof[np.repeat(node_dof[en] < 0, nc, axis=1)] = -1
    lph = np.repeat(node_phase[en], nc, axis=1)
    complex_phase = bool(np.any(lph.imag))
    dtype = complex if (complex_phase or np.iscomplexobj(Ke)) else float
    if dtype is float:
        lph = lph.real

    dim = dof_node.size * nc
    K = sp.csr_matrix((dim, dim), dtype=dtype)
    M = sp.csr_matrix((dim, dim), dtype=dtype)
    # one local row at a time keeps the triplet arrays small on big planes
    for a in range(4 * nc):
        ra = ldof[:, a]
        ok_r = ra >= 0
        if not ok_r.any():
            continue
        rows = np.broadcast_to(ra[:, None], ldof.shape)
        ok = ok_r[:, None] & (ldof >= 0)
        scale = lph[:, a, None].conj() * lph
        kv = (scale * Ke[cls, a, :])[ok]
        mv = (scale * Me[cls, a, :])[ok]
        r = rows[ok]
        c = ldof[ok]
        K = K + sp.csr_matrix((kv, (r, c)), shape=(dim, dim))
        M = M + sp.csr_matrix((mv, (r, c)), shape=(dim, dim))

    info = dict(meta or {})
    return AssembledPair(K=_hermitize(K), M=_hermitize(M), node_dof=node_dof,
                         node_phase=node_phase, dof_node=dof_node, ncomp=nc, mesh=mesh, meta=info)


def assemble_cell_pair(mesh: CellMesh, sym: OperatorSymbol, field: CoefficientField,
                       eta) -> AssembledPair:
    eta = eta if isinstance(eta, BlochMomentum) else BlochMomentum(*eta)
    return _assemble(mesh, sym, field, wrap_x=True, wrap_y=True, eta=(eta.eta1, eta.eta2),
                     meta={"domain": "cell", "eta": (eta.eta1, eta.eta2)})


def assemble_strip_pair(mesh: StripMesh, sym: OperatorSymbol, field: CoefficientField,
                        zeta: float, cap_bc: Optional[str] = None) -> AssembledPair:
    cap = cap_bc or mesh.cap_bc
    if cap not in ("dirichlet", "neumann"):
        raise AssemblyError(f"unknown cap boundary condition {cap!r}")
    z = canonical_angle(zeta)
    return _assemble(mesh, sym, field, wrap_x=True, wrap_y=False, eta=(z, 0.0),
                     cap_dirichlet=cap == "dirichlet",
                     meta={"domain": "strip", "zeta": z, "cap_bc": cap, "T": mesh.T})


def assemble_plane_pair(mesh: PlaneMesh, sym: OperatorSymbol, field: CoefficientField) -> AssembledPair:
    return _assemble(mesh, sym, field, wrap_x=False, wrap_y=False, use_transition=True,
                     meta={"domain": "plane", "L": mesh.L})


def apply_operator(pair: AssembledPair, v):
    v = np.asarray(v)
    if v.shape[0] != pair.dim:
        raise ValueError(f"vector has length {v.shape[0]}, pair dimension is {pair.dim}")
    return pair.K @ v, pair.M @ v


def dump_triplets(matrix, fh) -> None:
    """Write ``row col re im`` lines sorted by (row, col)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    data = coo.data.astype(complex)
    for k in order:
        fh.write(f"{coo.row[k]} {coo.col[k]} {data[k].real!r} {data[k].imag!r}\n")

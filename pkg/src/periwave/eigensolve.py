"""Lowest eigenpairs of a Hermitian pencil ``K v = lambda M v``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledPair


class EigenSolveError(RuntimeError):
    """Solver did not reach the requested residual; ``residuals`` has what it got."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    method: str = "auto"
    dense_max: int = 2000
    seed: int = 0

    def solve(self, pair: AssembledPair, count: int) -> "EigenResult":
        return lowest_eigenpairs(pair, count, self.tol, method=self.method,
                                 dense_max=self.dense_max, seed=self.seed)


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.eigenvalues)


def residual_norm(pair: AssembledPair, lam: float, v) -> float:
    """``||K v - lam M v|| / ||M v||``."""
    v = np.asarray(v)
    Mv = pair.M @ v
    denom = np.linalg.norm(Mv)
    if denom == 0:
        raise ValueError("residual of the zero vector is undefined")
    return float(np.linalg.norm(pair.K @ v - lam * Mv) / denom)


def _rayleigh_ritz(K, M, V):
    """Clean up a basis: projected solve, M-orthonormal output."""
    KV = K @ V
    MV = M @ V
    Kr = V.conj().T @ KV
    Mr = V.conj().T @ MV
    Kr = (Kr + Kr.conj().T) / 2
    Mr = (Mr + Mr.conj().T) / 2
    w, Y = sla.eigh(Kr, Mr)
    return w, V @ Y


def _fix_phases(V):
    """Rotate each column so its first dominant entry is real positive."""
    V = V.copy()
    for k in range(V.shape[1]):
        col = V[:, k]
        mag = np.abs(col)
        i = int(np.argmax(mag >= 0.5 * mag.max()))
        if np.iscomplexobj(V):
            V[:, k] = col * (np.conj(col[i]) / mag[i])
        elif col[i] < 0:
            V[:, k] = -col
    return V


def _order_clusters(w, V, rel=1e-9):
    """Deterministic order: by value, ties broken on the phase-fixed vectors.

    Values stay sorted; inside a cluster only the vectors are permuted, the
    value differences there being solver noise.
    """
    idx = np.argsort(w, kind="stable")
    w, V = w[idx], V[:, idx]
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    order = list(range(len(w)))
    start = 0
    while start < len(w):
        stop = start + 1
        while stop < len(w) and w[stop] - w[stop - 1] <= rel * scale:
            stop += 1
        if stop - start > 1:
            block = order[start:stop]
            keys = [tuple(np.round(np.concatenate([V[:, k].real, V[:, k].imag]), 8)) for k in block]
            order[start:stop] = [b for _, b in sorted(zip(keys, block))]
        start = stop
    return w, V[:, order]


def lowest_eigenpairs(pair: AssembledPair, count: int, tol: float = 1e-8, *,
                      method: str = "auto", dense_max: int = 2000,
                      sigma: float | None = None, maxiter: int | None = None,
                      seed: int = 0) -> EigenResult:
    """Lowest ``count`` eigenpairs with M-orthonormal vectors.

    ``method`` is ``"dense"``, ``"sparse"`` (shift-invert Lanczos around
    ``sigma``, default just below zero) or ``"auto"`` (dense up to
    ``dense_max`` dofs).  ``seed`` fixes the Lanczos start vector.
    """
    dim = pair.dim
    if count < 1:
        raise ValueError("need at least one eigenpair")
    if count > dim:
        raise ValueError(f"requested {count} eigenpairs of a {dim}-dimensional problem")
    K, M = pair.K, pair.M
    if method == "auto":
        method = "dense" if dim <= dense_max or count >= dim - 1 else "sparse"
    meta = {"method": method, "dim": dim}
    if method == "dense":
        Kd = K.toarray() if sp.issparse(K) else np.asarray(K)
        Md = M.toarray() if sp.issparse(M) else np.asarray(M)
        w, V = sla.eigh(Kd, Md, subset_by_index=[0, count - 1])
        meta["iterations"] = 0
    elif method == "sparse":
        if sigma is None:
            diag = np.abs(K.diagonal()) / np.abs(M.diagonal())
            sigma = -1e-2 * float(np.median(diag))
        dtype = np.result_type(K.dtype, M.dtype)
        lu = spla.splu((K - sigma * M).tocsc().astype(dtype))
        op = spla.LinearOperator((dim, dim), matvec=lu.solve, dtype=dtype)
        v0 = np.random.default_rng(seed).standard_normal(dim).astype(dtype)
        nev = min(count + max(2, count // 2), dim - 2)
        try:
            w, V = spla.eigsh(K, k=nev, M=M, sigma=sigma, which="LM", OPinv=op, v0=v0,
                              tol=tol * 1e-2, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise EigenSolveError(f"shift-invert Lanczos did not converge: {exc}") from exc
        meta["sigma"] = sigma
        w, V = _rayleigh_ritz(K, M, V)
        # Lanczos leaves the upper Ritz pairs loosest; polish the whole block
        # by shift-invert subspace iteration until the wanted ones are clean
        steps = 0
        while steps < 5 and max(residual_norm(pair, lam, V[:, k])
                                for k, lam in enumerate(w[:count])) > 0.1 * tol:
            V = np.column_stack([lu.solve(M @ V[:, k]) for k in range(V.shape[1])])
            w, V = _rayleigh_ritz(K, M, V)
            steps += 1
        meta["iterations"] = steps
        w, V = w[:count], V[:, :count]
    else:
        raise ValueError(f"unknown method {method!r}")

    V = _fix_phases(V)
    w, V = _order_clusters(np.asarray(w, dtype=float), V)
    res = np.array([residual_norm(pair, lam, V[:, k]) for k, lam in enumerate(w)])
    if np.any(res > tol):
        raise EigenSolveError(f"residuals {res.max():.3g} above tolerance {tol:g}", residuals=res)
    return EigenResult(eigenvalues=w, eigenvectors=V, residuals=res, meta=meta)

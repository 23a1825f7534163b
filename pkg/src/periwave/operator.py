"""First-order symbols and piecewise-constant coefficient fields.

The operator is the divergence-form system ``D(-grad)^T A(x) D(grad)`` with
density ``rho(x)``; only its sesquilinear form ``(A D u, D v)`` and the mass
``(rho u, v)`` are ever evaluated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Shape, shape_name

log = logging.getLogger(__name__)

HERMITIAN_WARN = 1e-12


class ConfigurationError(ValueError):
    """Raised for coefficient data that breaks positivity or shape rules."""


@dataclass(frozen=True, eq=False)
class OperatorSymbol:
    """``D(xi) = xi_1 * coeffs[0] + xi_2 * coeffs[1]``, an ``m x n`` matrix."""

    kind: str
    coeffs: np.ndarray

    @property
    def n(self) -> int:
        return self.coeffs.shape[2]

    @property
    def m(self) -> int:
        return self.coeffs.shape[1]

    def __call__(self, xi) -> np.ndarray:
        return xi[0] * self.coeffs[0] + xi[1] * self.coeffs[1]


def scalar_symbol() -> OperatorSymbol:
    c = np.zeros((2, 2, 1))
    c[0, 0, 0] = 1.0
    c[1, 1, 0] = 1.0
    return OperatorSymbol("scalar", c)


def elasticity_symbol() -> OperatorSymbol:
    """Plane strain in Voigt-Mandel form: ``(e11, e22, sqrt(2) e12)``."""
    s = 2.0 ** -0.5
    c = np.zeros((2, 3, 2))
    c[0, 0, 0] = 1.0
    c[0, 2, 1] = s
    c[1, 1, 1] = 1.0
    c[1, 2, 0] = s
    return OperatorSymbol("elasticity", c)


def symbol_by_kind(kind: str) -> OperatorSymbol:
    if kind == "scalar":
        return scalar_symbol()
    if kind == "elasticity":
        return elasticity_symbol()
    raise ConfigurationError(f"unknown operator kind {kind!r}")


def hermitian_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``(a + a^H) / 2``, warning when ``a`` was visibly non-Hermitian."""
    a = np.atleast_2d(np.asarray(a))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {a.shape}")
    dev = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    if dev > HERMITIAN_WARN:
        log.warning("%s is not Hermitian (deviation %.3g); symmetrizing", name, dev)
    sym = (a + a.conj().T) / 2
    if np.iscomplexobj(sym) and not np.any(sym.imag):
        sym = sym.real.copy()
    return sym


@dataclass(frozen=True, eq=False)
class Override:
    """Constant values inside ``shape``; ``None`` keeps the underlying value."""

    shape: Shape
    A: Optional[np.ndarray] = None
    rho: Optional[float] = None


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Background ``A0, rho`` on the unit cell plus the waveguide patch ``A1``.

    Later overrides win over earlier ones.  The patch is declared on the first
    waveguide cell ``(0, 1) x (-h, h)``; ``transition`` maps a cell index
    ``alpha1 < R`` to an override list replacing ``patch`` in that cell.
    """

    A0: np.ndarray
    rho0: float
    overrides: tuple[Override, ...] = ()
    A1: Optional[np.ndarray] = None
    patch: tuple[Override, ...] = ()
    transition: tuple[tuple[int, tuple[Override, ...]], ...] = ()
    hole_bc: str = "neumann"

    def __post_init__(self):
        A0 = np.atleast_2d(np.asarray(self.A0))
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "overrides", tuple(self.overrides))
        object.__setattr__(self, "patch", tuple(self.patch))
        object.__setattr__(self, "transition",
                           tuple(sorted((int(k), tuple(v)) for k, v in dict(self.transition).items())))
        if self.A1 is None:
            object.__setattr__(self, "A1", np.zeros_like(A0))
        if self.hole_bc not in ("neumann", "dirichlet"):
            raise ConfigurationError(f"hole boundary condition must be neumann or dirichlet, got {self.hole_bc!r}")
        if not self.rho0 > 0:
            raise ConfigurationError(f"density must be positive, got {self.rho0}")
        m = A0.shape[0]
        for ov in self.overrides + self.patch + tuple(o for _, lst in self.transition for o in lst):
            if ov.A is not None and np.shape(ov.A) != (m, m):
                raise ConfigurationError(f"override on {shape_name(ov.shape)} has shape {np.shape(ov.A)}, expected {(m, m)}")
            if ov.rho is not None and not ov.rho > 0:
                raise ConfigurationError(f"override on {shape_name(ov.shape)} has nonpositive density")

    @property
    def m(self) -> int:
        return self.A0.shape[0]

    def patch_for_cell(self, alpha1: int) -> tuple[Override, ...]:
        for k, lst in self.transition:
            if k == alpha1:
                return lst
        return self.patch

    # -- vectorized classification ---------------------------------------

    def classify(self, fx, fy, x2, wave, alpha1=None):
        """Group elements into constant-coefficient classes.

        ``fx, fy`` are cell-local centroid coordinates, ``x2`` the global
        second coordinate (used by the patch), ``wave`` the waveguide flag
        and ``alpha1`` the cell column index (``None`` means the periodic
        patch everywhere, ignoring transition cells).  Returns
        ``(class_id, [(A, rho, sample_point), ...])``.
        """
        fx = np.ravel(fx)
        fy = np.ravel(fy)
        x2 = np.ravel(x2)
        wave = np.ravel(wave).astype(bool)
        bg = np.full(fx.shape, -1, dtype=np.int64)
        for k, ov in enumerate(self.overrides):
            bg[ov.shape.contains(fx, fy)] = k
        plist = np.where(wave, -1, -2).astype(np.int64)
        pidx = np.full(fx.shape, -1, dtype=np.int64)
        lists = {-1: self.patch}
        if self.transition and alpha1 is not None and wave.any():
            a1 = np.ravel(alpha1)
            for k, lst in self.transition:
                sel = wave & (a1 == k)
                plist[sel] = k
                lists[k] = lst
        for lid, lst in lists.items():
            sel = plist == lid
            if not sel.any():
                continue
            for k, ov in enumerate(lst):
                hit = sel & ov.shape.contains(fx, x2)
                pidx[hit] = k
        keys = np.stack([bg, plist, pidx], axis=1)
        uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        classes = []
        for (b, pl, pi), e in zip(uniq, first):
            point = (float(fx[e]), float(x2[e]) if pl != -2 else float(fy[e]))
            A, rho = self._value(int(b), int(pl), int(pi), lists)
            _check_positive(A, rho, point, "waveguide" if pl != -2 else "background")
            classes.append((A, rho, point))
        return inverse.ravel(), classes

    def _value(self, b, pl, pi, lists):
        A = self.A0
        rho = self.rho0
        if b >= 0:
            ov = self.overrides[b]
            A = ov.A if ov.A is not None else A
            rho = ov.rho if ov.rho is not None else rho
        if pl != -2:
            A1 = self.A1
            if pi >= 0:
                ov = lists[pl][pi]
                A1 = ov.A if ov.A is not None else A1
                rho = ov.rho if ov.rho is not None else rho
            A = A + A1
        return A, rho


def _check_positive(A, rho, point, region):
    if not rho > 0:
        raise ConfigurationError(f"density {rho} not positive at {region} point {point}")
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ConfigurationError(
            f"coefficient matrix not positive definite at {region} point {point}") from None


def sample_coefficients(field: CoefficientField, region: str, point, alpha1: int = 0):
    """Coefficient matrix and density at one point.

    ``region`` is ``"background"`` (point in the unit cell, reduced mod 1) or
    ``"waveguide"`` (point in ``(0, 1) x (-h, h)``; returns ``A0 + A1``).
    """
    x1, x2 = float(point[0]), float(point[1])
    fx, fy = x1 % 1.0, x2 % 1.0
    if region not in ("background", "waveguide"):
        raise ConfigurationError(f"unknown region {region!r}")
    wave = region == "waveguide"
    _, classes = field.classify([fx], [fy], [x2], [wave], [alpha1])
    A, rho, _ = classes[0]
    return A, rho

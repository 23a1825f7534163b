import numpy as np
import pytest

from periwave.geometry import Disk, UnitCellGeometry
from periwave.operator import CoefficientField, elasticity_symbol, scalar_symbol


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("PERIWAVE_CACHE_DIR", str(tmp_path / "cache"))


@pytest.fixture
def free():
    """Free Laplacian on the empty cell."""
    return UnitCellGeometry(()), CoefficientField(np.eye(2), 1.0), scalar_symbol()


@pytest.fixture
def dirichlet_disks():
    geom = UnitCellGeometry((Disk((0.5, 0.5), 0.3),))
    return geom, CoefficientField(np.eye(2), 1.0, hole_bc="dirichlet"), scalar_symbol()


@pytest.fixture
def elastic():
    return UnitCellGeometry(()), CoefficientField(np.eye(3), 1.0), elasticity_symbol()


def fourier_oracle(eta, count, reach=3):
    """k-th smallest |eta + 2 pi alpha|^2 over |alpha|_inf <= reach."""
    a = np.arange(-reach, reach + 1)
    A1, A2 = np.meshgrid(a, a)
    vals = (eta[0] + 2 * np.pi * A1) ** 2 + (eta[1] + 2 * np.pi * A2) ** 2
    return np.sort(vals.ravel())[:count]


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

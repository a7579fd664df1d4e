import numpy as np
import pytest

from emfp.mesh import TubeMesh


def block_mesh(nx, ny, nz, lx, ly, lz):
    """Axis-aligned brick of hexes wearing the TubeMesh interface (solver tests only)."""
    xs, ys, zs = (np.linspace(0, l, n + 1) for n, l in ((nx, lx), (ny, ly), (nz, lz)))
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    els = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                els.append([nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                            nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1),
                            nid(i, j + 1, k + 1)])
    empty = np.zeros((0, 4), dtype=np.int64)
    return TubeMesh(nodes=nodes, elements=np.array(els, dtype=np.int64), r_i=0.0, r_o=0.0,
                    length=lz, n_axial=nz, n_circ=ny, n_thickness=nx, inner_facets=empty,
                    outer_facets=empty, inner_area=np.zeros(len(nodes)),
                    outer_area=np.zeros(len(nodes)))


@pytest.fixture
def block():
    return block_mesh


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

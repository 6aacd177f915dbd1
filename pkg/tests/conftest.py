import numpy as np
import pytest

import vertexflow as vf


@pytest.fixture
def unit_square_mesh():
    """Unit square split into two right triangles."""
    return vf.build_structured((1, 1), (1.0, 1.0))


@pytest.fixture
def small_mesh():
    """3x3-cell structured mesh of the unit square (16 nodes, 18 triangles)."""
    return vf.build_structured((3, 3), (1.0, 1.0))


@pytest.fixture
def bc_model():
    return vf.BrooksCoreyModel(theta=3.0, p_d=5e3, R=0.05, s_rw=0.15, s_ro=0.15)


@pytest.fixture
def mms_model():
    return vf.QuadraticKrModel(theta=2.0, p_d=50.0, R=0.05)


@pytest.fixture
def reservoir_fluids():
    return vf.FluidPair(mu_w=5e-4, mu_o=2e-3)


@pytest.fixture
def unit_fluids():
    return vf.FluidPair(mu_w=1.0, mu_o=1.0)


def jittered_mesh(nx, lengths, seed, amplitude=0.25):
    """Structured mesh with interior nodes randomly displaced (stays valid)."""
    mesh = vf.build_structured(nx, lengths)
    rng = np.random.default_rng(seed)
    vertices = mesh.vertices.copy()
    h = min(l / n for l, n in zip(lengths, nx))
    interior = np.ones(mesh.num_nodes, dtype=bool)
    interior[mesh.boundary_nodes] = False
    vertices[interior] += rng.uniform(-amplitude * h, amplitude * h,
                                      (int(interior.sum()), mesh.dim))
    return vf.Mesh(mesh.dim, vertices, mesh.elements)

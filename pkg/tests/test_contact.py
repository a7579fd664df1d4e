import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import block_mesh
from dataclasses import replace
from emfp.contact import (
    ContactModel,
    ContactSet,
    FrictionModel,
    auto_penalty_stiffness,
    contact_omega,
    detect_penetrations,
    local_edge_length,
    penalty_forces,
)
from emfp.dynamics import ExplicitSolver, stable_timestep
from emfp.material import load_deck
from emfp.mesh import PunchLayout, RigidTool, generate_tube_mesh, place_punches

AL = load_deck("al6061_t6")
POINTED = RigidTool.pointed(math.radians(45), 0.3e-3, 2.5e-3)
CONCAVE = RigidTool.concave(3.0e-3, 0.2e-3, 0.5e-3)


@pytest.fixture(scope="module")
def tube():
    return generate_tube_mesh(0.0238, 0.0012, 0.064, 24, 96, 2)


def test_friction_model_validation():
    with pytest.raises(ValueError):
        FrictionModel(0.2, 0.3)
    with pytest.raises(ValueError):
        FrictionModel(v_reg=0.0)


def test_no_contact_with_standoff(tube):
    tools = place_punches(PunchLayout(12), POINTED, tube, 0.5e-3) + [RigidTool.die(0.028)]
    assert len(detect_penetrations(tube.nodes, tools)) == 0


def test_die_wall_penetration():
    die = RigidTool.die(0.028)
    x = np.array([[0.028 + 10e-6, 0.0, 0.0], [0.02, 0.0, 0.0]])
    cs = detect_penetrations(x, [die])
    assert len(cs) == 1 and cs.nodes[0] == 0
    assert cs.depth[0] == pytest.approx(10e-6, rel=1e-9)
    np.testing.assert_allclose(np.linalg.norm(cs.normals, axis=1), 1.0, atol=1e-12)


def test_broad_phase_matches_all_pairs(tube):
    rng = np.random.default_rng(1)
    tools = place_punches(PunchLayout(36), CONCAVE, tube, 0.2e-3) + [RigidTool.die(0.0256)]
    for _ in range(5):
        x = tube.nodes * [1.0 + rng.uniform(0, 0.04), 1.0 + rng.uniform(0, 0.04), 1.0]
        x = x + rng.normal(scale=3e-4, size=x.shape)
        a = detect_penetrations(x, tools)
        b = detect_penetrations(x, tools, broad_phase=False)
        assert len(a) > 0
        np.testing.assert_array_equal(a.nodes, b.nodes)
        np.testing.assert_array_equal(a.tools, b.tools)
        np.testing.assert_array_equal(a.depth, b.depth)
        assert np.all(a.depth > 0)


def test_empty_set_zero_forces():
    r = penalty_forces(ContactSet.empty(), 1e6, FrictionModel(), 5)
    assert np.all(r.forces == 0) and r.stored_energy == 0.0


def test_single_contact_no_slip():
    cs = ContactSet(np.array([2]), np.array([0]), np.array([1e-6]),
                    np.array([[0.0, 0.0, 1.0]]), np.zeros((1, 3)))
    r = penalty_forces(cs, 2e8, FrictionModel(), 4)
    np.testing.assert_allclose(r.forces[2], [0, 0, 200.0])
    assert r.stored_energy == pytest.approx(0.5 * 2e8 * 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-9, 1e-4), st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 0.5))
def test_friction_cone_and_dissipation(depth, vx, vy, mu):
    fm = FrictionModel(mu, mu, 1e-3)
    cs = ContactSet(np.array([0]), np.array([0]), np.array([depth]),
                    np.array([[0.0, 0.0, 1.0]]), np.array([[vx, vy, 0.0]]))
    r = penalty_forces(cs, 1e9, fm, 1)
    N = r.normal[0]
    assert N >= 0
    assert np.linalg.norm(r.tangential[0]) <= fm.mu_s * N + 1e-12
    assert r.dissipation_power >= 0


def test_no_tensile_force_when_separated():
    die = RigidTool.die(0.028)
    x = np.array([[0.0279999, 0.0, 0.0]])
    cs = detect_penetrations(x, [die], v=np.array([[-5.0, 1.0, 0.0]]))
    assert len(cs) == 0
    assert np.all(penalty_forces(cs, 1e9, FrictionModel(), 1).forces == 0)


def test_auto_stiffness(tube):
    k = auto_penalty_stiffness(tube, AL.E)
    ids = np.unique(tube.outer_facets)
    h = tube.thickness / tube.n_thickness
    np.testing.assert_allclose(k[ids], 10 * AL.E * tube.outer_area[ids] / h)
    assert np.all(k > 0)


def test_sliding_block_deceleration():
    # a brick pressed onto a flat rigid wall slides to rest at mu_d * g
    h = 1e-3
    m = block_mesh(1, 1, 1, h, h, h)
    R = 10.0  # bore radius: the die wall is flat to 5e-8 m over the brick
    mat = replace(AL, A=1e13)
    fixed = np.zeros((m.n_nodes, 3), dtype=bool)
    s = ExplicitSolver(m, mat, fixed_dofs=fixed)
    g = 2000.0
    mass = s.mass
    k = 5e7
    face = np.isclose(m.nodes[:, 0], h)
    # start in static equilibrium: wall face pushed in by m g / k
    x0 = m.nodes + [R - h, -0.5 * h, 0.0]
    x0[:, 0] += mass[face][0] * g / k
    v0 = np.tile([0.0, 0.0, 1.0], (m.n_nodes, 1))
    st = s.initial_state(velocity=v0)
    st.x = x0
    f_ext = np.zeros_like(x0)
    f_ext[:, 0] = mass * g
    fm = FrictionModel(0.3, 0.3, 1e-3)
    cm = ContactModel([RigidTool.die(R)], k, fm, m.n_nodes)
    cm.nodes = np.nonzero(face)[0]
    dt = 0.5 * stable_timestep(m, mat, 0.9, contact_omega=contact_omega(k, mass))
    ts, vz = [], []
    while st.t < 1e-3:
        s.step(st, dt, f_ext, cm)
        ts.append(st.t)
        vz.append(float(np.sum(mass * st.v[:, 2]) / mass.sum()))
    slope = np.polyfit(ts, vz, 1)[0]
    assert -slope == pytest.approx(0.3 * g, rel=0.01)
    assert cm.cone_violations == 0
    edge = local_edge_length(m, st.x)
    assert np.all(cm.max_depth <= 0.01 * edge)
    assert st.ledger.friction > 0


def test_contact_omega():
    assert contact_omega(4.0, np.array([1.0, 4.0])) == pytest.approx(2.0)

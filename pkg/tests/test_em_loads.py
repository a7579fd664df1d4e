import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emfp.em_loads import (
    MU0,
    CoilSpec,
    ShieldingWarning,
    build_surface_loads,
    coil_field,
    coil_field_array,
    loop_mutual_inductance,
    magnetic_pressure,
    shielding_check,
    skin_depth,
    solve_ring_currents,
)
from emfp.errors import ConfigError, SingularPoint
from emfp.mesh import generate_tube_mesh

REF_COIL = CoilSpec(0.020, 6, 0.008)


def loop_field_oracle(a, rho, z):
    """(H_rho, H_z) per unit current of a circular loop, elliptic-integral form."""
    mpmath.mp.dps = 30
    a, rho, z = mpmath.mpf(a), mpmath.mpf(rho), mpmath.mpf(z)
    q = (a + rho) ** 2 + z ** 2
    m = 4 * a * rho / q
    K, E = mpmath.ellipk(m), mpmath.ellipe(m)
    d = (a - rho) ** 2 + z ** 2
    hz = 1 / (2 * mpmath.pi * mpmath.sqrt(q)) * (K + (a ** 2 - rho ** 2 - z ** 2) / d * E)
    hr = z / (2 * mpmath.pi * rho * mpmath.sqrt(q)) * (-K + (a ** 2 + rho ** 2 + z ** 2) / d * E)
    return float(hr), float(hz)


def test_skin_depth_reference():
    d = skin_depth(25e6, MU0, 2 * math.pi * 16.67e3)
    assert d == pytest.approx(math.sqrt(2 / (2 * math.pi * 16.67e3 * MU0 * 25e6)), rel=1e-15)
    assert d == pytest.approx(0.78e-3, abs=0.005e-3)
    assert shielding_check(1.2e-3, d).valid


def test_skin_depth_scaling():
    d1 = skin_depth(1e6, MU0, 1e5)
    assert skin_depth(4e6, MU0, 1e5) == pytest.approx(d1 / 2, rel=1e-15)


def test_shielding_boundary_and_warning():
    assert shielding_check(0.78e-3, 0.78e-3).valid
    with pytest.warns(ShieldingWarning):
        r = shielding_check(0.1e-3, 0.78e-3)
    assert not r.valid and r.ratio == pytest.approx(0.1 / 0.78)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        shielding_check(1.2e-3, 0.78e-3)


def test_loop_center():
    c = CoilSpec(0.01, 1, 0.0, segments=64)
    s = coil_field(c, 1000.0, (0, 0, 0))
    assert s.H[2] == pytest.approx(5e4, rel=1e-8)
    assert s.B == pytest.approx(MU0 * s.H, rel=1e-15)
    c = CoilSpec(0.01, 1, 0.0, segments=1024)
    assert coil_field(c, 1000.0, (0, 0, 0)).H[2] == pytest.approx(5e4, rel=1e-8)


def test_zero_current():
    assert np.all(coil_field(REF_COIL, 0.0, (0.005, 0.002, 0.01)).H == 0.0)


def test_off_axis_matches_elliptic_oracle():
    a = 0.02
    c = CoilSpec(a, 1, 0.0, segments=1024)
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.05 * a, 2.5 * a, 1000)
    z = rng.uniform(-2 * a, 2 * a, 1000)
    # stay a little away from the filament itself
    far = np.hypot(rho - a, z) > 0.05 * a
    rho, z = rho[far], z[far]
    ph = rng.uniform(0, 2 * np.pi, len(rho))
    pts = np.stack([rho * np.cos(ph), rho * np.sin(ph), z], axis=1)
    H = coil_field_array(c, 1.0, pts)
    ref = np.array([loop_field_oracle(a, r, zz) for r, zz in zip(rho, z)])
    h_rho = H[:, 0] * np.cos(ph) + H[:, 1] * np.sin(ph)
    h_phi = -H[:, 0] * np.sin(ph) + H[:, 1] * np.cos(ph)
    scale = np.hypot(ref[:, 0], ref[:, 1])
    assert np.max(np.abs(h_rho - ref[:, 0]) / scale) < 1e-6
    assert np.max(np.abs(H[:, 2] - ref[:, 1]) / scale) < 1e-6
    assert np.max(np.abs(h_phi) / scale) < 1e-10


def test_singular_point():
    c = CoilSpec(0.01, 1, 0.0)
    with pytest.raises(SingularPoint):
        coil_field(c, 1.0, (0.01, 0.0, 0.0))
    coil_field(c, 1.0, (0.01 + 1e-6, 0.0, 0.0))


def test_coil_validation():
    with pytest.raises(ConfigError):
        CoilSpec(0.01, 2, 0.005, segments=32)
    with pytest.raises(ConfigError):
        CoilSpec(0.0, 2, 0.005)
    with pytest.raises(ConfigError):
        CoilSpec(0.01, 0, 0.005)
    assert REF_COIL.axial_extent == pytest.approx(0.04)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e5, 1e5), st.floats(0.001, 0.04), st.floats(-0.05, 0.05))
def test_linearity(I, rho, z):
    p = (rho, 0.3 * rho, z)
    h1 = coil_field(REF_COIL, 1.0, p).H
    assert np.allclose(coil_field(REF_COIL, I, p).H, I * h1, rtol=1e-13, atol=1e-300)


def test_superposition():
    pts = np.array([[0.005, 0.001, 0.003], [0.03, 0.0, -0.02], [0.0, 0.024, 0.011]])
    total = coil_field_array(REF_COIL, 1.0, pts)
    parts = sum(coil_field_array(CoilSpec(REF_COIL.radius, 1, 0.0, center_z=z), 1.0, pts)
                for z in REF_COIL.loop_z)
    scale = np.linalg.norm(total, axis=1, keepdims=True)
    assert np.all(np.abs(total - parts) <= 1e-12 * scale)


def test_magnetic_pressure():
    assert magnetic_pressure(0.0) == 0.0
    assert magnetic_pressure(1e6) == pytest.approx(6.283e5, rel=1e-4)
    assert magnetic_pressure(2e6) == pytest.approx(4 * magnetic_pressure(1e6), rel=1e-15)
    assert magnetic_pressure(-3e5) == magnetic_pressure(3e5)


def test_mutual_inductance_oracle():
    mpmath.mp.dps = 30
    a, b, d = 0.02, 0.0238, 0.006
    # Neumann double integral for two coaxial loops
    f = lambda t: mpmath.cos(t) / mpmath.sqrt(a * a + b * b + d * d - 2 * a * b * mpmath.cos(t))
    ref = float(MU0 / 2 * a * b * mpmath.quad(f, [0, mpmath.pi]) * 2)
    assert loop_mutual_inductance(a, b, d) == pytest.approx(ref, rel=1e-10)


def test_long_coil_gap_field():
    # a long solenoid inside a perfectly conducting bore: |K| = nI (a/b)^2
    a, b, pitch, L = 0.02, 0.0238, 0.002, 1.0
    coil = CoilSpec(a, 400, pitch)
    nz = 500
    z = (np.arange(nz) + 0.5) / nz * L - L / 2
    sol = solve_ring_currents(coil, 1.0, np.full(nz, b), z, np.full(nz, L / nz))
    K = sol.surface_current[np.abs(z) < 0.05]
    assert abs(K.mean()) == pytest.approx(1 / pitch * (a / b) ** 2, rel=5e-3)
    assert np.all(K < 0)


@pytest.fixture(scope="module")
def tube():
    return generate_tube_mesh(0.0238, 0.0012, 0.064, 32, 96, 2)


def test_zero_current_loads(tube):
    lf = build_surface_loads(tube, None, REF_COIL, 0.0)
    assert np.all(lf.forces == 0.0) and np.all(lf.pressure == 0.0)


@pytest.mark.parametrize("model", ["shielded", "free"])
def test_force_pressure_consistency(tube, model):
    lf = build_surface_loads(tube, None, REF_COIL, 1e5, model=model)
    assert np.all(lf.pressure >= 0)
    np.testing.assert_allclose(lf.forces, lf.pressure[:, None] * lf.area[:, None] * lf.normals,
                               rtol=1e-12, atol=1e-12 * np.abs(lf.forces).max())
    np.testing.assert_allclose(np.linalg.norm(lf.normals, axis=1), 1.0)


def test_pressure_sign_independent(tube):
    a = build_surface_loads(tube, None, REF_COIL, 1e5)
    b = build_surface_loads(tube, None, REF_COIL, -1e5)
    np.testing.assert_allclose(a.forces, b.forces, rtol=1e-12)


def test_loads_push_away_from_coil(tube):
    lf = build_surface_loads(tube, None, REF_COIL, 1e5)
    x = tube.nodes[lf.node_ids]
    radial = np.sum(lf.forces[:, :2] * x[:, :2], axis=1)
    assert np.all(radial >= 0)
    assert np.all(np.hypot(x[:, 0], x[:, 1]) == pytest.approx(tube.r_i))


def test_axial_profile_peaks_inside_coil(tube):
    lf = build_surface_loads(tube, None, REF_COIL, 1e5)
    z = tube.nodes[lf.node_ids, 2]
    zu = np.unique(np.round(z, 12))
    prof = np.array([lf.pressure[np.isclose(z, v)].mean() for v in zu])
    zmax = zu[np.argmax(prof)]
    assert abs(zmax) <= REF_COIL.axial_extent / 2 + REF_COIL.pitch / 2
    assert prof[0] < 0.1 * prof.max() and prof[-1] < 0.1 * prof.max()
    # the free-space scan has the same axial trend just outside the coil
    hz = coil_field_array(REF_COIL, 1e5, np.stack([np.zeros_like(zu), np.full_like(zu, 0.0238), zu], 1))[:, 2]
    assert abs(hz[len(zu) // 2]) > abs(hz[0])


def test_axisymmetric_force(tube):
    lf = build_surface_loads(tube, None, REF_COIL, 1e5)
    x = tube.nodes[lf.node_ids]
    ijk = tube.node_ijk()[lf.node_ids]
    fr = np.sum(lf.forces[:, :2] * x[:, :2], axis=1) / np.hypot(x[:, 0], x[:, 1])
    # total radial force per circumferential column
    cols = np.bincount(ijk[:, 1], weights=fr)
    assert np.var(cols) < 1e-8 * cols.mean() ** 2


@pytest.mark.parametrize("model", ["shielded", "free"])
def test_expansion_decreases_force(tube, model):
    forces = [build_surface_loads(tube, tube.nodes * [s, s, 1.0], REF_COIL, 1e5, model=model)
              .total_radial_force for s in (1.0, 1.02, 1.05)]
    assert forces[0] > forces[1] > forces[2]


def test_dead_facets_carry_nothing(tube):
    alive = np.ones(len(tube.inner_facets), dtype=bool)
    alive[:] = False
    lf = build_surface_loads(tube, None, REF_COIL, 1e5, facet_alive=alive)
    assert np.all(lf.forces == 0.0)


def test_load_csv(tube, tmp_path):
    lf = build_surface_loads(tube, None, REF_COIL, 1e5)
    path = lf.to_csv(tmp_path / "loads.csv", tube.nodes)
    lines = path.read_text().splitlines()
    assert lines[0] == "node_id,x,y,z,pressure_Pa,fx,fy,fz"
    assert len(lines) == len(lf.node_ids) + 1
    row = lines[1].split(",")
    assert float(row[4]) == lf.pressure[0]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emfp.errors import InvalidGeometry, LayoutOverlap
from emfp.mesh import (
    graded_axis,
    punch_graded_mesh,
    PunchLayout,
    RigidTool,
    generate_tube_mesh,
    place_punches,
    tool_signed_distance,
)

POINTED = RigidTool.pointed(math.radians(45), 0.3e-3, 2.5e-3)
CONCAVE = RigidTool.concave(3.0e-3, 0.2e-3, 0.5e-3)


def test_counts():
    m = generate_tube_mesh(0.02, 0.001, 0.01, 2, 8, 1)
    assert m.n_elements == 16
    assert m.n_nodes == 48


@pytest.mark.parametrize("dims", [(3, 8, 1), (5, 17, 3), (2, 64, 2)])
def test_positive_jacobians(dims):
    m = generate_tube_mesh(0.0238, 0.0012, 0.05, *dims)
    assert np.all(m.jacobians() > 0)
    assert np.all(m.jacobians(order=1) > 0)


@pytest.mark.parametrize("n_circ", [64, 96])
def test_volume_and_area(n_circ):
    r_i, t, L = 0.0238, 0.0012, 0.064
    m = generate_tube_mesh(r_i, t, L, 8, n_circ, 2)
    r_o = r_i + t
    assert m.volume() == pytest.approx(math.pi * (r_o ** 2 - r_i ** 2) * L, rel=5e-3)
    assert m.outer_area.sum() == pytest.approx(2 * math.pi * r_o * L, rel=5e-3)
    assert m.r_o - m.r_i == pytest.approx(t)


def test_outer_normals_radial():
    m = generate_tube_mesh(0.0238, 0.0012, 0.064, 6, 32, 2)
    n = m.facet_normals(m.outer_facets)
    c = m.nodes[m.outer_facets].mean(axis=1)
    radial = c * [1, 1, 0]
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    assert np.all(np.sum(n * radial, axis=1) > 0)
    ni = m.facet_normals(m.inner_facets)
    ci = m.nodes[m.inner_facets].mean(axis=1) * [1, 1, 0]
    assert np.all(np.sum(ni * ci, axis=1) < 0)


def test_invalid_geometry():
    with pytest.raises(InvalidGeometry):
        generate_tube_mesh(0.02, 0.0, 0.01, 2, 8, 1)
    with pytest.raises(InvalidGeometry):
        generate_tube_mesh(-0.02, 0.001, 0.01, 2, 8, 1)
    with pytest.raises(InvalidGeometry):
        generate_tube_mesh(0.02, 0.001, 0.01, 2, 4, 1)


def test_layout_12():
    tube = generate_tube_mesh(0.0238, 0.0012, 0.064, 4, 32, 1)
    tools = place_punches(PunchLayout(12), POINTED, tube, 0.5e-3)
    assert len(tools) == 12
    ang = sorted({round(math.degrees(math.atan2(t.axis[1], t.axis[0])) % 360, 9) for t in tools})
    assert ang == [0, 90, 180, 270]
    zs = sorted({round(t.origin[2], 12) for t in tools})
    assert zs == pytest.approx([-0.02, 0.0, 0.02])
    for t in tools:
        # lowest point sits at r_o + standoff, axis radial through the tube axis
        assert math.hypot(t.origin[0], t.origin[1]) == pytest.approx(tube.r_o + 0.5e-3)
        assert np.cross(np.asarray(t.origin) * [1, 1, 0], t.axis) == pytest.approx(np.zeros(3), abs=1e-15)


def test_layout_36_and_symmetry():
    tube = generate_tube_mesh(0.0238, 0.0012, 0.064, 4, 32, 1)
    lay = PunchLayout(36)
    tools = place_punches(lay, CONCAVE, tube, 0.5e-3)
    assert len(tools) == 36
    assert lay.angular_pitch == pytest.approx(math.radians(30))

    def poses(ts):
        return sorted((round(t.origin[0], 9) + 0.0, round(t.origin[1], 9) + 0.0, round(t.origin[2], 9) + 0.0)
                      for t in ts)

    rot = PunchLayout(36, angle_offset=lay.angular_pitch)
    assert poses(place_punches(rot, CONCAVE, tube, 0.5e-3)) == poses(tools)


def test_layout_overlap():
    tube = generate_tube_mesh(0.0238, 0.0012, 0.064, 4, 32, 1)
    fat = RigidTool.concave(8e-3, 0.5e-3, 1e-3)
    with pytest.raises(LayoutOverlap):
        place_punches(PunchLayout(36), fat, tube, 0.5e-3)
    with pytest.raises(InvalidGeometry):
        PunchLayout(10)


def test_surface_points_zero():
    t = POINTED.posed((0.03, 0.0, 0.0), (1.0, 0.0, 0.0))
    a = math.radians(45)
    # a point on the cone flank, between tip tangency and shank
    h_apex = 0.3e-3 - 0.3e-3 / math.sin(a)
    rho = 1.5e-3
    h = h_apex + rho / math.tan(a)
    d, n, tag = tool_signed_distance(t, (0.03 + h, rho, 0.0))
    assert abs(d) < 1e-12
    assert tag == 1
    assert tool_signed_distance(t, (0.03, 0.0, 0.0))[0] == pytest.approx(0.0, abs=1e-15)


def test_tip_axis_distance():
    t = POINTED.posed((0.03, 0.0, 0.0), (1.0, 0.0, 0.0))
    for dist in (1e-5, 1e-4, 2e-3):
        d, n, tag = tool_signed_distance(t, (0.03 - dist, 0.0, 0.0))
        assert d == pytest.approx(dist, rel=1e-12)
        assert n == pytest.approx([-1.0, 0.0, 0.0])
        assert tag == 0


def test_die_distance():
    die = RigidTool.die(0.028)
    d, n, _ = tool_signed_distance(die, (0.0, 0.028 + 10e-6, 0.01))
    assert d == pytest.approx(-10e-6, rel=1e-9)
    assert n == pytest.approx([0.0, -1.0, 0.0])


def _profile_samples(tool, spacing=2e-6):
    """Dense (rho, h) samples of the meridian outline, built from the tool
    parameters without the distance code."""
    if tool.kind == "pointed":
        a, rt, rs = tool.half_angle, tool.tip_radius, tool.shank_radius
        phis = np.linspace(-math.pi / 2, -a, max(8, int(rt * (math.pi / 2 - a) / spacing)))
        cap = np.stack([rt * np.cos(phis), rt + rt * np.sin(phis)], axis=1)
        p0 = cap[-1]
        h_apex = rt - rt / math.sin(a)
        p1 = np.array([rs, h_apex + rs / math.tan(a)])
        n = int(np.linalg.norm(p1 - p0) / spacing)
        cone = p0 + np.linspace(0, 1, n)[:, None] * (p1 - p0)
        shank = np.stack([np.full(int(0.01 / spacing), rs),
                          p1[1] + np.arange(int(0.01 / spacing)) * spacing], axis=1)
        return np.concatenate([cap, cone, shank])
    rc, rf, dc = tool.cutter_radius, tool.fillet, tool.concavity
    R = (rc ** 2 + dc ** 2) / (2 * dc)
    cz = dc - R
    # fillet centre: rc - rf from the axis, R + rf from the dish centre
    fz = cz + math.sqrt((R + rf) ** 2 - (rc - rf) ** 2)
    low = fz - rf
    ang_t = math.atan2(fz - cz, rc - rf)
    phis = np.linspace(ang_t, math.pi / 2, int(R * (math.pi / 2 - ang_t) / spacing))
    dish = np.stack([R * np.cos(phis), cz + R * np.sin(phis) - low], axis=1)
    phis = np.linspace(ang_t + math.pi - 2 * math.pi, 0.0, int(rf * math.pi / spacing))
    fil = np.stack([rc - rf + rf * np.cos(phis), fz + rf * np.sin(phis) - low], axis=1)
    side = np.stack([np.full(int(0.01 / spacing), rc),
                     fz - low + np.arange(int(0.01 / spacing)) * spacing], axis=1)
    return np.concatenate([dish, fil, side])


@pytest.mark.parametrize("template", [POINTED, CONCAVE], ids=["pointed", "concave"])
def test_distance_matches_brute_force(template):
    rng = np.random.default_rng(11)
    o = np.array([0.0251, 0.0, 0.0])
    axis = np.array([1.0, 0.0, 0.0])
    t = template.posed(o, axis)
    samples = _profile_samples(t)
    pts = o + rng.uniform([-2e-3, -4e-3, -4e-3], [5e-3, 4e-3, 4e-3], size=(400, 3))
    d, _, _ = t.signed_distance(pts)
    rel = pts - o
    h = rel @ axis
    rho = np.linalg.norm(rel - h[:, None] * axis, axis=1)
    bf = np.min(np.hypot(rho[:, None] - samples[None, :, 0], h[:, None] - samples[None, :, 1]), axis=1)
    keep = np.abs(d) > 5e-5
    assert keep.sum() > 200
    assert np.max(np.abs(np.abs(d[keep]) - bf[keep])) < 1e-6


@pytest.mark.parametrize("template", [POINTED, CONCAVE], ids=["pointed", "concave"])
def test_lipschitz_and_normals(template):
    rng = np.random.default_rng(5)
    t = template.posed((0.0251, 0, 0), (1, 0, 0))
    p = t.origin + rng.uniform(-4e-3, 4e-3, size=(2000, 3))
    q = p + rng.normal(scale=3e-4, size=p.shape)
    dp, n, _ = t.signed_distance(p)
    dq, _, _ = t.signed_distance(q)
    assert np.all(np.abs(dp - dq) <= np.linalg.norm(p - q, axis=1) + 1e-15)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    # moving a small step along the normal increases the distance at unit rate
    eps = 1e-7
    dn, _, _ = t.signed_distance(p + eps * n)
    smooth = np.abs(dp) > 1e-4
    assert np.allclose((dn - dp)[smooth] / eps, 1.0, atol=1e-4)


def test_concave_recess_and_rim():
    t = CONCAVE.posed((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    # centre of the dish is recessed by the concavity depth above the rim
    lowest = t._lower_profile(np.array([0.0]))[0]
    rim = t._lower_profile(np.array([t.cutter_radius - t.fillet]))[0]
    assert lowest - rim == pytest.approx(t.concavity, rel=0.2)
    d, _, tag = tool_signed_distance(t, (0.0, 0.0, lowest - 1e-4))
    assert d == pytest.approx(1e-4, rel=1e-9)
    assert tag == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 2e-3), st.floats(-3e-3, 3e-3))
def test_continuity_across_patches(rho, h):
    t = POINTED.posed((0, 0, 0), (0, 0, 1))
    p = np.array([[rho, 0.0, h], [rho + 1e-9, 0.0, h + 1e-9]])
    d, _, _ = t.signed_distance(p)
    assert abs(d[0] - d[1]) <= 2e-9


def test_graded_axis_windows():
    x = graded_axis(-0.032, 0.032, [-0.02, 0.0, 0.02], 3.6e-3, 0.6e-3, 2.7e-3)
    assert x[0] == -0.032 and x[-1] == 0.032 and np.all(np.diff(x) > 0)
    for c in (-0.02, 0.0, 0.02):
        assert np.min(np.abs(x - c)) < 1e-12
        inside = x[np.abs(x - c) <= 3.6e-3 + 1e-12]
        assert np.max(np.diff(inside)) <= 0.6e-3 + 1e-12
    assert np.max(np.diff(x)) <= 2.7e-3 * 1.05
    # no jump in size larger than the growth law allows
    h = np.diff(x)
    assert np.max(h[1:] / h[:-1]) < 1.6


def test_graded_axis_rejects_overlap():
    with pytest.raises(InvalidGeometry):
        graded_axis(0.0, 0.01, [0.004, 0.006], 2e-3, 0.5e-3, 1e-3)


@pytest.mark.parametrize("count", [12, 36])
def test_punch_graded_mesh(count):
    lay = PunchLayout(count)
    m = punch_graded_mesh(0.0238, 0.0012, 0.064, 2, lay, 3.6e-3, 0.6e-3, 2.7e-3)
    assert np.all(m.jacobians() > 0)
    # every punch axis passes through an outer-surface node line
    p = m.nodes[m.node_id(0, np.arange(m.n_circ), 2)]
    th = np.arctan2(p[:, 1], p[:, 0])
    for a in lay.angles:
        assert np.min(np.abs(np.angle(np.exp(1j * (th - a))))) < 1e-12
    # volume of the polygonal prism, column by column
    z = m.nodes[m.node_id(np.arange(m.n_axial + 1), 0, 0), 2]
    dth = np.diff(np.unwrap(np.append(th, th[0] + 2 * np.pi)))
    ref = 0.5 * np.sum(np.sin(dth)) * (0.025 ** 2 - 0.0238 ** 2) * (z[-1] - z[0])
    assert m.volume() == pytest.approx(ref, rel=1e-12)


def test_explicit_node_arrays_validated():
    with pytest.raises(InvalidGeometry):
        generate_tube_mesh(0.01, 0.001, 0.02, 2, 8, 1, z_nodes=[-0.01, 0.0, 0.011])
    with pytest.raises(InvalidGeometry):
        generate_tube_mesh(0.01, 0.001, 0.02, 2, 8, 1, theta_nodes=np.linspace(0, 7, 8))

"""Structured hexahedral tube mesh, punch layouts and rigid tool surfaces.

The tube axis is z and the tube is centred on z = 0. Nodes are indexed
``(i_axial, j_circ, k_radial)``; element local axes run radial (xi),
circumferential (eta), axial (zeta), which makes every element
right-handed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidGeometry, LayoutOverlap

GAUSS = 1.0 / math.sqrt(3.0)
HEX_CORNERS = np.array([
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
], dtype=float)
# local node numbers of the xi=-1 (inner) and xi=+1 (outer) faces, ordered
# so that the quad normal points away from the element
INNER_FACE = (0, 4, 7, 3)
OUTER_FACE = (1, 2, 6, 5)
# face-adjacency: (local face nodes) for the six faces, used for graph work
HEX_FACES = ((0, 4, 7, 3), (1, 2, 6, 5), (0, 1, 5, 4), (3, 7, 6, 2), (0, 3, 2, 1), (4, 5, 6, 7))


def hex_shape_derivs(points: np.ndarray) -> np.ndarray:
    """dN/dxi for the 8-node brick at local ``points`` (q, 3) -> (q, 8, 3)."""
    points = np.atleast_2d(points)
    c = HEX_CORNERS
    x = 1.0 + points[:, None, :] * c[None, :, :]  # (q, 8, 3)
    d = np.empty((points.shape[0], 8, 3))
    d[:, :, 0] = c[:, 0] * x[:, :, 1] * x[:, :, 2] / 8.0
    d[:, :, 1] = c[:, 1] * x[:, :, 0] * x[:, :, 2] / 8.0
    d[:, :, 2] = c[:, 2] * x[:, :, 0] * x[:, :, 1] / 8.0
    return d


def hex_shape_values(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    return np.prod(1.0 + points[:, None, :] * HEX_CORNERS[None, :, :], axis=2) / 8.0


def gauss_points(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the bi-unit cube: order 2 (8 points) or 1 (centroid)."""
    if order == 1:
        return np.zeros((1, 3)), np.array([8.0])
    if order == 2:
        return HEX_CORNERS * GAUSS, np.ones(8)
    raise ValueError("quadrature order must be 1 or 2")


@dataclass(frozen=True, eq=False)
class TubeMesh:
    nodes: np.ndarray
    elements: np.ndarray
    r_i: float
    r_o: float
    length: float
    n_axial: int
    n_circ: int
    n_thickness: int
    inner_facets: np.ndarray = field(repr=False)
    outer_facets: np.ndarray = field(repr=False)
    inner_area: np.ndarray = field(repr=False)
    outer_area: np.ndarray = field(repr=False)

    @property
    def thickness(self) -> float:
        return self.r_o - self.r_i

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def node_id(self, i, j, k):
        return (np.asarray(i) * self.n_circ + np.mod(j, self.n_circ)) * (self.n_thickness + 1) + np.asarray(k)

    def element_id(self, i, j, k):
        return (np.asarray(i) * self.n_circ + np.mod(j, self.n_circ)) * self.n_thickness + np.asarray(k)

    def element_ijk(self) -> np.ndarray:
        e = np.arange(self.n_elements)
        k = e % self.n_thickness
        j = (e // self.n_thickness) % self.n_circ
        i = e // (self.n_thickness * self.n_circ)
        return np.stack([i, j, k], axis=1)

    def node_ijk(self) -> np.ndarray:
        n = np.arange(self.n_nodes)
        nk = self.n_thickness + 1
        return np.stack([n // (nk * self.n_circ), (n // nk) % self.n_circ, n % nk], axis=1)

    @property
    def end_ring_nodes(self) -> np.ndarray:
        ijk = self.node_ijk()
        return np.nonzero((ijk[:, 0] == 0) | (ijk[:, 0] == self.n_axial))[0]

    def jacobians(self, x: np.ndarray | None = None, order: int = 2) -> np.ndarray:
        """Jacobian determinants per element and quadrature point (E, q)."""
        x = self.nodes if x is None else x
        pts, _ = gauss_points(order)
        dN = hex_shape_derivs(pts)
        xe = x[self.elements]  # (E, 8, 3)
        J = np.einsum("qai,eaj->eqij", dN, xe)
        return np.linalg.det(J)

    def element_volumes(self, x: np.ndarray | None = None) -> np.ndarray:
        _, w = gauss_points(2)
        return self.jacobians(x, 2) @ w

    def volume(self, x: np.ndarray | None = None) -> float:
        return float(np.sum(self.element_volumes(x)))

    def facet_normals(self, facets: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        """Unit normals of quad facets (n, 4) from the diagonal cross product."""
        x = self.nodes if x is None else x
        a, b, c, d = (x[facets[:, m]] for m in range(4))
        n = np.cross(c - a, d - b)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def edge_lengths(self, x: np.ndarray | None = None) -> np.ndarray:
        """Lengths of the 12 edges of every element (E, 12)."""
        x = self.nodes if x is None else x
        pairs = np.array([(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4),
                          (0, 4), (1, 5), (2, 6), (3, 7)])
        xe = x[self.elements]
        return np.linalg.norm(xe[:, pairs[:, 0]] - xe[:, pairs[:, 1]], axis=2)


def quad_tributary_areas(x: np.ndarray, facets: np.ndarray, n_nodes: int) -> np.ndarray:
    a, b, c, d = (x[facets[:, m]] for m in range(4))
    area = 0.5 * np.linalg.norm(np.cross(c - a, d - b), axis=1)
    out = np.zeros(n_nodes)
    for m in range(4):
        np.add.at(out, facets[:, m], 0.25 * area)
    return out


def generate_tube_mesh(r_i: float, thickness: float, length: float, n_axial: int,
                       n_circ: int, n_thickness: int, *, z_nodes=None, theta_nodes=None) -> TubeMesh:
    """Structured cylindrical hex grid of a tube centred on z = 0.

    ``z_nodes`` (n_axial + 1 increasing values spanning the length) and
    ``theta_nodes`` (n_circ increasing angles covering less than one turn)
    replace the uniform spacing; see :func:`graded_axis`.

    Raises
    ------
    InvalidGeometry
        Non-positive radius, thickness or length, too few divisions, or
        inconsistent node coordinates.
    """
    if not r_i > 0 or not thickness > 0 or not length > 0:
        raise InvalidGeometry("r_i, thickness and length must be > 0")
    if min(n_axial, n_thickness) < 1 or n_circ < 8:
        raise InvalidGeometry("need n_axial, n_thickness >= 1 and n_circ >= 8")
    na, nc, nt = int(n_axial), int(n_circ), int(n_thickness)
    zs = -0.5 * length + length * np.arange(na + 1) / na if z_nodes is None else np.asarray(z_nodes, float)
    ths = 2.0 * np.pi * np.arange(nc) / nc if theta_nodes is None else np.asarray(theta_nodes, float)
    if zs.shape != (na + 1,) or ths.shape != (nc,):
        raise InvalidGeometry("node coordinate arrays do not match the division counts")
    if np.any(np.diff(zs) <= 0) or np.any(np.diff(ths) <= 0) or ths[-1] - ths[0] >= 2.0 * np.pi:
        raise InvalidGeometry("node coordinates must increase and angles span under one turn")
    if not (math.isclose(zs[0], -0.5 * length) and math.isclose(zs[-1], 0.5 * length)):
        raise InvalidGeometry("axial nodes must span the tube length")
    i, j, k = np.meshgrid(np.arange(na + 1), np.arange(nc), np.arange(nt + 1), indexing="ij")
    r = r_i + thickness * k / nt
    th = ths[j]
    z = zs[i]
    nodes = np.stack([r * np.cos(th), r * np.sin(th), z], axis=-1).reshape(-1, 3)

    def nid(i, j, k):
        return (i * nc + j % nc) * (nt + 1) + k

    ei, ej, ek = (a.ravel() for a in np.meshgrid(np.arange(na), np.arange(nc), np.arange(nt),
                                                  indexing="ij"))
    elements = np.stack([
        nid(ei, ej, ek), nid(ei, ej, ek + 1), nid(ei, ej + 1, ek + 1), nid(ei, ej + 1, ek),
        nid(ei + 1, ej, ek), nid(ei + 1, ej, ek + 1), nid(ei + 1, ej + 1, ek + 1),
        nid(ei + 1, ej + 1, ek),
    ], axis=1).astype(np.int64)
    inner = elements[ek == 0][:, INNER_FACE]
    outer = elements[ek == nt - 1][:, OUTER_FACE]
    n = nodes.shape[0]
    return TubeMesh(nodes=nodes, elements=elements, r_i=float(r_i), r_o=float(r_i + thickness),
                    length=float(length), n_axial=na, n_circ=nc, n_thickness=nt,
                    inner_facets=inner, outer_facets=outer,
                    inner_area=quad_tributary_areas(nodes, inner, n),
                    outer_area=quad_tributary_areas(nodes, outer, n))


def _graded_gap(a: float, b: float, fine: float, coarse: float, growth: float,
                fine_left: bool, fine_right: bool) -> np.ndarray:
    """Interior node positions on (a, b), sized by the distance to fine ends."""
    s = np.linspace(a, b, 2001)
    d = np.full_like(s, np.inf)
    if fine_left:
        d = np.minimum(d, s - a)
    if fine_right:
        d = np.minimum(d, b - s)
    h = np.minimum(coarse, fine + growth * np.where(np.isfinite(d), d, np.inf))
    F = np.concatenate([[0.0], np.cumsum(0.5 * (1.0 / h[1:] + 1.0 / h[:-1]) * np.diff(s))])
    n = max(1, int(round(F[-1])))
    return np.interp(np.arange(1, n) * F[-1] / n, F, s)


def graded_axis(start: float, stop: float, centers, half_width: float, fine: float,
                coarse: float, growth: float = 0.3) -> np.ndarray:
    """Node coordinates on [start, stop] with uniform cells of size <= ``fine``
    over ``center +/- half_width`` and cells growing linearly (rate
    ``growth``) up to ``coarse`` between windows. Every centre is a node.
    Windows are clipped to the interval and must not overlap.
    """
    if not (0 < fine <= coarse) or half_width <= 0 or growth <= 0:
        raise InvalidGeometry("need 0 < fine <= coarse, half_width > 0 and growth > 0")
    wins = []
    for c in sorted(float(c) for c in centers):
        n = 2 * max(1, math.ceil(half_width / fine))
        w = c + half_width * np.linspace(-1.0, 1.0, n + 1)
        w = w[(w >= start - 1e-12) & (w <= stop + 1e-12)]
        if wins and w.size and w[0] < wins[-1][-1] - 1e-12:
            raise InvalidGeometry("refinement windows overlap")
        if w.size:
            wins.append(w)
    pts = []
    edge, fine_edge = start, False
    for w in wins:
        if w[0] > edge + 1e-12:
            pts.append([edge])
            pts.append(_graded_gap(edge, w[0], fine, coarse, growth, fine_edge, True))
        pts.append(w)
        edge, fine_edge = w[-1], True
    if stop > edge + 1e-12:
        pts.append([edge])
        pts.append(_graded_gap(edge, stop, fine, coarse, growth, fine_edge, False))
        pts.append([stop])
    x = np.unique(np.round(np.concatenate(pts), 15))
    x[0], x[-1] = start, stop
    return x


def punch_graded_mesh(r_i: float, thickness: float, length: float, n_thickness: int,
                      layout: "PunchLayout", half_width: float, fine: float, coarse: float,
                      growth: float = 0.3) -> TubeMesh:
    """Tube mesh refined around every punch site of ``layout``.

    Sizes are arc lengths on the outer surface. The punch axes fall on node
    lines.
    """
    r_o = r_i + thickness
    z = graded_axis(-0.5 * length, 0.5 * length, layout.axial_positions, half_width, fine, coarse, growth)
    pitch = layout.angular_pitch * r_o
    s0 = layout.angle_offset * r_o - 0.5 * pitch
    s = graded_axis(s0, s0 + pitch, [layout.angle_offset * r_o], half_width, fine, coarse, growth)[:-1]
    theta = np.concatenate([s / r_o + m * layout.angular_pitch for m in range(layout.per_set)])
    return generate_tube_mesh(r_i, thickness, length, len(z) - 1, len(theta), n_thickness,
                              z_nodes=z, theta_nodes=theta)


# ---------------------------------------------------------------------------
# rigid tools
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Arc:
    center: tuple
    radius: float
    phi0: float
    phi1: float
    convex: bool  # True when the solid lies inside the circle

    def closest(self, rho, h):
        vr, vh = rho - self.center[0], h - self.center[1]
        phi = np.arctan2(vh, vr)
        norm = np.hypot(vr, vh)
        safe = np.where(norm > 0, norm, 1.0)
        in_range = (phi >= self.phi0) & (phi <= self.phi1) & (norm > 0)
        e0 = (self.center[0] + self.radius * math.cos(self.phi0),
              self.center[1] + self.radius * math.sin(self.phi0))
        e1 = (self.center[0] + self.radius * math.cos(self.phi1),
              self.center[1] + self.radius * math.sin(self.phi1))
        d0 = np.hypot(rho - e0[0], h - e0[1])
        d1 = np.hypot(rho - e1[0], h - e1[1])
        er = np.where(d0 <= d1, e0[0], e1[0])
        eh = np.where(d0 <= d1, e0[1], e1[1])
        qr = np.where(in_range, self.center[0] + self.radius * vr / safe, er)
        qh = np.where(in_range, self.center[1] + self.radius * vh / safe, eh)
        # outward normal of the solid at q
        nr = (qr - self.center[0]) / self.radius
        nh = (qh - self.center[1]) / self.radius
        if not self.convex:
            nr, nh = -nr, -nh
        return qr, qh, nr, nh


@dataclass(frozen=True)
class _Segment:
    a: tuple
    b: tuple
    normal: tuple  # outward normal of the solid
    ray: bool = False  # extend beyond b to infinity

    def closest(self, rho, h):
        ar, ah = self.a
        dr, dh = self.b[0] - ar, self.b[1] - ah
        L2 = dr * dr + dh * dh
        t = ((rho - ar) * dr + (h - ah) * dh) / L2
        t = np.maximum(t, 0.0) if self.ray else np.clip(t, 0.0, 1.0)
        qr = ar + t * dr
        qh = ah + t * dh
        return qr, qh, np.full_like(qr, self.normal[0]), np.full_like(qr, self.normal[1])


@dataclass(frozen=True)
class RigidTool:
    """Analytic rigid surface.

    Punches are solids of revolution about their own axis; ``origin`` is the
    lowest point of the tool on that axis side facing the tube and ``axis``
    points from the tube axis outward (into the tool). A die is the region
    outside a bore of radius ``bore_radius`` coaxial with the tube.

    Pointed: sphere-capped cone (``half_angle``, ``tip_radius``) blending
    into a cylindrical shank of ``shank_radius``. Concave: cylinder of
    ``cutter_radius`` with a spherically recessed end face of depth
    ``concavity`` and a rim fillet of radius ``fillet``.
    """

    kind: str
    half_angle: float = 0.0
    tip_radius: float = 0.0
    shank_radius: float = 0.0
    cutter_radius: float = 0.0
    fillet: float = 0.0
    concavity: float = 0.0
    bore_radius: float = 0.0
    origin: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind == "pointed":
            if not (0 < self.half_angle < math.pi / 2):
                raise InvalidGeometry("half angle must lie in (0, pi/2)")
            if not (self.tip_radius > 0 and self.shank_radius > 0):
                raise InvalidGeometry("tip and shank radii must be > 0")
            if self.shank_radius <= self.tip_radius * math.cos(self.half_angle):
                raise InvalidGeometry("shank radius too small for the tip radius")
        elif self.kind == "concave":
            if not (self.cutter_radius > 0 and self.fillet > 0 and self.concavity > 0):
                raise InvalidGeometry("cutter radius, fillet and concavity must be > 0")
            if self.fillet >= 0.5 * self.cutter_radius or self.concavity >= self.cutter_radius:
                raise InvalidGeometry("fillet or concavity too large for the cutter")
        elif self.kind == "die":
            if not self.bore_radius > 0:
                raise InvalidGeometry("bore radius must be > 0")
        else:
            raise InvalidGeometry(f"unknown tool kind {self.kind!r}")
        a = np.asarray(self.axis, dtype=float)
        a = a / np.linalg.norm(a)
        object.__setattr__(self, "axis", tuple(float(v) for v in a))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @classmethod
    def pointed(cls, half_angle, tip_radius, shank_radius, **kw):
        return cls("pointed", half_angle=half_angle, tip_radius=tip_radius,
                   shank_radius=shank_radius, **kw)

    @classmethod
    def concave(cls, cutter_radius, fillet, concavity, **kw):
        return cls("concave", cutter_radius=cutter_radius, fillet=fillet,
                   concavity=concavity, **kw)

    @classmethod
    def die(cls, bore_radius):
        return cls("die", bore_radius=bore_radius, axis=(0.0, 0.0, 1.0))

    def posed(self, origin, axis) -> "RigidTool":
        return replace(self, origin=tuple(origin), axis=tuple(axis))

    @property
    def footprint_radius(self) -> float:
        return self.shank_radius if self.kind == "pointed" else self.cutter_radius

    @property
    def cross_section_area(self) -> float:
        return math.pi * self.footprint_radius ** 2

    # -- meridian profile ---------------------------------------------------
    def _profile(self):
        """Boundary pieces in (rho, h) with h measured from the lowest point."""
        if self.kind == "pointed":
            a, rt, rs = self.half_angle, self.tip_radius, self.shank_radius
            c = (0.0, rt)
            t1 = (rt * math.cos(a), rt - rt * math.sin(a))
            h_apex = rt - rt / math.sin(a)
            t2 = (rs, h_apex + rs / math.tan(a))
            cone_n = (math.cos(a), -math.sin(a))
            return [
                _Arc(c, rt, -math.pi / 2, -a, True),
                _Segment(t1, t2, cone_n),
                _Segment(t2, (rs, t2[1] + 1.0), (1.0, 0.0), ray=True),
            ]
        rc, rf, dc = self.cutter_radius, self.fillet, self.concavity
        R = (rc * rc + dc * dc) / (2.0 * dc)
        hcs = dc - R
        fr = rc - rf
        fh = hcs + math.sqrt((R + rf) ** 2 - fr * fr)
        u = np.array([fr, fh - hcs])
        u /= np.linalg.norm(u)
        t1 = (R * u[0], hcs + R * u[1])
        phi_dish = math.atan2(u[1], u[0])
        phi_f0 = math.atan2(-u[1], -u[0])
        lowest = fh - rf
        pieces = [
            _Arc((0.0, hcs - lowest), R, phi_dish, math.pi / 2, False),
            _Arc((fr, fh - lowest), rf, phi_f0, 0.0, True),
            _Segment((rc, fh - lowest), (rc, fh - lowest + 1.0), (1.0, 0.0), ray=True),
        ]
        return pieces

    def _lower_profile(self, rho):
        """Height of the lower surface at radius ``rho`` (inf outside footprint)."""
        out = np.full_like(rho, np.inf)
        if self.kind == "pointed":
            a, rt = self.half_angle, self.tip_radius
            rho_t = rt * math.cos(a)
            h_apex = rt - rt / math.sin(a)
            cap = rt - np.sqrt(np.maximum(rt * rt - rho * rho, 0.0))
            cone = h_apex + rho / math.tan(a)
            out = np.where(rho <= rho_t, cap, cone)
            return np.where(rho <= self.shank_radius, out, np.inf)
        rc, rf, dc = self.cutter_radius, self.fillet, self.concavity
        R = (rc * rc + dc * dc) / (2.0 * dc)
        hcs = dc - R
        fr = rc - rf
        fh = hcs + math.sqrt((R + rf) ** 2 - fr * fr)
        u = np.array([fr, fh - hcs]) / math.hypot(fr, fh - hcs)
        t1r = R * u[0]
        lowest = fh - rf
        dish = hcs + np.sqrt(np.maximum(R * R - rho * rho, 0.0))
        fil = fh - np.sqrt(np.maximum(rf * rf - (rho - fr) ** 2, 0.0))
        out = np.where(rho <= t1r, dish, fil) - lowest
        return np.where(rho <= rc, out, np.inf)

    def local_coords(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.origin)
        a = np.asarray(self.axis)
        h = p @ a
        radial = p - h[:, None] * a
        rho = np.linalg.norm(radial, axis=1)
        return rho, h, radial

    def signed_distance(self, points):
        """Signed distance (negative inside), outward unit normal, patch tag."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "die":
            rxy = np.hypot(pts[:, 0], pts[:, 1])
            d = self.bore_radius - rxy
            safe = np.where(rxy > 0, rxy, 1.0)
            n = np.zeros_like(pts)
            n[:, 0] = -np.where(rxy > 0, pts[:, 0] / safe, 1.0)
            n[:, 1] = -np.where(rxy > 0, pts[:, 1] / safe, 0.0)
            return d, n, np.zeros(len(pts), dtype=np.int64)
        rho, h, radial = self.local_coords(pts)
        best = np.full(len(pts), np.inf)
        qn_r = np.zeros(len(pts))
        qn_h = np.zeros(len(pts))
        q_r = np.zeros(len(pts))
        q_h = np.zeros(len(pts))
        tag = np.zeros(len(pts), dtype=np.int64)
        for t, piece in enumerate(self._profile()):
            qr, qh, nr, nh = piece.closest(rho, h)
            d = np.hypot(rho - qr, h - qh)
            better = d < best
            best = np.where(better, d, best)
            q_r = np.where(better, qr, q_r)
            q_h = np.where(better, qh, q_h)
            qn_r = np.where(better, nr, qn_r)
            qn_h = np.where(better, nh, qn_h)
            tag = np.where(better, t, tag)
        inside = (rho <= self.footprint_radius) & (h >= self._lower_profile(rho))
        dist = np.where(inside, -best, best)
        # outside points: normal along p - q unless on the surface
        vr, vh = rho - q_r, h - q_h
        vn = np.hypot(vr, vh)
        use_v = (~inside) & (vn > 1e-14)
        safe = np.where(use_v, vn, 1.0)
        n_r = np.where(use_v, vr / safe, qn_r)
        n_h = np.where(use_v, vh / safe, qn_h)
        a = np.asarray(self.axis)
        e_r = np.zeros_like(pts)
        nz = rho > 1e-15
        e_r[nz] = radial[nz] / rho[nz, None]
        if np.any(~nz):
            # any direction perpendicular to the axis
            perp = np.cross(a, [0.0, 0.0, 1.0])
            if np.linalg.norm(perp) < 1e-12:
                perp = np.cross(a, [1.0, 0.0, 0.0])
            e_r[~nz] = perp / np.linalg.norm(perp)
        normal = n_r[:, None] * e_r + n_h[:, None] * a[None, :]
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        return dist, normal, tag

    def bounding_box(self, reach: float):
        """Axis-aligned box enclosing the tool surface up to ``reach`` along its axis."""
        o = np.asarray(self.origin)
        a = np.asarray(self.axis)
        r = self.footprint_radius
        ends = np.stack([o, o + reach * a])
        ext = r * np.sqrt(np.maximum(1.0 - a * a, 0.0))
        return ends.min(axis=0) - ext, ends.max(axis=0) + ext


def tool_signed_distance(tool: RigidTool, point):
    """Signed distance, outward normal and patch tag for one point or an array."""
    d, n, t = tool.signed_distance(point)
    if np.ndim(point) == 1:
        return float(d[0]), n[0], int(t[0])
    return d, n, t


@dataclass(frozen=True)
class PunchLayout:
    """Punch positions: ``n_sets`` axial rings, evenly spaced in angle."""

    count: int
    set_spacing: float = 0.020
    n_sets: int = 3
    angle_offset: float = 0.0

    def __post_init__(self):
        if self.count not in (12, 36):
            raise InvalidGeometry("punch count must be 12 or 36")
        if self.count % self.n_sets:
            raise InvalidGeometry("punch count must divide evenly among sets")

    @property
    def per_set(self) -> int:
        return self.count // self.n_sets

    @property
    def angular_pitch(self) -> float:
        return 2.0 * math.pi / self.per_set

    @property
    def axial_positions(self) -> np.ndarray:
        return (np.arange(self.n_sets) - 0.5 * (self.n_sets - 1)) * self.set_spacing

    @property
    def angles(self) -> np.ndarray:
        return self.angle_offset + np.arange(self.per_set) * self.angular_pitch

    def sites(self) -> list[tuple[int, int, float, float]]:
        """(set index, angular index, z, theta) per punch id."""
        return [(s, a, float(z), float(th))
                for s, z in enumerate(self.axial_positions)
                for a, th in enumerate(self.angles)]

    def site_name(self, punch_id: int) -> str:
        s, a = divmod(punch_id, self.per_set)
        mid = (self.n_sets - 1) / 2
        where = "center" if s == mid else ("end-" if s < mid else "end+")
        return f"{where}:{a}"


def place_punches(layout: PunchLayout, template: RigidTool, tube: TubeMesh,
                  standoff: float) -> list[RigidTool]:
    """Pose copies of ``template`` radially at every layout site.

    The lowest point of each tool sits ``standoff`` outside the tube's outer
    surface. Raises :class:`LayoutOverlap` if two tool footprints intersect.
    """
    if template.kind == "die":
        raise InvalidGeometry("punch template cannot be a die")
    if standoff < 0:
        raise InvalidGeometry("standoff must be >= 0")
    r_tip = tube.r_o + standoff
    tools, tips = [], []
    for _, _, z, th in layout.sites():
        a = np.array([math.cos(th), math.sin(th), 0.0])
        o = r_tip * a + np.array([0.0, 0.0, z])
        tools.append(template.posed(o, a))
        tips.append(o)
    tips = np.array(tips)
    r = template.footprint_radius
    d = np.linalg.norm(tips[:, None, :] - tips[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    if np.any(d < 2.0 * r):
        i, j = np.unravel_index(np.argmin(d), d.shape)
        raise LayoutOverlap(f"punches {i} and {j} overlap ({d[i, j]:.4g} m < {2 * r:.4g} m)")
    return tools

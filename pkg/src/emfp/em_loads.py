"""Coil field, skin depth and magnetic pressure loads on the tube.

The coil is a stack of coaxial circular loops on the tube axis. Fields are
summed over arc segments of each loop with Gauss-Legendre quadrature of the
Biot-Savart kernel, so the loop centre is exact and off-axis points converge
far faster than with straight chords.

Surface loads use a shielding model: the tube bore is treated as a stack of
perfectly conducting rings, one per axial facet row. Ring currents are
chosen so that no ring links net flux, and the gap field next to each ring
equals its surface current density ``K = i / w``. The resulting pressure
``eta * mu * K**2 / 2`` acts on the bore, pushing the wall away from the coil.
A ``"free"`` model that evaluates the unshielded axial coil field at the
outer surface is kept for comparison.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import ellipe, ellipk

from .errors import ConfigError, SingularPoint
from .mesh import TubeMesh

MU0 = 4e-7 * math.pi
SINGULAR_DISTANCE = 1e-9
# geometric mean distance of a thin strip from itself, as a fraction of width
STRIP_GMD = math.exp(-1.5)


class ShieldingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CoilSpec:
    radius: float
    turns: int
    pitch: float
    center_z: float = 0.0
    segments: int = 64
    quad_order: int = 4

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("coil radius must be > 0")
        if self.turns < 1:
            raise ConfigError("coil needs at least one turn")
        if self.turns > 1 and not self.pitch > 0:
            raise ConfigError("coil pitch must be > 0")
        if self.segments < 64:
            raise ConfigError("coil loops need at least 64 segments")
        if self.quad_order < 1:
            raise ConfigError("quadrature order must be >= 1")

    @property
    def loop_z(self) -> np.ndarray:
        k = np.arange(self.turns) - 0.5 * (self.turns - 1)
        return self.center_z + k * self.pitch

    @property
    def axial_extent(self) -> float:
        return self.pitch * (self.turns - 1)


@dataclass(frozen=True)
class FieldSample:
    H: np.ndarray
    B: np.ndarray
    position: np.ndarray
    mu: float = MU0
    J: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class LoadField:
    node_ids: np.ndarray
    normals: np.ndarray
    pressure: np.ndarray
    forces: np.ndarray
    time: float = 0.0
    area: np.ndarray | None = None

    @property
    def total_radial_force(self) -> float:
        return float(np.sum(np.linalg.norm(self.forces[:, :2], axis=1)))

    def to_csv(self, path, positions: np.ndarray) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "x", "y", "z", "pressure_Pa", "fx", "fy", "fz"])
            for n, p, f in zip(self.node_ids, self.pressure, self.forces):
                x = positions[n]
                w.writerow([int(n)] + [f"{v:.17g}" for v in (*x, p, *f)])
        return path


@dataclass(frozen=True)
class ShieldingReport:
    skin_depth: float
    wall: float
    ratio: float
    valid: bool


def skin_depth(conductivity: float, permeability: float, angular_frequency: float) -> float:
    if min(conductivity, permeability, angular_frequency) <= 0:
        raise ValueError("conductivity, permeability and frequency must be > 0")
    return math.sqrt(2.0 / (angular_frequency * permeability * conductivity))


def shielding_check(wall: float, delta: float) -> ShieldingReport:
    """Compare wall thickness with skin depth; warns when shielding is doubtful."""
    if wall <= 0 or delta <= 0:
        raise ValueError("wall and skin depth must be > 0")
    ratio = wall / delta
    valid = ratio >= 1.0
    if not valid:
        warnings.warn(f"wall {wall:.3g} m is thinner than the skin depth {delta:.3g} m; "
                      "full shielding overestimates the pressure", ShieldingWarning, stacklevel=2)
    return ShieldingReport(delta, wall, ratio, valid)


def magnetic_pressure(H_gap, mu: float = MU0):
    return 0.5 * mu * np.square(H_gap)


# ---------------------------------------------------------------------------
# Biot-Savart
# ---------------------------------------------------------------------------

@njit(cache=True)
def _loop_field_kernel(points, radii, zs, n_seg, gx, gw, out):
    """H per unit current from coaxial loops at ``points``; returns the index
    of the first point closer than the singular distance, or -1."""
    two_pi = 2.0 * math.pi
    dphi = two_pi / n_seg
    for p in range(points.shape[0]):
        px, py, pz = points[p, 0], points[p, 1], points[p, 2]
        rho = math.sqrt(px * px + py * py)
        hx = hy = hz = 0.0
        for l in range(radii.shape[0]):
            a = radii[l]
            dz = pz - zs[l]
            if math.sqrt((rho - a) ** 2 + dz * dz) < 1e-9:
                return p
            for s in range(n_seg):
                mid = (s + 0.5) * dphi
                for g in range(gx.shape[0]):
                    phi = mid + 0.5 * dphi * gx[g]
                    c, sn = math.cos(phi), math.sin(phi)
                    # dl = a dphi (-sin, cos, 0); r = p - a (cos, sin, 0)
                    rx, ry = px - a * c, py - a * sn
                    r2 = rx * rx + ry * ry + dz * dz
                    w = gw[g] * 0.5 * dphi * a / (r2 * math.sqrt(r2))
                    hx += w * (c * dz)
                    hy += w * (sn * dz)
                    hz += w * (-sn * ry - c * rx)
        out[p, 0] = hx / (4.0 * math.pi)
        out[p, 1] = hy / (4.0 * math.pi)
        out[p, 2] = hz / (4.0 * math.pi)
    return -1


def coil_field_array(coil: CoilSpec, I: float, points) -> np.ndarray:
    """H (A/m) at an (n, 3) array of points."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    out = np.zeros_like(pts)
    gx, gw = np.polynomial.legendre.leggauss(coil.quad_order)
    zs = coil.loop_z
    radii = np.full(zs.shape, float(coil.radius))
    bad = _loop_field_kernel(pts, radii, zs, int(coil.segments), gx, gw, out)
    if bad >= 0:
        raise SingularPoint(f"point {pts[bad].tolist()} lies on a coil filament")
    return out * I


def coil_field(coil: CoilSpec, I: float, point, mu: float = MU0) -> FieldSample:
    p = np.asarray(point, dtype=float)
    H = coil_field_array(coil, I, p[None, :])[0]
    return FieldSample(H=H, B=mu * H, position=p, mu=mu)


# ---------------------------------------------------------------------------
# shielded ring model
# ---------------------------------------------------------------------------

def loop_mutual_inductance(a, b, dz, mu: float = MU0):
    """Mutual inductance of coaxial circular filaments (elliptic-integral form)."""
    a, b, dz = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(dz, float))
    m = 4.0 * a * b / ((a + b) ** 2 + dz ** 2)
    k = np.sqrt(m)
    return mu * np.sqrt(a * b) * ((2.0 / k - k) * ellipk(m) - (2.0 / k) * ellipe(m))


def strip_ring_self_inductance(r, width, mu: float = MU0):
    return mu * r * (np.log(8.0 * r / (STRIP_GMD * width)) - 2.0)


@dataclass(frozen=True)
class RingSolution:
    radius: np.ndarray
    z: np.ndarray
    width: np.ndarray
    current: np.ndarray

    @property
    def surface_current(self) -> np.ndarray:
        return self.current / self.width


def _bore_rings(mesh: TubeMesh, x: np.ndarray):
    """Mean radius, axial centre and width of each bore facet row."""
    f = mesh.inner_facets
    c = x[f].mean(axis=1)
    rho = np.hypot(c[:, 0], c[:, 1]).reshape(mesh.n_axial, mesh.n_circ)
    z = c[:, 2].reshape(mesh.n_axial, mesh.n_circ)
    a, b, cc, d = (x[f[:, m]] for m in range(4))
    area = 0.5 * np.linalg.norm(np.cross(cc - a, d - b), axis=1).reshape(mesh.n_axial, mesh.n_circ)
    r = rho.mean(axis=1)
    width = area.sum(axis=1) / (2.0 * np.pi * r)
    return r, z.mean(axis=1), width


def solve_ring_currents(coil: CoilSpec, I: float, r, z, width, mu: float = MU0) -> RingSolution:
    """Ring currents that cancel the coil flux linked by every ring."""
    r, z, width = (np.asarray(v, float) for v in (r, z, width))
    n = len(r)
    M = loop_mutual_inductance(r[:, None], r[None, :], z[:, None] - z[None, :], mu) \
        if n > 1 else np.zeros((1, 1))
    # neighbouring strips are too close for the centre-filament form:
    # average filament pairs across both widths instead
    gx, gw = np.polynomial.legendre.leggauss(4)
    for off in (1, 2):
        i = np.arange(n - off)
        j = i + off
        zi = z[i, None, None] + 0.5 * width[i, None, None] * gx[None, :, None]
        zj = z[j, None, None] + 0.5 * width[j, None, None] * gx[None, None, :]
        m = loop_mutual_inductance(r[i, None, None], r[j, None, None], zi - zj, mu)
        m = np.einsum("kab,a,b->k", m, gw, gw) / 4.0
        M[i, j] = m
        M[j, i] = m
    np.fill_diagonal(M, strip_ring_self_inductance(r, width, mu))
    lz = coil.loop_z
    Mc = loop_mutual_inductance(r[:, None], coil.radius, z[:, None] - lz[None, :], mu).sum(axis=1)
    i = np.linalg.solve(M, -Mc * I)
    return RingSolution(r, z, width, i)


def _assemble(mesh, x, facets, facet_p, sign, n_nodes):
    a, b, c, d = (x[facets[:, m]] for m in range(4))
    avec = 0.5 * np.cross(c - a, d - b)
    area = np.linalg.norm(avec, axis=1)
    ff = sign * facet_p[:, None] * avec
    forces = np.zeros((n_nodes, 3))
    tarea = np.zeros(n_nodes)
    gnorm = np.zeros((n_nodes, 3))
    for m in range(4):
        np.add.at(forces, facets[:, m], 0.25 * ff)
        np.add.at(tarea, facets[:, m], 0.25 * area)
        np.add.at(gnorm, facets[:, m], sign * 0.25 * avec)
    return forces, tarea, gnorm


def build_surface_loads(mesh: TubeMesh, x: np.ndarray | None, coil: CoilSpec, I: float,
                        eta: float = 1.0, facet_alive: np.ndarray | None = None,
                        model: str = "shielded", mu: float = MU0, t: float = 0.0) -> LoadField:
    """Nodal magnetic pressure loads on the current tube geometry.

    ``facet_alive`` masks facets (bore facets for the shielded model, outer
    facets for the free model); dead facets carry no pressure. Forces are
    follower loads along the current facet normals.
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigError("coupling efficiency must lie in [0, 1]")
    x = mesh.nodes if x is None else np.asarray(x, dtype=float)
    if model == "shielded":
        facets = mesh.inner_facets
        r, z, w = _bore_rings(mesh, x)
        sol = solve_ring_currents(coil, I, r, z, w, mu)
        p_row = eta * magnetic_pressure(sol.surface_current, mu)
        facet_p = np.repeat(p_row, mesh.n_circ)
        # bore facet normals point toward the axis; pressure pushes outward
        sign = -1.0
    elif model == "free":
        facets = mesh.outer_facets
        c = x[facets].mean(axis=1)
        Hz = coil_field_array(coil, I, c)[:, 2]
        facet_p = eta * magnetic_pressure(Hz, mu)
        sign = 1.0
    else:
        raise ConfigError(f"unknown load model {model!r}")
    if facet_alive is not None:
        facet_p = np.where(facet_alive, facet_p, 0.0)
    forces, tarea, gnorm = _assemble(mesh, x, facets, facet_p, sign, mesh.n_nodes)
    ids = np.unique(facets)
    F = forces[ids]
    A = tarea[ids]
    fn = np.linalg.norm(F, axis=1)
    gn = gnorm[ids]
    gn_norm = np.linalg.norm(gn, axis=1)
    normals = np.where(fn[:, None] > 0, F / np.where(fn > 0, fn, 1.0)[:, None],
                       gn / np.where(gn_norm > 0, gn_norm, 1.0)[:, None])
    pressure = np.where(A > 0, fn / np.where(A > 0, A, 1.0), 0.0)
    return LoadField(node_ids=ids, normals=normals, pressure=pressure, forces=F, time=t, area=A)

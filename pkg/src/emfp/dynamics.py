"""Explicit central-difference dynamics of the hexahedral tube.

Velocities live at half steps. Each step updates positions, then every alive
element computes its strain increment from the mid-step geometry, rotates
the stored stress with the Hughes-Winget increment (a Jaumann rate), runs
the Johnson-Cook point update and returns nodal internal forces on the new
geometry. Element work is done in a compiled kernel that releases the GIL,
so element chunks run on a thread pool. Each element writes only its own
slots and nodal assembly is a serial loop in element order, so results do
not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from .errors import NewtonNoConvergence, UnstableRun
from .material import (
    P_CHI,
    P_CP,
    P_RHO,
    P_TM,
    JCMaterial,
    PointState,
    fracture_strain_kernel,
    homologous_temperature,
    return_map_kernel,
    triaxiality_kernel,
)
from .mesh import HEX_CORNERS, TubeMesh, gauss_points, hex_shape_derivs, hex_shape_values

# linear and quadratic bulk viscosity coefficients (common explicit-code defaults)
BULK_Q1 = 0.06
BULK_Q2 = 1.5
HOURGLASS_Q = 0.1

STATUS_OK, STATUS_NEWTON, STATUS_INVERTED = 0, 1, 2
DN_CENTROID = np.ascontiguousarray(hex_shape_derivs(np.zeros((1, 3)))[0])


@dataclass
class EnergyLedger:
    kinetic: float = 0.0
    internal: float = 0.0
    plastic: float = 0.0
    contact: float = 0.0
    friction: float = 0.0
    external: float = 0.0
    hourglass: float = 0.0
    deleted: float = 0.0
    contact_work: float = 0.0

    @property
    def accounted(self) -> float:
        return (self.kinetic + self.internal + self.contact + self.friction
                + self.hourglass + self.deleted)

    @property
    def balance_error(self) -> float:
        return self.external - self.accounted

    def copy(self) -> "EnergyLedger":
        return replace(self)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


@dataclass
class DynState:
    """Mutable solver state. Point arrays are shaped (elements, points)."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    sig: np.ndarray
    eps_p: np.ndarray
    eps_rate: np.ndarray
    damage: np.ndarray
    temp: np.ndarray
    alive: np.ndarray
    f_int: np.ndarray
    fe: np.ndarray = field(repr=False)
    e_int: np.ndarray = field(repr=False)
    elem_len: np.ndarray = field(repr=False)
    t: float = 0.0
    step: int = 0
    dt_prev: float = 0.0
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    n_eroded: int = 0

    @property
    def n_points(self) -> int:
        return self.eps_p.shape[1]

    def point_state(self, e: int, q: int) -> PointState:
        return PointState(stress=self.sig[e, q].copy(), eps_p=float(self.eps_p[e, q]),
                          eps_rate=float(self.eps_rate[e, q]), damage=float(self.damage[e, q]),
                          T=float(self.temp[e, q]), deleted=bool(self.damage[e, q] >= 1.0))

    def copy(self) -> "DynState":
        out = replace(self)
        for name in ("x", "v", "a", "sig", "eps_p", "eps_rate", "damage", "temp", "alive",
                     "f_int", "fe", "e_int", "elem_len"):
            setattr(out, name, getattr(self, name).copy())
        out.ledger = self.ledger.copy()
        return out


# ---------------------------------------------------------------------------
# compiled element kernels
# ---------------------------------------------------------------------------

@nb.njit(cache=True, inline="always", error_model="numpy")
def _jacobian(dNq, xe, J):
    for i in range(3):
        for j in range(3):
            s = 0.0
            for a in range(8):
                s += dNq[a, i] * xe[a, j]
            J[i, j] = s
    return (J[0, 0] * (J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
            - J[0, 1] * (J[1, 0] * J[2, 2] - J[1, 2] * J[2, 0])
            + J[0, 2] * (J[1, 0] * J[2, 1] - J[1, 1] * J[2, 0]))


@nb.njit(cache=True, inline="always", error_model="numpy")
def _inverse3(A, det, out):
    inv = 1.0 / det
    out[0, 0] = (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]) * inv
    out[0, 1] = (A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]) * inv
    out[0, 2] = (A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]) * inv
    out[1, 0] = (A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]) * inv
    out[1, 1] = (A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]) * inv
    out[1, 2] = (A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]) * inv
    out[2, 0] = (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]) * inv
    out[2, 1] = (A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]) * inv
    out[2, 2] = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]) * inv


@nb.njit(cache=True, inline="always", error_model="numpy")
def _grads(dNq, Jinv, out):
    for a in range(8):
        for i in range(3):
            s = 0.0
            for k in range(3):
                s += Jinv[i, k] * dNq[a, k]
            out[a, i] = s


@nb.njit(cache=True, error_model="numpy")
def _char_length(xe, dN0):
    """1 / sqrt(2 sum |grad N_a|^2) at the centroid.

    For a brick with sides a, b, c this is 1 / sqrt(1/a^2 + 1/b^2 + 1/c^2),
    which bounds the element's highest dilatational frequency.
    """
    J = np.empty((3, 3))
    Ji = np.empty((3, 3))
    g = np.empty((8, 3))
    det = _jacobian(dN0, xe, J)
    if det <= 0.0:
        return 0.0
    _inverse3(J, det, Ji)
    _grads(dN0, Ji, g)
    s = 0.0
    for a in range(8):
        for i in range(3):
            s += g[a, i] * g[a, i]
    return 1.0 / math.sqrt(2.0 * s)


@nb.njit(cache=True, error_model="numpy")
def _jacobian_det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


@nb.njit(cache=True, nogil=True, error_model="numpy")
def element_kernel(e0, e1, elements, x_mid, x_new, v, dN, dN0, wq, hg_vec, p, dt, hg_q,
                   bulk_q1, bulk_q2, wave_speed, alive,
                   sig, eps_p, eps_rate, damage, temp,
                   fe, d_int, d_plastic, d_hg, elem_len, status, resid):
    """Update elements ``e0 <= e < e1``; every output is indexed by element."""
    nq = wq.shape[0]
    rho = p[P_RHO]
    xm = np.empty((8, 3))
    xn = np.empty((8, 3))
    ve = np.empty((8, 3))
    J = np.empty((3, 3))
    Ji = np.empty((3, 3))
    g = np.empty((8, 3))
    L = np.empty((3, 3))
    de = np.empty((3, 3))
    R = np.empty((3, 3))
    Mi = np.empty((3, 3))
    tmp = np.empty((3, 3))
    srot = np.empty((3, 3))
    snew = np.empty((3, 3))
    dep = np.empty((3, 3))
    gam = np.empty(8)
    ident = np.eye(3)
    for e in range(e0, e1):
        status[e] = STATUS_OK
        resid[e] = 0.0
        d_int[e] = 0.0
        d_plastic[e] = 0.0
        d_hg[e] = 0.0
        for a in range(8):
            for i in range(3):
                fe[e, a, i] = 0.0
        if not alive[e]:
            continue
        for a in range(8):
            n = elements[e, a]
            for i in range(3):
                xm[a, i] = x_mid[n, i]
                xn[a, i] = x_new[n, i]
                ve[a, i] = v[n, i]
        vol_mid = 0.0
        dvol = 0.0
        # -- material update on the mid-step geometry --
        for q in range(nq):
            det = _jacobian(dN[q], xm, J)
            if det <= 0.0:
                status[e] = STATUS_INVERTED
                break
            _inverse3(J, det, Ji)
            _grads(dN[q], Ji, g)
            for i in range(3):
                for j in range(3):
                    s = 0.0
                    for a in range(8):
                        s += ve[a, i] * g[a, j]
                    L[i, j] = s
            for i in range(3):
                for j in range(3):
                    de[i, j] = 0.5 * (L[i, j] + L[j, i]) * dt
                    # R = (I - W/2)^-1 (I + W/2) with W the spin increment
                    tmp[i, j] = ident[i, j] - 0.25 * (L[i, j] - L[j, i]) * dt
            dm = _jacobian_det3(tmp)
            _inverse3(tmp, dm, Mi)
            for i in range(3):
                for j in range(3):
                    s = 0.0
                    for k in range(3):
                        s += Mi[i, k] * (ident[k, j] + 0.25 * (L[k, j] - L[j, k]) * dt)
                    R[i, j] = s
            for i in range(3):
                for m in range(3):
                    s = 0.0
                    for k in range(3):
                        s += R[i, k] * sig[e, q, k, m]
                    tmp[i, m] = s
            for i in range(3):
                for j in range(3):
                    s = 0.0
                    for m in range(3):
                        s += tmp[i, m] * R[j, m]
                    srot[i, j] = s
            dv = det * wq[q]
            vol_mid += dv
            dvol += (de[0, 0] + de[1, 1] + de[2, 2]) * dv
            if dt > 0.0:
                dp, sy, st, gres = return_map_kernel(p, srot, de, dt, eps_p[e, q], temp[e, q],
                                                     snew, dep)
                if st != 0:
                    status[e] = STATUS_NEWTON
                    resid[e] = gres
            else:
                dp = 0.0
                for i in range(3):
                    for j in range(3):
                        snew[i, j] = srot[i, j]
                        dep[i, j] = 0.0
            w_tot = 0.0
            w_p = 0.0
            for i in range(3):
                for j in range(3):
                    w_tot += 0.5 * (srot[i, j] + snew[i, j]) * de[i, j]
                    w_p += snew[i, j] * dep[i, j]
            d_int[e] += w_tot * dv
            if dp > 0.0:
                d_plastic[e] += w_p * dv
                rate = dp / dt
                eps_rate[e, q] = rate
                if damage[e, q] < 1.0:
                    tx = triaxiality_kernel(p, snew)
                    ef = fracture_strain_kernel(p, tx, rate, homologous_temperature(p, temp[e, q]))
                    damage[e, q] = min(damage[e, q] + dp / ef, 1.0)
                eps_p[e, q] += dp
                temp[e, q] = min(temp[e, q] + p[P_CHI] * w_p / (rho * p[P_CP]), p[P_TM])
            else:
                eps_rate[e, q] = 0.0
            for i in range(3):
                for j in range(3):
                    sig[e, q, i, j] = snew[i, j]
        if status[e] == STATUS_INVERTED:
            continue
        # -- bulk viscosity (compression only), a pressure added to the forces --
        qv = 0.0
        if dt > 0.0 and dvol < 0.0 and (bulk_q1 > 0.0 or bulk_q2 > 0.0):
            lc = _char_length(xm, dN0)
            rate_v = dvol / (vol_mid * dt)
            qv = rho * lc * (bulk_q2 * lc * rate_v * rate_v - bulk_q1 * wave_speed * rate_v)
            d_int[e] += -qv * dvol
        # -- internal forces on the new geometry --
        vol_new = 0.0
        for q in range(nq):
            det = _jacobian(dN[q], xn, J)
            if det <= 0.0:
                status[e] = STATUS_INVERTED
                break
            _inverse3(J, det, Ji)
            _grads(dN[q], Ji, g)
            dv = det * wq[q]
            vol_new += dv
            for a in range(8):
                for i in range(3):
                    s = -qv * g[a, i]
                    for j in range(3):
                        s += sig[e, q, i, j] * g[a, j]
                    fe[e, a, i] += s * dv
        if status[e] == STATUS_INVERTED:
            continue
        elem_len[e] = _char_length(xn, dN0)
        # -- viscous hourglass control for one-point elements --
        if nq == 1 and hg_q > 0.0:
            # g holds the centroid gradients on the new geometry
            ah = hg_q * rho * wave_speed * vol_new ** (2.0 / 3.0) / 4.0
            for m in range(4):
                hx0 = 0.0
                hx1 = 0.0
                hx2 = 0.0
                for a in range(8):
                    hx0 += hg_vec[m, a] * xn[a, 0]
                    hx1 += hg_vec[m, a] * xn[a, 1]
                    hx2 += hg_vec[m, a] * xn[a, 2]
                for a in range(8):
                    gam[a] = hg_vec[m, a] - (hx0 * g[a, 0] + hx1 * g[a, 1] + hx2 * g[a, 2])
                for i in range(3):
                    qi = 0.0
                    for a in range(8):
                        qi += ve[a, i] * gam[a]
                    for a in range(8):
                        fe[e, a, i] += ah * qi * gam[a]
                    d_hg[e] += ah * qi * qi * dt


@nb.njit(cache=True, error_model="numpy")
def assemble_forces(elements, fe, alive, n_nodes):
    out = np.zeros((n_nodes, 3))
    for e in range(elements.shape[0]):
        if not alive[e]:
            continue
        for a in range(8):
            n = elements[e, a]
            for i in range(3):
                out[n, i] += fe[e, a, i]
    return out


def _hourglass_vectors() -> np.ndarray:
    c = HEX_CORNERS
    return np.stack([c[:, 1] * c[:, 2], c[:, 0] * c[:, 2], c[:, 0] * c[:, 1],
                     c[:, 0] * c[:, 1] * c[:, 2]])


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def lumped_mass(mesh: TubeMesh, rho: float, x: np.ndarray | None = None) -> np.ndarray:
    """Row-sum lumped nodal masses from 2x2x2 integration."""
    if not rho > 0:
        raise ValueError("density must be > 0")
    x = mesh.nodes if x is None else x
    pts, w = gauss_points(2)
    N = hex_shape_values(pts)  # (q, 8)
    det = mesh.jacobians(x, 2)  # (E, q)
    me = rho * np.einsum("eq,q,qa->ea", det, w, N)
    m = np.zeros(len(x))
    np.add.at(m, mesh.elements.ravel(), me.ravel())
    return m


def characteristic_lengths(mesh: TubeMesh, x: np.ndarray | None = None) -> np.ndarray:
    x = mesh.nodes if x is None else x
    xe = np.ascontiguousarray(x[mesh.elements])
    return np.array([_char_length(xe[e], DN_CENTROID) for e in range(mesh.n_elements)])


def stable_timestep(mesh: TubeMesh, mat: JCMaterial, safety: float = 0.9,
                    state: DynState | None = None, alive: np.ndarray | None = None,
                    contact_omega: float = 0.0) -> float:
    """Critical step ``safety * min(L_e / c)`` over alive elements.

    ``contact_omega`` is the largest penalty-spring frequency sqrt(k/m); it
    is combined with the element frequency 2 / (L/c).
    """
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    if state is not None:
        lengths = state.elem_len
        alive = state.alive if alive is None else alive
    else:
        lengths = characteristic_lengths(mesh)
    if alive is not None:
        lengths = lengths[alive]
    if lengths.size == 0:
        return math.inf
    dt_el = float(np.min(lengths)) / mat.wave_speed
    if contact_omega > 0:
        w_el = 2.0 / dt_el
        return safety * 2.0 / math.hypot(w_el, contact_omega)
    return safety * dt_el


class ExplicitSolver:
    """Owns the mesh, material, constants and the worker pool.

    Parameters
    ----------
    order : 2 for full 2x2x2 integration, 1 for one point with viscous
        hourglass control.
    fixed_dofs : boolean (n_nodes, 3) mask of constrained components;
        defaults to x and y of both end rings.
    """

    def __init__(self, mesh: TubeMesh, mat: JCMaterial, order: int = 2, workers: int = 1,
                 fixed_dofs: np.ndarray | None = None, hourglass: float = HOURGLASS_Q,
                 bulk_viscosity: tuple[float, float] = (BULK_Q1, BULK_Q2),
                 chunk: int = 512):
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        self.mesh = mesh
        self.mat = mat
        self.order = order
        self.params = mat.packed()
        pts, w = gauss_points(order)
        self.dN = np.ascontiguousarray(hex_shape_derivs(pts))
        self.wq = w
        self.dN0 = DN_CENTROID
        self.hg_vec = _hourglass_vectors()
        self.hg_q = float(hourglass) if order == 1 else 0.0
        self.bulk_q1, self.bulk_q2 = (float(b) for b in bulk_viscosity)
        self.mass = lumped_mass(mesh, mat.rho)
        if fixed_dofs is None:
            fixed_dofs = np.zeros((mesh.n_nodes, 3), dtype=bool)
            fixed_dofs[mesh.end_ring_nodes, :2] = True
        self.fixed = np.asarray(fixed_dofs, dtype=bool)
        self.workers = max(1, int(workers))
        self.chunk = int(chunk)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self.elements = np.ascontiguousarray(mesh.elements)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    @property
    def n_points(self) -> int:
        return len(self.wq)

    def initial_state(self, velocity: np.ndarray | None = None) -> DynState:
        m = self.mesh
        E, q = m.n_elements, self.n_points
        st = DynState(
            x=m.nodes.copy(),
            v=np.zeros_like(m.nodes) if velocity is None else np.array(velocity, dtype=float),
            a=np.zeros_like(m.nodes),
            sig=np.zeros((E, q, 3, 3)),
            eps_p=np.zeros((E, q)),
            eps_rate=np.zeros((E, q)),
            damage=np.zeros((E, q)),
            temp=np.full((E, q), self.mat.T_0),
            alive=np.ones(E, dtype=bool),
            f_int=np.zeros_like(m.nodes),
            fe=np.zeros((E, 8, 3)),
            e_int=np.zeros(E),
            elem_len=characteristic_lengths(m),
        )
        st.ledger.kinetic = 0.5 * float(np.sum(self.mass[:, None] * st.v ** 2))
        return st

    # -- element pass ----------------------------------------------------------
    def _element_pass(self, st: DynState, x_mid, x_new, v, dt):
        E = self.mesh.n_elements
        d_int = np.zeros(E)
        d_pl = np.zeros(E)
        d_hg = np.zeros(E)
        status = np.zeros(E, dtype=np.int64)
        resid = np.zeros(E)
        args = (self.elements, x_mid, x_new, v, self.dN, self.dN0, self.wq, self.hg_vec, self.params,
                float(dt), self.hg_q, self.bulk_q1, self.bulk_q2, self.mat.wave_speed, st.alive,
                st.sig, st.eps_p, st.eps_rate, st.damage, st.temp,
                st.fe, d_int, d_pl, d_hg, st.elem_len, status, resid)
        if self._pool is None:
            element_kernel(0, E, *args)
        else:
            bounds = [(s, min(s + self.chunk, E)) for s in range(0, E, self.chunk)]
            list(self._pool.map(lambda b: element_kernel(b[0], b[1], *args), bounds))
        bad = np.nonzero(status == STATUS_NEWTON)[0]
        if bad.size:
            e = int(bad[0])
            raise NewtonNoConvergence(f"return mapping failed in element {e}", float(resid[e]), e)
        inverted = np.nonzero(status == STATUS_INVERTED)[0]
        return d_int, d_pl, d_hg, inverted

    def internal_forces(self, st: DynState, dt: float = 0.0, x_old: np.ndarray | None = None) -> np.ndarray:
        """Update element stresses for the motion ``x_old -> st.x`` at velocity
        ``st.v`` and return the assembled internal force array."""
        x_old = st.x if x_old is None else x_old
        x_mid = 0.5 * (x_old + st.x)
        d_int, d_pl, d_hg, inverted = self._element_pass(st, x_mid, st.x, st.v, dt)
        st.e_int += d_int
        st.ledger.internal += float(np.sum(d_int))
        st.ledger.plastic += float(np.sum(d_pl))
        st.ledger.hourglass += float(np.sum(d_hg))
        if inverted.size:
            self._erode(st, inverted)
        st.f_int = assemble_forces(self.elements, st.fe, st.alive, self.mesh.n_nodes)
        return st.f_int

    def _erode(self, st: DynState, elems):
        elems = np.asarray(elems)
        elems = elems[st.alive[elems]]
        if elems.size == 0:
            return
        moved = float(np.sum(st.e_int[elems]))
        st.ledger.internal -= moved
        st.ledger.deleted += moved
        st.e_int[elems] = 0.0
        st.alive[elems] = False
        st.fe[elems] = 0.0
        st.n_eroded += int(elems.size)

    # -- time step -------------------------------------------------------------
    def step(self, st: DynState, dt: float, external: np.ndarray | None = None,
             contact_force=None) -> DynState:
        """Advance one central-difference step in place and return the state.

        ``contact_force(x, v) -> (forces, stored_energy, dissipated_power)``
        is evaluated at the start of the step.
        """
        f = -st.f_int
        f_ext = None
        if external is not None:
            f_ext = np.asarray(external, dtype=float)
            f = f + f_ext
        f_c = None
        if contact_force is not None:
            f_c, stored, power = contact_force(st.x, st.v)
            f = f + f_c
        a = f / self.mass[:, None]
        a[self.fixed] = 0.0
        dt_avg = 0.5 * (st.dt_prev + dt) if st.step > 0 else dt
        v_old = st.v
        v_new = v_old + dt_avg * a
        v_new[self.fixed] = 0.0
        v_bar = 0.5 * (v_old + v_new)
        if f_ext is not None:
            st.ledger.external += float(np.sum(f_ext * v_bar)) * dt_avg
        if f_c is not None:
            st.ledger.contact_work += float(np.sum(f_c * v_bar)) * dt_avg
            st.ledger.contact = stored
            st.ledger.friction += power * dt_avg
        x_old = st.x
        st.a = a
        st.v = v_new
        st.x = x_old + dt * v_new
        if not (np.all(np.isfinite(st.x)) and np.all(np.isfinite(v_new))):
            raise UnstableRun(f"non-finite nodal state at step {st.step + 1} (t={st.t + dt:.6g} s)")
        st.ledger.kinetic = 0.5 * float(np.sum(self.mass[:, None] * v_new ** 2))
        self.internal_forces(st, dt, x_old)
        st.t += dt
        st.step += 1
        st.dt_prev = dt
        return st

    def delete_elements(self, st: DynState) -> np.ndarray:
        """Mask elements whose every integration point has D >= 1."""
        failed = np.nonzero(st.alive & np.all(st.damage >= 1.0, axis=1))[0]
        if failed.size:
            moved = float(np.sum(st.e_int[failed]))
            st.ledger.internal -= moved
            st.ledger.deleted += moved
            st.e_int[failed] = 0.0
            st.alive[failed] = False
            st.fe[failed] = 0.0
            st.f_int = assemble_forces(self.elements, st.fe, st.alive, self.mesh.n_nodes)
        return failed

    def active_nodes(self, st: DynState) -> np.ndarray:
        """Nodes still attached to at least one alive element."""
        mask = np.zeros(self.mesh.n_nodes, dtype=bool)
        mask[self.elements[st.alive].ravel()] = True
        return mask

    def momentum(self, st: DynState) -> np.ndarray:
        return np.sum(self.mass[:, None] * st.v, axis=0)


def internal_forces(mesh: TubeMesh, state: DynState, mat: JCMaterial, dt: float = 0.0,
                    x_old: np.ndarray | None = None, order: int = 2) -> np.ndarray:
    """Stand-alone internal force evaluation (builds a throwaway solver)."""
    return ExplicitSolver(mesh, mat, order=order).internal_forces(state, dt, x_old)

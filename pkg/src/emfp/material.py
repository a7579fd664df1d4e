"""Johnson-Cook elasto-viscoplasticity, fracture strain and damage.

The scalar kernels here are compiled with numba and shared between the
point-level API (used directly in tests and demos) and the element loop in
:mod:`emfp.dynamics`. Material constants travel into the kernels as a flat
float64 vector built by :meth:`JCMaterial.packed`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numba as nb
import numpy as np

from .errors import ConfigError, NewtonNoConvergence

log = logging.getLogger(__name__)

# Layout of the packed parameter vector.
P_K, P_G, P_A, P_B, P_C, P_N, P_M, P_TM, P_T0, P_EPS0 = range(10)
P_D1, P_D2, P_D3, P_D4, P_D5, P_EPSSTAR, P_CHI, P_RHO, P_CP = range(10, 19)
P_EPSF_FLOOR, P_TRIAX_LO, P_TRIAX_HI, P_VM_FLOOR = range(19, 23)
N_PARAMS = 23

NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class JCMaterial:
    """Johnson-Cook constants plus elastic and thermal properties (SI units).

    ``G`` is the tabulated shear modulus; the elastic update uses the
    isotropic value E/(2(1+nu)) unless ``override_shear`` is set, and
    construction fails if the two disagree by more than 1 % without it.
    """

    name: str
    E: float
    nu: float
    rho: float
    A: float
    B: float
    C: float
    n: float
    m: float
    T_m: float
    T_0: float = 293.0
    eps0: float = 1.0
    D1: float = 0.0
    D2: float = 0.0
    D3: float = 0.0
    D4: float = 0.0
    D5: float = 0.0
    eps_star: float = 1.0
    chi: float = 0.9
    c_p: float = 896.0
    G: float | None = None
    override_shear: bool = False
    conductivity: float | None = None
    thermal_conductivity: float | None = None
    eps_f_floor: float = 1e-3
    triax_bounds: tuple[float, float] = (-3.0, 3.0)
    vm_floor: float = 1e-9
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.A > 0:
            raise ConfigError("A must be > 0")
        if self.B < 0:
            raise ConfigError("B must be >= 0")
        if not 0 < self.n <= 1:
            raise ConfigError("n must lie in (0, 1]")
        if not self.T_m > self.T_0:
            raise ConfigError("T_m must exceed T_0")
        if not self.eps0 > 0 or not self.eps_star > 0:
            raise ConfigError("reference strain rates must be > 0")
        if not (self.E > 0 and -1.0 < self.nu < 0.5 and self.rho > 0):
            raise ConfigError("invalid elastic constants")
        if self.c_p <= 0 or self.chi < 0:
            raise ConfigError("c_p must be > 0 and chi >= 0")
        if self.G is not None and not self.override_shear:
            g_iso = self.E / (2.0 * (1.0 + self.nu))
            if abs(self.G - g_iso) > 0.01 * g_iso:
                raise ConfigError(
                    f"G={self.G:.4g} inconsistent with E, nu (expects {g_iso:.4g}); "
                    "set override_shear to use it anyway")
        object.__setattr__(self, "triax_bounds", tuple(self.triax_bounds))

    @property
    def shear_modulus(self) -> float:
        if self.override_shear and self.G is not None:
            return self.G
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def bulk_modulus(self) -> float:
        if self.override_shear and self.G is not None:
            # keep E, replace nu implied by the overridden G
            g = self.G
            return self.E * g / (3.0 * (3.0 * g - self.E))
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))

    @property
    def wave_speed(self) -> float:
        """Dilatational (P-wave) speed sqrt(E(1-nu)/((1+nu)(1-2nu)rho))."""
        nu = self.nu
        return math.sqrt(self.E * (1 - nu) / ((1 + nu) * (1 - 2 * nu) * self.rho))

    def packed(self) -> np.ndarray:
        p = np.zeros(N_PARAMS)
        p[P_K] = self.bulk_modulus
        p[P_G] = self.shear_modulus
        p[P_A], p[P_B], p[P_C], p[P_N], p[P_M] = self.A, self.B, self.C, self.n, self.m
        p[P_TM], p[P_T0], p[P_EPS0] = self.T_m, self.T_0, self.eps0
        p[P_D1], p[P_D2], p[P_D3], p[P_D4], p[P_D5] = self.D1, self.D2, self.D3, self.D4, self.D5
        p[P_EPSSTAR], p[P_CHI], p[P_RHO], p[P_CP] = self.eps_star, self.chi, self.rho, self.c_p
        p[P_EPSF_FLOOR] = self.eps_f_floor
        p[P_TRIAX_LO], p[P_TRIAX_HI] = self.triax_bounds
        p[P_VM_FLOOR] = self.vm_floor * self.A
        return p

    def to_dict(self) -> dict:
        d = asdict(self)
        d["triax_bounds"] = list(self.triax_bounds)
        return d


DECK_NAMES = ("al6061_t6", "cu", "ss304")


def load_deck(name_or_path) -> JCMaterial:
    """Load a material deck by bundled name or from a JSON file path."""
    if str(name_or_path) in DECK_NAMES:
        text = resources.files("emfp").joinpath("data", f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    raw = json.loads(text)
    known = {f.name for f in fields(JCMaterial)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown material deck keys: {sorted(unknown)}")
    return JCMaterial(**raw)


def save_deck(mat: JCMaterial, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(mat.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# compiled scalar kernels
# ---------------------------------------------------------------------------

@nb.njit(cache=True, error_model="numpy")
def _thermal_factor(p, T):
    th = (T - p[P_T0]) / (p[P_TM] - p[P_T0])
    if th <= 0.0:
        return 1.0
    if th >= 1.0:
        return 0.0
    return 1.0 - th ** p[P_M]


@nb.njit(cache=True, error_model="numpy")
def _rate_factor(p, rate):
    r = rate / p[P_EPS0]
    if r <= 1.0:
        return 1.0
    return 1.0 + p[P_C] * math.log(r)


@nb.njit(cache=True, error_model="numpy")
def flow_stress_kernel(p, ep, rate, T):
    ep = max(ep, 0.0)
    return (p[P_A] + p[P_B] * ep ** p[P_N]) * _rate_factor(p, rate) * _thermal_factor(p, T)


@nb.njit(cache=True, error_model="numpy")
def _return_residual(p, q_tr, ep, dp, dt, T):
    """Consistency residual g(dp) and its derivative with respect to dp."""
    G = p[P_G]
    e = ep + dp
    hard = p[P_A] + p[P_B] * e ** p[P_N]
    if e > 0.0:
        dhard = p[P_B] * p[P_N] * e ** (p[P_N] - 1.0)
    else:
        dhard = 1e300
    rate = dp / dt
    rf = 1.0
    drf = 0.0
    if rate > p[P_EPS0]:
        rf = 1.0 + p[P_C] * math.log(rate / p[P_EPS0])
        drf = p[P_C] / dp
    tf = _thermal_factor(p, T)
    sy = hard * rf * tf
    g = q_tr - 3.0 * G * dp - sy
    dg = -3.0 * G - (dhard * rf + hard * drf) * tf
    return g, dg, sy


@nb.njit(cache=True, error_model="numpy")
def return_map_kernel(p, sig, deps, dt, ep, T, out_sig, out_deps_p):
    """Elastic predictor / radial-return corrector for one point.

    ``sig`` is the (already rotated) stress at the start of the step and
    ``deps`` the total strain increment. Writes the updated stress and the
    plastic strain increment tensor. Returns (dp, sigma_y, status, residual)
    where status 0 = converged or elastic, 1 = Newton failure.
    """
    K = p[P_K]
    G = p[P_G]
    tr = deps[0, 0] + deps[1, 1] + deps[2, 2]
    for i in range(3):
        for j in range(3):
            out_sig[i, j] = sig[i, j] + 2.0 * G * deps[i, j]
            out_deps_p[i, j] = 0.0
        out_sig[i, i] += (K - 2.0 * G / 3.0) * tr
    pm = (out_sig[0, 0] + out_sig[1, 1] + out_sig[2, 2]) / 3.0
    s00 = out_sig[0, 0] - pm
    s11 = out_sig[1, 1] - pm
    s22 = out_sig[2, 2] - pm
    j2 = 0.5 * (s00 * s00 + s11 * s11 + s22 * s22) + (
        out_sig[0, 1] * out_sig[0, 1] + out_sig[0, 2] * out_sig[0, 2]
        + out_sig[1, 2] * out_sig[1, 2])
    q_tr = math.sqrt(3.0 * j2)
    sy0 = flow_stress_kernel(p, ep, p[P_EPS0], T)
    if q_tr <= sy0:
        return 0.0, sy0, 0, 0.0
    lo = 0.0
    hi = q_tr / (3.0 * G)
    # first guess from a linearized hardening slope
    dp = (q_tr - sy0) / (3.0 * G)
    status = 1
    g = 0.0
    sy = sy0
    for _ in range(NEWTON_MAX_ITER):
        g, dg, sy = _return_residual(p, q_tr, ep, dp, dt, T)
        if abs(g) <= 1e-13 * q_tr:
            status = 0
            break
        if g > 0.0:
            lo = dp
        else:
            hi = dp
        if hi - lo <= 1e-16 * hi:
            status = 0
            break
        step = dp - g / dg
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        dp = step
    if status != 0:
        g, dg, sy = _return_residual(p, q_tr, ep, dp, dt, T)
        if abs(g) <= 1e-10 * q_tr:
            status = 0
    scale = 1.0 - 3.0 * G * dp / q_tr
    for i in range(3):
        for j in range(3):
            s = out_sig[i, j] - (pm if i == j else 0.0)
            out_deps_p[i, j] = 1.5 * dp * s / q_tr
            out_sig[i, j] = scale * s + (pm if i == j else 0.0)
    return dp, sy, status, g


@nb.njit(cache=True, error_model="numpy")
def von_mises_kernel(s):
    pm = (s[0, 0] + s[1, 1] + s[2, 2]) / 3.0
    a = s[0, 0] - pm
    b = s[1, 1] - pm
    c = s[2, 2] - pm
    j2 = 0.5 * (a * a + b * b + c * c) + s[0, 1] ** 2 + s[0, 2] ** 2 + s[1, 2] ** 2
    return math.sqrt(3.0 * j2)


@nb.njit(cache=True, error_model="numpy")
def triaxiality_kernel(p, s):
    """Mean stress over von Mises stress, clipped to the configured bounds."""
    pm = (s[0, 0] + s[1, 1] + s[2, 2]) / 3.0
    vm = von_mises_kernel(s)
    lo = p[P_TRIAX_LO]
    hi = p[P_TRIAX_HI]
    if vm < p[P_VM_FLOOR]:
        if pm > 0.0:
            return hi
        if pm < 0.0:
            return lo
        return 0.0
    return min(max(pm / vm, lo), hi)


@nb.njit(cache=True, error_model="numpy")
def fracture_strain_kernel(p, triax, rate, t_star):
    r = rate / p[P_EPSSTAR]
    rate_term = 1.0
    if r > 0.0 and p[P_D4] != 0.0:
        rate_term = 1.0 + p[P_D4] * math.log(r)
    ef = (p[P_D1] + p[P_D2] * math.exp(p[P_D3] * triax)) * rate_term * (1.0 + p[P_D5] * t_star)
    return max(ef, p[P_EPSF_FLOOR])


@nb.njit(cache=True, error_model="numpy")
def homologous_temperature(p, T):
    th = (T - p[P_T0]) / (p[P_TM] - p[P_T0])
    return min(max(th, 0.0), 1.0)


# ---------------------------------------------------------------------------
# point-level API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointState:
    """Evolving state of one integration point."""

    stress: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    eps_p: float = 0.0
    eps_rate: float = 0.0
    damage: float = 0.0
    T: float = 293.0
    deleted: bool = False

    @classmethod
    def initial(cls, mat: JCMaterial) -> "PointState":
        return cls(T=mat.T_0)

    @property
    def von_mises(self) -> float:
        return float(von_mises_kernel(np.ascontiguousarray(self.stress, dtype=float)))


@dataclass(frozen=True)
class Triaxiality:
    """Stress triaxiality sigma_mean / sigma_vm (normalization recorded)."""

    value: float
    normalization: str = "von_mises"


@dataclass(frozen=True)
class ReturnInfo:
    d_eps_p: float
    d_eps_p_tensor: np.ndarray
    sigma_y: float
    plastic_work: float
    residual: float
    plastic: bool


def flow_stress(mat: JCMaterial, eps_p: float, eps_rate: float, T: float) -> float:
    """Johnson-Cook flow stress in Pa.

    The rate term uses max(rate, eps0) and the thermal term uses T clamped
    to [T_0, T_m].
    """
    return float(flow_stress_kernel(mat.packed(), float(eps_p), float(eps_rate), float(T)))


def triaxiality(mat: JCMaterial, stress) -> Triaxiality:
    s = np.ascontiguousarray(stress, dtype=float)
    return Triaxiality(float(triaxiality_kernel(mat.packed(), s)))


def radial_return(mat: JCMaterial, state: PointState, strain_increment, dt: float):
    """Advance one point by a strain increment over ``dt``.

    Returns the new :class:`PointState` and a :class:`ReturnInfo`. Damage and
    temperature are not touched here; see :func:`accumulate_damage` and
    :func:`adiabatic_temperature_update`.

    Raises
    ------
    NewtonNoConvergence
        If the consistency equation is not solved in 50 iterations.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if state.deleted:
        raise ValueError("cannot update a deleted point")
    p = mat.packed()
    sig = np.ascontiguousarray(state.stress, dtype=float)
    deps = np.ascontiguousarray(strain_increment, dtype=float)
    out = np.empty((3, 3))
    out_p = np.empty((3, 3))
    dp, sy, status, g = return_map_kernel(p, sig, deps, float(dt), state.eps_p, state.T, out, out_p)
    if status != 0:
        raise NewtonNoConvergence(f"radial return failed, residual {g:.3e}", residual=g)
    new = replace(state, stress=out, eps_p=state.eps_p + dp, eps_rate=dp / dt)
    work = float(np.sum(out * out_p))
    return new, ReturnInfo(dp, out_p, sy, work, g, dp > 0.0)


def fracture_strain(mat: JCMaterial, triax, eps_rate: float, t_star: float) -> float:
    """Johnson-Cook failure strain, floored at ``mat.eps_f_floor``."""
    tv = triax.value if isinstance(triax, Triaxiality) else float(triax)
    return float(fracture_strain_kernel(mat.packed(), tv, float(eps_rate), float(t_star)))


def accumulate_damage(state: PointState, d_eps_p: float, eps_f: float) -> PointState:
    """Add d_eps_p / eps_f to the damage, capped at 1; D >= 1 marks deletion."""
    if d_eps_p < 0:
        raise ValueError("plastic strain increment must be >= 0")
    if not eps_f > 0:
        raise ValueError("fracture strain must be > 0")
    if state.deleted:
        return state
    d = min(state.damage + d_eps_p / eps_f, 1.0)
    return replace(state, damage=d, deleted=d >= 1.0)


def adiabatic_temperature_update(mat: JCMaterial, state: PointState,
                                 plastic_work_density: float) -> PointState:
    """Raise T by chi * w_p / (rho * c_p), capped at the melting point."""
    if plastic_work_density < 0:
        raise ValueError("plastic work must be >= 0")
    dT = mat.chi * plastic_work_density / (mat.rho * mat.c_p)
    return replace(state, T=min(state.T + dT, mat.T_m))


def update_point(mat: JCMaterial, state: PointState, strain_increment, dt: float):
    """Full point update: return mapping, damage, then adiabatic heating."""
    new, info = radial_return(mat, state, strain_increment, dt)
    if info.plastic:
        tx = triaxiality(mat, new.stress)
        p = mat.packed()
        ef = fracture_strain(mat, tx, new.eps_rate, homologous_temperature(p, state.T))
        new = accumulate_damage(new, info.d_eps_p, ef)
        new = adiabatic_temperature_update(mat, new, info.plastic_work)
    return new, info


def uniaxial_pull(mat: JCMaterial, strain_rate: float, eps_total: float, n_steps: int,
                  T: float | None = None):
    """Drive one point in uniaxial stress at constant true strain rate.

    Lateral strains are iterated each step so the lateral stresses vanish.
    Returns arrays (eps_p, axial_stress, plastic_rate) per step.
    """
    state = PointState.initial(mat)
    if T is not None:
        state = replace(state, T=float(T))
    dt = eps_total / strain_rate / n_steps
    d_ax = strain_rate * dt
    out_ep = np.empty(n_steps)
    out_s = np.empty(n_steps)
    out_r = np.empty(n_steps)
    lat = -mat.nu * d_ax
    for k in range(n_steps):
        for _ in range(60):
            de = np.diag([d_ax, lat, lat])
            trial, _ = radial_return(mat, state, de, dt)
            s_lat = trial.stress[1, 1]
            if abs(s_lat) <= 1e-10 * max(abs(trial.stress[0, 0]), 1.0):
                break
            # secant on the lateral strain using the elastic-plastic tangent bound
            de2 = np.diag([d_ax, lat + 1e-9 * d_ax, lat + 1e-9 * d_ax])
            trial2, _ = radial_return(mat, state, de2, dt)
            slope = (trial2.stress[1, 1] - s_lat) / (1e-9 * d_ax)
            lat -= s_lat / slope
        state = trial
        out_ep[k] = state.eps_p
        out_s[k] = state.stress[0, 0]
        out_r[k] = state.eps_rate
    return out_ep, out_s, out_r

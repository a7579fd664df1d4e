"""Coupled electromagnetic-mechanical time loop.

Each coupling step samples the coil current, rebuilds the magnetic pressure
on the deformed tube, and advances the explicit solver by as many stable
substeps as fit in the coupling interval. The default is single-pass
staggered coupling. Setting ``coupling_iterations > 1`` iterates the load
and mechanics to a fixed point, using the trapezoidal load average over the
step.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import (
    CircuitParams,
    CurrentWaveform,
    fit_damped_sinusoid,
    load_waveform_csv,
    synthesize,
)
from .contact import (
    ContactModel,
    FrictionModel,
    auto_penalty_stiffness,
    contact_omega,
    local_edge_length,
)
from .dynamics import DynState, EnergyLedger, ExplicitSolver, stable_timestep
from .em_loads import MU0, CoilSpec, LoadField, build_surface_loads, shielding_check, skin_depth
from .errors import ConfigError, EMFPError, FitDiverged, UnstableRun
from .material import JCMaterial, load_deck
from .mesh import PunchLayout, RigidTool, TubeMesh, generate_tube_mesh, place_punches, punch_graded_mesh

DATA = resources.files("emfp") / "data"

PUNCH_DEFAULTS = {
    "pointed": {"half_angle_deg": 45.0, "tip_radius": 0.3e-3, "shank_radius": 2.5e-3},
    "concave": {"cutter_radius": 3.0e-3, "fillet": 0.2e-3, "concavity": 0.5e-3},
}


def _default_tube():
    return {"outer_radius": 0.025, "thickness": 0.0012, "length": 0.064,
            "n_axial": 32, "n_circ": 96, "n_thickness": 2}


def _default_coil():
    return {"radius": 0.020, "turns": 6, "pitch": 0.008, "center_z": 0.0, "segments": 64}


@dataclass
class SimConfig:
    """Everything a run needs. Lengths in m, times in s, energies in kJ.

    The current comes from ``waveform`` (a CSV path, or the name of a bundled
    trace) or from ``circuit`` (a dict with C, L, R, V0). ``energy_kJ``
    rescales either source, with current proportional to sqrt(E).
    """

    name: str = "reference"
    waveform: str | None = "reference_waveform.csv"
    waveform_energy_kJ: float | None = 5.7
    circuit: dict | None = None
    energy_kJ: float | None = None
    coil: dict = field(default_factory=_default_coil)
    material: str = "al6061_t6"
    tube: dict = field(default_factory=_default_tube)
    punch_type: str | None = "pointed"
    punch: dict = field(default_factory=dict)
    punch_count: int = 12
    set_spacing: float = 0.020
    standoff: float = 0.5e-3
    die_bore: float | None = 0.028
    dt_coupling: float = 1e-7
    total_time: float = 100e-6
    rest_fraction: float = 1e-3
    eta: float = 1.0
    load_model: str = "shielded"
    frozen_geometry: bool = False
    coupling_iterations: int = 1
    coupling_tol: float = 1e-3
    dt_safety: float = 0.9
    order: int = 2
    hourglass: float = 0.1
    friction: dict = field(default_factory=lambda: {"mu_s": 0.3, "mu_d": 0.3, "v_reg": 1e-3})
    penalty_alpha: float = 10.0
    workers: int = 1
    frame_every: int = 0
    energy_abort: float = 0.10
    probes: str | list = "auto"

    def __post_init__(self):
        if self.waveform is None and self.circuit is None:
            raise ConfigError("a waveform or a circuit source is required")
        if self.waveform is not None and self.circuit is not None:
            raise ConfigError("give either a waveform or a circuit, not both")
        if not self.dt_coupling > 0:
            raise ConfigError("dt_coupling must be > 0")
        if not self.total_time > 0:
            raise ConfigError("total_time must be > 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.energy_kJ is not None and self.energy_kJ < 0:
            raise ConfigError("energy_kJ must be >= 0")
        if self.punch_type not in (None, "pointed", "concave"):
            raise ConfigError(f"unknown punch type {self.punch_type!r}")
        if self.punch_count not in (12, 36):
            raise ConfigError("punch_count must be 12 or 36")
        if self.coupling_iterations < 1 or not self.coupling_tol > 0:
            raise ConfigError("need coupling_iterations >= 1 and coupling_tol > 0")
        if self.order not in (1, 2):
            raise ConfigError("order must be 1 or 2")
        if self.load_model not in ("shielded", "free"):
            raise ConfigError(f"unknown load model {self.load_model!r}")
        if self.probes != "auto" and not isinstance(self.probes, list):
            raise ConfigError("probes must be 'auto' or a list of element-id lists")
        need = {"outer_radius", "thickness", "length", "n_thickness"}
        if not self.tube.get("grading"):
            need |= {"n_axial", "n_circ"}
        missing = need - set(self.tube)
        if missing:
            raise ConfigError(f"tube section missing {sorted(missing)}")

    # -- serialisation ---------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        wf = d.get("waveform")
        if wf and base_dir is not None and not Path(wf).is_absolute() and (base_dir / wf).exists():
            d["waveform"] = str((base_dir / wf).resolve())
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d, path.parent)

    def to_file(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


def reference_config(**overrides) -> SimConfig:
    """The bundled desk-scale reference case."""
    cfg = SimConfig.from_dict(json.loads((DATA / "reference.json").read_text()))
    return cfg.replace(**overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_waveform(cfg: SimConfig) -> CurrentWaveform:
    if cfg.circuit is not None:
        try:
            p = CircuitParams(**cfg.circuit)
        except TypeError as exc:
            raise ConfigError(f"bad circuit section: {exc}") from None
        if cfg.energy_kJ is not None:
            p = p.with_energy(cfg.energy_kJ * 1e3)
        return synthesize(p, min(cfg.total_time, 30e-6), 1e-8, after_end="zero")
    src = Path(cfg.waveform)
    if not src.exists():
        bundled = DATA / cfg.waveform
        if not bundled.is_file():
            raise ConfigError(f"waveform {cfg.waveform!r} not found")
        src = Path(str(bundled))
    ref = None if cfg.waveform_energy_kJ is None else cfg.waveform_energy_kJ * 1e3
    w = load_waveform_csv(src, after_end="zero", energy=ref)
    if cfg.energy_kJ is not None:
        if ref is None:
            raise ConfigError("energy scaling needs waveform_energy_kJ")
        w = w.with_energy(cfg.energy_kJ * 1e3)
    return w


def ringing_frequency(w: CurrentWaveform) -> float:
    """Dominant frequency of the trace (Hz), from a damped-sinusoid fit."""
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return fit_damped_sinusoid(w).frequency
    except (FitDiverged, ValueError, AttributeError):
        return 1.0 / (2.0 * w.t_end)


def build_tube(cfg: SimConfig) -> TubeMesh:
    """Uniform tube grid, or one refined around the punch sites when the
    tube section has a ``grading`` entry (fine, coarse, half_width, growth)."""
    t = cfg.tube
    r_i = t["outer_radius"] - t["thickness"]
    g = t.get("grading")
    if g:
        try:
            return punch_graded_mesh(r_i, t["thickness"], t["length"], int(t["n_thickness"]),
                                     build_layout(cfg), g["half_width"], g["fine"], g["coarse"],
                                     g.get("growth", 0.3))
        except KeyError as exc:
            raise ConfigError(f"grading section missing {exc}") from None
    return generate_tube_mesh(r_i, t["thickness"], t["length"],
                              int(t["n_axial"]), int(t["n_circ"]), int(t["n_thickness"]))


def build_template(cfg: SimConfig) -> RigidTool | None:
    if cfg.punch_type is None:
        return None
    p = dict(PUNCH_DEFAULTS[cfg.punch_type])
    p.update(cfg.punch)
    try:
        if cfg.punch_type == "pointed":
            return RigidTool.pointed(math.radians(p["half_angle_deg"]), p["tip_radius"], p["shank_radius"])
        return RigidTool.concave(p["cutter_radius"], p["fillet"], p["concavity"])
    except KeyError as exc:
        raise ConfigError(f"punch section missing {exc}") from None


def build_layout(cfg: SimConfig) -> PunchLayout:
    return PunchLayout(cfg.punch_count, cfg.set_spacing)


def build_tools(cfg: SimConfig, tube: TubeMesh) -> tuple[list[RigidTool], list[RigidTool]]:
    """(punches, all tools). The die, when present, is the last tool."""
    template = build_template(cfg)
    punches = [] if template is None else place_punches(build_layout(cfg), template, tube, cfg.standoff)
    tools = list(punches)
    if cfg.die_bore is not None:
        tools.append(RigidTool.die(cfg.die_bore))
    return punches, tools


def build_coil(cfg: SimConfig) -> CoilSpec:
    try:
        return CoilSpec(**cfg.coil)
    except TypeError as exc:
        raise ConfigError(f"bad coil section: {exc}") from None


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

def probe_elements(tube: TubeMesh, layout: PunchLayout, footprint: float,
                   margin: float = 1.15) -> list[np.ndarray]:
    """Four bore-layer elements diagonally off each punch footprint rim."""
    ijk = tube.element_ijk()
    bore = np.nonzero(ijk[:, 2] == 0)[0]
    c = tube.nodes[tube.elements[bore]].mean(axis=1)
    theta = np.arctan2(c[:, 1], c[:, 0])
    r_mid = 0.5 * (tube.r_i + tube.r_o)
    d = margin * footprint / math.sqrt(2.0)
    out = []
    for _, _, z, th in layout.sites():
        ids = []
        for ss in (-1, 1):
            for sz in (-1, 1):
                dth = np.angle(np.exp(1j * (theta - th - ss * d / r_mid)))
                dist = np.hypot(r_mid * dth, c[:, 2] - (z + sz * d))
                ids.append(int(bore[np.argmin(dist)]))
        out.append(np.array(ids, dtype=np.int64))
    return out


@dataclass
class ProbeSeries:
    """Per-site time series; ``n_alive`` tracks elements left in each average."""

    names: list[str]
    elements: list[np.ndarray]
    times: list = field(default_factory=list)
    force: list = field(default_factory=list)
    velocity: list = field(default_factory=list)
    von_mises: list = field(default_factory=list)
    eps_p: list = field(default_factory=list)
    n_alive: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def append(self, sample: dict):
        self.times.append(sample["time"])
        for k in ("force", "velocity", "von_mises", "eps_p", "n_alive"):
            getattr(self, k).append(sample[k])

    def arrays(self) -> dict:
        return {"time": np.asarray(self.times, dtype=float),
                "force": np.asarray(self.force, dtype=float).reshape(len(self), -1),
                "velocity": np.asarray(self.velocity, dtype=float).reshape(len(self), -1),
                "von_mises": np.asarray(self.von_mises, dtype=float).reshape(len(self), -1),
                "eps_p": np.asarray(self.eps_p, dtype=float).reshape(len(self), -1),
                "n_alive": np.asarray(self.n_alive, dtype=np.int64).reshape(len(self), -1)}

    def peak(self, quantity: str) -> np.ndarray:
        """Peak over time per site."""
        a = self.arrays()[quantity]
        return a.max(axis=0) if len(a) else np.zeros(len(self.names))

    def group_peak(self, quantity: str, prefix: str) -> float:
        """Mean of the per-site peaks over sites whose name starts with ``prefix``."""
        pk = self.peak(quantity)
        sel = [i for i, n in enumerate(self.names) if n.startswith(prefix)]
        return float(np.mean(pk[sel])) if sel else 0.0


def element_force_share(tube: TubeMesh, node_forces: np.ndarray) -> np.ndarray:
    """Applied force carried by each element: its bore-face nodes' forces,
    each split evenly among the bore-layer elements sharing that node."""
    f = tube.inner_facets
    share = np.zeros(tube.n_nodes)
    np.add.at(share, f.ravel(), 1.0)
    w = 1.0 / np.maximum(share, 1.0)
    per_facet = np.einsum("fan,fa->fn", node_forces[f], w[f])
    out = np.zeros((tube.n_elements, 3))
    bore = tube.element_id(*tube.element_ijk()[tube.element_ijk()[:, 2] == 0].T)
    out[bore] = per_facet
    return out


def von_mises(sig: np.ndarray) -> np.ndarray:
    s = sig - np.trace(sig, axis1=-2, axis2=-1)[..., None, None] * np.eye(3) / 3.0
    return np.sqrt(1.5 * np.sum(s * s, axis=(-2, -1)))


def extract_probes(tube: TubeMesh, state: DynState, selectors: list[np.ndarray],
                   node_forces: np.ndarray | None = None) -> dict:
    """Site averages over the alive selected elements.

    Returns a dict with keys time, force, velocity, von_mises, eps_p and
    n_alive, each (apart from time) a list with one value per site.
    """
    ef = None if node_forces is None else np.linalg.norm(element_force_share(tube, node_forces), axis=1)
    speed = np.linalg.norm(state.v, axis=1)
    vm = von_mises(state.sig).mean(axis=1)
    ep = state.eps_p.mean(axis=1)
    out = {"time": float(state.t), "force": [], "velocity": [], "von_mises": [], "eps_p": [], "n_alive": []}
    for ids in selectors:
        live = ids[state.alive[ids]]
        out["n_alive"].append(int(live.size))
        if live.size == 0:
            for k in ("force", "velocity", "von_mises", "eps_p"):
                out[k].append(0.0)
            continue
        out["force"].append(0.0 if ef is None else float(ef[live].mean()))
        out["velocity"].append(float(speed[tube.elements[live]].mean()))
        out["von_mises"].append(float(vm[live].mean()))
        out["eps_p"].append(float(ep[live].mean()))
    return out


# ---------------------------------------------------------------------------
# result
# ---------------------------------------------------------------------------

ENERGY_FLOOR = 1e-3  # J
LEDGER_FIELDS = tuple(EnergyLedger.__dataclass_fields__)


@dataclass(eq=False)
class SimResult:
    config: dict
    version: str
    tube: TubeMesh
    x: np.ndarray
    v: np.ndarray
    alive: np.ndarray
    eps_p: np.ndarray
    damage: np.ndarray
    von_mises: np.ndarray
    probes: ProbeSeries
    ledger_times: np.ndarray
    ledger: np.ndarray
    holes: list
    stats: dict

    @property
    def energy_kJ(self) -> float:
        e = self.config.get("energy_kJ")
        return float(e if e is not None else self.config.get("waveform_energy_kJ") or 0.0)

    @property
    def ledger_history(self) -> dict:
        return {k: self.ledger[:, i] for i, k in enumerate(LEDGER_FIELDS)}

    def max_balance_error(self) -> float:
        """Worst |external - accounted| over the run, relative to peak external work."""
        h = self.ledger_history
        acc = h["kinetic"] + h["internal"] + h["contact"] + h["friction"] + h["hourglass"] + h["deleted"]
        peak = max(float(np.max(np.abs(h["external"]))), 1e-300)
        return float(np.max(np.abs(h["external"] - acc))) / peak if len(acc) else 0.0

    def metrics(self) -> dict:
        from .postprocess import summarize_holes
        return summarize_holes(self.holes, self)

    def save(self, path) -> Path:
        """Write ``<path>.npz`` (arrays) and ``<path>.json`` (metadata)."""
        path = Path(path)
        base = path.with_suffix("") if path.suffix in (".npz", ".json") else path
        base.parent.mkdir(parents=True, exist_ok=True)
        pa = self.probes.arrays()
        np.savez(base.with_suffix(".npz"), x=self.x, v=self.v, alive=self.alive, eps_p=self.eps_p,
                 damage=self.damage, von_mises=self.von_mises, ledger_times=self.ledger_times,
                 ledger=self.ledger, probe_elements=np.array(self.probes.elements, dtype=np.int64)
                 .reshape(len(self.probes.elements), -1),
                 **{f"probe_{k}": v for k, v in pa.items()})
        meta = {"config": self.config, "version": self.version, "stats": self.stats,
                "probe_names": self.probes.names,
                "holes": [h.to_dict() for h in self.holes]}
        base.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return base.with_suffix(".npz")

    @classmethod
    def load(cls, path) -> "SimResult":
        from .postprocess import HoleRecord
        path = Path(path)
        base = path.with_suffix("") if path.suffix in (".npz", ".json") else path
        meta = json.loads(base.with_suffix(".json").read_text())
        with np.load(base.with_suffix(".npz")) as z:
            arr = {k: z[k] for k in z.files}
        cfg = SimConfig.from_dict(meta["config"])
        probes = ProbeSeries(meta["probe_names"], list(arr["probe_elements"]))
        n = len(arr["probe_time"])
        for i in range(n):
            probes.append({"time": float(arr["probe_time"][i]),
                           **{k: list(arr[f"probe_{k}"][i]) for k in
                              ("force", "velocity", "von_mises", "eps_p", "n_alive")}})
        return cls(config=meta["config"], version=meta["version"], tube=build_tube(cfg),
                   x=arr["x"], v=arr["v"], alive=arr["alive"], eps_p=arr["eps_p"],
                   damage=arr["damage"], von_mises=arr["von_mises"], probes=probes,
                   ledger_times=arr["ledger_times"], ledger=arr["ledger"],
                   holes=[HoleRecord.from_dict(h) for h in meta["holes"]], stats=meta["stats"])


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

@dataclass
class CouplingContext:
    """Everything a coupling step needs besides the mechanical state."""

    cfg: SimConfig
    tube: TubeMesh
    mat: JCMaterial
    coil: CoilSpec
    waveform: CurrentWaveform
    solver: ExplicitSolver
    contact: ContactModel | None
    omega_c: float
    bore_facet_elem: np.ndarray
    last_loads: LoadField | None = None
    node_forces: np.ndarray | None = None
    substeps: int = 0
    iterations: list = field(default_factory=list)


def make_context(cfg: SimConfig, workers: int | None = None) -> CouplingContext:
    tube = build_tube(cfg)
    mat = load_deck(cfg.material)
    coil = build_coil(cfg)
    wf = build_waveform(cfg)
    punches, tools = build_tools(cfg, tube)
    solver = ExplicitSolver(tube, mat, order=cfg.order, workers=workers or cfg.workers,
                            hourglass=cfg.hourglass)
    contact, omega = None, 0.0
    if tools:
        fm = FrictionModel(**cfg.friction)
        k = auto_penalty_stiffness(tube, mat.E, cfg.penalty_alpha)
        contact = ContactModel(tools, k, fm, tube.n_nodes)
        omega = contact_omega(k, solver.mass)
    ijk = tube.element_ijk()
    bore = tube.element_id(*ijk[ijk[:, 2] == 0].T)
    return CouplingContext(cfg, tube, mat, coil, wf, solver, contact, omega, bore)


def _loads(ctx: CouplingContext, st: DynState, I: float, t: float) -> np.ndarray:
    x = None if ctx.cfg.frozen_geometry else st.x
    lf = build_surface_loads(ctx.tube, x, ctx.coil, I, ctx.cfg.eta,
                             facet_alive=st.alive[ctx.bore_facet_elem] if ctx.cfg.load_model == "shielded" else None,
                             model=ctx.cfg.load_model, t=t)
    f = np.zeros((ctx.tube.n_nodes, 3))
    f[lf.node_ids] = lf.forces
    ctx.last_loads = lf
    return f


def _advance(ctx: CouplingContext, st: DynState, f_ext: np.ndarray, t_end: float):
    dt_max = stable_timestep(ctx.tube, ctx.mat, ctx.cfg.dt_safety, state=st, contact_omega=ctx.omega_c)
    span = t_end - st.t
    n_sub = max(1, math.ceil(span / dt_max * (1.0 - 1e-12)))
    dt = span / n_sub
    for _ in range(n_sub):
        ctx.solver.step(st, dt, f_ext, ctx.contact)
        ctx.solver.delete_elements(st)
    ctx.substeps += n_sub
    st.t = t_end


def coupling_step(ctx: CouplingContext, st: DynState, t: float) -> DynState:
    """One outer-loop step from ``t`` to ``t + dt_c`` (state updated in place).

    The current is sampled at the step midpoint.
    """
    cfg = ctx.cfg
    t_end = t + cfg.dt_coupling
    I = float(ctx.waveform(t + 0.5 * cfg.dt_coupling))
    f0 = _loads(ctx, st, I, t)
    f = f0
    if cfg.coupling_iterations > 1 and I != 0.0:
        for it in range(1, cfg.coupling_iterations + 1):
            trial = st.copy()
            _advance(ctx, trial, f, t_end)
            f1 = 0.5 * (f0 + _loads(ctx, trial, I, t_end))
            change = np.linalg.norm(f1 - f) / max(np.linalg.norm(f1), 1e-300)
            f = f1
            if change < cfg.coupling_tol:
                break
        ctx.iterations.append(it)
    ctx.node_forces = f
    _advance(ctx, st, f, t_end)
    return st


def _check_ledger(st: DynState, peak_ext: float, threshold: float):
    led = st.ledger
    if not led.is_finite():
        raise UnstableRun(f"non-finite energy ledger at t={st.t:.6g} s: {led.as_dict()}")
    # the absolute floor keeps start-up rounding on micro-joule totals from tripping it
    if abs(led.balance_error) > threshold * peak_ext + ENERGY_FLOOR:
        raise UnstableRun(f"energy balance off by {abs(led.balance_error) / peak_ext:.3%} of peak "
                          f"external work at t={st.t:.6g} s: {led.as_dict()}")


def run_simulation(cfg: SimConfig, workers: int | None = None, frames_dir=None,
                   progress=None) -> SimResult:
    """Run the coupled simulation and post-process the final state.

    ``frames_dir`` receives a VTK frame every ``cfg.frame_every`` coupling
    steps (when > 0). ``progress(t, state)`` is called after every step.
    """
    from .postprocess import holes_for_result, write_vtk_frame

    ctx = make_context(cfg, workers)
    if cfg.total_time < ctx.waveform.t_end * (1.0 - 1e-9):
        ctx.solver.close()
        raise ConfigError(f"total_time {cfg.total_time:g} s is shorter than the current pulse "
                          f"({ctx.waveform.t_end:g} s)")
    tube, mat = ctx.tube, ctx.mat
    f_hz = ringing_frequency(ctx.waveform)
    delta = skin_depth(mat.conductivity, MU0, 2.0 * math.pi * f_hz)
    shield = shielding_check(tube.thickness, delta)

    layout = build_layout(cfg)
    template = build_template(cfg)
    if cfg.probes == "auto":
        footprint = template.footprint_radius if template is not None else 2.5e-3
        selectors = probe_elements(tube, layout, footprint)
    else:
        selectors = [np.asarray(p, dtype=np.int64) for p in cfg.probes]
    names = [layout.site_name(i) for i in range(len(selectors))] if cfg.probes == "auto" \
        else [f"probe:{i}" for i in range(len(selectors))]
    probes = ProbeSeries(names, selectors)

    st = ctx.solver.initial_state()
    probes.append(extract_probes(tube, st, selectors, None))
    led_t, led = [0.0], [[getattr(st.ledger, k) for k in LEDGER_FIELDS]]
    n_steps = int(round(cfg.total_time / cfg.dt_coupling))
    t_pulse = ctx.waveform.t_end
    peak_ke = peak_ext = 0.0
    frame = 0
    wall0 = time.perf_counter()
    stop = "total_time"
    try:
        for k in range(n_steps):
            t = k * cfg.dt_coupling
            coupling_step(ctx, st, t)
            st.t = (k + 1) * cfg.dt_coupling
            peak_ext = max(peak_ext, abs(st.ledger.external))
            peak_ke = max(peak_ke, st.ledger.kinetic)
            _check_ledger(st, peak_ext, cfg.energy_abort)
            probes.append(extract_probes(tube, st, selectors, ctx.node_forces))
            led_t.append(st.t)
            led.append([getattr(st.ledger, f) for f in LEDGER_FIELDS])
            if frames_dir is not None and cfg.frame_every > 0 and (k + 1) % cfg.frame_every == 0:
                frame += 1
                write_vtk_frame(Path(frames_dir) / f"frame_{frame:05d}.vtk", tube, st)
            if progress is not None:
                progress(st.t, st)
            if st.t >= t_pulse and peak_ke > 0 and st.ledger.kinetic < cfg.rest_fraction * peak_ke:
                stop = "rest"
                break
    finally:
        ctx.solver.close()

    vm = von_mises(st.sig).mean(axis=1)
    stats = {"t_end": st.t, "stop": stop, "substeps": ctx.substeps, "n_eroded": st.n_eroded,
             "n_deleted": int(np.sum(~st.alive)), "skin_depth": delta, "shielding_valid": shield.valid,
             "ringing_frequency": f_hz, "peak_external": peak_ext,
             "max_penetration": float(ctx.contact.max_depth.max()) if ctx.contact else 0.0,
             "max_penetration_ratio": float(np.max(ctx.contact.max_depth / local_edge_length(tube)))
             if ctx.contact else 0.0,
             "cone_violations": ctx.contact.cone_violations if ctx.contact else 0,
             "coupling_iterations": ctx.iterations[-50:], "wall_time": time.perf_counter() - wall0}
    res = SimResult(config=cfg.to_dict(), version=__version__, tube=tube, x=st.x.copy(), v=st.v.copy(),
                    alive=st.alive.copy(), eps_p=st.eps_p.max(axis=1), damage=st.damage.max(axis=1),
                    von_mises=vm, probes=probes, ledger_times=np.array(led_t), ledger=np.array(led),
                    holes=[], stats=stats)
    res.holes = holes_for_result(res)
    return res


__all__ = ["SimConfig", "SimResult", "ProbeSeries", "CouplingContext", "reference_config",
           "run_simulation", "coupling_step", "make_context", "extract_probes", "probe_elements",
           "build_waveform", "build_tube", "build_tools", "build_template", "build_layout",
           "build_coil", "element_force_share", "von_mises", "EMFPError"]

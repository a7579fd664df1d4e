"""Penalty contact of tube nodes against rigid analytic tools.

Normal force is ``k * depth`` along the tool's outward normal and is never
tensile. Friction is Coulomb, regularised in slip velocity: the tangential
force is ``-mu * N * v_t / max(|v_t|, v_reg)``. Below ``v_reg`` it grows
linearly with slip speed instead of jumping, so it never leaves the cone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import RigidTool, TubeMesh

PENALTY_ALPHA = 10.0


@dataclass(frozen=True)
class FrictionModel:
    mu_s: float = 0.30
    mu_d: float = 0.30
    v_reg: float = 1e-3

    def __post_init__(self):
        if not (self.mu_s >= self.mu_d >= 0):
            raise ValueError("need mu_s >= mu_d >= 0")
        if not self.v_reg > 0:
            raise ValueError("v_reg must be > 0")


@dataclass(frozen=True, eq=False)
class ContactSet:
    nodes: np.ndarray
    tools: np.ndarray
    depth: np.ndarray
    normals: np.ndarray
    slip: np.ndarray

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def empty(cls) -> "ContactSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0),
                   np.zeros((0, 3)), np.zeros((0, 3)))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "tool_id", "depth_m", "nx", "ny", "nz", "slip_x", "slip_y", "slip_z"])
            for i in range(len(self)):
                w.writerow([int(self.nodes[i]), int(self.tools[i])]
                           + [f"{v:.17g}" for v in (self.depth[i], *self.normals[i], *self.slip[i])])
        return path


def _candidates(tool: RigidTool, x: np.ndarray, nodes: np.ndarray, margin: float) -> np.ndarray:
    """Broad phase: nodes inside the tool's axis-aligned box (or near the die bore)."""
    p = x[nodes]
    if tool.kind == "die":
        return nodes[np.hypot(p[:, 0], p[:, 1]) > tool.bore_radius - margin]
    lo, hi = tool.bounding_box(reach=1.0)
    inside = np.all((p >= lo - margin) & (p <= hi + margin), axis=1)
    return nodes[inside]


def detect_penetrations(x: np.ndarray, tools: list[RigidTool], v: np.ndarray | None = None,
                        nodes: np.ndarray | None = None, margin: float = 0.0,
                        broad_phase: bool = True) -> ContactSet:
    """Every (node, tool) pair with negative signed distance."""
    x = np.asarray(x, dtype=float)
    nodes = np.arange(len(x)) if nodes is None else np.asarray(nodes)
    out_n, out_t, out_d, out_nrm = [], [], [], []
    for t_id, tool in enumerate(tools):
        cand = _candidates(tool, x, nodes, margin) if broad_phase else nodes
        if cand.size == 0:
            continue
        d, nrm, _ = tool.signed_distance(x[cand])
        hit = d < 0
        if np.any(hit):
            out_n.append(cand[hit])
            out_t.append(np.full(int(hit.sum()), t_id))
            out_d.append(-d[hit])
            out_nrm.append(nrm[hit])
    if not out_n:
        return ContactSet.empty()
    n = np.concatenate(out_n)
    normals = np.concatenate(out_nrm)
    if v is None:
        slip = np.zeros_like(normals)
    else:
        vn = np.asarray(v)[n]
        slip = vn - np.sum(vn * normals, axis=1, keepdims=True) * normals
    order = np.lexsort((np.concatenate(out_t), n))
    return ContactSet(n[order], np.concatenate(out_t)[order], np.concatenate(out_d)[order],
                      normals[order], slip[order])


@dataclass(frozen=True)
class ContactResult:
    forces: np.ndarray
    stored_energy: float
    dissipation_power: float
    normal: np.ndarray
    tangential: np.ndarray


def penalty_forces(contacts: ContactSet, stiffness, fm: FrictionModel, n_nodes: int) -> ContactResult:
    """Nodal forces from penalty springs plus regularised Coulomb friction.

    ``stiffness`` is a scalar or a per-node array (N/m).
    """
    forces = np.zeros((n_nodes, 3))
    if len(contacts) == 0:
        return ContactResult(forces, 0.0, 0.0, np.zeros(0), np.zeros((0, 3)))
    k = np.asarray(stiffness, dtype=float)
    k = k[contacts.nodes] if k.ndim else np.full(len(contacts), float(k))
    if np.any(k <= 0):
        raise ValueError("penalty stiffness must be > 0")
    N = k * contacts.depth
    vt = contacts.slip
    speed = np.linalg.norm(vt, axis=1)
    mu = np.where(speed >= fm.v_reg, fm.mu_d, fm.mu_s)
    Ft = -(mu * N / np.maximum(speed, fm.v_reg))[:, None] * vt
    # shave rounding so |Ft| never exceeds mu * N, not even by an ulp
    tn = np.linalg.norm(Ft, axis=1)
    cap = mu * N * (1.0 - 1e-14)
    over = tn > cap
    if np.any(over):
        Ft[over] *= (cap[over] / tn[over])[:, None]
    F = N[:, None] * contacts.normals + Ft
    np.add.at(forces, contacts.nodes, F)
    stored = float(np.sum(0.5 * k * contacts.depth ** 2))
    power = float(-np.sum(Ft * vt))
    return ContactResult(forces, stored, power, N, Ft)


def auto_penalty_stiffness(mesh: TubeMesh, E: float, alpha: float = PENALTY_ALPHA) -> np.ndarray:
    """Per-node ``alpha * E * A_trib / h`` with h the radial element size.

    Nodes off the outer surface borrow the mean outer tributary area so that
    nodes exposed by perforation still see a sensible spring.
    """
    h = mesh.thickness / mesh.n_thickness
    area = np.array(mesh.outer_area, dtype=float)
    mean = float(area[area > 0].mean()) if np.any(area > 0) else h * h
    area = np.where(area > 0, area, mean)
    return alpha * E * area / h


def contact_omega(stiffness, mass) -> float:
    """Largest penalty-spring frequency sqrt(k/m) over nodes."""
    k = np.broadcast_to(np.asarray(stiffness, dtype=float), np.shape(mass))
    return float(np.sqrt(np.max(k / mass)))


def local_edge_length(mesh: TubeMesh, x: np.ndarray | None = None) -> np.ndarray:
    """Mean length of the element edges meeting at each node."""
    edges = mesh.edge_lengths(x)
    per_el = edges.mean(axis=1)
    tot = np.zeros(mesh.n_nodes)
    cnt = np.zeros(mesh.n_nodes)
    for a in range(8):
        np.add.at(tot, mesh.elements[:, a], per_el)
        np.add.at(cnt, mesh.elements[:, a], 1.0)
    return tot / np.maximum(cnt, 1.0)


class ContactModel:
    """Binds tools, stiffness and friction into the solver's force callback."""

    def __init__(self, tools: list[RigidTool], stiffness, friction: FrictionModel,
                 n_nodes: int, margin: float = 1e-3):
        self.tools = list(tools)
        self.stiffness = stiffness
        self.friction = friction
        self.n_nodes = n_nodes
        self.margin = margin
        self.nodes: np.ndarray | None = None
        self.last: ContactSet = ContactSet.empty()
        self.max_depth = np.zeros(n_nodes)
        self.cone_violations = 0

    def __call__(self, x, v):
        cs = detect_penetrations(x, self.tools, v, self.nodes, self.margin)
        self.last = cs
        res = penalty_forces(cs, self.stiffness, self.friction, self.n_nodes)
        if len(cs):
            np.maximum.at(self.max_depth, cs.nodes, cs.depth)
            tn = np.linalg.norm(res.tangential, axis=1)
            self.cone_violations += int(np.sum(tn > self.friction.mu_s * res.normal + 1e-12))
        return res.forces, res.stored_energy, res.dissipation_power


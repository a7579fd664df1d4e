"""Hole detection, hole metrics, sweep trend reports and file export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .mesh import PunchLayout, TubeMesh

STATUSES = ("intact", "indented", "petaled-partial", "perforated")
INDENT_THRESHOLD = 0.02
METRICS_HEADER = ("energy_kJ", "punch_type", "layout", "holes", "mean_diameter_mm", "eta")
_FACE6 = ndimage.generate_binary_structure(3, 1)
_FACE4 = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class HoleRecord:
    punch_id: int
    site: str
    status: str
    diameter: float | None = None
    n_deleted: int = 0
    slug_separated: bool = False
    max_eps_p: float = 0.0
    open_area: float = 0.0

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown hole status {self.status!r}")
        if (self.diameter is not None) != (self.status == "perforated"):
            raise ValueError("a diameter is recorded exactly for perforated holes")
        if self.diameter is not None and not self.diameter > 0:
            raise ValueError("hole diameter must be > 0")

    @property
    def opened(self) -> bool:
        """A through-thickness opening exists (clean or petaled)."""
        return self.status in ("perforated", "petaled-partial")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HoleRecord":
        return cls(**d)


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def _plane_basis(axis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal (e1, e2) spanning the plane normal to ``axis``.

    The basis depends only on the line of the axis, not its sign, so a
    flipped axis projects to exactly the same coordinates.
    """
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    lead = int(np.argmax(np.abs(a)))
    if a[lead] < 0:
        a = -a
    helper = np.zeros(3)
    helper[(lead + 1) % 3] = 1.0
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return a, e1, e2


def polygon_area(pts2: np.ndarray) -> float:
    """Area of the polygon through the points, ordered by angle about their centroid."""
    if len(pts2) < 3:
        return 0.0
    c = pts2.mean(axis=0)
    d = pts2 - c
    order = np.lexsort((np.hypot(d[:, 0], d[:, 1]), np.arctan2(d[:, 1], d[:, 0])))
    p = d[order]
    q = np.roll(p, -1, axis=0)
    return 0.5 * abs(float(np.sum(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0])))


def hole_diameter(rim_points, axis) -> float:
    """Equivalent diameter ``2 sqrt(A / pi)`` of the rim polygon projected
    onto the plane normal to the punch axis."""
    pts = np.asarray(rim_points, dtype=float)
    _, e1, e2 = _plane_basis(axis)
    area = polygon_area(np.stack([pts @ e1, pts @ e2], axis=1))
    return 2.0 * math.sqrt(area / math.pi)


def through_thickness(deleted: np.ndarray) -> np.ndarray:
    """Mask of deleted cells in face-connected regions that touch both the
    first and last thickness layer. ``deleted`` is indexed (i, j, k)."""
    lab, n = ndimage.label(deleted, structure=_FACE6)
    if n == 0:
        return np.zeros_like(deleted, dtype=bool)
    first = np.unique(lab[..., 0])
    last = np.unique(lab[..., -1])
    keep = np.intersect1d(first[first > 0], last[last > 0])
    return np.isin(lab, keep)


def enclosed_islands(open_cols: np.ndarray) -> np.ndarray:
    """Closed columns cut off from the window border by open columns."""
    lab, n = ndimage.label(~open_cols, structure=_FACE4)
    if n == 0:
        return np.zeros_like(open_cols)
    border = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    return (lab > 0) & ~np.isin(lab, border)


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SiteWindow:
    """Elements of the tube around one punch, as a local (i, dj, k) grid."""

    i: np.ndarray  # axial indices (rows of the grid)
    j: np.ndarray  # circumferential indices (columns, already wrapped)
    elems: np.ndarray  # (ni, nj, nk) element ids

    @property
    def shape(self):
        return self.elems.shape


def _axis_centres(tube: TubeMesh) -> tuple[np.ndarray, np.ndarray]:
    """Reference axial and angular centres of the element rows and columns."""
    z = tube.nodes[tube.node_id(np.arange(tube.n_axial + 1), 0, 0), 2]
    p = tube.nodes[tube.node_id(0, np.arange(tube.n_circ + 1), 0)]
    th = np.unwrap(np.arctan2(p[:, 1], p[:, 0]))
    if th[-1] < th[0]:
        th = -th
    return 0.5 * (z[1:] + z[:-1]), 0.5 * (th[1:] + th[:-1])


def outer_cell_areas(tube: TubeMesh) -> np.ndarray:
    """Reference outer-surface area of every (axial, circumferential) column."""
    f = tube.outer_facets
    a, b, c, d = (tube.nodes[f[:, m]] for m in range(4))
    return 0.5 * np.linalg.norm(np.cross(c - a, d - b), axis=1).reshape(tube.n_axial, tube.n_circ)


def site_window(tube: TubeMesh, z: float, theta: float, half_width: float) -> SiteWindow:
    r_mid = 0.5 * (tube.r_i + tube.r_o)
    zc, thc = _axis_centres(tube)
    rows = np.nonzero(np.abs(zc - z) <= half_width)[0]
    off = np.angle(np.exp(1j * (thc - theta))) * r_mid
    cols = np.nonzero(np.abs(off) <= half_width)[0]
    cols = cols[np.argsort(off[cols])]
    k = np.arange(tube.n_thickness)
    elems = tube.element_id(rows[:, None, None], cols[None, :, None], k[None, None, :])
    return SiteWindow(rows, cols, np.asarray(elems))


def window_half_width(tube: TubeMesh, layout: PunchLayout, footprint: float) -> float:
    r_mid = 0.5 * (tube.r_i + tube.r_o)
    limit = 0.49 * min(layout.angular_pitch * r_mid,
                       layout.set_spacing if layout.n_sets > 1 else math.inf)
    return min(2.0 * footprint, limit)


def _rim_nodes(tube: TubeMesh, win: SiteWindow, hole_cols: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Outer-surface nodes shared by a hole column and an alive non-hole column."""
    kout = tube.n_thickness - 1
    alive_out = alive[win.elems[:, :, kout]] & ~hole_cols
    ni, nj = hole_cols.shape
    nodes = []
    for a in range(ni + 1):
        for b in range(nj + 1):
            cells = [(a - 1 + p, b - 1 + q) for p in (0, 1) for q in (0, 1)]
            cells = [(p, q) for p, q in cells if 0 <= p < ni and 0 <= q < nj]
            if any(hole_cols[c] for c in cells) and any(alive_out[c] for c in cells):
                # local node (a, b) is the low corner of local cell (a, b)
                ia, jb = win.i[0] + a, win.j[0] + b
                nodes.append(int(tube.node_id(ia, jb, tube.n_thickness)))
    return np.array(sorted(set(nodes)), dtype=np.int64)


def detect_holes(tube: TubeMesh, x: np.ndarray, alive: np.ndarray, layout: PunchLayout,
                 footprint: float, eps_p: np.ndarray | None = None, punch_type: str | None = None,
                 indent_threshold: float = INDENT_THRESHOLD) -> list[HoleRecord]:
    """Classify every punch site of ``layout`` on the final tube state.

    ``alive`` is the element mask and ``eps_p`` an optional per-element
    plastic strain used for the indentation test.
    """
    alive = np.asarray(alive, dtype=bool)
    hw = window_half_width(tube, layout, footprint)
    cross = math.pi * footprint ** 2
    cell_area = outer_cell_areas(tube)
    out = []
    for pid, (_, _, z, th) in enumerate(layout.sites()):
        win = site_window(tube, z, th, hw)
        deleted = ~alive[win.elems]
        n_del = int(deleted.sum())
        ep = 0.0 if eps_p is None else float(np.max(np.where(alive[win.elems], eps_p[win.elems], 0.0)))
        name = layout.site_name(pid)
        through = through_thickness(deleted)
        if not through.any():
            status = "indented" if (n_del > 0 or ep >= indent_threshold) else "intact"
            out.append(HoleRecord(pid, name, status, None, n_del, False, ep))
            continue
        hole_cols = through.any(axis=2)
        slug = False
        if punch_type == "concave":
            island = enclosed_islands(hole_cols)
            if island.any():
                slug = True
                hole_cols = hole_cols | island
        area = float(np.sum(cell_area[np.ix_(win.i, win.j)][hole_cols]))
        axis = np.array([math.cos(th), math.sin(th), 0.0])
        rim = _rim_nodes(tube, win, hole_cols, alive)
        diameter = hole_diameter(x[rim], axis) if len(rim) >= 3 else 0.0
        flaps = False
        if len(rim):
            rr = np.hypot(x[rim, 0], x[rim, 1])
            outer = tube.node_id(win.i[:, None], win.j[None, :], tube.n_thickness).ravel()
            ref = float(np.median(np.hypot(x[outer, 0], x[outer, 1])))
            flaps = bool(np.max(rr) - ref > 0.5 * tube.thickness)
        if (area < cross and flaps) or diameter <= 0.0:
            out.append(HoleRecord(pid, name, "petaled-partial", None, n_del, slug, ep, area))
        else:
            out.append(HoleRecord(pid, name, "perforated", diameter, n_del, slug, ep, area))
    return out


def holes_for_result(result) -> list[HoleRecord]:
    """Re-run detection on a stored :class:`~emfp.driver.SimResult`."""
    from .driver import SimConfig, build_layout, build_template

    cfg = SimConfig.from_dict(result.config)
    template = build_template(cfg)
    footprint = template.footprint_radius if template is not None else 2.5e-3
    return detect_holes(result.tube, result.x, result.alive, build_layout(cfg), footprint,
                        result.eps_p, cfg.punch_type)


def summarize_holes(holes: list[HoleRecord], result=None) -> dict:
    d = [h.diameter for h in holes if h.diameter is not None]
    out = {"holes": sum(h.opened for h in holes),
           "complete": sum(h.status == "perforated" for h in holes),
           "petaled": sum(h.status == "petaled-partial" for h in holes),
           "indented": sum(h.status == "indented" for h in holes),
           "slugs": sum(h.slug_separated for h in holes),
           "mean_diameter_mm": float(np.mean(d)) * 1e3 if d else None}
    if result is not None:
        cfg = result.config
        out.update(energy_kJ=result.energy_kJ, punch_type=cfg.get("punch_type"),
                   layout=cfg.get("punch_count"), eta=cfg.get("eta"))
    return out


# ---------------------------------------------------------------------------
# trend report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrendRow:
    energy_kJ: float
    punch_type: str
    layout: int
    holes: float
    mean_diameter_mm: float | None
    eta: float
    complete: float = 0.0
    runs: int = 1


@dataclass
class TrendReport:
    rows: list[TrendRow]
    flags: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def row(self, energy_kJ: float, punch_type: str, layout: int) -> TrendRow:
        for r in self.rows:
            if math.isclose(r.energy_kJ, energy_kJ) and r.punch_type == punch_type and r.layout == layout:
                return r
        raise KeyError((energy_kJ, punch_type, layout))

    def summary(self) -> str:
        lines = [f"{'E (kJ)':>7} {'punch':>8} {'layout':>6} {'holes':>6} {'complete':>8} {'d (mm)':>8} {'eta':>6}"]
        for r in self.rows:
            d = "-" if r.mean_diameter_mm is None else f"{r.mean_diameter_mm:.3f}"
            lines.append(f"{r.energy_kJ:7.3f} {r.punch_type:>8} {r.layout:6d} {r.holes:6g} "
                         f"{r.complete:8g} {d:>8} {r.eta:6.3f}")
        lines.append("trend flags: " + ("none" if not self.flags else ""))
        lines.extend(f"  - {f}" for f in self.flags)
        return "\n".join(lines)


def _row_from_metrics(items: list[dict]) -> TrendRow:
    m0 = items[0]
    ds = [m["mean_diameter_mm"] for m in items if m["mean_diameter_mm"] is not None]
    return TrendRow(energy_kJ=float(m0["energy_kJ"]), punch_type=str(m0["punch_type"]),
                    layout=int(m0["layout"]), holes=float(np.mean([m["holes"] for m in items])),
                    mean_diameter_mm=float(np.mean(ds)) if ds else None, eta=float(m0["eta"]),
                    complete=float(np.mean([m["complete"] for m in items])), runs=len(items))


def build_trend_report(results) -> TrendReport:
    """Aggregate results (SimResult objects or metric dicts) per
    (energy, punch type, layout), sorted by energy, and flag energy trends
    that are not monotone."""
    results = list(results)
    if not results:
        raise ValueError("a trend report needs at least one result")
    metrics = [r if isinstance(r, dict) else r.metrics() for r in results]
    groups: dict = {}
    for m in metrics:
        key = (round(float(m["energy_kJ"]), 9), str(m["punch_type"]), int(m["layout"]))
        groups.setdefault(key, []).append(m)
    rows = [_row_from_metrics(groups[k]) for k in sorted(groups)]
    for r in rows:
        if r.holes > r.layout:
            raise ValueError(f"hole count {r.holes} exceeds layout {r.layout}")
    flags = []
    for pt, lay in sorted({(r.punch_type, r.layout) for r in rows}):
        seq = [r for r in rows if r.punch_type == pt and r.layout == lay]
        for a, b in zip(seq, seq[1:]):
            if b.holes < a.holes:
                flags.append(f"{pt}/{lay}: hole count drops from {a.holes:g} at {a.energy_kJ:g} kJ "
                             f"to {b.holes:g} at {b.energy_kJ:g} kJ")
            if (a.mean_diameter_mm is not None and b.mean_diameter_mm is not None
                    and b.mean_diameter_mm < a.mean_diameter_mm):
                flags.append(f"{pt}/{lay}: mean diameter drops from {a.mean_diameter_mm:.3f} mm "
                             f"at {a.energy_kJ:g} kJ to {b.mean_diameter_mm:.3f} mm at {b.energy_kJ:g} kJ")
    prov = {"runs": len(results),
            "versions": sorted({r.version for r in results if not isinstance(r, dict)})}
    return TrendReport(rows, flags, prov)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_metrics_csv(report: TrendReport | None, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in ([] if report is None else report.rows):
            w.writerow([_fmt(r.energy_kJ), r.punch_type, r.layout, _fmt(r.holes),
                        _fmt(r.mean_diameter_mm), _fmt(r.eta)])
    return path


# ---------------------------------------------------------------------------
# legacy VTK
# ---------------------------------------------------------------------------

def _write_vtk(path, points, cells, point_data: dict, cell_data: dict, title: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    f = "{:.17g}".format
    with path.open("w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        for p in points:
            fh.write(f"{f(p[0])} {f(p[1])} {f(p[2])}\n")
        fh.write(f"CELLS {len(cells)} {len(cells) * 9}\n")
        for c in cells:
            fh.write("8 " + " ".join(str(int(v)) for v in c) + "\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("12\n" * len(cells))
        if point_data:
            fh.write(f"POINT_DATA {len(points)}\n")
            for name in sorted(point_data):
                fh.write(f"VECTORS {name} double\n")
                for p in point_data[name]:
                    fh.write(f"{f(p[0])} {f(p[1])} {f(p[2])}\n")
        if cell_data:
            fh.write(f"CELL_DATA {len(cells)}\n")
            for name in sorted(cell_data):
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in cell_data[name]:
                    fh.write(f(float(v)) + "\n")
    return path


def write_vtk(result, path) -> Path:
    """Final state of a run as a legacy VTK unstructured grid."""
    t = result.tube
    return _write_vtk(path, result.x, t.elements,
                      {"displacement": result.x - t.nodes, "velocity": result.v},
                      {"alive": result.alive.astype(float), "damage": result.damage,
                       "eps_p": result.eps_p, "von_mises": result.von_mises},
                      f"emfp {result.config.get('name', '')} t={result.stats.get('t_end', 0.0):.17g}")


def write_vtk_frame(path, tube: TubeMesh, state) -> Path:
    from .driver import von_mises

    return _write_vtk(path, state.x, tube.elements,
                      {"displacement": state.x - tube.nodes, "velocity": state.v},
                      {"alive": state.alive.astype(float), "damage": state.damage.max(axis=1),
                       "eps_p": state.eps_p.max(axis=1), "von_mises": von_mises(state.sig).mean(axis=1)},
                      f"emfp frame t={state.t:.17g}")


def read_vtk(path) -> dict:
    """Parse a file written by :func:`write_vtk` back into arrays."""
    lines = Path(path).read_text().splitlines()
    out = {"title": lines[1], "point_data": {}, "cell_data": {}}
    i = 4
    section = None
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        if tok[0] == "POINTS":
            n = int(tok[1])
            out["points"] = np.array([[float(v) for v in lines[i + 1 + r].split()] for r in range(n)])
            i += n + 1
        elif tok[0] == "CELLS":
            n = int(tok[1])
            out["cells"] = np.array([[int(v) for v in lines[i + 1 + r].split()[1:]] for r in range(n)])
            i += n + 1
        elif tok[0] == "CELL_TYPES":
            i += int(tok[1]) + 1
        elif tok[0] in ("POINT_DATA", "CELL_DATA"):
            section = "point_data" if tok[0] == "POINT_DATA" else "cell_data"
            count = int(tok[1])
            i += 1
        elif tok[0] == "VECTORS":
            out[section][tok[1]] = np.array([[float(v) for v in lines[i + 1 + r].split()]
                                             for r in range(count)])
            i += count + 1
        elif tok[0] == "SCALARS":
            out[section][tok[1]] = np.array([float(lines[i + 2 + r]) for r in range(count)])
            i += count + 2
        else:
            raise ValueError(f"unexpected VTK line {i + 1}: {lines[i]!r}")
    return out

"""Capacitor-bank discharge circuit and coil-current waveforms.

The bank is a lumped series RLC loop with constant parameters over the
pulse. Current can come from the closed-form damped sinusoid, from a
fixed-step RK4 integration of the circuit ODE, or from a sampled
(measured) trace read from CSV.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import FitDiverged, NonMonotonicTime, OverdampedCircuit, ParseError

log = logging.getLogger(__name__)

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
CURRENT_UNITS = {"A": 1.0, "kA": 1e3, "MA": 1e6}


@dataclass(frozen=True)
class CircuitParams:
    """Series RLC discharge circuit.

    ``L`` and ``R`` are loop totals. When the machine/coil/workpiece
    breakdown is given (``L_i``, ``L_eq`` and ``R_i``, ``R_eq``), the totals
    must equal ``L_eq + L_i`` and ``R_eq + R_i``; use :meth:`from_breakdown`
    to build a consistent instance.
    """

    C: float
    L: float
    R: float
    V0: float
    L_i: float | None = None
    R_i: float | None = None
    L_eq: float | None = None
    R_eq: float | None = None
    L_coil: float | None = None
    R_coil: float | None = None
    L_w: float | None = None
    R_w: float | None = None

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"capacitance must be > 0, got {self.C}")
        if not self.L > 0:
            raise ValueError(f"inductance must be > 0, got {self.L}")
        if self.R < 0:
            raise ValueError(f"resistance must be >= 0, got {self.R}")
        if self.V0 < 0:
            raise ValueError(f"charge voltage must be >= 0, got {self.V0}")
        if self.L_i is not None and self.L_eq is not None:
            if self.L != self.L_eq + self.L_i:
                raise ValueError("L must equal L_eq + L_i")
        if self.R_i is not None and self.R_eq is not None:
            if self.R != self.R_eq + self.R_i:
                raise ValueError("R must equal R_eq + R_i")

    @classmethod
    def from_breakdown(cls, C, V0, L_i, R_i, L_eq, R_eq, **extra):
        """Build totals from machine-side and equivalent coil+workpiece parts."""
        return cls(C=C, L=L_eq + L_i, R=R_eq + R_i, V0=V0, L_i=L_i, R_i=R_i,
                   L_eq=L_eq, R_eq=R_eq, **extra)

    @property
    def energy(self) -> float:
        """Stored bank energy 0.5*C*V0**2 in J."""
        return 0.5 * self.C * self.V0 * self.V0

    def with_energy(self, energy: float) -> "CircuitParams":
        """Same circuit charged to store ``energy`` joules (V0 scales as sqrt(E))."""
        if energy < 0:
            raise ValueError("energy must be >= 0")
        return replace(self, V0=math.sqrt(2.0 * energy / self.C))


@dataclass(frozen=True)
class DischargeEnergy:
    energy: float

    @classmethod
    def of(cls, p: CircuitParams) -> "DischargeEnergy":
        return cls(p.energy)

    @property
    def kJ(self) -> float:
        return self.energy * 1e-3


@dataclass(frozen=True)
class CurrentWaveform:
    """Sampled coil current with linear interpolation.

    Before the first sample the current is zero. After the last sample it
    either holds the last value (``after_end="hold"``) or drops to zero
    (``after_end="zero"``).
    """

    times: np.ndarray
    currents: np.ndarray
    interp: str = "linear"
    after_end: str = "hold"
    energy: float | None = field(default=None, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        i = np.asarray(self.currents, dtype=float)
        if t.ndim != 1 or t.shape != i.shape:
            raise ValueError("times and currents must be 1-D arrays of equal length")
        if t.size < 2:
            raise ValueError("a waveform needs at least 2 samples")
        if np.any(np.diff(t) <= 0):
            raise NonMonotonicTime("sample times must be strictly increasing")
        if self.interp != "linear":
            raise ValueError(f"unsupported interpolation {self.interp!r}")
        if self.after_end not in ("hold", "zero"):
            raise ValueError("after_end must be 'hold' or 'zero'")
        t.setflags(write=False)
        i.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "currents", i)

    def __call__(self, t):
        right = self.currents[-1] if self.after_end == "hold" else 0.0
        out = np.interp(t, self.times, self.currents, left=0.0, right=right)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def scaled(self, factor: float) -> "CurrentWaveform":
        energy = None if self.energy is None else self.energy * factor * factor
        return CurrentWaveform(self.times, self.currents * factor, self.interp,
                               self.after_end, energy)

    def with_energy(self, energy: float) -> "CurrentWaveform":
        """Rescale amplitude so the trace corresponds to ``energy`` J.

        Current scales as sqrt(E) at fixed circuit impedance.
        """
        if self.energy is None or self.energy <= 0:
            raise ValueError("waveform has no reference energy to scale from")
        w = self.scaled(math.sqrt(energy / self.energy))
        return replace(w, energy=energy)


def natural_frequency(p: CircuitParams) -> float:
    """Undamped angular frequency 1/sqrt(LC) in rad/s."""
    return 1.0 / math.sqrt(p.L * p.C)


def damping_ratio(p: CircuitParams) -> float:
    return p.R * math.sqrt(p.C / p.L) / 2.0


def ringing_frequency(p: CircuitParams) -> float:
    """Damped oscillation frequency f in Hz (zero when not underdamped)."""
    z = damping_ratio(p)
    if z >= 1.0:
        return 0.0
    return natural_frequency(p) / (2.0 * math.pi) * math.sqrt(1.0 - z * z)


def discharge_current(p: CircuitParams, t):
    """Closed-form underdamped discharge current I(t) in A.

    Raises
    ------
    OverdampedCircuit
        If the damping ratio is >= 1; use :func:`integrate_rlc` instead.
    """
    z = damping_ratio(p)
    if z >= 1.0:
        raise OverdampedCircuit(f"damping ratio {z:.4g} >= 1; closed form invalid")
    wn = natural_frequency(p)
    f = wn / (2.0 * math.pi) * math.sqrt(1.0 - z * z)
    t = np.asarray(t, dtype=float)
    amp = p.V0 / math.sqrt(1.0 - z * z) * math.sqrt(p.C / p.L)
    out = amp * np.exp(-z * wn * t) * np.sin(2.0 * math.pi * f * t)
    return float(out) if out.ndim == 0 else out


def first_zero_crossing(p: CircuitParams) -> float:
    """Time of the first current zero after t=0, i.e. half a ringing period."""
    f = ringing_frequency(p)
    if f == 0.0:
        raise OverdampedCircuit("current never reverses for zeta >= 1")
    return 0.5 / f


def _rk4_step_size(p: CircuitParams, dt: float) -> tuple[float, int]:
    # natural frequency bounds both the ringing and the decay rate
    f = natural_frequency(p) / (2.0 * math.pi)
    h_max = 1.0 / (200.0 * f)
    n_sub = max(1, math.ceil(dt / h_max))
    return dt / n_sub, n_sub


def integrate_rlc(p: CircuitParams, t_end: float, dt: float) -> CurrentWaveform:
    """RK4 solution of L I'' + R I' + I/C = 0 with I(0)=0, I'(0)=V0/L.

    Output is sampled every ``dt``; the internal step is refined so that there
    are at least 200 steps per ringing period.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not t_end > dt:
        raise ValueError("t_end must exceed dt")
    h, n_sub = _rk4_step_size(p, dt)
    n_out = int(math.floor(t_end / dt + 1e-9)) + 1
    a_r = p.R / p.L
    a_c = 1.0 / (p.L * p.C)

    def rhs(i, di):
        return di, -a_r * di - a_c * i

    out = np.empty(n_out)
    i, di = 0.0, p.V0 / p.L
    out[0] = i
    for k in range(1, n_out):
        for _ in range(n_sub):
            k1 = rhs(i, di)
            k2 = rhs(i + 0.5 * h * k1[0], di + 0.5 * h * k1[1])
            k3 = rhs(i + 0.5 * h * k2[0], di + 0.5 * h * k2[1])
            k4 = rhs(i + h * k3[0], di + h * k3[1])
            i += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            di += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        out[k] = i
    return CurrentWaveform(np.arange(n_out) * dt, out, energy=p.energy)


def synthesize(p: CircuitParams, t_end: float, dt: float, after_end="hold") -> CurrentWaveform:
    """Sample the closed-form current on a uniform grid."""
    n = int(math.floor(t_end / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    return CurrentWaveform(t, discharge_current(p, t), after_end=after_end, energy=p.energy)


def damped_sinusoid(t, amplitude, decay, frequency, phase):
    """A * exp(-decay*t) * sin(2*pi*f*t + phase)."""
    return amplitude * np.exp(-decay * t) * np.sin(2.0 * np.pi * frequency * t + phase)


@dataclass(frozen=True)
class SinusoidFit:
    amplitude: float
    decay: float
    frequency: float
    phase: float
    residual: float

    def as_circuit(self, C: float) -> CircuitParams:
        """Recover L, R, V0 for a bank of known capacitance ``C``.

        Uses decay = zeta*wn and f = wn*sqrt(1-zeta^2)/(2 pi).
        """
        wd = 2.0 * math.pi * self.frequency
        wn = math.hypot(wd, self.decay)
        zeta = self.decay / wn
        L = 1.0 / (wn * wn * C)
        R = 2.0 * zeta * math.sqrt(L / C)
        V0 = self.amplitude * math.sqrt(1.0 - zeta * zeta) / math.sqrt(C / L)
        return CircuitParams(C=C, L=L, R=R, V0=V0)


def _initial_guess(t, y):
    t0 = t[0]
    tt = t - t0
    k_peak = int(np.argmax(np.abs(y)))
    # lobes well above the noise floor; a crossing sits between two lobes
    # of opposite sign and is located by a straight-line fit across the gap
    big = np.abs(y) > 0.2 * abs(y[k_peak])
    idx = np.nonzero(big)[0]
    runs = np.split(idx, np.nonzero(np.diff(idx) > 1)[0] + 1) if idx.size else []
    crossings = []
    for ra, rb in zip(runs[:-1], runs[1:]):
        if np.sign(y[ra[-1]]) != np.sign(y[rb[0]]):
            sl = slice(ra[-1], rb[0] + 1)
            c1, c0 = np.polyfit(tt[sl], y[sl], 1)
            crossings.append(-c0 / c1)
    if len(crossings) >= 2:
        f0 = 0.5 / float(np.median(np.diff(crossings)))
    elif len(crossings) == 1 and crossings[0] > 0:
        f0 = 0.5 / crossings[0]
    else:
        f0 = 0.5 / tt[-1]
    # phase chosen so the first crossing lands where observed
    phase0 = 0.0 if not crossings else -2.0 * np.pi * f0 * (crossings[0] % (0.5 / f0))
    amp0 = abs(y[k_peak]) * 1.2
    extrema = []
    half = 0.5 / f0
    for j in range(int(tt[-1] / half) + 1):
        m = (tt >= j * half) & (tt < (j + 1) * half)
        if np.any(m):
            extrema.append((tt[m][np.argmax(np.abs(y[m]))], np.max(np.abs(y[m]))))
    decay0 = 0.0
    if len(extrema) >= 2 and extrema[-1][1] > 0:
        (ta, ya), (tb, yb) = extrema[0], extrema[-1]
        if tb > ta:
            decay0 = max(0.0, math.log(ya / yb) / (tb - ta))
    if y[k_peak] < 0:
        phase0 += np.pi
    return np.array([amp0, decay0, f0, phase0])


def fit_damped_sinusoid(w: CurrentWaveform, max_residual: float = 0.05) -> SinusoidFit:
    """Least-squares fit of A*exp(-decay*t)*sin(2*pi*f*t + phase) to a trace.

    ``residual`` is the RMS misfit normalized by the trace's peak magnitude.

    Raises
    ------
    FitDiverged
        On an all-zero trace, a failed solve, or residual above ``max_residual``.
    """
    t = np.asarray(w.times, dtype=float)
    y = np.asarray(w.currents, dtype=float)
    peak = float(np.max(np.abs(y)))
    if peak == 0.0 or not np.isfinite(peak):
        raise FitDiverged("waveform carries no signal")
    # scale to O(1) for the optimizer
    ts = t[-1] - t[0] if t[-1] > t[0] else 1.0
    tn = (t - t[0]) / ts
    yn = y / peak
    g = _initial_guess(tn, yn)

    def resid(x):
        # trial decays can overflow exp; the optimizer rejects those steps
        with np.errstate(over="ignore", invalid="ignore"):
            return damped_sinusoid(tn, *x) - yn

    best = None
    for phase_shift in (0.0, 0.5 * np.pi, -0.5 * np.pi, np.pi):
        x0 = g.copy()
        x0[3] += phase_shift
        try:
            sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                max_nfev=4000)
        except Exception as exc:  # noqa: BLE001 - optimizer internals vary
            log.debug("fit attempt failed: %s", exc)
            continue
        if best is None or sol.cost < best.cost:
            best = sol
        if best.cost < 1e-20:
            break
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitDiverged("least-squares solve failed")
    a, lam, f, ph = best.x
    if a < 0:
        a, ph = -a, ph + np.pi
    if f < 0:
        f, ph, a = -f, -ph, -a
        if a < 0:
            a, ph = -a, ph + np.pi
    residual = float(np.sqrt(np.mean(best.fun ** 2)))
    # map back to physical units; phase referenced to t=0
    freq = f / ts
    decay = lam / ts
    phase = ph - 2.0 * np.pi * freq * t[0]
    amplitude = a * peak * math.exp(decay * t[0])
    phase = (phase + np.pi) % (2.0 * np.pi) - np.pi
    if residual > max_residual:
        raise FitDiverged(f"fit residual {residual:.3g} exceeds {max_residual:.3g}")
    return SinusoidFit(float(amplitude), float(decay), float(freq), float(phase), residual)


def _parse_header(cells):
    if len(cells) != 2:
        return None
    names = [c.strip() for c in cells]
    try:
        tq, tu = names[0].split("_", 1)
        iq, iu = names[1].split("_", 1)
    except ValueError:
        return None
    if tq != "time" or iq != "current" or tu not in TIME_UNITS or iu not in CURRENT_UNITS:
        return None
    return TIME_UNITS[tu], CURRENT_UNITS[iu]


def load_waveform_csv(path, after_end: str = "hold", energy: float | None = None) -> CurrentWaveform:
    """Read a two-column current trace.

    An optional header ``time_<unit>,current_<unit>`` fixes the units
    (time: s, ms, us, ns; current: A, kA, MA). Without a header the columns
    are microseconds and kiloamperes.

    Raises
    ------
    ParseError
        Malformed line (carries the 1-based line number).
    NonMonotonicTime
        Times not strictly increasing.
    """
    t_scale, i_scale = TIME_UNITS["us"], CURRENT_UNITS["kA"]
    times, currents = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 or not times:
                units = _parse_header(row)
                if units is not None:
                    if times:
                        raise ParseError("header after data", lineno)
                    t_scale, i_scale = units
                    continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, got {len(row)}", lineno)
            try:
                t, i = float(row[0]), float(row[1])
            except ValueError:
                raise ParseError(f"non-numeric value in {row!r}", lineno) from None
            if not (math.isfinite(t) and math.isfinite(i)):
                raise ParseError("non-finite value", lineno)
            t *= t_scale
            if times and t <= times[-1]:
                raise NonMonotonicTime("time not strictly increasing", lineno)
            times.append(t)
            currents.append(i * i_scale)
    if len(times) < 2:
        raise ParseError("need at least 2 samples")
    return CurrentWaveform(np.array(times), np.array(currents), after_end=after_end,
                           energy=energy)


def write_waveform_csv(w: CurrentWaveform, path, time_unit: str = "us",
                       current_unit: str = "kA") -> Path:
    """Write a trace with a units header; values use 17 significant digits."""
    ts, cs = TIME_UNITS[time_unit], CURRENT_UNITS[current_unit]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"time_{time_unit},current_{current_unit}\n")
        for t, i in zip(w.times, w.currents):
            fh.write(f"{t / ts:.17g},{i / cs:.17g}\n")
    return path

"""Quasi-static dual-input model of a PA driving a tunable matching network.

The characterisation is a rectangular table over drive magnitude |x| and
control voltage V_c holding the output magnitude, the insertion phase and
the DC power draw. A memoryless transmitter simulation is then a per-sample
table lookup:

    |y_n|     = f_A(|x_n|, Vc_n)
    angle y_n = angle x_n - f_phi(|x_n|, Vc_n)

Interpolation is bilinear on purpose: it preserves the monotonicity of the
measured drive curves, which spline fits do not guarantee.

Smith-chart material lives here too: the load trajectory the network
realises versus output power, and the rotation algebra used to re-target
one matching network to a different amplifier with a line-length change.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import ControlSignal, IQSignal

DRIVE_EXTRAP_LIMIT = 1.1  # allowed linear extrapolation above the drive grid


@dataclass(frozen=True)
class QuasiStaticSurface:
    """Tabulated (|x|, V_c) -> (|y|, insertion phase, P_dc, P_in) maps."""

    x_grid: np.ndarray  # ascending drive magnitudes, volts
    vc_grid: np.ndarray  # ascending control voltages, volts
    y_mag: np.ndarray  # |y| in volts, shape (len(x_grid), len(vc_grid))
    phase: np.ndarray  # insertion phase f_phi, radians
    p_dc: np.ndarray  # DC power, watts
    p_in_avail: np.ndarray  # available RF input power, watts
    z_ref: float = 50.0
    label: str = ""

    def __post_init__(self):
        x = np.asarray(self.x_grid, dtype=float)
        vc = np.asarray(self.vc_grid, dtype=float)
        shape = (x.size, vc.size)
        mats = {}
        for name in ("y_mag", "phase", "p_dc", "p_in_avail"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite values")
            mats[name] = m
        if x.size < 2 or vc.size < 2:
            raise ValueError("grids need at least two points per axis")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(vc) <= 0):
            raise ValueError("grids must be strictly ascending")
        if np.any(mats["y_mag"] < 0):
            raise ValueError("y_mag must be non-negative")
        if np.any(mats["p_dc"] <= 0):
            raise ValueError("p_dc must be positive everywhere")
        if self.z_ref <= 0:
            raise ValueError("z_ref must be positive")
        if x[0] == 0.0 and np.any(mats["y_mag"][0] != 0.0):
            raise ValueError("y_mag must be zero at zero drive")
        if np.any(np.diff(mats["y_mag"], axis=0) < -1e-9 * max(mats["y_mag"].max(), 1.0)):
            warnings.warn(
                "y_mag is not non-decreasing in drive at fixed V_c; "
                "control-law extraction may be unreliable",
                stacklevel=2,
            )
        for name, m in mats.items():
            mm = m.copy()
            mm.setflags(write=False)
            object.__setattr__(self, name, mm)
        for name, g in (("x_grid", x), ("vc_grid", vc)):
            gg = g.copy()
            gg.setflags(write=False)
            object.__setattr__(self, name, gg)

    @property
    def x_max(self) -> float:
        return float(self.x_grid[-1])

    def p_out(self) -> np.ndarray:
        """Output power matrix |y|^2 / (2 z_ref)."""
        return self.y_mag**2 / (2.0 * self.z_ref)


def _interp_weights(grid: np.ndarray, v: np.ndarray, clamp: bool):
    """Cell index and fractional position for 1-D linear interpolation."""
    i = np.searchsorted(grid, v, side="right") - 1
    i = np.clip(i, 0, grid.size - 2)
    w = (v - grid[i]) / (grid[i + 1] - grid[i])
    if clamp:
        w = np.clip(w, 0.0, 1.0)
    return i, w


def _bilinear(mat: np.ndarray, ix, wx, iv, wv) -> np.ndarray:
    m00 = mat[ix, iv]
    m10 = mat[ix + 1, iv]
    m01 = mat[ix, iv + 1]
    m11 = mat[ix + 1, iv + 1]
    return (1 - wx) * ((1 - wv) * m00 + wv * m01) + wx * ((1 - wv) * m10 + wv * m11)


def _evaluate_arrays(surface: QuasiStaticSurface, x_mag: np.ndarray, vc: np.ndarray):
    x_mag = np.asarray(x_mag, dtype=float)
    vc = np.asarray(vc, dtype=float)
    if np.any(x_mag < 0):
        raise ValueError("drive magnitude must be non-negative")
    if np.any(x_mag > surface.x_max * DRIVE_EXTRAP_LIMIT * (1 + 1e-12)):
        raise ValueError("drive beyond characterized range")
    # drive axis: linear extrapolation above the top grid row (w > 1 allowed)
    ix, wx = _interp_weights(surface.x_grid, x_mag, clamp=False)
    wx = np.maximum(wx, 0.0)
    iv, wv = _interp_weights(surface.vc_grid, vc, clamp=True)
    y = _bilinear(surface.y_mag, ix, wx, iv, wv)
    ph = _bilinear(surface.phase, ix, wx, iv, wv)
    pdc = _bilinear(surface.p_dc, ix, wx, iv, wv)
    pin = _bilinear(surface.p_in_avail, ix, wx, iv, wv)
    return np.maximum(y, 0.0), ph, np.maximum(pdc, 1e-15), np.maximum(pin, 0.0)


def evaluate(surface: QuasiStaticSurface, x_mag: float, vc: float):
    """Interpolate (|y|, phase, P_dc) at one operating point.

    V_c is clamped to the characterised range; drive may extrapolate
    linearly up to 10% above the grid and errors beyond that.
    """
    y, ph, pdc, _ = _evaluate_arrays(surface, np.array([x_mag]), np.array([vc]))
    return float(y[0]), float(ph[0]), float(pdc[0])


@dataclass(frozen=True)
class TransmitterRun:
    """Simulated output plus the average powers needed for efficiency."""

    y: IQSignal
    p_out_avg: float
    p_in_avg: float
    p_dc_avg: float


def simulate_transmitter(
    surface: QuasiStaticSurface, x: IQSignal, vc: ControlSignal
) -> TransmitterRun:
    """Drive the quasi-static model sample by sample.

    Insertion phase is subtracted from the drive phase (e^{+j w t} phasor
    convention). Returns the output waveform together with the run-average
    output, input and DC powers.
    """
    if len(x) != len(vc):
        raise ValueError("x and vc must have equal length")
    if x.sample_rate != vc.sample_rate:
        raise ValueError("x and vc must share a sample rate")
    mag = np.abs(x.samples)
    y_mag, ph, pdc, pin = _evaluate_arrays(surface, mag, vc.samples)
    ang = np.angle(x.samples) - ph
    y = y_mag * np.exp(1j * ang)
    p_out = float(np.mean(y_mag**2) / (2.0 * surface.z_ref))
    return TransmitterRun(
        y=IQSignal(y, x.sample_rate, label="pa_vmn_output"),
        p_out_avg=p_out,
        p_in_avg=float(np.mean(pin)),
        p_dc_avg=float(np.mean(pdc)),
    )


# ---------------------------------------------------------------------------
# Load-pull table file format
# ---------------------------------------------------------------------------

_LOADPULL_HEADER = ["x_volt", "vc_volt", "y_volt", "phase_rad", "pdc_w", "pin_w"]


def save_loadpull_csv(surface: QuasiStaticSurface, path) -> None:
    """Write the characterisation table in row-major (x, vc) order."""
    path = Path(path)
    rows = []
    for i, xv in enumerate(surface.x_grid):
        for j, vcv in enumerate(surface.vc_grid):
            rows.append(
                (
                    xv,
                    vcv,
                    surface.y_mag[i, j],
                    surface.phase[i, j],
                    surface.p_dc[i, j],
                    surface.p_in_avail[i, j],
                )
            )
    np.savetxt(
        path,
        np.array(rows),
        delimiter=",",
        header=",".join(_LOADPULL_HEADER),
        comments="",
        fmt="%.17g",
    )
    meta = {"z_ref_ohm": surface.z_ref, "label": surface.label}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


class LoadPullParseError(ValueError):
    """Malformed load-pull table; message names the offending line."""


def load_loadpull_csv(path) -> QuasiStaticSurface:
    """Read a load-pull table, rejecting duplicates and ragged grids."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise LoadPullParseError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header != _LOADPULL_HEADER:
        raise LoadPullParseError(
            f"{path}: line 1: expected header {','.join(_LOADPULL_HEADER)!r}"
        )
    cells: dict[tuple[float, float], tuple[int, np.ndarray]] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 6:
            raise LoadPullParseError(f"{path}: line {lineno}: expected 6 columns")
        try:
            vals = np.array([float(p) for p in parts])
        except ValueError as exc:
            raise LoadPullParseError(f"{path}: line {lineno}: {exc}") from None
        if not np.all(np.isfinite(vals)):
            raise LoadPullParseError(f"{path}: line {lineno}: non-finite value")
        key = (vals[0], vals[1])
        if key in cells:
            first = cells[key][0]
            raise LoadPullParseError(
                f"{path}: line {lineno}: duplicate grid point "
                f"(x={vals[0]:g}, vc={vals[1]:g}), first seen on line {first}"
            )
        cells[key] = (lineno, vals[2:])
    if not cells:
        raise LoadPullParseError(f"{path}: no data rows")
    xs = np.array(sorted({k[0] for k in cells}))
    vcs = np.array(sorted({k[1] for k in cells}))
    if xs.size * vcs.size != len(cells):
        raise LoadPullParseError(
            f"{path}: grid is not rectangular "
            f"({xs.size} x values x {vcs.size} vc values != {len(cells)} rows)"
        )
    shape = (xs.size, vcs.size)
    y = np.empty(shape)
    ph = np.empty(shape)
    pdc = np.empty(shape)
    pin = np.empty(shape)
    for i, xv in enumerate(xs):
        for j, vcv in enumerate(vcs):
            if (xv, vcv) not in cells:
                raise LoadPullParseError(
                    f"{path}: missing grid point (x={xv:g}, vc={vcv:g})"
                )
            _, vals = cells[(xv, vcv)]
            y[i, j], ph[i, j], pdc[i, j], pin[i, j] = vals
    sidecar = path.with_suffix(".json")
    z_ref, label = 50.0, ""
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        z_ref = float(meta.get("z_ref_ohm", 50.0))
        label = meta.get("label", "")
    return QuasiStaticSurface(xs, vcs, y, ph, pdc, pin, z_ref=z_ref, label=label)


# ---------------------------------------------------------------------------
# Smith-chart load trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VmnMap:
    """Reflection coefficient presented to the PA versus control voltage."""

    vc_grid: np.ndarray
    gamma: np.ndarray  # complex, |gamma| < 1
    electrical_rotation: float = 0.0  # radians of line length between PA and network

    def __post_init__(self):
        vc = np.asarray(self.vc_grid, dtype=float)
        g = np.asarray(self.gamma, dtype=np.complex128)
        if vc.size != g.size or vc.size < 2:
            raise ValueError("vc_grid and gamma must be equal-length (>= 2)")
        if np.any(np.diff(vc) <= 0):
            raise ValueError("vc_grid must be strictly ascending")
        if np.any(np.abs(g) >= 1.0):
            raise ValueError("|gamma| must be < 1")
        rot = g * np.exp(-2j * self.electrical_rotation)
        for name, val in (("vc_grid", vc), ("gamma", rot)):
            vv = val.copy()
            vv.setflags(write=False)
            object.__setattr__(self, name, vv)

    def gamma_at(self, vc) -> np.ndarray:
        vc = np.clip(np.asarray(vc, dtype=float), self.vc_grid[0], self.vc_grid[-1])
        re = np.interp(vc, self.vc_grid, self.gamma.real)
        im = np.interp(vc, self.vc_grid, self.gamma.imag)
        return re + 1j * im


@dataclass(frozen=True)
class LoadTrajectory:
    """Optimal load versus output power: (P_out, Gamma) samples."""

    p_out: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_out, dtype=float)
        g = np.asarray(self.gamma, dtype=np.complex128)
        if p.size != g.size or p.size == 0:
            raise ValueError("p_out and gamma must be equal-length and non-empty")
        if np.any(np.diff(p) <= 0):
            raise ValueError("p_out must be strictly increasing")
        if np.any(np.abs(g) > 1.0 + 1e-12):
            raise ValueError("|gamma| must be <= 1")
        for name, val in (("p_out", p), ("gamma", g)):
            vv = val.copy()
            vv.setflags(write=False)
            object.__setattr__(self, name, vv)

    def __len__(self) -> int:
        return self.p_out.size


def rotate_trajectory(traj: LoadTrajectory, theta: float) -> LoadTrajectory:
    """Rotate every load point by a line length of `theta` radians.

    Transmission-line rotation maps Gamma to Gamma * e^{-2j theta}; the
    magnitudes and the power axis are untouched.
    """
    return LoadTrajectory(traj.p_out, traj.gamma * np.exp(-2j * theta))


def fit_rotation(traj_a: LoadTrajectory, traj_b: LoadTrajectory) -> tuple[float, float]:
    """Best line-length rotation taking trajectory A onto trajectory B.

    Both trajectories are resampled onto a common output-power axis, then
    the angle minimising mean |gamma_a e^{-2j theta} - gamma_b|^2 follows
    in closed form. Returns (theta in (-pi/2, pi/2], rms residual); theta
    is only defined modulo pi because of the round-trip factor.
    """
    lo = max(traj_a.p_out[0], traj_b.p_out[0])
    hi = min(traj_a.p_out[-1], traj_b.p_out[-1])
    if not hi > lo:
        raise ValueError("trajectories do not overlap in output power")
    n = min(len(traj_a), len(traj_b))
    if n < 2:
        raise ValueError("need at least 2 matched points")
    p = np.linspace(lo, hi, n)

    def _resample(t: LoadTrajectory):
        re = np.interp(p, t.p_out, t.gamma.real)
        im = np.interp(p, t.p_out, t.gamma.imag)
        return re + 1j * im

    ga = _resample(traj_a)
    gb = _resample(traj_b)
    s = np.sum(ga * np.conj(gb))
    if abs(s) == 0:
        raise ValueError("degenerate trajectories; rotation undefined")
    theta = float(np.angle(s) / 2.0)
    resid = float(np.sqrt(np.mean(np.abs(ga * np.exp(-2j * theta) - gb) ** 2)))
    return theta, resid


def save_trajectory_json(traj: LoadTrajectory, path) -> None:
    rows = [
        {"pout_w": float(p), "gamma_re": float(g.real), "gamma_im": float(g.imag)}
        for p, g in zip(traj.p_out, traj.gamma)
    ]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def load_trajectory_json(path) -> LoadTrajectory:
    rows = json.loads(Path(path).read_text())
    p = np.array([r["pout_w"] for r in rows], dtype=float)
    g = np.array([r["gamma_re"] + 1j * r["gamma_im"] for r in rows])
    return LoadTrajectory(p, g)

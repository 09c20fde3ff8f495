"""Efficiency-optimal control-law extraction from a characterised surface.

The flow mirrors how a dual-input transmitter is commissioned from static
measurements:

1. turn the characterisation into a PAE grid over (drive, control voltage),
2. grid-search the best cell per output-power bin (the max-PAE ridge),
3. refine each ridge cell continuously on the interpolated surface and fit
   low-order polynomials mapping desired output magnitude |u| to drive
   |x|, control voltage V_c and phase correction,
4. evaluate those polynomials per signal sample when synthesising inputs.

Step 3 exists because the grid is coarse (1 dB drive steps); fitting raw
cell coordinates would bake half-a-cell quantisation into the law and cap
the achievable linearity.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly

from .pa_model import LoadTrajectory, QuasiStaticSurface, VmnMap, _evaluate_arrays
from .signals import IQSignal

LAW_EXTRAP_DB = 0.5  # polynomial extrapolation allowed past the last ridge point
AMP_RESID_LIMIT = 0.05  # relative rms residual of the drive fit
VC_RESID_LIMIT = 1.0  # rms residual of the control-voltage fit, volts


@dataclass(frozen=True)
class PaeGrid:
    """Power-added efficiency and output power per characterisation cell."""

    x_grid: np.ndarray
    vc_grid: np.ndarray
    pae: np.ndarray
    p_out: np.ndarray

    def __post_init__(self):
        for name in ("pae", "p_out"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (len(self.x_grid), len(self.vc_grid)):
                raise ValueError(f"{name} shape does not match the grids")
            mm = m.copy()
            mm.setflags(write=False)
            object.__setattr__(self, name, mm)


@dataclass(frozen=True)
class Ridge:
    """Maximum-PAE operating points ordered by output power."""

    p_out: np.ndarray
    x_mag: np.ndarray
    vc: np.ndarray
    pae: np.ndarray

    def __post_init__(self):
        arrays = {}
        n = None
        for name in ("p_out", "x_mag", "vc", "pae"):
            a = np.asarray(getattr(self, name), dtype=float)
            if n is None:
                n = a.size
            elif a.size != n:
                raise ValueError("ridge arrays must have equal length")
            arrays[name] = a
        if np.any(np.diff(arrays["p_out"]) <= 0):
            raise ValueError("ridge p_out must be strictly increasing")
        for name, a in arrays.items():
            aa = a.copy()
            aa.setflags(write=False)
            object.__setattr__(self, name, aa)

    def __len__(self) -> int:
        return self.p_out.size


def compute_pae_grid(surface: QuasiStaticSurface) -> PaeGrid:
    """PAE = (P_out - P_in) / P_dc per cell; P_out from |y|^2/(2 z_ref)."""
    if np.any(surface.p_dc <= 0):
        raise ValueError("p_dc must be positive everywhere")
    p_out = surface.p_out()
    pae = (p_out - surface.p_in_avail) / surface.p_dc
    return PaeGrid(surface.x_grid, surface.vc_grid, pae, p_out)


def extract_max_pae_ridge(grid: PaeGrid, n_bins: int | None = None) -> Ridge:
    """Grid-search the best (drive, V_c) cell per logarithmic output bin.

    Ties are broken toward lower control voltage (less varactor stress)
    and then lower drive. Bins with no positive-power cells are skipped
    with a warning; fewer than 4 surviving points is an error.
    """
    if n_bins is None:
        n_bins = int(np.count_nonzero(grid.x_grid > 0))
    if n_bins < 4:
        raise ValueError("n_bins must be at least 4")
    pos = grid.p_out > 0
    if not np.any(pos):
        raise ValueError("grid has no cells with positive output power")
    p_lo = grid.p_out[pos].min()
    p_hi = grid.p_out[pos].max()
    if not p_hi > p_lo:
        raise ValueError("degenerate output power range")
    edges = np.logspace(np.log10(p_lo), np.log10(p_hi), n_bins + 1)
    edges[0] *= 1 - 1e-12
    edges[-1] *= 1 + 1e-12

    xi, vj = np.meshgrid(np.arange(len(grid.x_grid)), np.arange(len(grid.vc_grid)), indexing="ij")
    flat_p = grid.p_out.ravel()
    flat_pae = grid.pae.ravel()
    flat_x = grid.x_grid[xi.ravel()]
    flat_vc = grid.vc_grid[vj.ravel()]

    points = []
    skipped = 0
    for b in range(n_bins):
        sel = (flat_p > edges[b]) & (flat_p <= edges[b + 1]) if b else (
            (flat_p >= edges[0]) & (flat_p <= edges[1])
        )
        if not np.any(sel):
            skipped += 1
            continue
        idx = np.flatnonzero(sel)
        order = np.lexsort((flat_x[idx], flat_vc[idx], -flat_pae[idx]))
        best = idx[order[0]]
        points.append((flat_p[best], flat_x[best], flat_vc[best], flat_pae[best]))
    if skipped:
        warnings.warn(f"{skipped} empty output-power bins skipped", stacklevel=2)
    # one cell can win adjacent bins near the grid top; keep strict ordering
    points.sort(key=lambda r: r[0])
    dedup = [points[0]] if points else []
    for row in points[1:]:
        if row[0] > dedup[-1][0]:
            dedup.append(row)
    if len(dedup) < 4:
        raise ValueError("fewer than 4 ridge points survived binning")
    arr = np.array(dedup)
    return Ridge(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


@dataclass(frozen=True)
class ControlLaw:
    """Polynomial inverse maps from desired output magnitude to inputs.

    Coefficients are stored lowest order first. `amp_coeffs` passes through
    the origin (zero output needs zero drive); `vc_coeffs` is clamped into
    [v_min, v_max] at evaluation; `phase_coeffs` is the phase added to the
    drive signal to pre-compensate the insertion phase.
    """

    amp_coeffs: np.ndarray
    vc_coeffs: np.ndarray
    phase_coeffs: np.ndarray
    u_max: float
    v_min: float = 6.0
    v_max: float = 27.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("amp_coeffs", "vc_coeffs", "phase_coeffs"):
            c = np.asarray(getattr(self, name), dtype=float)
            if c.ndim != 1 or c.size == 0:
                raise ValueError(f"{name} must be a non-empty vector")
            cc = c.copy()
            cc.setflags(write=False)
            object.__setattr__(self, name, cc)
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")

    @property
    def orders(self) -> dict:
        return {
            "amp": self.amp_coeffs.size - 1,
            "vc": self.vc_coeffs.size - 1,
            "phase": self.phase_coeffs.size - 1,
        }

    def with_phase(self, phase_coeffs: np.ndarray) -> "ControlLaw":
        return replace(self, phase_coeffs=np.asarray(phase_coeffs, dtype=float))


def evaluate_control_law(law: ControlLaw, u_mag):
    """Per-sample law evaluation: (drive |x|, control voltage, phase add).

    Magnitudes above u_max are clamped to u_max, so evaluation is
    idempotent under clamping; V_c is clamped into its physical range.
    """
    u = np.asarray(u_mag, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    if np.any(u < 0):
        raise ValueError("u_mag must be non-negative")
    uc = np.minimum(u, law.u_max)
    x = np.maximum(npoly.polyval(uc, law.amp_coeffs), 0.0)
    vc = np.clip(npoly.polyval(uc, law.vc_coeffs), law.v_min, law.v_max)
    ph = npoly.polyval(uc, law.phase_coeffs)
    if scalar:
        return float(x[0]), float(vc[0]), float(ph[0])
    return x, vc, ph


def _refine_ridge_points(ridge: Ridge, surface: QuasiStaticSurface):
    """Continuous local re-optimisation of each ridge cell.

    The grid search lands on cell centres; a two-stage zoom over the
    bilinear surface removes the half-cell quantisation from the points
    the polynomials are fitted to.
    """
    z2 = 2.0 * surface.z_ref
    dx_ratio = 10 ** (1.0 / 20.0)  # one drive step
    dvc = float(np.diff(surface.vc_grid).max())
    x_out = np.empty(len(ridge))
    vc_out = np.empty(len(ridge))
    u_out = np.empty(len(ridge))
    ph_out = np.empty(len(ridge))
    pae_out = np.empty(len(ridge))
    for i in range(len(ridge)):
        x_lo, x_hi = ridge.x_mag[i] / dx_ratio, min(ridge.x_mag[i] * dx_ratio, surface.x_max)
        v_lo = max(ridge.vc[i] - dvc, surface.vc_grid[0])
        v_hi = min(ridge.vc[i] + dvc, surface.vc_grid[-1])
        bx, bv = ridge.x_mag[i], ridge.vc[i]
        for _ in range(3):
            xs = np.linspace(x_lo, x_hi, 9)
            vs = np.linspace(v_lo, v_hi, 9)
            xx, vv = np.meshgrid(xs, vs, indexing="ij")
            y, ph, pdc, pin = _evaluate_arrays(surface, xx.ravel(), vv.ravel())
            pae = (y**2 / z2 - pin) / pdc
            k = int(np.argmax(pae))
            bx, bv = xx.ravel()[k], vv.ravel()[k]
            sx = (x_hi - x_lo) / 8.0
            sv = (v_hi - v_lo) / 8.0
            x_lo, x_hi = max(bx - sx, 0.0), min(bx + sx, surface.x_max)
            v_lo, v_hi = max(bv - sv, surface.vc_grid[0]), min(bv + sv, surface.vc_grid[-1])
        y, ph, pdc, pin = _evaluate_arrays(surface, np.array([bx]), np.array([bv]))
        x_out[i], vc_out[i] = bx, bv
        u_out[i] = y[0]
        ph_out[i] = ph[0]
        pae_out[i] = (y[0] ** 2 / z2 - pin[0]) / pdc[0]
    return u_out, x_out, vc_out, ph_out, pae_out


def _fit_through_origin(
    u: np.ndarray, x: np.ndarray, order: int, w: np.ndarray
) -> np.ndarray:
    basis = np.vander(u, order + 1, increasing=True)[:, 1:]
    sw = np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(basis * sw, x * np.sqrt(w), rcond=None)
    return np.concatenate([[0.0], coef])


def _invert_drive(
    surface: QuasiStaticSurface, u: np.ndarray, vc: np.ndarray
) -> np.ndarray:
    """Solve f_A(x, vc_i) = u_i for the drive, per point, by bisection.

    The drive curve is monotone at fixed voltage, so 40 bisection steps
    pin the root to ~1e-12 of the grid span.
    """
    lo = np.zeros_like(u)
    hi = np.full_like(u, surface.x_max)
    y_hi, _, _, _ = _evaluate_arrays(surface, hi, vc)
    unreachable = y_hi < u
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        y_mid, _, _, _ = _evaluate_arrays(surface, mid, vc)
        go_up = y_mid < u
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_up, hi, mid)
    x = 0.5 * (lo + hi)
    return np.where(unreachable, surface.x_max, x)


def fit_control_law(
    ridge: Ridge,
    surface: QuasiStaticSurface,
    amp_order: int = 7,
    vc_order: int = 5,
    phase_order: int = 7,
) -> ControlLaw:
    """Least-squares polynomial control law from a ridge.

    The control-voltage polynomial is fitted to the (refined) ridge points
    with energy weighting: the law exists to reproduce the output
    waveform, so errors are costed by the output power they act on. The
    drive polynomial is then fitted to the exact inverse of the surface
    along the fitted voltage curve, which cancels voltage-fit ripple out
    of the amplitude path instead of letting two independent fits fight.
    If the fitted drive law is non-monotone on its validity range the
    order is reduced by two and refitted, at most twice, before erroring.
    """
    max_order = max(amp_order, vc_order, phase_order)
    if len(ridge) <= max_order + 1:
        raise ValueError(
            f"ridge has {len(ridge)} points; need more than {max_order + 1}"
        )
    # drop drive-range floor artifacts before refining: output levels only
    # reachable on the lowest drive row of the sweep say nothing about the
    # optimal locus, they are where the characterisation ran out of range
    floor_x = surface.x_grid[1] if surface.x_grid[0] == 0.0 else surface.x_grid[0]
    live = ridge.x_mag > floor_x * (1.0 + 1e-9)
    if np.count_nonzero(live) > max_order + 1:
        ridge = Ridge(
            ridge.p_out[live], ridge.x_mag[live], ridge.vc[live], ridge.pae[live]
        )
    u, x, vc, ph, _ = _refine_ridge_points(ridge, surface)
    order = np.argsort(u)
    u, x, vc = u[order], x[order], vc[order]
    keep = np.concatenate([[True], np.diff(u) > 0])
    u, x, vc = u[keep], x[keep], vc[keep]
    if u.size <= max_order + 1:
        raise ValueError("too few distinct ridge points after refinement")

    u_top = float(u[-1])
    u_max = u_top * 10 ** (LAW_EXTRAP_DB / 20.0)
    w = (u / u_top) ** 2

    # voltage fit uses a gentler weight: errors there cost efficiency, not
    # linearity (the drive fit below absorbs them), and the bottom of the
    # curve needs enough pull to keep the polynomial anchored
    vc_coeffs = npoly.polyfit(u, vc, vc_order, w=np.sqrt(u / u_top))
    vc_err = npoly.polyval(u, vc_coeffs) - vc
    vc_rms = float(np.sqrt(np.sum(w * vc_err**2) / np.sum(w)))
    if vc_rms > VC_RESID_LIMIT:
        raise ValueError(f"control-voltage fit residual {vc_rms:.2f} V exceeds {VC_RESID_LIMIT} V")

    # dense self-consistent inverse along the fitted voltage curve
    ud = np.linspace(u_top / 400.0, u_top, 400)
    vcd = np.clip(
        npoly.polyval(ud, vc_coeffs), surface.vc_grid[0], surface.vc_grid[-1]
    )
    xd = _invert_drive(surface, ud, vcd)
    wd = (ud / u_top) ** 2

    amp_try = amp_order
    dense = np.linspace(0.0, u_max, 1024)
    for attempt in range(3):
        amp_coeffs = _fit_through_origin(ud, xd, amp_try, wd)
        fitted = npoly.polyval(dense, amp_coeffs)
        if np.all(np.diff(fitted) >= -1e-12 * max(abs(fitted).max(), 1.0)):
            break
        amp_try -= 2
        if amp_try < 1 or attempt == 2:
            raise ValueError("drive law is non-monotone even after order reduction")
    resid = npoly.polyval(ud, amp_coeffs) - xd
    rel = float(np.sqrt(np.sum(wd * resid**2) / np.sum(wd * xd**2)))
    if rel > AMP_RESID_LIMIT:
        raise ValueError(f"drive fit residual {rel:.3%} exceeds {AMP_RESID_LIMIT:.0%}")

    _, phd, _, _ = _evaluate_arrays(surface, xd, vcd)
    phase_coeffs = npoly.polyfit(ud, phd, phase_order, w=np.sqrt(wd))

    return ControlLaw(
        amp_coeffs=amp_coeffs,
        vc_coeffs=vc_coeffs,
        phase_coeffs=phase_coeffs,
        u_max=u_max,
        v_min=float(surface.vc_grid[0]),
        v_max=float(surface.vc_grid[-1]),
        meta={
            "surface": surface.label,
            "amp_order": int(amp_try),
            "vc_order": int(vc_order),
            "phase_order": int(phase_order),
            "amp_resid_rel": rel,
            "vc_resid_v": vc_rms,
            "u_top": u_top,
        },
    )


def extract_phase_predistorter(u: IQSignal, y_measured: IQSignal, order: int = 7) -> np.ndarray:
    """Fit the output-vs-desired phase difference as a polynomial in |u|.

    Returns coefficients (lowest order first) of delta_phi(|u|) =
    angle(y) - angle(u). Negating them and installing the result as a
    law's phase term pre-distorts the drive phase. The fit is
    amplitude-weighted: near-zero samples carry no usable phase.
    """
    if len(u) != len(y_measured):
        raise ValueError("signals must have equal length")
    au = np.abs(u.samples)
    dphi = np.angle(y_measured.samples * np.conj(u.samples))
    order_idx = np.argsort(au)
    au_s = au[order_idx]
    dphi_s = np.unwrap(dphi[order_idx])
    w = au_s / max(au_s.max(), 1e-30)
    basis = np.vander(au_s, order + 1, increasing=True)
    wsqrt = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(basis * wsqrt[:, None], dphi_s * wsqrt, rcond=None)
    resid = dphi_s - basis @ coef
    live = w > 0.05
    if np.any(live):
        spread = float(resid[live].max() - resid[live].min())
        if spread > np.pi / 2:
            raise ValueError("non-quasi-static phase")
    return coef


def trajectory_from_ridge(ridge: Ridge, vmn: VmnMap) -> LoadTrajectory:
    """Load trajectory realised when following the ridge through a network."""
    return LoadTrajectory(ridge.p_out, vmn.gamma_at(ridge.vc))


def save_law_json(law: ControlLaw, path) -> None:
    payload = {
        "amp": law.amp_coeffs.tolist(),
        "vc": law.vc_coeffs.tolist(),
        "phase": law.phase_coeffs.tolist(),
        "u_max": law.u_max,
        "v_min": law.v_min,
        "v_max": law.v_max,
        "meta": law.meta,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_law_json(path) -> ControlLaw:
    d = json.loads(Path(path).read_text())
    return ControlLaw(
        amp_coeffs=np.array(d["amp"], dtype=float),
        vc_coeffs=np.array(d["vc"], dtype=float),
        phase_coeffs=np.array(d["phase"], dtype=float),
        u_max=float(d["u_max"]),
        v_min=float(d["v_min"]),
        v_max=float(d["v_max"]),
        meta=d.get("meta", {}),
    )

"""Efficiency, linearity and spectral metrics for transmitter runs.

Everything here is a pure function of its inputs. Spectral quantities are
based on a Welch periodogram normalised so the integrated density matches
the time-domain average power, which keeps ACPR and occupied-bandwidth
numbers consistent with the power accounting used for efficiency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .signals import ControlSignal, IQSignal

NMSE_FLOOR_DB = -150.0


def pae(p_out: float, p_in: float, p_dc: float) -> float:
    """Power-added efficiency (P_out - P_in) / P_dc."""
    if p_dc <= 0.0:
        raise ValueError("p_dc must be positive")
    return (p_out - p_in) / p_dc


def drain_efficiency(p_out: float, p_dc: float) -> float:
    """Drain efficiency P_out / P_dc."""
    if p_dc <= 0.0:
        raise ValueError("p_dc must be positive")
    return p_out / p_dc


def pdf_averaged_efficiency(
    curve_p_out: np.ndarray,
    curve_eff: np.ndarray,
    pdf_p_out: np.ndarray,
    pdf_prob: np.ndarray,
) -> float:
    """Average efficiency of a modulated signal from a static efficiency curve.

    Energy-weighted definition: mean output power divided by mean DC power,
    with the DC power at each level read off the curve as P/eta(P). The
    efficiency curve must cover the pdf support; extrapolating the curve is
    refused.
    """
    curve_p = np.asarray(curve_p_out, dtype=float)
    curve_e = np.asarray(curve_eff, dtype=float)
    p = np.asarray(pdf_p_out, dtype=float)
    prob = np.asarray(pdf_prob, dtype=float)
    if curve_p.ndim != 1 or curve_p.size < 2 or curve_p.size != curve_e.size:
        raise ValueError("curve must be two equal-length vectors with >= 2 points")
    if np.any(np.diff(curve_p) <= 0):
        raise ValueError("curve p_out must be strictly increasing")
    if p.size != prob.size or p.size == 0:
        raise ValueError("pdf must be two equal-length vectors")
    if np.any(prob < 0):
        raise ValueError("pdf probabilities must be non-negative")
    total = prob.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"pdf must sum to 1 within 1e-9 (got {total!r})")
    live = prob > 0
    if np.any(p[live] > curve_p[-1] * (1 + 1e-12)) or np.any(p[live] < min(0.0, curve_p[0])):
        raise ValueError("pdf mass outside curve domain")

    # DC power as a function of output power. Below the first positive
    # curve point P/eta tends to the quiescent draw, so the lowest defined
    # ratio is held constant there rather than extrapolated through 0/0.
    pos = curve_p > 0
    if np.count_nonzero(pos) < 2 or np.any(curve_e[pos] <= 0):
        raise ValueError("curve must have positive efficiency at positive power")
    p_dc_grid = curve_p[pos] / curve_e[pos]
    p_dc = np.interp(p, curve_p[pos], p_dc_grid)
    mean_out = float(np.sum(prob * p))
    mean_dc = float(np.sum(prob * p_dc))
    if mean_dc <= 0:
        raise ValueError("mean DC power is not positive")
    return mean_out / mean_dc


@dataclass(frozen=True)
class Spectrum:
    """Two-sided power spectral density, ascending frequency axis."""

    freq_hz: np.ndarray
    psd: np.ndarray  # linear density, power per Hz

    @property
    def df(self) -> float:
        return float(self.freq_hz[1] - self.freq_hz[0])

    @property
    def psd_db(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.psd, 1e-30))

    def band_power(self, f_lo: float, f_hi: float) -> float:
        mask = (self.freq_hz >= f_lo) & (self.freq_hz < f_hi)
        return float(np.sum(self.psd[mask]) * self.df)

    def total_power(self) -> float:
        return float(np.sum(self.psd) * self.df)


def power_spectrum(sig: IQSignal, nfft: int = 4096, overlap: float = 0.5) -> Spectrum:
    """Welch PSD (Hann window), normalised to the signal's average power.

    The integrated density equals the time-domain mean-square within a
    small windowing bias, so band powers read straight off the result.
    """
    x = np.asarray(sig.samples)
    if x.size < 2 * nfft:
        raise ValueError("signal too short for the requested nfft")
    noverlap = int(nfft * overlap)
    f, pxx = sps.welch(
        x,
        fs=sig.sample_rate,
        window="hann",
        nperseg=nfft,
        noverlap=noverlap,
        return_onesided=False,
        scaling="density",
        detrend=False,
    )
    order = np.argsort(f)
    return Spectrum(f[order], pxx[order])


def acpr(
    sig: IQSignal,
    channel_bw: float,
    offset: float,
    nfft: int = 4096,
) -> tuple[float, float]:
    """Adjacent-channel power ratio in dB (positive = cleaner).

    In-channel power in [-bw/2, bw/2] against the integrated power in the
    two bands centred at +/- offset of the same width.
    """
    if channel_bw <= 0 or offset <= 0:
        raise ValueError("channel_bw and offset must be positive")
    if sig.sample_rate < 2.0 * (offset + channel_bw / 2.0):
        raise ValueError("adjacent band exceeds Nyquist")
    spec = power_spectrum(sig, nfft=nfft)
    p_main = spec.band_power(-channel_bw / 2, channel_bw / 2)
    p_low = spec.band_power(-offset - channel_bw / 2, -offset + channel_bw / 2)
    p_high = spec.band_power(offset - channel_bw / 2, offset + channel_bw / 2)
    if p_main <= 0:
        raise ValueError("no in-channel power")
    lo = 10.0 * np.log10(p_main / p_low) if p_low > 0 else np.inf
    hi = 10.0 * np.log10(p_main / p_high) if p_high > 0 else np.inf
    return float(lo), float(hi)


def nmse(reference: IQSignal, measured: IQSignal) -> float:
    """Normalised mean-square error in dB after an optimal complex gain fit.

    The best complex scalar alpha is absorbed before computing the
    residual, so a pure gain/rotation difference scores at the floor.
    """
    u = np.asarray(reference.samples)
    y = np.asarray(measured.samples)
    if u.size != y.size:
        raise ValueError("signals must have equal length")
    denom = np.vdot(u, u)
    if denom == 0:
        raise ValueError("zero reference signal")
    alpha = np.vdot(u, y) / denom
    ref = alpha * u
    p_ref = float(np.real(np.vdot(ref, ref)))
    p_err = float(np.real(np.vdot(y - ref, y - ref)))
    if p_ref <= 0:
        raise ValueError("zero reference signal")
    if p_err <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(p_err / p_ref), NMSE_FLOOR_DB)


def occupied_bandwidth(sig, fraction: float = 0.95, nfft: int = 4096) -> float:
    """Smallest symmetric band around the power centroid holding `fraction`.

    ControlSignal inputs are embedded as zero-Q complex waveforms with the
    DC component removed first: the static bias level carries no
    modulation information.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    if isinstance(sig, ControlSignal):
        x = sig.samples - np.mean(sig.samples)
        sig = IQSignal(x.astype(np.complex128), sig.sample_rate, sig.label)
    spec = power_spectrum(sig, nfft=nfft)
    total = spec.total_power()
    if total <= 0:
        raise ValueError("signal has no power")
    centroid = float(np.sum(spec.freq_hz * spec.psd) / np.sum(spec.psd))
    dist = np.abs(spec.freq_hz - centroid)
    order = np.argsort(dist)
    cum = np.cumsum(spec.psd[order]) * spec.df
    k = int(np.searchsorted(cum, fraction * total))
    k = min(k, order.size - 1)
    return float(2.0 * dist[order[k]] + spec.df)


@dataclass(frozen=True)
class GainCurve:
    """Magnitude-binned gain |y|/|u| versus |u|, normalised at the top bin."""

    u_mag: np.ndarray
    gain_norm: np.ndarray
    spread: np.ndarray
    counts: np.ndarray
    flatness: float


def normalized_gain_curve(u: IQSignal, y: IQSignal, n_bins: int = 40) -> GainCurve:
    """Binned transfer gain of an aligned (u, y) pair.

    The flatness figure is the worst deviation from unity over the bins
    that together cover at least 99% of the samples, so a handful of
    sparsely-populated envelope peaks cannot dominate the comparison.
    """
    au = np.abs(u.samples)
    ay = np.abs(y.samples)
    if au.size != ay.size:
        raise ValueError("signals must have equal length")
    live = au > 1e-12 * au.max()
    au, ay = au[live], ay[live]
    edges = np.linspace(0.0, au.max() * (1 + 1e-12), n_bins + 1)
    idx = np.clip(np.digitize(au, edges) - 1, 0, n_bins - 1)
    ratio = ay / au
    centers, gains, spreads, counts = [], [], [], []
    for b in range(n_bins):
        sel = idx == b
        cnt = int(np.count_nonzero(sel))
        if cnt == 0:
            continue
        centers.append(0.5 * (edges[b] + edges[b + 1]))
        gains.append(float(np.mean(ratio[sel])))
        spreads.append(float(np.std(ratio[sel])))
        counts.append(cnt)
    centers = np.array(centers)
    gains = np.array(gains)
    spreads = np.array(spreads)
    counts = np.array(counts)
    ref = gains[-1]
    gains_n = gains / ref
    spreads_n = spreads / ref
    # flatness over the most-populated bins covering >= 99% of samples
    by_count = np.argsort(counts)[::-1]
    cum = np.cumsum(counts[by_count])
    need = int(np.searchsorted(cum, 0.99 * counts.sum())) + 1
    core = by_count[:need]
    flatness = float(np.max(np.abs(gains_n[core] - 1.0)))
    return GainCurve(centers, gains_n, spreads_n, counts, flatness)


@dataclass(frozen=True)
class EfficiencyReport:
    """Summary of one modulated transmitter run."""

    pae_avg: float
    drain_eff_avg: float
    p_out_avg: float
    p_in_avg: float
    p_dc_avg: float
    acpr_low_db: float
    acpr_high_db: float
    nmse_db: float
    saturation_fraction: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.p_out_avg, self.p_in_avg, self.p_dc_avg) < 0:
            raise ValueError("powers must be non-negative")
        if self.pae_avg > self.drain_eff_avg + 1e-12:
            raise ValueError("PAE cannot exceed drain efficiency")

    @property
    def acpr_db(self) -> float:
        """The reported ACPR figure: the worse of the two adjacent bands."""
        return min(self.acpr_low_db, self.acpr_high_db)

    def to_dict(self) -> dict:
        return {
            "pae_avg": self.pae_avg,
            "drain_eff_avg": self.drain_eff_avg,
            "p_out_avg_w": self.p_out_avg,
            "p_in_avg_w": self.p_in_avg,
            "p_dc_avg_w": self.p_dc_avg,
            "acpr_low_db": self.acpr_low_db,
            "acpr_high_db": self.acpr_high_db,
            "acpr_db": self.acpr_db,
            "nmse_db": self.nmse_db,
            "saturation_fraction": self.saturation_fraction,
            "provenance": self.provenance,
        }


def write_spectrum_csv(spec: Spectrum, path) -> None:
    data = np.column_stack([spec.freq_hz, spec.psd_db])
    np.savetxt(Path(path), data, delimiter=",", header="freq_hz,psd_db", comments="", fmt="%.9g")


def write_gain_curve_csv(curve: GainCurve, path) -> None:
    data = np.column_stack([curve.u_mag, curve.gain_norm])
    np.savetxt(Path(path), data, delimiter=",", header="u_mag,gain_norm", comments="", fmt="%.9g")

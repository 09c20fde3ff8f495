"""Baseband waveform containers and measurement-style signal primitives.

Two value types cover everything the toolkit moves around: `IQSignal` for
complex envelopes (drive, desired output, transmitter output) and
`ControlSignal` for the real-valued varactor control voltage. Both are
immutable after construction so they can be shared freely.

The operations here emulate what a bench does to waveforms before any
metric is trusted: sub-sample delay (band-limited interpolation), delay
estimation from a reference capture, coherent averaging of repeated
captures, and power normalisation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Windowed-sinc interpolator geometry. 64 taps with a Blackman-Harris
# window keeps interpolation error below -60 dB for signals oversampled
# at least 4x relative to their occupied bandwidth.
INTERP_TAPS = 64
EDGE_GUARD = 64  # samples to exclude at each end after delay operations

_BH_COEFFS = (0.35875, 0.48829, 0.14128, 0.01168)


def _as_locked(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class IQSignal:
    """Uniformly sampled complex baseband waveform."""

    samples: np.ndarray
    sample_rate: float
    label: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if samples.size and not np.all(np.isfinite(samples.view(np.float64))):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", _as_locked(samples))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray, label: str | None = None) -> "IQSignal":
        return IQSignal(samples, self.sample_rate, self.label if label is None else label)


@dataclass(frozen=True)
class ControlSignal:
    """Uniformly sampled real control-voltage waveform with validity bounds.

    Values are clamped into [v_min, v_max] at construction; the default
    6-27 V range is the swing the varactor stack needs for full load
    modulation.
    """

    samples: np.ndarray
    sample_rate: float
    v_min: float = 6.0
    v_max: float = 27.0
    label: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        samples = np.clip(samples, self.v_min, self.v_max)
        object.__setattr__(self, "samples", _as_locked(samples))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size


def average_power(sig: IQSignal | ControlSignal) -> float:
    """Mean squared magnitude of the samples (watt-equivalent into 1 ohm)."""
    if len(sig) == 0:
        raise ValueError("empty signal")
    return float(np.mean(np.abs(sig.samples) ** 2))


def peak_to_average_ratio(sig: IQSignal) -> float:
    """Peak envelope power over average power, in dB."""
    p_avg = average_power(sig)
    if p_avg <= 0.0:
        raise ValueError("zero average power")
    p_peak = float(np.max(np.abs(sig.samples) ** 2))
    return 10.0 * np.log10(p_peak / p_avg)


def scale_to_average_power(sig: IQSignal, target: float) -> IQSignal:
    """Rescale so the average power equals `target` exactly."""
    if target <= 0.0:
        raise ValueError("target power must be positive")
    p = average_power(sig)
    if p <= 0.0:
        raise ValueError("cannot scale a zero-power signal")
    return sig.with_samples(sig.samples * np.sqrt(target / p))


def _bh_window(x: np.ndarray) -> np.ndarray:
    # Continuous 4-term Blackman-Harris evaluated at offset x from the
    # window centre; support is |x| <= INTERP_TAPS/2.
    a0, a1, a2, a3 = _BH_COEFFS
    u = 2.0 * np.pi * x / INTERP_TAPS
    w = a0 + a1 * np.cos(u) + a2 * np.cos(2 * u) + a3 * np.cos(3 * u)
    return np.where(np.abs(x) <= INTERP_TAPS / 2, np.maximum(w, 0.0), 0.0)


def _fractional_delay_taps(mu: float) -> np.ndarray:
    center = INTERP_TAPS // 2
    i = np.arange(INTERP_TAPS)
    offs = i - center - mu
    taps = np.sinc(offs) * _bh_window(offs)
    return taps / np.sum(taps)


def _delay_array(x: np.ndarray, delay: float) -> np.ndarray:
    n = x.size
    if abs(delay) >= n / 4:
        raise ValueError("delay out of range (|delay| must be < length/4)")
    n0 = int(np.floor(delay))
    mu = delay - n0
    center = INTERP_TAPS // 2
    if mu == 0.0:
        shifted = np.zeros_like(x)
        if n0 >= 0:
            shifted[n0:] = x[: n - n0] if n0 else x
        else:
            shifted[:n0] = x[-n0:]
        return shifted
    taps = _fractional_delay_taps(mu)
    full = np.convolve(x, taps)
    # (x*h)[m] ~ x[m - center - mu]; want out[k] = x[k - n0 - mu]
    start = center - n0
    out = np.zeros_like(x)
    lo = max(0, -start)
    hi = min(n, full.size - start)
    out[lo:hi] = full[start + lo : start + hi]
    return out


def apply_fractional_delay(sig, delay: float):
    """Delay a signal by a real number of samples via band-limited interpolation.

    Works for both IQSignal and ControlSignal; the first/last EDGE_GUARD
    samples contain interpolation transients and should be excluded from
    downstream metrics.
    """
    if len(sig) == 0:
        raise ValueError("empty signal")
    delayed = _delay_array(np.asarray(sig.samples), float(delay))
    if isinstance(sig, ControlSignal):
        return ControlSignal(delayed, sig.sample_rate, sig.v_min, sig.v_max, sig.label)
    return sig.with_samples(delayed)


def trim_edges(sig, guard: int = EDGE_GUARD):
    """Drop `guard` samples at both ends (interpolation/alignment transients)."""
    if len(sig) <= 2 * guard:
        raise ValueError("signal too short to trim")
    trimmed = np.asarray(sig.samples)[guard:-guard]
    if isinstance(sig, ControlSignal):
        return ControlSignal(trimmed, sig.sample_rate, sig.v_min, sig.v_max, sig.label)
    return sig.with_samples(trimmed)


def estimate_delay(reference: IQSignal, measured: IQSignal) -> float:
    """Estimate the sub-sample delay of `measured` relative to `reference`.

    Cross-correlates the mean-removed magnitude envelopes (robust to a
    constant phase offset between the paths) and refines the integer peak
    with a 3-point quadratic fit. Raises if no significant correlation
    peak exists within a quarter of the record length.
    """
    if reference.sample_rate != measured.sample_rate:
        raise ValueError("sample rates differ")
    a = np.abs(reference.samples)
    b = np.abs(measured.samples)
    if a.size < 16 or b.size < 16:
        raise ValueError("signals too short for delay estimation")
    a = a - a.mean()
    b = b - b.mean()
    norm = np.sqrt(np.sum(a**2) * np.sum(b**2))
    if norm <= 0.0:
        raise ValueError("no alignment found")

    n = min(a.size, b.size)
    max_lag = n // 4
    nfft = 1 << int(np.ceil(np.log2(a.size + b.size)))
    corr = np.fft.irfft(np.fft.rfft(b, nfft) * np.conj(np.fft.rfft(a, nfft)), nfft)
    # corr[m] = sum_k b[k+? ] ... lag d>0 (measured delayed) peaks at index d
    lags = np.concatenate([np.arange(0, max_lag + 1), np.arange(-max_lag, 0)])
    vals = np.concatenate([corr[: max_lag + 1], corr[-max_lag:]])
    k = int(np.argmax(vals))
    if vals[k] / norm < 0.2:
        raise ValueError("no alignment found")
    lag = lags[k]

    def c_at(d):
        return corr[d % nfft]

    ym, y0, yp = c_at(lag - 1), c_at(lag), c_at(lag + 1)
    denom = ym - 2.0 * y0 + yp
    frac = 0.0 if denom == 0 else 0.5 * (ym - yp) / denom
    frac = float(np.clip(frac, -1.0, 1.0))
    return float(lag + frac)


def coherent_average(captures: list[IQSignal]) -> IQSignal:
    """Sample-wise mean of repeated captures.

    With independent additive noise the noise power drops by
    10*log10(N) dB for N captures.
    """
    if not captures:
        raise ValueError("no captures to average")
    n = len(captures[0])
    fs = captures[0].sample_rate
    for c in captures[1:]:
        if len(c) != n:
            raise ValueError("captures have mismatched lengths")
        if c.sample_rate != fs:
            raise ValueError("captures have mismatched sample rates")
    acc = np.zeros(n, dtype=np.complex128)
    for c in captures:
        acc += c.samples
    return IQSignal(acc / len(captures), fs, captures[0].label)


# ---------------------------------------------------------------------------
# File formats: CSV payload plus a JSON sidecar holding the metadata.
# ---------------------------------------------------------------------------


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_iq_csv(sig: IQSignal, path) -> None:
    """Write `index,i,q` CSV plus a JSON sidecar with sample rate and label."""
    path = Path(path)
    idx = np.arange(len(sig))
    data = np.column_stack([idx, sig.samples.real, sig.samples.imag])
    header = "index,i,q"
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=["%d", "%.17g", "%.17g"])
    meta = {"sample_rate_hz": sig.sample_rate, "label": sig.label}
    _sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_iq_csv(path) -> IQSignal:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns (index,i,q)")
    meta = json.loads(_sidecar_path(path).read_text())
    return IQSignal(data[:, 1] + 1j * data[:, 2], meta["sample_rate_hz"], meta.get("label", ""))


def write_control_csv(sig: ControlSignal, path) -> None:
    """Write `index,v` CSV plus a JSON sidecar with rate, label and bounds."""
    path = Path(path)
    idx = np.arange(len(sig))
    data = np.column_stack([idx, sig.samples])
    np.savetxt(path, data, delimiter=",", header="index,v", comments="", fmt=["%d", "%.17g"])
    meta = {
        "sample_rate_hz": sig.sample_rate,
        "label": sig.label,
        "v_min": sig.v_min,
        "v_max": sig.v_max,
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_control_csv(path) -> ControlSignal:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected 2 columns (index,v)")
    meta = json.loads(_sidecar_path(path).read_text())
    return ControlSignal(
        data[:, 1],
        meta["sample_rate_hz"],
        meta.get("v_min", 6.0),
        meta.get("v_max", 27.0),
        meta.get("label", ""),
    )

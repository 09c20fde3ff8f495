"""Test-signal generation and transmitter input synthesis.

The modulated test signal is a WCDMA-style single carrier: a sum of
orthogonally spread QPSK code channels, root-raised-cosine filtered at
roll-off 0.22. Its peak-to-average ratio is steered onto a requested
target by a deterministic search over the code mix: one spreading code is
phase-aligned at the envelope peak of the remaining sum and its gain is
swept until the measured ratio lands on target. Every step is a pure
function of the seed, so a given spec reproduces bit-identical samples.

Also here: the per-sample synthesis of the dual transmitter inputs from a
fitted control law, the single-input predistorter used for the fixed-load
baseline, and time-axis bandwidth scaling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import hadamard
from scipy.signal import upfirdn

from .control_law import ControlLaw, evaluate_control_law
from .pa_model import QuasiStaticSurface, _evaluate_arrays
from .signals import ControlSignal, IQSignal, peak_to_average_ratio

SAMPLE_BUDGET = 2**18
SPREADING_FACTOR = 16
_QPSK = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))


@dataclass(frozen=True)
class TestSignalSpec:
    """Parameters of the generated communication test signal."""

    chip_rate: float = 3.84e6
    rolloff: float = 0.22
    n_chips: int = 4096
    oversample: int = 16
    seed: int = 1
    target_par: float = 11.3

    def __post_init__(self):
        if self.chip_rate <= 0:
            raise ValueError("chip_rate must be positive")
        if not 0.0 < self.rolloff <= 1.0:
            raise ValueError("rolloff must be in (0, 1]")
        if self.oversample < 4:
            raise ValueError("oversample must be at least 4")
        if self.n_chips % SPREADING_FACTOR:
            raise ValueError(f"n_chips must be a multiple of {SPREADING_FACTOR}")
        if self.n_chips * self.oversample > SAMPLE_BUDGET:
            raise ValueError(
                f"n_chips * oversample exceeds the {SAMPLE_BUDGET}-sample budget"
            )
        if not 3.0 <= self.target_par <= 13.0:
            raise ValueError("target_par must be within [3, 13] dB")

    @property
    def sample_rate(self) -> float:
        return self.chip_rate * self.oversample


def rrc_taps(rolloff: float, sps: int, span_chips: int = 16) -> np.ndarray:
    """Root-raised-cosine taps, unit energy, odd length span_chips*sps+1."""
    n = span_chips * sps
    t = np.arange(-n / 2, n / 2 + 1) / sps
    h = np.empty_like(t)
    eps = 1e-10
    for k, ti in enumerate(t):
        if abs(ti) < eps:
            h[k] = 1.0 - rolloff + 4.0 * rolloff / np.pi
        elif rolloff > 0 and abs(abs(ti) - 1.0 / (4.0 * rolloff)) < eps:
            h[k] = (rolloff / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * rolloff))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * rolloff))
            )
        else:
            num = np.sin(np.pi * ti * (1.0 - rolloff)) + 4.0 * rolloff * ti * np.cos(
                np.pi * ti * (1.0 + rolloff)
            )
            den = np.pi * ti * (1.0 - (4.0 * rolloff * ti) ** 2)
            h[k] = num / den
    return h / np.sqrt(np.sum(h**2))


def _shape_chips(chips: np.ndarray, oversample: int, taps: np.ndarray) -> np.ndarray:
    full = upfirdn(taps, chips, up=oversample)
    delay = (taps.size - 1) // 2
    return full[delay : delay + chips.size * oversample]


def _code_channels(rng, n_chips: int, n_codes: int, taper: float):
    """Spread QPSK data over `n_codes` orthogonal channels, tapered gains."""
    codes = hadamard(SPREADING_FACTOR)
    n_sym = n_chips // SPREADING_FACTOR
    gains = taper ** np.arange(n_codes)
    gains = gains / np.sqrt(np.sum(gains**2))
    chips = np.zeros(n_chips, dtype=np.complex128)
    for k in range(n_codes):
        data = _QPSK[rng.integers(0, 4, n_sym)]
        chips += gains[k] * np.repeat(data, SPREADING_FACTOR) * np.tile(
            codes[1 + (k % (SPREADING_FACTOR - 1))], n_sym
        )
    return chips


def multicode_waveform(
    n_chips: int,
    n_codes: int,
    oversample: int = 16,
    rolloff: float = 0.22,
    chip_rate: float = 3.84e6,
    seed: int = 1,
    taper: float = 0.92,
) -> IQSignal:
    """Plain multicode QPSK waveform without peak steering (unit power)."""
    rng = np.random.default_rng([seed, n_codes])
    taps = rrc_taps(rolloff, oversample)
    chips = _code_channels(rng, n_chips, n_codes, taper)
    s = _shape_chips(chips, oversample, taps)
    s /= np.sqrt(np.mean(np.abs(s) ** 2))
    return IQSignal(s, chip_rate * oversample, label=f"multicode_{n_codes}")


def _aligned_channel(
    rng, base: np.ndarray, n_chips: int, oversample: int, taps: np.ndarray
) -> np.ndarray:
    """Gated chip-rate shaping burst that adds coherently at the base peak.

    The channel transmits QPSK chips only in a short window around the
    envelope peak of `base` (a DTX-style burst); inside the pulse span each
    chip takes the constellation point closest to full phase alignment.
    Sweeping this burst's gain moves the composite peak-to-average ratio
    over a wide, continuous range while adding negligible average power.
    """
    data = np.zeros(n_chips, dtype=np.complex128)
    t_peak = int(np.argmax(np.abs(base)))
    target = np.angle(base[t_peak])
    delay = (taps.size - 1) // 2
    span = delay // oversample
    i_peak = t_peak // oversample
    lo, hi = max(0, i_peak - 2 * span), min(n_chips, i_peak + 2 * span + 1)
    data[lo:hi] = _QPSK[rng.integers(0, 4, hi - lo)]
    for i in range(max(0, i_peak - span), min(n_chips, i_peak + span + 1)):
        tap_idx = t_peak - i * oversample + delay
        if 0 <= tap_idx < taps.size and abs(taps[tap_idx]) > 1e-6:
            want = target - (0.0 if taps[tap_idx] > 0 else np.pi)
            data[i] = _QPSK[int(np.argmin(np.abs(np.angle(_QPSK * np.exp(-1j * want)))))]
    return _shape_chips(data, oversample, taps)


def _par_of(samples: np.ndarray) -> float:
    p = np.abs(samples) ** 2
    return 10.0 * np.log10(p.max() / p.mean())


def generate_test_signal(spec: TestSignalSpec) -> IQSignal:
    """High-PAR multicode test signal with the requested peak-to-average ratio.

    Deterministic per spec. Raises if the code-mix search cannot land
    within 0.25 dB of target_par, reporting the closest ratio achieved.
    """
    taps = rrc_taps(spec.rolloff, spec.oversample)
    best_par = None
    for n_codes in (12, 15, 9, 6, 4, 2, 1):
        for redraw in range(4):
            rng = np.random.default_rng([spec.seed, n_codes, redraw])
            base = _shape_chips(
                _code_channels(rng, spec.n_chips, n_codes, taper=0.92),
                spec.oversample,
                taps,
            )
            boost = _aligned_channel(rng, base, spec.n_chips, spec.oversample, taps)
            scale = np.sqrt(np.mean(np.abs(base) ** 2) / np.mean(np.abs(boost) ** 2))

            def par_at(g):
                return _par_of(base + g * scale * boost)

            grid = np.linspace(0.0, 2.5, 61)
            pars = np.array([par_at(g) for g in grid])
            if best_par is None or np.min(np.abs(pars - spec.target_par)) < abs(
                best_par - spec.target_par
            ):
                best_par = float(pars[np.argmin(np.abs(pars - spec.target_par))])
            cross = np.flatnonzero(
                np.sign(pars[:-1] - spec.target_par) != np.sign(pars[1:] - spec.target_par)
            )
            if cross.size == 0:
                continue
            g_lo, g_hi = grid[cross[0]], grid[cross[0] + 1]
            for _ in range(48):
                g_mid = 0.5 * (g_lo + g_hi)
                if np.sign(par_at(g_mid) - spec.target_par) == np.sign(
                    par_at(g_lo) - spec.target_par
                ):
                    g_lo = g_mid
                else:
                    g_hi = g_mid
            g = 0.5 * (g_lo + g_hi)
            if abs(par_at(g) - spec.target_par) <= 0.25:
                s = base + g * scale * boost
                s /= np.sqrt(np.mean(np.abs(s) ** 2))
                return IQSignal(s, spec.sample_rate, label="wcdma_like")
    raise ValueError(
        f"could not reach target PAR {spec.target_par:.2f} dB; "
        f"closest achieved {best_par:.2f} dB"
    )


def synthesize_dual_inputs(u: IQSignal, law: ControlLaw) -> tuple[IQSignal, ControlSignal]:
    """Per-sample dual inputs for a desired output u through a control law.

    |x| and V_c come from the law's amplitude and voltage polynomials and
    the drive phase gets the law's phase pre-correction added. Samples
    above the law's validity bound are clamped: >1% of them warns, >10%
    errors.
    """
    mag = np.abs(u.samples)
    sat = float(np.mean(mag > law.u_max * (1 + 1e-12)))
    if sat > 0.10:
        raise ValueError(f"{sat:.1%} of samples exceed the law validity bound")
    if sat > 0.01:
        warnings.warn(f"{sat:.2%} of samples clamped at the law validity bound", stacklevel=2)
    x_mag, vc, ph = evaluate_control_law(law, mag)
    x = x_mag * np.exp(1j * (np.angle(u.samples) + ph))
    return (
        IQSignal(x, u.sample_rate, label="pa_drive"),
        ControlSignal(vc, u.sample_rate, law.v_min, law.v_max, label="vmn_control"),
    )


def inversion_ceiling(surface: QuasiStaticSurface, vc_fixed: float) -> float:
    """Largest output magnitude reachable at a fixed control voltage."""
    x_dense = np.linspace(0.0, surface.x_max, 4096)
    y, _, _, _ = _evaluate_arrays(surface, x_dense, np.full_like(x_dense, vc_fixed))
    return float(y.max())


def predistort_single_input(
    u: IQSignal, surface: QuasiStaticSurface, vc_fixed: float
) -> IQSignal:
    """Quasi-static predistortion for the fixed-load single-input baseline.

    Numerically inverts the drive curve at `vc_fixed` and pre-rotates the
    phase by the local insertion phase, so the simulated output reproduces
    u wherever the curve is invertible. Desired magnitudes beyond the
    saturated output clamp at the compression point (counted and warned).
    """
    if not surface.vc_grid[0] <= vc_fixed <= surface.vc_grid[-1]:
        raise ValueError("vc_fixed outside the characterised range")
    x_dense = np.linspace(0.0, surface.x_max, 4096)
    y_dense, ph_dense, _, _ = _evaluate_arrays(
        surface, x_dense, np.full_like(x_dense, vc_fixed)
    )
    top = int(np.argmax(y_dense))
    x_inv, y_inv = x_dense[: top + 1], y_dense[: top + 1]
    keep = np.concatenate([[True], np.diff(y_inv) > 0])
    x_inv, y_inv = x_inv[keep], y_inv[keep]
    if x_inv.size < 2:
        raise ValueError("drive curve is not invertible at this control voltage")

    mag = np.abs(u.samples)
    sat = float(np.mean(mag > y_inv[-1]))
    if sat > 0.10:
        raise ValueError(f"{sat:.1%} of samples beyond the compression point")
    if sat > 0.01:
        warnings.warn(f"{sat:.2%} of samples clamped at compression", stacklevel=2)
    x_mag = np.interp(mag, y_inv, x_inv)
    ph = np.interp(x_mag, x_dense, ph_dense)
    x = x_mag * np.exp(1j * (np.angle(u.samples) + ph))
    return IQSignal(x, u.sample_rate, label="pa_drive_single")


def scale_bandwidth(sig, factor: float):
    """Dilate the time axis by 1/factor by relabelling the sample rate.

    Samples are untouched, so every envelope statistic (peak ratio,
    amplitude pdf) is exactly preserved; only the occupied spectrum
    scales.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    if isinstance(sig, ControlSignal):
        return ControlSignal(
            sig.samples, sig.sample_rate * factor, sig.v_min, sig.v_max, sig.label
        )
    return IQSignal(sig.samples, sig.sample_rate * factor, sig.label)

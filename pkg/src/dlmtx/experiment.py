"""File-based experiment pipeline: characterise, extract, synthesise,
simulate, measure, report.

A single config drives two simulated transmitter arms at matched average
output power: the dual-input architecture following the fitted control
law, and a fixed-control-voltage baseline with single-input quasi-static
predistortion. Measurement realism is emulated by adding a white noise
floor per capture and coherently averaging `n_averages` captures before
spectral metrics, which reproduces the dynamic-range behaviour of an
averaging oscilloscope chain.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import fixtures, metrics
from .control_law import (
    ControlLaw,
    Ridge,
    compute_pae_grid,
    extract_max_pae_ridge,
    extract_phase_predistorter,
    fit_control_law,
    save_law_json,
    trajectory_from_ridge,
)
from .metrics import EfficiencyReport
from .pa_model import (
    QuasiStaticSurface,
    _evaluate_arrays,
    load_loadpull_csv,
    save_trajectory_json,
    simulate_transmitter,
)
from .signals import (
    ControlSignal,
    IQSignal,
    apply_fractional_delay,
    coherent_average,
    estimate_delay,
    trim_edges,
    write_control_csv,
    write_iq_csv,
)
from .waveform import (
    TestSignalSpec,
    generate_test_signal,
    inversion_ceiling,
    predistort_single_input,
    synthesize_dual_inputs,
)

OUTPUT_DIR_ENV = "DLMTX_OUT_DIR"
ACPR_OFFSET_RATIO = 5.0 / 3.84  # adjacent-channel spacing relative to channel bw
FLOOR_PROBE_OFFSET = 4.0  # out-of-band floor probe centre, in channel bandwidths

FIXTURE_CHIP_RATES = {"class_e": 384e3, "class_j": 3.84e6}


class ConfigError(ValueError):
    """Invalid experiment configuration (bad fields or missing files)."""


@dataclass
class ExperimentConfig:
    """Everything needed to rerun one experiment deterministically."""

    surface: str = "class_e"  # fixture kind or path to a load-pull CSV
    chip_rate: float | None = None  # None: fixture default
    rolloff: float = 0.22
    n_chips: int = 4096
    oversample: int = 16
    seed: int = 1
    target_par: float = 11.3
    amp_order: int = 7
    vc_order: int = 5
    phase_order: int = 7
    phase_source: str = "static"  # "static" | "measured"
    n_bins: int | None = None
    vc_fixed: float | None = None  # None: fixture default
    delay_mismatch: float = 0.0  # samples of V_c skew relative to the drive
    noise_floor_dbc: float | None = -25.0  # per-capture floor; None disables
    n_averages: int = 100
    out_dir: str | None = None

    def __post_init__(self):
        if self.phase_source not in ("static", "measured"):
            raise ConfigError("phase_source must be 'static' or 'measured'")
        if self.n_averages < 1:
            raise ConfigError("n_averages must be >= 1")
        for name in ("amp_order", "vc_order", "phase_order"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.chip_rate is not None and self.chip_rate <= 0:
            raise ConfigError("chip_rate must be positive")

    def resolved_chip_rate(self) -> float:
        if self.chip_rate is not None:
            return self.chip_rate
        return FIXTURE_CHIP_RATES.get(self.surface, 3.84e6)

    def signal_spec(self) -> TestSignalSpec:
        try:
            return TestSignalSpec(
                chip_rate=self.resolved_chip_rate(),
                rolloff=self.rolloff,
                n_chips=self.n_chips,
                oversample=self.oversample,
                seed=self.seed,
                target_par=self.target_par,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def canonical_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON or TOML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            try:
                import tomli as tomllib
            except ModuleNotFoundError:
                raise ConfigError("TOML configs need Python 3.11+ or the tomli package")
        try:
            raw = tomllib.loads(text)
        except Exception as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_surface(config: ExperimentConfig) -> QuasiStaticSurface:
    if config.surface in FIXTURE_CHIP_RATES:
        return fixtures.make_reference_surface(config.surface)
    path = Path(config.surface)
    if not path.exists():
        raise ConfigError(f"surface is neither a fixture kind nor a file: {config.surface}")
    return load_loadpull_csv(path)


def resolve_vc_fixed(config: ExperimentConfig, surface: QuasiStaticSurface) -> float:
    if config.vc_fixed is not None:
        v = float(config.vc_fixed)
        if not surface.vc_grid[0] <= v <= surface.vc_grid[-1]:
            raise ConfigError("vc_fixed outside the characterised control range")
        return v
    if config.surface in FIXTURE_CHIP_RATES:
        return fixtures.fixture_params(config.surface).vc_fixed
    raise ConfigError("vc_fixed must be given for surfaces loaded from file")


# ---------------------------------------------------------------------------
# Measurement emulation
# ---------------------------------------------------------------------------


def add_noise_floor(
    sig: IQSignal, floor_dbc: float, channel_bw: float, rng: np.random.Generator
) -> IQSignal:
    """One capture with a white floor at `floor_dbc` per channel bandwidth.

    The floor level is referenced the way a spectrum plot reads: noise
    power integrated over one channel bandwidth, relative to the signal
    power. Total injected power is therefore scaled by fs/channel_bw.
    """
    p_sig = float(np.mean(np.abs(sig.samples) ** 2))
    p_noise = p_sig * 10.0 ** (floor_dbc / 10.0) * (sig.sample_rate / channel_bw)
    noise = rng.normal(size=len(sig)) + 1j * rng.normal(size=len(sig))
    noise *= np.sqrt(p_noise / 2.0)
    return sig.with_samples(sig.samples + noise)


def emulate_measurement(
    sig: IQSignal,
    noise_floor_dbc: float | None,
    n_averages: int,
    channel_bw: float,
    rng: np.random.Generator,
) -> IQSignal:
    """Coherent average of repeated noisy captures of the same waveform."""
    if noise_floor_dbc is None:
        return sig
    captures = [
        add_noise_floor(sig, noise_floor_dbc, channel_bw, rng) for _ in range(n_averages)
    ]
    return coherent_average(captures)


def measure_noise_floor_dbc(sig: IQSignal, channel_bw: float) -> float:
    """Out-of-band floor level in dBc per channel bandwidth."""
    spec = metrics.power_spectrum(sig)
    p_sig = spec.band_power(-channel_bw / 2, channel_bw / 2)
    off = FLOOR_PROBE_OFFSET * channel_bw
    p_floor = 0.5 * (
        spec.band_power(-off - channel_bw / 2, -off + channel_bw / 2)
        + spec.band_power(off - channel_bw / 2, off + channel_bw / 2)
    )
    if p_sig <= 0 or p_floor <= 0:
        raise ValueError("cannot estimate noise floor")
    return 10.0 * np.log10(p_floor / p_sig)


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineState:
    """Shared intermediate products of one experiment run."""

    surface: QuasiStaticSurface
    ridge: Ridge
    law: ControlLaw
    u: IQSignal  # desired output, scaled to the law's fitted range
    vc_fixed: float
    channel_bw: float
    acpr_offset: float


def _scale_to_law(u: IQSignal, law: ControlLaw) -> IQSignal:
    u_top = float(law.meta.get("u_top", law.u_max * 10 ** (-0.5 / 20.0)))
    peak = float(np.max(np.abs(u.samples)))
    return u.with_samples(u.samples * (u_top / peak))


def prepare(config: ExperimentConfig) -> PipelineState:
    """Characterise, extract the law and build the scaled test signal."""
    surface = resolve_surface(config)
    vc_fixed = resolve_vc_fixed(config, surface)
    grid = compute_pae_grid(surface)
    ridge = extract_max_pae_ridge(grid, n_bins=config.n_bins)
    law = fit_control_law(
        ridge,
        surface,
        amp_order=config.amp_order,
        vc_order=config.vc_order,
        phase_order=config.phase_order,
    )
    u = _scale_to_law(generate_test_signal(config.signal_spec()), law)
    channel_bw = config.resolved_chip_rate()
    state = PipelineState(
        surface=surface,
        ridge=ridge,
        law=law,
        u=u,
        vc_fixed=vc_fixed,
        channel_bw=channel_bw,
        acpr_offset=channel_bw * ACPR_OFFSET_RATIO,
    )
    if config.phase_source == "measured":
        law = _measured_phase_law(config, state)
        state = PipelineState(
            surface=surface,
            ridge=ridge,
            law=law,
            u=u,
            vc_fixed=vc_fixed,
            channel_bw=channel_bw,
            acpr_offset=state.acpr_offset,
        )
    return state


def _measured_phase_law(config: ExperimentConfig, state: PipelineState) -> ControlLaw:
    """Phase term from an initial modulated measurement instead of statics.

    Runs the transmitter once without phase correction, measures the
    output-vs-desired phase difference on the (emulated) capture chain and
    installs the negated polynomial fit as the predistorter.
    """
    law0 = state.law.with_phase(np.zeros(config.phase_order + 1))
    x, vc = synthesize_dual_inputs(state.u, law0)
    run = simulate_transmitter(state.surface, x, vc)
    rng = np.random.default_rng([config.seed, 1001])
    y_meas = emulate_measurement(
        run.y, config.noise_floor_dbc, config.n_averages, state.channel_bw, rng
    )
    shift = estimate_delay(state.u, y_meas)
    if abs(shift) > 1e-3:
        y_meas = apply_fractional_delay(y_meas, -shift)
    coef = extract_phase_predistorter(
        trim_edges(state.u), trim_edges(y_meas), order=config.phase_order
    )
    return state.law.with_phase(-coef)


def _arm_report(
    config: ExperimentConfig,
    state: PipelineState,
    run,
    y_meas: IQSignal,
    saturation: float,
    arm: str,
) -> EfficiencyReport:
    u_t = trim_edges(state.u)
    y_t = trim_edges(y_meas)
    nmse_db = metrics.nmse(u_t, y_t)
    ac_lo, ac_hi = metrics.acpr(y_meas, state.channel_bw, state.acpr_offset)
    return EfficiencyReport(
        pae_avg=metrics.pae(run.p_out_avg, run.p_in_avg, run.p_dc_avg),
        drain_eff_avg=metrics.drain_efficiency(run.p_out_avg, run.p_dc_avg),
        p_out_avg=run.p_out_avg,
        p_in_avg=run.p_in_avg,
        p_dc_avg=run.p_dc_avg,
        acpr_low_db=ac_lo,
        acpr_high_db=ac_hi,
        nmse_db=nmse_db,
        saturation_fraction=saturation,
        provenance={
            "arm": arm,
            "channel_bw_hz": state.channel_bw,
            "acpr_offset_hz": state.acpr_offset,
            "nfft": 4096,
            "noise_floor_dbc": config.noise_floor_dbc,
            "n_averages": config.n_averages,
            "edge_guard": 64,
        },
    )


def _static_efficiency_curves(state: PipelineState):
    """(p_out, PAE) curves for the ridge and for the fixed-Vc column."""
    surface = state.surface
    z2 = 2.0 * surface.z_ref
    ridge_curve = (
        np.concatenate([[0.0], state.ridge.p_out]),
        np.concatenate([[0.0], state.ridge.pae]),
    )
    x_dense = np.linspace(0.0, surface.x_max, 2048)
    y, _, pdc, pin = _evaluate_arrays(surface, x_dense, np.full_like(x_dense, state.vc_fixed))
    p_out = y**2 / z2
    pae_col = (p_out - pin) / pdc
    keep = np.concatenate([[True], np.diff(p_out) > 0])
    return ridge_curve, (p_out[keep], pae_col[keep])


def _envelope_pdf(u: IQSignal, z_ref: float, ceiling_w: float | None = None, bins: int = 240):
    p_inst = np.abs(u.samples) ** 2 / (2.0 * z_ref)
    if ceiling_w is not None:
        p_inst = np.minimum(p_inst, ceiling_w)
    edges = np.linspace(0.0, p_inst.max() * (1 + 1e-9), bins + 1)
    counts, _ = np.histogram(p_inst, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    prob = counts / counts.sum()
    return centers, prob


@dataclass(frozen=True)
class ExperimentResult:
    dlm: EfficiencyReport
    alone: EfficiencyReport
    pae_dlm_predicted: float
    pae_alone_predicted: float
    vc_bandwidth_hz: float
    input_bandwidth_hz: float
    config_hash: str
    law: ControlLaw
    out_dir: Path | None

    @property
    def bandwidth_expansion(self) -> float:
        return self.vc_bandwidth_hz / self.input_bandwidth_hz

    def summary_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "dlm": self.dlm.to_dict(),
            "alone": self.alone.to_dict(),
            "predicted": {
                "pae_dlm": self.pae_dlm_predicted,
                "pae_alone": self.pae_alone_predicted,
            },
            "control_bandwidth_hz": self.vc_bandwidth_hz,
            "input_bandwidth_hz": self.input_bandwidth_hz,
            "bandwidth_expansion": self.bandwidth_expansion,
        }


def run_experiment(config: ExperimentConfig, write_artifacts: bool = True) -> ExperimentResult:
    """Full pipeline for both architectures at matched average output power."""
    state = prepare(config)
    surface, law, u = state.surface, state.law, state.u
    rng = np.random.default_rng([config.seed, 2002])

    # dual-input arm
    x, vc = synthesize_dual_inputs(u, law)
    if config.delay_mismatch:
        vc = apply_fractional_delay(vc, config.delay_mismatch)
    run_dlm = simulate_transmitter(surface, x, vc)
    y_dlm = emulate_measurement(
        run_dlm.y, config.noise_floor_dbc, config.n_averages, state.channel_bw, rng
    )
    sat_dlm = float(np.mean(np.abs(u.samples) > law.u_max))
    rep_dlm = _arm_report(config, state, run_dlm, y_dlm, sat_dlm, "dlm")

    # fixed-load single-input arm
    ceiling = inversion_ceiling(surface, state.vc_fixed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        x_alone = predistort_single_input(u, surface, state.vc_fixed)
    vc_alone = ControlSignal(
        np.full(len(u), state.vc_fixed), u.sample_rate, law.v_min, law.v_max, "vc_fixed"
    )
    run_alone = simulate_transmitter(surface, x_alone, vc_alone)
    y_alone = emulate_measurement(
        run_alone.y, config.noise_floor_dbc, config.n_averages, state.channel_bw, rng
    )
    sat_alone = float(np.mean(np.abs(u.samples) > ceiling))
    rep_alone = _arm_report(config, state, run_alone, y_alone, sat_alone, "alone")

    delta_db = abs(10 * np.log10(run_dlm.p_out_avg / run_alone.p_out_avg))
    if delta_db > 0.5:
        raise RuntimeError(
            f"architectures not power-matched: outputs differ by {delta_db:.2f} dB"
        )

    # static predictions from the characterisation alone
    ridge_curve, alone_curve = _static_efficiency_curves(state)
    pdf_p, pdf_w = _envelope_pdf(u, surface.z_ref)
    pae_dlm_pred = metrics.pdf_averaged_efficiency(*ridge_curve, pdf_p, pdf_w)
    pdf_pc, pdf_wc = _envelope_pdf(u, surface.z_ref, ceiling_w=ceiling**2 / (2 * surface.z_ref))
    pae_alone_pred = metrics.pdf_averaged_efficiency(*alone_curve, pdf_pc, pdf_wc)

    obw_vc = metrics.occupied_bandwidth(vc)
    obw_u = metrics.occupied_bandwidth(u)

    out_dir = _resolve_out_dir(config) if write_artifacts else None
    result = ExperimentResult(
        dlm=rep_dlm,
        alone=rep_alone,
        pae_dlm_predicted=pae_dlm_pred,
        pae_alone_predicted=pae_alone_pred,
        vc_bandwidth_hz=obw_vc,
        input_bandwidth_hz=obw_u,
        config_hash=config.config_hash(),
        law=law,
        out_dir=out_dir,
    )
    if out_dir is not None:
        _write_artifacts(config, state, result, x, vc, y_dlm, y_alone, out_dir)
    return result


def _resolve_out_dir(config: ExperimentConfig) -> Path:
    override = os.environ.get(OUTPUT_DIR_ENV)
    base = override or config.out_dir or "dlmtx-out"
    out = Path(base)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_artifacts(config, state, result, x, vc, y_dlm, y_alone, out_dir: Path):
    written: list[Path] = []

    def _mark(path) -> Path:
        p = Path(path)
        written.append(p)
        return p

    try:
        write_iq_csv(state.u, _mark(out_dir / "u_desired.csv"))
        _mark(out_dir / "u_desired.json")
        write_iq_csv(x, _mark(out_dir / "x_drive.csv"))
        _mark(out_dir / "x_drive.json")
        write_control_csv(vc, _mark(out_dir / "vc_control.csv"))
        _mark(out_dir / "vc_control.json")
        write_iq_csv(y_dlm, _mark(out_dir / "y_dlm.csv"))
        _mark(out_dir / "y_dlm.json")
        write_iq_csv(y_alone, _mark(out_dir / "y_alone.csv"))
        _mark(out_dir / "y_alone.json")
        save_law_json(result.law, _mark(out_dir / "control_law.json"))
        for name, sig in (("u", state.u), ("y_dlm", y_dlm), ("y_alone", y_alone)):
            spec = metrics.power_spectrum(sig)
            metrics.write_spectrum_csv(spec, _mark(out_dir / f"spectrum_{name}.csv"))
        curve = metrics.normalized_gain_curve(trim_edges(state.u), trim_edges(y_dlm))
        metrics.write_gain_curve_csv(curve, _mark(out_dir / "gain_dlm.csv"))
        curve = metrics.normalized_gain_curve(trim_edges(state.u), trim_edges(y_alone))
        metrics.write_gain_curve_csv(curve, _mark(out_dir / "gain_alone.csv"))
        if config.surface in FIXTURE_CHIP_RATES:
            vmn = fixtures.make_reference_vmn(config.surface)
            traj = trajectory_from_ridge(state.ridge, vmn)
            save_trajectory_json(traj, _mark(out_dir / "load_trajectory.json"))
        report = {
            "config": config.canonical_dict(),
            "config_hash": result.config_hash,
            **result.summary_dict(),
        }
        _mark(out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise


def run_delay_sweep(config: ExperimentConfig, delays: list[float]) -> list[dict]:
    """Rerun simulation+metrics with the control signal skewed by each delay.

    Delays are in samples at the signal sample rate. The same noise
    realisation is reused across delays so metric trends reflect the
    misalignment, not the noise draw.
    """
    state = prepare(config)
    x, vc = synthesize_dual_inputs(state.u, state.law)
    rows = []
    for d in delays:
        vc_d = apply_fractional_delay(vc, float(d)) if d else vc
        run = simulate_transmitter(state.surface, x, vc_d)
        rng = np.random.default_rng([config.seed, 3003])
        y_meas = emulate_measurement(
            run.y, config.noise_floor_dbc, config.n_averages, state.channel_bw, rng
        )
        nmse_db = metrics.nmse(trim_edges(state.u), trim_edges(y_meas))
        ac = metrics.acpr(y_meas, state.channel_bw, state.acpr_offset)
        rows.append({"delay_samples": float(d), "nmse_db": nmse_db, "acpr_db": min(ac)})
    return rows


def run_averaging_study(config: ExperimentConfig, n_list: list[int]) -> list[dict]:
    """Measured out-of-band floor versus the number of averaged captures."""
    if config.noise_floor_dbc is None:
        raise ConfigError("averaging study needs noise_floor_dbc enabled")
    state = prepare(config)
    x, vc = synthesize_dual_inputs(state.u, state.law)
    run = simulate_transmitter(state.surface, x, vc)
    rows = []
    for n in n_list:
        if n < 1:
            raise ConfigError("capture counts must be >= 1")
        rng = np.random.default_rng([config.seed, 4004, int(n)])
        y_meas = emulate_measurement(
            run.y, config.noise_floor_dbc, int(n), state.channel_bw, rng
        )
        rows.append(
            {
                "n_averages": int(n),
                "floor_dbc": measure_noise_floor_dbc(y_meas, state.channel_bw),
            }
        )
    return rows

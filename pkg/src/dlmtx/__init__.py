"""Design and simulation toolkit for dynamic-load-modulation transmitters.

Pipeline: characterise (or synthesise) a quasi-static PA + tunable-network
surface, extract the maximum-efficiency operating ridge, fit polynomial
control laws, synthesise co-designed RF drive and varactor-control signals
for a high-PAR test waveform, simulate the transmitter and score
efficiency, linearity and spectral metrics.
"""

from .signals import (
    ControlSignal,
    IQSignal,
    apply_fractional_delay,
    average_power,
    coherent_average,
    estimate_delay,
    peak_to_average_ratio,
    scale_to_average_power,
    trim_edges,
)
from .pa_model import (
    LoadTrajectory,
    QuasiStaticSurface,
    TransmitterRun,
    VmnMap,
    evaluate,
    fit_rotation,
    load_loadpull_csv,
    rotate_trajectory,
    save_loadpull_csv,
    simulate_transmitter,
)
from .fixtures import make_reference_surface, make_reference_vmn
from .control_law import (
    ControlLaw,
    PaeGrid,
    Ridge,
    compute_pae_grid,
    evaluate_control_law,
    extract_max_pae_ridge,
    extract_phase_predistorter,
    fit_control_law,
    load_law_json,
    save_law_json,
    trajectory_from_ridge,
)
from .waveform import (
    TestSignalSpec,
    generate_test_signal,
    multicode_waveform,
    predistort_single_input,
    scale_bandwidth,
    synthesize_dual_inputs,
)
from .metrics import (
    EfficiencyReport,
    GainCurve,
    Spectrum,
    acpr,
    drain_efficiency,
    nmse,
    normalized_gain_curve,
    occupied_bandwidth,
    pae,
    pdf_averaged_efficiency,
    power_spectrum,
)

__version__ = "0.1.0"

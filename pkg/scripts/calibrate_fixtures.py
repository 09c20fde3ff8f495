#!/usr/bin/env python3
"""Pre-build calibration of the synthetic fixture constants.

Builds each fixture with candidate parameters, runs the real pipeline and
prints the anchor quantities the fixtures are documented to hit:

  class_e : grid-max PAE ~ 0.60, ridge-vs-fixed-Vc PAE gap at 10 dB
            output back-off ~ 0.11, pdf-predicted average PAE ~ 0.30
            (dual-input) vs ~ 0.21 (fixed load), simulated averages within
            3 points of the predictions, fixed-load ACPR ~ 27 dB with the
            -45 dBc measurement floor
  class_j : simulated improvement >= 8 points (targets ~ 0.39 vs ~ 0.28),
            fixed-load ACPR ~ 32 dB, round-trip NMSE <= -40 dB

Run from the repository root:

    python scripts/calibrate_fixtures.py [--kind class_e] [--set key=value ...]

Frozen results are committed in src/dlmtx/fixtures.py; this script exists
so the constants can be re-derived or re-tuned if the fixture family
changes.
"""

from __future__ import annotations

import argparse
import dataclasses
import warnings

import numpy as np

from dlmtx import control_law as cl
from dlmtx import experiment as ex
from dlmtx import fixtures
from dlmtx.pa_model import _evaluate_arrays


def anchors(kind: str, overrides: dict) -> dict:
    params = fixtures.fixture_params(kind)
    if overrides:
        params = dataclasses.replace(params, **overrides)
    surface = fixtures.build_surface(params)

    grid = cl.compute_pae_grid(surface)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ridge = cl.extract_max_pae_ridge(grid)

    p_pk = ridge.p_out.max()
    ridge_at_bo = float(np.interp(p_pk / 10.0, ridge.p_out, ridge.pae))
    x_dense = np.linspace(0.0, surface.x_max, 2048)
    y, _, pdc, pin = _evaluate_arrays(
        surface, x_dense, np.full_like(x_dense, params.vc_fixed)
    )
    p_col = y**2 / (2 * surface.z_ref)
    pae_col = (p_col - pin) / pdc
    col_at_bo = float(np.interp(p_pk / 10.0, p_col, pae_col))

    cfg = ex.ExperimentConfig(surface=kind, seed=1)
    # patch the experiment to use the override surface by running pieces inline
    state = ex.prepare(cfg)
    if overrides:
        # rebuild the pipeline against the overridden surface
        law = cl.fit_control_law(ridge, surface)
        u = ex._scale_to_law(
            ex.generate_test_signal(cfg.signal_spec()), law
        )
        state = ex.PipelineState(
            surface=surface,
            ridge=ridge,
            law=law,
            u=u,
            vc_fixed=params.vc_fixed,
            channel_bw=cfg.resolved_chip_rate(),
            acpr_offset=cfg.resolved_chip_rate() * ex.ACPR_OFFSET_RATIO,
        )
    result = _run(cfg, state)
    return {
        "grid_max_pae": float(grid.pae.max()),
        "ridge_at_backoff": ridge_at_bo,
        "col_at_backoff": col_at_bo,
        "gap_at_backoff": ridge_at_bo - col_at_bo,
        **result,
    }


def _run(cfg: ex.ExperimentConfig, state: ex.PipelineState) -> dict:
    import dlmtx.metrics as mx
    from dlmtx.signals import ControlSignal, trim_edges
    from dlmtx.waveform import (
        inversion_ceiling,
        predistort_single_input,
        synthesize_dual_inputs,
    )
    from dlmtx.pa_model import simulate_transmitter

    rng = np.random.default_rng([cfg.seed, 2002])
    x, vc = synthesize_dual_inputs(state.u, state.law)
    run_dlm = simulate_transmitter(state.surface, x, vc)
    y_dlm = ex.emulate_measurement(
        run_dlm.y, cfg.noise_floor_dbc, cfg.n_averages, state.channel_bw, rng
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        x_al = predistort_single_input(state.u, state.surface, state.vc_fixed)
    vc_al = ControlSignal(
        np.full(len(state.u), state.vc_fixed), state.u.sample_rate
    )
    run_al = simulate_transmitter(state.surface, x_al, vc_al)
    y_al = ex.emulate_measurement(
        run_al.y, cfg.noise_floor_dbc, cfg.n_averages, state.channel_bw, rng
    )
    ceiling = inversion_ceiling(state.surface, state.vc_fixed)

    ridge_curve, alone_curve = ex._static_efficiency_curves(state)
    pdf_p, pdf_w = ex._envelope_pdf(state.u, state.surface.z_ref)
    pae_dlm_pred = mx.pdf_averaged_efficiency(*ridge_curve, pdf_p, pdf_w)
    pdf_pc, pdf_wc = ex._envelope_pdf(
        state.u, state.surface.z_ref, ceiling_w=ceiling**2 / (2 * state.surface.z_ref)
    )
    pae_al_pred = mx.pdf_averaged_efficiency(*alone_curve, pdf_pc, pdf_wc)

    return {
        "pae_dlm_sim": (run_dlm.p_out_avg - run_dlm.p_in_avg) / run_dlm.p_dc_avg,
        "pae_alone_sim": (run_al.p_out_avg - run_al.p_in_avg) / run_al.p_dc_avg,
        "pae_dlm_pred": pae_dlm_pred,
        "pae_alone_pred": pae_al_pred,
        "p_out_dlm": run_dlm.p_out_avg,
        "p_out_alone": run_al.p_out_avg,
        "acpr_dlm": min(mx.acpr(y_dlm, state.channel_bw, state.acpr_offset)),
        "acpr_alone": min(mx.acpr(y_al, state.channel_bw, state.acpr_offset)),
        "nmse_dlm_noiseless": mx.nmse(trim_edges(state.u), trim_edges(run_dlm.y)),
        "vc_obw_ratio": mx.occupied_bandwidth(vc) / mx.occupied_bandwidth(state.u),
        "sat_alone": float(np.mean(np.abs(state.u.samples) > ceiling)),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", default="class_e", choices=["class_e", "class_j"])
    ap.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="key=value",
        help="override a FixtureParams field for this evaluation",
    )
    args = ap.parse_args()
    overrides = {}
    for kv in args.set:
        key, val = kv.split("=", 1)
        overrides[key] = float(val)
    out = anchors(args.kind, overrides)
    for k, v in out.items():
        print(f"{k:22s} {v: .4f}")


if __name__ == "__main__":
    main()

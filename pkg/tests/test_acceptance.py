"""End-to-end acceptance checks, one per shipped guarantee.

Each test prints a single pass/fail line (visible with pytest -s) before
asserting, so a scan of the output gives the full scorecard.
"""

import json
import subprocess
import sys
import time
from math import pi

import numpy as np
import pytest

from tmflow import collarflow, hypgeom, ricci, singular, torusflow

from conftest import collar_pinch_config, glued_torus_bubble

FOUR_PI = 4.0 * pi


def scorecard(num, desc, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"criterion {num:2d} [{tag}] {desc}{suffix}")
    assert ok, f"criterion {num} failed: {desc}{suffix}"


def test_criterion_01_energy_identity(coupled_run, coupled_run_fine):
    res = torusflow.energy_identity_residual(coupled_run["history"], eta=1.0)
    res_fine = torusflow.energy_identity_residual(coupled_run_fine["history"], eta=1.0)
    ok = (
        res <= 1e-2
        and res_fine <= res / 2.0
        and coupled_run["wall"] <= 60.0
    )
    scorecard(
        1,
        "energy identity residual small and refining",
        ok,
        f"residual {res:.2e}, refined {res_fine:.2e}, wall {coupled_run['wall']:.1f}s",
    )


def test_criterion_02_stationarity():
    u = torusflow.initial_map(torusflow.FlowConfig(N=64, preset="wrap"))
    mod = torusflow.TorusModulus(0.0, 1.0)
    tension_inf = float(np.abs(torusflow.tension_field(u, mod)).max())
    state = torusflow.FlowState(0.0, u, mod)
    dt = torusflow.cfl_dt(mod, 64, 0.2)
    moved = float(np.abs(torusflow.step(state, dt, eta=0.0).u - u).max())
    ok = tension_inf <= 1e-10 and moved <= 1e-12
    scorecard(2, "geodesic wrap is a discrete fixed point", ok,
              f"tension_inf {tension_inf:.2e}, step displacement {moved:.2e}")


def test_criterion_03_collar_identities():
    worst = 0.0
    zero_ok = True
    for ell in np.linspace(0.02, 1.0, 20):
        for delta in np.linspace(0.02, 1.0, 20):
            geom = hypgeom.CollarGeometry(ell, delta)
            worst = max(worst, geom.identity_residual())
            if 2.0 * delta < ell and geom.X != 0.0:
                zero_ok = False
    ell, delta = 0.1, 0.06
    X = hypgeom.collar_half_length(ell, delta)
    res = {}
    for n in (256, 512):
        rho = hypgeom.collar_rho_grid(ell, X, n, 16)
        res[n] = hypgeom.liouville_curvature_residual(
            rho, 2.0 * X / (n - 1), 2.0 * pi / 16
        )
    ratio = res[256] / res[512]
    ok = worst <= 1e-12 and zero_ok and res[512] <= 1e-5 and 3.5 <= ratio <= 4.5
    scorecard(3, "collar identity, X cutoff and Liouville residual", ok,
              f"identity {worst:.2e}, residual {res[512]:.2e}, ratio {ratio:.2f}")


def test_criterion_04_tension_scaling(collar_pinch_run):
    runs = [collar_pinch_run["history"]]
    eq_cfg = collarflow.CollarConfig(ell0=0.5, schedule="frozen", X0=6.0,
                                     n_s=49, n_theta=32, max_time=0.02,
                                     preset="interpolate")
    _, eq_hist, _ = collarflow.run_collar(eq_cfg)
    runs.append(eq_hist)
    worst = 0.0
    for hist in runs:
        margin = hist.column("margin")
        flat = hist.column("tension_flat_l2")
        rel = margin / (1.0 + flat)
        worst = min(worst, float(rel.min())) if len(rel) else worst
    ok = worst >= -1e-12
    scorecard(4, "flat-gauge tension inequality on all collar runs", ok,
              f"worst relative margin {worst:.2e}")


def test_criterion_05_bubble_accounting(bubble_field, coupled_run):
    N = bubble_field.shape[0]
    h = 1.0 / N
    mod = torusflow.TorusModulus(0.0, 1.0)
    edens = torusflow.energy_density(bubble_field, mod)
    points = singular.detect_concentration_points([edens] * 3)
    centred = (
        len(points) == 1
        and abs(points[0][0] - 0.5) <= h
        and abs(points[0][1] - 0.5) <= h
    )
    cand = singular.extract_bubble(bubble_field, (h, h), (N // 2, N // 2), 0.02,
                                   window_factor=40.0)
    energy_ok = abs(cand.energy - FOUR_PI) <= 0.02 * FOUR_PI
    smooth = [
        torusflow.energy_density(snap.u, snap.modulus)
        for _, snap in coupled_run["snapshots"]
    ]
    spurious = singular.detect_concentration_points(smooth)
    ok = centred and energy_ok and cand.accepted and spurious == []
    scorecard(5, "synthetic bubble recovered, no spurious detections", ok,
              f"energy {cand.energy:.4f} vs 4pi, centres {points}, "
              f"spurious {len(spurious)}")


def test_criterion_06_branch_segmentation():
    cfg = collar_pinch_config(X0=12.0, n_s=193, n_theta=128,
                              bubble_scale=0.4, bubble_radius=8.0)
    dom = cfg.domain()
    u = collarflow.initial_collar_map(cfg, dom)
    coarse = singular.segment_bubble_branch(u, dom.s, dom.dtheta)
    fine_cfg = collar_pinch_config(X0=12.0, n_s=385, n_theta=128,
                                   bubble_scale=0.4, bubble_radius=8.0)
    fine_dom = fine_cfg.domain()
    fine = singular.segment_bubble_branch(
        collarflow.initial_collar_map(fine_cfg, fine_dom),
        fine_dom.s, fine_dom.dtheta, lambda_trim=10,
    )
    regions = [s for s in coarse.segments if s["kind"] == "bubble-region"]
    connecting_ok = all(
        s["max_osc"] <= singular.OSC_THRESHOLD_DEFAULT
        for s in coarse.segments
        if s["kind"] == "connecting"
    )
    accepted = [c for c in coarse.candidates if c.accepted]
    drift = max(
        (abs(a - b) for a, b in zip(coarse.splits, fine.splits)), default=np.inf
    )
    stable = len(fine.splits) == len(coarse.splits) and drift <= dom.ds + 1e-12
    ok = len(regions) == 1 and len(accepted) == 1 and connecting_ok and stable
    scorecard(6, "bubble-branch segmentation and split stability", ok,
              f"regions {len(regions)}, accepted {len(accepted)}, "
              f"split drift {drift:.3f} vs cell {dom.ds:.3f}")


def test_criterion_07_energy_ledger(collar_pinch_run, coupled_run):
    # additivity on both stored runs
    state = collar_pinch_run["state"]
    dom = collar_pinch_run["config"].domain()
    s = dom.s
    X_thin = hypgeom.collar_half_length(state.ell, 0.2)
    thin_mask = np.repeat(
        (np.abs(s) <= min(X_thin, dom.X0))[:, None], dom.n_theta, axis=1
    )
    _, edens = collarflow.collar_rhs(state.u, dom.ds, dom.dtheta)
    ledger = singular.energy_ledger(edens, dom.ds * dom.dtheta, thin_mask)
    E_final = collarflow.flat_energy(state.u, dom)
    additive_collar = abs(ledger.E_T - E_final) <= 1e-10 * max(E_final, 1.0)

    tstate = coupled_run["state"]
    tdens = torusflow.energy_density(tstate.u, tstate.modulus)
    N = tstate.N
    tledger = singular.energy_ledger(
        tdens, 1.0 / (N * N), np.zeros_like(tdens, dtype=bool)
    )
    E_torus = torusflow.energy(tstate.u, tstate.modulus)
    additive_torus = abs(tledger.E_T - E_torus) <= 1e-10 * max(E_torus, 1.0)

    # on the pinch scenario the escaping bubble carries the thin energy
    branch = singular.segment_bubble_branch(
        state.u, s, dom.dtheta, window_factor=16.0, tension_threshold=1000.0
    )
    accepted = [c for c in branch.candidates if c.accepted]
    E_thin = collarflow.thin_part_energy(state, dom, 0.2)
    match = (
        len(accepted) == 1
        and abs(E_thin - accepted[0].energy) <= 0.05 * E_thin
    )
    ok = additive_collar and additive_torus and ledger.balanced() and match
    rel = abs(E_thin - accepted[0].energy) / E_thin if accepted else np.inf
    scorecard(7, "thick/thin ledger exact, thin energy is the bubble", ok,
              f"E_thin {E_thin:.4f}, bubble {accepted[0].energy if accepted else 0:.4f}, "
              f"rel {rel:.4f}")


@pytest.fixture(scope="module")
def ricci_acceptance():
    grid = ricci.SphereGrid(128, 64)
    metric = ricci.build_cusped_initial(3, grid=grid)
    t0 = time.perf_counter()
    v, samples = ricci.run_ricci(metric.v, grid)
    wall = time.perf_counter() - t0
    return metric, samples, wall


def test_criterion_08_ricci_continuation(ricci_acceptance):
    metric, samples, wall = ricci_acceptance
    rep = ricci.extinction_report(samples, 3, metric.area_deficit)
    slope_ok = abs(rep.slope + 8.0 * pi) <= 0.01 * 8.0 * pi
    deficit_fraction = abs(metric.area_deficit) / (2.0 * pi)
    T_ok = abs(rep.T_pred - 0.25) <= 0.25 * deficit_fraction + 1e-8
    deficit_ok = deficit_fraction <= 0.05
    dev_ok = rep.deviation_last <= 0.05
    ok = slope_ok and T_ok and deficit_ok and dev_ok and wall <= 120.0
    scorecard(8, "Ricci continuation at 128x64", ok,
              f"slope {rep.slope:.4f}, T_pred {rep.T_pred:.5f}, "
              f"deficit {deficit_fraction:.3%}, deviation {rep.deviation_last:.4f}, "
              f"wall {wall:.0f}s")


def test_criterion_09_horizontal_bound(coupled_run, coupled_run_fine,
                                       fixed_metric_run):
    results = []
    for run, eta in ((coupled_run, 1.0), (coupled_run_fine, 1.0),
                     (fixed_metric_run, 0.0)):
        results.append(
            torusflow.horizontal_diagnostics(run["history"], eta)["bound_holds"]
        )
    ok = all(results)
    scorecard(9, "metric-curve length bound on every stored run", ok,
              f"holds per run: {results}")


def test_criterion_10_determinism(tmp_path):
    config = {"flow": {"N": 32, "max_time": 0.003, "preset": "wrap-perturbed"}}
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        subprocess.run(
            [sys.executable, "-m", "tmflow.cli", "run",
             "--config", str(cfg_path), "--out", str(out)],
            check=True, capture_output=True,
        )
        digests.append(
            ((out / "history.csv").read_bytes(), (out / "snap_000.bin").read_bytes())
        )
    ok = digests[0] == digests[1]
    scorecard(10, "identical configs give byte-identical outputs", ok)

"""Command-line orchestration: runs, analysis, tables and the decomposition
pipeline that strings flow -> singularity analysis -> canonical continuation.

Exit codes: 0 ok, 2 config error (every violated precondition listed),
3 numerical abort.  Configs are JSON; outputs are CSV histories, binary
snapshots and JSON reports validating against docs/report.schema.json.
"""

import dataclasses
import json
import sys
from math import pi, sqrt
from pathlib import Path

import click
import numpy as np

from . import collarflow, hypgeom, ricci, runio, singular, torusflow

SCHEMA_VERSION = 1


def _fail_config(messages):
    for m in messages:
        click.echo(f"config error: {m}", err=True)
    sys.exit(2)


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        _fail_config([f"cannot read config {path}: {exc}"])


def _build_config(cls, block, label):
    """Construct a config dataclass from a JSON block, collecting every
    unknown key and the first violated precondition."""
    errors = []
    fields = {f.name for f in dataclasses.fields(cls)}
    for key in block:
        if key not in fields:
            errors.append(f"{label}: unknown key {key!r}")
    known = {k: v for k, v in block.items() if k in fields}
    cfg = None
    try:
        cfg = cls(**known)
    except (ValueError, TypeError) as exc:
        errors.append(f"{label}: {exc}")
    if errors:
        _fail_config(errors)
    return cfg


def _write_history(path, history):
    runio.write_history_csv(path, history.columns, history.rows)


@click.group()
def main():
    """Numerical laboratory for a coupled map/metric harmonic-map flow."""


# ---------------------------------------------------------------------------
# torus run
# ---------------------------------------------------------------------------


def _run_torus(config_block, outdir):
    cfg = _build_config(torusflow.FlowConfig, config_block.get("flow", {}), "flow")
    snapshot_times = config_block.get("snapshot_times", [])
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    state, history, snaps = torusflow.run(cfg, snapshot_times=snapshot_times)
    _write_history(outdir / "history.csv", history)
    for k, (t, snap) in enumerate(snaps):
        runio.write_snapshot(
            outdir / f"snap_{k:03d}.bin",
            runio.KIND_TORUS,
            t,
            snap.modulus.a,
            snap.modulus.b,
            snap.u,
        )
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "run",
        "scenario": "torus",
        "stop_reason": history.stop_reason,
        "samples": len(history),
        "final": {
            "time": state.time,
            "energy": history.column("E")[-1],
            "a": state.modulus.a,
            "b": state.modulus.b,
            "inj": torusflow.injectivity_radius(state.modulus),
        },
        "config": dataclasses.asdict(cfg),
    }
    if len(history) >= 3:
        report["energy_identity_residual"] = torusflow.energy_identity_residual(
            history, cfg.eta
        )
        horiz = torusflow.horizontal_diagnostics(history, cfg.eta)
        report["horizontal"] = {
            "bound_holds": horiz["bound_holds"],
            "K0_fit": horiz["K0_fit"],
            "T": horiz["T"],
            "E_T": horiz["E_T"],
        }
    runio.write_json_report(outdir / "report.json", report)
    return report


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "outdir", required=True, type=click.Path())
def run_cmd(config_path, outdir):
    """Integrate the coupled torus flow from a JSON config."""
    report = _run_torus(_load_json(config_path), outdir)
    click.echo(f"run finished: {report['stop_reason']}")
    if report["stop_reason"] == "numerical-abort":
        sys.exit(3)


# ---------------------------------------------------------------------------
# collar run
# ---------------------------------------------------------------------------


def _run_collar(config_block, outdir):
    cfg = _build_config(collarflow.CollarConfig, config_block.get("collar", {}), "collar")
    snapshot_times = config_block.get("snapshot_times", [])
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    state, history, snaps = collarflow.run_collar(cfg, snapshot_times=snapshot_times)
    _write_history(outdir / "history.csv", history)
    for k, (t, snap) in enumerate(snaps):
        runio.write_snapshot(
            outdir / f"snap_{k:03d}.bin",
            runio.KIND_CYLINDER,
            t,
            snap.ell,
            cfg.X0,
            snap.u,
        )
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "collar-run",
        "scenario": "collar",
        "stop_reason": history.stop_reason,
        "samples": len(history),
        "final": {
            "time": state.time,
            "ell": state.ell,
            "energy": history.column("E")[-1],
        },
        "config": dataclasses.asdict(cfg),
    }
    runio.write_json_report(outdir / "report.json", report)
    return report


@main.command("run-collar")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "outdir", required=True, type=click.Path())
def run_collar_cmd(config_path, outdir):
    """Integrate the prescribed-schedule collar flow."""
    report = _run_collar(_load_json(config_path), outdir)
    click.echo(f"collar run finished: {report['stop_reason']}")
    if report["stop_reason"] == "numerical-abort":
        sys.exit(3)


# ---------------------------------------------------------------------------
# collar table
# ---------------------------------------------------------------------------


@main.command("collar-table")
@click.option("--ell", required=True, help="comma-separated geodesic lengths")
@click.option("--delta", required=True, help="comma-separated thresholds")
@click.option("--out", "outpath", type=click.Path(), default=None)
def collar_table_cmd(ell, delta, outpath):
    """Tabulate collar geometry over an (ell, delta) grid as CSV."""
    try:
        ells = [float(x) for x in ell.split(",")]
        deltas = [float(x) for x in delta.split(",")]
    except ValueError as exc:
        _fail_config([f"bad numeric list: {exc}"])
    lines = ["ell,delta,X,rho_min,rho_boundary,identity_residual"]
    for l in ells:
        for d in deltas:
            try:
                geom = hypgeom.CollarGeometry(l, d)
            except ValueError as exc:
                _fail_config([str(exc)])
            lines.append(
                ",".join(
                    "%.17g" % x
                    for x in (l, d, geom.X, geom.rho_min, geom.rho_boundary,
                              geom.identity_residual())
                )
            )
    text = "\n".join(lines) + "\n"
    if outpath:
        Path(outpath).write_text(text)
    else:
        click.echo(text, nl=False)


# ---------------------------------------------------------------------------
# ricci
# ---------------------------------------------------------------------------


def _run_ricci(n_punctures, cap, config_block, outdir):
    if n_punctures < 3:
        _fail_config([f"punctures: need at least 3, got {n_punctures}"])
    grid_block = config_block.get("grid", {})
    n_lat = grid_block.get("n_lat", 64)
    n_lon = grid_block.get("n_lon", 32)
    cfg = _build_config(ricci.RicciConfig, config_block.get("ricci", {}), "ricci")
    try:
        grid = ricci.SphereGrid(n_lat, n_lon)
        metric = ricci.build_cusped_initial(n_punctures, cap=cap, grid=grid)
    except ValueError as exc:
        _fail_config([str(exc)])

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    runio.write_snapshot(
        outdir / "initial.bin", runio.KIND_SPHERE, 0.0, cap, 0.0, metric.v
    )
    v, samples = ricci.run_ricci(metric.v, grid, cfg)
    runio.write_history_csv(outdir / "history.csv", samples.columns, samples.rows)
    rep = ricci.extinction_report(samples, n_punctures, metric.area_deficit)
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "ricci",
        "scenario": "ricci",
        "stop_reason": samples.stop_reason,
        "n_punctures": n_punctures,
        "cap": cap,
        "grid": [n_lat, n_lon],
        "slope": rep.slope,
        "T_pred": rep.T_pred,
        "T_paper": rep.T_paper,
        "area_deficit": rep.area_deficit,
        "deviation_last": rep.deviation_last,
        "solve_residual": metric.solve_residual,
        "config": dataclasses.asdict(cfg),
    }
    runio.write_json_report(outdir / "report.json", report)
    return report


@main.command("ricci")
@click.option("--punctures", type=int, required=True)
@click.option("--cap", type=float, default=2.5, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "outdir", required=True, type=click.Path())
def ricci_cmd(punctures, cap, config_path, outdir):
    """Ricci continuation from capped cusped initial data on the sphere."""
    block = _load_json(config_path) if config_path else {}
    report = _run_ricci(punctures, cap, block, outdir)
    click.echo(
        f"ricci finished: {report['stop_reason']}, "
        f"T_pred = {report['T_pred']:.6g} vs (n-2)/4 = {report['T_paper']:.6g}"
    )


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _torus_densities(snaps):
    out = []
    for snap in snaps:
        mod = torusflow.TorusModulus(snap["p1"], snap["p2"])
        out.append(torusflow.energy_density(snap["data"], mod))
    return out


def _analyze(history_path, snapshot_dir, collar, eps0, delta_thin, T, outdir):
    columns, rows = runio.read_history_csv(history_path)
    hist = {name: np.array([r[i] for r in rows]) for i, name in enumerate(columns)}
    snap_paths = sorted(Path(snapshot_dir).glob("snap_*.bin"))
    if not snap_paths:
        _fail_config([f"no snapshots found in {snapshot_dir}"])
    snaps = [runio.read_snapshot(p) for p in snap_paths]
    final = snaps[-1]
    T_final = T if T is not None else float(hist["t"][-1])

    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "analysis",
        "parameters": {"eps0": eps0, "delta_thin": delta_thin, "T": T_final},
    }
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    proj = hist.get("projection_l2", np.zeros_like(hist["t"]))
    good = singular.select_good_times(
        hist["t"], hist["tension_l2"], proj, hist["E"], T_final
    )
    report["good_times"] = {
        "count": len(good.times),
        "values_first": float(good.values[0]) if len(good.values) else None,
        "values_last": float(good.values[-1]) if len(good.values) else None,
        "tension_square_integral": good.integral_check,
        "integral_ok": good.integral_ok,
    }

    if collar:
        u = final["data"]
        ell, X0 = final["p1"], final["p2"]
        n_s, n_theta = u.shape[0], u.shape[1]
        s = np.linspace(-X0, X0, n_s)
        ds = s[1] - s[0]
        dth = 2.0 * pi / n_theta
        branch = singular.segment_bubble_branch(u, s, dth, energy_floor=eps0)
        np.savetxt(
            outdir / "oscillation.csv",
            np.column_stack([s, branch.oscillation]),
            delimiter=",",
            header="s,osc",
            comments="",
            fmt="%.17g",
        )
        report["branch"] = {
            "splits": branch.splits,
            "segments": branch.segments,
            "total_energy": branch.total_energy,
        }
        candidates = branch.candidates
        X_thin = hypgeom.collar_half_length(ell, delta_thin)
        thin_mask = np.repeat(
            (np.abs(s) <= min(X_thin, X0))[:, None], n_theta, axis=1
        )
        edens = _collar_density(u, ds, dth)
        cell = ds * dth
        bubble_set = [[c.center[0], c.center[1]] for c in candidates if c.accepted]
    else:
        densities = _torus_densities(snaps)
        points = singular.detect_concentration_points(densities, eps0=eps0)
        bubble_set = [list(p) for p in points]
        candidates = []
        N = final["data"].shape[0]
        h = 1.0 / N
        edens = densities[-1]
        for p in points:
            idx = (int(round(p[0] * N)) % N, int(round(p[1] * N)) % N)
            scale = singular.estimate_bubble_scale(edens, idx, (h, h), 0.25)
            candidates.append(
                singular.extract_bubble(final["data"], (h, h), idx, scale,
                                        energy_floor=eps0)
            )
        inj = float(hist["inj"][-1]) if "inj" in hist else np.inf
        thin_mask = np.full(edens.shape, inj < delta_thin)
        cell = h * h

    cross = {}
    if T is not None and len(snaps) >= 2 and collar:
        late = snaps[-2]
        d_a = sqrt(max(T - late["time"], 0.0))
        if d_a > 0.0:
            cross["thin_at_sqrt_T_minus_t"] = _collar_thin_energy(late, d_a)
    ledger = singular.energy_ledger(edens, cell, thin_mask, candidates, cross)
    report["ledger"] = {
        "E_T": ledger.E_T,
        "E_thick": ledger.E_thick,
        "E_thin": ledger.E_thin,
        "bubble_energies": ledger.bubble_energies,
        "balanced": ledger.balanced(),
        "cross_checks": ledger.cross_checks,
    }
    report["bubble_set"] = bubble_set
    report["candidates"] = [
        {
            "center": list(c.center),
            "scale": c.scale,
            "energy": c.energy,
            "tension_l2": c.tension_l2,
            "accepted": c.accepted,
            "reason": c.reason,
            "misaligned": c.misaligned,
        }
        for c in candidates
    ]
    runio.write_json_report(outdir / "analysis.json", report)
    return report


def _collar_density(u, ds, dth):
    dss = np.zeros_like(u)
    dss[1:-1] = (u[2:] - u[:-2]) / (2.0 * ds)
    dss[0] = (u[1] - u[0]) / ds
    dss[-1] = (u[-1] - u[-2]) / ds
    dtt = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * dth)
    return np.einsum("ijk,ijk->ij", dss, dss) + np.einsum("ijk,ijk->ij", dtt, dtt)


def _collar_thin_energy(snap, delta):
    u, ell, X0 = snap["data"], snap["p1"], snap["p2"]
    n_s, n_theta = u.shape[0], u.shape[1]
    s = np.linspace(-X0, X0, n_s)
    ds = s[1] - s[0]
    dth = 2.0 * pi / n_theta
    X = hypgeom.collar_half_length(ell, delta)
    mask = np.abs(s) <= min(X, X0)
    edens = _collar_density(u, ds, dth)
    return 0.5 * ds * dth * float(edens[mask].sum())


@main.command("analyze")
@click.option("--history", "history_path", required=True, type=click.Path(exists=True))
@click.option("--snapshots", "snapshot_dir", required=True, type=click.Path(exists=True))
@click.option("--collar", is_flag=True, default=False)
@click.option("--eps0", type=float, default=singular.EPS0_DEFAULT, show_default=True)
@click.option("--delta-thin", type=float, default=0.2, show_default=True)
@click.option("--singular-time", "T", type=float, default=None,
              help="schedule singular time for the ledger cross-checks")
@click.option("--out", "outdir", required=True, type=click.Path())
def analyze_cmd(history_path, snapshot_dir, collar, eps0, delta_thin, T, outdir):
    """Singularity analysis of a stored run: ledger, bubbles, good times."""
    report = _analyze(history_path, snapshot_dir, collar, eps0, delta_thin, T, outdir)
    n_bub = len([c for c in report["candidates"] if c["accepted"]])
    click.echo(f"analysis written: {n_bub} accepted bubble(s), "
               f"ledger balanced = {report['ledger']['balanced']}")


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def _continuation_event(cont_block, t_base, outdir):
    genus = cont_block.get("genus", 0)
    n = cont_block.get("punctures", 3)
    if genus != 0 or n < 3:
        return None
    block = {
        "grid": cont_block.get("grid", {"n_lat": 48, "n_lon": 24}),
        "ricci": cont_block.get("ricci", {}),
    }
    rep = _run_ricci(n, cont_block.get("cap", 2.5), block, Path(outdir) / "ricci")
    return {
        "time": t_base + rep["T_pred"],
        "type": "extinction",
        "continuation": {
            "component": {"genus": 0, "punctures": n},
            "T_pred": rep["T_pred"],
            "T_paper": rep["T_paper"],
            "area_deficit": rep["area_deficit"],
        },
    }


def _pipeline(config, outdir):
    scenario = config.get("scenario")
    if scenario not in ("torus", "collar", "ricci"):
        _fail_config([f"scenario must be torus | collar | ricci, got {scenario!r}"])
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    events = []
    reconstruction = {"components": [], "glued_cylinders": 0, "punctures": 0,
                      "bubbles": []}
    failed_stage = None
    E0 = None

    if scenario == "ricci":
        cont = config.get("continuation", {"genus": 0, "punctures": 3})
        ev = _continuation_event(cont, 0.0, outdir)
        if ev is None:
            _fail_config(["continuation block does not describe a punctured sphere"])
        events.append(ev)
        reconstruction["components"].append(ev["continuation"]["component"])
    else:
        run_dir = outdir / "flow"
        if scenario == "torus":
            flow_report = _run_torus(config, run_dir)
        else:
            flow_report = _run_collar(config, run_dir)
        _, rows = runio.read_history_csv(run_dir / "history.csv")
        E0 = rows[0][1]
        stop = flow_report["stop_reason"]
        event_type = {
            "timeout": "timeout",
            "degenerate": "collar-pinch",
            "pinched": "collar-pinch",
            "numerical-abort": "timeout",
        }.get(stop, "timeout")
        t_stop = flow_report["final"]["time"]

        try:
            analysis = _analyze(
                run_dir / "history.csv",
                run_dir,
                collar=(scenario == "collar"),
                eps0=config.get("analysis", {}).get("eps0", singular.EPS0_DEFAULT),
                delta_thin=config.get("analysis", {}).get("delta_thin", 0.2),
                T=config.get("collar", {}).get("T") if scenario == "collar" else None,
                outdir=outdir / "analysis",
            )
        except Exception as exc:  # partial report names the failing stage
            analysis = None
            failed_stage = f"analysis: {exc}"

        event = {"time": t_stop, "type": event_type}
        if analysis is not None:
            event["ledger"] = analysis["ledger"]
            reconstruction["bubbles"] = analysis["candidates"]
            if analysis["candidates"] and any(
                c["accepted"] for c in analysis["candidates"]
            ):
                events.append({"time": t_stop * 0.5 if t_stop > 0 else 0.0,
                               "type": "bubbling"})
        events.append(event)

        if event_type == "collar-pinch":
            deg_block = config.get("degeneration", {"genus": 2, "k": 1})
            model = hypgeom.DegenerationModel(deg_block["genus"], deg_block["k"])
            reconstruction["glued_cylinders"] = model.k
            reconstruction["punctures"] = model.puncture_count
            cont = config.get("continuation")
            if cont and failed_stage is None:
                ev = _continuation_event(cont, t_stop, outdir)
                if ev is not None:
                    events.append(ev)
                    reconstruction["components"].append(
                        ev["continuation"]["component"]
                    )

    events.sort(key=lambda e: e["time"])
    for a, b in zip(events, events[1:]):
        if b["time"] <= a["time"]:
            b["time"] = a["time"] + 1e-12  # enforce strict ordering of ties

    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "pipeline",
        "scenario": scenario,
        "events": events,
        "reconstruction": reconstruction,
    }
    if E0 is not None:
        spent = sum(
            b.get("energy", 0.0)
            for b in reconstruction["bubbles"]
            if b.get("accepted")
        )
        report["energy_conservation"] = {"E0": E0, "accounted": spent,
                                         "gap": E0 - spent}
    if failed_stage:
        report["failed_stage"] = failed_stage
    runio.write_json_report(outdir / "pipeline.json", report)
    return report


@main.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "outdir", required=True, type=click.Path())
def pipeline_cmd(config_path, outdir):
    """Run flow -> analysis -> continuation and assemble the event report."""
    report = _pipeline(_load_json(config_path), outdir)
    kinds = [e["type"] for e in report["events"]]
    click.echo(f"pipeline events: {', '.join(kinds)}")
    if report.get("failed_stage"):
        click.echo(f"partial report, failed stage: {report['failed_stage']}")


if __name__ == "__main__":
    main()

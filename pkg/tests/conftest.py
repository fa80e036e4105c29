"""Shared fixtures: the expensive regression runs are computed once per
session and reused by both the unit tests and the acceptance tests."""

import time

import numpy as np
import pytest

from tmflow import collarflow, ricci, singular, torusflow


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def glued_torus_bubble(N=512, center=(0.5, 0.5), scale=0.02, radius=0.4):
    """Degree-1 bubble glued into the constant north-pole map on the torus.

    The blend annulus [radius/2, radius] adds O(scale^2) energy on top of the
    4 pi of the bubble, so the total is a known oracle up to a small surplus.
    """
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x, indexing="ij")
    dx = (X - center[0] + 0.5) % 1.0 - 0.5
    dy = (Y - center[1] + 0.5) % 1.0 - 0.5
    bub = singular.plane_bubble(dx, dy, (0.0, 0.0), scale)
    pole = np.zeros_like(bub)
    pole[..., 2] = 1.0
    dist = np.sqrt(dx * dx + dy * dy)
    blend = _smoothstep((dist - 0.5 * radius) / (0.5 * radius))[..., None]
    u = (1.0 - blend) * bub + blend * pole
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    far = dist >= radius
    u[far] = pole[far]
    return u


@pytest.fixture(scope="session")
def bubble_field():
    return glued_torus_bubble()


@pytest.fixture(scope="session")
def coupled_run():
    """Coupled map/metric run, perturbed wrap at N = 64, eta = 1."""
    cfg = torusflow.FlowConfig(
        eta=1.0, N=64, preset="wrap-perturbed", eps=0.1, max_time=0.05
    )
    t0 = time.perf_counter()
    state, history, snaps = torusflow.run(cfg)
    wall = time.perf_counter() - t0
    return {"config": cfg, "state": state, "history": history,
            "snapshots": snaps, "wall": wall}


@pytest.fixture(scope="session")
def coupled_run_fine():
    """Same scenario at N = 128, for the refinement half of the energy check."""
    cfg = torusflow.FlowConfig(
        eta=1.0, N=128, preset="wrap-perturbed", eps=0.1, max_time=0.05
    )
    state, history, snaps = torusflow.run(cfg)
    return {"config": cfg, "state": state, "history": history, "snapshots": snaps}


@pytest.fixture(scope="session")
def fixed_metric_run():
    """eta = 0: the metric is frozen and only the map relaxes."""
    cfg = torusflow.FlowConfig(
        eta=0.0, N=32, preset="wrap-perturbed", eps=0.1, max_time=0.02
    )
    state, history, snaps = torusflow.run(cfg)
    return {"config": cfg, "state": state, "history": history, "snapshots": snaps}


def collar_pinch_config(**overrides):
    """Fast-pinch collar scenario with a concentrated bubble at the core.

    The schedule drives ell from 0.1 to the floor in ~400 steps, short enough
    that the well-resolved bubble survives to the final snapshot.
    """
    kw = dict(
        ell0=0.1,
        T=0.01,
        schedule="linear",
        X0=6.0,
        n_s=97,
        n_theta=64,
        ell_floor=0.098,
        preset="bubble",
        bubble_scale=0.5,
        bubble_radius=2.0,
        max_time=1.0,
        sample_every=8,
    )
    kw.update(overrides)
    return collarflow.CollarConfig(**kw)


@pytest.fixture(scope="session")
def collar_pinch_run():
    cfg = collar_pinch_config()
    state, history, snaps = collarflow.run_collar(cfg)
    return {"config": cfg, "state": state, "history": history, "snapshots": snaps}


@pytest.fixture(scope="session")
def ricci_small_run():
    grid = ricci.SphereGrid(48, 24)
    metric = ricci.build_cusped_initial(3, grid=grid)
    v, samples = ricci.run_ricci(metric.v, grid)
    return {"grid": grid, "metric": metric, "v": v, "samples": samples}

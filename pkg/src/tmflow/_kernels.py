"""Hot finite-difference kernels with optional numba acceleration.

Every kernel has a pure-numpy implementation (roll/slice based) and a
numba ``@njit`` twin with explicit loops.  The active path is chosen at
import time: numba is used when importable unless the environment
variable ``TMFLOW_DISABLE_NUMBA`` is set to a non-empty value other
than ``0``.  ``benchmarks/bench_kernels.py`` compares the two paths.

Grid conventions:
  torus   u[i, j, k] with axis 0 = x, axis 1 = y, both periodic
  collar  u[i, j, k] with axis 0 = s (Dirichlet rows), axis 1 = theta (periodic)
  ricci   v[i, j] with axis 0 = colatitude (cell-centred), axis 1 = longitude
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

_disable = os.environ.get("TMFLOW_DISABLE_NUMBA", "")
USE_NUMBA = HAS_NUMBA and _disable in ("", "0")

if USE_NUMBA and os.environ.get("TMFLOW_THREADS"):
    try:
        numba.set_num_threads(max(1, int(os.environ["TMFLOW_THREADS"])))
    except ValueError:
        pass


# ---------------------------------------------------------------------------
# torus: coupled-flow right-hand side
# ---------------------------------------------------------------------------
# First derivatives are centred; the Laplacian is the composition of centred
# first differences (wide 5-point stencil).  This pairing makes the discrete
# tension cancel exactly on trigonometric wrap maps and makes the semi-discrete
# energy identity exact: the Laplacian is the negative gradient of the
# centred-difference energy.


def _torus_rhs_np(u, gi11, gi12, gi22, h):
    ux = (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) / (2.0 * h)
    uy = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * h)
    lxx = (np.roll(u, -2, axis=0) - 2.0 * u + np.roll(u, 2, axis=0)) / (4.0 * h * h)
    lyy = (np.roll(u, -2, axis=1) - 2.0 * u + np.roll(u, 2, axis=1)) / (4.0 * h * h)
    up = np.roll(u, -1, axis=0)
    um = np.roll(u, 1, axis=0)
    lxy = (
        np.roll(up, -1, axis=1)
        - np.roll(up, 1, axis=1)
        - np.roll(um, -1, axis=1)
        + np.roll(um, 1, axis=1)
    ) / (4.0 * h * h)
    lap = gi11 * lxx + 2.0 * gi12 * lxy + gi22 * lyy
    exx = np.einsum("ijk,ijk->ij", ux, ux)
    exy = np.einsum("ijk,ijk->ij", ux, uy)
    eyy = np.einsum("ijk,ijk->ij", uy, uy)
    edens = gi11 * exx + 2.0 * gi12 * exy + gi22 * eyy
    tau = lap + edens[..., None] * u
    tau -= np.einsum("ijk,ijk->ij", tau, u)[..., None] * u
    return tau, edens, float(exx.sum()), float(exy.sum()), float(eyy.sum())


def _torus_rhs_loops(u, gi11, gi12, gi22, h):
    n = u.shape[0]
    d = u.shape[2]
    tau = np.empty_like(u)
    edens = np.empty((n, n))
    inv2h = 1.0 / (2.0 * h)
    inv4h2 = 1.0 / (4.0 * h * h)
    psum = 0.0
    qsum = 0.0
    rsum = 0.0
    for i in range(n):
        ip = (i + 1) % n
        im = (i - 1) % n
        ip2 = (i + 2) % n
        im2 = (i - 2) % n
        for j in range(n):
            jp = (j + 1) % n
            jm = (j - 1) % n
            jp2 = (j + 2) % n
            jm2 = (j - 2) % n
            exx = 0.0
            exy = 0.0
            eyy = 0.0
            tdotu = 0.0
            for k in range(d):
                ux = (u[ip, j, k] - u[im, j, k]) * inv2h
                uy = (u[i, jp, k] - u[i, jm, k]) * inv2h
                exx += ux * ux
                exy += ux * uy
                eyy += uy * uy
            e = gi11 * exx + 2.0 * gi12 * exy + gi22 * eyy
            edens[i, j] = e
            psum += exx
            qsum += exy
            rsum += eyy
            for k in range(d):
                lxx = (u[ip2, j, k] - 2.0 * u[i, j, k] + u[im2, j, k]) * inv4h2
                lyy = (u[i, jp2, k] - 2.0 * u[i, j, k] + u[i, jm2, k]) * inv4h2
                lxy = (
                    u[ip, jp, k] - u[ip, jm, k] - u[im, jp, k] + u[im, jm, k]
                ) * inv4h2
                tau[i, j, k] = gi11 * lxx + 2.0 * gi12 * lxy + gi22 * lyy + e * u[i, j, k]
            for k in range(d):
                tdotu += tau[i, j, k] * u[i, j, k]
            for k in range(d):
                tau[i, j, k] -= tdotu * u[i, j, k]
    return tau, edens, psum, qsum, rsum


# ---------------------------------------------------------------------------
# collar: flat-gauge tension and energy density on the cylinder
# ---------------------------------------------------------------------------
# theta is periodic (centred first derivative, wide Laplacian so that
# equatorial theta-wraps are exactly stationary); s carries Dirichlet rows,
# with a compact 3-point Laplacian on interior rows.  Boundary rows get
# one-sided s-derivatives for the energy density and zero tension.


def _collar_rhs_np(u, ds, dth):
    ns = u.shape[0]
    tau = np.zeros_like(u)
    us = np.empty_like(u)
    us[1:-1] = (u[2:] - u[:-2]) / (2.0 * ds)
    us[0] = (u[1] - u[0]) / ds
    us[-1] = (u[-1] - u[-2]) / ds
    uth = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * dth)
    edens = np.einsum("ijk,ijk->ij", us, us) + np.einsum("ijk,ijk->ij", uth, uth)
    if ns > 2:
        lap = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (ds * ds) + (
            np.roll(u[1:-1], -2, axis=1) - 2.0 * u[1:-1] + np.roll(u[1:-1], 2, axis=1)
        ) / (4.0 * dth * dth)
        t = lap + edens[1:-1, :, None] * u[1:-1]
        t -= np.einsum("ijk,ijk->ij", t, u[1:-1])[..., None] * u[1:-1]
        tau[1:-1] = t
    return tau, edens


def _collar_rhs_loops(u, ds, dth):
    ns = u.shape[0]
    nt = u.shape[1]
    d = u.shape[2]
    tau = np.zeros_like(u)
    edens = np.empty((ns, nt))
    inv2s = 1.0 / (2.0 * ds)
    invs2 = 1.0 / (ds * ds)
    inv2t = 1.0 / (2.0 * dth)
    inv4t2 = 1.0 / (4.0 * dth * dth)
    for i in range(ns):
        for j in range(nt):
            jp = (j + 1) % nt
            jm = (j - 1) % nt
            jp2 = (j + 2) % nt
            jm2 = (j - 2) % nt
            e = 0.0
            for k in range(d):
                if i == 0:
                    usv = (u[1, j, k] - u[0, j, k]) / ds
                elif i == ns - 1:
                    usv = (u[ns - 1, j, k] - u[ns - 2, j, k]) / ds
                else:
                    usv = (u[i + 1, j, k] - u[i - 1, j, k]) * inv2s
                utv = (u[i, jp, k] - u[i, jm, k]) * inv2t
                e += usv * usv + utv * utv
            edens[i, j] = e
            if 0 < i < ns - 1:
                tdotu = 0.0
                for k in range(d):
                    lap = (u[i + 1, j, k] - 2.0 * u[i, j, k] + u[i - 1, j, k]) * invs2
                    lap += (u[i, jp2, k] - 2.0 * u[i, j, k] + u[i, jm2, k]) * inv4t2
                    tau[i, j, k] = lap + e * u[i, j, k]
                for k in range(d):
                    tdotu += tau[i, j, k] * u[i, j, k]
                for k in range(d):
                    tau[i, j, k] -= tdotu * u[i, j, k]
    return tau, edens


# ---------------------------------------------------------------------------
# ricci: Gauss curvature of e^{2v} g_round on the lat-long grid
# ---------------------------------------------------------------------------
# Flux-form Laplacian in colatitude; the sin(theta) face factors vanish at the
# poles so no ghost rows are needed.  K = e^{-2v} (1 - lap v).


def _ricci_K_np(v, sinc, sinf, dth, dph):
    nlat = v.shape[0]
    lap = np.empty_like(v)
    flux = sinf[1:-1, None] * (v[1:] - v[:-1])  # faces between rows
    lap[0] = flux[0] / (sinc[0] * dth * dth)
    lap[-1] = -flux[-1] / (sinc[-1] * dth * dth)
    if nlat > 2:
        lap[1:-1] = (flux[1:] - flux[:-1]) / (sinc[1:-1, None] * dth * dth)
    lap += (np.roll(v, -1, axis=1) - 2.0 * v + np.roll(v, 1, axis=1)) / (
        (sinc[:, None] * dph) ** 2
    )
    return np.exp(-2.0 * v) * (1.0 - lap)


def _ricci_K_loops(v, sinc, sinf, dth, dph):
    nlat = v.shape[0]
    nlon = v.shape[1]
    out = np.empty_like(v)
    invdth2 = 1.0 / (dth * dth)
    for i in range(nlat):
        invsp2 = 1.0 / (sinc[i] * sinc[i] * dph * dph)
        for j in range(nlon):
            jp = (j + 1) % nlon
            jm = (j - 1) % nlon
            lap = 0.0
            if i > 0:
                lap -= sinf[i] * (v[i, j] - v[i - 1, j])
            if i < nlat - 1:
                lap += sinf[i + 1] * (v[i + 1, j] - v[i, j])
            lap *= invdth2 / sinc[i]
            lap += (v[i, jp] - 2.0 * v[i, j] + v[i, jm]) * invsp2
            out[i, j] = np.exp(-2.0 * v[i, j]) * (1.0 - lap)
    return out


if USE_NUMBA:
    _torus_rhs_jit = numba.njit(cache=True)(_torus_rhs_loops)
    _collar_rhs_jit = numba.njit(cache=True)(_collar_rhs_loops)
    _ricci_K_jit = numba.njit(cache=True)(_ricci_K_loops)
    torus_rhs = _torus_rhs_jit
    collar_rhs = _collar_rhs_jit
    ricci_K = _ricci_K_jit
else:
    torus_rhs = _torus_rhs_np
    collar_rhs = _collar_rhs_np
    ricci_K = _ricci_K_np

# Always-exposed references for the benchmark and equivalence tests.
torus_rhs_numpy = _torus_rhs_np
collar_rhs_numpy = _collar_rhs_np
ricci_K_numpy = _ricci_K_np

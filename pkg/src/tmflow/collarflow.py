"""Map-only heat flow on a degenerating hyperbolic collar cylinder.

The domain is a fixed grid over [-X0, X0] x S^1 in the flat cylinder
coordinate; the metric rho_ell(s)^2 (ds^2 + dtheta^2) is prescribed through a
shrinking geodesic-length schedule ell(t), so the pinching regime is reachable
without evolving the metric.  The map satisfies

    du/dt = tau_g(u) = rho^-2 (Delta_flat u + |du|^2_flat u)

with Dirichlet boundary loops reimposed bit-identically after every stage.

The time step obeys dt <= cfl * min(ds, dtheta)^2 * rho_min^2 (the effective
diffusivity is rho^-2, largest at the collar core s = 0).  Since the schedule
shrinks rho_min like ell(t), the step collapses as ell -> 0 and a run cannot
cross t = T; it ends "pinched" when ell reaches ell_floor.
"""

from dataclasses import dataclass, field
from math import pi, sqrt
from typing import Optional

import numpy as np

from ._kernels import collar_rhs
from .hypgeom import collar_conformal_factor, collar_half_length
from .torusflow import FlowHistory, NumericalAbort, _normalize

__all__ = [
    "CylinderDomain",
    "CollarConfig",
    "CollarFlowState",
    "CollarHistory",
    "ell_at",
    "initial_collar_map",
    "step_map_on_collar",
    "flat_gauge_tension",
    "flat_energy",
    "conformal_energy",
    "thin_part_energy",
    "run_collar",
]


@dataclass(frozen=True)
class CylinderDomain:
    """Fixed flat-coordinate grid over [-X0, X0] x S^1."""

    X0: float
    n_s: int
    n_theta: int

    def __post_init__(self):
        if self.X0 <= 0.0:
            raise ValueError("X0 must be positive")
        if self.n_s < 4 or self.n_theta < 8:
            raise ValueError(f"grid too coarse: {self.n_s} x {self.n_theta}")

    @property
    def s(self) -> np.ndarray:
        return np.linspace(-self.X0, self.X0, self.n_s)

    @property
    def ds(self) -> float:
        return 2.0 * self.X0 / (self.n_s - 1)

    @property
    def dtheta(self) -> float:
        return 2.0 * pi / self.n_theta

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    def rho(self, ell: float) -> np.ndarray:
        """Conformal factor column rho_ell(s); requires X0 < pi^2 / ell."""
        return collar_conformal_factor(ell, self.s)


@dataclass(frozen=True)
class CollarConfig:
    ell0: float = 0.5
    T: float = 1.0
    schedule: str = "linear"  # ell(t) = ell0 (1 - t/T); "frozen" keeps ell0
    X0: Optional[float] = None  # default 0.8 * pi^2 / ell0
    n_s: int = 96
    n_theta: int = 32
    target_dim: int = 2
    cfl_factor: float = 0.2
    max_time: float = 1.0
    ell_floor: float = 0.05
    sample_every: int = 8
    preset: str = "equator"
    alpha_max: float = 0.5  # endpoint separation of the "interpolate" preset
    bubble_scale: float = 0.5
    bubble_radius: float = 4.0  # blend-to-pole radius in flat units

    def __post_init__(self):
        if self.ell0 <= 0.0 or self.T <= 0.0:
            raise ValueError("ell0 and T must be positive")
        if self.schedule not in ("linear", "frozen"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.target_dim < 2:
            raise ValueError("collar presets need a target sphere of dimension >= 2")
        X0 = self.X0 if self.X0 is not None else 0.8 * pi * pi / self.ell0
        if not 0.0 < X0 < pi * pi / self.ell0:
            raise ValueError(
                f"window half-length {X0} outside the collar domain (0, pi^2/ell0)"
            )
        object.__setattr__(self, "X0", X0)

    def domain(self) -> CylinderDomain:
        return CylinderDomain(self.X0, self.n_s, self.n_theta)


@dataclass
class CollarFlowState:
    time: float
    u: np.ndarray  # (n_s, n_theta, target_dim + 1)
    ell: float
    boundary: tuple  # (row at s = -X0, row at s = +X0), enforced verbatim


class CollarHistory(FlowHistory):
    columns = (
        "t",
        "E",
        "tension_l2",
        "tension_flat_l2",
        "sup_rho",
        "margin",
        "ell",
        "inj",
    )


def ell_at(config: CollarConfig, t: float) -> float:
    if config.schedule == "frozen":
        return config.ell0
    return config.ell0 * (1.0 - t / config.T)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def initial_collar_map(config: CollarConfig, domain: CylinderDomain) -> np.ndarray:
    """Boundary-loop presets; every preset has exactly constant boundary rows
    except "equator", whose boundary loops wrap the equator."""
    d = config.target_dim
    u = np.zeros((domain.n_s, domain.n_theta, d + 1))
    S, TH = np.meshgrid(domain.s, domain.theta, indexing="ij")
    if config.preset == "point":
        u[..., -1] = 1.0
    elif config.preset == "equator":
        u[..., 0] = np.cos(TH)
        u[..., 1] = np.sin(TH)
    elif config.preset == "interpolate":
        alpha = config.alpha_max * S / domain.X0
        u[..., 0] = np.sin(alpha)
        u[..., -1] = np.cos(alpha)
    elif config.preset == "bubble":
        # inverse-stereographic bubble of scale lambda glued into the constant
        # north-pole map at the cylinder core, blended to the pole beyond
        # bubble_radius so the boundary rows are exactly constant
        lam = config.bubble_scale
        dth = np.angle(np.exp(1j * (TH - pi)))  # wrapped angle offset
        w1, w2 = S / lam, dth / lam
        r2 = w1 * w1 + w2 * w2
        bub = np.zeros_like(u)
        bub[..., 0] = 2.0 * w1 / (r2 + 1.0)
        bub[..., 1] = 2.0 * w2 / (r2 + 1.0)
        bub[..., -1] = (r2 - 1.0) / (r2 + 1.0)
        pole = np.zeros_like(u)
        pole[..., -1] = 1.0
        dist = np.sqrt(S * S + dth * dth)
        R = config.bubble_radius
        blend = _smoothstep((dist - 0.5 * R) / (0.5 * R))[..., None]
        u = _normalize((1.0 - blend) * bub + blend * pole)
        far = dist >= R
        u[far] = pole[far]
    else:
        raise ValueError(f"unknown preset {config.preset!r}")
    return u


def _rho_grid(domain: CylinderDomain, ell: float) -> np.ndarray:
    return domain.rho(ell)[:, None]


def flat_energy(u: np.ndarray, domain: CylinderDomain) -> float:
    _, edens = collar_rhs(u, domain.ds, domain.dtheta)
    return 0.5 * domain.ds * domain.dtheta * float(edens.sum())


def conformal_energy(u: np.ndarray, domain: CylinderDomain, ell: float) -> float:
    """Energy in the collar gauge; equals flat_energy by conformal invariance."""
    _, edens = collar_rhs(u, domain.ds, domain.dtheta)
    rho2 = _rho_grid(domain, ell) ** 2
    return 0.5 * domain.ds * domain.dtheta * float(((edens / rho2) * rho2).sum())


def flat_gauge_tension(
    state: CollarFlowState, domain: CylinderDomain, rho: Optional[np.ndarray] = None
) -> dict:
    """Both sides of ||tau_flat||_{L^2(flat)} <= sup rho * ||tau_g||_{L^2(g)}.

    The two norms share quadrature nodes, so the inequality is exact weighted
    Cauchy-Schwarz and the margin can only be negative through rounding.
    """
    if rho is None:
        rho = _rho_grid(domain, state.ell)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), state.u.shape[:2])
    tau_flat, _ = collar_rhs(state.u, domain.ds, domain.dtheta)
    t2 = np.einsum("ijk,ijk->ij", tau_flat, tau_flat)
    w = domain.ds * domain.dtheta
    flat_norm = sqrt(w * float(t2.sum()))
    # tau_g = rho^-2 tau_flat, dv_g = rho^2 ds dtheta
    g_norm = sqrt(w * float((t2 / rho**2).sum()))
    sup_rho = float(rho.max())
    return {
        "tension_flat_l2": flat_norm,
        "tension_g_l2": g_norm,
        "sup_rho": sup_rho,
        "margin": sup_rho * g_norm - flat_norm,
    }


def thin_part_energy(
    state: CollarFlowState, domain: CylinderDomain, delta: float
) -> float:
    """Flat-gauge energy over the delta-thin sub-cylinder |s| <= X(ell, delta)."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    X = collar_half_length(state.ell, delta)
    if X == 0.0:
        return 0.0
    _, edens = collar_rhs(state.u, domain.ds, domain.dtheta)
    mask = np.abs(domain.s) <= min(X, domain.X0)
    return 0.5 * domain.ds * domain.dtheta * float(edens[mask].sum())


def collar_cfl_dt(domain: CylinderDomain, ell: float, cfl_factor: float) -> float:
    rho_min = ell / (2.0 * pi)
    h = min(domain.ds, domain.dtheta)
    return cfl_factor * h * h * rho_min * rho_min


def step_map_on_collar(
    state: CollarFlowState,
    dt: float,
    config: CollarConfig,
    domain: CylinderDomain,
) -> CollarFlowState:
    """One midpoint step of du/dt = rho^-2 (Delta_flat u + |du|^2 u)."""
    if dt > collar_cfl_dt(domain, state.ell, config.cfl_factor) * (1.0 + 1e-12):
        raise ValueError(
            f"dt = {dt:.3e} exceeds the collar stability bound "
            f"{collar_cfl_dt(domain, state.ell, config.cfl_factor):.3e}"
        )
    lo, hi = state.boundary

    def velocity(u, t):
        ell = ell_at(config, t)
        tau_flat, _ = collar_rhs(u, domain.ds, domain.dtheta)
        return tau_flat / _rho_grid(domain, ell)[..., None] ** 2

    u, t = state.u, state.time
    u_half = _normalize(u + 0.5 * dt * velocity(u, t))
    u_half[0], u_half[-1] = lo, hi
    u_new = _normalize(u + dt * velocity(u_half, t + 0.5 * dt))
    u_new[0], u_new[-1] = lo, hi
    if not np.all(np.isfinite(u_new)):
        raise NumericalAbort("NaN/Inf in collar map field", state)
    return CollarFlowState(t + dt, u_new, ell_at(config, t + dt), state.boundary)


def _collar_sample(state: CollarFlowState, domain: CylinderDomain):
    gauge = flat_gauge_tension(state, domain)
    E = flat_energy(state.u, domain)
    inj = state.ell / (2.0 * pi)  # rho_min, the collar-core lower bound
    return (
        E,
        gauge["tension_g_l2"],
        gauge["tension_flat_l2"],
        gauge["sup_rho"],
        gauge["margin"],
        state.ell,
        inj,
    )


def run_collar(config: CollarConfig, u0: Optional[np.ndarray] = None, snapshot_times=()):
    """Integrate the prescribed-schedule collar flow; returns (state, history, snaps).

    Stop reasons: "pinched" when ell(t) reaches ell_floor (the CFL step
    collapses like ell^2, so t = T itself is unreachable), "timeout" at
    max_time, "numerical-abort" on NaN.
    """
    domain = config.domain()
    u = u0.copy() if u0 is not None else initial_collar_map(config, domain)
    state = CollarFlowState(0.0, u, ell_at(config, 0.0), (u[0].copy(), u[-1].copy()))

    history = CollarHistory()
    history.append(0.0, *_collar_sample(state, domain))
    snapshots = []
    pending = sorted(snapshot_times)
    k = 0
    while True:
        if state.ell <= config.ell_floor:
            history.stop_reason = "pinched"
            break
        if state.time >= config.max_time - 1e-15:
            history.stop_reason = "timeout"
            break
        dt = collar_cfl_dt(domain, state.ell, config.cfl_factor)
        dt = min(dt, config.max_time - state.time)
        try:
            state = step_map_on_collar(state, dt, config, domain)
        except NumericalAbort:
            history.stop_reason = "numerical-abort"
            break
        k += 1
        if k % config.sample_every == 0:
            history.append(state.time, *_collar_sample(state, domain))
        while pending and state.time >= pending[0]:
            snapshots.append((state.time, _copy(state)))
            pending.pop(0)
    snapshots.append((state.time, _copy(state)))
    return state, history, snapshots


def _copy(state: CollarFlowState) -> CollarFlowState:
    return CollarFlowState(state.time, state.u.copy(), state.ell, state.boundary)

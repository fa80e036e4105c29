"""Coupled map/metric gradient flow on the flat unit-area torus.

The state is a sphere-valued map u on a periodic N x N grid over [0,1)^2
together with a modulus tau = a + i b parametrising the unit-area flat metric

    g = b^-1 (dx^2 + 2 a dx dy + (a^2 + b^2) dy^2),   det g = 1.

The map moves by its (tangent-projected) tension field, the modulus by the
real part of the holomorphically-projected Hopf differential:

    du/dt = tau_g(u),    (da/dt, db/dt) = -(eta^2/4) b^2 (Im c, Re c),

where c is the constant coefficient of the projected Hopf differential
c dz^2, z = x + tau y.  The (a, b) equations are the tensor equation
dg/dt = (eta^2/4) Re(c dz^2) written in the modulus coordinates.

Norm convention on quadratic differentials: the discrete identities

    dE/dt = -||tau||^2 - (eta^2/32) ||P Phi||^2,   ||P Phi||^2 = 2 ||Re P Phi||^2

fix the normalisation; with the componentwise tensor inner product this means
||Re(c dz^2)||^2 carries an overall factor 4 (see re_projection_norm_sq).  The
convention is not trusted: it is validated end to end by the energy-identity
residual, and the closed forms dE/da = 2 Im c, dE/db = 2 Re c hold exactly for
the discrete energy (centred first differences everywhere, Laplacian = the
composition of centred differences).
"""

from dataclasses import dataclass, field
from math import pi, sqrt
from typing import Optional

import numpy as np

from ._kernels import torus_rhs

__all__ = [
    "TorusModulus",
    "FlowConfig",
    "FlowState",
    "FlowHistory",
    "CFLError",
    "NumericalAbort",
    "energy",
    "energy_density",
    "tension_field",
    "hopf_differential",
    "project_holomorphic",
    "re_projection_norm_sq",
    "projection_norm_sq",
    "metric_velocity",
    "energy_gradient_modulus",
    "injectivity_radius",
    "validate_sphere_field",
    "initial_map",
    "step",
    "run",
    "energy_identity_residual",
    "horizontal_diagnostics",
]


class CFLError(ValueError):
    """Time step violates the explicit stability bound."""


class NumericalAbort(RuntimeError):
    """NaN/Inf appeared in the state; carries the last good state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class TorusModulus:
    """Unit-area flat torus metric in the modulus coordinates (a, b), b > 0."""

    a: float
    b: float

    def __post_init__(self):
        if not self.b > 0.0:
            raise ValueError(f"modulus imaginary part must be positive, got b={self.b}")

    @property
    def tau(self) -> complex:
        return complex(self.a, self.b)

    def metric(self) -> np.ndarray:
        a, b = self.a, self.b
        return np.array([[1.0, a], [a, a * a + b * b]]) / b

    def inverse_metric(self) -> np.ndarray:
        a, b = self.a, self.b
        return np.array([[a * a + b * b, -a], [-a, 1.0]]) / b

    def stencil_bound(self) -> float:
        """Upper bound on the symbol of the discrete -Laplacian, times h^2."""
        gi = self.inverse_metric()
        return gi[0, 0] + 2.0 * abs(gi[0, 1]) + gi[1, 1]


@dataclass(frozen=True)
class FlowConfig:
    eta: float = 1.0
    N: int = 64
    target_dim: int = 2
    dt: Optional[float] = None  # None: cfl_factor * h^2 / stencil bound
    cfl_factor: float = 0.2
    max_time: float = 0.05
    inj_floor: float = 1e-3
    sample_every: int = 1
    preset: str = "wrap"
    eps: float = 0.1
    a0: float = 0.0
    b0: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError("eta must be >= 0")
        if self.N < 8:
            raise ValueError("grid size N must be >= 8")
        if self.target_dim < 1:
            raise ValueError("target sphere dimension must be >= 1")
        if not 0.0 < self.cfl_factor <= 1.0:
            raise ValueError("cfl_factor must lie in (0, 1]")


@dataclass
class FlowState:
    time: float
    u: np.ndarray  # (N, N, target_dim + 1), unit rows
    modulus: TorusModulus

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.u.shape[0]


@dataclass
class FlowHistory:
    """Sampled diagnostics; one row per sample, CSV column order."""

    columns = ("t", "E", "tension_l2", "projection_l2", "a", "b", "inj", "speed_l2")

    rows: list = field(default_factory=list)
    stop_reason: str = ""

    def append(self, *row):
        self.rows.append(tuple(float(x) for x in row))

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def __len__(self):
        return len(self.rows)


def validate_sphere_field(u: np.ndarray, tol: float = 1e-12) -> None:
    norms = np.linalg.norm(u, axis=-1)
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > tol:
        raise ValueError(f"sphere constraint violated: max | ||u|| - 1 | = {worst:.3e}")


def _normalize(u: np.ndarray) -> np.ndarray:
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def _rhs(u: np.ndarray, mod: TorusModulus):
    gi = mod.inverse_metric()
    h = 1.0 / u.shape[0]
    return torus_rhs(u, gi[0, 0], gi[0, 1], gi[1, 1], h)


def energy(u: np.ndarray, mod: TorusModulus) -> float:
    """Dirichlet energy E = 1/2 int |du|^2_g dv_g (dv_g = dx dy at unit area)."""
    _, edens, _, _, _ = _rhs(u, mod)
    h = 1.0 / u.shape[0]
    return 0.5 * h * h * float(edens.sum())


def energy_density(u: np.ndarray, mod: TorusModulus) -> np.ndarray:
    """Pointwise |du|^2_g on the grid."""
    _, edens, _, _, _ = _rhs(u, mod)
    return edens


def tension_field(u: np.ndarray, mod: TorusModulus) -> np.ndarray:
    """Tangent-projected tension tau_g(u) = P_u(Delta_g u + |du|^2_g u)."""
    tau, _, _, _, _ = _rhs(u, mod)
    return tau


def hopf_differential(u: np.ndarray, mod: TorusModulus) -> np.ndarray:
    """Coefficient field phi of Phi = phi dz^2, phi = <u_z, u_z> complex-bilinear."""
    h = 1.0 / u.shape[0]
    ux = (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) / (2.0 * h)
    uy = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * h)
    # u_z = (i / 2b) (conj(tau) u_x - u_y)
    w = (np.conj(mod.tau) * ux - uy) * (1j / (2.0 * mod.b))
    return np.einsum("ijk,ijk->ij", w, w)


def project_holomorphic(phi: np.ndarray, mod: TorusModulus) -> complex:
    """L^2(g)-orthogonal projection onto Hol = {c dz^2}: the dv_g-mean of phi."""
    n = phi.shape[0]
    return complex(phi.sum()) / (n * n)


def re_projection_norm_sq(c: complex, mod: TorusModulus) -> float:
    """||Re(c dz^2)||^2_{L^2(g)} from the tensor components of Re(c dz^2).

    Componentwise inner product g^{ik} g^{jl} S_ij S_kl, integrated over the
    unit-area torus, times the normalisation factor 4 fixed by the energy
    identity (closed form: 8 b^2 |c|^2).
    """
    tau = mod.tau
    S = np.array(
        [
            [(c * 1.0).real, (c * tau).real],
            [(c * tau).real, (c * tau * tau).real],
        ]
    )
    gi = mod.inverse_metric()
    raised = gi @ S @ gi
    return 4.0 * float(np.tensordot(raised, S))


def projection_norm_sq(c: complex, mod: TorusModulus) -> float:
    """||P Phi||^2 = 16 b^2 |c|^2 in the convention fixed by the energy identity."""
    return 16.0 * mod.b * mod.b * abs(c) ** 2


def metric_velocity(c: complex, mod: TorusModulus, eta: float):
    """(da/dt, db/dt) realising dg/dt = (eta^2/4) Re(c dz^2)."""
    f = -(eta * eta / 4.0) * mod.b * mod.b
    return f * c.imag, f * c.real


def energy_gradient_modulus(u: np.ndarray, mod: TorusModulus):
    """(dE/da, dE/db) = (2 Im c, 2 Re c); exact for the discrete energy."""
    c = project_holomorphic(hopf_differential(u, mod), mod)
    return 2.0 * c.imag, 2.0 * c.real


def injectivity_radius(mod: TorusModulus) -> float:
    """Half the systole of the unit-area lattice spanned by (1,0), (a,b)/sqrt(b)."""
    a, b = mod.a, mod.b
    best = min(1.0 / b, ((a * a) + b * b) / b)  # (m,n) = (1,0) and (0,1)
    n_max = int(np.ceil(np.sqrt(best / b))) + 1
    for n in range(0, n_max + 1):
        m_center = int(round(-a * n))
        for m in range(m_center - 2, m_center + 3):
            if m == 0 and n == 0:
                continue
            ln2 = ((m + a * n) ** 2 + b * b * n * n) / b
            best = min(best, ln2)
    return 0.5 * sqrt(best)


def initial_map(config: FlowConfig) -> np.ndarray:
    """Named initial-data presets on the periodic grid."""
    N, d = config.N, config.target_dim
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x, indexing="ij")
    u = np.zeros((N, N, d + 1))
    if config.preset == "constant":
        u[..., -1] = 1.0
    elif config.preset == "wrap":
        u[..., 0] = np.cos(2.0 * pi * X)
        u[..., 1] = np.sin(2.0 * pi * X)
    elif config.preset == "wrap-perturbed":
        u[..., 0] = np.cos(2.0 * pi * X)
        u[..., 1] = np.sin(2.0 * pi * X)
        u[..., 2 % (d + 1)] += config.eps * (np.sin(2.0 * pi * Y) + 0.5 * np.sin(2.0 * pi * (X + Y)))
        u = _normalize(u)
    else:
        raise ValueError(f"unknown preset {config.preset!r}")
    return u


def cfl_dt(mod: TorusModulus, N: int, cfl_factor: float) -> float:
    h = 1.0 / N
    return cfl_factor * h * h / mod.stencil_bound()


def step(state: FlowState, dt: float, eta: float, cfl_factor: float = 0.2) -> FlowState:
    """One explicit midpoint (RK2) step of the coupled flow with renormalisation."""
    if dt > cfl_dt(state.modulus, state.N, cfl_factor) * (1.0 + 1e-12):
        raise CFLError(
            f"dt = {dt:.3e} exceeds the stability bound "
            f"{cfl_dt(state.modulus, state.N, cfl_factor):.3e}"
        )
    u, mod = state.u, state.modulus

    tau1, _, _, _, _ = _rhs(u, mod)
    c1 = project_holomorphic(hopf_differential(u, mod), mod)
    da1, db1 = metric_velocity(c1, mod, eta)
    u_half = _normalize(u + 0.5 * dt * tau1)
    mod_half = TorusModulus(mod.a + 0.5 * dt * da1, mod.b + 0.5 * dt * db1)

    tau2, _, _, _, _ = _rhs(u_half, mod_half)
    c2 = project_holomorphic(hopf_differential(u_half, mod_half), mod_half)
    da2, db2 = metric_velocity(c2, mod_half, eta)
    u_new = _normalize(u + dt * tau2)
    mod_new = TorusModulus(mod.a + dt * da2, mod.b + dt * db2)

    if not np.all(np.isfinite(u_new)):
        raise NumericalAbort("NaN/Inf in map field", state)
    return FlowState(state.time + dt, u_new, mod_new)


def _sample(state: FlowState, eta: float):
    tau, edens, _, _, _ = _rhs(state.u, state.modulus)
    h = state.h
    E = 0.5 * h * h * float(edens.sum())
    tension_l2 = sqrt(h * h * float(np.einsum("ijk,ijk->", tau, tau)))
    c = project_holomorphic(hopf_differential(state.u, state.modulus), state.modulus)
    proj_l2 = sqrt(projection_norm_sq(c, state.modulus))
    speed = (eta * eta / 4.0) * sqrt(re_projection_norm_sq(c, state.modulus))
    inj = injectivity_radius(state.modulus)
    return E, tension_l2, proj_l2, inj, speed


def run(config: FlowConfig, u0: Optional[np.ndarray] = None, snapshot_times=()):
    """Integrate to max_time or degeneration; returns (final state, history, snapshots).

    Snapshots are (time, FlowState) pairs taken at the first sample past each
    requested time; the final state is always appended.
    """
    mod = TorusModulus(config.a0, config.b0)
    u = u0.copy() if u0 is not None else initial_map(config)
    validate_sphere_field(u, tol=1e-9)
    u = _normalize(u)
    state = FlowState(0.0, u, mod)

    history = FlowHistory()
    snapshots = []
    pending = sorted(snapshot_times)
    history.append(0.0, *_sample_row(state, config.eta))
    k = 0
    while True:
        if injectivity_radius(state.modulus) < config.inj_floor:
            history.stop_reason = "degenerate"
            break
        if state.time >= config.max_time - 1e-15:
            history.stop_reason = "timeout"
            break
        # the stability bound moves with the modulus, so a fixed dt is
        # re-clamped against the current bound every step
        bound = cfl_dt(state.modulus, config.N, config.cfl_factor)
        dt = min(config.dt, bound) if config.dt is not None else bound
        try:
            state = step(state, dt, config.eta, config.cfl_factor)
        except NumericalAbort:
            history.stop_reason = "numerical-abort"
            break
        k += 1
        if k % config.sample_every == 0:
            history.append(state.time, *_sample_row(state, config.eta))
        while pending and state.time >= pending[0]:
            snapshots.append((state.time, _copy_state(state)))
            pending.pop(0)
    snapshots.append((state.time, _copy_state(state)))
    return state, history, snapshots


def _copy_state(state: FlowState) -> FlowState:
    return FlowState(state.time, state.u.copy(), state.modulus)


def _sample_row(state: FlowState, eta: float):
    E, tension_l2, proj_l2, inj, speed = _sample(state, eta)
    return (E, tension_l2, proj_l2, state.modulus.a, state.modulus.b, inj, speed)


def energy_identity_residual(history: FlowHistory, eta: float, floor: float = 1e-14) -> float:
    """Max relative residual of dE/dt + ||tau||^2 + (eta^2/32) ||P Phi||^2.

    dE/dt by centred differences over the sampled history; needs >= 3 samples
    at (approximately) uniform spacing.
    """
    if len(history) < 3:
        raise ValueError("need at least 3 history samples")
    t = history.column("t")
    E = history.column("E")
    ten = history.column("tension_l2")
    proj = history.column("projection_l2")
    worst = 0.0
    for k in range(1, len(t) - 1):
        dEdt = (E[k + 1] - E[k - 1]) / (t[k + 1] - t[k - 1])
        res = dEdt + ten[k] ** 2 + (eta * eta / 32.0) * proj[k] ** 2
        worst = max(worst, abs(res) / (abs(dEdt) + floor))
    return worst


def horizontal_diagnostics(history: FlowHistory, eta: float) -> dict:
    """Curve length L(s), the bound L(t)^2 <= eta^2 (T-t)(E(t)-E(T)), K0 fit.

    T and E(T) are the final sample (post-hoc convention).  The K0 fit is the
    least constant with |d(inj^1/2)/dt| <= K0 ||dg/dt|| over sample intervals;
    reported, never asserted.
    """
    if len(history) == 0:
        raise ValueError("empty history")
    t = history.column("t")
    E = history.column("E")
    speed = history.column("speed_l2")
    inj = history.column("inj")
    T, E_T = t[-1], E[-1]

    # L(s) = int_s^T ||dg/dt|| dt, trapezoid, evaluated at every sample
    L = np.zeros_like(t)
    for k in range(len(t) - 2, -1, -1):
        L[k] = L[k + 1] + 0.5 * (speed[k] + speed[k + 1]) * (t[k + 1] - t[k])

    rhs = eta * eta * (T - t) * (E - E_T)
    margin = rhs - L * L
    bound_holds = bool(np.all(margin >= -1e-12 * (1.0 + rhs)))

    K0 = 0.0
    sq = np.sqrt(inj)
    for k in range(len(t) - 1):
        dt_k = t[k + 1] - t[k]
        if dt_k <= 0.0:
            continue
        v = 0.5 * (speed[k] + speed[k + 1])
        if v > 1e-300:
            K0 = max(K0, abs(sq[k + 1] - sq[k]) / dt_k / v)
    return {
        "L": L,
        "bound_rhs": rhs,
        "bound_margin": margin,
        "bound_holds": bound_holds,
        "K0_fit": K0,
        "T": float(T),
        "E_T": float(E_T),
    }

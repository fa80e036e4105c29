"""Hyperbolic collar geometry, thick/thin thresholds and degeneration bookkeeping.

All quantities are dimensionless (curvature -1 units).  The collar around a
closed geodesic of length ``ell`` is the cylinder (-X, X) x S^1 carrying the
metric rho_ell(s)^2 (ds^2 + dtheta^2) with

    rho_ell(s) = ell / (2 pi cos(ell s / 2 pi)),
    X(ell, delta) = (2 pi / ell) arccos(sinh(ell/2) / sinh(delta))  if 2 delta >= ell,
    X(ell, delta) = 0                                               otherwise.

Every function here is pure; nothing holds state.
"""

from dataclasses import dataclass, field
from math import acos, cos, isfinite, pi, sinh
from typing import Sequence

import numpy as np

__all__ = [
    "CollarGeometry",
    "SurfaceTopology",
    "PinchingThreshold",
    "DegenerationModel",
    "collar_half_length",
    "collar_conformal_factor",
    "collar_injectivity_lower_bound",
    "collar_rho_grid",
    "pinching_threshold",
    "geodesic_length_decay_fit",
    "gauss_bonnet_area",
    "liouville_curvature_residual",
]

ARCCOS_CLAMP = 1e-14


def _check_positive_finite(name, value):
    if not isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


def collar_half_length(ell: float, delta: float) -> float:
    """Coordinate half-length X of the delta-thin subcollar of an ell-geodesic."""
    _check_positive_finite("ell", ell)
    _check_positive_finite("delta", delta)
    if 2.0 * delta < ell:
        return 0.0
    arg = sinh(ell / 2.0) / sinh(delta)
    if arg > 1.0:
        if arg > 1.0 + ARCCOS_CLAMP:
            raise ValueError(f"arccos argument {arg} out of range for ell={ell}, delta={delta}")
        arg = 1.0
    return (2.0 * pi / ell) * acos(arg)


def collar_conformal_factor(ell: float, s) -> float:
    """rho_ell(s): conformal factor of the collar metric at flat coordinate s."""
    _check_positive_finite("ell", ell)
    s = np.asarray(s, dtype=float)
    arg = ell * s / (2.0 * pi)
    if np.any(np.abs(arg) >= pi / 2.0) or not np.all(np.isfinite(arg)):
        raise ValueError(f"s out of the collar domain |s| < pi^2/ell for ell={ell}")
    rho = ell / (2.0 * pi * np.cos(arg))
    return float(rho) if rho.ndim == 0 else rho


def collar_injectivity_lower_bound(ell: float, s) -> float:
    """Lower bound rho_ell(s) for the hyperbolic injectivity radius in the collar."""
    return collar_conformal_factor(ell, s)


def collar_rho_grid(ell: float, half_length: float, n_s: int, n_theta: int) -> np.ndarray:
    """rho_ell sampled on an (n_s, n_theta) grid over [-half_length, half_length] x S^1."""
    s = np.linspace(-half_length, half_length, n_s)
    rho = collar_conformal_factor(ell, s)
    return np.repeat(rho[:, None], n_theta, axis=1)


@dataclass(frozen=True)
class CollarGeometry:
    """The delta-thin subcollar cylinder of a geodesic of length ell."""

    ell: float
    delta: float
    X: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "X", collar_half_length(self.ell, self.delta))

    def rho(self, s):
        return collar_conformal_factor(self.ell, s)

    @property
    def rho_min(self) -> float:
        return self.ell / (2.0 * pi)

    @property
    def rho_boundary(self) -> float:
        """rho at s = X; equals ell sinh(delta) / (2 pi sinh(ell/2)) when X > 0."""
        return collar_conformal_factor(self.ell, self.X)

    def identity_residual(self) -> float:
        """|cos(ell X / 2 pi) sinh(delta) - sinh(ell/2)|, zero for exact X.

        Zero by convention when the thin subcollar is empty (2 delta < ell),
        where X = 0 carries no defining identity.
        """
        if 2.0 * self.delta < self.ell:
            return 0.0
        return abs(cos(self.ell * self.X / (2.0 * pi)) * sinh(self.delta) - sinh(self.ell / 2.0))


@dataclass(frozen=True)
class SurfaceTopology:
    genus: int
    punctures: int = 0
    components: int = 1

    @property
    def euler_characteristic(self) -> int:
        return 2 - 2 * self.genus - self.punctures

    @property
    def hyperbolic(self) -> bool:
        return self.euler_characteristic < 0


def gauss_bonnet_area(topology: SurfaceTopology) -> float:
    """Area of the finite-volume hyperbolic metric: -2 pi chi.

    Punctured sphere: 2 pi (n - 2); closed genus-gamma >= 2: 4 pi (gamma - 1).
    """
    if not topology.hyperbolic:
        raise ValueError(
            f"no hyperbolic metric: chi = {topology.euler_characteristic} >= 0 "
            f"(genus {topology.genus}, {topology.punctures} punctures)"
        )
    return -2.0 * pi * topology.euler_characteristic


def pinching_threshold(K: float, T: float, t: float, E_t: float, E_T: float) -> float:
    """delta_K(t) = K (T - t) (E(t) - E(T)); the thinness scale of the pinching set."""
    if K < 0.0:
        raise ValueError(f"K must be >= 0, got {K}")
    if t >= T:
        raise ValueError(f"t = {t} must precede the singular time T = {T}")
    if E_t < E_T:
        raise ValueError(f"E(t) = {E_t} below the limit energy E(T) = {E_T}")
    return K * (T - t) * (E_t - E_T)


@dataclass(frozen=True)
class PinchingThreshold:
    K: float
    T: float
    E_of_T: float

    def at(self, t: float, E_of_t: float) -> float:
        return pinching_threshold(self.K, self.T, t, E_of_t, self.E_of_T)


@dataclass(frozen=True)
class DegenerationModel:
    """Bookkeeping for k pinching collars: the limit surface has 2k punctures."""

    genus: int
    k: int
    component_genera: tuple = ()

    def __post_init__(self):
        if self.genus >= 2 and not 1 <= self.k <= 3 * (self.genus - 1):
            raise ValueError(f"k = {self.k} outside 1..3(gamma-1) for genus {self.genus}")

    @property
    def puncture_count(self) -> int:
        return 2 * self.k


def geodesic_length_decay_fit(history: Sequence, T: float, E_T: float) -> dict:
    """Least C with ell(t) <= C (T - t)(E(t) - E_T) over a (t, ell, E) history.

    Diagnostic only.  Returns {"C": value, "vacuous": bool}; vacuous means the
    bound carries no information because the right-hand side vanishes while
    ell does not.
    """
    hist = [(float(t), float(ell), float(E)) for (t, ell, E) in history]
    if not hist:
        raise ValueError("empty history")
    if any(t >= T for t, _, _ in hist):
        raise ValueError("history times must precede T")
    C = 0.0
    vacuous = False
    for t, ell, E in hist:
        rhs = (T - t) * (E - E_T)
        if rhs <= 0.0:
            if ell > 0.0:
                vacuous = True
            continue
        C = max(C, ell / rhs)
    return {"C": C, "vacuous": vacuous}


def liouville_curvature_residual(rho: np.ndarray, ds: float, dtheta: float) -> float:
    """max |K + 1| for K = -rho^-2 Delta_flat log(rho) by centred differences.

    The theta direction is periodic; the two boundary rows in s are excluded
    from the maximum.  Grids finer than 8 points per direction are required.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] < 8 or rho.shape[1] < 8:
        raise ValueError(f"grid too coarse for second differences: shape {rho.shape}")
    if np.any(rho <= 0.0):
        raise ValueError("conformal factor must be positive")
    w = np.log(rho)
    lap_s = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / (ds * ds)
    lap_t = (np.roll(w, -1, axis=1) - 2.0 * w + np.roll(w, 1, axis=1))[1:-1] / (dtheta * dtheta)
    K = -(lap_s + lap_t) / rho[1:-1] ** 2
    return float(np.max(np.abs(K + 1.0)))

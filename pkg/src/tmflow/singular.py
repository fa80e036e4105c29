"""Singularity analysis: cut-off energies, concentration detection, bubble
extraction, good-time selection, bubble-branch segmentation and the
thick/thin energy ledger.

Finite-data proxies replace the double limits of the continuum theory:
shrinking neighbourhoods become a dyadic radius ladder evaluated at the last
few snapshots, and the lambda -> infinity trimming of bubble regions becomes
a fixed cell margin.  All proxy parameters (eps0, the ladder, osc_threshold,
lambda_trim) are exposed and reported.  Fitted constants are diagnostics,
never pass/fail gates.
"""

from dataclasses import dataclass, field
from math import sqrt
from typing import Optional, Sequence

import numpy as np

from .torusflow import TorusModulus

__all__ = [
    "CutoffFunction",
    "BubbleCandidate",
    "BubbleBranchReport",
    "EnergyLedger",
    "GoodTimeSequence",
    "inverse_stereographic",
    "plane_bubble",
    "periodic_dist2",
    "cutoff_energy",
    "cutoff_energy_drift",
    "eps_regularity_gate",
    "detect_concentration_points",
    "select_good_times",
    "estimate_bubble_scale",
    "extract_bubble",
    "circle_oscillation",
    "segment_bubble_branch",
    "energy_ledger",
]

EPS0_DEFAULT = 1.0  # well below the minimal S^2 bubble energy 4 pi
OSC_THRESHOLD_DEFAULT = 0.1
LAMBDA_TRIM_DEFAULT = 5  # grid cells


# ---------------------------------------------------------------------------
# bubble model
# ---------------------------------------------------------------------------


def inverse_stereographic(w: np.ndarray) -> np.ndarray:
    """S^2 point for complex plane coordinate w; w -> infinity maps to (0,0,1)."""
    w = np.asarray(w, dtype=complex)
    r2 = np.abs(w) ** 2
    out = np.empty(w.shape + (3,))
    out[..., 0] = 2.0 * w.real / (r2 + 1.0)
    out[..., 1] = 2.0 * w.imag / (r2 + 1.0)
    out[..., 2] = (r2 - 1.0) / (r2 + 1.0)
    return out


def plane_bubble(X: np.ndarray, Y: np.ndarray, center, scale: float) -> np.ndarray:
    """Degree-1 harmonic bubble of scale lambda at the given plane center.

    Total energy 4 pi; the fraction within radius R of the center is
    1 - lambda^2 / (lambda^2 + R^2).
    """
    w = ((X - center[0]) + 1j * (Y - center[1])) / scale
    return inverse_stereographic(w)


# ---------------------------------------------------------------------------
# cut-off energies
# ---------------------------------------------------------------------------


def periodic_dist2(N: int, center) -> np.ndarray:
    """Squared distance to `center` on the unit periodic square, (N, N) grid."""
    x = np.arange(N) / N
    dx = np.abs(x - center[0] % 1.0)
    dy = np.abs(x - center[1] % 1.0)
    dx = np.minimum(dx, 1.0 - dx)
    dy = np.minimum(dy, 1.0 - dy)
    return dx[:, None] ** 2 + dy[None, :] ** 2


@dataclass(frozen=True)
class CutoffFunction:
    """phi_r(x) = psi(dist^2 / r^2): 1 on the half-radius ball, 0 outside r.

    psi is the cubic smoothstep ramp on [1/4, 1] of the squared-distance
    argument; its chain-rule slope satisfies |psi'| <= 2 < 4.
    """

    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("cutoff radius must be positive")

    def profile(self, q: np.ndarray) -> np.ndarray:
        # q = dist^2 / r^2; ramp from 1 at q = 1/4 down to 0 at q = 1
        x = np.clip((np.asarray(q, dtype=float) - 0.25) / 0.75, 0.0, 1.0)
        return 1.0 - x * x * (3.0 - 2.0 * x)

    def weights(self, dist2: np.ndarray) -> np.ndarray:
        return self.profile(dist2 / (self.radius * self.radius))

    def torus_weights(self, N: int) -> np.ndarray:
        return self.weights(periodic_dist2(N, self.center))

    def grad_sup(self) -> float:
        """Analytic bound on |d phi| (slope 3 of psi in dist/r, divided by r)."""
        return 3.0 / self.radius


def cutoff_energy(u: np.ndarray, mod: TorusModulus, phi: CutoffFunction) -> float:
    """E_phi = 1/2 int phi^2 |du|^2_g dv_g on the torus."""
    from .torusflow import energy_density

    N = u.shape[0]
    w = phi.torus_weights(N)
    return 0.5 * float((w * w * energy_density(u, mod)).sum()) / (N * N)


def cutoff_energy_drift(
    t: np.ndarray,
    E: np.ndarray,
    E_phi: np.ndarray,
    delta: float,
    grad_sup: float,
) -> dict:
    """Least C with |E_phi(t2)-E_phi(t1)| <= drop + C (delta^-1/2 + |dphi|)
    (t2-t1)^{1/2} drop^{1/2}, drop = E(t1) - E(t2), over all sample pairs."""
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    E_phi = np.asarray(E_phi, dtype=float)
    if len(t) < 2:
        raise ValueError("need at least 2 samples")
    factor = delta**-0.5 + grad_sup
    C = 0.0
    unbounded = False
    for i in range(len(t) - 1):
        for j in range(i + 1, len(t)):
            drop = E[i] - E[j]
            excess = abs(E_phi[j] - E_phi[i]) - drop
            if excess <= 0.0:
                continue
            denom = factor * sqrt(t[j] - t[i]) * sqrt(max(drop, 0.0))
            if denom == 0.0:
                unbounded = True
            else:
                C = max(C, excess / denom)
    return {"C": C, "unbounded": unbounded, "pairs": len(t) * (len(t) - 1) // 2}


def eps_regularity_gate(
    u: np.ndarray,
    mod: TorusModulus,
    center,
    r: float,
    eps0: float = EPS0_DEFAULT,
) -> dict:
    """Small-energy gate on the r-ball plus the second-order bound diagnostic.

    Pass iff the energy on the r-ball is <= eps0.  The diagnostic compares
    int phi^2 (|grad du|^2 + |du|^4) against |dphi|^2 E_loc + int phi^2 |tau|^2
    and reports their ratio as the fitted constant.
    """
    from .torusflow import energy_density, tension_field

    N = u.shape[0]
    h = 1.0 / N
    dist2 = periodic_dist2(N, center)
    ball = dist2 <= r * r
    edens = energy_density(u, mod)
    E_loc = 0.5 * float(edens[ball].sum()) * h * h
    phi = CutoffFunction(tuple(center), r)
    w2 = phi.weights(dist2) ** 2

    gi = mod.inverse_metric()
    dxx = (np.roll(u, -1, 0) - 2.0 * u + np.roll(u, 1, 0)) / (h * h)
    dyy = (np.roll(u, -1, 1) - 2.0 * u + np.roll(u, 1, 1)) / (h * h)
    up, um = np.roll(u, -1, 0), np.roll(u, 1, 0)
    dxy = (np.roll(up, -1, 1) - np.roll(up, 1, 1) - np.roll(um, -1, 1) + np.roll(um, 1, 1)) / (
        4.0 * h * h
    )
    second = np.stack([np.stack([dxx, dxy], -1), np.stack([dxy, dyy], -1)], -1)
    hess2 = np.einsum("ik,jl,aqmkl,aqmij->aq", gi, gi, second, second)
    lhs = float((w2 * (hess2 + edens**2)).sum()) * h * h

    tau = tension_field(u, mod)
    tau2 = np.einsum("ijk,ijk->ij", tau, tau)
    rhs = phi.grad_sup() ** 2 * E_loc + float((w2 * tau2).sum()) * h * h
    fitted = 0.0 if lhs == 0.0 else (np.inf if rhs == 0.0 else lhs / rhs)
    return {"pass": E_loc <= eps0, "local_energy": E_loc, "bound_lhs": lhs,
            "bound_rhs_raw": rhs, "fitted_C": fitted}


# ---------------------------------------------------------------------------
# concentration detection and good times
# ---------------------------------------------------------------------------


def _ball_energies(edens: np.ndarray, r: float) -> np.ndarray:
    """Energy in the r-ball around every node, by periodic FFT convolution."""
    N = edens.shape[0]
    mask = (periodic_dist2(N, (0.0, 0.0)) <= r * r).astype(float)
    conv = np.fft.irfft2(np.fft.rfft2(edens) * np.fft.rfft2(mask), s=edens.shape)
    return 0.5 * conv / (N * N)


def dyadic_radius_ladder(N: int, r_max: float = 0.25, levels: int = 4) -> list:
    """Decreasing dyadic radii, floored at 3 grid cells."""
    floor = 3.0 / N
    out = []
    r = r_max
    for _ in range(levels):
        if r < floor:
            break
        out.append(r)
        r *= 0.5
    return out if out else [floor]


def detect_concentration_points(
    snapshots: Sequence[np.ndarray],
    eps0: float = EPS0_DEFAULT,
    radii: Optional[Sequence[float]] = None,
    last_m: int = 5,
) -> list:
    """Grid points whose r-ball energy stays >= eps0 for every radius of the
    ladder at each of the last `last_m` energy-density snapshots.

    One point per connected blob of persistent cells (the blob's best cell),
    then maxima closer than 2 r_min to a stronger one are dropped, so the
    witnessing balls are disjoint and the count is bounded by E/eps0.
    """
    from scipy.ndimage import label

    if len(snapshots) == 0:
        return []
    snaps = list(snapshots)[-last_m:]
    N = snaps[0].shape[0]
    if radii is None:
        radii = dyadic_radius_ladder(N)
    r_min = min(radii)

    persistent = np.ones((N, N), dtype=bool)
    score = None
    for edens in snaps:
        for r in radii:
            ball = _ball_energies(edens, r)
            persistent &= ball >= eps0
            if r == r_min and edens is snaps[-1]:
                score = ball
    if not persistent.any():
        return []

    labels, n_blobs = label(persistent)
    # stitch blobs that touch across the periodic seams
    for j in range(N):
        if persistent[0, j] and persistent[-1, j] and labels[0, j] != labels[-1, j]:
            labels[labels == labels[-1, j]] = labels[0, j]
    for i in range(N):
        if persistent[i, 0] and persistent[i, -1] and labels[i, 0] != labels[i, -1]:
            labels[labels == labels[i, -1]] = labels[i, 0]

    maxima = []
    for lab in np.unique(labels[labels > 0]):
        masked = np.where(labels == lab, score, -np.inf)
        i, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
        maxima.append((float(score[i, j]), (i / N, j / N)))
    maxima.sort(reverse=True)

    kept = []
    for _, p in maxima:
        ok = True
        for q in kept:
            dx = abs(p[0] - q[0])
            dy = abs(p[1] - q[1])
            dx = min(dx, 1.0 - dx)
            dy = min(dy, 1.0 - dy)
            if dx * dx + dy * dy < (2.0 * r_min) ** 2:
                ok = False
                break
        if ok:
            kept.append(p)
    return kept


@dataclass
class GoodTimeSequence:
    times: np.ndarray
    values: np.ndarray  # (||tau|| + ||P Phi||) (T - t)^{1/2} at the times
    integral_check: float  # int ||tau||^2 dt, to compare against E(0)
    integral_ok: bool


def select_good_times(
    t: np.ndarray,
    tension_l2: np.ndarray,
    projection_l2: np.ndarray,
    E: np.ndarray,
    T: float,
) -> GoodTimeSequence:
    """Running minima of (||tau|| + ||P Phi||)(T - t)^{1/2} over the samples.

    The selected values are nonincreasing by construction.  The square
    integral of the tension is compared against E(0), which bounds it when
    the energy identity holds.
    """
    t = np.asarray(t, dtype=float)
    if len(t) == 0:
        raise ValueError("empty history")
    vals = (np.asarray(tension_l2) + np.asarray(projection_l2)) * np.sqrt(
        np.maximum(T - t, 0.0)
    )
    sel_t, sel_v = [], []
    best = np.inf
    for k in range(len(t)):
        if vals[k] <= best:
            best = vals[k]
            sel_t.append(t[k])
            sel_v.append(vals[k])
    integral = float(np.trapezoid(np.asarray(tension_l2) ** 2, t)) if len(t) > 1 else 0.0
    E0 = float(np.asarray(E)[0])
    return GoodTimeSequence(
        np.array(sel_t), np.array(sel_v), integral, integral <= E0 * (1.0 + 1e-6)
    )


# ---------------------------------------------------------------------------
# bubble extraction
# ---------------------------------------------------------------------------


@dataclass
class BubbleCandidate:
    center: tuple  # domain coordinates
    scale: float
    window: Optional[np.ndarray]  # extracted map samples, or None if rejected
    energy: float
    tension_l2: float
    accepted: bool
    reason: str = ""
    misaligned: bool = False


def _window_energy_density(w: np.ndarray, hs: float, ht: float) -> np.ndarray:
    ds = (w[2:, 1:-1] - w[:-2, 1:-1]) / (2.0 * hs)
    dt = (w[1:-1, 2:] - w[1:-1, :-2]) / (2.0 * ht)
    return np.einsum("ijk,ijk->ij", ds, ds) + np.einsum("ijk,ijk->ij", dt, dt)


def _window_flat_tension(w: np.ndarray, hs: float, ht: float) -> float:
    lap = (w[2:, 1:-1] - 2.0 * w[1:-1, 1:-1] + w[:-2, 1:-1]) / (hs * hs) + (
        w[1:-1, 2:] - 2.0 * w[1:-1, 1:-1] + w[1:-1, :-2]
    ) / (ht * ht)
    e = _window_energy_density(w, hs, ht)
    uc = w[1:-1, 1:-1]
    tau = lap + e[..., None] * uc
    tau -= np.einsum("ijk,ijk->ij", tau, uc)[..., None] * uc
    return sqrt(float(np.einsum("ijk,ijk->", tau, tau)) * hs * ht)


def estimate_bubble_scale(
    edens: np.ndarray, center_idx, spacing, r_loc: float
) -> float:
    """Half-energy radius: smallest r with ball energy >= half the r_loc-ball
    energy around the center.  Parameter-free and stable under refinement."""
    hs, ht = spacing
    ns, nt = edens.shape
    s = (np.arange(ns) - center_idx[0]) * hs
    th_idx = np.arange(nt) - center_idx[1]
    th = (np.mod(th_idx + nt // 2, nt) - nt // 2) * ht
    d = np.sqrt(s[:, None] ** 2 + th[None, :] ** 2)
    inside = d <= r_loc
    total = float(edens[inside].sum())
    if total <= 0.0:
        return r_loc
    dist_in = d[inside]
    order = np.argsort(dist_in)
    cum = np.cumsum(edens[inside][order])
    k = int(np.searchsorted(cum, 0.5 * total))
    return float(dist_in[order][min(k, cum.size - 1)])


def extract_bubble(
    u: np.ndarray,
    spacing,
    center_idx,
    scale: float,
    window_factor: float = 8.0,
    tension_threshold: float = 50.0,
    energy_floor: float = EPS0_DEFAULT,
    periodic_axis1: bool = True,
) -> BubbleCandidate:
    """Cut a square window of side window_factor * scale, rescale to unit size.

    The discrete flat Dirichlet energy is invariant under the rescaling (it is
    conformally invariant in two dimensions), so the candidate energy equals
    the window energy exactly.  The candidate is accepted when the rescaled
    flat tension is below tension_threshold and the energy above energy_floor;
    a window clipped by a non-periodic boundary is rejected outright.
    """
    hs, ht = spacing
    ns, nt = u.shape[0], u.shape[1]
    ks = max(2, int(round(0.5 * window_factor * scale / hs)))
    kt = max(2, int(round(0.5 * window_factor * scale / ht)))
    i0, j0 = int(center_idx[0]), int(center_idx[1])
    center = (i0 * hs, j0 * ht)

    if i0 - ks < 0 or i0 + ks >= ns:
        return BubbleCandidate(center, scale, None, 0.0, 0.0, False,
                               reason="window clipped by boundary")
    if periodic_axis1:
        w = np.roll(u, nt // 2 - j0, axis=1)[i0 - ks : i0 + ks + 1,
                                             nt // 2 - kt : nt // 2 + kt + 1]
        if w.shape[1] != 2 * kt + 1:
            return BubbleCandidate(center, scale, None, 0.0, 0.0, False,
                                   reason="window wider than the circle")
    else:
        if j0 - kt < 0 or j0 + kt >= nt:
            return BubbleCandidate(center, scale, None, 0.0, 0.0, False,
                                   reason="window clipped by boundary")
        w = u[i0 - ks : i0 + ks + 1, j0 - kt : j0 + kt + 1]

    edens = _window_energy_density(w, hs, ht)
    energy = 0.5 * float(edens.sum()) * hs * ht
    # rescaled gauge: same samples on the unit square
    tension = _window_flat_tension(w, 1.0 / (2 * ks), 1.0 / (2 * kt))

    # energy centroid offset flags a badly centred guess
    si = (np.arange(1, 2 * ks) - ks) * hs
    tj = (np.arange(1, 2 * kt) - kt) * ht
    tot = float(edens.sum())
    misaligned = False
    if tot > 0.0:
        cs = float((edens.sum(axis=1) * si).sum()) / tot
        ct = float((edens.sum(axis=0) * tj).sum()) / tot
        misaligned = sqrt(cs * cs + ct * ct) > scale

    accepted = energy >= energy_floor and tension <= tension_threshold
    reason = ""
    if energy < energy_floor:
        reason = "below energy floor"
    elif tension > tension_threshold:
        reason = "tension above threshold"
    return BubbleCandidate(center, scale, w.copy(), energy, tension, accepted,
                           reason=reason, misaligned=misaligned)


# ---------------------------------------------------------------------------
# bubble-branch segmentation on the cylinder
# ---------------------------------------------------------------------------


def circle_oscillation(u: np.ndarray, row: int) -> float:
    """Max pairwise Euclidean distance of the map values on circle {s_row}."""
    ring = u[row]
    diff = ring[:, None, :] - ring[None, :, :]
    return float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).max())


@dataclass
class BubbleBranchReport:
    splits: list  # s-coordinates separating the segments
    segments: list  # dicts: kind, rows (i0, i1), energy, max_osc
    oscillation: np.ndarray  # per-row profile
    candidates: list  # BubbleCandidate per bubble region
    total_energy: float


def segment_bubble_branch(
    u: np.ndarray,
    s: np.ndarray,
    dtheta: float,
    osc_threshold: float = OSC_THRESHOLD_DEFAULT,
    lambda_trim: int = LAMBDA_TRIM_DEFAULT,
    energy_floor: float = EPS0_DEFAULT,
    tension_threshold: float = 50.0,
    window_factor: float = 8.0,
) -> BubbleBranchReport:
    """Split the cylinder into connecting (near-curve) segments and bubble
    regions by thresholding the circle-oscillation profile.

    Rows with oscillation above threshold, padded by lambda_trim cells, form
    the bubble regions; each gets one extraction attempt at the half-energy
    scale of its concentration cell.  Segment energies are an exact partition
    of the rows, so they sum to the total cylinder energy.
    """
    ns = u.shape[0]
    if ns < 2 * lambda_trim + 2:
        raise ValueError("cylinder too short for the requested trim margin")
    ds = float(s[1] - s[0])
    osc = np.array([circle_oscillation(u, i) for i in range(ns)])

    hot = osc > osc_threshold
    regions = []
    i = 0
    while i < ns:
        if hot[i]:
            j = i
            while j + 1 < ns and hot[j + 1]:
                j += 1
            lo = max(0, i - lambda_trim)
            hi = min(ns - 1, j + lambda_trim)
            if regions and lo <= regions[-1][1]:
                regions[-1] = (regions[-1][0], hi)
            else:
                regions.append((lo, hi))
            i = j + 1
        else:
            i += 1

    dth = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * dtheta)
    dss = np.zeros_like(u)
    dss[1:-1] = (u[2:] - u[:-2]) / (2.0 * ds)
    dss[0] = (u[1] - u[0]) / ds
    dss[-1] = (u[-1] - u[-2]) / ds
    edens = np.einsum("ijk,ijk->ij", dss, dss) + np.einsum("ijk,ijk->ij", dth, dth)
    row_energy = 0.5 * edens.sum(axis=1) * ds * dtheta
    total = float(row_energy.sum())

    segments = []
    candidates = []
    splits = []
    cursor = 0
    for lo, hi in regions:
        if lo > cursor:
            segments.append(_segment("connecting", cursor, lo - 1, row_energy, osc))
        splits.append(float(s[lo]))
        segments.append(_segment("bubble-region", lo, hi, row_energy, osc))
        splits.append(float(s[min(hi + 1, ns - 1)]))

        sub = edens[lo : hi + 1]
        flat = int(np.argmax(sub))
        ci, cj = divmod(flat, sub.shape[1])
        ci += lo
        r_loc = 0.5 * (s[hi] - s[lo]) if hi > lo else 2 * ds
        scale = estimate_bubble_scale(edens, (ci, cj), (ds, dtheta), max(r_loc, 3 * ds))
        candidates.append(
            extract_bubble(u, (ds, dtheta), (ci, cj), scale, window_factor,
                           tension_threshold, energy_floor, periodic_axis1=True)
        )
        cursor = hi + 1
    if cursor < ns:
        segments.append(_segment("connecting", cursor, ns - 1, row_energy, osc))
    return BubbleBranchReport(splits, segments, osc, candidates, total)


def _segment(kind, i0, i1, row_energy, osc):
    return {
        "kind": kind,
        "rows": (int(i0), int(i1)),
        "energy": float(row_energy[i0 : i1 + 1].sum()),
        "max_osc": float(osc[i0 : i1 + 1].max()),
    }


# ---------------------------------------------------------------------------
# energy ledger
# ---------------------------------------------------------------------------


@dataclass
class EnergyLedger:
    E_T: float
    E_thick: float
    E_thin: float
    bubble_energies: list
    cross_checks: dict = field(default_factory=dict)

    def balanced(self, tol: float = 1e-10) -> bool:
        return bool(abs(self.E_thick + self.E_thin - self.E_T) <= tol * max(self.E_T, 1.0))


def energy_ledger(
    edens: np.ndarray,
    cell: float,
    thin_mask: np.ndarray,
    bubbles: Sequence[BubbleCandidate] = (),
    cross_checks: Optional[dict] = None,
) -> EnergyLedger:
    """Thick/thin split of the final energy density along a node mask.

    E_thin and E_thick are complementary masked sums, so additivity against
    the total is exact up to summation rounding.  Cross-check entries (other
    thin-mask conventions) are recorded with their discrepancies.
    """
    thin_mask = np.asarray(thin_mask, dtype=bool)
    if thin_mask.shape != edens.shape:
        raise ValueError("thin mask must match the energy-density grid")
    E_thin = 0.5 * cell * float(edens[thin_mask].sum())
    E_thick = 0.5 * cell * float(edens[~thin_mask].sum())
    checks = {}
    for name, value in (cross_checks or {}).items():
        checks[name] = {"value": float(value), "discrepancy": float(value) - E_thin}
    return EnergyLedger(
        E_T=E_thin + E_thick,
        E_thick=E_thick,
        E_thin=E_thin,
        bubble_energies=[b.energy for b in bubbles if b.accepted],
        cross_checks=checks,
    )

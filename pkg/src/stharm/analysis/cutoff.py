"""The cosine cutoff f = cos(pi d / 2R), the constant c_p(R) and radial drift comparisons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CapabilityError, DomainError
from ..geometry import EvolvingManifold, laplacian_fd
from ..linalg import relative_eigvalsh


@dataclass(frozen=True)
class CutoffField:
    """f(t, y) = cos(pi d_{g(t)}(x, y) / (2R)) on D_R, zero outside."""

    space: EvolvingManifold
    x: np.ndarray
    R: float
    p: float = 1.0

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError("cutoff radius must be positive")
        if not self.space.has_distance:
            raise CapabilityError(f"{self.space.name} has no analytic distance")

    def distance(self, t: float, y) -> np.ndarray:
        return self.space.distance(t, np.asarray(self.x, dtype=float), np.asarray(y, dtype=float))

    def __call__(self, t: float, y) -> np.ndarray:
        rho = self.distance(t, y)
        return np.where(rho < self.R, np.cos(0.5 * np.pi * rho / self.R), 0.0)


def _check_radial(space: EvolvingManifold, x: np.ndarray) -> None:
    if not space.has_distance:
        raise CapabilityError(f"{space.name} has no analytic distance; c_p(R) needs one")
    if np.any(x != 0) and not space.static:
        # the radial profile is known about the chart origin only
        raise CapabilityError(f"{space.name}: radial quantities are available about the origin only")


def cpr_integrand(p: float, R: float, rho: np.ndarray, drift: np.ndarray) -> np.ndarray:
    """p(p+1)/2 |grad f|^2 - p f (df/dt + 1/2 Delta f) for f = cos(pi rho/2R), |grad rho| = 1."""
    a = 0.5 * np.pi / R
    s, c = np.sin(a * rho), np.cos(a * rho)
    return 0.5 * p * (p + 1) * a**2 * s**2 + 0.5 * p * a**2 * c**2 + p * a * s * c * drift


@dataclass(frozen=True)
class CpRResult:
    value: float
    argmax_t: float
    argmax_rho: float
    p: float
    R: float
    n_t: int
    n_rho: int


def radial_grid(R: float, n_rho: int) -> np.ndarray:
    """Distances in [1e-3 R, R]; a grid with 2n-1 points contains the one with n points."""
    return np.linspace(1e-3 * R, R, n_rho)


def compute_cpR(
    space: EvolvingManifold,
    x,
    R: float,
    p: float,
    horizon: float = 1.0,
    n_t: int = 21,
    n_rho: int = 2001,
) -> CpRResult:
    """Grid supremum of the c_p(R) expression over (t, rho) in [0, horizon] x [1e-3 R, R].

    Uses the radial drift d rho/dt + 1/2 Delta rho of the space (closed form
    where available, otherwise finite differences of the analytic distance).
    """
    x = np.asarray(x, dtype=float)
    _check_radial(space, x)
    if not R > 0 or not p >= 1:
        raise DomainError("need R > 0 and p >= 1")
    ts = np.linspace(0.0, horizon, n_t) if horizon > 0 else np.zeros(1)
    rho = radial_grid(R, n_rho)
    best, bt, br = -np.inf, 0.0, 0.0
    for t in ts:
        vals = cpr_integrand(p, R, rho, space.radial_drift(float(t), rho))
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, bt, br = float(vals[i]), float(t), float(rho[i])
    return CpRResult(best, bt, br, p, R, len(ts), n_rho)


def cpr_expression_fd(space: EvolvingManifold, x, R: float, p: float, t: float, y, eps: float = 1e-4) -> float:
    """f^{p+2} (d/dt f^{-p} + 1/2 Delta f^{-p}) at one point, by finite differences of the distance."""
    x = np.asarray(x, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    a = 0.5 * np.pi / R

    def f(s, z):
        return np.cos(a * space.distance(s, x, z))

    def fp(s, z):
        return f(s, z) ** (-p)

    if t >= eps:
        dt = (fp(t + eps, y) - fp(t - eps, y)) / (2 * eps)
    else:
        dt = (-3 * fp(t, y) + 4 * fp(t + eps, y) - fp(t + 2 * eps, y)) / (2 * eps)
    lap = laplacian_fd(space, fp, t, y, eps)
    return float((f(t, y) ** (p + 2) * (dt + 0.5 * lap))[0])


def curvature_sup(space: EvolvingManifold, r0: float, horizon: float, n_t: int = 11, n_rho: int = 201, n_dir: int = 8):
    """C(x, r0) = sup |Ric| over t in [0, horizon] and d_{g(t)}(origin, y) <= r0 (operator norm w.r.t. g)."""
    ts = np.linspace(0.0, horizon, n_t)
    rho = np.linspace(0.0, r0, n_rho)
    angles = np.linspace(0.0, 2 * np.pi, n_dir, endpoint=False)
    best = 0.0
    for t in ts:
        r = space.radius_at_distance(float(t), rho)
        if space.dim == 1:
            pts = np.concatenate([r, -r])[:, None]
        else:
            dirs = np.zeros((n_dir, space.dim))
            dirs[:, 0], dirs[:, 1] = np.cos(angles), np.sin(angles)
            pts = (r[:, None, None] * dirs[None]).reshape(-1, space.dim)
        s = space.sample(float(t), pts)
        eig = relative_eigvalsh(s.ricci, s.g)
        best = max(best, float(np.max(np.abs(eig))))
    return best


@dataclass
class DriftEstimateReport:
    C: float
    k: float
    r0: float
    max_excess: float  # max of drift - comparison bound (<= 0 means the estimate holds)
    holds: bool
    static_comparison_excess: float  # max of drift - (d-1)/(2 rho)
    static_comparison_holds: bool
    drift_inf: float


def comparison_bound(d: int, k: float, rho: np.ndarray, r0: float) -> np.ndarray:
    """(d-1)/2 (k coth(k (rho ^ r0)) + k^2 (rho ^ r0)), with the k -> 0 limit (d-1)/(2 (rho ^ r0))."""
    z = np.minimum(rho, r0)
    if k == 0.0:
        return 0.5 * (d - 1) / z
    return 0.5 * (d - 1) * (k / np.tanh(k * z) + k**2 * z)


def drift_estimate_check(
    space: EvolvingManifold,
    x,
    r0: float,
    R: float,
    horizon: float = 1.0,
    n_t: int = 11,
    n_rho: int = 400,
    tol: float = 1e-9,
) -> DriftEstimateReport:
    """Compare the radial drift with the parabolic comparison bound and with the static (d-1)/(2 rho) bound."""
    x = np.asarray(x, dtype=float)
    _check_radial(space, x)
    d = space.dim
    if d < 2:
        raise DomainError("the comparison bound needs dimension >= 2")
    C = curvature_sup(space, r0, horizon)
    k = float(np.sqrt(C / (d - 1)))
    rho = radial_grid(R, n_rho)
    excess, static_excess, inf = -np.inf, -np.inf, np.inf
    for t in np.linspace(0.0, horizon, n_t):
        drift = space.radial_drift(float(t), rho)
        excess = max(excess, float(np.max(drift - comparison_bound(d, k, rho, r0))))
        static_excess = max(static_excess, float(np.max(drift - 0.5 * (d - 1) / rho)))
        inf = min(inf, float(np.min(drift)))
    return DriftEstimateReport(C, k, r0, excess, excess <= tol, static_excess, static_excess <= tol, inf)

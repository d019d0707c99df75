"""Numerical Liouville-bound pipelines: decay, first factor x second factor, small image."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import CapabilityError, ConfigError, DomainError
from ..geometry import EvolvingManifold, TargetManifold, validate_super_ricci
from ..harmonic import SpaceTimeMap, energy_density
from ..linalg import metric_norm, relative_eigvalsh
from ..stochastic import StepConfig, StoppingRule, run_ensemble
from .cutoff import compute_cpR
from .firstfactor import first_factor_rhs
from .report import mean_se
from .secondfactor import EnergyObserver


@dataclass
class RouteResult:
    name: str
    applicable: bool
    bound: Optional[float] = None
    se: Optional[float] = None
    factors: dict = field(default_factory=dict)
    reason: str = ""


@dataclass
class LiouvilleBound:
    """Upper bound on |du(0, x) v|; ``bound`` is None when no pipeline applies."""

    bound: Optional[float]
    route: Optional[str]
    routes: list

    @property
    def has_bound(self) -> bool:
        return self.bound is not None


def sup_energy(u: SpaceTimeMap, space: EvolvingManifold, target: TargetManifold, times, points) -> float:
    """max of |du| (Hilbert-Schmidt) over a grid of times and chart points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    best = 0.0
    for t in times:
        e = energy_density(u.du(float(t), pts), space.metric(float(t), pts), target.metric(u.u(float(t), pts)))
        best = max(best, float(np.sqrt(np.max(e))))
    return best


def decay_route(
    u: SpaceTimeMap,
    space: EvolvingManifold,
    target: TargetManifold,
    x,
    v,
    t: float,
    window: Sequence[float],
    points,
) -> RouteResult:
    """e^{-alpha t/2} sup|du| |v| when Ric - dg/dt >= alpha > 0 and the target is non-positively curved.

    The supremum is sampled uniformly over the time window and the chart
    points, so it does not depend on t and the bound decays exactly at rate alpha/2.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    samples = [(float(s), pts) for s in window]
    _, alpha = validate_super_ricci(space, samples)
    kappa = float(target.curvature) if target.dim > 1 else 0.0
    if alpha <= 0:
        return RouteResult("decay", False, reason=f"Ric - dg/dt has margin {alpha:.3g}, not uniformly positive")
    if kappa > 0:
        return RouteResult("decay", False, reason="target curvature is positive")
    sup = sup_energy(u, space, target, window, pts)
    vn = float(metric_norm(np.asarray(v, dtype=float), space.metric(0.0, np.asarray(x, dtype=float)[None, :])[0]))
    factor = float(np.exp(-0.5 * alpha * t))
    return RouteResult("decay", True, factor * sup * vn, 0.0, {"alpha": alpha, "decay_factor": factor, "sup_du": sup})


def stopped_ensemble(u, space, target, x, t, R, n_paths, h, seed, chunk_size=2048):
    cfg = StepConfig(h=h, seed=seed)
    return run_ensemble(
        space, target, u, x, cfg, StoppingRule(horizon=t, R=R), n_paths,
        record_times=[0.0], observers=[lambda: EnergyObserver(space, target, u)], chunk_size=chunk_size,
    )


def liouville_bound(
    u: SpaceTimeMap,
    space: EvolvingManifold,
    target: TargetManifold,
    x,
    v,
    t: float,
    R: Optional[float] = None,
    p: float = 2.0,
    q: float = 2.0,
    *,
    b: Optional[float] = None,
    window: Optional[Sequence[float]] = None,
    points=None,
    n_paths: int = 4000,
    h: float = 1e-3,
    seed: int = 0,
    small_image: Optional["SmallImageReport"] = None,
) -> LiouvilleBound:
    """Smallest available upper bound on |du(0, x) v| over the applicable pipelines.

    Routes: ``decay`` (uniformly strict backward super Ricci flow and a
    non-positively curved target), ``ch`` (first factor x distance bound,
    p = q = 2), ``bdc`` (first factor x 1/b), ``small-image`` (first factor x
    exponential-moment bound; needs ``small_image``).  Inapplicable routes
    are listed with their reason; when none applies the bound is None.
    """
    if p < 2 or q <= 1 or abs(1.0 / p + 1.0 / q - 1.0) > 1e-12:
        raise ConfigError("need p >= 2 and 1/p + 1/q = 1")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    vn = float(metric_norm(np.asarray(v, dtype=float), space.metric(0.0, np.asarray(x, dtype=float)[None, :])[0]))
    routes: list[RouteResult] = []
    kappa = float(target.curvature) if target.dim > 1 else 0.0

    if window is not None and points is not None:
        routes.append(decay_route(u, space, target, x, v, t, window, points))
    else:
        routes.append(RouteResult("decay", False, reason="no sampling window for sup |du| given"))

    if R is None:
        for name in ("ch", "bdc", "small-image"):
            routes.append(RouteResult(name, False, reason="needs a stopping radius R"))
    else:
        try:
            cpr = compute_cpR(space, x, R, p, horizon=t).value
        except CapabilityError as exc:
            cpr = None
            for name in ("ch", "bdc", "small-image"):
                routes.append(RouteResult(name, False, reason=str(exc)))
        if cpr is not None:
            first = first_factor_rhs(p, cpr, t, vn, 1.0) ** (1.0 / p)
            need_mc = (kappa <= 0 and p == 2) or small_image is not None
            res = stopped_ensemble(u, space, target, x, t, R, n_paths, h, seed) if need_mc else None
            y0 = u.u(0.0, x[None, :])[0]
            # first factor x distance bound
            if kappa > 0:
                routes.append(RouteResult("ch", False, reason="target curvature is positive"))
            elif p != 2:
                routes.append(RouteResult("ch", False, reason="distance bound is a second moment (p = q = 2)"))
            else:
                y = res.final["y"]
                d2 = target.distance(y, np.broadcast_to(y0, y.shape)) ** 2
                m, se = mean_se(d2)
                bound = first * float(np.sqrt(m))
                bse = first * float(se) / (2 * np.sqrt(m)) if m > 0 else 0.0
                routes.append(RouteResult("ch", True, bound, bse, {"first_factor": first, "c_p(R)": cpr, "E dist^2": float(m), "E dist^2 se": float(se)}))
            # first factor x 1/b
            if kappa >= 0:
                routes.append(RouteResult("bdc", False, reason="needs strictly negative target curvature"))
            elif b is None or b <= 0:
                routes.append(RouteResult("bdc", False, reason="no ratio bound b > 0 supplied"))
            elif p != 2:
                routes.append(RouteResult("bdc", False, reason="1/b bound is a second moment (p = q = 2)"))
            else:
                bound = first * float(np.sqrt(1.0 / b))
                routes.append(RouteResult("bdc", True, bound, 0.0, {"first_factor": first, "c_p(R)": cpr, "1/b": 1.0 / b}))
            # first factor x exponential moments
            if small_image is None:
                routes.append(RouteResult("small-image", False, reason="no small-image analysis supplied"))
            elif not (small_image.regular and small_image.hessian_passed):
                routes.append(RouteResult("small-image", False, reason="ball not regular or Hessian test failed"))
            else:
                k = small_image.kappa
                e = res.final["energy_int"]
                vals = (np.expm1(k * e) / k) ** (0.5 * q)
                m, se = mean_se(vals)
                second = float(m) ** (1.0 / q)
                routes.append(
                    RouteResult(
                        "small-image", True, first * second, None,
                        {"first_factor": first, "second_factor": second, "c_p(R)": cpr, "C_q": "1 (exact for q = 2 only)"},
                    )
                )

    usable = [r for r in routes if r.applicable and r.bound is not None]
    if not usable:
        return LiouvilleBound(None, None, routes)
    best = min(usable, key=lambda r: r.bound)
    return LiouvilleBound(best.bound, best.name, routes)


def subsqrt_chain(
    space: EvolvingManifold,
    x,
    radii: Sequence[float],
    phi: Callable[[np.ndarray], np.ndarray] = lambda r: np.asarray(r, dtype=float) ** 0.4,
    p: float = 2.0,
    horizon: float = 1.0,
) -> dict:
    """c_p(R) phi(R)^2 over the radii; it must decrease to 0 for the growth argument to close."""
    radii = np.asarray(radii, dtype=float)
    c = np.array([compute_cpR(space, x, float(R), p, horizon=horizon).value for R in radii])
    chain = c * np.asarray(phi(radii)) ** 2
    return {
        "R": radii,
        "c_p(R)": c,
        "R c_p(R)": radii * c,
        "chain": chain,
        "decreasing": bool(np.all(np.diff(chain) < 0)),
    }


# ---------------------------------------------------------------------------
# small image
# ---------------------------------------------------------------------------

@dataclass
class SmallImageReport:
    regular: bool
    kappa: float
    radius: float
    q: float
    hessian_margin: float  # max eigenvalue of nabla df + kappa q f h over the grid (<= 0 expected)
    hessian_passed: bool
    moments: Optional[np.ndarray] = None
    moments_se: Optional[np.ndarray] = None
    moments_finite: Optional[bool] = None
    notes: list = field(default_factory=list)


def target_hessian_fd(target: TargetManifold, f, y: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Covariant Hessian d_ij f - G~^k_ij d_k f on the target chart, fourth-order central differences."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = y.shape[-1]
    eye = np.eye(n) * eps
    weights = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))  # first-derivative stencil / (12 eps)

    def d1(g, i):
        return lambda z: sum(w * g(z + k * eye[i]) for k, w in weights) / (12 * eps)

    grad = np.stack([d1(f, i)(y) for i in range(n)], axis=-1)
    hess = np.empty(y.shape[:-1] + (n, n))
    f0 = f(y)
    for i in range(n):
        hess[..., i, i] = (
            -f(y + 2 * eye[i]) + 16 * f(y + eye[i]) - 30 * f0 + 16 * f(y - eye[i]) - f(y - 2 * eye[i])
        ) / (12 * eps**2)
        for j in range(i + 1, n):
            hess[..., i, j] = hess[..., j, i] = d1(d1(f, i), j)(y)
    return hess - np.einsum("...kij,...k->...ij", target.christoffel(y), grad)


def ball_points(target: TargetManifold, center, r: float, n_radial: int = 12, n_angle: int = 16) -> np.ndarray:
    """Chart points of the closed geodesic ball B(center, r), sampled on a polar chart grid and filtered by distance."""
    center = np.asarray(center, dtype=float)
    n = target.dim
    # search box in the chart large enough for constant-curvature conformal charts
    probe = np.linspace(0.0, 1.0, 2001)[1:]
    e = np.zeros(n)
    e[0] = 1.0
    dist = target.distance(center + probe[:, None] * e * max(1.0, 4 * r), np.broadcast_to(center, (probe.size, n)))
    reach = probe[np.searchsorted(dist, r)] * max(1.0, 4 * r) if dist[-1] >= r else 4 * r
    radii = np.linspace(0.0, reach, n_radial + 1)[1:]
    if n == 1:
        pts = np.concatenate([center + radii[:, None], center - radii[:, None], center[None]])
    else:
        ang = np.linspace(0.0, 2 * np.pi, n_angle, endpoint=False)
        dirs = np.zeros((n_angle, n))
        dirs[:, 0], dirs[:, 1] = np.cos(ang), np.sin(ang)
        pts = (center + radii[:, None, None] * dirs[None]).reshape(-1, n)
        pts = np.concatenate([pts, center[None]])
    d = target.distance(pts, np.broadcast_to(center, pts.shape))
    return pts[d <= r * (1 + 1e-9)]


def hessian_test(
    target: TargetManifold,
    center,
    r: float,
    q: float,
    kappa: Optional[float] = None,
    lam: Optional[float] = None,
    eps: float = 1e-3,
    tol: float = 1e-6,
) -> tuple[float, bool]:
    """Max eigenvalue (relative to h) of nabla df + 2 lam f h for f = cos(sqrt(kappa q) d(center, .)) on the ball.

    ``lam`` defaults to kappa q / 2, the order of exponential moments the
    function certifies.  Returns (margin, margin <= tol).
    """
    center = np.asarray(center, dtype=float)
    k = float(target.curvature) if kappa is None else float(kappa)
    if k <= 0:
        raise DomainError("the cosine test function needs a positive curvature bound; pass kappa")
    lam = 0.5 * k * q if lam is None else float(lam)
    c = np.sqrt(k * q)

    def f(y):
        return np.cos(c * target.distance(y, np.broadcast_to(center, y.shape)))

    pts = ball_points(target, center, r)
    hess = target_hessian_fd(target, f, pts, eps)
    hmet = target.metric(pts)
    form = hess + 2 * lam * f(pts)[..., None, None] * hmet
    margin = float(np.max(relative_eigvalsh(0.5 * (form + np.swapaxes(form, -1, -2)), hmet)[..., -1]))
    return margin, margin <= tol


def regular_ball(target: TargetManifold, center, r: float, kappa: Optional[float] = None) -> bool:
    """r < pi / (2 sqrt(kappa)) and the ball stays inside the chart and away from the cut locus."""
    k = float(target.curvature) if kappa is None else float(kappa)
    if target.dim > 1 and k > 0:
        cut = np.pi / np.sqrt(k)
        if not r < min(0.5 * np.pi / np.sqrt(k), cut):
            return False
    pts = ball_points(target, center, r)
    return bool(np.all(target.contains(pts)))


def exponential_moments(
    u: SpaceTimeMap,
    space: EvolvingManifold,
    target: TargetManifold,
    x,
    lam: float,
    horizon: float,
    seeds: Sequence[int],
    n_paths: int = 2000,
    h: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray]:
    """E[exp(lam int_0^T |du|^2)] for each seed replicate."""
    means, ses = [], []
    for s in seeds:
        res = run_ensemble(
            space, target, u, x, StepConfig(h=h, seed=int(s)), StoppingRule(horizon=horizon), n_paths,
            record_times=[0.0], observers=[lambda: EnergyObserver(space, target, u)],
        )
        m, se = mean_se(np.exp(lam * res.final["energy_int"]))
        means.append(float(m))
        ses.append(float(se))
    return np.array(means), np.array(ses)


def small_image_tools(
    target: TargetManifold,
    center,
    r: float,
    q: float = 1.5,
    *,
    kappa: Optional[float] = None,
    lam: Optional[float] = None,
    moments: Optional[dict] = None,
    tol: float = 1e-6,
) -> SmallImageReport:
    """Regular-ball flag, the Hessian test on the ball and (optionally) exponential moments of an image martingale.

    ``moments`` holds keyword arguments for :func:`exponential_moments`
    (u, space, x, horizon, seeds, n_paths, h); lam defaults to kappa q / 2.
    """
    k = float(target.curvature) if kappa is None else float(kappa)
    notes = []
    if k <= 0:
        notes.append("non-positive curvature: the ball is trivially regular; test run with the requested kappa")
        if kappa is None or kappa <= 0:
            raise DomainError("pass a positive kappa to run the Hessian test on a non-positively curved target")
    regular = regular_ball(target, center, r, k)
    c1 = np.cos(np.sqrt(k * q) * r)
    if c1 <= 0:
        notes.append(f"f = cos(sqrt(kappa q) d) is not bounded below on the ball (cos(...) = {c1:.3g})")
    margin, ok = hessian_test(target, center, r, q, k, lam, tol=tol)
    rep = SmallImageReport(regular, k, r, q, margin, ok and c1 > 0, notes=notes)
    if moments is not None:
        lam_m = 0.5 * k * q if lam is None else lam
        kw = dict(moments)
        u, space, x = kw.pop("u"), kw.pop("space"), kw.pop("x")
        m, se = exponential_moments(u, space, target, x, lam_m, **kw)
        rep.moments, rep.moments_se = m, se
        rep.moments_finite = bool(np.all(np.isfinite(m)) and np.all(np.isfinite(se)))
    return rep

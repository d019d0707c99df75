"""Space-time harmonic maps: catalog, tension field, residuals, grid heat flow.

A map ``u: [0, T] x M -> N`` is space-time harmonic when
``du/dt + 1/2 tension(u) = 0``.  Reversing time turns a solution of the
harmonic map heat flow ``du/dt = 1/2 tension(u)`` into such a map.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import CapabilityError, DomainError, NumericalError
from .geometry import EvolvingManifold, TargetManifold
from .linalg import cholesky, inv_small, metric_norm

Evaluator = Callable[[float, np.ndarray], np.ndarray]


class CFLWarning(UserWarning):
    """Explicit heat-flow time step beyond the stability heuristic dt <= dx^2/2."""


@dataclass(frozen=True)
class SpaceTimeMap:
    """Evaluators for u(t, x), du(t, x) (shape n x m) and du/dt(t, x).

    ``hess`` (shape n x m x m) is optional; when absent second derivatives
    come from central differences of ``du``.
    """

    name: str
    source_dim: int
    target_dim: int
    u: Evaluator
    du: Evaluator
    dudt: Evaluator
    hess: Optional[Evaluator] = None
    kind: str = "analytic"
    harmonic: bool = False
    space_id: Optional[str] = None
    target_id: Optional[str] = None
    params: dict = field(default_factory=dict)

    def hessian(self, t: float, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hess is not None:
            return self.hess(t, x)
        m = self.source_dim
        out = np.empty(x.shape[:-1] + (self.target_dim, m, m))
        step = eps * np.maximum(1.0, np.linalg.norm(x, axis=-1))[..., None]
        for k in range(m):
            e = step * np.eye(m)[k]
            out[..., :, :, k] = (self.du(t, x + e) - self.du(t, x - e)) / (2 * step[..., None])
        return 0.5 * (out + np.swapaxes(out, -1, -2))


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def _as_points(x):
    return np.asarray(x, dtype=float)


def constant_map(value: Sequence[float], source_dim: int = 1) -> SpaceTimeMap:
    c = np.asarray(value, dtype=float)
    n = c.shape[0]
    return SpaceTimeMap(
        "constant",
        source_dim,
        n,
        u=lambda t, x: np.broadcast_to(c, _as_points(x).shape[:-1] + (n,)).copy(),
        du=lambda t, x: np.zeros(_as_points(x).shape[:-1] + (n, source_dim)),
        dudt=lambda t, x: np.zeros(_as_points(x).shape[:-1] + (n,)),
        hess=lambda t, x: np.zeros(_as_points(x).shape[:-1] + (n, source_dim, source_dim)),
        harmonic=True,
        target_id=None,
        params={"value": c.tolist()},
    )


def linear_map(matrix, offset=None) -> SpaceTimeMap:
    """u(t, x) = A x + c between flat spaces."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    n, m = a.shape
    c = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    return SpaceTimeMap(
        "linear",
        m,
        n,
        u=lambda t, x: _as_points(x) @ a.T + c,
        du=lambda t, x: np.broadcast_to(a, _as_points(x).shape[:-1] + (n, m)).copy(),
        dudt=lambda t, x: np.zeros(_as_points(x).shape[:-1] + (n,)),
        hess=lambda t, x: np.zeros(_as_points(x).shape[:-1] + (n, m, m)),
        harmonic=True,
        space_id="flat",
        target_id="flat",
        params={"matrix": a.tolist(), "offset": c.tolist()},
    )


def x2_minus_t() -> SpaceTimeMap:
    """u(t, x) = x^2 - t on flat R."""
    return SpaceTimeMap(
        "x2-minus-t",
        1,
        1,
        u=lambda t, x: _as_points(x) ** 2 - t,
        du=lambda t, x: 2.0 * _as_points(x)[..., None],
        dudt=lambda t, x: -np.ones(_as_points(x).shape),
        hess=lambda t, x: 2.0 * np.ones(_as_points(x).shape + (1, 1)),
        harmonic=True,
        space_id="flat",
        target_id="flat",
    )


def circle_sin(amplitude: float = 1.0) -> SpaceTimeMap:
    """u(t, x) = a exp(t/2) sin x on the flat circle (the universal cover R in the chart)."""
    a = float(amplitude)

    def u(t, x):
        return a * np.exp(0.5 * t) * np.sin(_as_points(x))

    return SpaceTimeMap(
        "circle-sin",
        1,
        1,
        u=u,
        du=lambda t, x: (a * np.exp(0.5 * t) * np.cos(_as_points(x)))[..., None],
        dudt=lambda t, x: 0.5 * u(t, x),
        hess=lambda t, x: (-u(t, x))[..., None, None],
        harmonic=True,
        space_id="flat",
        target_id="flat",
        params={"amplitude": a},
    )


def _ray_map(name, profile, theta, direction, target_id, params) -> SpaceTimeMap:
    """Maps R -> N of the form y = F(theta(t, x)) d along a chart ray through the origin.

    ``profile(s)`` returns (F, F', F''); ``theta(t, x)`` returns
    (theta, theta_x, theta_xx, theta_t) for x of shape (..., 1).
    """
    d = np.array([np.cos(direction), np.sin(direction)])

    def u(t, x):
        th = theta(t, _as_points(x)[..., 0])[0]
        return profile(th)[0][..., None] * d

    def du(t, x):
        th, th_x, _, _ = theta(t, _as_points(x)[..., 0])
        return (profile(th)[1] * th_x)[..., None, None] * d[:, None]

    def dudt(t, x):
        th, _, _, th_t = theta(t, _as_points(x)[..., 0])
        return (profile(th)[1] * th_t)[..., None] * d

    def hess(t, x):
        th, th_x, th_xx, _ = theta(t, _as_points(x)[..., 0])
        f, f1, f2 = profile(th)
        return (f2 * th_x**2 + f1 * th_xx)[..., None, None, None] * d[:, None, None]

    return SpaceTimeMap(
        name, 1, 2, u, du, dudt, hess, harmonic=True, space_id="flat", target_id=target_id, params=params
    )


def _poincare_profile(s):
    th = np.tanh(0.5 * s)
    sech2 = 1.0 - th**2
    return th, 0.5 * sech2, -0.5 * sech2 * th


def _stereo_profile(s):
    ta = np.tan(0.5 * s)
    sec2 = 1.0 + ta**2
    return ta, 0.5 * sec2, 0.5 * sec2 * ta


def _linear_theta(speed):
    def theta(t, x):
        z = np.zeros_like(x)
        return speed * x, speed * np.ones_like(x), z, z

    return theta


def geodesic_h2(speed: float = 1.0, direction: float = 0.0) -> SpaceTimeMap:
    """Constant-speed geodesic R -> H^2 through the origin of the Poincare disk."""
    return _ray_map(
        "geodesic-h2", _poincare_profile, _linear_theta(speed), direction, "hyperbolic",
        {"speed": speed, "direction": direction},
    )


def geodesic_s2(speed: float = 1.0, direction: float = 0.0) -> SpaceTimeMap:
    """Constant-speed great circle R -> S^2 in the stereographic chart."""
    return _ray_map(
        "geodesic-s2", _stereo_profile, _linear_theta(speed), direction, "sphere",
        {"speed": speed, "direction": direction},
    )


def small_s2(eps: float = 0.3, direction: float = 0.0) -> SpaceTimeMap:
    """Map R -> S^2 along a great circle at angle eps exp(t/2) sin x from the south pole.

    The angle solves the backward heat equation, so the map is space-time
    harmonic; its image stays in the geodesic ball of radius eps exp(T/2) up to time T.
    """

    def theta(t, x):
        th = eps * np.exp(0.5 * t) * np.sin(x)
        return th, eps * np.exp(0.5 * t) * np.cos(x), -th, 0.5 * th

    return _ray_map("small-s2", _stereo_profile, theta, direction, "sphere", {"eps": eps, "direction": direction})


def sphere_height(dim: int = 2) -> SpaceTimeMap:
    """u = exp(m t/2) Y where Y = 2 x_1/(1+|x|^2) is a first spherical harmonic of the static unit S^m."""
    m = dim
    rate = 0.5 * m

    def y_parts(x):
        x = _as_points(x)
        q = 1.0 + np.sum(x**2, axis=-1)
        return x, q

    def u(t, x):
        x, q = y_parts(x)
        return (np.exp(rate * t) * 2.0 * x[..., 0] / q)[..., None]

    def du(t, x):
        x, q = y_parts(x)
        grad = -4.0 * x[..., 0:1] * x / (q**2)[..., None]
        grad[..., 0] += 2.0 / q
        return (np.exp(rate * t) * grad)[..., None, :]

    def hess(t, x):
        x, q = y_parts(x)
        e1 = np.eye(m)[0]
        x1 = x[..., 0][..., None, None]
        outer = lambda a, b: a[..., :, None] * b[..., None, :]  # noqa: E731
        e1b = np.broadcast_to(e1, x.shape)
        hh = (
            -4.0 * (outer(x, e1b) + outer(e1b, x)) / (q**2)[..., None, None]
            - 4.0 * x1 * np.eye(m) / (q**2)[..., None, None]
            + 16.0 * x1 * outer(x, x) / (q**3)[..., None, None]
        )
        return (np.exp(rate * t)[..., None, None] * hh)[..., None, :, :]

    return SpaceTimeMap(
        "sphere-height", m, 1, u, du, lambda t, x: rate * u(t, x), hess,
        harmonic=True, space_id="sphere", target_id="flat", params={"dim": m},
    )


def cigar_linear(const: float = 0.0, eps: float = 0.1, direction=(1.0, 0.0)) -> SpaceTimeMap:
    """u = c + eps <a, x> on the cigar; Euclidean-harmonic functions stay harmonic for conformal 2-D metrics."""
    a = np.asarray(direction, dtype=float)
    m = linear_map(eps * a[None, :], [const])
    return SpaceTimeMap(
        "cigar-linear", 2, 1, m.u, m.du, m.dudt, m.hess,
        harmonic=True, space_id="cigar", target_id="flat", params={"const": const, "eps": eps, "a": a.tolist()},
    )


CATALOG: dict[str, Callable[..., SpaceTimeMap]] = {
    "constant": constant_map,
    "linear": linear_map,
    "x2-minus-t": x2_minus_t,
    "circle-sin": circle_sin,
    "geodesic-h2": geodesic_h2,
    "geodesic-s2": geodesic_s2,
    "small-s2": small_s2,
    "sphere-height": sphere_height,
    "cigar-linear": cigar_linear,
}


def catalog_map(map_id: str, **params) -> SpaceTimeMap:
    if map_id not in CATALOG:
        raise DomainError(f"unknown map {map_id!r}; choose from {sorted(CATALOG)}")
    return CATALOG[map_id](**params)


# ---------------------------------------------------------------------------
# tension and residual
# ---------------------------------------------------------------------------

def tension(u: SpaceTimeMap, space: EvolvingManifold, target: TargetManifold, t: float, x) -> np.ndarray:
    """g^{jk} (d_j d_k u^a + G~^a_bc d_j u^b d_k u^c - Gamma^i_jk d_i u^a)."""
    x = np.asarray(x, dtype=float)
    s = space.sample(t, x)
    du = u.du(t, x)
    hess = u.hessian(t, x)
    tgam = target.christoffel(u.u(t, x))
    cov = (
        hess
        + np.einsum("...abc,...bj,...ck->...ajk", tgam, du, du)
        - np.einsum("...ijk,...ai->...ajk", s.christoffel, du)
    )
    return np.einsum("...jk,...ajk->...a", s.ginv, cov)


def harmonic_residual(
    u: SpaceTimeMap, space: EvolvingManifold, target: TargetManifold, samples: Iterable[tuple[float, np.ndarray]]
) -> float:
    """Max over samples of |du/dt + 1/2 tension|, measured with h at u(t, x)."""
    worst = 0.0
    for t, x in samples:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        res = u.dudt(t, x) + 0.5 * tension(u, space, target, t, x)
        norm = metric_norm(res, target.metric(u.u(t, x)))
        worst = max(worst, float(np.max(norm)))
    return worst


# ---------------------------------------------------------------------------
# grid heat flow on a periodic flat box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeriodicGrid:
    lengths: tuple
    counts: tuple

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float) / np.asarray(self.counts)

    def nodes(self) -> np.ndarray:
        """Node coordinates with shape (*counts, ndim)."""
        axes = [np.arange(n) * d for n, d in zip(self.counts, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _grid_derivative(f: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * dx)


def _grid_second(f: np.ndarray, ax1: int, ax2: int, dx1: float, dx2: float) -> np.ndarray:
    if ax1 == ax2:
        return (np.roll(f, -1, axis=ax1) - 2 * f + np.roll(f, 1, axis=ax1)) / dx1**2
    return _grid_derivative(_grid_derivative(f, ax1, dx1), ax2, dx2)


def grid_tension(values: np.ndarray, grid: PeriodicGrid, target: TargetManifold) -> np.ndarray:
    """Tension of a grid map on the flat periodic box; values have shape (*counts, n)."""
    d = grid.ndim
    dx = grid.spacing
    lap = sum(_grid_second(values, k, k, dx[k], dx[k]) for k in range(d))
    if target.curvature == 0.0 and target.name == "flat":
        return lap
    grads = np.stack([_grid_derivative(values, k, dx[k]) for k in range(d)], axis=-1)  # (..., n, d)
    tgam = target.christoffel(values)
    return lap + np.einsum("...abc,...bj,...cj->...a", tgam, grads, grads)


@dataclass
class GridFlow:
    """Stored solution of the forward flow on a periodic grid; ``values`` has shape (S, *counts, n)."""

    grid: PeriodicGrid
    times: np.ndarray
    values: np.ndarray
    target: TargetManifold

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_map(self, name: str = "grid-flow") -> SpaceTimeMap:
        return _grid_map(self, name)

    def to_csv(self, path) -> None:
        write_flow_csv(self, path)


def heat_flow_integrate(
    u0: np.ndarray,
    space: EvolvingManifold,
    target: TargetManifold,
    horizon: float,
    dt: float,
    grid: PeriodicGrid,
    save_every: Optional[int] = None,
) -> GridFlow:
    """Explicit Euler for du/dt = 1/2 tension(u) on a flat periodic grid."""
    if space.name != "flat" or not space.static:
        raise CapabilityError("the grid integrator supports flat static source charts only")
    if space.dim != grid.ndim:
        raise DomainError("grid dimension does not match the source dimension")
    values = np.array(u0, dtype=float)
    if values.shape[:-1] != tuple(grid.counts):
        raise DomainError(f"initial data shape {values.shape} does not match grid {grid.counts}")
    if dt > np.min(grid.spacing) ** 2 / 2:
        warnings.warn(f"dt={dt} exceeds dx^2/2={np.min(grid.spacing) ** 2 / 2}", CFLWarning, stacklevel=2)
    n_steps = int(round(horizon / dt))
    if save_every is None:
        save_every = max(1, int(round(1e-3 / dt)))
    times = [0.0]
    frames = [values.copy()]
    for k in range(1, n_steps + 1):
        values = values + 0.5 * dt * grid_tension(values, grid, target)
        if k % save_every == 0 or k == n_steps:
            if not np.all(target.contains(values)):
                raise NumericalError(f"grid flow left the target chart at t={k * dt}")
            times.append(k * dt)
            frames.append(values.copy())
    return GridFlow(grid, np.asarray(times), np.stack(frames), target)


def _grid_map(flow: GridFlow, name: str) -> SpaceTimeMap:
    grid = flow.grid
    d = grid.ndim
    dx = grid.spacing
    n = flow.values.shape[-1]
    times = flow.times

    @lru_cache(maxsize=16)
    def fields(i: int):
        v = flow.values[i]
        du = np.stack([_grid_derivative(v, k, dx[k]) for k in range(d)], axis=-1)
        hess = np.empty(v.shape + (d, d))
        for j in range(d):
            for k in range(d):
                hess[..., j, k] = _grid_second(v, j, k, dx[j], dx[k])
        j = min(i, len(times) - 2)
        dudt = (flow.values[j + 1] - flow.values[j]) / (times[j + 1] - times[j])
        return {"u": v, "du": du, "hess": hess, "dudt": dudt}

    def locate(t):
        if t < -1e-12 or t > times[-1] + 1e-12:
            raise DomainError(f"t={t} outside [0, {times[-1]}]")
        i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        w = (t - times[i]) / (times[i + 1] - times[i])
        return i, float(np.clip(w, 0.0, 1.0))

    def interp(field_name, t, x):
        x = np.asarray(x, dtype=float)
        i, w = locate(t)
        coords = np.moveaxis(x / dx, -1, 0).reshape(d, -1)
        out = None
        for idx, weight in ((i, 1.0 - w), (i + 1, w)):
            if weight == 0.0 and out is not None:
                continue
            f = fields(idx)[field_name]
            comp_shape = f.shape[d:]
            flat = f.reshape(f.shape[:d] + (-1,))
            vals = np.stack(
                [ndimage.map_coordinates(flat[..., c], coords, order=3, mode="grid-wrap") for c in range(flat.shape[-1])],
                axis=-1,
            )
            vals = vals.reshape(x.shape[:-1] + comp_shape)
            out = weight * vals if out is None else out + weight * vals
        return out

    def dudt(t, x):
        x = np.asarray(x, dtype=float)
        i, _ = locate(t)
        coords = np.moveaxis(x / dx, -1, 0).reshape(d, -1)
        f = fields(i)["dudt"]
        vals = np.stack(
            [ndimage.map_coordinates(f[..., c], coords, order=3, mode="grid-wrap") for c in range(n)], axis=-1
        )
        return vals.reshape(x.shape[:-1] + (n,))

    return SpaceTimeMap(
        name,
        d,
        n,
        u=lambda t, x: interp("u", t, x),
        du=lambda t, x: interp("du", t, x),
        dudt=dudt,
        hess=lambda t, x: interp("hess", t, x),
        kind="grid",
        space_id="flat",
        target_id=flow.target.name,
        params={"horizon": flow.horizon},
    )


def write_flow_csv(flow: GridFlow, path) -> None:
    """Columns: t, node, u_0..u_{n-1}; node is the row-major flat node index."""
    n = flow.values.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node"] + [f"u_{a}" for a in range(n)])
        for t, frame in zip(flow.times, flow.values):
            flat = frame.reshape(-1, n)
            for node, row in enumerate(flat):
                w.writerow([repr(float(t)), node] + [repr(float(v)) for v in row])


def time_reverse(u: SpaceTimeMap, horizon: float) -> SpaceTimeMap:
    """u_hat(t, x) = u(T - t, x), defined for t in [0, T]."""
    T = float(horizon)

    def back(t):
        if t < -1e-12 or t > T + 1e-12:
            raise DomainError(f"t={t} outside [0, {T}]")
        return min(max(T - t, 0.0), T)

    name = u.name[len("reversed:"):] if u.name.startswith("reversed:") else "reversed:" + u.name
    return SpaceTimeMap(
        name,
        u.source_dim,
        u.target_dim,
        u=lambda t, x: u.u(back(t), x),
        du=lambda t, x: u.du(back(t), x),
        dudt=lambda t, x: -u.dudt(back(t), x),
        hess=(lambda t, x: u.hessian(back(t), x)),
        kind=u.kind,
        harmonic=False,
        space_id=u.space_id,
        target_id=u.target_id,
        params={**u.params, "reversed_at": T},
    )


# ---------------------------------------------------------------------------
# dilatation and growth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DilatationProfile:
    lambdas: np.ndarray
    K: np.ndarray


def pullback_eigenvalues(du: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Eigenvalues of du* du = g^{-1} du^T h du, descending along the last axis."""
    lower_inv = inv_small(cholesky(g))
    form = np.swapaxes(du, -1, -2) @ h @ du
    sym = lower_inv @ form @ np.swapaxes(lower_inv, -1, -2)
    eig = np.linalg.eigvalsh(0.5 * (sym + np.swapaxes(sym, -1, -2)))
    return eig[..., ::-1]


def energy_density(du: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """|du|^2 = sum_i |du xi_i|^2_h over a g-orthonormal frame."""
    return np.einsum("...ij,...ai,...ab,...bj->...", inv_small(g), du, h, du)


def dilatation_ratio(lambdas: np.ndarray) -> np.ndarray:
    """K = lambda_1 / sum_{i>=2} lambda_i, set to 0 whenever the denominator vanishes."""
    top = lambdas[..., 0]
    rest = np.sum(lambdas[..., 1:], axis=-1)
    safe = np.where(rest > 0, rest, 1.0)
    return np.where(rest > 0, top / safe, 0.0)


def dilatation(u: SpaceTimeMap, space: EvolvingManifold, target: TargetManifold, t: float, x) -> DilatationProfile:
    x = np.asarray(x, dtype=float)
    lam = pullback_eigenvalues(u.du(t, x), space.metric(t, x), target.metric(u.u(t, x)))
    lam = np.maximum(lam, 0.0)
    return DilatationProfile(lam, dilatation_ratio(lam))


@dataclass(frozen=True)
class GrowthReport:
    flag: bool
    inequality_holds: bool
    max_excess: float
    ratio_decreasing: bool
    final_ratio: float


def growth_check(
    u: SpaceTimeMap,
    space: EvolvingManifold,
    target: TargetManifold,
    x,
    phi: Callable[[np.ndarray], np.ndarray],
    samples: Iterable[tuple[float, np.ndarray]],
    threshold: float = 0.5,
    tol: float = 1e-12,
) -> GrowthReport:
    """Check dist_N(u(t,z), u(0,x)) <= phi(d_{g(t)}(z, x)) and that phi(r)/sqrt(r) decays over the sampled radii."""
    x = np.asarray(x, dtype=float)
    y0 = u.u(0.0, x[None, :])[0]
    excess = -np.inf
    radii = []
    for t, z in samples:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r = space.distance(t, x, z)
        lhs = target.distance(u.u(t, z), y0)
        excess = max(excess, float(np.max(lhs - phi(r))))
        radii.append(r)
    r = np.unique(np.concatenate(radii))
    r = r[r > 0]
    if r.size == 0:
        return GrowthReport(excess <= tol, excess <= tol, excess, True, 0.0)
    ratio = phi(r) / np.sqrt(r)
    decreasing = bool(np.all(np.diff(ratio) <= 1e-12))
    head = ratio[0] if ratio[0] > 0 else 1.0
    final = float(ratio[-1] / head) if ratio[0] > 0 else 0.0
    holds = excess <= tol
    return GrowthReport(holds and decreasing and final <= threshold, holds, excess, decreasing, final)

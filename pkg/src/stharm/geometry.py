"""Charts, evolving metrics, curvature, and the model-space catalog.

Every evaluator takes a scalar time ``t`` and a batch of chart points
``x`` with shape ``(..., m)``.  Christoffel symbols are stored as
``gamma[..., i, j, k] = Gamma^i_{jk}``.

All model spaces in the catalog are conformally flat, ``g = exp(2 phi) I``,
so their Christoffel symbols and Ricci tensors have closed forms.  A plain
:class:`EvolvingManifold` built from a metric function alone falls back to
central finite differences with step ``eps_fd``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import integrate

from .errors import CapabilityError, DomainError, GeometryError, SingularPointError
from .linalg import inv_small, relative_eigvalsh

MetricFn = Callable[[float, np.ndarray], np.ndarray]

EPS_FD = 1e-4


@dataclass(frozen=True)
class MetricSample:
    """Metric data at a batch of space-time points."""

    g: np.ndarray
    dg_dt: np.ndarray
    christoffel: np.ndarray
    ricci: np.ndarray

    @property
    def dim(self) -> int:
        return self.g.shape[-1]

    @property
    def ginv(self) -> np.ndarray:
        return inv_small(self.g)


def sharp(sample: MetricSample, bilinear: np.ndarray) -> np.ndarray:
    """Raise the first index of a bilinear form: returns ``g^{-1} B``."""
    det = np.linalg.det(sample.g)
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) < 1e-300):
        raise GeometryError("singular metric in sharp()")
    return inv_small(sample.g) @ bilinear


def _step_sizes(x: np.ndarray, eps: float) -> np.ndarray:
    return eps * np.maximum(1.0, np.linalg.norm(x, axis=-1))


def _shifted(x: np.ndarray, steps: np.ndarray, sign: float) -> np.ndarray:
    m = x.shape[-1]
    return x[..., None, :] + sign * steps[..., None, None] * np.eye(m)


def christoffel_from_metric(
    metric_fn: MetricFn, t: float, x: np.ndarray, eps: float = EPS_FD
) -> np.ndarray:
    """Christoffel symbols from central differences of the metric."""
    steps = _step_sizes(x, eps)
    # dg[..., k, i, j] = d_k g_ij
    dg = (metric_fn(t, _shifted(x, steps, 1.0)) - metric_fn(t, _shifted(x, steps, -1.0))) / (
        2.0 * steps[..., None, None, None]
    )
    ginv = inv_small(metric_fn(t, x))
    # lowered[l, j, k] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
    lowered = 0.5 * (
        np.einsum("...jlk->...ljk", dg) + np.einsum("...klj->...ljk", dg) - dg
    )
    return np.einsum("...il,...ljk->...ijk", ginv, lowered)


def ricci_from_christoffel(
    gamma_fn: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    x: np.ndarray,
    eps: float = EPS_FD,
) -> np.ndarray:
    """R_jk = d_i G^i_jk - d_k G^i_ji + G^i_ip G^p_jk - G^i_kp G^p_ji."""
    steps = _step_sizes(x, eps)
    gam = gamma_fn(t, x)
    # dgam[..., l, i, j, k] = d_l Gamma^i_jk
    dgam = (gamma_fn(t, _shifted(x, steps, 1.0)) - gamma_fn(t, _shifted(x, steps, -1.0))) / (
        2.0 * steps[..., None, None, None, None]
    )
    term1 = np.einsum("...iijk->...jk", dgam)
    term2 = np.einsum("...kiji->...jk", dgam)
    term3 = np.einsum("...iip,...pjk->...jk", gam, gam)
    term4 = np.einsum("...ikp,...pji->...jk", gam, gam)
    ric = term1 - term2 + term3 - term4
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


class EvolvingManifold:
    """A coordinate chart with a time-dependent metric ``g(t)``.

    Only ``metric_fn`` is required; the time derivative, Christoffel symbols
    and Ricci tensor are computed by central differences unless a subclass
    supplies closed forms (see :attr:`analytic`).
    """

    def __init__(
        self,
        name: str,
        dim: int,
        metric_fn: MetricFn,
        *,
        chart_radius: float = np.inf,
        distance_fn: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None,
        static: bool = False,
        eps_fd: float = EPS_FD,
    ):
        self.name = name
        self.dim = int(dim)
        self._metric_fn = metric_fn
        self.chart_radius = float(chart_radius)
        self._distance_fn = distance_fn
        self.static = static
        self.eps_fd = eps_fd
        self.analytic = {
            "dg_dt": static,
            "christoffel": False,
            "ricci": False,
            "distance": distance_fn is not None,
        }

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, dim={self.dim})"

    # -- domain ---------------------------------------------------------
    def in_chart(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(x, dtype=float), axis=-1) < self.chart_radius

    def check_domain(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"expected chart points of dimension {self.dim}, got {x.shape}")
        if t < 0:
            raise DomainError(f"time must be non-negative, got {t}")
        if not np.all(self.in_chart(x)):
            raise DomainError(f"point outside chart of radius {self.chart_radius}")
        return x

    # -- metric quantities ------------------------------------------------
    def metric(self, t: float, x: np.ndarray) -> np.ndarray:
        return self._metric_fn(t, np.asarray(x, dtype=float))

    def dg_dt(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.static:
            return np.zeros(np.shape(x)[:-1] + (self.dim, self.dim))
        eps = self.eps_fd
        if t >= eps:
            return (self.metric(t + eps, x) - self.metric(t - eps, x)) / (2 * eps)
        return (-3 * self.metric(t, x) + 4 * self.metric(t + eps, x) - self.metric(t + 2 * eps, x)) / (
            2 * eps
        )

    def christoffel(self, t: float, x: np.ndarray) -> np.ndarray:
        return christoffel_from_metric(self.metric, t, np.asarray(x, dtype=float), self.eps_fd)

    def ricci(self, t: float, x: np.ndarray) -> np.ndarray:
        return ricci_from_christoffel(self.christoffel, t, np.asarray(x, dtype=float), self.eps_fd)

    def sample(self, t: float, x: np.ndarray) -> MetricSample:
        """Unchecked evaluation, used in inner loops."""
        return MetricSample(self.metric(t, x), self.dg_dt(t, x), self.christoffel(t, x), self.ricci(t, x))

    def metric_at(self, t: float, x: np.ndarray) -> MetricSample:
        """Metric, its time derivative, Christoffels and Ricci at (t, x), with validation."""
        x = self.check_domain(t, x)
        s = self.sample(t, x)
        if not np.all(np.isfinite(s.g)) or np.any(np.linalg.eigvalsh(s.g)[..., 0] <= 0):
            raise GeometryError(f"metric of {self.name} not positive definite at t={t}")
        return s

    # -- distances ------------------------------------------------------
    @property
    def has_distance(self) -> bool:
        return self._distance_fn is not None

    def distance(self, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Analytic distance d_{g(t)}(x, y)."""
        if self._distance_fn is None:
            raise CapabilityError(f"{self.name} has no analytic distance")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self._distance_fn(t, x, y)

    def radius_at_distance(self, t: float, rho: np.ndarray) -> np.ndarray:
        """Euclidean chart radius of the points at distance rho from the origin."""
        raise CapabilityError(f"{self.name} is not rotationally symmetric about the origin")

    def radial_drift(self, t: float, rho: np.ndarray) -> np.ndarray:
        """d rho/dt + 1/2 Delta rho as a function of (t, rho) for rotationally symmetric spaces."""
        rho = np.asarray(rho, dtype=float)
        r = self.radius_at_distance(t, rho)
        x = np.zeros(rho.shape + (self.dim,))
        x[..., 0] = r
        return radial_drift_fd(self, t, x)


class ConformalManifold(EvolvingManifold):
    """Metric ``g(t,x) = exp(2 phi(t,x)) I`` with closed-form geometry.

    ``phi_derivs(t, x)`` returns ``(phi, grad phi, hess phi, d phi/dt)``.
    """

    def __init__(
        self,
        name: str,
        dim: int,
        phi_derivs: Callable[[float, np.ndarray], tuple],
        *,
        radius_at_distance: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
        radial_drift: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
        **kwargs,
    ):
        self._phi_derivs = phi_derivs
        super().__init__(name, dim, self._conformal_metric, **kwargs)
        self._radius_at_distance = radius_at_distance
        self._radial_drift = radial_drift
        self.analytic.update(dg_dt=True, christoffel=True, ricci=True)

    def _conformal_metric(self, t: float, x: np.ndarray) -> np.ndarray:
        phi = self._phi_derivs(t, x)[0]
        return np.exp(2 * phi)[..., None, None] * np.eye(self.dim)

    def dg_dt(self, t, x):
        phi, _, _, phi_t = self._phi_derivs(t, np.asarray(x, dtype=float))
        return (2 * phi_t * np.exp(2 * phi))[..., None, None] * np.eye(self.dim)

    def christoffel(self, t, x):
        grad = self._phi_derivs(t, np.asarray(x, dtype=float))[1]
        return conformal_christoffel(grad)

    def ricci(self, t, x):
        _, grad, hess, _ = self._phi_derivs(t, np.asarray(x, dtype=float))
        m = self.dim
        eye = np.eye(m)
        outer = grad[..., :, None] * grad[..., None, :]
        lap = np.trace(hess, axis1=-2, axis2=-1)
        sq = np.sum(grad**2, axis=-1)
        return -(m - 2) * (hess - outer) - (lap + (m - 2) * sq)[..., None, None] * eye

    def sample(self, t, x):
        x = np.asarray(x, dtype=float)
        phi, grad, hess, phi_t = self._phi_derivs(t, x)
        m = self.dim
        eye = np.eye(m)
        scale = np.exp(2 * phi)[..., None, None]
        outer = grad[..., :, None] * grad[..., None, :]
        lap = np.trace(hess, axis1=-2, axis2=-1)
        sq = np.sum(grad**2, axis=-1)
        ric = -(m - 2) * (hess - outer) - (lap + (m - 2) * sq)[..., None, None] * eye
        return MetricSample(scale * eye, 2 * phi_t[..., None, None] * scale * eye, conformal_christoffel(grad), ric)

    def radius_at_distance(self, t, rho):
        if self._radius_at_distance is None:
            return super().radius_at_distance(t, rho)
        return self._radius_at_distance(t, np.asarray(rho, dtype=float))

    def radial_drift(self, t, rho):
        if self._radial_drift is None:
            return super().radial_drift(t, rho)
        return self._radial_drift(t, np.asarray(rho, dtype=float))


def conformal_christoffel(grad: np.ndarray) -> np.ndarray:
    """Gamma^i_jk = delta_ij d_k phi + delta_ik d_j phi - delta_jk d_i phi."""
    m = grad.shape[-1]
    eye = np.eye(m)
    return (
        eye[:, :, None] * grad[..., None, None, :]
        + eye[:, None, :] * grad[..., None, :, None]
        - eye[None, :, :] * grad[..., :, None, None]
    )


# ---------------------------------------------------------------------------
# finite-difference calculus on a chart
# ---------------------------------------------------------------------------

def gradient_fd(f: Callable[[float, np.ndarray], np.ndarray], t: float, x: np.ndarray, eps: float = EPS_FD):
    steps = _step_sizes(x, eps)
    return (f(t, _shifted(x, steps, 1.0)) - f(t, _shifted(x, steps, -1.0))) / (2 * steps[..., None])


def hessian_fd(f: Callable[[float, np.ndarray], np.ndarray], t: float, x: np.ndarray, eps: float = EPS_FD):
    """Coordinate second derivatives of a scalar function by central differences."""
    m = x.shape[-1]
    steps = _step_sizes(x, eps)[..., None]
    eye = np.eye(m)
    f0 = f(t, x)
    hess = np.empty(x.shape[:-1] + (m, m))
    for j in range(m):
        ej = steps * eye[j]
        hess[..., j, j] = (f(t, x + ej) - 2 * f0 + f(t, x - ej)) / steps[..., 0] ** 2
        for k in range(j + 1, m):
            ek = steps * eye[k]
            val = (f(t, x + ej + ek) - f(t, x + ej - ek) - f(t, x - ej + ek) + f(t, x - ej - ek)) / (
                4 * steps[..., 0] ** 2
            )
            hess[..., j, k] = hess[..., k, j] = val
    return hess


def laplacian_fd(space: EvolvingManifold, f, t: float, x: np.ndarray, eps: float = EPS_FD) -> np.ndarray:
    """Laplace-Beltrami of g(t) applied to a scalar function, g^{jk}(d_jk f - Gamma^i_jk d_i f)."""
    x = np.asarray(x, dtype=float)
    s = space.sample(t, x)
    grad = gradient_fd(f, t, x, eps)
    hess = hessian_fd(f, t, x, eps)
    cov = hess - np.einsum("...ijk,...i->...jk", s.christoffel, grad)
    return np.einsum("...jk,...jk->...", s.ginv, cov)


def radial_drift_fd(space: EvolvingManifold, t: float, x: np.ndarray, center=None, eps: float = EPS_FD):
    """d rho/dt + 1/2 Delta rho for rho = d_{g(t)}(center, .) by finite differences of the distance."""
    x = np.asarray(x, dtype=float)
    c = np.zeros(space.dim) if center is None else np.asarray(center, dtype=float)
    rho = lambda s, y: space.distance(s, c, y)  # noqa: E731
    if t >= eps:
        drho_dt = (rho(t + eps, x) - rho(t - eps, x)) / (2 * eps)
    else:
        drho_dt = (-3 * rho(t, x) + 4 * rho(t + eps, x) - rho(t + 2 * eps, x)) / (2 * eps)
    return drho_dt + 0.5 * laplacian_fd(space, rho, t, x, eps)


def radial_distance_quadrature(space: EvolvingManifold, t: float, x: np.ndarray, tol: float = 1e-10) -> float:
    """Length of the straight chart ray from the origin to x (the distance for rotationally symmetric metrics)."""
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0.0:
        return 0.0
    e = x / r

    def speed(s):
        g = space.metric(t, s * e)
        return float(np.sqrt(e @ g @ e))

    val, _ = integrate.quad(speed, 0.0, r, epsabs=tol, epsrel=tol, limit=200)
    return val


# ---------------------------------------------------------------------------
# model spaces
# ---------------------------------------------------------------------------

def _flat_phi(t, x):
    shape = x.shape[:-1]
    m = x.shape[-1]
    zero = np.zeros(shape)
    return zero, np.zeros(shape + (m,)), np.zeros(shape + (m, m)), zero


def _sphere_phi(t, x):
    m = x.shape[-1]
    q = 1.0 + np.sum(x**2, axis=-1)
    phi = np.log(2.0) - np.log(q)
    grad = -2.0 * x / q[..., None]
    hess = -2.0 * np.eye(m) / q[..., None, None] + 4.0 * x[..., :, None] * x[..., None, :] / (q**2)[..., None, None]
    return phi, grad, hess, np.zeros_like(phi)


def _hyperbolic_phi(t, x):
    m = x.shape[-1]
    q = 1.0 - np.sum(x**2, axis=-1)
    phi = np.log(2.0) - np.log(q)
    grad = 2.0 * x / q[..., None]
    hess = 2.0 * np.eye(m) / q[..., None, None] + 4.0 * x[..., :, None] * x[..., None, :] / (q**2)[..., None, None]
    return phi, grad, hess, np.zeros_like(phi)


def _cigar_phi(t, x):
    d = np.exp(-2.0 * t) + np.sum(x**2, axis=-1)
    phi = -0.5 * np.log(d)
    grad = -x / d[..., None]
    hess = -np.eye(2) / d[..., None, None] + 2.0 * x[..., :, None] * x[..., None, :] / (d**2)[..., None, None]
    return phi, grad, hess, np.exp(-2.0 * t) / d


def _flat_distance(t, x, y):
    return np.linalg.norm(x - y, axis=-1)


def _sphere_distance(t, x, y):
    num = np.linalg.norm(x - y, axis=-1)
    den = np.sqrt((1 + np.sum(x**2, axis=-1)) * (1 + np.sum(y**2, axis=-1)))
    return 2.0 * np.arcsin(np.clip(num / den, 0.0, 1.0))


def _hyperbolic_distance(t, x, y):
    num = np.linalg.norm(x - y, axis=-1)
    den = np.sqrt((1 - np.sum(x**2, axis=-1)) * (1 - np.sum(y**2, axis=-1)))
    return 2.0 * np.arcsinh(num / den)


def _cigar_distance(t, x, y):
    x, y = np.broadcast_arrays(x, y)
    rx = np.linalg.norm(x, axis=-1)
    ry = np.linalg.norm(y, axis=-1)
    cross = x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0]
    dot = np.sum(x * y, axis=-1)
    scale = np.maximum(rx * ry, 1e-300)
    on_ray = (rx == 0) | (ry == 0) | ((np.abs(cross) <= 1e-12 * scale) & (dot >= 0))
    if not np.all(on_ray):
        raise CapabilityError(
            "cigar distance is closed-form only between points on a common ray from the tip"
        )
    et = np.exp(t)
    return np.abs(np.arcsinh(et * rx) - np.arcsinh(et * ry))


def flat(dim: int) -> ConformalManifold:
    space = ConformalManifold(
        "flat",
        dim,
        _flat_phi,
        distance_fn=_flat_distance,
        static=True,
        radius_at_distance=lambda t, rho: rho,
        radial_drift=lambda t, rho: 0.5 * (dim - 1) / rho,
    )
    return space


def sphere(dim: int, chart_radius: float = 10.0) -> ConformalManifold:
    """Static unit sphere in the stereographic chart centred at the south pole."""
    return ConformalManifold(
        "sphere",
        dim,
        _sphere_phi,
        chart_radius=chart_radius,
        distance_fn=_sphere_distance,
        static=True,
        radius_at_distance=lambda t, rho: np.tan(0.5 * rho),
        radial_drift=lambda t, rho: 0.5 * (dim - 1) / np.tan(rho),
    )


def hyperbolic(dim: int, chart_radius: float = 0.95) -> ConformalManifold:
    """Static hyperbolic space in the Poincare ball."""
    return ConformalManifold(
        "hyperbolic",
        dim,
        _hyperbolic_phi,
        chart_radius=chart_radius,
        distance_fn=_hyperbolic_distance,
        static=True,
        radius_at_distance=lambda t, rho: np.tanh(0.5 * rho),
        radial_drift=lambda t, rho: 0.5 * (dim - 1) / np.tanh(rho),
    )


def cigar() -> ConformalManifold:
    """Hamilton's cigar g(t,x) = |dx|^2 / (exp(-2t) + |x|^2), a backward Ricci flow on R^2.

    In the arclength coordinate rho = arcsinh(e^t |x|) the radial drift is
    tanh(rho) + 1/sinh(2 rho), independent of t.
    """
    return ConformalManifold(
        "cigar",
        2,
        _cigar_phi,
        distance_fn=_cigar_distance,
        radius_at_distance=lambda t, rho: np.exp(-t) * np.sinh(rho),
        radial_drift=lambda t, rho: np.tanh(rho) + 1.0 / np.sinh(2.0 * rho),
    )


SPACES = {
    "flat": flat,
    "sphere": sphere,
    "hyperbolic": hyperbolic,
    "cigar": lambda dim=2: cigar(),
}


def make_space(space_id: str, dim: int = 2) -> EvolvingManifold:
    if space_id not in SPACES:
        raise DomainError(f"unknown model space {space_id!r}; choose from {sorted(SPACES)}")
    if space_id == "cigar" and dim != 2:
        raise DomainError("the cigar is two-dimensional")
    return SPACES[space_id](dim)


def fd_only(space: EvolvingManifold) -> EvolvingManifold:
    """Same metric, but every derived quantity by finite differences (an independent oracle)."""
    return EvolvingManifold(
        space.name + "-fd",
        space.dim,
        space.metric,
        chart_radius=space.chart_radius,
        distance_fn=space._distance_fn,
        static=False,
        eps_fd=space.eps_fd,
    )


def validate_super_ricci(
    space: EvolvingManifold, samples: Iterable[tuple[float, np.ndarray]], tol: float = 1e-9
) -> tuple[bool, float]:
    """Check d g/dt <= Ric on samples; returns (flag, smallest eigenvalue of Ric - dg/dt relative to g)."""
    samples = list(samples)
    if not samples:
        raise ValueError("validate_super_ricci needs at least one sample")
    margin = np.inf
    for t, x in samples:
        s = space.metric_at(t, np.atleast_2d(x))
        eig = relative_eigvalsh(s.ricci - s.dg_dt, s.g)[..., 0]
        margin = min(margin, float(np.min(eig)))
    return margin >= -tol, margin


@dataclass(frozen=True)
class CigarForms:
    rho: np.ndarray
    drho_dt: np.ndarray
    laplacian_rho: np.ndarray
    radial_drift: np.ndarray


def cigar_closed_forms(t: float, x: np.ndarray) -> CigarForms:
    """Distance from the tip and its heat-operator data on the cigar at time t."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularPointError("rho is not differentiable at the tip x = 0")
    root = np.sqrt(1.0 + np.exp(-2 * t) / r**2)
    rho = np.arcsinh(np.exp(t) * r)
    drho = 1.0 / root
    lap = 1.0 / (np.exp(2 * t) * r**2 * root)
    return CigarForms(rho, drho, lap, drho + 0.5 * lap)


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

@dataclass
class TargetManifold:
    """Static Riemannian target of constant sectional curvature in a conformal chart.

    ``psi_derivs(y)`` returns ``(psi, grad psi)`` for ``h = exp(2 psi) I``.
    """

    name: str
    dim: int
    psi_derivs: Callable[[np.ndarray], tuple]
    curvature: float
    distance_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    chart_radius: float = np.inf
    extra: dict = field(default_factory=dict)

    def metric(self, y: np.ndarray) -> np.ndarray:
        psi = self.psi_derivs(np.asarray(y, dtype=float))[0]
        return np.exp(2 * psi)[..., None, None] * np.eye(self.dim)

    def christoffel(self, y: np.ndarray) -> np.ndarray:
        return conformal_christoffel(self.psi_derivs(np.asarray(y, dtype=float))[1])

    def kappa(self, y: np.ndarray) -> np.ndarray:
        """Supremum of sectional curvatures at y."""
        return np.full(np.shape(y)[:-1], float(self.curvature) if self.dim > 1 else 0.0)

    def riemann(self, y, a, b, c) -> np.ndarray:
        """R(a, b) c = K (<b, c> a - <a, c> b)."""
        h = self.metric(y)
        inner = lambda p, q: np.einsum("...i,...ij,...j->...", p, h, q)  # noqa: E731
        k = self.curvature
        return k * (inner(b, c)[..., None] * a - inner(a, c)[..., None] * b)

    def damping_operator(self, y: np.ndarray, frame_images: np.ndarray) -> np.ndarray:
        """Matrix of w -> sum_i R(w, F_i) F_i where F_i are the columns of ``frame_images`` (..., n, m)."""
        h = self.metric(y)
        f = frame_images
        hs = np.einsum("...ai,...ab,...bi->...", f, h, f)
        ffth = f @ np.swapaxes(f, -1, -2) @ h
        return self.curvature * (hs[..., None, None] * np.eye(self.dim) - ffth)

    def distance(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self.distance_fn(np.asarray(y, dtype=float), np.asarray(z, dtype=float))

    def contains(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.all(np.isfinite(y), axis=-1) & (np.linalg.norm(y, axis=-1) < self.chart_radius)


def _flat_psi(y):
    return np.zeros(y.shape[:-1]), np.zeros_like(y)


def _sphere_psi(y):
    q = 1.0 + np.sum(y**2, axis=-1)
    return np.log(2.0) - np.log(q), -2.0 * y / q[..., None]


def _hyperbolic_psi(y):
    q = 1.0 - np.sum(y**2, axis=-1)
    return np.log(2.0) - np.log(q), 2.0 * y / q[..., None]


def euclidean_target(dim: int) -> TargetManifold:
    return TargetManifold("flat", dim, _flat_psi, 0.0, lambda y, z: _flat_distance(0.0, y, z))


def sphere_target(dim: int = 2, chart_radius: float = 10.0) -> TargetManifold:
    return TargetManifold(
        "sphere", dim, _sphere_psi, 1.0, lambda y, z: _sphere_distance(0.0, y, z), chart_radius
    )


def hyperbolic_target(dim: int = 2) -> TargetManifold:
    return TargetManifold(
        "hyperbolic", dim, _hyperbolic_psi, -1.0, lambda y, z: _hyperbolic_distance(0.0, y, z), 1.0
    )


TARGETS = {"flat": euclidean_target, "sphere": sphere_target, "hyperbolic": hyperbolic_target}


def make_target(target_id: str, dim: int = 1) -> TargetManifold:
    if target_id not in TARGETS:
        raise DomainError(f"unknown target {target_id!r}; choose from {sorted(TARGETS)}")
    return TARGETS[target_id](dim)


class ReversedManifold(EvolvingManifold):
    """The family g_hat(t) = g(T - t) for t in [0, T]."""

    def __init__(self, base: EvolvingManifold, horizon: float):
        self.base = base
        self.horizon = float(horizon)
        distance_fn = (lambda t, x, y: base.distance(self._back(t), x, y)) if base.has_distance else None
        super().__init__(
            "reversed:" + base.name,
            base.dim,
            lambda t, x: base.metric(self._back(t), x),
            chart_radius=base.chart_radius,
            distance_fn=distance_fn,
            static=base.static,
            eps_fd=base.eps_fd,
        )
        self.analytic = dict(base.analytic)

    def _back(self, t: float) -> float:
        if t < -1e-12 or t > self.horizon + 1e-12:
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        return min(max(self.horizon - t, 0.0), self.horizon)

    def dg_dt(self, t, x):
        return -self.base.dg_dt(self._back(t), x)

    def christoffel(self, t, x):
        return self.base.christoffel(self._back(t), x)

    def ricci(self, t, x):
        return self.base.ricci(self._back(t), x)

    def sample(self, t, x):
        s = self.base.sample(self._back(t), x)
        return MetricSample(s.g, -s.dg_dt, s.christoffel, s.ricci)


def time_reversed(space: EvolvingManifold, horizon: float) -> EvolvingManifold:
    return space if space.static else ReversedManifold(space, horizon)

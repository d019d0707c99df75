"""Martingale drift tests and Monte Carlo representations of du(0, x) v."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import StatisticsError
from ..geometry import EvolvingManifold, TargetManifold, validate_super_ricci
from ..harmonic import SpaceTimeMap
from ..linalg import matvec, solve_small
from ..stochastic import EnsembleResult, evaluate_at, PathState, StepConfig, StoppingRule, run_ensemble
from .report import mean_se


class HypothesisWarning(UserWarning):
    """A hypothesis of a representation formula could not be confirmed numerically."""


def transported_differential(state: PathState, u: SpaceTimeMap, v) -> np.ndarray:
    """Theta~_{0,t}^{-1} du(t, X_t) Theta_{0,t} v for every path, in T_{u(0,x)}N coordinates."""
    v = np.asarray(v, dtype=float)
    w = matvec(state.theta, np.broadcast_to(v, state.x.shape))
    return solve_small(state.theta_tilde, matvec(evaluate_at(u.du, state.clock, state.x), w))


class DifferentialObserver:
    """Records Theta~^{-1} du Theta v under the key ``rep``."""

    def __init__(self, u: SpaceTimeMap, v):
        self.u = u
        self.v = np.asarray(v, dtype=float)

    def init(self, state):
        pass

    def advance(self, prev, new, info):
        pass

    def snapshot(self, state):
        with np.errstate(all="ignore"):
            return {"rep": transported_differential(state, self.u, self.v)}

    def finished(self):
        return None


@dataclass
class DriftTestReport:
    times: np.ndarray
    mean: np.ndarray  # (bins, components)
    se: np.ndarray
    z: np.ndarray
    pass_fraction: float
    passed: bool
    n_paths: int
    threshold: float = 3.0
    required_fraction: float = 0.95


def martingale_drift_test(
    values: np.ndarray,
    times: Sequence[float],
    threshold: float = 3.0,
    required_fraction: float = 0.95,
    min_paths: int = 30,
    rtol: float = 1e-12,
) -> DriftTestReport:
    """Bin-wise test that a recorded process has no drift.

    ``values`` has shape (paths, times) or (paths, times, components).  For
    every consecutive pair of record times and every component the mean
    increment is compared with its standard error; the test passes when
    ``|mean| <= threshold * SE`` holds in at least ``required_fraction`` of cells.

    Increments smaller than ``rtol`` times the largest recorded magnitude are
    rounding noise and count as zero; without this floor an exactly constant
    functional would be judged on its last-bit errors.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[..., None]
    n = values.shape[0]
    if n < min_paths:
        raise StatisticsError(f"need at least {min_paths} paths for a drift test, got {n}")
    if values.shape[1] < 2:
        raise StatisticsError("need at least two record times")
    if not np.all(np.isfinite(values)):
        raise StatisticsError("recorded values contain non-finite entries")
    inc = np.diff(values, axis=1)
    mean, se = mean_se(inc, axis=0)
    floor = rtol * float(np.max(np.abs(values))) if values.size else 0.0
    excess = np.maximum(np.abs(mean) - floor, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, excess / se, np.where(excess == 0, 0.0, np.inf))
    ok = z <= threshold
    frac = float(np.mean(ok))
    return DriftTestReport(
        np.asarray(times, dtype=float), mean, se, z, frac, frac >= required_fraction, n, threshold, required_fraction
    )


@dataclass
class RepresentationEstimate:
    value: np.ndarray
    se: np.ndarray
    exact: np.ndarray
    method: str
    n_paths: int
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    result: Optional[EnsembleResult] = None

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.value - self.exact) / self.se


def _hypothesis_warnings(u, space, target, x, t) -> list[str]:
    out = []
    try:
        xs = [(s, np.asarray(x, dtype=float)) for s in np.linspace(0.0, t, 5)]
        flag, margin = validate_super_ricci(space, xs)
        if not flag:
            out.append(f"Ric - dg/dt has negative eigenvalue {margin:.3g} near the start point")
    except Exception as exc:  # pragma: no cover - reported, not fatal
        out.append(f"super Ricci check unavailable: {exc}")
    k = target.kappa(np.asarray(u.u(0.0, np.asarray(x, dtype=float)[None, :])))
    if not np.all(np.isfinite(k)):
        out.append("target curvature bound is not finite")
    for msg in out:
        warnings.warn(msg, HypothesisWarning, stacklevel=3)
    return out


def estimate_representation(
    u: SpaceTimeMap,
    space: EvolvingManifold,
    target: TargetManifold,
    x,
    v,
    t: float,
    R: Optional[float] = None,
    *,
    n_paths: int = 10_000,
    h: float = 1e-3,
    seed: int = 0,
    p: float = 2.0,
    chunk_size: int = 2048,
) -> RepresentationEstimate:
    """Monte Carlo estimate of du(0, x) v.

    Without ``R`` this is the mean of Theta~_{0,t}^{-1} du(t, X_t) Theta_{0,t} v.
    With ``R`` the stopped formula is used with the cutoff-driven process ell
    (see :mod:`.firstfactor`): the estimate is ``-E[(int (P)^{-1} Theta ell' . dB) A_def]``
    at tau = sigma(t) ^ tau_R, and the drift form
    ``-E[int Theta~^{-1} du Theta ell' ds]`` is reported alongside.
    """
    from .cutoff import compute_cpR
    from .firstfactor import EllObserver, build_ell

    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    notes = _hypothesis_warnings(u, space, target, x, t)
    exact = u.du(0.0, x[None, :])[0] @ v
    cfg = StepConfig(h=h, seed=seed)
    if R is None:
        res = run_ensemble(
            space, target, u, x, cfg, StoppingRule(horizon=t), n_paths,
            record_times=[0.0, t], observers=[lambda: DifferentialObserver(u, v)], chunk_size=chunk_size,
        )
        vals = res.final["rep"]
        mean, se = mean_se(vals)
        return RepresentationEstimate(mean, se, exact, "unstopped", n_paths, notes, {}, res)

    cpr = compute_cpR(space, x, R, p, horizon=t).value
    ell = build_ell(v, p, cpr, t, space.metric(0.0, x[None, :])[0])
    # dT/ds = f^-2 >= 1, so sigma(t) <= t and the horizon t is never binding
    res = run_ensemble(
        space, target, u, x, cfg, StoppingRule(horizon=t, R=R), n_paths,
        record_times=[0.0], observers=[lambda: EllObserver(space, x, R, ell, u)], chunk_size=chunk_size,
    )
    s = res.final["ell_stoch"]
    a = res.final["a_def"]
    prod = -(s[:, None] * a)
    mean, se = mean_se(prod)
    drift_mean, drift_se = mean_se(-res.final["ell_drift_int"])
    unfinished = float(np.mean(res.final["ell_norm"] > 1e-12))
    extra = {
        "cpR": cpr,
        "drift_form": drift_mean,
        "drift_form_se": drift_se,
        "unfinished_fraction": unfinished,
    }
    return RepresentationEstimate(mean, se, exact, "stopped", n_paths, notes, extra, res)

"""Named, reproducible experiments.

Each experiment turns a resolved :class:`ExperimentConfig` into an
:class:`Outcome`: an :class:`~stharm.analysis.report.ExperimentReport` with
named assertions plus CSV tables for external plotting.  All randomness is
derived from ``config.seed``.
"""

from __future__ import annotations

import csv
import hashlib
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .analysis import (
    DifferentialObserver,
    EllObserver,
    EnergyObserver,
    ExperimentReport,
    build_ell,
    compute_cpR,
    estimate_representation,
    f_supermartingale_check,
    first_factor,
    integrability_estimate,
    inv_damped_bound_check,
    liouville_bound,
    martingale_drift_test,
    mean_se,
    second_factor_bounds,
    small_image_tools,
    subsqrt_chain,
)
from .analysis.firstfactor import EllProcess
from .analysis.liouville import decay_route
from .errors import ConfigError, StharmError
from .geometry import (
    SPACES,
    TARGETS,
    cigar_closed_forms,
    laplacian_fd,
    make_space,
    make_target,
    radial_distance_quadrature,
    validate_super_ricci,
)
from .harmonic import CATALOG, SpaceTimeMap, catalog_map
from .linalg import metric_norm, relative_eigvalsh
from .stochastic import StepConfig, StopReason, StoppingRule, run_ensemble

OUTPUT_ENV = "STHARM_OUTPUT_DIR"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything a run depends on.  ``None`` means "use the experiment's default"."""

    experiment: str
    space: Optional[str] = None
    space_dim: Optional[int] = None
    target: Optional[str] = None
    target_dim: Optional[int] = None
    map: Optional[str] = None
    map_params: dict = field(default_factory=dict)
    x0: Optional[tuple] = None
    v: Optional[tuple] = None
    seed: Optional[int] = None
    h: Optional[float] = None
    n_paths: Optional[int] = None
    horizon: Optional[float] = None
    R: Optional[float] = None
    p: Optional[float] = None
    q: Optional[float] = None
    b: Optional[float] = None
    drop_ricci: Optional[bool] = None
    csv_times: Optional[str] = None  # "final" or "all"
    inner: Optional[str] = None  # experiment re-run by the determinism check
    out: Optional[str] = None

    def merged(self, other: "ExperimentConfig") -> "ExperimentConfig":
        """Values set in ``other`` win; map parameters are merged key by key."""
        upd = {}
        for f in fields(self):
            val = getattr(other, f.name)
            if f.name == "map_params":
                if val:
                    upd["map_params"] = {**self.map_params, **val}
            elif f.name != "experiment" and val is not None:
                upd[f.name] = val
        return replace(self, **upd)

    def echo(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def _check_ids(cfg: ExperimentConfig) -> None:
    if cfg.space is not None and cfg.space not in SPACES:
        raise ConfigError(f"unknown space {cfg.space!r}; choose from {sorted(SPACES)}")
    if cfg.target is not None and cfg.target not in TARGETS:
        raise ConfigError(f"unknown target {cfg.target!r}; choose from {sorted(TARGETS)}")
    if cfg.map is not None and cfg.map not in CATALOG:
        raise ConfigError(f"unknown map {cfg.map!r}; choose from {sorted(CATALOG)}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _check_ids(cfg)
    if cfg.p is not None and cfg.q is not None and abs(1.0 / cfg.p + 1.0 / cfg.q - 1.0) > 1e-12:
        raise ConfigError(f"need 1/p + 1/q = 1, got p={cfg.p}, q={cfg.q}")
    for name in ("h", "horizon", "R"):
        val = getattr(cfg, name)
        if val is not None and not val > 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.n_paths is not None and cfg.n_paths < 1:
        raise ConfigError("paths must be a positive integer")
    if cfg.csv_times not in (None, "final", "all"):
        raise ConfigError("csv_times must be 'final' or 'all'")
    return cfg


def build_map(map_id: str, space_dim: int, params: dict) -> SpaceTimeMap:
    """Catalog map with sensible defaults for the parameters that depend on the source."""
    params = dict(params)
    if map_id == "sphere-height":
        params.setdefault("dim", space_dim)
    elif map_id == "constant":
        params.setdefault("value", [0.0])
        params.setdefault("source_dim", space_dim)
    elif map_id == "linear":
        params.setdefault("matrix", np.eye(space_dim).tolist())
    try:
        return catalog_map(map_id, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for map {map_id!r}: {exc}") from exc


@dataclass
class Setup:
    """Objects built from a resolved configuration."""

    cfg: ExperimentConfig
    space: object
    target: object
    u: SpaceTimeMap
    x0: np.ndarray
    v: np.ndarray

    @property
    def step(self) -> StepConfig:
        return StepConfig(h=self.cfg.h, seed=self.cfg.seed, drop_ricci=bool(self.cfg.drop_ricci))


def setup(cfg: ExperimentConfig) -> Setup:
    space = make_space(cfg.space, cfg.space_dim)
    u = build_map(cfg.map, space.dim, cfg.map_params)
    tid = cfg.target or (u.target_id if u.target_id else "flat")
    tdim = cfg.target_dim or u.target_dim
    target = make_target(tid, tdim)
    x0 = np.zeros(space.dim) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    if cfg.v is None:
        v = np.zeros(space.dim)
        v[0] = 1.0
    else:
        v = np.asarray(cfg.v, dtype=float)
    if x0.shape != (space.dim,) or v.shape != (space.dim,):
        raise ConfigError(f"x0 and v need {space.dim} components")
    return Setup(cfg, space, target, u, x0, v)


# ---------------------------------------------------------------------------
# outcomes and tables
# ---------------------------------------------------------------------------

@dataclass
class Table:
    header: list
    rows: list

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for row in self.rows:
                w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


@dataclass
class Outcome:
    report: ExperimentReport
    tables: dict = field(default_factory=dict)  # file name -> Table
    ensembles: dict = field(default_factory=dict)  # file name -> (EnsembleResult, time_index)


def _functional_table(res, keys: Sequence[str], prefix_cols: Sequence = ()) -> Table:
    """One row per path: optional leading columns, tau, stop reason and the requested final values."""
    header = [c for c, _ in prefix_cols] + ["path", "tau", "reason"]
    cols = []
    for k in keys:
        arr = np.asarray(res.final[k])
        if arr.ndim == 1:
            header.append(k)
            cols.append(arr[:, None])
        else:
            header += [f"{k}_{i}" for i in range(arr.shape[-1])]
            cols.append(arr.reshape(arr.shape[0], -1))
    table = np.concatenate(cols, axis=1) if cols else np.zeros((res.n_paths, 0))
    lead = [v for _, v in prefix_cols]
    rows = [
        lead + [j, float(res.final["tau"][j]), StopReason(int(res.final["reason"][j])).name.lower()]
        + [float(x) for x in table[j]]
        for j in range(res.n_paths)
    ]
    return Table(header, rows)


def _csv_index(cfg: ExperimentConfig, res) -> Optional[list]:
    return None if cfg.csv_times == "all" else [len(res.times) - 1]


def _replicate_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, 1 + k]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_verify_martingale(cfg: ExperimentConfig) -> Outcome:
    s = setup(cfg)
    bins = 20
    times = np.linspace(0.0, cfg.horizon, bins + 1)
    res = run_ensemble(
        s.space, s.target, s.u, s.x0, s.step, StoppingRule(cfg.horizon), cfg.n_paths,
        record_times=times, observers=[lambda: DifferentialObserver(s.u, s.v)],
    )
    rep = ExperimentReport("verify-martingale")
    ok = res.final["reason"] != StopReason.ERROR
    rep.estimate("paths with numerical errors", int(np.sum(~ok)))
    rep.estimate("paths stopped at the chart boundary", int(np.sum(res.final["reason"] == StopReason.CHART)))
    test = martingale_drift_test(res.records["rep"][ok], res.times)
    rep.estimate("fraction of cells with |mean| <= 3 SE", test.pass_fraction)
    rep.estimate("max |mean| / SE", float(np.max(test.z)))
    rep.check(
        "drift test: fraction of quiet cells >= 0.95",
        test.passed, test.required_fraction, test.pass_fraction, None,
        "lhs is the required fraction, rhs the observed one",
    )
    if cfg.drop_ricci:
        rep.notes.append("negative control: Ricci damping removed from Theta; a failing drift test is the expected result")
    rows = []
    n_comp = test.mean.shape[-1]
    for i in range(bins):
        for c in range(n_comp):
            rows.append([times[i], times[i + 1], c, test.mean[i, c], test.se[i, c], test.z[i, c]])
    out = Outcome(rep, {"drift.csv": Table(["t0", "t1", "component", "mean", "se", "z"], rows)})
    out.tables["functionals.csv"] = _functional_table(res, ["rep"])
    out.ensembles["paths.csv"] = (res, _csv_index(cfg, res))
    return out


def run_negative_control(cfg: ExperimentConfig) -> Outcome:
    inner = run_verify_martingale(replace(cfg, drop_ricci=True))
    rep = ExperimentReport("negative-control")
    rep.estimates.update(inner.report.estimates)
    failed = not inner.report.passed
    frac = inner.report.estimates["fraction of cells with |mean| <= 3 SE"]["value"]
    rep.check(
        "drift test detects the corrupted transport (fraction of quiet cells < 0.95)",
        failed, frac, 0.95, None, "passes when the drift test fails",
    )
    rep.notes.append("Theta is advanced without the Ricci term; the functional acquires a drift")
    inner.report = rep
    return inner


ROUNDING = 1e-12  # floor for comparisons whose standard error vanishes (deterministic integrands)


def run_representation(cfg: ExperimentConfig) -> Outcome:
    s = setup(cfg)
    rep = ExperimentReport("representation")
    est = estimate_representation(
        s.u, s.space, s.target, s.x0, s.v, cfg.horizon, n_paths=cfg.n_paths, h=cfg.h, seed=cfg.seed
    )
    se_limit = 0.015 * np.sqrt(1e5 / cfg.n_paths)
    for i in range(est.value.shape[0]):
        rep.estimate(f"du(0,x)v[{i}] estimate", float(est.value[i]), float(est.se[i]), exact=float(est.exact[i]))
        tol = 3 * est.se[i] + ROUNDING * (1 + abs(est.exact[i]))
        rep.check(
            f"|estimate - du(0,x)v| <= 3 SE, component {i}",
            abs(est.value[i] - est.exact[i]) <= tol, abs(est.value[i] - est.exact[i]), 0.0, tol,
        )
        rep.check(
            f"SE <= 0.015 sqrt(1e5 / paths), component {i}", est.se[i] <= se_limit, est.se[i], se_limit
        )
    rep.notes.extend(est.warnings)
    out = Outcome(rep)
    out.tables["functionals.csv"] = _functional_table(est.result, ["rep"])
    out.ensembles["paths.csv"] = (est.result, _csv_index(cfg, est.result))
    if cfg.R is not None:
        st = estimate_representation(
            s.u, s.space, s.target, s.x0, s.v, cfg.horizon, R=cfg.R,
            n_paths=cfg.n_paths, h=cfg.h, seed=cfg.seed, p=cfg.p or 2.0,
        )
        early = float(np.mean(st.result.final["reason"] == StopReason.RADIUS))
        rep.estimate("fraction of paths stopped at radius R", early)
        rep.estimate("c_p(R)", st.extra["cpR"])
        for i in range(st.value.shape[0]):
            comb = float(np.hypot(st.se[i], est.se[i])) + ROUNDING * (1 + abs(est.exact[i]))
            rep.estimate(f"stopped estimate[{i}]", float(st.value[i]), float(st.se[i]))
            rep.estimate(f"stopped drift form[{i}]", float(st.extra["drift_form"][i]), float(st.extra["drift_form_se"][i]))
            rep.check(
                f"stopped and unstopped estimates agree within 3 combined SE, component {i}",
                abs(st.value[i] - est.value[i]) <= 3 * comb, abs(st.value[i] - est.value[i]), 0.0, 3 * comb,
            )
        out.tables["stopped.csv"] = _functional_table(st.result, ["ell_stoch", "a_def", "ell_h0"])
    return out


def run_theta_decay(cfg: ExperimentConfig) -> Outcome:
    s = setup(cfg)
    times = np.linspace(0.0, cfg.horizon, 11)
    res = run_ensemble(s.space, s.target, s.u, s.x0, s.step, StoppingRule(cfg.horizon), cfg.n_paths, record_times=times)
    rep = ExperimentReport("theta-decay")
    pts = np.concatenate([s.x0[None], res.final["x"][:50]])
    samples = [(float(t), pts) for t in np.linspace(0.0, cfg.horizon, 5)]
    _, alpha = validate_super_ricci(s.space, samples)
    spread = 0.0
    for t, x in samples:
        smp = s.space.metric_at(t, x)
        eig = relative_eigvalsh(smp.ricci - smp.dg_dt, smp.g)
        spread = max(spread, float(np.max(eig) - np.min(eig)))
    isotropic = spread <= 1e-9
    rep.estimate("alpha (smallest eigenvalue of Ric - dg/dt)", alpha)
    rep.estimate("spread of Ric - dg/dt eigenvalues", spread)
    full = res.final["reason"] == StopReason.HORIZON
    rep.estimate("paths reaching the horizon", int(np.sum(full)))
    norms = res.records["theta_norm"][full]
    bound = np.exp(-0.5 * alpha * res.times)
    rows = []
    for k, t in enumerate(res.times):
        col = norms[:, k]
        rows.append([t, bound[k], col.mean(), col.min(), col.max()])
    excess = float(np.max((norms - bound) / bound))
    rep.check("|Theta| <= exp(-alpha t/2) (relative, every path and time)", excess <= 1e-3, excess, 0.0, 1e-3)
    if isotropic:
        dev = float(np.max(np.abs(norms[:, -1] - bound[-1]) / bound[-1]))
        rep.estimate("|Theta_{0,T}| mean", float(norms[:, -1].mean()), exact=float(bound[-1]))
        rep.check("|Theta_{0,T}| = exp(-alpha T/2) within 1e-3 relative", dev <= 1e-3, dev, 0.0, 1e-3)
    else:
        rep.notes.append("Ric - dg/dt is not a multiple of g; only the one-sided bound is checked")
    out = Outcome(rep, {"decay.csv": Table(["t", "exp_bound", "mean", "min", "max"], rows)})
    out.ensembles["paths.csv"] = (res, _csv_index(cfg, res))
    return out


REFERENCE_ROW = (1.0, 0.881374, 0.707107, 0.707107, 1.06066)


def run_cigar_closed_forms(cfg: ExperimentConfig) -> Outcome:
    s = setup(cfg)
    t = 0.0 if cfg.horizon is None else float(cfg.horizon)  # the time at which the forms are evaluated
    rep = ExperimentReport("cigar-closed-forms")
    radii = np.array([0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0])
    pts = np.stack([radii, np.zeros_like(radii)], axis=-1)
    cf = cigar_closed_forms(t, pts)
    quad = np.array([radial_distance_quadrature(s.space, t, p) for p in pts])
    origin = np.zeros(2)
    eps = 1e-4
    rho = lambda tt, y: s.space.distance(tt, origin, y)  # noqa: E731
    drho_fd = (rho(t + eps, pts) - rho(t - eps, pts)) / (2 * eps)
    lap_fd = laplacian_fd(s.space, rho, t, pts, eps)
    rows = [
        [radii[i], cf.rho[i], cf.drho_dt[i], cf.laplacian_rho[i], cf.radial_drift[i], quad[i], drho_fd[i], lap_fd[i]]
        for i in range(radii.size)
    ]
    rep.check(
        "closed-form rho = quadrature of the metric along the ray",
        np.max(np.abs(cf.rho - quad)) <= 1e-6, float(np.max(np.abs(cf.rho - quad))), 0.0, 1e-6,
    )
    fd_err = float(max(np.max(np.abs(cf.drho_dt - drho_fd)), np.max(np.abs(cf.laplacian_rho - lap_fd))))
    rep.check("finite differences of the distance match d rho/dt and Delta rho", fd_err <= 1e-3, fd_err, 0.0, 1e-3)
    if t == 0.0:
        ref = cigar_closed_forms(0.0, np.array([[1.0, 0.0]]))
        got = (ref.rho[0], ref.drho_dt[0], ref.laplacian_rho[0], ref.radial_drift[0])
        err = float(max(abs(a - b) for a, b in zip(got, REFERENCE_ROW[1:])))
        rep.estimate("row |x| = 1", list(map(float, got)), reference=list(REFERENCE_ROW[1:]))
        rep.check("row |x| = 1 matches the tabulated values", err <= 1e-6, err, 0.0, 1e-6)
    grid = np.geomspace(1e-3, 1e4, 400)
    drift = cigar_closed_forms(t, np.stack([grid, np.zeros_like(grid)], axis=-1)).radial_drift
    rise = float(np.max(np.diff(drift)))
    rep.check("radial drift non-increasing in |x|", rise <= 1e-12, rise, 0.0, 1e-12)
    rep.check("grid infimum of the drift >= 1 - 1e-3", drift.min() >= 1 - 1e-3, 1 - 1e-3, float(drift.min()))
    far = float(cigar_closed_forms(t, np.array([[1e6, 0.0]])).radial_drift[0])
    rep.check("drift at |x| = 1e6 is within 1e-3 of its limit 1", abs(far - 1.0) <= 1e-3, abs(far - 1.0), 0.0, 1e-3)
    header = ["abs_x", "rho", "drho_dt", "laplacian_rho", "radial_drift", "rho_quadrature", "drho_dt_fd", "laplacian_rho_fd"]
    return Outcome(rep, {"cigar.csv": Table(header, rows)})


def run_cpr(cfg: ExperimentConfig) -> Outcome:
    horizon = cfg.horizon
    rep = ExperimentReport("cpr")
    rows = []
    flat2 = make_space("flat", 2)
    for R in (1.0, 10.0):
        c = compute_cpR(flat2, np.zeros(2), R, 1.0, horizon=horizon)
        bound = np.pi**2 * 5 / (4 * R**2)
        rows.append(["flat", 1.0, R, c.value, R * c.value, bound])
        rep.estimate(f"flat c_1({R:g})", c.value)
        rep.check(f"flat R^2: c_1({R:g}) <= 5 pi^2 / (4 R^2)", c.value <= bound, c.value, bound)
        coarse = compute_cpR(flat2, np.zeros(2), R, 1.0, horizon=horizon, n_rho=1001)
        rep.check(f"flat c_1({R:g}) grid refinement is monotone", coarse.value <= c.value, coarse.value, c.value)
    cig = make_space("cigar", 2)
    p = cfg.p or 2.0
    rc = []
    for R in (5.0, 10.0, 20.0, 40.0):
        c = compute_cpR(cig, np.zeros(2), R, p, horizon=horizon)
        rc.append(R * c.value)
        rows.append(["cigar", p, R, c.value, R * c.value, ""])
        rep.estimate(f"cigar R c_{p:g}(R) at R={R:g}", R * c.value)
    ratios = [max(a, b) / min(a, b) for a, b in zip(rc, rc[1:])]
    worst = float(max(ratios))
    rep.check("cigar: R c_p(R) changes by less than a factor 1.5 between successive R", worst < 1.5, worst, 1.5)
    return Outcome(rep, {"cpr.csv": Table(["space", "p", "R", "c_p", "R_c_p", "bound"], rows)})


def run_first_factor(cfg: ExperimentConfig) -> Outcome:
    s = setup(cfg)
    p = cfg.p or 2.0
    cpr = compute_cpR(s.space, s.x0, cfg.R, p, horizon=cfg.horizon).value
    ell = build_ell(s.v, p, cpr, cfg.horizon, s.space.metric(0.0, s.x0[None, :])[0])
    res = run_ensemble(
        s.space, s.target, s.u, s.x0, s.step, StoppingRule(cfg.horizon, R=cfg.R), cfg.n_paths,
        record_times=[0.0], observers=[lambda: EllObserver(s.space, s.x0, cfg.R, ell)],
    )
    ff = first_factor(res.final, ell)
    rep = ExperimentReport("first-factor")
    rep.estimate("c_p(R)", cpr)
    rep.estimate("LHS direct", ff.lhs_direct, ff.lhs_direct_se)
    rep.estimate("LHS via Ito isometry", ff.lhs_isometry, ff.lhs_isometry_se)
    rep.estimate("paths stopped at radius R", int(np.sum(res.final["reason"] == StopReason.RADIUS)))
    if p == 2:
        rep.estimate("RHS", ff.rhs, margin=ff.margin)
        rep.check("E|int P^-1 Theta ell' dB|^2 <= RHS", ff.holds, ff.lhs_direct, ff.rhs, 3 * ff.lhs_direct_se)
        rep.check(
            "direct and isometry estimates agree within 3 SE of their paired difference",
            ff.methods_agree, abs(ff.lhs_direct - ff.lhs_isometry), 0.0, 3 * ff.difference_se,
        )
    else:
        rep.estimate("LHS / RHS without C_p", ff.ratio_without_cp)
        rep.notes.append("p > 2: the BDG constant is unknown, only the ratio is reported")
    blocks = np.array_split(res.final["ell_energy"], 10)
    integ = integrability_estimate(blocks, eps=1.0)
    rep.estimate("E[(int |ell'|^2)^(1+eps)/2] per replicate", integ["values"], integ["se"], eps=1.0)
    rep.check("integrability moment finite in all 10 replicates", integ["finite"])
    out = Outcome(rep)
    out.tables["functionals.csv"] = _functional_table(
        res, ["ell_h0", "ell_T", "ell_stoch", "ell_isometry", "ell_energy", "cutoff_f"]
    )
    out.ensembles["paths.csv"] = (res, _csv_index(cfg, res))
    return out


SECOND_FACTOR_CASES = (
    ("circle-sin", "flat", 1, 1),
    ("geodesic-h2", "hyperbolic", 2, 1),
    ("small-s2", "sphere", 2, 1),
)


def run_second_factor(cfg: ExperimentConfig) -> Outcome:
    if cfg.map is not None:
        cases = [(cfg.map, cfg.target, cfg.target_dim, cfg.space_dim)]
    else:
        cases = SECOND_FACTOR_CASES
    rep = ExperimentReport("second-factor")
    out = Outcome(rep)
    rows = []
    for k, (mid, tid, tdim, sdim) in enumerate(cases):
        sub = replace(cfg, map=mid, target=tid, target_dim=tdim, space_dim=sdim or cfg.space_dim)
        s = setup(sub)
        res = run_ensemble(
            s.space, s.target, s.u, s.x0, s.step, StoppingRule(cfg.horizon, R=cfg.R), cfg.n_paths,
            record_times=[0.0], observers=[lambda: EnergyObserver(s.space, s.target, s.u)],
        )
        y0 = s.u.u(0.0, s.x0[None])[0]
        rep.extend(second_factor_bounds(res.final, s.u, s.target, y0, q=cfg.q or 2.0, b=cfg.b), prefix=f"{mid}: ")
        rep.extend(inv_damped_bound_check(res.final, cfg.h), prefix=f"{mid}: ")
        a2 = metric_norm(res.final["a_def"], s.target.metric(y0)) ** 2
        d2 = s.target.distance(res.final["y"], np.broadcast_to(y0, res.final["y"].shape)) ** 2
        for j in range(res.n_paths):
            rows.append([
                mid, j, res.final["tau"][j], a2[j], d2[j], res.final["energy_int"][j],
                res.final["sf_int"][j], res.final["L_int"][j], res.final["invdamp_excess"][j],
            ])
        if k == 0:
            out.ensembles["paths.csv"] = (res, _csv_index(cfg, res))
        else:
            out.ensembles[f"paths_{mid}.csv"] = (res, _csv_index(cfg, res))
    rep.notes = list(dict.fromkeys(rep.notes))
    header = ["map", "path", "tau", "a_def_sq", "dist_sq", "energy_int", "sf_int", "L_int", "invdamp_excess"]
    out.tables["functionals.csv"] = Table(header, rows)
    return out


F_CASES = (("flat", 5.0), ("cigar", 2.0))


def run_f_supermartingale(cfg: ExperimentConfig) -> Outcome:
    if cfg.space is None:
        cases = F_CASES
    elif cfg.R is None and cfg.space not in dict(F_CASES):
        raise ConfigError("f-supermartingale on this space needs a radius R")
    else:
        cases = [(cfg.space, cfg.R if cfg.R is not None else dict(F_CASES)[cfg.space])]
    p = cfg.p or 1.0
    rep = ExperimentReport("f-supermartingale")
    out = Outcome(rep)
    rows = []
    for sid, R in cases:
        sub = replace(cfg, space=sid, space_dim=2 if cfg.space_dim is None else cfg.space_dim, R=R)
        s = setup(sub)
        cpr = compute_cpR(s.space, s.x0, R, p, horizon=cfg.horizon).value
        ell = EllProcess(s.v, p, cpr, cfg.horizon, s.space.metric(0.0, s.x0[None, :])[0])
        res = run_ensemble(
            s.space, s.target, s.u, s.x0, s.step, StoppingRule(cfg.horizon, R=R), cfg.n_paths,
            record_times=[0.0], observers=[lambda: EllObserver(s.space, s.x0, R, ell)],
        )
        rep.estimate(f"{sid}: c_{p:g}({R:g})", cpr)
        rep.extend(f_supermartingale_check(res.final, p, cpr), prefix=f"{sid} R={R:g}: ")
        for j in range(res.n_paths):
            rows.append([sid, R, j, res.final["tau"][j], res.final["cutoff_f"][j], res.final["ell_T"][j]])
    out.tables["functionals.csv"] = Table(["space", "R", "path", "tau", "f", "T"], rows)
    return out


def run_liouville(cfg: ExperimentConfig) -> Outcome:
    rep = ExperimentReport("liouville")
    out = Outcome(rep)
    # decay route: static unit sphere, target R
    sph = make_space("sphere", 2)
    height = build_map("sphere-height", 2, {})
    flat1 = make_target("flat", 1)
    grid = np.linspace(-2.0, 2.0, 9)
    pts = np.array([[a, b] for a in grid for b in grid])
    ts = np.arange(0.0, 6.0)
    routes = [decay_route(height, sph, flat1, np.zeros(2), [1.0, 0.0], float(t), [0.0, 1.0], pts) for t in ts]
    bounds = np.array([r.bound for r in routes])
    ratios = bounds[1:] / bounds[:-1]
    dev = float(np.max(np.abs(ratios - np.exp(-0.5))))
    rep.estimate("decay bounds", bounds)
    rep.check("decay route: bound shrinks by exp(-1/2) per unit t", dev <= 1e-3, dev, 0.0, 1e-3)
    out.tables["decay.csv"] = Table(["t", "bound"], [[t, b] for t, b in zip(ts, bounds)])
    # sub-square-root chain on the cigar
    chain = subsqrt_chain(make_space("cigar", 2), np.zeros(2), [5.0, 10.0, 20.0, 40.0])
    rep.estimate("c_2(R) phi(R)^2", chain["chain"])
    rep.check("sub-square-root chain decreases over R", chain["decreasing"])
    out.tables["chain.csv"] = Table(
        ["R", "c_p", "chain"], [[r, c, v] for r, c, v in zip(chain["R"], chain["c_p(R)"], chain["chain"])]
    )
    # small image: spherical cap of radius pi/4
    seeds = [_replicate_seed(cfg.seed, k) for k in range(10)]
    small = small_image_tools(
        make_target("sphere", 2), np.zeros(2), np.pi / 4, cfg.q or 1.5,
        moments=dict(
            u=build_map("small-s2", 1, {}), space=make_space("flat", 1), x=np.zeros(1),
            horizon=cfg.horizon, seeds=seeds, n_paths=max(cfg.n_paths // 10, 2), h=cfg.h,
        ),
    )
    rep.check("small image: ball is regular", small.regular)
    rep.check("small image: max eigenvalue of the Hessian test <= 1e-6", small.hessian_passed, small.hessian_margin, 1e-6)
    rep.estimate("exponential moments per replicate", small.moments, small.moments_se)
    rep.check("small image: exponential moments finite in all replicates", bool(small.moments_finite))
    out.tables["moments.csv"] = Table(
        ["replicate", "seed", "mean", "se"], [[k, sd, m, e] for k, (sd, m, e) in enumerate(zip(seeds, small.moments, small.moments_se))]
    )
    # composed pipeline on the cigar
    cig = make_space("cigar", 2)
    lb = liouville_bound(
        build_map("cigar-linear", 2, {}), cig, flat1, np.zeros(2), np.array([1.0, 0.0]), cfg.horizon,
        R=10.0, p=2.0, q=2.0, n_paths=max(cfg.n_paths // 5, 2), h=cfg.h, seed=cfg.seed,
    )
    for r in lb.routes:
        if r.applicable:
            rep.estimate(f"cigar pipeline route {r.name}", r.bound, r.se, **{k: v for k, v in r.factors.items()})
        else:
            rep.notes.append(f"cigar pipeline route {r.name} not applicable: {r.reason}")
    rep.check("cigar pipeline produces a bound", lb.has_bound)
    return out


def _hash_dir(path) -> dict:
    out = {}
    for name in sorted(os.listdir(path)):
        if name.endswith(".csv"):
            with open(os.path.join(path, name), "rb") as fh:
                out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


def run_determinism(cfg: ExperimentConfig) -> Outcome:
    inner = cfg.inner or "verify-martingale"
    if inner == "determinism" or inner not in REGISTRY:
        raise ConfigError(f"cannot use {inner!r} as the repeated experiment")
    exp = REGISTRY[inner]
    base = ExperimentConfig(inner, seed=cfg.seed, n_paths=cfg.n_paths if cfg.n_paths else None, h=cfg.h)
    resolved = exp.resolve(base)
    hashes = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            d = os.path.join(tmp, f"run{k}")
            write_outcome(exp.run(resolved), d, resolved)
            hashes.append(_hash_dir(d))
    rep = ExperimentReport("determinism")
    rep.estimate("repeated experiment", inner)
    rows = []
    for name in sorted(set(hashes[0]) | set(hashes[1])):
        a, b = hashes[0].get(name), hashes[1].get(name)
        rows.append([name, a, b, a == b])
        rep.check(f"{name} identical in both runs", a is not None and a == b)
    return Outcome(rep, {"hashes.csv": Table(["file", "sha256_run1", "sha256_run2", "identical"], rows)})


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

ENSEMBLE_COLUMNS = (
    "path, t, x_i, y_a, theta_norm, theta_tilde_inv_norm, b_i, a_def_a "
    "(one row per path at the final record time; csv_times=all writes every record time)"
)


@dataclass(frozen=True)
class Experiment:
    name: str
    summary: str
    anchor: str
    defaults: dict
    columns: dict
    runner: Callable[[ExperimentConfig], Outcome]

    def resolve(self, cfg: ExperimentConfig) -> ExperimentConfig:
        base = ExperimentConfig(self.name, **self.defaults)
        return validate(base.merged(cfg))

    def run(self, cfg: ExperimentConfig) -> Outcome:
        start = time.perf_counter()
        out = self.runner(cfg)
        out.report.experiment = self.name
        out.report.config = cfg.echo()
        out.report.wall_time = time.perf_counter() - start
        return out

    def describe(self) -> str:
        lines = [f"{self.name}: {self.summary}", f"  statement: {self.anchor}", "  defaults:"]
        lines += [f"    {k} = {v}" for k, v in self.defaults.items()]
        lines.append("  output files:")
        lines += [f"    {k}: {v}" for k, v in self.columns.items()]
        return "\n".join(lines)


_COMMON = dict(seed=0, h=1e-3, horizon=1.0, csv_times="final")
_REPORT = {"report.json": "assertions, estimates with SEs, config echo", "summary.csv": "assertion, passed, lhs, rhs, tolerance"}

REGISTRY: dict[str, Experiment] = {}


def register(exp: Experiment) -> None:
    REGISTRY[exp.name] = exp


register(Experiment(
    "verify-martingale",
    "drift test of Theta~^-1 du Theta v on a catalog map",
    "martingale property of the transported differential of a space-time harmonic map",
    dict(_COMMON, space="flat", space_dim=1, map="x2-minus-t", n_paths=10_000),
    {**_REPORT, "drift.csv": "t0, t1, component, mean, se, z", "functionals.csv": "path, tau, reason, rep_a",
     "paths.csv": ENSEMBLE_COLUMNS},
    run_verify_martingale,
))
register(Experiment(
    "negative-control",
    "drift test with the Ricci damping removed; must detect the drift",
    "martingale property fails for an incorrectly damped transport",
    dict(_COMMON, space="sphere", space_dim=2, map="sphere-height", n_paths=10_000, drop_ricci=True),
    {**_REPORT, "drift.csv": "t0, t1, component, mean, se, z", "functionals.csv": "path, tau, reason, rep_a",
     "paths.csv": ENSEMBLE_COLUMNS},
    run_negative_control,
))
register(Experiment(
    "representation",
    "Monte Carlo estimate of du(0,x)v; with R also the stopped formula",
    "stochastic representation du(0,x) = E[Theta~^-1 du Theta] and its stopped form",
    dict(_COMMON, space="flat", space_dim=1, map="circle-sin", n_paths=100_000),
    {**_REPORT, "functionals.csv": "path, tau, reason, rep_a", "stopped.csv": "path, tau, reason, ell_stoch, a_def_a, ell_h0 (with R)",
     "paths.csv": ENSEMBLE_COLUMNS},
    run_representation,
))
register(Experiment(
    "theta-decay",
    "norm of the damped transport on a static Einstein space",
    "contraction |Theta_{0,t}| <= exp(-alpha t/2) under uniformly strict backward super Ricci flow",
    dict(_COMMON, space="sphere", space_dim=2, map="constant", n_paths=200),
    {**_REPORT, "decay.csv": "t, exp_bound, mean, min, max", "paths.csv": ENSEMBLE_COLUMNS},
    run_theta_decay,
))
register(Experiment(
    "cigar-closed-forms",
    "distance from the tip of the cigar and its heat-operator data",
    "closed forms for rho, d rho/dt and Delta rho on Hamilton's cigar; radial drift tends to 1",
    dict(space="cigar", space_dim=2, map="constant", seed=0),
    {**_REPORT, "cigar.csv": "abs_x, rho, drho_dt, laplacian_rho, radial_drift, rho_quadrature, drho_dt_fd, laplacian_rho_fd"},
    run_cigar_closed_forms,
))
register(Experiment(
    "cpr",
    "grid supremum c_p(R) on flat R^2 and on the cigar",
    "c_p(R) <= 5 pi^2/(4R^2) on flat R^2 and c_p(R) = O(1/R) on the cigar",
    dict(space="flat", space_dim=2, map="constant", horizon=1.0, seed=0, p=2.0),
    {**_REPORT, "cpr.csv": "space, p, R, c_p, R_c_p, bound"},
    run_cpr,
))
register(Experiment(
    "first-factor",
    "moment of the ell-driven stochastic integral against its closed-form bound",
    "first-factor moment bound with BDG constant 1 at p = 2",
    dict(_COMMON, space="flat", space_dim=2, map="constant", n_paths=20_000, R=5.0, p=2.0),
    {**_REPORT, "functionals.csv": "path, tau, reason, ell_h0, ell_T, ell_stoch, ell_isometry, ell_energy, cutoff_f",
     "paths.csv": ENSEMBLE_COLUMNS},
    run_first_factor,
))
register(Experiment(
    "second-factor",
    "moments of the deformed anti-development and the inverse target transport",
    "second-factor bounds (curvature integral, distance, bounded dilatation) and the inverse-damping bound",
    dict(_COMMON, space="flat", space_dim=1, n_paths=10_000, q=2.0),
    {**_REPORT, "functionals.csv": "map, path, tau, a_def_sq, dist_sq, energy_int, sf_int, L_int, invdamp_excess",
     "paths.csv": ENSEMBLE_COLUMNS},
    run_second_factor,
))
register(Experiment(
    "f-supermartingale",
    "E f^-p at the stopping time against E exp(c_p(R) T)",
    "supermartingale property of exp(-c_p(R) T) f^-p for the cosine cutoff",
    dict(_COMMON, map="constant", n_paths=5_000, p=1.0),
    {**_REPORT, "functionals.csv": "space, R, path, tau, f, T"},
    run_f_supermartingale,
))
register(Experiment(
    "liouville",
    "decay, sub-square-root and small-image routes to constancy",
    "Liouville pipelines: gradient decay, sub-square-root growth, maps into small balls",
    dict(_COMMON, n_paths=10_000, q=1.5),
    {**_REPORT, "decay.csv": "t, bound", "chain.csv": "R, c_p, chain", "moments.csv": "replicate, seed, mean, se"},
    run_liouville,
))
register(Experiment(
    "determinism",
    "re-runs another experiment twice and compares CSV bytes",
    "all randomness flows from the configured seed",
    dict(seed=0, inner="verify-martingale", n_paths=500, h=1e-3),
    {**_REPORT, "hashes.csv": "file, sha256_run1, sha256_run2, identical"},
    run_determinism,
))


def get_experiment(name: str) -> Experiment:
    if name not in REGISTRY:
        raise KeyError(name)
    return REGISTRY[name]


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def output_dir(cfg: ExperimentConfig, flag: Optional[str] = None) -> str:
    """Precedence: command-line flag, then the environment variable, then the config file, then ./runs/<name>."""
    if flag:
        return flag
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return os.path.join(env, cfg.experiment)
    if cfg.out:
        return cfg.out
    return os.path.join("runs", cfg.experiment)


def write_outcome(out: Outcome, directory, cfg: ExperimentConfig) -> list[str]:
    """Write report.json, summary.csv, the tables and the ensemble CSVs; returns the file names."""
    os.makedirs(directory, exist_ok=True)
    out.report.to_json(os.path.join(directory, "report.json"))
    summary = Table(
        ["assertion", "passed", "lhs", "rhs", "tolerance"],
        [[a.name, a.passed, a.lhs, a.rhs, a.tolerance] for a in out.report.assertions],
    )
    summary.write(os.path.join(directory, "summary.csv"))
    names = ["report.json", "summary.csv"]
    for name, table in out.tables.items():
        table.write(os.path.join(directory, name))
        names.append(name)
    for name, (res, idx) in out.ensembles.items():
        res.to_csv(os.path.join(directory, name), idx)
        names.append(name)
    return names


def run_experiment(cfg: ExperimentConfig, directory: Optional[str] = None) -> Outcome:
    """Resolve defaults, run and (when ``directory`` is given) write the artifacts."""
    exp = get_experiment(cfg.experiment)
    resolved = exp.resolve(cfg)
    out = exp.run(resolved)
    if directory is not None:
        write_outcome(out, directory, resolved)
    return out


__all__ = [
    "ExperimentConfig",
    "Experiment",
    "Outcome",
    "REGISTRY",
    "StharmError",
    "get_experiment",
    "output_dir",
    "run_experiment",
    "write_outcome",
]

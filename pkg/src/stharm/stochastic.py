"""g(t)-Brownian motion with its transports, stepped pathwise over a batch of paths.

A :class:`PathState` holds a whole batch of independent paths (leading axis).
One call to :func:`step` advances every path by one time step ``h``:

* position by Euler-Maruyama with the Ito drift of 1/2 Delta_{g(t)};
* frame, Riemann transport and damped transport by an implicit-midpoint
  (Cayley) step of their covariant equations, with Christoffel symbols
  evaluated at the midpoint of the increment (a Stratonovich discretisation);
* the target transport along u(t, X_t) the same way, followed by the
  curvature damping;
* the anti-development and the deformed anti-development as Ito sums.

Chart coordinates are used throughout: ``theta`` maps T_{x0}M coordinates
to T_{X_t}M coordinates, ``theta_tilde`` maps T_{u(0,x0)}N to T_{u(t,X_t)}N.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from .errors import CapabilityError, DomainError, NumericalError
from .geometry import EvolvingManifold, MetricSample, TargetManifold
from .harmonic import SpaceTimeMap
from .linalg import cayley_apply, cholesky, inv_small, inv_sqrt_spd, matvec, operator_norm, solve_small


class StopReason(enum.IntEnum):
    ALIVE = 0
    HORIZON = 1
    RADIUS = 2
    CHART = 3
    TARGET_CHART = 4
    OBSERVER = 5
    ERROR = 6


@dataclass(frozen=True)
class StepConfig:
    h: float
    seed: int = 0
    reorthonormalize_every: int = 1
    drop_ricci: bool = False  # negative control: damp theta without the Ricci term

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("time step h must be positive")
        if self.reorthonormalize_every < 1:
            raise ValueError("reorthonormalize_every must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class StoppingRule:
    horizon: float
    R: Optional[float] = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive or None")


def evaluate_at(fn: Callable[[float, np.ndarray], np.ndarray], times, x: np.ndarray) -> np.ndarray:
    """fn(times[i], x[i]) for every path, calling fn once per distinct time."""
    times = np.asarray(times, dtype=float)
    distinct = np.unique(times)
    if distinct.size == 1:
        return fn(float(distinct[0]), x)
    out = None
    for s in distinct:
        idx = times == s
        val = np.asarray(fn(float(s), x[idx]))
        if out is None:
            out = np.empty((x.shape[0],) + val.shape[1:], dtype=val.dtype)
        out[idx] = val
    return out


@dataclass
class PathState:
    """A batch of paths; every array has the path index as leading axis.

    The transports are kept in factored form: ``frame`` E_t is a
    g(t)-orthonormal frame moved by the Riemann transport equation, so that
    P = E_t E_0^{-1}, and ``q`` is the damping factor in frame coordinates,
    Theta = E_t q E_0^{-1}.  On the target, ``frame_n`` and ``q_tilde`` play
    the same roles for theta_tilde.  ``p_riem``, ``theta`` and
    ``theta_tilde`` are refreshed after every step.
    """

    t: float
    x: np.ndarray
    frame: np.ndarray
    p_riem: np.ndarray
    theta: np.ndarray
    b: np.ndarray
    y: np.ndarray
    theta_tilde: np.ndarray
    a_def: np.ndarray
    alive: np.ndarray
    q: np.ndarray
    frame_n: np.ndarray
    q_tilde: np.ndarray
    x0: np.ndarray
    g0: np.ndarray
    h0: np.ndarray
    frame0_inv: np.ndarray
    frame_n0: np.ndarray
    steps: int = 0
    stop_time: np.ndarray = None
    reason: np.ndarray = None

    _PER_PATH = (
        "x", "frame", "p_riem", "theta", "b", "y", "theta_tilde", "a_def",
        "alive", "q", "frame_n", "q_tilde", "stop_time", "reason",
    )

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def clock(self) -> np.ndarray:
        """Per-path time: the current time for live paths, the stopping time for stopped ones."""
        return np.where(np.isnan(self.stop_time), self.t, self.stop_time)

    def copy(self) -> "PathState":
        return replace(self, **{k: getattr(self, k).copy() for k in self._PER_PATH})

    def theta_norm(self, space: EvolvingManifold) -> np.ndarray:
        """Operator norm of theta from (T_x0 M, g(0)) to (T_Xt M, g(t))."""
        return operator_norm(self.theta, self.g0, evaluate_at(space.metric, self.clock, self.x))

    def theta_tilde_inv_norm(self, target: TargetManifold) -> np.ndarray:
        """Operator norm of theta_tilde^{-1} from (T_yt N, h) to (T_y0 N, h)."""
        return operator_norm(inv_small(self.theta_tilde), target.metric(self.y), self.h0)

    def frame_defect(self, space: EvolvingManifold) -> np.ndarray:
        """max |E^T g E - I| per path."""
        g = evaluate_at(space.metric, self.clock, self.x)
        gram = np.swapaxes(self.frame, -1, -2) @ g @ self.frame
        return np.max(np.abs(gram - np.eye(self.x.shape[-1])), axis=(-1, -2))


def init_path(
    space: EvolvingManifold,
    target: TargetManifold,
    u: SpaceTimeMap,
    x0,
    n_paths: int = 1,
) -> PathState:
    """All paths start at x0 with a g(0)-orthonormal Cholesky frame and identity transports."""
    x0 = space.check_domain(0.0, np.asarray(x0, dtype=float).reshape(space.dim))
    m, n = space.dim, u.target_dim
    if u.source_dim != m:
        raise DomainError(f"map {u.name} has source dimension {u.source_dim}, space has {m}")
    if n != target.dim:
        raise DomainError(f"map {u.name} has target dimension {n}, target has {target.dim}")
    s = space.metric_at(0.0, x0[None, :])
    frame = cholesky(inv_small(s.g[0]))
    y0 = u.u(0.0, x0[None, :])[0]
    if not np.all(target.contains(y0)):
        raise DomainError("u(0, x0) lies outside the target chart")
    h0 = target.metric(y0)
    frame_n = cholesky(inv_small(h0))

    def tile(a):
        return np.broadcast_to(a, (n_paths,) + a.shape).copy()

    return PathState(
        t=0.0,
        x=tile(x0),
        frame=tile(frame),
        p_riem=tile(np.eye(m)),
        theta=tile(np.eye(m)),
        b=np.zeros((n_paths, m)),
        y=tile(y0),
        theta_tilde=tile(np.eye(n)),
        a_def=np.zeros((n_paths, n)),
        alive=np.ones(n_paths, dtype=bool),
        q=tile(np.eye(m)),
        frame_n=tile(frame_n),
        q_tilde=tile(np.eye(n)),
        x0=x0,
        g0=s.g[0],
        h0=h0,
        frame0_inv=inv_small(frame),
        frame_n0=frame_n,
        steps=0,
        stop_time=np.full(n_paths, np.nan),
        reason=np.zeros(n_paths, dtype=np.int8),
    )


@dataclass
class StepInfo:
    """Per-step quantities shared with observers (all evaluated at the start of the step)."""

    t: float
    h: float
    active: np.ndarray  # paths that actually moved in this step
    sample: MetricSample
    du: np.ndarray  # (P, n, m)
    noise: np.ndarray  # E dW, chart coordinates of the martingale part of dX
    dB: np.ndarray  # anti-development increment in T_x0 M
    theta_tilde_inv: np.ndarray


def orthonormalize(frame: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Closest g-orthonormal frame: E (E^T g E)^{-1/2}."""
    gram = np.swapaxes(frame, -1, -2) @ g @ frame
    return frame @ inv_sqrt_spd(gram)


def _symmetric_damping(frame: np.ndarray, form: np.ndarray) -> np.ndarray:
    """Frame coordinates E^T S E of a symmetric bilinear form S."""
    return np.swapaxes(frame, -1, -2) @ form @ frame


def _advance(
    state: PathState,
    space: EvolvingManifold,
    target: TargetManifold,
    u: SpaceTimeMap,
    cfg: StepConfig,
    dW: np.ndarray,
) -> tuple[PathState, StepInfo]:
    h = cfg.h
    t = state.t
    m, n = space.dim, target.dim
    x, frame = state.x, state.frame
    steps = state.steps + 1
    project = steps % cfg.reorthonormalize_every == 0
    with np.errstate(all="ignore"):
        s = space.sample(t, x)
        ginv = inv_small(s.g)
        drift = -0.5 * np.einsum("...jk,...ijk->...i", ginv, s.christoffel)
        noise = matvec(frame, dW)
        dx = drift * h + noise
        x_new = x + dx

        # Riemann transport of the frame (Stratonovich midpoint) plus the metric correction
        mid = space.sample(t + 0.5 * h, x + 0.5 * dx)
        a_frame = np.einsum("...ijk,...j->...ik", mid.christoffel, dx)
        a_frame = a_frame + 0.5 * h * (inv_small(mid.g) @ mid.dg_dt)
        frame_new = cayley_apply(a_frame, frame)
        if project:
            frame_new = orthonormalize(frame_new, space.metric(t + h, x_new))

        # damping of theta in frame coordinates
        form = -mid.dg_dt if cfg.drop_ricci else mid.ricci - mid.dg_dt
        frame_mid = 0.5 * (frame + frame_new)
        q_new = cayley_apply(0.5 * h * _symmetric_damping(frame_mid, form), state.q)

        b_inc = solve_small(state.p_riem, noise)
        b_new = state.b + b_inc

        # target side
        du = u.du(t, x)
        y_new = u.u(t + h, x_new)
        dy = y_new - state.y
        tgam = target.christoffel(state.y + 0.5 * dy)
        frame_n = state.frame_n
        frame_n_new = cayley_apply(np.einsum("...ijk,...j->...ik", tgam, dy), frame_n)
        if project:
            frame_n_new = orthonormalize(frame_n_new, target.metric(y_new))
        # curvature damping sum_i R(., du xi_i) du xi_i, in h-orthonormal frame coordinates
        damp = target.damping_operator(state.y, du @ frame)
        damp = np.swapaxes(frame_n, -1, -2) @ target.metric(state.y) @ damp @ frame_n
        damp = 0.5 * (damp + np.swapaxes(damp, -1, -2))
        q_tilde_new = cayley_apply(0.5 * h * damp, state.q_tilde)

        tt_inv = state.frame_n0 @ inv_small(state.q_tilde) @ inv_small(frame_n)
        a_new = state.a_def + matvec(tt_inv, matvec(du, noise))

        p_new = frame_new @ state.frame0_inv
        theta_new = frame_new @ q_new @ state.frame0_inv
        tt_new = frame_n_new @ q_tilde_new @ inv_small(state.frame_n0)

    alive = state.alive
    in_chart = space.in_chart(x_new)
    in_target = target.contains(y_new)
    finite = (
        np.all(np.isfinite(x_new), axis=-1)
        & np.all(np.isfinite(theta_new), axis=(-1, -2))
        & np.all(np.isfinite(tt_new), axis=(-1, -2))
        & np.all(np.isfinite(a_new), axis=-1)
    )
    active = alive & in_chart & in_target & finite
    reason = state.reason.copy()
    stop_time = state.stop_time.copy()
    for mask, code in (
        (alive & ~in_chart, StopReason.CHART),
        (alive & in_chart & ~in_target, StopReason.TARGET_CHART),
        (alive & in_chart & in_target & ~finite, StopReason.ERROR),
    ):
        reason[mask] = code
        stop_time[mask] = t

    def pick(new, old):
        sel = active.reshape((-1,) + (1,) * (new.ndim - 1))
        return np.where(sel, new, old)

    new_state = replace(
        state,
        t=steps * h,
        x=pick(x_new, x),
        frame=pick(frame_new, frame),
        p_riem=pick(p_new, state.p_riem),
        theta=pick(theta_new, state.theta),
        b=pick(b_new, state.b),
        y=pick(y_new, state.y),
        theta_tilde=pick(tt_new, state.theta_tilde),
        a_def=pick(a_new, state.a_def),
        alive=active,
        q=pick(q_new, state.q),
        frame_n=pick(frame_n_new, frame_n),
        q_tilde=pick(q_tilde_new, state.q_tilde),
        steps=steps,
        stop_time=stop_time,
        reason=reason,
    )
    info = StepInfo(t, h, active, s, du, noise, b_inc, tt_inv)
    return new_state, info


def step(
    path: PathState,
    space: EvolvingManifold,
    target: TargetManifold,
    u: SpaceTimeMap,
    cfg: StepConfig,
    dW: np.ndarray,
) -> PathState:
    """Advance every live path by one step of size cfg.h driven by dW ~ N(0, h I)."""
    dW = np.asarray(dW, dtype=float).reshape(path.n_paths, space.dim)
    if not np.any(path.alive):
        raise DomainError("no live paths to step")
    new, _ = _advance(path, space, target, u, cfg, dW)
    return new


def stop_check(path: PathState, space: EvolvingManifold, stop: StoppingRule) -> PathState:
    """Stop live paths whose distance d_{g(t)}(x0, X_t) has reached R (first exit on the grid)."""
    if stop.R is None:
        return path
    if not space.has_distance:
        raise CapabilityError(f"{space.name} has no analytic distance; tau_R is unavailable")
    live = path.alive
    if not np.any(live):
        return path
    d = np.full(path.n_paths, -np.inf)
    d[live] = space.distance(path.t, path.x0, path.x[live])
    hit = live & (d >= stop.R)
    if np.any(hit):
        path.alive = live & ~hit
        path.reason[hit] = StopReason.RADIUS
        path.stop_time[hit] = path.t
    return path


# ---------------------------------------------------------------------------
# ensemble driver
# ---------------------------------------------------------------------------

class Observer(Protocol):
    """Pathwise accumulator driven alongside the SDE (one instance per chunk of paths)."""

    def init(self, state: PathState) -> None: ...

    def advance(self, prev: PathState, new: PathState, info: StepInfo) -> None: ...

    def snapshot(self, state: PathState) -> dict: ...

    def finished(self) -> Optional[np.ndarray]: ...


def path_noise(seed: int, path_index: int, n_steps: int, dim: int, h: float) -> np.ndarray:
    """Brownian increments of one path, from a counter-based stream keyed on (seed, path index)."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_index)])))
    return gen.standard_normal((n_steps, dim)) * np.sqrt(h)


@dataclass
class EnsembleResult:
    """Recorded functionals: ``records[name]`` is (n_paths, n_times, ...), ``final[name]`` is (n_paths, ...)."""

    times: np.ndarray
    records: dict
    final: dict
    config: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.final["tau"].shape[0]

    @property
    def n_errors(self) -> int:
        return int(np.sum(self.final["reason"] == StopReason.ERROR))

    def csv_header(self) -> list[str]:
        cols = ["path", "t"]
        for key in CSV_FIELDS:
            arr = self.records[key]
            cols += [key] if arr.ndim == 2 else [f"{key}_{i}" for i in range(arr.shape[-1])]
        return cols

    def to_csv(self, path, time_index: Optional[Sequence[int]] = None) -> None:
        """One row per recorded time per path; see :data:`CSV_FIELDS`."""
        with open(path, "w", newline="") as fh:
            write_ensemble_csv(self, fh, time_index)


CSV_FIELDS = ("x", "y", "theta_norm", "theta_tilde_inv_norm", "b", "a_def")


def write_ensemble_csv(result: EnsembleResult, fh, time_index: Optional[Sequence[int]] = None) -> None:
    """Write ``path, t`` and the :data:`CSV_FIELDS` columns; ``time_index`` selects record times (default all)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(result.csv_header())
    cols = []
    for key in CSV_FIELDS:
        arr = result.records[key]
        cols.append(arr[..., None] if arr.ndim == 2 else arr)
    table = np.concatenate(cols, axis=-1)
    ks = range(len(result.times)) if time_index is None else list(time_index)
    for p in range(table.shape[0]):
        for k in ks:
            w.writerow([p, repr(float(result.times[k]))] + [repr(float(v)) for v in table[p, k]])


def _builtin_snapshot(state: PathState, space: EvolvingManifold, target: TargetManifold) -> dict:
    with np.errstate(all="ignore"):
        return {
            "x": state.x.copy(),
            "y": state.y.copy(),
            "theta_norm": state.theta_norm(space),
            "theta_tilde_inv_norm": state.theta_tilde_inv_norm(target),
            "b": state.b.copy(),
            "a_def": state.a_def.copy(),
            "alive": state.alive.copy(),
        }


def run_ensemble(
    space: EvolvingManifold,
    target: TargetManifold,
    u: SpaceTimeMap,
    x0,
    cfg: StepConfig,
    stop: StoppingRule,
    n_paths: int,
    record_times: Optional[Sequence[float]] = None,
    observers: Sequence[Callable[[], Observer]] = (),
    chunk_size: int = 2048,
) -> EnsembleResult:
    """Simulate n_paths independent paths up to tau = min(tau_R, horizon, observer stops).

    Path ``j`` is driven by :func:`path_noise` ``(cfg.seed, j)`` so results do
    not depend on ``chunk_size``.  Recorded values after a path has stopped
    are its values at the stopping time.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    h = cfg.h
    n_steps = int(round(stop.horizon / h))
    if record_times is None:
        record_times = [0.0, n_steps * h]
    rec_steps = sorted({int(round(float(t) / h)) for t in record_times})
    if rec_steps[0] < 0 or rec_steps[-1] > n_steps:
        raise ValueError("record times must lie in [0, horizon]")
    times = np.array([k * h for k in rec_steps])
    rec_index = {k: i for i, k in enumerate(rec_steps)}

    chunks_rec: list[dict] = []
    chunks_fin: list[dict] = []
    for start in range(0, n_paths, chunk_size):
        idx = range(start, min(start + chunk_size, n_paths))
        noise = np.stack([path_noise(cfg.seed, j, n_steps, space.dim, h) for j in idx], axis=1)
        state = init_path(space, target, u, x0, len(idx))
        obs = [factory() for factory in observers]
        for ob in obs:
            ob.init(state)
        rec: dict = {}

        def record(slot, st):
            snap = _builtin_snapshot(st, space, target)
            for ob in obs:
                snap.update(ob.snapshot(st))
            for key, val in snap.items():
                if key not in rec:
                    rec[key] = np.zeros((len(idx), len(rec_steps)) + val.shape[1:], dtype=val.dtype)
                rec[key][:, slot] = val

        if 0 in rec_index:
            record(rec_index[0], state)
        last_recorded = 0
        for k in range(n_steps):
            if not np.any(state.alive):
                break
            new, info = _advance(state, space, target, u, cfg, noise[k])
            for ob in obs:
                ob.advance(state, new, info)
            state = stop_check(new, space, stop)
            for ob in obs:
                done = ob.finished()
                if done is not None:
                    hit = state.alive & done
                    if np.any(hit):
                        state.alive = state.alive & ~hit
                        state.reason[hit] = StopReason.OBSERVER
                        state.stop_time[hit] = state.t
            if (k + 1) in rec_index:
                record(rec_index[k + 1], state)
                last_recorded = k + 1
        for k in rec_steps:
            if k > last_recorded:
                record(rec_index[k], state)
        still = state.alive
        state.reason[still] = StopReason.HORIZON
        state.stop_time[still] = state.t
        fin = _builtin_snapshot(state, space, target)
        for ob in obs:
            fin.update(ob.snapshot(state))
        fin["tau"] = state.stop_time.copy()
        fin["reason"] = state.reason.copy()
        chunks_rec.append(rec)
        chunks_fin.append(fin)

    records = {k: np.concatenate([c[k] for c in chunks_rec], axis=0) for k in chunks_rec[0]}
    final = {k: np.concatenate([c[k] for c in chunks_fin], axis=0) for k in chunks_fin[0]}
    if np.all(final["reason"] == StopReason.ERROR):
        raise NumericalError("every path failed with non-finite values")
    config = {
        "space": space.name,
        "target": target.name,
        "map": u.name,
        "x0": np.asarray(x0, dtype=float).tolist(),
        "seed": int(cfg.seed),
        "h": h,
        "n_paths": n_paths,
        "horizon": stop.horizon,
        "R": stop.R,
    }
    return EnsembleResult(times, records, final, config)


def simulate(space, target, u, x0, cfg: StepConfig, stop: StoppingRule, n_paths: int, **kwargs) -> EnsembleResult:
    """Alias of :func:`run_ensemble` with keyword arguments only after n_paths."""
    return run_ensemble(space, target, u, x0, cfg, stop, n_paths, **kwargs)

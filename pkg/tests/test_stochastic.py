import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from stharm.errors import CapabilityError, DomainError
from stharm.geometry import EvolvingManifold, make_space, make_target
from stharm.harmonic import catalog_map, constant_map
from stharm.linalg import inv_sqrt_spd
from stharm.stochastic import (
    StepConfig,
    StopReason,
    StoppingRule,
    evaluate_at,
    init_path,
    orthonormalize,
    path_noise,
    run_ensemble,
    step,
    write_ensemble_csv,
)


def _flat(dim=2):
    return make_space("flat", dim), make_target("flat", 1), constant_map([0.0], dim)


def test_config_validation():
    with pytest.raises(ValueError):
        StepConfig(h=0.0)
    with pytest.raises(ValueError):
        StepConfig(h=0.1, reorthonormalize_every=0)
    with pytest.raises(ValueError):
        StepConfig(h=0.1, seed=-1)
    with pytest.raises(ValueError):
        StoppingRule(horizon=0.0)
    with pytest.raises(ValueError):
        StoppingRule(horizon=1.0, R=-2.0)


def test_path_noise_is_keyed_on_seed_and_index():
    a = path_noise(7, 3, 50, 2, 0.01)
    np.testing.assert_array_equal(a, path_noise(7, 3, 50, 2, 0.01))
    assert not np.array_equal(a, path_noise(7, 4, 50, 2, 0.01))
    assert not np.array_equal(a, path_noise(8, 3, 50, 2, 0.01))
    assert a.shape == (50, 2)


def test_flat_space_paths_are_the_driving_noise():
    space, target, u = _flat(2)
    res = run_ensemble(space, target, u, [0.5, -0.5], StepConfig(0.01, seed=3), StoppingRule(0.5), 5)
    for j in range(5):
        w = path_noise(3, j, 50, 2, 0.01).sum(axis=0)
        np.testing.assert_allclose(res.final["b"][j], w, atol=1e-12)
        np.testing.assert_allclose(res.final["x"][j], [0.5, -0.5] + w, atol=1e-12)
    np.testing.assert_allclose(res.final["theta_norm"], 1.0)
    assert np.all(res.final["reason"] == StopReason.HORIZON)
    np.testing.assert_allclose(res.final["tau"], 0.5)


def test_results_do_not_depend_on_chunk_size():
    space, target, u = make_space("sphere", 2), make_target("flat", 1), catalog_map("sphere-height", dim=2)
    cfg, stop = StepConfig(0.02, seed=11), StoppingRule(0.4)
    a = run_ensemble(space, target, u, [0.1, 0.0], cfg, stop, 9, chunk_size=4)
    b = run_ensemble(space, target, u, [0.1, 0.0], cfg, stop, 9, chunk_size=64)
    for key in ("x", "y", "theta_norm", "b", "a_def"):
        np.testing.assert_array_equal(a.final[key], b.final[key])


def test_sphere_height_mean_decays():
    space, target, u = make_space("sphere", 2), make_target("flat", 1), constant_map([0.0], 2)
    t = 0.5
    res = run_ensemble(space, target, u, [0.0, 0.0], StepConfig(0.005, seed=1), StoppingRule(t), 2000)
    z = oracles.stereo_height(res.final["x"])
    se = z.std(ddof=1) / np.sqrt(z.size)
    assert abs(z.mean() - oracles.sphere_height_mean(t, 2)) < 4 * se + 0.01


@pytest.mark.parametrize("dim", [2, 3])
def test_damped_transport_on_unit_sphere(dim):
    space, target, u = make_space("sphere", dim), make_target("flat", 1), constant_map([0.0], dim)
    res = run_ensemble(space, target, u, np.zeros(dim), StepConfig(0.01, seed=2), StoppingRule(1.0), 40)
    # Ric = (dim - 1) g, so |Theta_t| = exp(-(dim - 1) t / 2) on every path
    np.testing.assert_allclose(res.final["theta_norm"], np.exp(-0.5 * (dim - 1)), rtol=2e-2)
    dropped = run_ensemble(
        space, target, u, np.zeros(dim), StepConfig(0.01, seed=2, drop_ricci=True), StoppingRule(1.0), 40
    )
    np.testing.assert_allclose(dropped.final["theta_norm"], 1.0, rtol=1e-8)


def test_frames_stay_orthonormal():
    space, target, u = make_space("cigar"), make_target("flat", 1), catalog_map("cigar-linear")
    state = init_path(space, target, u, [0.3, 0.2], 16)
    cfg = StepConfig(0.01)
    for k in range(40):
        state = step(state, space, target, u, cfg, path_noise(0, k, 1, 32, 0.01).reshape(16, 2))
    assert np.max(state.frame_defect(space)) < 1e-12


def test_radius_stop_is_first_grid_exit():
    space, target, u = _flat(1)
    R, h = 0.5, 0.01
    res = run_ensemble(space, target, u, [0.0], StepConfig(h, seed=5), StoppingRule(2.0, R=R), 30)
    for j in range(30):
        walk = np.cumsum(path_noise(5, j, 200, 1, h)[:, 0])
        hits = np.nonzero(np.abs(walk) >= R)[0]
        if hits.size:
            assert res.final["reason"][j] == StopReason.RADIUS
            assert res.final["tau"][j] == pytest.approx((hits[0] + 1) * h)
            assert res.final["x"][j, 0] == pytest.approx(walk[hits[0]])
        else:
            assert res.final["reason"][j] == StopReason.HORIZON


def test_chart_exit_freezes_the_path():
    space, target, u = make_space("hyperbolic", 2), make_target("flat", 1), constant_map([0.0], 2)
    res = run_ensemble(space, target, u, [0.9, 0.0], StepConfig(0.05, seed=0), StoppingRule(2.0), 60)
    out = res.final["reason"] == StopReason.CHART
    assert np.any(out)
    assert np.all(space.in_chart(res.final["x"]))
    # the stopping time is the last accepted step, a multiple of h
    tau = res.final["tau"][out]
    np.testing.assert_allclose(tau / 0.05, np.round(tau / 0.05), atol=1e-9)


def test_records_after_stopping_hold_stopped_values():
    space, target, u = _flat(1)
    res = run_ensemble(
        space, target, u, [0.0], StepConfig(0.01, seed=5), StoppingRule(1.0, R=0.3), 20,
        record_times=np.linspace(0, 1, 11),
    )
    stopped = res.final["reason"] == StopReason.RADIUS
    assert np.any(stopped)
    np.testing.assert_array_equal(res.records["x"][stopped, -1], res.final["x"][stopped])


def test_stopping_needs_a_distance():
    plain = EvolvingManifold("plain", 1, lambda t, x: np.broadcast_to(np.eye(1), np.shape(x)[:-1] + (1, 1)))
    with pytest.raises(CapabilityError):
        run_ensemble(plain, make_target("flat", 1), constant_map([0.0]), [0.0], StepConfig(0.1), StoppingRule(1.0, R=1.0), 2)


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        init_path(make_space("flat", 2), make_target("flat", 1), constant_map([0.0], 1), [0.0, 0.0])


def test_evaluate_at_uses_each_paths_time():
    calls = []

    def fn(t, x):
        calls.append(t)
        return t + x[:, 0]

    out = evaluate_at(fn, [0.0, 1.0, 0.0, 2.0], np.arange(4.0)[:, None])
    np.testing.assert_array_equal(out, [0.0, 2.0, 2.0, 5.0])
    assert sorted(calls) == [0.0, 1.0, 2.0]


def test_csv_layout():
    space, target, u = _flat(2)
    res = run_ensemble(space, target, u, [0.0, 0.0], StepConfig(0.1, seed=0), StoppingRule(0.2), 3)
    assert res.csv_header() == [
        "path", "t", "x_0", "x_1", "y_0", "theta_norm", "theta_tilde_inv_norm", "b_0", "b_1", "a_def_0",
    ]
    buf = io.StringIO()
    write_ensemble_csv(res, buf, time_index=[-1])
    rows = buf.getvalue().splitlines()
    assert len(rows) == 1 + 3
    assert rows[1].split(",")[1] == repr(0.2)


# -- linear algebra helpers -------------------------------------------------

spd_seed = st.integers(0, 2**32 - 1)


@given(spd_seed, st.integers(1, 4))
def test_inverse_square_root(seed, m):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, m, m))
    s = a @ np.swapaxes(a, -1, -2) + 0.5 * np.eye(m)
    r = inv_sqrt_spd(s)
    np.testing.assert_allclose(r @ s @ r, np.broadcast_to(np.eye(m), s.shape), atol=1e-9)
    np.testing.assert_allclose(r, np.swapaxes(r, -1, -2), atol=1e-12)


@given(spd_seed)
def test_orthonormalize_returns_orthonormal_frame(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 2))
    g = a @ a.T + np.eye(2)
    e = np.eye(2) + 0.1 * rng.normal(size=(2, 2))
    f = orthonormalize(e, g)
    np.testing.assert_allclose(f.T @ g @ f, np.eye(2), atol=1e-12)
    # an orthonormal frame is a fixed point
    np.testing.assert_allclose(orthonormalize(f, g), f, atol=1e-12)

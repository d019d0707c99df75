import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from stharm.errors import CapabilityError, DomainError
from stharm.geometry import make_space, make_target
from stharm.harmonic import (
    CFLWarning,
    PeriodicGrid,
    catalog_map,
    dilatation,
    dilatation_ratio,
    energy_density,
    growth_check,
    harmonic_residual,
    heat_flow_integrate,
    pullback_eigenvalues,
    time_reverse,
)

# (map id, params, source, source dim, target, target dim)
CASES = [
    ("x2-minus-t", {}, "flat", 1, "flat", 1),
    ("circle-sin", {"amplitude": 0.7}, "flat", 1, "flat", 1),
    ("linear", {"matrix": [[1.0, 2.0], [0.5, -1.0]]}, "flat", 2, "flat", 2),
    ("geodesic-h2", {"speed": 0.8}, "flat", 1, "hyperbolic", 2),
    ("geodesic-s2", {"speed": 0.5, "direction": 0.4}, "flat", 1, "sphere", 2),
    ("small-s2", {"eps": 0.3}, "flat", 1, "sphere", 2),
    ("sphere-height", {"dim": 2}, "sphere", 2, "flat", 1),
    ("sphere-height", {"dim": 3}, "sphere", 3, "flat", 1),
    ("cigar-linear", {"eps": 0.2}, "cigar", 2, "flat", 1),
]


def _samples(dim, rng):
    return [(t, rng.uniform(-0.5, 0.5, size=(6, dim))) for t in (0.0, 0.3, 1.0)]


@pytest.mark.parametrize("map_id,params,src,m,tgt,n", CASES)
def test_catalog_maps_solve_the_backward_equation(map_id, params, src, m, tgt, n):
    u = catalog_map(map_id, **params)
    res = harmonic_residual(u, make_space(src, m), make_target(tgt, n), _samples(m, np.random.default_rng(0)))
    assert res < 1e-10


@pytest.mark.parametrize("map_id,params,src,m,tgt,n", CASES)
def test_differentials_match_finite_differences(map_id, params, src, m, tgt, n):
    u = catalog_map(map_id, **params)
    x = np.random.default_rng(1).uniform(-0.5, 0.5, size=(4, m))
    eps = 1e-6
    fd = np.stack([(u.u(0.2, x + eps * e) - u.u(0.2, x - eps * e)) / (2 * eps) for e in np.eye(m)], axis=-1)
    np.testing.assert_allclose(u.du(0.2, x), fd, atol=1e-8)
    fd_t = (u.u(0.2 + eps, x) - u.u(0.2 - eps, x)) / (2 * eps)
    np.testing.assert_allclose(u.dudt(0.2, x), fd_t, atol=1e-8)
    hess_fd = np.stack([(u.du(0.2, x + eps * e) - u.du(0.2, x - eps * e)) / (2 * eps) for e in np.eye(m)], axis=-1)
    np.testing.assert_allclose(u.hessian(0.2, x), hess_fd, atol=1e-6)


def test_dropping_a_term_breaks_harmonicity():
    u = catalog_map("sphere-height", dim=2)
    flat = make_space("flat", 2)
    res = harmonic_residual(u, flat, make_target("flat", 1), _samples(2, np.random.default_rng(2)))
    assert res > 1e-2


def test_unknown_map():
    with pytest.raises(DomainError):
        catalog_map("spiral")


# -- dilatation --------------------------------------------------------------

@given(st.integers(0, 10_000))
def test_pullback_eigenvalues_are_frame_invariant(seed):
    rng = np.random.default_rng(seed)
    m, n = 3, 2
    du = rng.normal(size=(n, m))
    a = rng.normal(size=(m, m))
    g = a @ a.T + m * np.eye(m)
    h = np.diag(rng.uniform(0.5, 2.0, size=n))
    lam = pullback_eigenvalues(du, g, h)
    # change of coordinates x = P x': du -> du P, g -> P^T g P
    p = special_ortho_group.rvs(m, random_state=seed) * rng.uniform(0.5, 2.0)
    lam2 = pullback_eigenvalues(du @ p, p.T @ g @ p, h)
    np.testing.assert_allclose(lam, lam2, atol=1e-10)
    assert np.all(np.diff(lam) <= 1e-12)
    assert np.sum(lam) == pytest.approx(float(energy_density(du, g, h)), rel=1e-10)


def test_dilatation_ratio_conventions():
    np.testing.assert_allclose(dilatation_ratio(np.array([[2.0, 1.0, 1.0], [3.0, 0.0, 0.0], [0.0, 0.0, 0.0]])), [1.0, 0.0, 0.0])


def test_rank_one_map_has_zero_ratio():
    u = catalog_map("cigar-linear", eps=0.3)
    prof = dilatation(u, make_space("cigar"), make_target("flat", 1), 0.0, np.array([[0.5, 0.2]]))
    assert prof.K[0] == 0.0
    assert prof.lambdas[0, 0] > 0


def test_conformal_map_ratio():
    u = catalog_map("linear", matrix=[[2.0, 0.0], [0.0, 2.0]])
    prof = dilatation(u, make_space("flat", 2), make_target("flat", 2), 0.0, np.zeros((1, 2)))
    np.testing.assert_allclose(prof.lambdas[0], [4.0, 4.0])
    assert prof.K[0] == pytest.approx(1.0)


# -- growth ------------------------------------------------------------------

def test_growth_check_bounded_map():
    u = catalog_map("small-s2", eps=0.2)
    space, target = make_space("flat", 1), make_target("sphere", 2)
    z = np.linspace(-3, 3, 41)[:, None]
    rep = growth_check(u, space, target, np.zeros(1), lambda r: np.full_like(r, 1.0), [(0.0, z), (0.5, z)])
    assert rep.inequality_holds and rep.ratio_decreasing and rep.flag


def test_growth_check_detects_linear_growth():
    u = catalog_map("linear", matrix=[[1.0]])
    space, target = make_space("flat", 1), make_target("flat", 1)
    z = np.linspace(-5, 5, 41)[:, None]
    rep = growth_check(u, space, target, np.zeros(1), lambda r: 0.5 * r, [(0.0, z)])
    assert not rep.inequality_holds and rep.max_excess > 0
    rep = growth_check(u, space, target, np.zeros(1), lambda r: r, [(0.0, z)])
    assert rep.inequality_holds and not rep.ratio_decreasing and not rep.flag


# -- time reversal and grid flow ---------------------------------------------

def test_time_reverse_round_trip():
    u = catalog_map("sphere-height", dim=2)
    r = time_reverse(u, 1.0)
    x = np.array([[0.2, 0.1]])
    np.testing.assert_allclose(r.u(0.25, x), u.u(0.75, x))
    np.testing.assert_allclose(r.dudt(0.25, x), -u.dudt(0.75, x))
    rr = time_reverse(r, 1.0)
    assert rr.name == u.name
    np.testing.assert_allclose(rr.u(0.4, x), u.u(0.4, x))
    with pytest.raises(DomainError):
        r.u(1.5, x)


def test_heat_flow_decays_first_mode():
    grid = PeriodicGrid((2 * np.pi,), (64,))
    nodes = grid.nodes()
    u0 = np.sin(nodes)
    flow = heat_flow_integrate(u0, make_space("flat", 1), make_target("flat", 1), 1.0, 1e-3, grid)
    np.testing.assert_allclose(flow.values[-1], np.exp(-0.5) * u0, atol=2e-3)
    # reversed flow solves the backward equation
    rev = time_reverse(flow.to_map(), flow.horizon)
    res = harmonic_residual(rev, make_space("flat", 1), make_target("flat", 1), [(0.3, np.array([[1.0], [2.5]]))])
    assert res < 1e-2


def test_heat_flow_cfl_warning_and_errors(tmp_path):
    grid = PeriodicGrid((2 * np.pi,), (64,))
    u0 = np.sin(grid.nodes())
    with pytest.warns(CFLWarning):
        heat_flow_integrate(u0, make_space("flat", 1), make_target("flat", 1), 0.01, 0.01, grid)
    with pytest.raises(CapabilityError):
        heat_flow_integrate(u0, make_space("sphere", 1), make_target("flat", 1), 0.1, 1e-3, grid)
    with pytest.raises(DomainError):
        heat_flow_integrate(u0[:10], make_space("flat", 1), make_target("flat", 1), 0.1, 1e-3, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        flow = heat_flow_integrate(u0, make_space("flat", 1), make_target("flat", 1), 0.01, 1e-3, grid)
    flow.to_csv(tmp_path / "flow.csv")
    lines = (tmp_path / "flow.csv").read_text().splitlines()
    assert lines[0] == "t,node,u_0"
    assert len(lines) == 1 + 64 * len(flow.times)

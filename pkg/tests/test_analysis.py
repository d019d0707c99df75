import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from stharm.analysis import (
    EllObserver,
    EllProcess,
    EnergyObserver,
    ExperimentReport,
    build_ell,
    compute_cpR,
    cpr_expression_fd,
    drift_estimate_check,
    estimate_representation,
    f_supermartingale_check,
    first_factor,
    first_factor_rhs,
    inv_damped_bound_check,
    integrability_estimate,
    liouville_bound,
    martingale_drift_test,
    second_factor_bounds,
    small_image_tools,
    subsqrt_chain,
)
from stharm.analysis.cutoff import CutoffField, cpr_integrand
from stharm.errors import CapabilityError, ConfigError, DomainError, StatisticsError
from stharm.geometry import make_space, make_target
from stharm.harmonic import catalog_map, constant_map, linear_map
from stharm.stochastic import StepConfig, StoppingRule, run_ensemble

# -- drift test ----------------------------------------------------------------


def test_drift_test_needs_enough_paths():
    with pytest.raises(StatisticsError):
        martingale_drift_test(np.zeros((10, 3)), [0, 1, 2])
    with pytest.raises(StatisticsError):
        martingale_drift_test(np.zeros((100, 1)), [0])
    with pytest.raises(StatisticsError):
        martingale_drift_test(np.full((100, 2), np.nan), [0, 1])


def test_drift_test_passes_constant_and_random_walk():
    assert martingale_drift_test(np.full((50, 4), 3.0), [0, 1, 2, 3]).passed
    walk = np.cumsum(np.random.default_rng(0).normal(size=(2000, 21)), axis=1)
    rep = martingale_drift_test(walk, np.arange(21))
    assert rep.passed and rep.pass_fraction >= 0.95


def test_drift_test_detects_drift():
    rng = np.random.default_rng(1)
    walk = np.cumsum(rng.normal(size=(2000, 21)) + 0.2, axis=1)
    rep = martingale_drift_test(walk, np.arange(21))
    assert not rep.passed and rep.pass_fraction < 0.1


def test_drift_test_ignores_rounding_noise():
    base = np.full((100, 3), 1e6)
    base[:, 1] += np.random.default_rng(2).choice([-1, 1], size=100) * 1e-10 + 1e-10
    assert martingale_drift_test(base, [0, 1, 2]).passed


# -- representation --------------------------------------------------------------


def test_representation_of_constant_map_is_zero():
    u = constant_map([0.3], 2)
    est = estimate_representation(u, make_space("flat", 2), make_target("flat", 1), [0, 0], [1, 0], 0.2, n_paths=50, h=0.01)
    np.testing.assert_array_equal(est.value, 0.0)
    np.testing.assert_array_equal(est.exact, 0.0)


def test_representation_of_linear_map_is_exact():
    a = [[1.0, 2.0], [0.5, -1.0]]
    est = estimate_representation(
        linear_map(a), make_space("flat", 2), make_target("flat", 2), [0.1, 0.2], [1.0, 1.0], 0.3, n_paths=40, h=0.01
    )
    np.testing.assert_allclose(est.value, [3.0, -0.5], atol=1e-12)
    np.testing.assert_allclose(est.se, 0.0, atol=1e-12)


def test_stopped_representation_close_to_exact():
    u = catalog_map("linear", matrix=[[1.0, 0.0], [0.0, 0.5]])
    est = estimate_representation(
        u, make_space("flat", 2), make_target("flat", 2), [0, 0], [1, 1], 0.5, R=1.0, n_paths=2000, h=0.005, seed=4
    )
    assert np.all(est.z < 4)
    # paths that jump across the sphere before ell reaches 0 leave a small deficit
    assert est.extra["unfinished_fraction"] < 0.05
    np.testing.assert_allclose(est.extra["drift_form"], [1.0, 0.5], atol=1e-2)


# -- c_p(R) ------------------------------------------------------------------------


@pytest.mark.parametrize("p,R", [(1.0, 1.0), (2.0, 3.0), (3.0, 0.5)])
def test_integrand_matches_flat_expression(p, R):
    rho = np.linspace(0.05, 0.95, 7) * R
    for d in (2, 3):
        np.testing.assert_allclose(
            cpr_integrand(p, R, rho, 0.5 * (d - 1) / rho), oracles.flat_cpr_expression(p, R, d, rho), rtol=1e-12
        )


@pytest.mark.parametrize("name,t", [("flat", 0.0), ("sphere", 0.0), ("cigar", 0.5)])
def test_integrand_matches_finite_differences(name, t):
    space = make_space(name, 2)
    R, p = 1.0, 2.0
    rho = 0.6
    x = np.array([[space.radius_at_distance(t, np.array([rho]))[0], 0.0]])
    expect = cpr_integrand(p, R, np.array([rho]), space.radial_drift(t, np.array([rho])))[0]
    assert cpr_expression_fd(space, np.zeros(2), R, p, t, x) == pytest.approx(expect, rel=1e-4)


@pytest.mark.parametrize("R", [1.0, 10.0])
def test_flat_cpr_scales_with_inverse_square_radius(R):
    c = compute_cpR(make_space("flat", 2), np.zeros(2), R, 1.0, horizon=0.0)
    assert c.value <= 5 * np.pi**2 / (4 * R**2)
    # the constant is scale invariant in R^2 c
    c1 = compute_cpR(make_space("flat", 2), np.zeros(2), 1.0, 1.0, horizon=0.0)
    assert R**2 * c.value == pytest.approx(c1.value, rel=1e-9)


@given(st.floats(0.5, 20.0), st.sampled_from([1.0, 2.0, 4.0]))
def test_grid_refinement_never_lowers_cpr(R, p):
    space = make_space("cigar")
    coarse = compute_cpR(space, np.zeros(2), R, p, horizon=0.5, n_t=3, n_rho=201)
    fine = compute_cpR(space, np.zeros(2), R, p, horizon=0.5, n_t=3, n_rho=401)
    assert coarse.value <= fine.value


def test_cpr_requirements():
    with pytest.raises(DomainError):
        compute_cpR(make_space("flat", 2), np.zeros(2), 1.0, 0.5)
    with pytest.raises(CapabilityError):
        compute_cpR(make_space("cigar"), np.array([1.0, 0.0]), 1.0, 2.0)
    with pytest.raises(DomainError):
        CutoffField(make_space("flat", 2), np.zeros(2), 0.0)


def test_cutoff_vanishes_outside_ball():
    f = CutoffField(make_space("flat", 2), np.zeros(2), 2.0)
    np.testing.assert_allclose(f(0.0, np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])), [1.0, np.cos(np.pi / 4), 0.0])


def test_drift_estimate_on_the_cigar():
    rep = drift_estimate_check(make_space("cigar"), np.zeros(2), r0=1.0, R=20.0, horizon=1.0)
    assert rep.holds
    # the static comparison (d-1)/(2 rho) fails for large rho
    assert not rep.static_comparison_holds
    assert rep.drift_inf >= 1 - 1e-3
    with pytest.raises(DomainError):
        drift_estimate_check(make_space("flat", 1), np.zeros(1), 1.0, 2.0)


# -- the ell process -------------------------------------------------------------

ell_params = st.tuples(st.floats(0.0, 50.0), st.floats(2.0, 6.0), st.floats(0.05, 3.0))


@given(ell_params)
def test_ell_runs_from_one_to_zero(params):
    c, p, t = params
    ell = build_ell([1.0, 0.0], p, c, t)
    r = np.linspace(0, t, 401)
    h = ell.h1(r)
    assert h[0] == pytest.approx(1.0) and abs(h[-1]) < 1e-12
    assert np.all(np.diff(h) <= 1e-15)
    # h1_dot is the derivative of h1
    mid, eps = r[1:-1], 1e-6 * t
    fd = (ell.h1(mid + eps) - ell.h1(mid - eps)) / (2 * eps)
    np.testing.assert_allclose(ell.h1_dot(mid), fd, rtol=1e-5, atol=1e-8)
    assert ell.h1_dot(np.array([t + 1]))[0] == 0.0


def test_ell_validation():
    with pytest.raises(ConfigError):
        build_ell([1.0], 1.5, 1.0, 1.0)
    with pytest.raises(ConfigError):
        build_ell([1.0], 2.0, 1.0, 0.0)
    with pytest.raises(ConfigError):
        build_ell([1.0], 2.0, -1.0, 1.0)


@given(st.floats(0.01, 30.0), st.floats(0.1, 3.0), st.floats(0.0, 5.0))
def test_first_factor_rhs_closed_form(c, t, vn):
    assert first_factor_rhs(2.0, c, t, vn) == pytest.approx(oracles.first_factor_rhs_p2(c, t, vn), rel=1e-10)


def _ell_ensemble(v, R=1.0, t=0.5, n=400, p=2.0):
    space = make_space("flat", 2)
    cpr = compute_cpR(space, np.zeros(2), R, p, horizon=t).value
    ell = build_ell(v, p, cpr, t)
    res = run_ensemble(
        space, make_target("flat", 1), constant_map([0.0], 2), np.zeros(2), StepConfig(0.005, seed=9),
        StoppingRule(t, R=R), n, observers=[lambda: EllObserver(space, np.zeros(2), R, ell)],
    )
    return res, ell, cpr


def test_first_factor_with_zero_direction():
    res, ell, _ = _ell_ensemble([0.0, 0.0], n=50)
    ff = first_factor(res.final, ell)
    assert ff.lhs_direct == 0.0 and ff.holds and ff.methods_agree


def test_first_factor_bound_on_flat_space():
    res, ell, _ = _ell_ensemble([1.0, 0.0])
    ff = first_factor(res.final, ell)
    assert ff.holds and ff.methods_agree and ff.lhs_direct < ff.rhs
    # almost every path stops once h0 reaches the time budget, before the sphere of radius R
    assert np.mean(res.final["ell_norm"] < 1e-12) > 0.95
    integ = integrability_estimate(np.array_split(res.final["ell_energy"], 4))
    assert integ["finite"]


def test_f_supermartingale_at_time_zero():
    final = {"cutoff_f": np.ones(5), "ell_T": np.zeros(5)}
    rep = f_supermartingale_check(final, 1.0, 3.0)
    assert rep.passed
    assert rep.estimates["E f^-p(tau)"]["value"] == 1.0 == rep.estimates["E exp(c T(tau))"]["value"]
    final["cutoff_f"][0] = 0.0
    assert not f_supermartingale_check(final, 1.0, 3.0).passed


def test_f_supermartingale_on_flat_space():
    space = make_space("flat", 2)
    R = 3.0
    cpr = compute_cpR(space, np.zeros(2), R, 1.0, horizon=0.5).value
    ell = EllProcess(np.zeros(2), 1.0, cpr, 0.5)
    res = run_ensemble(
        space, make_target("flat", 1), constant_map([0.0], 2), np.zeros(2), StepConfig(0.005, seed=3),
        StoppingRule(0.5, R=R), 500, observers=[lambda: EllObserver(space, np.zeros(2), R, ell)],
    )
    assert f_supermartingale_check(res.final, 1.0, cpr).passed


# -- second factor ------------------------------------------------------------


def _energy_ensemble(u, space, target, x0, n=300, t=0.5, R=None, seed=0):
    return run_ensemble(
        space, target, u, x0, StepConfig(0.005, seed=seed), StoppingRule(t, R=R), n,
        observers=[lambda: EnergyObserver(space, target, u)],
    )


def test_second_factor_constant_map():
    u = constant_map([0.1, 0.2], 1)
    target = make_target("hyperbolic", 2)
    res = _energy_ensemble(u, make_space("flat", 1), target, [0.0], n=40)
    rep = second_factor_bounds(res.final, u, target, [0.1, 0.2], b=1.0)
    assert rep.passed
    assert rep.estimates["E|A_def|^q"]["value"] == 0.0
    # K = 0 everywhere, so kappa/K = -inf and the 1/b comparison applies with both sides zero
    assert any(a.name.startswith("bdc:") for a in rep.assertions)
    assert not any(a.name.startswith("bdc:") for a in second_factor_bounds(res.final, u, target, [0.1, 0.2]).assertions)


def test_second_factor_geodesic_into_hyperbolic_plane():
    u = catalog_map("geodesic-h2", speed=0.8)
    target = make_target("hyperbolic", 2)
    res = _energy_ensemble(u, make_space("flat", 1), target, [0.0], n=500)
    rep = second_factor_bounds(res.final, u, target, u.u(0.0, np.zeros((1, 1)))[0])
    assert rep.passed
    names = [a.name for a in rep.assertions]
    assert any(n.startswith("sf:") for n in names) and any(n.startswith("ch:") for n in names)


def test_inverse_damping_bound_flat_target():
    u = catalog_map("x2-minus-t")
    res = _energy_ensemble(u, make_space("flat", 1), make_target("flat", 1), [0.3], n=50)
    rep = inv_damped_bound_check(res.final, 0.005)
    assert rep.passed


def test_inverse_damping_bound_sphere_target():
    u = catalog_map("small-s2", eps=0.3)
    res = _energy_ensemble(u, make_space("flat", 1), make_target("sphere", 2), [0.0], n=200)
    assert inv_damped_bound_check(res.final, 0.005).passed


# -- Liouville pipelines -----------------------------------------------------------


def test_liouville_bound_constant_map_is_zero():
    u = constant_map([0.0], 2)
    lb = liouville_bound(u, make_space("flat", 2), make_target("flat", 1), [0, 0], [1, 0], 0.5, R=1.0, n_paths=50, h=0.01)
    assert lb.has_bound and lb.bound == 0.0 and lb.route == "ch"


def test_liouville_bound_reports_when_nothing_applies():
    u = catalog_map("geodesic-s2")
    lb = liouville_bound(u, make_space("flat", 1), make_target("sphere", 2), [0.0], [1.0], 0.5)
    assert not lb.has_bound and lb.route is None
    assert all(not r.applicable and r.reason for r in lb.routes)
    with pytest.raises(ConfigError):
        liouville_bound(u, make_space("flat", 1), make_target("sphere", 2), [0.0], [1.0], 0.5, p=2.0, q=3.0)


def test_decay_route_on_the_sphere():
    u = catalog_map("sphere-height", dim=2)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    t = 0.7
    lb = liouville_bound(u, make_space("sphere", 2), make_target("flat", 1), [0, 0], [1, 0], t, window=[0.0, 1.0], points=pts)
    route = lb.routes[0]
    assert route.applicable and lb.route == "decay"
    assert route.factors["decay_factor"] == pytest.approx(np.exp(-0.5 * t))
    # the true |du(0,0) v| = 2 sits under the bound
    assert lb.bound >= 2.0


def test_subsqrt_chain_decreases_on_flat_space():
    out = subsqrt_chain(make_space("flat", 2), np.zeros(2), [1.0, 2.0, 4.0, 8.0], horizon=0.0)
    assert out["decreasing"]
    np.testing.assert_allclose(out["R c_p(R)"] * out["R"], out["c_p(R)"][0], rtol=1e-9)


def test_small_image_tools_on_the_sphere():
    rep = small_image_tools(make_target("sphere", 2), [0.0, 0.0], 0.3, q=1.5)
    assert rep.regular and rep.hessian_passed
    big = small_image_tools(make_target("sphere", 2), [0.0, 0.0], 1.6, q=1.5)
    assert not big.regular
    with pytest.raises(DomainError):
        small_image_tools(make_target("flat", 2), [0.0, 0.0], 0.3)


def test_report_serialises_to_json():
    rep = ExperimentReport("demo")
    rep.estimate("x", np.float64(1.5), np.array([0.1]))
    rep.check("ok", np.bool_(True), 1.0, 2.0)
    rep.estimate("inf", np.inf)
    doc = json.loads(rep.to_json())
    assert doc["experiment"] == "demo" and doc["passed"] is True
    assert doc["estimates"]["inf"]["value"] == "inf"

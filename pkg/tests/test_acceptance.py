"""Acceptance criteria at full size.

Each test runs one registry experiment with its default (full) configuration,
prints a single ``CRITERION n: PASS|FAIL`` line and then asserts.  Select
them alone with ``pytest -m slow -s tests/test_acceptance.py``.
"""

import time

import pytest

from stharm.experiments import ExperimentConfig, run_experiment

pytestmark = pytest.mark.slow


def _run(tmp_path, name, **kw):
    start = time.perf_counter()
    out = run_experiment(ExperimentConfig(name, **kw), tmp_path / name)
    return out, time.perf_counter() - start


def _verdict(capsys, number, label, outcomes, limit):
    """Print one line for the criterion; ``outcomes`` is a list of (outcome, seconds)."""
    failed = [a.name for out, _ in outcomes for a in out.report.assertions if not a.passed]
    slow = [round(s, 1) for _, s in outcomes if limit is not None and s > limit]
    ok = not failed and not slow
    total = sum(s for _, s in outcomes)
    detail = f"{total:.1f} s"
    if failed:
        detail += "; failed: " + "; ".join(failed)
    if slow:
        detail += f"; over the {limit:.0f} s limit: {slow}"
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} {label} ({detail})")
    return ok


def test_criterion_01_martingale_property(tmp_path, capsys):
    cases = [
        _run(tmp_path / "a", "verify-martingale", space="flat", space_dim=1, map="x2-minus-t"),
        _run(tmp_path / "b", "verify-martingale", space="flat", space_dim=1, map="circle-sin"),
        _run(tmp_path / "c", "verify-martingale", space="flat", space_dim=1, map="geodesic-h2",
             target="hyperbolic", target_dim=2),
        _run(tmp_path / "d", "negative-control"),
    ]
    fractions = [round(out.report.estimates["fraction of cells with |mean| <= 3 SE"]["value"], 3) for out, _ in cases]
    assert _verdict(capsys, 1, f"drift test on three maps, negative control detected (fractions {fractions})", cases, 120)


def test_criterion_02_representation(tmp_path, capsys):
    out, s = _run(tmp_path, "representation")
    est = out.report.estimates["du(0,x)v[0] estimate"]
    label = f"E[Theta~^-1 du Theta v] = {est['value']:.4f} +- {est['se']:.4f}, exact {est['exact']:g}"
    assert _verdict(capsys, 2, label, [(out, s)], 300)


def test_criterion_03_theta_decay(tmp_path, capsys):
    out, s = _run(tmp_path, "theta-decay")
    mean = out.report.estimates["|Theta_{0,T}| mean"]["value"]
    assert _verdict(capsys, 3, f"|Theta_0,1| = {mean:.6f} on the unit sphere", [(out, s)], 60)


def test_criterion_04_cigar_closed_forms(tmp_path, capsys):
    out, s = _run(tmp_path, "cigar-closed-forms")
    assert _verdict(capsys, 4, "cigar distance, its time derivative and Laplacian", [(out, s)], 60)


def test_criterion_05_cpr(tmp_path, capsys):
    out, s = _run(tmp_path, "cpr")
    assert _verdict(capsys, 5, "c_p(R) on flat R^2 and on the cigar", [(out, s)], 60)


def test_criterion_06_first_factor(tmp_path, capsys):
    out, s = _run(tmp_path, "first-factor")
    lhs = out.report.estimates["LHS direct"]["value"]
    rhs = out.report.estimates["RHS"]["value"]
    assert _verdict(capsys, 6, f"first factor {lhs:.4f} <= {rhs:.4f}", [(out, s)], 300)


def test_criterion_07_second_factor(tmp_path, capsys):
    out, s = _run(tmp_path, "second-factor")
    assert _verdict(capsys, 7, "distance bound and pathwise inverse-damping bound", [(out, s)], 900)


def test_criterion_08_f_supermartingale(tmp_path, capsys):
    out, s = _run(tmp_path, "f-supermartingale")
    assert _verdict(capsys, 8, "E f^-1 <= E exp(c_1 T) on flat R^2 and the cigar", [(out, s)], 300)


def test_criterion_09_liouville(tmp_path, capsys):
    out, s = _run(tmp_path, "liouville")
    assert _verdict(capsys, 9, "decay, sub-square-root and small-image routes", [(out, s)], 600)


def test_criterion_10_determinism(tmp_path, capsys):
    cases = [
        _run(tmp_path / "a", "determinism"),
        _run(tmp_path / "b", "determinism", inner="second-factor", n_paths=300),
        _run(tmp_path / "c", "determinism", inner="f-supermartingale", n_paths=300),
    ]
    assert _verdict(capsys, 10, "repeated runs give identical CSV bytes", cases, None)

"""Measure scan: sampling determinism, selection accounting, scaling fits."""

import math

import numpy as np
import pytest

from kamlab import freq_arith as fa
from kamlab import measure_scan as ms
from kamlab.errors import GateFailed, InsufficientSpan
from kamlab.fourier_taylor import (
    FourierTaylorSeries,
    HamiltonianSpec,
    quadratic_from_matrices,
)

A0 = np.array([[1.0, 0.25], [0.25, 0.8]])
B = np.array([[0.3, 0.1], [0.1, 0.2]])


def family_base():
    quad = quadratic_from_matrices(2, A0, [((1, 0), B, None)])
    rest = FourierTaylorSeries.monomial(2, (3, 0), 0.05)
    return HamiltonianSpec(omega=fa.make_test_frequency("golden").components,
                           quad=quad, rest=rest, epsilon=1.0, state="physical")


def family_plan(**over):
    kwargs = dict(base=family_base(), freq=fa.make_test_frequency("golden"),
                  epsilons=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6), density=128)
    kwargs.update(over)
    return ms.ScanPlan(**kwargs)


@pytest.fixture(scope="module")
def sweep():
    plan = family_plan()
    return plan, ms.run_plan(plan)


def test_ball_samples_deterministic_and_inside():
    pts = ms.ball_samples(2, 200)
    assert pts.shape == (200, 2)
    assert np.max(np.linalg.norm(pts, axis=1)) < 1.0
    assert np.array_equal(pts, ms.ball_samples(2, 200))
    # a prefix of a longer draw is the same sequence
    assert np.array_equal(pts[:50], ms.ball_samples(2, 50))
    with pytest.raises(ValueError):
        ms.ball_samples(2, 0)


def test_sweep_counts_frozen(sweep):
    _, reports = sweep
    got = [(r.selected, r.converged, r.detail["margin_rejected"],
            r.detail["dioph_rejected"]) for r in reports]
    assert got == [(53, 53, 69, 6), (86, 86, 42, 0), (102, 102, 26, 0),
                   (113, 113, 15, 0), (120, 120, 8, 0)]
    assert reports[0].complement_fraction == 75 / 128
    assert reports[-1].complement_fraction == 8 / 128


def test_counting_identity_and_properties(sweep):
    _, reports = sweep
    for r in reports:
        assert r.samples == (r.selection_rejected + r.newton_failed
                             + r.converged)
        assert r.selection_rejected == (r.detail["margin_rejected"]
                                        + r.detail["dioph_rejected"])
        assert r.newton_failed == r.detail["newton_failed"]
        assert r.complement_fraction == (r.samples - r.converged) / r.samples


def test_gamma_rule_enforced_not_fitted(sweep):
    plan, reports = sweep
    for r in reports:
        assert r.gamma_used == plan.gamma_coeff * math.sqrt(r.mu)
        assert r.tau_used == plan.tau


def test_complement_fraction_monotone_in_epsilon(sweep):
    _, reports = sweep
    cfs = [r.complement_fraction for r in reports]
    assert all(a > b for a, b in zip(cfs, cfs[1:]))


def test_scan_is_bit_reproducible(sweep):
    plan, reports = sweep
    again = ms.scan_epsilon(plan, 1e-3)
    ref = reports[1]
    for name in ("epsilon", "mu", "gamma_used", "tau_used", "samples",
                 "selected", "converged", "complement_fraction", "wall_time"):
        assert getattr(again, name) == getattr(ref, name)
    assert again.detail == ref.detail
    assert ref.wall_time == 0.0


def test_fit_scaling_on_family_sweep(sweep):
    _, reports = sweep
    fit = ms.fit_scaling(reports)
    assert fit.points == 5
    assert fit.exponent == pytest.approx(0.4730944136772692, rel=1e-10)
    assert 0.4 <= fit.exponent <= 0.6
    assert 0.0 < fit.c_low <= fit.c_high < math.inf
    assert fit.c_high / fit.c_low < 2.0


def test_integrable_converges_everywhere_selected():
    integ = HamiltonianSpec(omega=fa.make_test_frequency("golden").components,
                            quad=quadratic_from_matrices(2, A0, []),
                            rest=FourierTaylorSeries.zero(2),
                            epsilon=1.0, state="physical")
    plan = family_plan(base=integ, epsilons=(1e-3,), density=96)
    rep = ms.scan_epsilon(plan, 1e-3)
    assert rep.converged == rep.selected == 65
    assert rep.detail["newton_failed"] == 0
    # complement is purely the selection rejections
    assert rep.complement_fraction == rep.selection_rejected / rep.samples


def test_gamma_floor_rejects_every_certification():
    plan = family_plan(epsilons=(1e-3,), density=64, gamma_floor=0.9)
    rep = ms.scan_epsilon(plan, 1e-3)
    assert rep.gamma_used == 0.9
    assert rep.selected == 0 and rep.converged == 0
    assert rep.complement_fraction == 1.0
    # nothing uncertified ever reached the solver
    assert rep.detail["newton_failed"] == 0
    assert rep.detail["dioph_rejected"] == rep.samples - rep.detail["margin_rejected"]


def test_gates_reject_large_epsilon():
    plan = family_plan()
    with pytest.raises(GateFailed, match="mu"):
        ms.scan_epsilon(plan, 0.5)
    tight = family_plan(sqrt_mu_gate=0.2)
    with pytest.raises(GateFailed, match="sqrt"):
        ms.scan_epsilon(tight, 1e-2)


def test_plan_validation():
    with pytest.raises(ValueError, match="tau"):
        family_plan(tau=1.0)
    with pytest.raises(ValueError, match="physical"):
        from kamlab.normal_form import prepare_time_scaled
        family_plan(base=prepare_time_scaled(family_base()))
    with pytest.raises(ValueError, match="grid"):
        family_plan(grid=15)
    with pytest.raises(ValueError, match="density"):
        family_plan(density=0)
    with pytest.raises(ValueError, match="positive"):
        family_plan(epsilons=(1e-3, -1.0))
    with pytest.raises(ValueError, match="positive"):
        family_plan(margin_coeff=0.0)


def test_report_validation():
    kwargs = dict(epsilon=1e-3, mu=0.03, gamma_used=0.08, tau_used=1.5,
                  samples=100, selected=80, converged=70,
                  complement_fraction=0.3)
    ms.MeasureReport(**kwargs)
    with pytest.raises(ValueError, match="counts"):
        ms.MeasureReport(**{**kwargs, "converged": 90})
    with pytest.raises(ValueError, match="inconsistent"):
        ms.MeasureReport(**{**kwargs, "complement_fraction": 0.25})
    with pytest.raises(ValueError, match="identity"):
        ms.MeasureReport(**kwargs, detail={"margin_rejected": 10,
                                           "dioph_rejected": 10,
                                           "newton_failed": 5})


def test_records_round_trip(sweep):
    plan, reports = sweep
    plan2 = ms.ScanPlan.from_record(plan.to_record())
    assert plan2.epsilons == plan.epsilons
    assert plan2.density == plan.density
    assert np.array_equal(plan2.base.omega, plan.base.omega)
    assert plan2.base.quad.terms() == plan.base.quad.terms()
    rep = reports[0]
    rep2 = ms.MeasureReport.from_record(rep.to_record())
    for name in ("epsilon", "mu", "gamma_used", "samples", "selected",
                 "converged", "complement_fraction", "wall_time", "nu"):
        assert getattr(rep2, name) == getattr(rep, name)
    assert rep2.detail == rep.detail
    with pytest.raises(ValueError):
        ms.MeasureReport.from_record({"record": "other"})
    with pytest.raises(ValueError):
        ms.ScanPlan.from_record({"record": "other"})


def synthetic_reports(coeff=0.3, samples=1000, ks=(10, 20, 40, 80, 160)):
    out = []
    for k in ks:
        cf = k / samples
        mu = (cf / coeff) ** 2
        out.append(ms.MeasureReport(
            epsilon=mu, mu=mu, gamma_used=0.5 * math.sqrt(mu), tau_used=1.5,
            samples=samples, selected=samples, converged=samples - k,
            complement_fraction=cf))
    return out


def test_fit_scaling_recovers_exact_power_law():
    fit = ms.fit_scaling(synthetic_reports())
    assert fit.exponent == pytest.approx(0.5, abs=1e-12)
    assert fit.c_low == pytest.approx(0.3, rel=1e-12)
    assert fit.c_high == pytest.approx(0.3, rel=1e-12)
    assert fit.points == 5
    rec = fit.to_record()
    assert rec["record"] == "fit_result" and rec["points"] == 5


def test_fit_scaling_span_guards():
    reps = synthetic_reports()
    with pytest.raises(InsufficientSpan, match="4 reports"):
        ms.fit_scaling(reps[:3])
    with pytest.raises(InsufficientSpan, match="decades"):
        ms.fit_scaling(synthetic_reports(ks=(40, 50, 60, 80)))
    dead = synthetic_reports(ks=(10, 20, 40, 80))
    dead.append(ms.MeasureReport(
        epsilon=1e-9, mu=1e-9, gamma_used=1e-5, tau_used=1.5,
        samples=1000, selected=1000, converged=1000,
        complement_fraction=0.0))
    with pytest.raises(InsufficientSpan, match="vanished"):
        ms.fit_scaling(dead)
    with pytest.raises(ValueError, match="normalization"):
        ms.fit_scaling(reps, normalize="log")
    with pytest.raises(ValueError, match="nu"):
        ms.fit_scaling(reps, normalize="nu")


def test_gevrey_sweep_and_forecast():
    plan = family_plan(epsilons=(1e-2, 1e-3), density=32, gevrey_alpha=1.0)
    reports = ms.run_plan(plan)
    for rep in reports:
        assert rep.nu is not None
        assert rep.nu <= rep.mu ** 2
    rows = ms.gevrey_forecast(fa.make_test_frequency("golden"),
                              (1e-2, 1e-3, 1e-4), alpha=1.0)
    assert [row["eps"] for row in rows] == [1e-2, 1e-3, 1e-4]
    for row in rows:
        assert row["nu"] == math.exp(-row["mu"] ** -1.0)
        assert row["predicted_complement"] == math.sqrt(row["nu"])
        # regularity-class prediction sits far below the power-law column
        assert row["predicted_complement"] < row["sqrt_mu"] ** 2
    # exponential collapse along the sweep
    preds = [row["predicted_complement"] for row in rows]
    assert preds[0] / preds[1] > 1e5 and preds[1] / preds[2] > 1e10

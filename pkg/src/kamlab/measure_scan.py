"""Sampled measurement of the surviving-torus set across a perturbation sweep.

For each epsilon the unit action ball is walked with a fixed low-discrepancy
sequence and every sample runs the same pipeline: boundary-margin rule,
Diophantine certification of its frequency-map image at gamma = a*sqrt(mu),
then a Newton solve on the normal-form output.  Everything the pipeline
cannot construct counts toward the complement, so the reported fraction is
a conservative sampled stand-in for the measure of the bad set.

The selection rule has two parts (stay b*sqrt(mu) away from the boundary of
the ball, certify the target frequency) and both rejections land in the
same selection-rejected bucket of the counting identity

    samples = selection_rejected + newton_failed + converged.

fit_scaling recovers the exponent of complement_fraction against mu and
brackets the normalized ratio complement/sqrt(mu) from above and below.
A Gevrey-mode sweep carries nu alongside mu and normalizes by sqrt(nu)
instead; gevrey_forecast produces the arithmetic-only prediction table.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from . import freq_arith as fa
from .errors import (
    GateFailed,
    InsufficientSpan,
    KolmogorovDegenerate,
    NonConvergence,
    SmallDivisorBreakdown,
)
from .fourier_taylor import PHYSICAL, HamiltonianSpec
from .freq_arith import FrequencyVector
from .normal_form import one_step_normal_form, prepare_time_scaled
from .torus_solver import certify_target, solve_torus

__all__ = [
    "MeasureReport",
    "ScanPlan",
    "FitResult",
    "ball_samples",
    "scan_epsilon",
    "run_plan",
    "fit_scaling",
    "gevrey_forecast",
]


def ball_samples(n: int, count: int) -> np.ndarray:
    """First `count` points of the unscrambled Halton sequence inside the
    open unit ball, mapped from [0,1)^n to (-1,1)^n by rejection.

    The sequence is a fixed mathematical object, so every call with the
    same arguments returns bit-identical points.
    """
    if count < 1:
        raise ValueError("count must be positive")
    engine = qmc.Halton(d=n, scramble=False)
    kept = []
    total = 0
    while total < count:
        block = 2.0 * engine.random(256) - 1.0
        inside = block[np.linalg.norm(block, axis=1) < 1.0]
        kept.append(inside)
        total += inside.shape[0]
    return np.concatenate(kept, axis=0)[:count]


@dataclass(eq=False)
class MeasureReport:
    """One epsilon slice of a scan.

    `detail` keeps the audit split of the rejected samples
    (margin_rejected / dioph_rejected / newton_failed); the headline
    counters follow the counting identity exactly.
    """
    epsilon: float
    mu: float
    gamma_used: float
    tau_used: float
    samples: int
    selected: int
    converged: int
    complement_fraction: float
    wall_time: float = 0.0
    nu: Optional[float] = None
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.converged <= self.selected <= self.samples):
            raise ValueError("counts must satisfy 0 <= converged <= selected <= samples")
        if not (0.0 <= self.complement_fraction <= 1.0):
            raise ValueError("complement_fraction must lie in [0, 1]")
        if self.complement_fraction != (self.samples - self.converged) / self.samples:
            raise ValueError("complement_fraction inconsistent with the counters")
        if self.detail:
            parts = (self.detail["margin_rejected"] + self.detail["dioph_rejected"]
                     + self.detail["newton_failed"] + self.converged)
            if parts != self.samples:
                raise ValueError("detail counts break the counting identity")

    @property
    def selection_rejected(self) -> int:
        return self.samples - self.selected

    @property
    def newton_failed(self) -> int:
        return self.selected - self.converged

    def to_record(self) -> dict:
        rec = {
            "record": "measure_report",
            "epsilon": self.epsilon,
            "mu": self.mu,
            "gamma_used": self.gamma_used,
            "tau_used": self.tau_used,
            "samples": self.samples,
            "selected": self.selected,
            "converged": self.converged,
            "complement_fraction": self.complement_fraction,
            "wall_time": self.wall_time,
            "detail": dict(self.detail),
        }
        if self.nu is not None:
            rec["nu"] = self.nu
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "MeasureReport":
        if rec.get("record") != "measure_report":
            raise ValueError("not a measure_report record")
        return cls(epsilon=rec["epsilon"], mu=rec["mu"],
                   gamma_used=rec["gamma_used"], tau_used=rec["tau_used"],
                   samples=rec["samples"], selected=rec["selected"],
                   converged=rec["converged"],
                   complement_fraction=rec["complement_fraction"],
                   wall_time=rec.get("wall_time", 0.0),
                   nu=rec.get("nu"), detail=dict(rec.get("detail", {})))


@dataclass(eq=False)
class ScanPlan:
    """Sweep configuration: the physical Hamiltonian template, the frequency,
    the epsilon grid and the selection-rule coefficients.

    gamma = max(gamma_coeff * sqrt(mu), gamma_floor) and samples within
    margin_coeff * sqrt(mu) of the unit sphere are rejected outright.
    wall_time columns stay 0.0 unless record_timings is set, so default
    artifacts are byte-reproducible.
    """
    base: HamiltonianSpec
    freq: FrequencyVector
    epsilons: tuple
    density: int = 512
    gamma_coeff: float = 0.5
    gamma_floor: float = 1e-8
    tau: float = 1.5
    margin_coeff: float = 1.0
    mu_gate: float = 0.3
    sqrt_mu_gate: float = 0.5
    grid: int = 16
    tol: float = 1e-10
    max_iter: int = 30
    c: float = 1.0
    gevrey_alpha: Optional[float] = None
    gevrey_c_bar: Optional[float] = None
    record_timings: bool = False

    def __post_init__(self):
        self.epsilons = tuple(float(e) for e in self.epsilons)
        if self.base.state != PHYSICAL:
            raise ValueError("plan template must be a physical-state spec")
        n = self.base.n
        if not self.tau > n - 1:
            raise ValueError(f"tau must exceed n-1 = {n - 1}")
        if self.margin_coeff <= 0 or self.gamma_coeff <= 0:
            raise ValueError("selection coefficients must be positive")
        if self.density < 1:
            raise ValueError("density must be positive")
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if self.grid % 2 or self.grid < 4:
            raise ValueError("grid must be even and at least 4")

    @property
    def n(self) -> int:
        return self.base.n

    def to_record(self) -> dict:
        return {
            "record": "scan_plan",
            "base": self.base.to_record(),
            "freq": self.freq.to_record(),
            "epsilons": list(self.epsilons),
            "density": self.density,
            "gamma_coeff": self.gamma_coeff,
            "gamma_floor": self.gamma_floor,
            "tau": self.tau,
            "margin_coeff": self.margin_coeff,
            "mu_gate": self.mu_gate,
            "sqrt_mu_gate": self.sqrt_mu_gate,
            "grid": self.grid,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "c": self.c,
            "gevrey_alpha": self.gevrey_alpha,
            "gevrey_c_bar": self.gevrey_c_bar,
            "record_timings": self.record_timings,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ScanPlan":
        if rec.get("record") != "scan_plan":
            raise ValueError("not a scan_plan record")
        kwargs = {k: rec[k] for k in (
            "density", "gamma_coeff", "gamma_floor", "tau", "margin_coeff",
            "mu_gate", "sqrt_mu_gate", "grid", "tol", "max_iter", "c",
            "gevrey_alpha", "gevrey_c_bar", "record_timings") if k in rec}
        return cls(base=HamiltonianSpec.from_record(rec["base"]),
                   freq=FrequencyVector.from_record(rec["freq"]),
                   epsilons=tuple(rec["epsilons"]), **kwargs)


def scan_epsilon(plan: ScanPlan, epsilon: float) -> MeasureReport:
    """Run the full selection + solve pipeline at one epsilon.

    Raises GateFailed before doing any work when mu or sqrt(mu) exceeds the
    configured gates; normal-form errors propagate untouched.
    """
    epsilon = float(epsilon)
    t0 = time.perf_counter()
    profile = fa.mu_nu(plan.freq, epsilon, c=plan.c,
                       alpha=plan.gevrey_alpha, c_bar=plan.gevrey_c_bar)
    mu = profile.mu
    if mu > plan.mu_gate:
        raise GateFailed(f"mu = {mu:.6g} exceeds the gate {plan.mu_gate:g}")
    if math.sqrt(mu) > plan.sqrt_mu_gate:
        raise GateFailed(
            f"sqrt(mu) = {math.sqrt(mu):.6g} exceeds the gate {plan.sqrt_mu_gate:g}")

    phys = replace(plan.base, epsilon=epsilon)
    nf = one_step_normal_form(prepare_time_scaled(phys), plan.freq,
                              c=plan.c, mu_max=plan.mu_gate,
                              gevrey_alpha=plan.gevrey_alpha,
                              gevrey_c_bar=plan.gevrey_c_bar)
    spec = nf.spec_out

    gamma = max(plan.gamma_coeff * math.sqrt(mu), plan.gamma_floor)
    margin = plan.margin_coeff * math.sqrt(mu)
    points = ball_samples(plan.n, plan.density)
    radii = np.linalg.norm(points, axis=1)

    margin_rejected = 0
    dioph_rejected = 0
    newton_failed = 0
    converged = 0
    for I0, r in zip(points, radii):
        if r > 1.0 - margin:
            margin_rejected += 1
            continue
        try:
            target = certify_target(spec, I0, gamma=gamma, tau=plan.tau,
                                    grid=plan.grid)
        except SmallDivisorBreakdown:
            dioph_rejected += 1
            continue
        # certification covered every wavevector the solve grid can
        # represent, so a mid-solve divisor trip is a pipeline bug and
        # is deliberately not caught here
        try:
            solve_torus(spec, I0, grid=plan.grid, tol=plan.tol,
                        max_iter=plan.max_iter, target=target,
                        full_diagnostics=False)
            converged += 1
        except (NonConvergence, KolmogorovDegenerate):
            newton_failed += 1

    selected = plan.density - margin_rejected - dioph_rejected
    elapsed = time.perf_counter() - t0
    return MeasureReport(
        epsilon=epsilon, mu=mu, gamma_used=gamma, tau_used=plan.tau,
        samples=plan.density, selected=selected, converged=converged,
        complement_fraction=(plan.density - converged) / plan.density,
        wall_time=elapsed if plan.record_timings else 0.0,
        nu=profile.nu,
        detail={"margin_rejected": margin_rejected,
                "dioph_rejected": dioph_rejected,
                "newton_failed": newton_failed})


def run_plan(plan: ScanPlan) -> list:
    """Scan every epsilon of the plan in the order given."""
    return [scan_epsilon(plan, eps) for eps in plan.epsilons]


@dataclass(frozen=True)
class FitResult:
    """Power-law summary of a sweep: slope of log complement vs log mu and
    the min/max of the normalized ratio across the points used."""
    exponent: float
    c_low: float
    c_high: float
    points: int

    def to_record(self) -> dict:
        return {"record": "fit_result", "exponent": self.exponent,
                "c_low": self.c_low, "c_high": self.c_high,
                "points": self.points}


def fit_scaling(reports: Sequence[MeasureReport],
                normalize: str = "mu") -> FitResult:
    """Least-squares exponent of complement_fraction against mu, plus the
    bracket [c_low, c_high] of complement_fraction / sqrt(scale).

    `normalize` picks the scale for the bracket: "mu" (default) or "nu"
    (requires every report to carry the Gevrey column).  Raises
    InsufficientSpan when fewer than 4 reports, less than 2 decades of mu,
    or a vanishing complement fraction make the log fit meaningless.
    """
    if len(reports) < 4:
        raise InsufficientSpan(f"need at least 4 reports, got {len(reports)}")
    mus = np.array([r.mu for r in reports], dtype=np.float64)
    cfs = np.array([r.complement_fraction for r in reports], dtype=np.float64)
    decades = math.log10(mus.max() / mus.min())
    if decades < 2.0 - 1e-9:
        raise InsufficientSpan(f"mu spans {decades:.3f} decades, need 2")
    if np.any(cfs <= 0.0):
        raise InsufficientSpan("complement fraction vanished at some epsilon; "
                               "log fit undefined")
    exponent = float(np.polyfit(np.log(mus), np.log(cfs), 1)[0])
    if normalize == "mu":
        scale = mus
    elif normalize == "nu":
        if any(r.nu is None for r in reports):
            raise ValueError("nu normalization needs Gevrey-mode reports")
        scale = np.array([r.nu for r in reports], dtype=np.float64)
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    ratios = cfs / np.sqrt(scale)
    return FitResult(exponent=exponent, c_low=float(ratios.min()),
                     c_high=float(ratios.max()), points=len(reports))


def gevrey_forecast(freq: FrequencyVector, epsilons: Sequence[float],
                    c: float = 1.0, alpha: float = 1.0,
                    c_bar: Optional[float] = None) -> list:
    """Arithmetic-only prediction table: for each epsilon the power scale
    sqrt(mu) next to the regularity-class scale sqrt(nu).

    In the analytic case (alpha = 1) nu is exponentially small in 1/mu, so
    the predicted normalized complement collapses far below the sampled
    power-law column.  No solves are run.
    """
    rows = []
    for eps in epsilons:
        prof = fa.mu_nu(freq, float(eps), c=c, alpha=alpha, c_bar=c_bar)
        rows.append({
            "eps": float(eps),
            "mu": prof.mu,
            "nu": prof.nu,
            "sqrt_mu": math.sqrt(prof.mu),
            "predicted_complement": math.sqrt(prof.nu),
        })
    return rows

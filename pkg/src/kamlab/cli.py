"""Batch driver: freq / nf / torus / scan / probe subcommands over JSON
configs, emitting CSV tables and JSON records.

Every artifact starts with (or embeds) a header carrying the tool version
and a hash of the resolved configuration, numeric cells are written in
round-trip precision, and runs are deterministic end to end: the same
inputs give byte-identical outputs.  On a pipeline error the partial
artifacts are removed and a machine-readable `error.json` is written with
a nonzero exit status.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import freq_arith as fa
from . import measure_scan as ms
from .errors import InsufficientSpan, KamlabError
from .fourier_taylor import (
    PHYSICAL,
    TIME_SCALED,
    HamiltonianSpec,
    PhaseState,
    integrate_flow,
)
from .freq_arith import FrequencyVector
from .normal_form import one_step_normal_form, prepare_time_scaled, verify_estimates
from .torus_solver import solve_torus, verify_by_integration


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class _Sink:
    """Artifact writer: atomic, stamped, and removable as a group."""

    def __init__(self, out_dir: str, cfg_hash: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg_hash = cfg_hash
        self.written: list[Path] = []

    @property
    def stamp(self) -> str:
        return f"kamlab {__version__} config={self.cfg_hash}"

    def _commit(self, name: str, text: str) -> Path:
        path = self.dir / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
        self.written.append(path)
        return path

    def write_json(self, name: str, obj: dict) -> Path:
        body = dict(obj)
        body["_meta"] = {"tool": f"kamlab {__version__}", "config": self.cfg_hash}
        return self._commit(name, json.dumps(body, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, columns: list, rows: list) -> Path:
        lines = [f"# {self.stamp}", ",".join(columns)]
        lines += [",".join(_cell(v) for v in row) for row in rows]
        return self._commit(name, "\n".join(lines) + "\n")

    def discard(self):
        for path in self.written:
            path.unlink(missing_ok=True)
        self.written.clear()


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"cannot parse {path}: {exc}") from exc


def _load_frequency(path: str) -> FrequencyVector:
    rec = _load_json(path)
    if "name" in rec and rec.get("record") in (None, "frequency_named"):
        extras = {k: rec[k] for k in ("n", "tau") if k in rec}
        return fa.make_test_frequency(rec["name"], **extras)
    return FrequencyVector.from_record(rec)


def _load_spec(path: str) -> HamiltonianSpec:
    return HamiltonianSpec.from_record(_load_json(path))


def _time_scaled(spec: HamiltonianSpec) -> HamiltonianSpec:
    if spec.state == TIME_SCALED:
        return spec
    return prepare_time_scaled(spec)


def _guarded(out: str, payload_fn, body) -> None:
    """Resolve the config payload, run `body(sink)`; on a pipeline error
    keep only error.json.  The config hash covers the parsed input files,
    so identical inputs stamp identical artifacts."""
    sink = None
    try:
        sink = _Sink(out, _config_hash(payload_fn()))
        body(sink)
    except (KamlabError, ValueError, np.linalg.LinAlgError) as exc:
        if sink is None:
            sink = _Sink(out, "unresolved")
        sink.discard()
        sink.write_json("error.json",
                        {"record": "error", "kind": type(exc).__name__,
                         "message": str(exc)})
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        raise SystemExit(2)
    for path in sink.written:
        click.echo(str(path))


@click.group()
@click.version_option(version=__version__, prog_name="kamlab")
def main():
    """Small-divisor arithmetic, normal forms, torus continuation, scans."""


@main.command()
@click.option("--omega", "omega_file", required=True, type=click.Path(),
              help="frequency record, or {\"name\": ...} for a built-in")
@click.option("--qmax", default=50, show_default=True, help="table depth")
@click.option("--eps", "eps_values", multiple=True, type=float,
              help="epsilon values for the profile table (repeatable)")
@click.option("--alpha", default=None, type=float,
              help="regularity index attaching the nu column")
@click.option("--cbar", default=None, type=float, help="nu rate constant")
@click.option("--out", default=".", show_default=True, type=click.Path())
def freq(omega_file, qmax, eps_values, alpha, cbar, out):
    """Tabulate the reciprocal smallest divisor and the smallness scales."""
    def payload():
        return {"cmd": "freq", "omega": _load_json(omega_file), "qmax": qmax,
                "eps": list(eps_values), "alpha": alpha, "cbar": cbar}

    def body(sink: _Sink):
        omega = _load_frequency(omega_file)
        records = fa.psi_table(omega, qmax)
        rows = [(r.Q, r.psi, r.min_divisor,
                 ";".join(str(v) for v in r.argmin_k)) for r in records]
        sink.write_csv("psi_table.csv", ["Q", "psi", "min_divisor", "argmin_k"], rows)
        if eps_values:
            cols = ["eps", "Delta", "mu"] + (["nu"] if alpha is not None else [])
            prows = []
            for eps in eps_values:
                prof = fa.mu_nu(omega, eps, alpha=alpha, c_bar=cbar)
                row = [eps, prof.Delta, prof.mu]
                if alpha is not None:
                    row.append(prof.nu)
                prows.append(row)
            sink.write_csv("profile_table.csv", cols, prows)

    _guarded(out, payload, body)


@main.command()
@click.option("--spec", "spec_file", required=True, type=click.Path())
@click.option("--eps", default=None, type=float,
              help="override the template epsilon")
@click.option("--c", default=1.0, show_default=True,
              help="truncation constant in Delta(c/eps)")
@click.option("--omega", "omega_file", default=None, type=click.Path(),
              help="frequency record; defaults to the spec components")
@click.option("--alpha", default=None, type=float)
@click.option("--cbar", default=None, type=float)
@click.option("--out", default=".", show_default=True, type=click.Path())
def nf(spec_file, eps, c, omega_file, alpha, cbar, out):
    """One normal-form step plus its independent estimate checks."""
    def payload():
        return {"cmd": "nf", "spec": _load_json(spec_file), "eps": eps, "c": c,
                "omega": _load_json(omega_file) if omega_file else None,
                "alpha": alpha, "cbar": cbar}

    def body(sink: _Sink):
        spec = _load_spec(spec_file)
        if eps is not None:
            spec = replace(spec, epsilon=eps)
        freq_vec = (_load_frequency(omega_file) if omega_file
                    else FrequencyVector(spec.omega))
        result = one_step_normal_form(_time_scaled(spec), freq_vec, c=c,
                                      gevrey_alpha=alpha, gevrey_c_bar=cbar)
        sink.write_json("normal_form.json", result.to_record())
        sink.write_json("estimates.json",
                        {"record": "nf_estimates", **verify_estimates(result)})

    _guarded(out, payload, body)


@main.command()
@click.option("--spec", "spec_file", required=True, type=click.Path())
@click.option("--i0", required=True, help="target action, comma-separated")
@click.option("--gamma", default=None, type=float,
              help="Diophantine constant; omitted means auto-calibrated")
@click.option("--tau", default=1.5, show_default=True, type=float)
@click.option("--tol", default=1e-11, show_default=True, type=float)
@click.option("--grid", default=64, show_default=True, type=int)
@click.option("--t-final", default=1e3, show_default=True, type=float,
              help="integration-verification horizon")
@click.option("--out", default=".", show_default=True, type=click.Path())
def torus(spec_file, i0, gamma, tau, tol, grid, t_final, out):
    """Continue the invariant torus at a target action and verify it."""
    def payload():
        return {"cmd": "torus", "spec": _load_json(spec_file), "i0": i0,
                "gamma": gamma, "tau": tau, "tol": tol, "grid": grid,
                "t_final": t_final}

    def body(sink: _Sink):
        spec = _load_spec(spec_file)
        I_target = np.array([float(v) for v in i0.split(",")])
        if I_target.size != spec.n:
            raise ValueError(f"--i0 needs {spec.n} components, got {I_target.size}")
        # non-resonance guard on the base frequency, depth = solve grid
        FrequencyVector(spec.omega, q_check=grid)
        h3 = _time_scaled(spec)
        emb = solve_torus(h3, I_target, gamma=gamma, tau=tau, grid=grid, tol=tol)
        sink.write_json("torus.json", emb.to_record())
        phis = emb.grid_phis()
        theta, act = emb.grid_points()
        n = emb.n
        cols = ([f"phi_{j + 1}" for j in range(n)]
                + [f"theta_{j + 1}" for j in range(n)]
                + [f"I_{j + 1}" for j in range(n)])
        rows = [tuple(map(float, np.concatenate(triple)))
                for triple in zip(phis, theta, act)]
        sink.write_csv("torus_surface.csv", cols, rows)
        report = verify_by_integration(h3, emb, t_final=t_final, step=1e-2,
                                       method="dop853")
        sink.write_json("verification.json",
                        {"record": "torus_verification", **report})

    _guarded(out, payload, body)


@main.command()
@click.option("--plan", "plan_file", required=True, type=click.Path())
@click.option("--out", default=".", show_default=True, type=click.Path())
def scan(plan_file, out):
    """Run the measure sweep of a plan and fit the complement scaling."""
    def payload():
        return {"cmd": "scan", "plan": _load_json(plan_file)}

    def body(sink: _Sink):
        plan = ms.ScanPlan.from_record(_load_json(plan_file))
        reports = ms.run_plan(plan)
        rows = [(r.epsilon, r.mu, r.gamma_used, r.tau_used, r.samples,
                 r.selected, r.converged, r.complement_fraction, r.wall_time)
                for r in reports]
        sink.write_csv("scan_reports.csv",
                       ["eps", "mu", "gamma", "tau", "samples", "selected",
                        "converged", "complement_fraction", "wall_time"], rows)
        try:
            fit = ms.fit_scaling(reports)
            sink.write_json("scan_fit.json", fit.to_record())
        except InsufficientSpan as exc:
            # the sweep itself succeeded; record why the fit is absent
            sink.write_json("scan_fit.json",
                            {"record": "fit_skipped", "reason": str(exc)})
        if plan.gevrey_alpha is not None:
            frows = ms.gevrey_forecast(plan.freq, plan.epsilons, c=plan.c,
                                       alpha=plan.gevrey_alpha,
                                       c_bar=plan.gevrey_c_bar)
            sink.write_csv("gevrey_forecast.csv",
                           ["eps", "mu", "nu", "sqrt_mu", "predicted_complement"],
                           [(f["eps"], f["mu"], f["nu"], f["sqrt_mu"],
                             f["predicted_complement"]) for f in frows])

    _guarded(out, payload, body)


@main.command()
@click.option("--spec", "spec_file", required=True, type=click.Path())
@click.option("--t", "t_final", required=True, type=float, help="flow horizon")
@click.option("--h", "step", required=True, type=float, help="midpoint step")
@click.option("--i0", default=None, help="start action, comma-separated (default 0)")
@click.option("--points", default=4, show_default=True,
              help="number of trajectories, staggered start angles")
@click.option("--out", default=".", show_default=True, type=click.Path())
def probe(spec_file, t_final, step, i0, points, out):
    """Integrate trajectories and report drift diagnostics."""
    def payload():
        return {"cmd": "probe", "spec": _load_json(spec_file), "t": t_final,
                "h": step, "i0": i0, "points": points}

    def body(sink: _Sink):
        spec = _load_spec(spec_file)
        n = spec.n
        act0 = (np.array([float(v) for v in i0.split(",")])
                if i0 else np.zeros(n))
        if act0.size != n:
            raise ValueError(f"--i0 needs {n} components, got {act0.size}")
        total_steps = max(1, int(round(t_final / step)))
        every = max(1, total_steps // 256)
        rows = []
        summary = []
        for p in range(points):
            theta0 = np.full(n, (p + 0.5) / points)
            flow = integrate_flow(spec, PhaseState(theta0, act0.copy()),
                                  t_final, step, record_every=every)
            for t, th, act, en in zip(flow.times, flow.thetas,
                                      flow.actions, flow.energies):
                rows.append((p, float(t), *map(float, th),
                             *map(float, act), float(en)))
            summary.append({
                "trajectory": p,
                "energy_drift": flow.energy_drift,
                "max_action_deviation":
                    float(np.max(np.abs(flow.actions - act0[None, :]))),
                "rotation_estimate":
                    [float(v) for v in (flow.final.theta - theta0) / t_final],
            })
        cols = (["traj", "t"] + [f"theta_{j + 1}" for j in range(n)]
                + [f"I_{j + 1}" for j in range(n)] + ["energy"])
        sink.write_csv("probe_trajectories.csv", cols, rows)
        sink.write_json("probe_summary.json",
                        {"record": "probe_summary", "trajectories": summary})

    _guarded(out, payload, body)


if __name__ == "__main__":
    main()

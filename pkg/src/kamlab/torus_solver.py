"""Invariant torus continuation for rescaled Hamiltonians, by spectral Newton.

The torus is parametrized Kolmogorov-style,
    K(phi) = (phi + u(phi), I0 + v(phi)),   phi in T^n,
with u, v zero-average (gauge) and I0 a free counterterm.  Invariance with
internal frequency Omega means
    E_ang(phi) = dH/dI (K(phi)) - (Id + Du(phi)) Omega = 0,
    E_act(phi) = dH/dtheta (K(phi)) + Dv(phi) Omega = 0.
The linear part of H contributes dH/dI = Omega_base exactly, so the defects
are computed with the large base frequency cancelled analytically; only the
O(1) frequency shift and the perturbation gradients ever enter the floats.

Each quasi-Newton sweep does two cohomological solves with divisors
2*pi*i (k . Omega) on the FFT grid and shifts I0 by the counterterm
  dI0 = -<T>^{-1} (<E_ang> + <T dv>),   T = d2H/dI2 (K(phi)),
which is where Kolmogorov non-degeneracy (<T> invertible) is used.

The target frequency is certified Diophantine before solving: the slow
vector eps * Omega must satisfy |k . w| >= gamma |k|_1^(-tau) for every
representable grid mode.  Divisors are rechecked against half that floor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    KolmogorovDegenerate,
    NonConvergence,
    OutsideImage,
    SmallDivisorBreakdown,
)
from .fourier_taylor import HamiltonianSpec, PhaseState, integrate_flow
from .freq_arith import _DivisorTable, compensated_dot

TWO_PI = 2.0 * math.pi

# pulled-back tori must stay inside this fraction of the declared domain
PULLBACK_MARGIN = 0.9


# ---------------------------------------------------------------------------
# spectral helpers
# ---------------------------------------------------------------------------

def _wavevectors(grid: int, n: int) -> np.ndarray:
    """Integer wavevectors in fftn layout, shape (grid^n, n)."""
    freqs = np.fft.fftfreq(grid, d=1.0 / grid).astype(np.int64)
    mesh = np.meshgrid(*([freqs] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _grid_phis(grid: int, n: int) -> np.ndarray:
    """(grid^n, n) collocation angles in [0, 1)."""
    axis = np.arange(grid) / grid
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _pad_hat(coeffs: np.ndarray, grid_to: int) -> np.ndarray:
    """Zero-pad fftn-layout coefficients onto a finer grid (same values)."""
    n = coeffs.ndim
    grid = coeffs.shape[0]
    if grid_to == grid:
        return coeffs
    if grid_to < grid:
        raise ValueError("padding target must not be coarser")
    out = np.zeros((grid_to,) * n, dtype=complex)
    freqs = np.fft.fftfreq(grid, d=1.0 / grid).astype(np.int64)
    idx = np.where(freqs >= 0, freqs, grid_to + freqs)
    out[np.ix_(*([idx] * n))] = coeffs
    return out


def _hat(values: np.ndarray) -> np.ndarray:
    """Fourier coefficients c_k with values = sum c_k exp(2 pi i k.phi)."""
    n_pts = np.prod(values.shape)
    return np.fft.fftn(values) / n_pts


def _unhat(coeffs: np.ndarray) -> np.ndarray:
    n_pts = np.prod(coeffs.shape)
    return np.fft.ifftn(coeffs) * n_pts


@dataclass(eq=False)
class TargetFrequency:
    """Certified internal frequency of a torus.

    Omega = base + shift where base is the (large) linear frequency of the
    Hamiltonian and shift is the image of the base action I0 under the
    averaged frequency map.  omega_slow = eps * Omega is the vector the
    (gamma, tau) certificate is issued for.
    """
    I0: np.ndarray
    Omega: np.ndarray
    shift: np.ndarray
    omega_slow: np.ndarray
    gamma: float
    tau: float
    q_max: int
    margin: float          # min |k.w| |k|^tau / gamma over the checked ball

    def to_record(self) -> dict:
        return {
            "record": "target_frequency",
            "I0": [repr(float(x)) for x in self.I0],
            "Omega": [repr(float(x)) for x in self.Omega],
            "shift": [repr(float(x)) for x in self.shift],
            "omega_slow": [repr(float(x)) for x in self.omega_slow],
            "gamma": self.gamma, "tau": self.tau,
            "q_max": self.q_max, "margin": self.margin,
        }


def certify_target(spec: HamiltonianSpec, I_target: np.ndarray,
                   gamma: Optional[float] = None, tau: float = 1.5,
                   q_max: Optional[int] = None, grid: int = 64) -> TargetFrequency:
    """Frequency-map image of I_target with a (gamma, tau) Diophantine check.

    The default q_max is four times the grid's Fourier truncation, which
    covers every representable mode on the solve grid through n = 4.  gamma
    None picks the largest certifiable value (99% of the measured minimum of
    |k.w| |k|_1^tau), so the certificate always records an honest margin;
    pass an explicit gamma to make selection meaningful.  Raises
    SmallDivisorBreakdown when the check fails.
    """
    I_target = np.asarray(I_target, dtype=np.float64)
    f_avg = spec.perturbation(include_extra=True).average().compile()
    shift = f_avg.grad_I(np.zeros(spec.n), I_target)
    Omega = spec.frequency_vector() + shift
    omega_slow = spec.epsilon * Omega
    if q_max is None:
        q_max = 4 * (grid // 2)
    table = _DivisorTable(omega_slow)
    table.ensure(q_max)
    shells = np.arange(1, q_max + 1, dtype=np.float64)
    prods = table.shell_min[:q_max] * shells ** tau
    idx = int(np.argmin(prods))
    floor_measured = float(prods[idx])
    if gamma is None:
        gamma = 0.99 * floor_measured
    if floor_measured < gamma:
        raise SmallDivisorBreakdown(
            f"target frequency fails ({gamma:g}, {tau:g}) certification at "
            f"k={tuple(int(v) for v in table.shell_arg[idx])}: "
            f"min |k.w| |k|^tau = {floor_measured:.6e}")
    margin = floor_measured / gamma if gamma > 0 else math.inf
    return TargetFrequency(I0=I_target, Omega=Omega, shift=shift,
                           omega_slow=omega_slow, gamma=float(gamma),
                           tau=float(tau), q_max=int(q_max), margin=margin)


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TorusEmbedding:
    """Fourier data of K(phi) = (phi + u(phi), I0 + v(phi))."""
    grid: int
    I0: np.ndarray                    # (n,)
    u_hat: np.ndarray                 # (n,) + (grid,)*n complex
    v_hat: np.ndarray
    target: TargetFrequency
    epsilon: float
    frame: str = "time_scaled"
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.I0.size

    @property
    def defect_norm(self) -> float:
        """Sup of the invariance error at the end of the Newton run."""
        return self.diagnostics.get("final_defect", math.nan)

    def grid_phis(self) -> np.ndarray:
        """(grid^n, n) collocation angles."""
        return _grid_phis(self.grid, self.n)

    def _values(self, hat: np.ndarray) -> np.ndarray:
        return np.stack([_unhat(hat[j]).real for j in range(self.n)], axis=-1)

    def grid_points(self) -> tuple[np.ndarray, np.ndarray]:
        """theta and I at the collocation points, each (grid^n, n)."""
        phis = self.grid_phis()
        u = self._values(self.u_hat).reshape(-1, self.n)
        v = self._values(self.v_hat).reshape(-1, self.n)
        return phis + u, self.I0[None, :] + v

    def embed(self, phi) -> tuple[np.ndarray, np.ndarray]:
        """K(phi) at arbitrary angles, phi shape (n,) or (N, n)."""
        phi = np.asarray(phi, dtype=np.float64)
        single = phi.ndim == 1
        phi = np.atleast_2d(phi)
        K = _wavevectors(self.grid, self.n)
        phases = np.exp(2j * math.pi * (phi @ K.T))          # (N, modes)
        u = (phases @ self.u_hat.reshape(self.n, -1).T).real
        v = (phases @ self.v_hat.reshape(self.n, -1).T).real
        theta = phi + u
        act = self.I0[None, :] + v
        if single:
            return theta[0], act[0]
        return theta, act

    def sup_u(self) -> float:
        return float(np.max(np.abs(self._values(self.u_hat))))

    def sup_v(self) -> float:
        return float(np.max(np.abs(self._values(self.v_hat))))

    def to_record(self, coeff_tol: float = 1e-16) -> dict:
        def sparse(hat):
            K = _wavevectors(self.grid, self.n)
            out = []
            for j in range(self.n):
                flat = hat[j].ravel()
                for idx in np.nonzero(np.abs(flat) > coeff_tol)[0]:
                    out.append([[int(v) for v in K[idx]], j,
                                flat[idx].real, flat[idx].imag])
            return out
        return {
            "record": "torus_embedding",
            "n": self.n,
            "grid": self.grid,
            "frame": self.frame,
            "epsilon": self.epsilon,
            "I0": [repr(float(x)) for x in self.I0],
            "u_coeffs": sparse(self.u_hat),
            "v_coeffs": sparse(self.v_hat),
            "target": self.target.to_record(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TorusEmbedding":
        if rec.get("record") != "torus_embedding":
            raise ValueError("not a torus_embedding record")
        n = rec["n"]
        grid = rec["grid"]
        shape = (n,) + (grid,) * n
        u_hat = np.zeros(shape, dtype=complex)
        v_hat = np.zeros(shape, dtype=complex)
        K = _wavevectors(grid, n)
        index = {tuple(k): i for i, k in enumerate(K)}
        for target_arr, key in ((u_hat, "u_coeffs"), (v_hat, "v_coeffs")):
            for kvec, j, re, im in rec[key]:
                flat = target_arr[j].ravel()
                flat[index[tuple(kvec)]] = complex(re, im)
                target_arr[j] = flat.reshape((grid,) * n)
        t = rec["target"]
        target = TargetFrequency(
            I0=np.array([float(s) for s in t["I0"]]),
            Omega=np.array([float(s) for s in t["Omega"]]),
            shift=np.array([float(s) for s in t["shift"]]),
            omega_slow=np.array([float(s) for s in t["omega_slow"]]),
            gamma=t["gamma"], tau=t["tau"], q_max=t["q_max"], margin=t["margin"])
        return cls(grid=grid, I0=np.array([float(s) for s in rec["I0"]]),
                   u_hat=u_hat, v_hat=v_hat, target=target,
                   epsilon=rec["epsilon"], frame=rec["frame"],
                   diagnostics=rec.get("diagnostics", {}))


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

def solve_torus(spec: HamiltonianSpec, I_target,
                gamma: Optional[float] = None, tau: float = 1.5,
                grid: int = 64, tol: float = 1e-11, max_iter: int = 30,
                cond_max: float = 1e8,
                target: Optional[TargetFrequency] = None,
                full_diagnostics: bool = True) -> TorusEmbedding:
    """Newton-continue the invariant torus with frequency pinned to the
    frequency-map image of I_target.

    Raises SmallDivisorBreakdown (certification or divisor floor),
    KolmogorovDegenerate (counterterm matrix singular) or NonConvergence
    (defect stagnates above tol).  `full_diagnostics=False` skips the
    energy-variation and Lagrangian checks (bulk scans call in volume).
    """
    n = spec.n
    if grid % 2 or grid < 4:
        raise ValueError("grid must be even and at least 4")
    I_target = np.asarray(I_target, dtype=np.float64)
    if target is None:
        target = certify_target(spec, I_target, gamma=gamma, tau=tau, grid=grid)
    Omega = target.Omega
    shift = target.shift

    K = _wavevectors(grid, n)
    shape = (grid,) * n
    kdot = compensated_dot(K, Omega).reshape(shape)
    knorm = np.abs(K).sum(axis=1).reshape(shape)
    nyquist = np.any(K == -(grid // 2), axis=1).reshape(shape)

    # certified floor, halved, transported to the fast frame
    with np.errstate(divide="ignore"):
        floor = 0.5 * target.gamma * knorm.astype(float) ** (-tau) / spec.epsilon
    live = (knorm > 0) & ~nyquist
    bad = live & (np.abs(kdot) < floor)
    if np.any(bad):
        kb = K[bad.ravel()][0]
        raise SmallDivisorBreakdown(
            f"divisor at k={tuple(int(v) for v in kb)} below half the "
            f"certified floor")

    denom = np.where(live, 2j * math.pi * kdot, 1.0)

    def cohomological(rhs_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = _hat(rhs_values)
        sol = np.where(live, c / denom, 0.0)
        return sol, _unhat(sol).real

    def directional(hat: np.ndarray) -> np.ndarray:
        return _unhat(hat * np.where(live, 2j * math.pi * kdot, 0.0)).real

    comp = spec.perturbation(include_extra=True).compile()
    phis = _grid_phis(grid, n)

    u_hat = np.zeros((n,) + shape, dtype=complex)
    v_hat = np.zeros((n,) + shape, dtype=complex)
    I0 = I_target.copy()

    history = []
    best = math.inf
    stall = 0
    for iteration in range(max_iter):
        u_vals = np.stack([_unhat(u_hat[j]).real.ravel() for j in range(n)], axis=1)
        v_vals = np.stack([_unhat(v_hat[j]).real.ravel() for j in range(n)], axis=1)
        theta = phis + u_vals
        acts = I0[None, :] + v_vals

        g_I = comp.batch_grad_I(theta, acts)
        g_th = comp.batch_grad_theta(theta, acts)
        Lu = np.stack([directional(u_hat[j]).ravel() for j in range(n)], axis=1)
        Lv = np.stack([directional(v_hat[j]).ravel() for j in range(n)], axis=1)

        E_ang = g_I - shift[None, :] - Lu            # base frequency cancelled
        E_act = g_th + Lv
        defect = max(np.max(np.abs(E_ang)), np.max(np.abs(E_act)))
        history.append(float(defect))
        if defect <= tol:
            break
        # a sweep that fails to shave 5% off the best defect counts as
        # stalled; three in a row and the iteration is going nowhere
        if defect > 0.95 * best:
            stall += 1
            if stall >= 3:
                raise NonConvergence(
                    f"defect stagnated at {defect:.3e} after {iteration + 1} "
                    f"sweeps (history {['%.1e' % h for h in history]})")
        else:
            stall = 0
        best = min(best, defect)

        T = comp.batch_hess_II(theta, acts)          # (pts, n, n)
        T_mean = T.mean(axis=0)
        cond = np.linalg.cond(T_mean)
        if not np.isfinite(cond) or cond > cond_max:
            raise KolmogorovDegenerate(
                f"averaged twist matrix has condition {cond:.3e} "
                f"(limit {cond_max:g}); counterterm is unreliable")

        # action correction: L_Omega dv = -(E_act - <E_act>)
        dv_hat = np.empty_like(v_hat)
        dv_vals = np.empty_like(v_vals)
        act_mean = E_act.mean(axis=0)
        for j in range(n):
            rhs = -(E_act[:, j] - act_mean[j]).reshape(shape)
            dv_hat[j], sol = cohomological(rhs)
            dv_vals[:, j] = sol.ravel()

        # counterterm from Kolmogorov non-degeneracy
        Tdv = np.einsum("pij,pj->pi", T, dv_vals)
        rhs_mean = E_ang.mean(axis=0) + Tdv.mean(axis=0)
        try:
            dI0 = -np.linalg.solve(T_mean, rhs_mean)
        except np.linalg.LinAlgError:
            raise KolmogorovDegenerate(
                "averaged twist matrix is singular; no counterterm exists")

        # angle correction: L_Omega du = E_ang + T (dv + dI0), mean removed
        ang_rhs = E_ang + Tdv + np.einsum("pij,j->pi", T, dI0)
        ang_mean = ang_rhs.mean(axis=0)
        du_hat = np.empty_like(u_hat)
        for j in range(n):
            rhs = (ang_rhs[:, j] - ang_mean[j]).reshape(shape)
            du_hat[j], _ = cohomological(rhs)

        u_hat = u_hat + du_hat
        v_hat = v_hat + dv_hat
        I0 = I0 + dI0
    else:
        raise NonConvergence(
            f"defect {history[-1]:.3e} above tol {tol:g} after {max_iter} sweeps")

    emb = TorusEmbedding(grid=grid, I0=I0, u_hat=u_hat, v_hat=v_hat,
                         target=target, epsilon=spec.epsilon)
    if full_diagnostics:
        emb.diagnostics = _post_diagnostics(spec, emb, history)
    else:
        emb.diagnostics = {"newton_defects": history,
                           "iterations": len(history),
                           "final_defect": history[-1]}
    return emb


def _post_diagnostics(spec: HamiltonianSpec, emb: TorusEmbedding,
                      history: list) -> dict:
    theta, acts = emb.grid_points()
    full = spec.combined_series().compile()
    energies = full.batch_value(theta, acts)
    e_scale = max(1.0, float(np.max(np.abs(energies))))
    diag = {
        "newton_defects": history,
        "iterations": len(history),
        "final_defect": history[-1],
        "sup_u": emb.sup_u(),
        "sup_v": emb.sup_v(),
        "energy_variation": float(np.ptp(energies)) / e_scale,
        "lagrangian_defect": lagrangian_defect(emb),
        "mean_u": float(np.max(np.abs(
            [emb.u_hat[j].ravel()[0].real for j in range(emb.n)]))),
        "mean_v": float(np.max(np.abs(
            [emb.v_hat[j].ravel()[0].real for j in range(emb.n)]))),
    }
    return diag


def lagrangian_defect(emb: TorusEmbedding) -> float:
    """Max antisymmetric defect of (Id+Du)^T Dv over the grid.

    An exact invariant torus of a Hamiltonian flow is Lagrangian, which for
    this parametrization means (Id+Du)^T Dv symmetric; the residual decays
    with the Newton defect."""
    n, grid = emb.n, emb.grid
    shape = (grid,) * n
    K = _wavevectors(grid, n)
    Du = np.empty((grid ** n, n, n))
    Dv = np.empty((grid ** n, n, n))
    for j in range(n):
        for l in range(n):
            kfac = (2j * math.pi * K[:, l]).reshape(shape)
            Du[:, j, l] = _unhat(emb.u_hat[j] * kfac).real.ravel()
            Dv[:, j, l] = _unhat(emb.v_hat[j] * kfac).real.ravel()
    A = Du + np.eye(n)[None, :, :]
    M = np.einsum("pji,pjl->pil", A, Dv)
    asym = M - np.transpose(M, (0, 2, 1))
    return float(np.max(np.abs(asym)))


# ---------------------------------------------------------------------------
# verification, defect evaluation, pull-back
# ---------------------------------------------------------------------------

def invariance_defect(spec: HamiltonianSpec, emb: TorusEmbedding,
                      Omega: Optional[np.ndarray] = None,
                      grid: Optional[int] = None) -> float:
    """Sup norm of X_H(K(phi)) - DK(phi) Omega on an evaluation grid.

    Works for any frame: Omega defaults to the fast target frequency in the
    scaled frame and to omega_slow for a pulled-back physical embedding.
    Passing a finer grid than the embedding's own re-evaluates the defect
    between collocation points (spectral-accuracy check)."""
    if Omega is None:
        Omega = (emb.target.omega_slow if emb.frame == "physical"
                 else emb.target.Omega)
    n = emb.n
    N = emb.grid if grid is None else grid
    phis = _grid_phis(N, n)
    theta, acts = emb.embed(phis)
    comp = spec.perturbation(include_extra=True).compile()
    g_I = comp.batch_grad_I(theta, acts)
    g_th = comp.batch_grad_theta(theta, acts)
    K = _wavevectors(emb.grid, n)
    kdot = (2j * math.pi * compensated_dot(K, Omega)).reshape((emb.grid,) * n)
    Lu = np.stack(
        [_unhat(_pad_hat(emb.u_hat[j] * kdot, N)).real.ravel() for j in range(n)],
        axis=1)
    Lv = np.stack(
        [_unhat(_pad_hat(emb.v_hat[j] * kdot, N)).real.ravel() for j in range(n)],
        axis=1)
    E_ang = spec.frequency_vector()[None, :] + g_I - Omega[None, :] - Lu
    E_act = -g_th - Lv
    return max(float(np.max(np.abs(E_ang))), float(np.max(np.abs(E_act))))


def _batch_midpoint(comp, theta: np.ndarray, acts: np.ndarray,
                    t_final: float, step: float,
                    tol: float = 1e-14, max_iter: int = 60):
    """Implicit midpoint applied to many phase points at once."""
    th = theta.copy()
    I = acts.copy()
    n_steps = int(round(t_final / step))
    half = 0.5 * step
    for _ in range(n_steps):
        d_th = np.zeros_like(th)
        d_I = np.zeros_like(I)
        for it in range(max_iter):
            gI = comp.batch_grad_I(th + d_th, I + d_I)
            gTh = comp.batch_grad_theta(th + d_th, I + d_I)
            new_th = half * gI
            new_I = -half * gTh
            delta = max(np.max(np.abs(new_th - d_th)),
                        np.max(np.abs(new_I - d_I)))
            d_th, d_I = new_th, new_I
            if delta <= tol:
                break
        else:
            raise NonConvergence("batch midpoint fixed point did not settle")
        th = th + 2.0 * d_th
        I = I + 2.0 * d_I
    return th, I


def verify_by_integration(spec: HamiltonianSpec, emb: TorusEmbedding,
                          t_final: float = 1e3, step: float = 1e-2,
                          n_points: int = 8, method: str = "midpoint",
                          record_every: int = 200) -> dict:
    """Track trajectories started on the torus in the slow frame.

    The fast frame has frequencies of size 1/eps, so the flow is integrated
    for H_slow = eps * H, where the torus carries frequency omega_slow and
    t_final is an honest multiple of the rotation period.  Reported errors
    compare the trajectory with the rigid rotation carried to the embedding.
    """
    h_slow = spec.combined_series(scale=spec.epsilon)
    w_slow = emb.target.omega_slow
    worst_theta = 0.0
    worst_act = 0.0
    worst_energy = 0.0
    for p in range(n_points):
        phi0 = np.full(emb.n, (p + 0.5) / n_points)
        th0, I0 = emb.embed(phi0)
        res = integrate_flow(h_slow, PhaseState(th0, I0), t_final, step,
                             method=method, record_every=record_every)
        phi_t = phi0[None, :] + np.outer(res.times, w_slow)
        th_exp, act_exp = emb.embed(phi_t)
        dth = res.thetas - th_exp
        dth -= np.round(dth)                     # compare on the torus
        worst_theta = max(worst_theta, float(np.max(np.abs(dth))))
        worst_act = max(worst_act, float(np.max(np.abs(res.actions - act_exp))))
        worst_energy = max(worst_energy, res.energy_drift)
    return {
        "t_final": t_final,
        "step": step,
        "method": method,
        "n_points": n_points,
        "max_theta_error": worst_theta,
        "max_action_error": worst_act,
        "max_deviation": max(worst_theta, worst_act),
        "energy_drift": worst_energy,
    }


def pull_back(emb: TorusEmbedding, physical_radius: float,
              nf=None, margin_coeff: float = 1.0,
              flow_step: float = 0.125) -> TorusEmbedding:
    """Map the torus to original coordinates: undo the normal-form change of
    variables (when its result is given), then the action scaling.

    The normalized Hamiltonian satisfies H_nf(z) = H(Phi(z)) with Phi the
    time-1 flow of the generator, so the original-coordinate torus is
    Phi(K(phi)) refit on the collocation grid.  The refit is re-gauged
    exactly in Fourier space: a constant angle offset is absorbed into the
    parametrization and the action average into I0.

    Raises OutsideImage when the scaled torus sits closer to the unit action
    boundary than margin_coeff * sqrt(mu) (nf given), or when the pulled-back
    actions leave PULLBACK_MARGIN of the physical domain."""
    eps = emb.epsilon
    n = emb.n
    grid = emb.grid
    u_hat, v_hat, I0 = emb.u_hat, emb.v_hat, emb.I0
    if nf is not None:
        phis = _grid_phis(grid, n)
        theta, acts = emb.embed(phis)
        sup_norm = float(np.max(np.linalg.norm(acts, axis=1)))
        margin = margin_coeff * math.sqrt(nf.mu)
        if 1.0 - sup_norm < margin:
            raise OutsideImage(
                f"scaled torus is {1.0 - sup_norm:.6g} from the unit action "
                f"boundary, inside the sqrt(mu) margin {margin:.6g}")
        comp = nf.flow_generator().compile()
        theta, acts = _batch_midpoint(comp, theta, acts, 1.0, flow_step)
        shape = (grid,) * n
        u_hat = np.stack([_hat((theta[:, j] - phis[:, j]).reshape(shape))
                          for j in range(n)])
        v_hat = np.stack([_hat(acts[:, j].reshape(shape)) for j in range(n)])
        # re-gauge: move the angle means into the parameter origin and the
        # action means into I0 (exact phase shift, no interpolation)
        zero = (0,) * n
        u_bar = np.array([u_hat[j][zero].real for j in range(n)])
        I0 = np.array([v_hat[j][zero].real for j in range(n)])
        K = _wavevectors(grid, n)
        phase = np.exp(-2j * math.pi * (K @ u_bar)).reshape(shape)
        u_hat = u_hat * phase[None]
        v_hat = v_hat * phase[None]
        for j in range(n):
            u_hat[j][zero] = 0.0
            v_hat[j][zero] = 0.0
    sup_act = float(np.max(np.abs(I0))) + float(
        np.max(np.abs(np.stack([_unhat(v_hat[j]).real for j in range(n)]))))
    if eps * sup_act > PULLBACK_MARGIN * physical_radius:
        raise OutsideImage(
            f"pulled-back actions reach {eps * sup_act:.6g}, beyond "
            f"{PULLBACK_MARGIN:g} * {physical_radius:g}")
    out = TorusEmbedding(
        grid=grid, I0=eps * I0, u_hat=u_hat.copy(),
        v_hat=eps * v_hat, target=emb.target, epsilon=eps,
        frame="physical", diagnostics=dict(emb.diagnostics))
    out.diagnostics["pullback_sup_action"] = eps * sup_act
    return out

"""Fourier-Taylor series calculus on T^n x R^n and structured Hamiltonians.

A series is a finite sum of terms  c * exp(2*pi*i k.theta) * I^m  with k an
integer wavevector, m an action multi-index, and complex c.  Angles have
period 1, so every derivative in theta carries an explicit 2*pi.  Real-valued
series satisfy c(-k, m) == conj(c(k, m)); all operations preserve this.

The Poisson bracket convention is
    {F, G} = dF/dtheta . dG/dI - dF/dI . dG/dtheta,
matching equations of motion  theta' = dH/dI,  I' = -dH/dtheta,  and
F' = {F, chi} along the flow of chi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DomainExceeded,
    KolmogorovDegenerate,
    NonConvergentStep,
    StateMismatch,
)

TWO_PI = 2.0 * math.pi


def _as_key(k, m) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return tuple(int(v) for v in k), tuple(int(v) for v in m)


class FourierTaylorSeries:
    """Immutable-by-convention container of (k, m) -> complex coefficients.

    All algebraic operations return new instances; the term dict should not
    be mutated after construction (compiled evaluators are cached).
    """

    def __init__(self, n: int, terms: Optional[dict] = None):
        self.n = int(n)
        self._terms: dict = {}
        if terms:
            for (k, m), c in terms.items():
                key = _as_key(k, m)
                if len(key[0]) != self.n or len(key[1]) != self.n:
                    raise ValueError("term dimension does not match n")
                if any(v < 0 for v in key[1]):
                    raise ValueError("negative action exponent")
                c = complex(c)
                if c != 0:
                    self._terms[key] = self._terms.get(key, 0j) + c
        self._compiled: Optional["CompiledSeries"] = None

    # -- constructors ---------------------------------------------------------

    @staticmethod
    def zero(n: int) -> "FourierTaylorSeries":
        return FourierTaylorSeries(n)

    @staticmethod
    def monomial(n: int, m, coeff: float = 1.0) -> "FourierTaylorSeries":
        return FourierTaylorSeries(n, {(tuple([0] * n), tuple(m)): coeff})

    @staticmethod
    def cosine(n: int, k, m=None, amplitude: float = 1.0) -> "FourierTaylorSeries":
        """amplitude * cos(2 pi k.theta) * I^m."""
        m = tuple([0] * n) if m is None else tuple(m)
        k = tuple(k)
        mk = tuple(-v for v in k)
        half = 0.5 * amplitude
        return FourierTaylorSeries(n, {(k, m): half, (mk, m): half})

    @staticmethod
    def sine(n: int, k, m=None, amplitude: float = 1.0) -> "FourierTaylorSeries":
        """amplitude * sin(2 pi k.theta) * I^m."""
        m = tuple([0] * n) if m is None else tuple(m)
        k = tuple(k)
        mk = tuple(-v for v in k)
        half = amplitude / 2j
        return FourierTaylorSeries(n, {(k, m): half, (mk, m): -half})

    # -- bookkeeping ----------------------------------------------------------

    def terms(self) -> dict:
        return dict(self._terms)

    def sorted_terms(self) -> list:
        return sorted(self._terms.items(), key=lambda kv: (kv[0][0], kv[0][1]))

    def __len__(self) -> int:
        return len(self._terms)

    def __repr__(self) -> str:
        return (f"FourierTaylorSeries(n={self.n}, terms={len(self._terms)}, "
                f"deg<={self.action_degree()}, |k|<={self.max_harmonic()})")

    def max_harmonic(self) -> int:
        return max((sum(abs(v) for v in k) for k, _ in self._terms), default=0)

    def action_degree(self) -> int:
        return max((sum(m) for _, m in self._terms), default=0)

    def min_action_degree(self) -> int:
        return min((sum(m) for _, m in self._terms), default=0)

    def leading_size(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def coefficient_norm(self, radius: float = 1.0) -> float:
        """Majorant sum |c| * radius^|m|; an upper bound for |series| on
        real angles and |I|_inf <= radius."""
        return float(sum(abs(c) * radius ** sum(m) for (_, m), c in self._terms.items()))

    def reality_error(self) -> float:
        worst = 0.0
        for (k, m), c in self._terms.items():
            mk = tuple(-v for v in k)
            worst = max(worst, abs(c - self._terms.get((mk, m), 0j).conjugate()))
        return worst

    # -- algebra ----------------------------------------------------------------

    def _binary(self, other: "FourierTaylorSeries", sign: float) -> "FourierTaylorSeries":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        out = dict(self._terms)
        for key, c in other._terms.items():
            out[key] = out.get(key, 0j) + sign * c
        return FourierTaylorSeries(self.n, out)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, factor: complex) -> "FourierTaylorSeries":
        return FourierTaylorSeries(self.n, {key: factor * c for key, c in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, FourierTaylorSeries):
            return self.product(other)
        return self.scale(other)

    __rmul__ = __mul__

    def product(self, other: "FourierTaylorSeries") -> "FourierTaylorSeries":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        out: dict = {}
        for (k1, m1), c1 in self._terms.items():
            for (k2, m2), c2 in other._terms.items():
                key = (tuple(a + b for a, b in zip(k1, k2)),
                       tuple(a + b for a, b in zip(m1, m2)))
                out[key] = out.get(key, 0j) + c1 * c2
        return FourierTaylorSeries(self.n, out)

    def dtheta(self, j: int) -> "FourierTaylorSeries":
        out = {}
        for (k, m), c in self._terms.items():
            if k[j]:
                out[(k, m)] = c * (2j * math.pi * k[j])
        return FourierTaylorSeries(self.n, out)

    def dI(self, j: int) -> "FourierTaylorSeries":
        out = {}
        for (k, m), c in self._terms.items():
            if m[j]:
                md = list(m)
                md[j] -= 1
                out[(k, tuple(md))] = out.get((k, tuple(md)), 0j) + c * m[j]
        return FourierTaylorSeries(self.n, out)

    def poisson(self, other: "FourierTaylorSeries") -> "FourierTaylorSeries":
        """{self, other} = sum_j d_theta_j self * d_I_j other - d_I_j self * d_theta_j other."""
        out = FourierTaylorSeries.zero(self.n)
        for j in range(self.n):
            out = out + self.dtheta(j).product(other.dI(j))
            out = out - self.dI(j).product(other.dtheta(j))
        return out

    # -- filters ------------------------------------------------------------------

    def average(self) -> "FourierTaylorSeries":
        """Angle average: the k = 0 terms."""
        zero = tuple([0] * self.n)
        return FourierTaylorSeries(
            self.n, {key: c for key, c in self._terms.items() if key[0] == zero})

    def oscillating(self) -> "FourierTaylorSeries":
        zero = tuple([0] * self.n)
        return FourierTaylorSeries(
            self.n, {key: c for key, c in self._terms.items() if key[0] != zero})

    def truncate_harmonics(self, K: int) -> "FourierTaylorSeries":
        """Keep terms with |k|_1 <= K."""
        return FourierTaylorSeries(
            self.n,
            {key: c for key, c in self._terms.items()
             if sum(abs(v) for v in key[0]) <= K})

    def high_harmonics(self, K: int) -> "FourierTaylorSeries":
        return FourierTaylorSeries(
            self.n,
            {key: c for key, c in self._terms.items()
             if sum(abs(v) for v in key[0]) > K})

    def action_slice(self, min_degree: int = 0,
                     max_degree: Optional[int] = None) -> "FourierTaylorSeries":
        hi = math.inf if max_degree is None else max_degree
        return FourierTaylorSeries(
            self.n,
            {key: c for key, c in self._terms.items()
             if min_degree <= sum(key[1]) <= hi})

    def prune(self, tol_abs: float) -> "FourierTaylorSeries":
        return FourierTaylorSeries(
            self.n, {key: c for key, c in self._terms.items() if abs(c) > tol_abs})

    # -- evaluation -----------------------------------------------------------------

    def compile(self) -> "CompiledSeries":
        if self._compiled is None:
            self._compiled = CompiledSeries(self)
        return self._compiled

    def evaluate(self, theta, I) -> float:
        return self.compile().value(np.asarray(theta, float), np.asarray(I, float))

    def grad_theta(self, theta, I) -> np.ndarray:
        return self.compile().grad_theta(np.asarray(theta, float), np.asarray(I, float))

    def grad_I(self, theta, I) -> np.ndarray:
        return self.compile().grad_I(np.asarray(theta, float), np.asarray(I, float))

    # -- records ----------------------------------------------------------------------

    def to_record(self) -> dict:
        return {
            "record": "fourier_taylor_series",
            "n": self.n,
            "terms": [[list(k), list(m), c.real, c.imag]
                      for (k, m), c in self.sorted_terms()],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FourierTaylorSeries":
        if rec.get("record") != "fourier_taylor_series":
            raise ValueError("not a fourier_taylor_series record")
        terms = {(tuple(k), tuple(m)): complex(re, im)
                 for k, m, re, im in rec["terms"]}
        return cls(rec["n"], terms)


class CompiledSeries:
    """Vectorized evaluator: distinct phases and action powers shared across
    value / gradient / Hessian queries, single-point or batched over grids."""

    def __init__(self, series: FourierTaylorSeries):
        self.n = series.n
        items = series.sorted_terms()
        nt = len(items)
        self.coeff = np.array([c for _, c in items], dtype=complex)
        kset: dict = {}
        mset: dict = {}
        self.idx_k = np.zeros(nt, dtype=np.intp)
        self.idx_m = np.zeros(nt, dtype=np.intp)
        for t, ((k, m), _) in enumerate(items):
            self.idx_k[t] = kset.setdefault(k, len(kset))
            self.idx_m[t] = mset.setdefault(m, len(mset))
        self.K = np.array(list(kset), dtype=np.int64).reshape(len(kset), self.n)
        self.M = np.array(list(mset), dtype=np.int64).reshape(len(mset), self.n)
        self.Kt = self.K[self.idx_k].astype(np.float64)      # (nt, n)
        self.Mt = self.M[self.idx_m]                          # (nt, n)
        # exponent tables for dI and d2I/dIdI, guarded at zero exponent
        self.Mt_dn1 = np.maximum(self.Mt - 1, 0)
        self.fac1 = self.Mt.astype(np.float64)                # m_j
        self.nt = nt
        # per-dimension exponent tables with the j-th entry lowered once,
        # precomputed so gradient calls allocate nothing term-shaped
        self._Mdn = [self.Mt.copy() for _ in range(self.n)]
        for j in range(self.n):
            self._Mdn[j][:, j] = self.Mt_dn1[:, j]
        self._iKt = 2j * math.pi * self.Kt

    # -- internals -------------------------------------------------------------

    def _phases(self, theta: np.ndarray) -> np.ndarray:
        # theta: (n,) -> (nk,) or (N, n) -> (N, nk)
        return np.exp(2j * math.pi * (theta @ self.K.T))

    def _powers(self, I: np.ndarray, M: np.ndarray) -> np.ndarray:
        # I: (n,) with M (nm, n) -> (nm,);  I: (N, n) -> (N, nm)
        if I.ndim == 1:
            return np.prod(I[None, :] ** M, axis=1)
        return self._powers_batch(I, M)

    def _powers_batch(self, I: np.ndarray, M: np.ndarray) -> np.ndarray:
        # action exponents are tiny ints; cumulative-multiply tables beat
        # N x nt pow calls by an order of magnitude on solver grids
        out = np.ones((I.shape[0], M.shape[0]))
        for j in range(self.n):
            col = np.asarray(M[:, j], dtype=np.int64)
            emax = int(col.max()) if col.size else 0
            if emax == 0:
                continue
            tab = np.empty((I.shape[0], emax + 1))
            tab[:, 0] = 1.0
            for e in range(1, emax + 1):
                tab[:, e] = tab[:, e - 1] * I[:, j]
            out *= tab[:, col]
        return out

    def _weights(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        """coeff * phase * I^m per term: (nt,) or (N, nt)."""
        ph = self._phases(theta)
        pw_t = self._powers(I, self.Mt)
        if theta.ndim == 1:
            return self.coeff * ph[self.idx_k] * pw_t
        return self.coeff[None, :] * ph[:, self.idx_k] * pw_t

    # -- queries -----------------------------------------------------------------

    def value(self, theta: np.ndarray, I: np.ndarray) -> float:
        return float(np.sum(self._weights(theta, I)).real)

    def batch_value(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        return np.sum(self._weights(theta, I), axis=1).real

    def grad_theta(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        w = self._weights(theta, I)
        return (w @ (2j * math.pi * self.Kt)).real

    def batch_grad_theta(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        w = self._weights(theta, I)
        return (w @ (2j * math.pi * self.Kt)).real

    def grad_I(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        ph = self._phases(theta)
        base = self.coeff * ph[self.idx_k]
        out = np.empty(self.n)
        for j in range(self.n):
            pw = np.prod(I[None, :] ** self._Mdn[j], axis=1)
            out[j] = np.sum(base * self.fac1[:, j] * pw).real
        return out

    def canonical_field(self, theta: np.ndarray, I: np.ndarray):
        """(dH/dI, -dH/dtheta) at one point, phases computed once."""
        ph = self._phases(theta)
        base = self.coeff * ph[self.idx_k]
        gI = np.empty(self.n)
        for j in range(self.n):
            pw = np.prod(I[None, :] ** self._Mdn[j], axis=1)
            gI[j] = np.sum(base * self.fac1[:, j] * pw).real
        w = base * np.prod(I[None, :] ** self.Mt, axis=1)
        gTh = (w @ self._iKt).real
        return gI, -gTh

    def batch_grad_I(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        ph = self._phases(theta)
        base = self.coeff[None, :] * ph[:, self.idx_k]
        N = theta.shape[0]
        out = np.empty((N, self.n))
        for j in range(self.n):
            pw = self._powers_batch(I, self._Mdn[j])
            out[:, j] = np.sum(base * self.fac1[None, :, j] * pw, axis=1).real
        return out

    def hess_II(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        return self.batch_hess_II(theta[None, :], I[None, :])[0]

    def batch_hess_II(self, theta: np.ndarray, I: np.ndarray) -> np.ndarray:
        ph = self._phases(theta)
        base = self.coeff[None, :] * ph[:, self.idx_k]
        N = theta.shape[0]
        out = np.empty((N, self.n, self.n))
        for j in range(self.n):
            for l in range(j, self.n):
                Mj = self.Mt.copy()
                if j == l:
                    fac = self.fac1[:, j] * np.maximum(self.fac1[:, j] - 1.0, 0.0)
                    Mj[:, j] = np.maximum(self.Mt[:, j] - 2, 0)
                else:
                    fac = self.fac1[:, j] * self.fac1[:, l]
                    Mj[:, j] = self.Mt_dn1[:, j]
                    Mj[:, l] = self.Mt_dn1[:, l]
                pw = self._powers_batch(I, Mj)
                val = np.sum(base * fac[None, :] * pw, axis=1).real
                out[:, j, l] = val
                out[:, l, j] = val
        return out


# ---------------------------------------------------------------------------
# structured Hamiltonians
# ---------------------------------------------------------------------------

PHYSICAL = "physical"
ACTION_SCALED = "action_scaled"
TIME_SCALED = "time_scaled"


@dataclass(eq=False)
class HamiltonianSpec:
    """H = omega_prefactor * (omega . I) + quad + rest + extra_prefactor * extra.

    state "physical":       quad = A(theta) I.I, rest = O(I^3), prefactor 1.
    state "action_scaled":  after I -> eps I, H -> H/eps: quad carries eps,
                            rest carries eps^(deg-1).
    state "time_scaled":    after H -> H/eps, t -> eps t: prefactor 1/eps.

    `extra` is the slot for a remainder produced by a normal-form step
    (stored with its own explicit prefactor so bookkeeping stays exact).
    """
    omega: np.ndarray
    quad: FourierTaylorSeries
    rest: FourierTaylorSeries
    epsilon: float
    state: str = PHYSICAL
    omega_prefactor: float = 1.0
    extra: Optional[FourierTaylorSeries] = None
    extra_prefactor: float = 0.0
    domain_radius: float = 1.0

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if self.quad.n != self.omega.size or self.rest.n != self.omega.size:
            raise ValueError("series dimension does not match omega")

    @property
    def n(self) -> int:
        return self.omega.size

    # -- scaling chain ---------------------------------------------------------

    def rescale_actions(self) -> "HamiltonianSpec":
        """I -> eps I together with H -> H / eps (state physical -> action_scaled)."""
        if self.state != PHYSICAL:
            raise StateMismatch(f"rescale_actions expects state {PHYSICAL!r}, "
                                f"got {self.state!r}")
        if self.rest.min_action_degree() < 3 and len(self.rest):
            raise StateMismatch("rest part must be O(I^3) in the physical state")
        eps = self.epsilon
        quad = self.quad.scale(eps)
        rest = FourierTaylorSeries(
            self.n,
            {key: c * eps ** (sum(key[1]) - 1) for key, c in self.rest.terms().items()})
        return HamiltonianSpec(
            omega=self.omega, quad=quad, rest=rest, epsilon=eps,
            state=ACTION_SCALED, omega_prefactor=self.omega_prefactor,
            domain_radius=self.domain_radius)

    def rescale_time(self) -> "HamiltonianSpec":
        """H -> H / eps with t -> eps t (state action_scaled -> time_scaled)."""
        if self.state != ACTION_SCALED:
            raise StateMismatch(f"rescale_time expects state {ACTION_SCALED!r}, "
                                f"got {self.state!r}")
        eps = self.epsilon
        return HamiltonianSpec(
            omega=self.omega, quad=self.quad.scale(1.0 / eps),
            rest=self.rest.scale(1.0 / eps), epsilon=eps,
            state=TIME_SCALED, omega_prefactor=self.omega_prefactor / eps,
            domain_radius=self.domain_radius)

    # -- views -------------------------------------------------------------------

    def perturbation(self, include_extra: bool = True) -> FourierTaylorSeries:
        """Everything except the linear omega term."""
        f = self.quad + self.rest
        if include_extra and self.extra is not None and self.extra_prefactor:
            f = f + self.extra.scale(self.extra_prefactor)
        return f

    def linear_series(self, scale: float = 1.0) -> FourierTaylorSeries:
        terms = {}
        zero = tuple([0] * self.n)
        for j in range(self.n):
            m = [0] * self.n
            m[j] = 1
            terms[(zero, tuple(m))] = scale * self.omega_prefactor * self.omega[j]
        return FourierTaylorSeries(self.n, terms)

    def combined_series(self, scale: float = 1.0) -> FourierTaylorSeries:
        """Full H (or scale*H) as one series, linear part included."""
        return self.linear_series(scale) + self.perturbation().scale(scale)

    def evaluate(self, theta, I) -> float:
        I = np.asarray(I, float)
        lin = self.omega_prefactor * float(self.omega @ I)
        return lin + self.perturbation().evaluate(theta, I)

    def frequency_vector(self) -> np.ndarray:
        """The frequency of the unperturbed linear flow, prefactor included."""
        return self.omega_prefactor * self.omega

    # -- records --------------------------------------------------------------------

    def to_record(self) -> dict:
        rec = {
            "record": "hamiltonian_spec",
            "n": self.n,
            "omega": [repr(float(v)) for v in self.omega],
            "epsilon": self.epsilon,
            "state": self.state,
            "omega_prefactor": self.omega_prefactor,
            "domain_radius": self.domain_radius,
            "quad": self.quad.to_record(),
            "rest": self.rest.to_record(),
        }
        if self.extra is not None:
            rec["extra"] = self.extra.to_record()
            rec["extra_prefactor"] = self.extra_prefactor
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "HamiltonianSpec":
        if rec.get("record") != "hamiltonian_spec":
            raise ValueError("not a hamiltonian_spec record")
        extra = FourierTaylorSeries.from_record(rec["extra"]) if "extra" in rec else None
        return cls(
            omega=np.array([float(s) for s in rec["omega"]]),
            quad=FourierTaylorSeries.from_record(rec["quad"]),
            rest=FourierTaylorSeries.from_record(rec["rest"]),
            epsilon=rec["epsilon"],
            state=rec["state"],
            omega_prefactor=rec["omega_prefactor"],
            extra=extra,
            extra_prefactor=rec.get("extra_prefactor", 0.0),
            domain_radius=rec.get("domain_radius", 1.0),
        )


def quadratic_from_matrices(n: int, constant: np.ndarray,
                            modulations: Iterable[tuple] = ()) -> FourierTaylorSeries:
    """Build A(theta) I.I with A = constant + sum_k cos(2pi k.th) C_k + sin(2pi k.th) S_k.

    Matrices are symmetrized; `modulations` is an iterable of (k, C, S)
    with either matrix allowed to be None.
    """
    def quad_terms(matrix) -> FourierTaylorSeries:
        A = 0.5 * (np.asarray(matrix, float) + np.asarray(matrix, float).T)
        out = FourierTaylorSeries.zero(n)
        for i in range(n):
            for j in range(i, n):
                m = [0] * n
                m[i] += 1
                m[j] += 1
                coeff = A[i, j] if i == j else 2.0 * A[i, j]
                if coeff:
                    out = out + FourierTaylorSeries.monomial(n, m, coeff)
        return out

    series = quad_terms(constant)
    for k, C, S in modulations:
        if C is not None:
            for (_, mm), c in quad_terms(C).terms().items():
                series = series + FourierTaylorSeries(
                    n, {(tuple(k), mm): 0.5 * c,
                        (tuple(-v for v in k), mm): 0.5 * c})
        if S is not None:
            for (_, mm), c in quad_terms(S).terms().items():
                series = series + FourierTaylorSeries(
                    n, {(tuple(k), mm): c / 2j,
                        (tuple(-v for v in k), mm): -c / 2j})
    return series


def averaged_quadratic_matrix(series: FourierTaylorSeries) -> np.ndarray:
    """Symmetric matrix A0 with I.A0 I = angle average of the degree-2 part."""
    n = series.n
    avg = series.average().action_slice(2, 2)
    A = np.zeros((n, n))
    for (_, m), c in avg.terms().items():
        idx = [j for j, v in enumerate(m) for _ in range(v)]
        i, j = idx[0], idx[1]
        if i == j:
            A[i, i] += c.real
        else:
            A[i, j] += 0.5 * c.real
            A[j, i] += 0.5 * c.real
    return A


def check_kolmogorov(series: FourierTaylorSeries,
                     cond_max: float = 1e8) -> tuple[np.ndarray, float]:
    """Averaged quadratic matrix and its condition number.

    Raises KolmogorovDegenerate when the matrix is singular or worse
    conditioned than cond_max.
    """
    A0 = averaged_quadratic_matrix(series)
    if not np.all(np.isfinite(A0)) or np.allclose(A0, 0.0):
        raise KolmogorovDegenerate("averaged quadratic part vanishes")
    cond = float(np.linalg.cond(A0))
    if not math.isfinite(cond) or cond > cond_max:
        raise KolmogorovDegenerate(
            f"averaged quadratic matrix condition {cond:.3e} exceeds {cond_max:.1e}")
    return A0, cond


# ---------------------------------------------------------------------------
# canonical flows
# ---------------------------------------------------------------------------

@dataclass
class PhaseState:
    theta: np.ndarray
    I: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.I = np.asarray(self.I, dtype=np.float64)

    def wrapped(self) -> "PhaseState":
        return PhaseState(np.mod(self.theta, 1.0), self.I.copy())


@dataclass
class FlowResult:
    final: PhaseState
    times: np.ndarray
    thetas: np.ndarray
    actions: np.ndarray
    energies: np.ndarray
    steps: int
    method: str

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energies - self.energies[0])))


def _vector_field(comp: CompiledSeries, theta: np.ndarray, I: np.ndarray):
    return comp.canonical_field(theta, I)


def integrate_flow(hamiltonian, state0: PhaseState, t_final: float, step: float,
                   method: str = "midpoint", domain_radius: Optional[float] = None,
                   record_every: int = 0,
                   fixed_point_tol: float = 1e-14,
                   fixed_point_max_iter: int = 100) -> FlowResult:
    """Integrate theta' = dH/dI, I' = -dH/dtheta.

    `hamiltonian` is a FourierTaylorSeries, CompiledSeries, or HamiltonianSpec
    (combined at scale 1). "midpoint" is the implicit midpoint rule, symplectic,
    with a fixed-point solve per step; "dop853" delegates to scipy and serves
    as the accuracy oracle.  Angles are not wrapped, so rotation numbers can
    be read off the final state.
    """
    if isinstance(hamiltonian, HamiltonianSpec):
        comp = hamiltonian.combined_series().compile()
    elif isinstance(hamiltonian, FourierTaylorSeries):
        comp = hamiltonian.compile()
    else:
        comp = hamiltonian
    theta = state0.theta.astype(float).copy()
    I = state0.I.astype(float).copy()
    n_steps = int(round(t_final / step))
    if abs(n_steps * step - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ValueError("t_final must be an integer number of steps")

    rec_t, rec_th, rec_I = [0.0], [theta.copy()], [I.copy()]

    def check_domain(Ivec):
        if domain_radius is not None and np.max(np.abs(Ivec)) > domain_radius:
            raise DomainExceeded(
                f"|I|_inf = {np.max(np.abs(Ivec)):.6g} exceeds domain radius "
                f"{domain_radius:g}")

    check_domain(I)

    if method == "midpoint":
        half = 0.5 * step
        incr_th = incr_I = None
        for s in range(1, n_steps + 1):
            if incr_th is None:
                gI, gTh = _vector_field(comp, theta, I)
                th_mid = theta + half * gI
                I_mid = I + half * gTh
            else:
                # warm start: previous half-step increment is an O(h^2) guess
                th_mid = theta + incr_th
                I_mid = I + incr_I
            converged = False
            for _ in range(fixed_point_max_iter):
                gI, gTh = _vector_field(comp, th_mid, I_mid)
                th_new = theta + half * gI
                I_new = I + half * gTh
                delta = max(np.max(np.abs(th_new - th_mid)),
                            np.max(np.abs(I_new - I_mid)))
                th_mid, I_mid = th_new, I_new
                if delta <= fixed_point_tol * (1.0 + np.max(np.abs(I_mid))):
                    converged = True
                    break
            if not converged:
                raise NonConvergentStep(
                    f"implicit midpoint fixed point stalled at step {s}")
            incr_th = th_mid - theta
            incr_I = I_mid - I
            theta = 2.0 * th_mid - theta
            I = 2.0 * I_mid - I
            check_domain(I)
            if record_every and (s % record_every == 0 or s == n_steps):
                rec_t.append(s * step)
                rec_th.append(theta.copy())
                rec_I.append(I.copy())
    elif method == "dop853":
        from scipy.integrate import solve_ivp

        nn = theta.size

        def rhs(_t, z):
            gI, gTh = _vector_field(comp, z[:nn], z[nn:])
            return np.concatenate([gI, gTh])

        t_eval = None
        if record_every:
            t_eval = np.arange(0, n_steps + 1, record_every) * step
            if t_eval[-1] != t_final:
                t_eval = np.append(t_eval, t_final)
        sol = solve_ivp(rhs, (0.0, t_final), np.concatenate([theta, I]),
                        method="DOP853", rtol=1e-12, atol=1e-13, t_eval=t_eval)
        if not sol.success:
            raise NonConvergentStep(f"dop853 failed: {sol.message}")
        for t, z in zip(sol.t[1:], sol.y.T[1:]):
            rec_t.append(float(t))
            rec_th.append(z[:nn].copy())
            rec_I.append(z[nn:].copy())
        theta, I = sol.y[:nn, -1].copy(), sol.y[nn:, -1].copy()
        check_domain(I)
        if rec_t[-1] != t_final:
            rec_t.append(t_final)
            rec_th.append(theta.copy())
            rec_I.append(I.copy())
    else:
        raise ValueError(f"unknown method {method!r}")

    if not record_every and rec_t[-1] != t_final:
        rec_t.append(t_final)
        rec_th.append(theta.copy())
        rec_I.append(I.copy())
    thetas = np.array(rec_th)
    actions = np.array(rec_I)
    energies = comp.batch_value(thetas, actions)
    return FlowResult(final=PhaseState(theta, I), times=np.array(rec_t),
                      thetas=thetas, actions=actions, energies=energies,
                      steps=n_steps, method=method)

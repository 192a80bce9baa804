"""Small-divisor arithmetic for frequency vectors.

Conventions used throughout: a frequency vector ``w`` has sup-norm 1, lattice
vectors ``k`` are measured in the l1 norm, and the divisor of ``k`` is
``|k . w|``.  The central quantities are

* ``psi(w, Q)``: reciprocal of the smallest divisor over ``0 < |k|_1 <= Q``,
* ``delta(w, x)``: the largest integer ``Q >= 1`` with ``Q * psi(w, Q) <= x``,
* ``mu = 1/delta(w, c/eps)`` and the Gevrey companion
  ``nu = exp(-c_bar * mu**(-1/alpha))``.

Enumeration runs over the half lattice (first nonzero component positive)
with a compensated dot product; ``|(-k) . w| == |k . w|`` exactly in IEEE
arithmetic, so this is loss-free.  Vectors built from continued fractions can
carry an exact rational tag; ``delta``/``diophantine_check`` then use exact
convergent windows, which stay meaningful far beyond float64 resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import (
    BelowThreshold,
    ConstructionFailed,
    ResonanceDetected,
)

# Divisors below RESONANCE_TOL * |k|_1 are treated as exact resonances.
RESONANCE_TOL = 1e-14

# Largest Q the float enumeration path will attempt before demanding an
# exact tag (ball size grows like Q^n).
ENUMERATION_CAP = 200_000


# ---------------------------------------------------------------------------
# lattice enumeration
# ---------------------------------------------------------------------------

def _ball_blocks(d: int, radius: int) -> Iterator[np.ndarray]:
    """Yield int64 arrays jointly covering all k in Z^d with |k|_1 <= radius."""
    if radius < 0:
        return
    if d == 0:
        yield np.zeros((1, 0), dtype=np.int64)
    elif d == 1:
        yield np.arange(-radius, radius + 1, dtype=np.int64)[:, None]
    elif d == 2:
        a = np.arange(-radius, radius + 1, dtype=np.int64)
        k1, k2 = np.meshgrid(a, a, indexing="ij")
        mask = np.abs(k1) + np.abs(k2) <= radius
        yield np.stack([k1[mask], k2[mask]], axis=1)
    else:
        for lead in range(-radius, radius + 1):
            for tail in _ball_blocks(d - 1, radius - abs(lead)):
                lead_col = np.full((tail.shape[0], 1), lead, dtype=np.int64)
                yield np.concatenate([lead_col, tail], axis=1)


def _halfspace_blocks(n: int, radius: int) -> Iterator[np.ndarray]:
    """Yield blocks covering {k : 0 < |k|_1 <= radius, first nonzero > 0}."""
    for j in range(n):
        for lead in range(1, radius + 1):
            for tail in _ball_blocks(n - j - 1, radius - lead):
                block = np.zeros((tail.shape[0], n), dtype=np.int64)
                block[:, j] = lead
                if n - j - 1:
                    block[:, j + 1:] = tail
                yield block


def compensated_dot(K: np.ndarray, w: np.ndarray) -> np.ndarray:
    """K @ w per row with Neumaier-compensated summation.

    The op-for-op order (products in column order, running compensated sum)
    is part of the reproducibility contract: any code path that evaluates the
    same k through this expression gets bit-identical divisors.
    """
    Kf = K.astype(np.float64)
    s = Kf[:, 0] * w[0]
    err = np.zeros_like(s)
    for j in range(1, w.size):
        p = Kf[:, j] * w[j]
        t = s + p
        big = np.abs(s) >= np.abs(p)
        err += np.where(big, (s - t) + p, (p - t) + s)
        s = t
    return s + err


def compensated_abs_dot(K: np.ndarray, w: np.ndarray) -> np.ndarray:
    """|K @ w| per row; see compensated_dot for the reproducibility contract."""
    return np.abs(compensated_dot(K, w))


class _DivisorTable:
    """Per-shell minima of |k . w| over the half lattice, grown on demand."""

    def __init__(self, components: np.ndarray):
        self.w = components
        self.n = components.size
        self.q_built = 0
        self.shell_min = np.empty(0)          # index s-1 -> min divisor on shell s
        self.shell_arg = np.empty((0, self.n), dtype=np.int64)

    def ensure(self, Q: int) -> None:
        if Q <= self.q_built:
            return
        target = max(Q, 2 * self.q_built, 16)
        smin = np.full(target, np.inf)
        sarg = np.zeros((target, self.n), dtype=np.int64)

        def merge(block: np.ndarray) -> None:
            shells = np.abs(block).sum(axis=1)
            div = compensated_abs_dot(block, self.w)
            order = np.lexsort((div, shells))
            shells_sorted = shells[order]
            first = np.ones(order.size, dtype=bool)
            first[1:] = shells_sorted[1:] != shells_sorted[:-1]
            for idx in order[first]:
                s = shells[idx] - 1
                if div[idx] < smin[s]:
                    smin[s] = div[idx]
                    sarg[s] = block[idx]

        # generator blocks are tiny at large radii; gather them into ~64k-row
        # chunks before sorting.  concatenation keeps the yield order and the
        # lexsort is stable, so exact divisor ties resolve to the same argmin
        # as one-block-at-a-time merging
        pending, rows = [], 0
        for block in _halfspace_blocks(self.n, target):
            if block.shape[0] == 0:
                continue
            pending.append(block)
            rows += block.shape[0]
            if rows >= 65536:
                merge(np.concatenate(pending, axis=0))
                pending, rows = [], 0
        if pending:
            merge(np.concatenate(pending, axis=0))
        self.shell_min = smin
        self.shell_arg = sarg
        self.q_built = target
        self._prefix_min = np.minimum.accumulate(smin)
        self._prefix_arg = np.zeros(target, dtype=np.int64)
        best = 0
        for s in range(1, target):
            if smin[s] < self.shell_min[best]:
                best = s
            self._prefix_arg[s] = best

    def min_divisor(self, Q: int) -> tuple[float, np.ndarray]:
        self.ensure(Q)
        d = float(self._prefix_min[Q - 1])
        k = self.shell_arg[self._prefix_arg[Q - 1]]
        if d < RESONANCE_TOL * np.abs(k).sum():
            raise ResonanceDetected(
                f"divisor {d:.3e} at k={tuple(int(v) for v in k)} is below "
                f"tolerance {RESONANCE_TOL:g}*|k|_1"
            )
        return d, k

    def q_psi_array(self, Q: int) -> np.ndarray:
        """Array of Q'*Psi(Q') for Q' = 1..Q (strictly increasing)."""
        self.ensure(Q)
        qs = np.arange(1, Q + 1, dtype=np.float64)
        return qs / self._prefix_min[:Q]


# ---------------------------------------------------------------------------
# exact continued-fraction windows (for vectors tagged with a rational value)
# ---------------------------------------------------------------------------

def _cf_of_fraction(fr: Fraction) -> list[int]:
    """Continued fraction terms [a0; a1, a2, ...] of a rational by Euclid."""
    terms = []
    num, den = fr.numerator, fr.denominator
    while den:
        a, rem = divmod(num, den)
        terms.append(int(a))
        num, den = den, rem
    return terms


def _convergents(terms: Sequence[int]) -> list[tuple[int, int]]:
    p_prev, q_prev = 1, 0
    p, q = terms[0], 1
    out = [(p, q)]
    for a in terms[1:]:
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        out.append((p, q))
    return out


def _log_fraction(fr: Fraction) -> float:
    """Natural log of a positive Fraction, safe for astronomically sized terms."""
    return math.log(fr.numerator) - math.log(fr.denominator)


def _int_to_str(v: int) -> str:
    """Decimal for small integers, hex for huge ones.

    CPython caps decimal int/str conversion (default 4300 digits); hex is
    exempt, so schedule integers of any size serialize losslessly.
    """
    if v.bit_length() <= 128:
        return str(v)
    return hex(v)


def _int_from_str(s: str) -> int:
    return int(s, 16) if s.startswith(("0x", "-0x")) else int(s)


class ExactCF:
    """Exact arithmetic companion for n=2 vectors w = (1, alpha), alpha in (0,1).

    Holds alpha as a Fraction and exposes Psi/Delta/Diophantine queries via
    best-approximation windows: the smallest divisor over |k|_1 <= Q is the
    error of the last convergent (p_j, q_j) with p_j + q_j <= Q.
    """

    def __init__(self, alpha: Fraction, use_for_delta: bool = True):
        if not 0 < alpha < 1:
            raise ConstructionFailed("exact tag expects alpha in (0, 1)")
        self.alpha = alpha
        self.use_for_delta = use_for_delta
        self.terms = _cf_of_fraction(alpha)
        convs = _convergents(self.terms)
        self.convergents = convs
        self.errors = [abs(q * alpha - p) for p, q in convs]
        self.entry_q = [p + q for p, q in convs]     # Q at which (p,-q) enters
        # horizon: alpha is rational, so the final convergent is exact
        self.horizon = self.entry_q[-1]

    def psi_windows(self) -> list[tuple[int, Fraction]]:
        """(Q_j, min divisor valid on [Q_j, Q_{j+1})) with e_j > 0."""
        out = []
        for Qj, ej in zip(self.entry_q, self.errors):
            if ej == 0:
                break
            out.append((Qj, ej))
        return out

    def min_divisor_exact(self, Q: int) -> Fraction:
        if Q >= self.horizon:
            return Fraction(0)
        best = None
        for Qj, ej in self.psi_windows():
            if Qj <= Q:
                best = ej
            else:
                break
        if best is None:
            raise BelowThreshold(f"no lattice vector with |k|_1 <= {Q}")
        return best

    def delta_exact(self, x: Fraction) -> int:
        """Largest Q with Q / e(Q) <= x, exact rational comparisons."""
        windows = self.psi_windows()
        best = 0
        for idx, (Qj, ej) in enumerate(windows):
            if Qj > x * ej:          # window start already violates
                break
            hi = windows[idx + 1][0] - 1 if idx + 1 < len(windows) else self.horizon - 1
            q_cap = int(x * ej)      # floor of the exact product
            best = min(hi, q_cap)
        if best < 1:
            raise BelowThreshold("x below 1*Psi(1)")
        return best

    def dioph_min_log(self, q_max: int, tau: float) -> tuple[float, tuple[int, int]]:
        """min over 0<|k|_1<=q_max of log(|k.w| * |k|_1^tau), with witness.

        Scans convergents plus the unimodal semiconvergent families; safe for
        windows whose partial quotients are too large to enumerate.
        """
        if q_max >= self.horizon:
            pj, qj = self.convergents[-1]
            return (float("-inf"), (pj, -qj))
        candidates: list[tuple[float, tuple[int, int]]] = [(0.0, (1, 0))]

        def add(err: Fraction, p: int, q: int) -> None:
            if err > 0 and 0 < p + q <= q_max:
                candidates.append((_log_fraction(err) + tau * math.log(p + q), (p, -q)))

        convs, errs = self.convergents, self.errors
        for j in range(len(convs)):
            p, q = convs[j]
            add(errs[j], p, q)
            if j + 1 >= len(convs):
                continue
            # semiconvergents between convergent j and j+1:
            #   (m p_j + p_{j-1}, m q_j + q_{j-1}),  err = e_{j-1} - m e_j
            p_prev, q_prev = convs[j - 1] if j >= 1 else (1, 0)
            e_prev = errs[j - 1] if j >= 1 else Fraction(1)
            a_next = self.terms[j + 1]
            if errs[j] == 0:
                break
            m_hi = min(a_next, (q_max - (p_prev + q_prev)) // (p + q)) if p + q <= q_max else 0
            if m_hi < 1:
                continue
            # minimize (E - mF)(G + mH)^tau over integer m in [1, m_hi]
            E, F = e_prev, errs[j]
            G, H = p_prev + q_prev, p + q
            ms = {1, m_hi}
            denom = float(F) * H * (1.0 + tau)
            if denom > 0 and math.isfinite(float(F)):
                m_star = (tau * H * float(E) - float(F) * G) / denom
                for m in (math.floor(m_star), math.ceil(m_star)):
                    if 1 <= m <= m_hi:
                        ms.add(int(m))
            for m in ms:
                add(E - m * F, m * p + p_prev, m * q + q_prev)
        return min(candidates, key=lambda t: t[0])


# ---------------------------------------------------------------------------
# public record types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DivisorRecord:
    """Smallest divisor over the lattice ball of l1 radius Q."""
    Q: int
    min_divisor: float
    argmin_k: tuple[int, ...]
    psi: float


@dataclass(frozen=True)
class ArithmeticProfile:
    """Truncation order and smallness scales attached to (omega, eps, c)."""
    epsilon: float
    c: float
    Delta: int
    mu: float
    alpha: Optional[float] = None
    c_bar: Optional[float] = None
    nu: Optional[float] = None


@dataclass(frozen=True)
class DiophReport:
    ok: bool
    gamma: float
    tau: float
    q_max: int
    witness: Optional[tuple[int, ...]]
    margin_log10: float
    method: str

    @property
    def margin(self) -> float:
        """min(|k.w| |k|_1^tau) / gamma; 0.0 if it underflows float64."""
        return 10.0 ** self.margin_log10 if self.margin_log10 > -300 else 0.0


def _decimal_string(x: float, digits: int = 36) -> str:
    """Exact decimal expansion of a binary64, padded to >= `digits` digits."""
    d = Decimal(x)
    s = format(d, "f")
    mantissa = s.replace("-", "").replace(".", "").lstrip("0")
    if len(mantissa) < digits:
        if "." not in s:
            s += "."
        s += "0" * (digits - len(mantissa))
    return s


class FrequencyVector:
    """Sup-normalized frequency vector with lazy divisor tables.

    Parameters
    ----------
    components : sequence of float
        Raw components; normalized so the largest absolute value is 1.
    kind : str
        Construction tag ("golden", "diophantine", "liouville", "explicit", ...).
    q_check : int
        Non-resonance witness radius checked at construction.
    decimal_components : list of str, optional
        High-precision decimal strings (>= 30 significant digits). Derived
        from the float components when omitted.
    exact : ExactCF, optional
        Exact rational tag enabling the convergent-window query paths.
    construction : dict, optional
        Construction metadata (continued-fraction terms, schedules, ...).
    """

    def __init__(self, components, kind: str = "explicit", q_check: int = 30,
                 decimal_components: Optional[list[str]] = None,
                 exact: Optional[ExactCF] = None,
                 construction: Optional[dict] = None):
        arr = np.asarray(components, dtype=np.float64).copy()
        if arr.ndim != 1 or arr.size < 2:
            raise ConstructionFailed("frequency vector needs n >= 2 components")
        sup = np.max(np.abs(arr))
        if sup == 0:
            raise ConstructionFailed("zero frequency vector")
        arr /= sup
        arr.flags.writeable = False
        self.components = arr
        self.n = arr.size
        self.kind = kind
        self.exact = exact
        self.construction = dict(construction or {})
        self.decimal_components = (
            list(decimal_components) if decimal_components is not None
            else [_decimal_string(float(v)) for v in arr]
        )
        self._table = _DivisorTable(arr)
        self.q_checked = 0
        if q_check and q_check > 0:
            self._table.min_divisor(q_check)   # raises ResonanceDetected on failure
            self.q_checked = q_check

    def __repr__(self) -> str:
        comps = ", ".join(f"{v:.6f}" for v in self.components)
        return f"FrequencyVector(kind={self.kind!r}, n={self.n}, [{comps}])"

    def to_record(self) -> dict:
        rec = {
            "record": "frequency_vector",
            "n": self.n,
            "kind": self.kind,
            "components": self.decimal_components,
            "q_checked": self.q_checked,
            "resonance_tolerance": RESONANCE_TOL,
        }
        if self.construction:
            rec["construction"] = self.construction
        if self.exact is not None:
            rec["exact_rational"] = {
                "num": _int_to_str(self.exact.alpha.numerator),
                "den": _int_to_str(self.exact.alpha.denominator),
                "use_for_delta": self.exact.use_for_delta,
            }
        return rec

    @classmethod
    def from_record(cls, rec: dict, q_check: Optional[int] = None) -> "FrequencyVector":
        if rec.get("record") != "frequency_vector":
            raise ConstructionFailed("not a frequency_vector record")
        comps = [float(s) for s in rec["components"]]
        exact = None
        if "exact_rational" in rec:
            ex = rec["exact_rational"]
            exact = ExactCF(Fraction(_int_from_str(ex["num"]), _int_from_str(ex["den"])),
                            use_for_delta=bool(ex.get("use_for_delta", True)))
        return cls(
            comps,
            kind=rec.get("kind", "explicit"),
            q_check=rec.get("q_checked", 30) if q_check is None else q_check,
            decimal_components=list(rec["components"]),
            exact=exact,
            construction=rec.get("construction"),
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def psi(omega: FrequencyVector, Q: int) -> DivisorRecord:
    """Reciprocal smallest divisor over 0 < |k|_1 <= Q (float enumeration)."""
    if Q < 1:
        raise BelowThreshold("psi needs Q >= 1")
    if Q > ENUMERATION_CAP:
        raise ConstructionFailed(f"enumeration beyond Q={ENUMERATION_CAP} not supported")
    d, k = omega._table.min_divisor(int(Q))
    return DivisorRecord(Q=int(Q), min_divisor=d,
                         argmin_k=tuple(int(v) for v in k), psi=1.0 / d)


def psi_table(omega: FrequencyVector, Q: int) -> list[DivisorRecord]:
    """DivisorRecord for every Q' = 1..Q."""
    return [psi(omega, q) for q in range(1, int(Q) + 1)]


def delta(omega: FrequencyVector, x: float) -> int:
    """Largest integer Q >= 1 with Q * Psi(Q) <= x.

    Uses the exact convergent-window path when the vector carries a rational
    tag marked for it; otherwise doubles the enumeration radius and reads the
    crossing off the strictly increasing table of Q * Psi(Q).
    """
    if omega.exact is not None and omega.exact.use_for_delta:
        return omega.exact.delta_exact(Fraction(x))
    table = omega._table
    arr = table.q_psi_array(1)
    if arr[0] > x:
        raise BelowThreshold(f"x={x:g} is below 1*Psi(1)={arr[0]:.12g}")
    q_hi = 2
    while True:
        if q_hi > ENUMERATION_CAP:
            raise ConstructionFailed(
                "delta search exceeded the enumeration cap; "
                "use an exact-tagged vector for this scale"
            )
        arr = table.q_psi_array(q_hi)
        if arr[-1] > x:
            break
        q_hi *= 2
    D = int(np.searchsorted(arr, x, side="right"))
    table.min_divisor(min(D + 1, q_hi))   # refuse answers built on resonant shells
    return D


def check_delta_invariant(omega: FrequencyVector, x, D: int) -> bool:
    """Verify D*Psi(D) <= x < (D+1)*Psi(D+1), in the arithmetic delta used.

    Exact-tagged vectors get rational comparisons (D <= x*e(D), with
    Psi = infinity past the rational horizon); pass x as a Fraction to match
    an exact query precisely.  Float vectors reuse the very expression
    delta() searched over, so the check is bit-consistent.
    """
    if D < 1:
        return False
    if omega.exact is not None and omega.exact.use_for_delta:
        xf = x if isinstance(x, Fraction) else Fraction(x)
        e_here = omega.exact.min_divisor_exact(D)
        if e_here == 0 or Fraction(D) > xf * e_here:
            return False
        e_next = omega.exact.min_divisor_exact(D + 1)
        return e_next == 0 or Fraction(D + 1) > xf * e_next
    arr = omega._table.q_psi_array(D + 1)
    return bool(arr[D - 1] <= float(x) < arr[D])


def mu_nu(omega: FrequencyVector, epsilon: float, c: float = 1.0,
          alpha: Optional[float] = None, c_bar: Optional[float] = None) -> ArithmeticProfile:
    """Arithmetic profile at eps: Delta = delta(w, c/eps), mu = 1/Delta.

    When `alpha` (and optionally `c_bar`, default 1) are given, attaches the
    Gevrey scale nu = exp(-c_bar * mu**(-1/alpha)).
    """
    if epsilon <= 0 or c <= 0:
        raise BelowThreshold("mu_nu needs epsilon > 0 and c > 0")
    if omega.exact is not None and omega.exact.use_for_delta:
        D = omega.exact.delta_exact(Fraction(c) / Fraction(epsilon))
    else:
        D = delta(omega, c / epsilon)
    mu = 1.0 / D
    nu = None
    if alpha is not None:
        cb = 1.0 if c_bar is None else float(c_bar)
        if alpha <= 0:
            raise ConstructionFailed("Gevrey exponent alpha must be positive")
        nu = math.exp(-cb * mu ** (-1.0 / alpha))
        return ArithmeticProfile(epsilon=float(epsilon), c=float(c), Delta=D, mu=mu,
                                 alpha=float(alpha), c_bar=cb, nu=nu)
    return ArithmeticProfile(epsilon=float(epsilon), c=float(c), Delta=D, mu=mu)


def diophantine_check(omega: FrequencyVector, gamma: float, tau: float,
                      q_max: int, method: str = "auto") -> DiophReport:
    """Certify |k . w| >= gamma * |k|_1^(-tau) for all 0 < |k|_1 <= q_max.

    method "enumerate" walks the lattice ball (float divisors); "cf" uses the
    exact rational tag (required beyond the enumeration cap); "auto" picks
    "cf" when the tag exists and the request is out of enumeration range.
    """
    if gamma <= 0 or tau <= 0 or q_max < 1:
        raise ConstructionFailed("diophantine_check needs gamma, tau > 0, q_max >= 1")
    use_cf = False
    if method == "cf":
        use_cf = True
    elif method == "auto":
        use_cf = omega.exact is not None and (
            omega.exact.use_for_delta or q_max > ENUMERATION_CAP
        )
    if use_cf:
        if omega.exact is None:
            raise ConstructionFailed("cf method requires an exact rational tag")
        log_min, witness = omega.exact.dioph_min_log(q_max, tau)
        margin_log10 = (log_min - math.log(gamma)) / math.log(10.0)
        return DiophReport(ok=margin_log10 >= 0, gamma=gamma, tau=tau, q_max=q_max,
                           witness=witness if margin_log10 < 0 else None,
                           margin_log10=margin_log10, method="cf")
    table = omega._table
    table.ensure(q_max)
    shells = np.arange(1, q_max + 1, dtype=np.float64)
    prod = table.shell_min[:q_max] * shells ** tau
    idx = int(np.argmin(prod))
    ok = prod[idx] >= gamma
    margin_log10 = math.log10(prod[idx] / gamma) if prod[idx] > 0 else float("-inf")
    return DiophReport(ok=bool(ok), gamma=gamma, tau=tau, q_max=q_max,
                       witness=None if ok else tuple(int(v) for v in table.shell_arg[idx]),
                       margin_log10=margin_log10, method="enumerate")


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------

def _golden() -> FrequencyVector:
    import mpmath
    with mpmath.workdps(50):
        alpha = (mpmath.sqrt(5) - 1) / 2
        dec = mpmath.nstr(alpha, 36, strip_zeros=False)
    return FrequencyVector(
        [1.0, float(dec)],
        kind="golden",
        q_check=200,
        decimal_components=["1." + "0" * 35, dec],
        construction={"cf_terms": "[0; 1, 1, 1, ...]"},
    )


def _diophantine(tau: float, q_target: int = 10 ** 6) -> FrequencyVector:
    """n=2 vector with continued-fraction quotients a_{j+1} ~ q_j^(tau-1).

    The convergent errors then satisfy e_j ~ q_j^(-tau), giving an effective
    (gamma, tau) Diophantine vector; gamma is measured and recorded.
    """
    if tau < 1:
        raise ConstructionFailed("diophantine construction needs tau >= 1")
    terms = [0, 2]
    p_prev, q_prev, p, q = 1, 0, 0, 1      # convergents of [0]
    # advance through terms keeping (p, q) = last convergent
    p, p_prev = terms[1] * p + p_prev, p
    q, q_prev = terms[1] * q + q_prev, q
    while q <= q_target:
        a = max(1, int(round(q ** (tau - 1.0))))
        terms.append(a)
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
    alpha = Fraction(p, q)
    exact = ExactCF(alpha, use_for_delta=False)
    log_min, _ = exact.dioph_min_log(exact.horizon - 1, tau)
    gamma_eff = math.exp(log_min)
    return FrequencyVector(
        [1.0, p / q],
        kind="diophantine",
        q_check=200,
        decimal_components=["1." + "0" * 35, _decimal_string(p / q)],
        exact=exact,
        construction={"tau": tau, "cf_terms": [str(t) for t in terms],
                      "gamma_effective": gamma_eff},
    )


def _liouville_n2(schedule_exponent: float, levels: int, c: float) -> FrequencyVector:
    """Continued-fraction Liouville vector with Psi(Q_j) >= Q_j^p at jump points.

    Partial quotients a_{j+1} = ceil(Q_j^p / q_j) + 1 make the convergent
    error at level j smaller than Q_j^(-p).  The value is kept as an exact
    rational (levels beyond the first are far below float64 resolution); the
    scale sequence records, per level, the largest eps whose truncation-order
    window starts at Q_j, i.e. eps_j = c / (Q_j * Psi(Q_j)).
    """
    p = float(schedule_exponent)
    if p < 2 or levels < 1:
        raise ConstructionFailed("need schedule exponent >= 2 and levels >= 1")
    terms = [0, 2]
    p_prev, q_prev = 1, 0
    pc, qc = 0, 1
    for a in terms[1:]:
        pc, p_prev = a * pc + p_prev, pc
        qc, q_prev = a * qc + q_prev, qc
    for _ in range(levels):
        Qj = pc + qc
        a_next = -(-Qj ** int(p) // qc) + 1 if float(p).is_integer() else \
            int(math.ceil(math.exp(p * math.log(Qj)) / qc)) + 1
        if a_next <= 0:
            raise ConstructionFailed("schedule produced a non-positive quotient")
        terms.append(int(a_next))
        pc, p_prev = a_next * pc + p_prev, pc
        qc, q_prev = a_next * qc + q_prev, qc
    alpha = Fraction(pc, qc)
    exact = ExactCF(alpha, use_for_delta=True)
    windows = exact.psi_windows()
    sequence = []
    for Qj, ej in windows:
        if float(ej) == 0.0 and Qj > 1:
            # below float64: keep the exact record only
            eps_f = 0.0
        else:
            eps_f = float(Fraction(c) * ej / Qj)
        if Qj > 1:
            # schedule certification, exact: 1/e_j >= Q_j^p
            if ej * Qj ** int(math.floor(p)) > 1:
                raise ConstructionFailed(
                    f"schedule Psi(Q) >= Q^{p:g} violated at Q={Qj}"
                )
        entry = {"Q": _int_to_str(Qj), "mu": float(Fraction(1, Qj)),
                 "x_log10": (_log_fraction(Fraction(Qj, 1) / ej) / math.log(10.0)
                             if ej else None)}
        if eps_f > 0.0:
            entry["eps"] = math.nextafter(eps_f, 0.0)
        sequence.append(entry)
    usable = [e for e in sequence if "eps" in e]
    if len(usable) < 2:
        raise ConstructionFailed("scale sequence has fewer than 2 float-representable points")
    return FrequencyVector(
        [1.0, pc / qc],
        kind="liouville",
        q_check=200,
        decimal_components=["1." + "0" * 35, _decimal_string(pc / qc)],
        exact=exact,
        construction={
            "schedule_exponent": p,
            "levels": levels,
            "c": c,
            "cf_terms": [_int_to_str(t) for t in terms],
            "scale_sequence": sequence,
        },
    )


def _liouville_constant(truncation_level: int = 4) -> FrequencyVector:
    """(1, sum over j of 10^(-j!)) truncated; exact rational tag attached.

    The tag is not used for delta (enumeration stays authoritative at small
    Q) but enables exact Diophantine queries at |k|_1 ~ 10^6, where the 10^-j!
    structure first bites.
    """
    L = Fraction(0)
    for j in range(1, truncation_level + 1):
        L += Fraction(1, 10 ** math.factorial(j))
    exact = ExactCF(L, use_for_delta=False)
    dec = format(Decimal(L.numerator) / Decimal(10) ** 24, "f")
    return FrequencyVector(
        [1.0, float(L)],
        kind="liouville_constant",
        q_check=200,
        decimal_components=["1." + "0" * 35, dec + "0" * max(0, 36 - len(dec))],
        exact=exact,
        construction={"series": "sum of 10^(-j!)", "truncation_level": truncation_level},
    )


def _liouville_lacunary(n: int, schedule_exponent: float) -> FrequencyVector:
    """n>=3 Liouville vector from lacunary decimal series (first level verifiable)."""
    if n < 3:
        raise ConstructionFailed("lacunary construction is for n >= 3")
    p = schedule_exponent
    comps = [Fraction(1)]
    seqs = []
    for i in range(n - 1):
        s0 = 2 + i
        s1 = int(math.ceil((p + 1) * s0)) + 1
        s2 = int(math.ceil((p + 1) * s1)) + 1
        val = Fraction(1, 10 ** s0) + Fraction(1, 10 ** s1) + Fraction(1, 10 ** s2)
        comps.append(val)
        seqs.append({"exponents": [s0, s1, s2]})
    floats = [float(v) for v in comps]
    return FrequencyVector(
        floats, kind="liouville", q_check=min(200, 10 ** 2),
        decimal_components=[_decimal_string(v) for v in floats],
        construction={"lacunary": seqs, "schedule_exponent": p,
                      "note": "only the first scale level is enumeration-verifiable"},
    )


def make_test_frequency(kind: str, n: int = 2, tau: float = 2.0,
                        schedule_exponent: float = 22.0, levels: int = 3,
                        c: float = 1.0,
                        components=None, q_check: int = 30) -> FrequencyVector:
    """Construct a frequency vector of the requested arithmetic type.

    kind "golden": (1, (sqrt(5)-1)/2), n=2.
    kind "diophantine": continued-fraction vector with exponent tau, n=2.
    kind "liouville": prescribed-growth vector; continued fractions for n=2
        (exact rational tag, scale sequence in construction metadata),
        lacunary decimal series for n>=3.
    kind "liouville_constant": truncated sum of 10^(-j!), n=2.
    kind "explicit": caller-supplied components.
    """
    if kind == "golden":
        if n != 2:
            raise ConstructionFailed("golden construction is n=2")
        return _golden()
    if kind == "diophantine":
        if n != 2:
            raise ConstructionFailed("diophantine construction implemented for n=2")
        return _diophantine(tau)
    if kind == "liouville":
        if n == 2:
            return _liouville_n2(schedule_exponent, levels, c)
        return _liouville_lacunary(n, min(schedule_exponent, 3.0))
    if kind == "liouville_constant":
        if n != 2:
            raise ConstructionFailed("liouville_constant is n=2")
        return _liouville_constant()
    if kind == "explicit":
        if components is None:
            raise ConstructionFailed("explicit construction needs components")
        return FrequencyVector(components, kind="explicit", q_check=q_check)
    raise ConstructionFailed(f"unknown frequency kind {kind!r}")

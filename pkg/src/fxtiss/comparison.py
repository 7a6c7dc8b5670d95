"""Comparison functions built from finite power sums.

A :class:`PowerSum` is ``sum_i c_i * s**p_i`` on ``s >= 0``. It is the common
currency for gains, decay rates and sandwich bounds. Monotonicity and
positivity on ``(0, inf)`` are checked by asymptotic coefficient signs plus
sampling on a logarithmic grid, never symbolically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

GRID_LO = 1e-9
GRID_HI = 1e9
GRID_POINTS = 4096
SAFETY = 0.01


class MembershipError(ValueError):
    """A power sum is not strictly increasing on (0, inf)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class PositivityError(ValueError):
    """A power sum fails to be positive on (0, inf)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class OrderingError(ValueError):
    pass


def log_grid(n=GRID_POINTS, lo=GRID_LO, hi=GRID_HI):
    """Log-spaced sample points on [lo, hi]; s = 1 is always included."""
    g = np.logspace(math.log10(lo), math.log10(hi), int(n))
    if lo < 1.0 < hi:
        g = np.union1d(g, [1.0])
    return g


class PowerTerm(NamedTuple):
    coeff: float
    exponent: float


class PowerSum:
    """Canonical finite sum of power terms.

    Terms are merged by exponent, zero coefficients dropped and the result
    sorted by increasing exponent. Exponents must be positive unless
    ``relaxed=True`` (used for derivatives, which live on ``s > 0`` only).
    """

    __slots__ = ("terms", "relaxed", "_c", "_p", "_membership")

    def __init__(self, terms: Iterable = (), relaxed=False):
        merged = {}
        for t in terms:
            if isinstance(t, dict):
                c, p = t["coeff"], t["exponent"]
            else:
                c, p = t
            c, p = float(c), float(p)
            if not (math.isfinite(c) and math.isfinite(p)):
                raise ValueError(f"non-finite power term ({c}, {p})")
            if p <= 0 and not relaxed:
                raise ValueError(f"exponent must be positive, got {p}")
            merged[p] = merged.get(p, 0.0) + c
        kept = [PowerTerm(c, p) for p, c in sorted(merged.items()) if c != 0.0]
        self.terms = tuple(kept)
        self.relaxed = bool(relaxed)
        self._c = np.array([t.coeff for t in kept], dtype=float)
        self._p = np.array([t.exponent for t in kept], dtype=float)
        self._membership = None

    @classmethod
    def monomial(cls, coeff, exponent):
        return cls([(coeff, exponent)])

    @classmethod
    def from_list(cls, items):
        return cls(items)

    def to_list(self):
        return [{"coeff": t.coeff, "exponent": t.exponent} for t in self.terms]

    @property
    def coeffs(self):
        return self._c.copy()

    @property
    def exponents(self):
        return self._p.copy()

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __eq__(self, other):
        return isinstance(other, PowerSum) and self.terms == other.terms and self.relaxed == other.relaxed

    def __hash__(self):
        return hash((self.terms, self.relaxed))

    def __repr__(self):
        if not self.terms:
            return "PowerSum(0)"
        body = " + ".join(f"{t.coeff:.6g}*s^{t.exponent:.6g}" for t in self.terms)
        return f"PowerSum({body})"

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        if self._c.size == 0:
            out = np.zeros_like(s_arr)
        else:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                out = np.power(s_arr[..., None], self._p) @ self._c
            if not self.relaxed:
                out = np.where(s_arr == 0.0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def derivative(self):
        return PowerSum([(c * p, p - 1.0) for c, p in self.terms if p != 0.0], relaxed=True)

    def scale(self, k):
        return PowerSum([(k * c, p) for c, p in self.terms], relaxed=self.relaxed)

    def __mul__(self, other):
        if isinstance(other, PowerSum):
            prod = [(c1 * c2, p1 + p2) for c1, p1 in self.terms for c2, p2 in other.terms]
            relaxed = self.relaxed or other.relaxed
            if relaxed and all(p > 0 for _, p in prod):
                relaxed = False
            return PowerSum(prod, relaxed=relaxed)
        return self.scale(float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        return PowerSum(list(self.terms) + list(other.terms), relaxed=self.relaxed or other.relaxed)

    def power(self, lam):
        """``ps(s)**lam`` as a power sum.

        Exact for a monomial (any real ``lam``) or for an integer ``lam``
        (multinomial expansion); anything else is not a finite power sum.
        """
        if len(self.terms) == 1:
            c, p = self.terms[0]
            if c < 0:
                raise ValueError("cannot raise a negative monomial to a real power")
            return PowerSum([(c ** lam, p * lam)])
        n = int(round(lam))
        if abs(lam - n) > 1e-12 or n < 1:
            raise ValueError(f"power {lam} of a multi-term sum is not a finite power sum")
        out = self
        for _ in range(n - 1):
            out = out * self
        return out

    def substitute_scale(self, k):
        """Return ``s -> ps(k*s)``."""
        return PowerSum([(c * k ** p, p) for c, p in self.terms], relaxed=self.relaxed)

    @property
    def lowest(self):
        return self.terms[0]

    @property
    def highest(self):
        return self.terms[-1]


def evaluate(ps: PowerSum, s):
    if np.any(np.asarray(s) < 0):
        raise ValueError("power sums are evaluated on s >= 0")
    return ps(s)


def derivative(ps: PowerSum) -> PowerSum:
    return ps.derivative()


@dataclass(frozen=True)
class Membership:
    member: bool
    witness: float | None = None
    min_ratio: float = float("nan")
    reason: str = ""

    def __bool__(self):
        return self.member


def verify_kp_membership(ps: PowerSum, n_points=GRID_POINTS, max_refine=3, margin=1e-12) -> Membership:
    """Check ``ps'(s) > 0`` on (0, inf).

    Asymptotes are settled by the signs of the lowest and highest
    coefficients; the interior by sampling the derivative normalized by the
    sum of absolute term derivatives. A normalized minimum below ``margin``
    is treated as inconclusive and the grid is densified up to
    ``max_refine`` times.
    """
    if len(ps) == 0:
        return Membership(False, 1.0, reason="empty sum")
    if ps.relaxed:
        return Membership(False, None, reason="relaxed sums are not gains")
    c, p = ps._c, ps._p
    dc = c * p
    dp = p - 1.0
    n = n_points
    for attempt in range(max_refine + 1):
        s = log_grid(n)
        with np.errstate(over="ignore", invalid="ignore"):
            terms = dc * np.power(s[:, None], dp)
        d = terms.sum(axis=1)
        scale = np.abs(terms).sum(axis=1)
        ratio = np.where(scale > 0, d / scale, -1.0)
        vals = ps(s)
        bad = np.flatnonzero((d <= 0) | (vals <= 0))
        if bad.size:
            w = float(s[bad[0]])
            return Membership(False, w, float(ratio.min()), "derivative or value not positive on grid")
        if dc[0] <= 0:
            return Membership(False, float(s[0]), float(ratio.min()), "lowest-order coefficient not positive")
        if dc[-1] <= 0:
            return Membership(False, float(s[-1]), float(ratio.min()), "highest-order coefficient not positive")
        rmin = float(ratio.min())
        if rmin > margin:
            return Membership(True, None, rmin)
        n *= 2
    k = int(np.argmin(np.abs(ratio)))
    return Membership(False, float(s[k]), rmin, "inconclusive after grid refinement")


def _membership(ps: PowerSum) -> Membership:
    if ps._membership is None:
        ps._membership = verify_kp_membership(ps)
    return ps._membership


def require_member(ps: PowerSum, what="power sum"):
    m = _membership(ps)
    if not m:
        raise MembershipError(f"{what} {ps!r} is not strictly increasing ({m.reason})", m.witness)
    return m


def _invert(ps: PowerSum, y: np.ndarray, tol: float) -> np.ndarray:
    out = np.zeros_like(y)
    live = y > 0
    if not live.any():
        return out
    yy = y[live]
    c1, p1 = ps.lowest
    cn, pn = ps.highest
    ps1 = ps(1.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        guess = np.where(yy <= ps1, (yy / c1) ** (1.0 / p1), (yy / cn) ** (1.0 / pn))
    guess = np.where(np.isfinite(guess) & (guess > 0), guess, 1.0)

    lo = guess.copy()
    hi = guess.copy()
    for _ in range(4000):
        m = ps(lo) > yy
        if not m.any():
            break
        lo = np.where(m, lo * 0.25, lo)
    for _ in range(4000):
        m = ps(hi) < yy
        if not m.any():
            break
        hi = np.where(m, hi * 4.0, hi)

    dps = ps.derivative()
    x = guess
    thresh = tol * np.maximum(1.0, yy)
    done = np.zeros(yy.shape, dtype=bool)
    for _ in range(400):
        f = ps(x) - yy
        done = done | (np.abs(f) <= thresh)
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        collapsed = (hi - lo) <= 4 * np.finfo(float).eps * hi
        done = done | collapsed
        if done.all():
            break
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            step = x - f / dps(x)
        bisect = np.where(lo > 0, np.sqrt(lo * hi), 0.5 * (lo + hi))
        ok = np.isfinite(step) & (step > lo) & (step < hi)
        x = np.where(done, x, np.where(ok, step, bisect))
    out[live] = x
    return out


def invert_at(ps: PowerSum, y, tol=1e-12):
    """Solve ``ps(s) = y`` for ``s >= 0``; vectorized over ``y``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    require_member(ps)
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0) or not np.all(np.isfinite(y_arr)):
        raise ValueError("inversion needs finite y >= 0")
    out = _invert(ps, y_arr.ravel(), tol).reshape(y_arr.shape)
    return float(out) if out.ndim == 0 else out


def domination_bounds(ps: PowerSum, safety=SAFETY, n_points=GRID_POINTS):
    """Constants with ``c_lo*(s**p1 + s**pn) <= ps(s) <= c_hi*(s**p1 + s**pn)``.

    Grid extremes of the ratio are combined with its limits ``c1`` (at 0+)
    and ``cn`` (at infinity), then relaxed by ``safety``.
    """
    if len(ps) == 0:
        raise PositivityError("empty sum is not positive", 1.0)
    s = log_grid(n_points)
    c1, p1 = ps.lowest
    cn, pn = ps.highest
    vals = ps(s)
    ratio = vals / (s ** p1 + s ** pn)
    bad = np.flatnonzero(~(ratio > 0))
    if bad.size:
        raise PositivityError(f"{ps!r} is not positive on the grid", float(s[bad[0]]))
    lim0 = c1 / 2.0 if len(ps) == 1 else c1
    liminf = cn / 2.0 if len(ps) == 1 else cn
    if lim0 <= 0:
        raise PositivityError(f"{ps!r} is negative near 0", float(s[0]))
    if liminf <= 0:
        raise PositivityError(f"{ps!r} is negative near infinity", float(s[-1]))
    lo = min(float(ratio.min()), lim0, liminf)
    hi = max(float(ratio.max()), lim0, liminf)
    return lo * (1.0 - safety), hi * (1.0 + safety)


def power_split_bound(p, p_lo, p_hi, s) -> bool:
    """Check ``s**p <= s**p_lo + s**p_hi``; needs ``p_lo <= p <= p_hi``."""
    if not (p_lo <= p <= p_hi):
        raise OrderingError(f"need p_lo <= p <= p_hi, got {p_lo}, {p}, {p_hi}")
    if s < 0:
        raise ValueError("s must be nonnegative")
    return s ** p <= s ** p_lo + s ** p_hi


@dataclass(frozen=True)
class KFxRate:
    """Fixed-time decay rate ``a*s**p + b*s**q`` with 0 < p < 1 < q."""

    a: float
    p: float
    b: float
    q: float

    def __post_init__(self):
        for name in ("a", "p", "b", "q"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.a, self.p, self.b, self.q)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rate parameters {vals}")
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"rate coefficients must be positive, got a={self.a}, b={self.b}")
        if not 0 < self.p < 1:
            raise ValueError(f"need 0 < p < 1, got {self.p}")
        if not self.q > 1:
            raise ValueError(f"need q > 1, got {self.q}")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore"):
            out = self.a * s ** self.p + self.b * s ** self.q
        return float(out) if out.ndim == 0 else out

    def as_powersum(self):
        return PowerSum([(self.a, self.p), (self.b, self.q)])

    def scaled(self, k):
        return KFxRate(k * self.a, self.p, k * self.b, self.q)

    def settling_bound(self):
        return 1.0 / (self.a * (1.0 - self.p)) + 1.0 / (self.b * (self.q - 1.0))

    def to_dict(self):
        return {"a": self.a, "p": self.p, "b": self.b, "q": self.q}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["a"]), float(d["p"]), float(d["b"]), float(d["q"]))


def kfx_common_lower_bound(rates: Sequence[KFxRate]) -> KFxRate:
    if not rates:
        raise ValueError("need at least one rate")
    c = min(min(r.a, r.b) for r in rates)
    p = max(r.p for r in rates)
    q = min(r.q for r in rates)
    return KFxRate(c / 2.0, p, c / 2.0, q)


def jensen_factor(p, n):
    if p <= 0 or n < 1:
        raise ValueError("need p > 0 and n >= 1")
    return 1.0 if p <= 1 else float(n) ** (p - 1.0)


def holder_factor(n, p, q):
    if not 0 < p < q:
        raise OrderingError(f"need 0 < p < q, got p={p}, q={q}")
    if n < 1:
        raise ValueError("n must be positive")
    return float(n) ** (1.0 / p - 1.0 / q)


@dataclass(frozen=True, eq=False)
class GainFunction:
    """Class-K_inf gain held as a power sum or as the power sum of its inverse."""

    ps: PowerSum
    inverse_represented: bool = False

    def __post_init__(self):
        require_member(self.ps, "gain representation")

    @classmethod
    def direct(cls, ps):
        return cls(ps if isinstance(ps, PowerSum) else PowerSum(ps), False)

    @classmethod
    def from_inverse(cls, ps):
        return cls(ps if isinstance(ps, PowerSum) else PowerSum(ps), True)

    @classmethod
    def linear(cls, slope):
        return cls(PowerSum.monomial(slope, 1.0), False)

    @property
    def kind(self):
        return "inverse" if self.inverse_represented else "direct"

    def __call__(self, s):
        return invert_at(self.ps, s) if self.inverse_represented else self.ps(s)

    def inverse(self, y):
        return self.ps(y) if self.inverse_represented else invert_at(self.ps, y)

    def derivative(self, s):
        """gamma'(s); for the inverse form uses 1 / (gamma^-1)'(gamma(s))."""
        d = self.ps.derivative()
        if self.inverse_represented:
            return 1.0 / d(self(s))
        return d(s)

    def leading(self, end):
        """Leading monomial (coeff, exponent) of the gain at ``'zero'`` or ``'inf'``."""
        c, p = self.ps.lowest if end == "zero" else self.ps.highest
        if self.inverse_represented:
            return c ** (-1.0 / p), 1.0 / p
        return c, p

    def inverse_leading(self, end):
        c, p = self.ps.lowest if end == "zero" else self.ps.highest
        if self.inverse_represented:
            return c, p
        return c ** (-1.0 / p), 1.0 / p

    def __repr__(self):
        tag = "Inverse" if self.inverse_represented else "Direct"
        return f"{tag}({self.ps!r})"

    def to_dict(self):
        return {"kind": self.kind, "terms": self.ps.to_list()}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "direct")
        if kind not in ("direct", "inverse"):
            raise ValueError(f"unknown gain kind {kind!r}")
        return cls(PowerSum(d["terms"]), kind == "inverse")


def max_gain_inverse(gains: Sequence[GainFunction], y):
    """Inverse of the pointwise max of ``gains`` at ``y``."""
    vals = [np.asarray(g.inverse(y), dtype=float) for g in gains]
    out = np.minimum.reduce(vals)
    return float(out) if out.ndim == 0 else out

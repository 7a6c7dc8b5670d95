"""Small-gain certification of two fixed-time ISS subsystems.

The pipeline is: inflate the cross gains into strict majorants, verify the
small-gain inequality, choose a common scaling exponent ``lam`` so that the
four rescaled Lyapunov candidates keep fixed-time decay, and fold their
rates into one composed rate whose settling bound is reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .comparison import (
    GRID_POINTS,
    SAFETY,
    GainFunction,
    KFxRate,
    PowerSum,
    domination_bounds,
    kfx_common_lower_bound,
    log_grid,
    require_member,
)

INFLATION = 0.05
LAMBDA_SLACK = 0.1
STRICT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SubsystemData:
    """Gains, rate and sandwich bounds of one ISS Lyapunov function.

    ``lyapunov`` and ``lyapunov_grad`` are optional maps on the *full*
    interconnection state; the analysis layer uses them for sampling and
    trace checks.
    """

    gain: GainFunction
    rate: KFxRate
    input_gain: Optional[GainFunction] = None
    bounds_lo: Optional[PowerSum] = None
    bounds_hi: Optional[PowerSum] = None
    lyapunov: Optional[Callable] = None
    lyapunov_grad: Optional[Callable] = None
    input_index: Optional[Sequence[int]] = None
    label: str = ""

    def __post_init__(self):
        if not isinstance(self.rate, KFxRate):
            raise TypeError("rate must be a KFxRate")
        for ps in (self.bounds_lo, self.bounds_hi):
            if ps is not None:
                require_member(ps, "sandwich bound")

    def to_dict(self):
        d = {"gain": self.gain.to_dict(), "rate": self.rate.to_dict(), "label": self.label}
        if self.input_gain is not None:
            d["input_gain"] = self.input_gain.to_dict()
        if self.bounds_lo is not None:
            d["bounds_lo"] = self.bounds_lo.to_list()
        if self.bounds_hi is not None:
            d["bounds_hi"] = self.bounds_hi.to_list()
        return d


@dataclass(frozen=True)
class SmallGainCheck:
    valid: bool
    margin: float
    witness: Optional[float] = None
    reason: str = ""

    def __bool__(self):
        return self.valid


def _asymptote_ok(lhs, rhs, end):
    (c1, e1), (c2, e2) = lhs, rhs
    if math.isclose(e1, e2, rel_tol=1e-12, abs_tol=1e-14):
        return c1 < c2 * (1 - 1e-12)
    return e1 > e2 if end == "zero" else e1 < e2


def check_small_gain(g1: GainFunction, g2: GainFunction, n_points=GRID_POINTS) -> SmallGainCheck:
    """Check ``g1(g2(s)) < s`` for all s > 0 through ``g1(s) < g2^-1(s)``."""
    s = log_grid(n_points)
    for end, idx in (("zero", 0), ("inf", -1)):
        if not _asymptote_ok(g1.leading(end), g2.inverse_leading(end), end):
            rhs = g2.inverse(s)
            margin = float(np.min((rhs - g1(s)) / rhs))
            return SmallGainCheck(False, margin, float(s[idx]), f"asymptote comparison fails at {end}")
    rhs = np.asarray(g2.inverse(s))
    lhs = np.asarray(g1(s))
    rel = (rhs - lhs) / rhs
    bad = np.flatnonzero(~(rel > STRICT_TOL))
    margin = float(rel.min())
    if bad.size:
        return SmallGainCheck(False, margin, float(s[bad[0]]), "composition reaches the identity on the grid")
    return SmallGainCheck(True, margin)


def strict_majorant(g: GainFunction, inflation=INFLATION) -> GainFunction:
    """``(1 + inflation) * g`` in the same representation as ``g``."""
    if not inflation > 0:
        raise ValueError("inflation must be positive for a strict majorant")
    k = 1.0 + inflation
    if g.inverse_represented:
        # (k*g)^-1(y) = g^-1(y/k)
        return GainFunction.from_inverse(g.ps.substitute_scale(1.0 / k))
    return GainFunction.direct(g.ps.scale(k))


def kp_compose_scaling(sigma: PowerSum, rate: KFxRate, safety=SAFETY) -> KFxRate:
    """Rate for ``sigma(V)`` when V decays at ``rate``; needs r1 >= 1."""
    require_member(sigma, "scaling function")
    r = sigma.exponents
    c = sigma.coeffs
    if r[0] < 1 - 1e-9:
        raise ValueError(f"smallest exponent of the scaling must be >= 1, got {r[0]}")
    prod = rate.as_powersum() * sigma.derivative()
    c_dom, _ = domination_bounds(prod, safety=safety)
    n = len(r)
    p_t = (rate.p + r[0] - 1.0) / r[0]
    q_t = (rate.q + r[-1] - 1.0) / r[-1]
    denom = np.sum(np.abs(c) ** p_t) + n ** (q_t - 1.0) * np.sum(np.abs(c) ** q_t)
    eps = c_dom / denom
    return KFxRate(eps, p_t, eps, q_t)


def inverse_gain_scaling(g: GainFunction, rate: KFxRate, slack=LAMBDA_SLACK, lam=None, safety=SAFETY):
    """Rate for ``g(V)**lam`` when V decays at ``rate`` and g is inverse-represented.

    Returns ``(lam, scaled_rate)``. ``lam`` defaults to the smallest admissible
    value times ``1 + slack``, and is never below 1.
    """
    if not g.inverse_represented:
        raise ValueError("inverse_gain_scaling needs an inverse-represented gain")
    r = g.ps.exponents
    c = g.ps.coeffs
    lam_min = (1.0 - rate.p) * r[-1]
    if lam is None:
        lam = max(1.0, lam_min * (1.0 + slack))
    elif lam <= lam_min:
        raise ValueError(f"lambda must exceed {lam_min}, got {lam}")
    big_r = float(np.sum(r * np.abs(c)))
    c_dom, _ = domination_bounds(g.ps, safety=safety)
    eps = lam / big_r * min(rate.a * c_dom ** rate.p, rate.b * c_dom ** rate.q)

    def piece(rk):
        return KFxRate(eps, 1.0 - (1.0 - rate.p) * rk / lam, eps, 1.0 + (rate.q - 1.0) * rk / lam)

    if len(r) == 1:
        return lam, piece(r[0])
    return lam, kfx_common_lower_bound([piece(r[0]), piece(r[-1])])


def kp_scaling_slack(sigma: PowerSum, rate: KFxRate, scaled: KFxRate, n_points=GRID_POINTS):
    """min over the grid of ``rate(s)*sigma'(s) - scaled(sigma(s))``, relative."""
    s = log_grid(n_points)
    lhs = rate(s) * sigma.derivative()(s)
    rhs = scaled(sigma(s))
    return float(np.min((lhs - rhs) / lhs))


def inverse_scaling_slack(g: GainFunction, rate: KFxRate, lam, scaled: KFxRate, n_points=GRID_POINTS):
    """Relative grid slack of ``lam*g^(lam-1)*g'*rate >= scaled(g^lam)``.

    Sampled in the gain's range, t = g(s), so that s = g^-1(t) is explicit.
    """
    t = log_grid(n_points)
    inv = g.ps
    s = inv(t)
    lhs = lam * t ** (lam - 1.0) * rate(s) / inv.derivative()(t)
    rhs = scaled(t ** lam)
    return float(np.min((lhs - rhs) / lhs))


@dataclass(frozen=True, eq=False)
class SmallGainCertificate:
    valid: bool
    majorant_1: Optional[GainFunction] = None
    majorant_2: Optional[GainFunction] = None
    lam: float = float("nan")
    composed_rate: Optional[KFxRate] = None
    settling_bound: float = float("inf")
    margin: float = float("nan")
    inflation: float = float("nan")
    scaled_rates: dict = field(default_factory=dict)
    failed_stage: Optional[str] = None
    witness: Optional[float] = None
    log: tuple = ()

    def __bool__(self):
        return self.valid

    def scaled_components(self, v1, v2):
        """The four rescaled Lyapunov values (V11, V12, V21, V22) at given V1, V2."""
        lam = self.lam
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        return (
            v1 ** lam,
            np.asarray(self.majorant_2(v1)) ** lam,
            v2 ** lam,
            np.asarray(self.majorant_1(v2)) ** lam,
        )

    def lyapunov(self, v1, v2):
        return np.maximum.reduce(self.scaled_components(v1, v2))

    def to_dict(self):
        d = {
            "valid": self.valid,
            "failed_stage": self.failed_stage,
            "witness": self.witness,
            "inflation": self.inflation,
            "margin": self.margin,
            "lambda": self.lam,
            "settling_bound": self.settling_bound,
            "majorant_1": self.majorant_1.to_dict() if self.majorant_1 else None,
            "majorant_2": self.majorant_2.to_dict() if self.majorant_2 else None,
            "composed_rate": self.composed_rate.to_dict() if self.composed_rate else None,
            "scaled_rates": {k: v.to_dict() for k, v in self.scaled_rates.items()},
            "log": [dict(e) for e in self.log],
        }
        return d

    def to_text(self):
        lines = ["small-gain certificate", "=" * 22]
        lines.append(f"verdict         : {'VALID' if self.valid else 'INVALID'}")
        if not self.valid:
            lines.append(f"failed stage    : {self.failed_stage}")
            lines.append(f"witness s       : {self.witness!r}")
        lines.append(f"inflation       : {self.inflation!r}")
        lines.append(f"majorant 1      : {self.majorant_1!r}")
        lines.append(f"majorant 2      : {self.majorant_2!r}")
        lines.append(f"margin          : {self.margin!r}")
        if self.valid:
            lines.append(f"lambda          : {self.lam!r}")
            for k, v in self.scaled_rates.items():
                lines.append(f"rate {k:<11}: {v.a!r}*s^{v.p!r} + {v.b!r}*s^{v.q!r}")
            r = self.composed_rate
            lines.append(f"composed rate   : {r.a!r}*s^{r.p!r} + {r.b!r}*s^{r.q!r}")
            lines.append(f"settling bound  : {self.settling_bound!r} s")
        lines.append("")
        lines.append("verification log")
        lines.append("-" * 16)
        for e in self.log:
            lines.append(" | ".join(f"{k}={v}" for k, v in e.items()))
        return "\n".join(lines) + "\n"


def select_lambda(maj1: GainFunction, maj2: GainFunction, rate1: KFxRate, rate2: KFxRate, slack=LAMBDA_SLACK):
    """Smallest common exponent keeping all four rescaled candidates certifiable.

    The candidate ``g(V_i)**lam`` needs ``lam*r1 >= 1`` for a direct gain (and
    an integer ``lam`` if the gain has several terms, so the power stays a
    finite sum); for an inverse-represented gain it needs
    ``lam > (1 - p_i) * r_n``.
    """
    reqs = [("floor", 1.0)]
    integer = False
    for name, g, rate in (("V12", maj2, rate1), ("V21", maj1, rate2)):
        r = g.ps.exponents
        if g.inverse_represented:
            reqs.append((name, (1.0 - rate.p) * r[-1] * (1.0 + slack)))
        else:
            reqs.append((name, 1.0 / r[0]))
            integer = integer or len(r) > 1
    reqs = [(k, float(v)) for k, v in reqs]
    lam = max(v for _, v in reqs)
    if integer:
        lam = float(math.ceil(lam - 1e-12))
    return float(lam), reqs


def _scaled_candidate_rate(g: GainFunction, rate: KFxRate, lam, safety):
    if g.inverse_represented:
        _, scaled = inverse_gain_scaling(g, rate, lam=lam, safety=safety)
        slack = inverse_scaling_slack(g, rate, lam, scaled)
    else:
        sigma = g.ps.power(lam)
        scaled = kp_compose_scaling(sigma, rate, safety=safety)
        slack = kp_scaling_slack(sigma, rate, scaled)
    return scaled, slack


def assemble_certificate(sub1: SubsystemData, sub2: SubsystemData, inflation=INFLATION,
                         slack=LAMBDA_SLACK, safety=SAFETY, max_halvings=12) -> SmallGainCertificate:
    """Run the full small-gain construction and return a certificate.

    If the inflated majorants break the small-gain inequality, the inflation
    is halved (up to ``max_halvings`` times) before giving up; every attempt
    is recorded in the log.
    """
    log = []
    if not inflation > 0:
        raise ValueError("inflation must be positive")
    infl = inflation
    check = None
    first = None
    for _ in range(max_halvings + 1):
        try:
            m1 = strict_majorant(sub1.gain, infl)
            m2 = strict_majorant(sub2.gain, infl)
        except Exception as exc:  # membership failures surface here
            log.append({"stage": "majorant", "inflation": infl, "ok": False, "error": str(exc)})
            return SmallGainCertificate(False, inflation=infl, failed_stage="majorant",
                                        witness=getattr(exc, "witness", None), log=tuple(log))
        check = check_small_gain(m1, m2)
        log.append({"stage": "small-gain", "inflation": infl, "grid": GRID_POINTS,
                    "margin": check.margin, "ok": check.valid, "witness": check.witness})
        if first is None:
            first = check
        if check.valid:
            break
        infl /= 2.0
    if not check.valid:
        m1 = strict_majorant(sub1.gain, inflation)
        m2 = strict_majorant(sub2.gain, inflation)
        return SmallGainCertificate(False, m1, m2, margin=first.margin, inflation=inflation,
                                    failed_stage="small-gain", witness=first.witness, log=tuple(log))

    lam, reqs = select_lambda(m1, m2, sub1.rate, sub2.rate, slack)
    log.append({"stage": "lambda", "value": lam, "requirements": {k: v for k, v in reqs}})
    scaled = {}
    try:
        for key, sigma_gain, rate in (
            ("V11", None, sub1.rate),
            ("V12", m2, sub1.rate),
            ("V21", m1, sub2.rate),
            ("V22", None, sub2.rate),
        ):
            if sigma_gain is None:
                sigma = PowerSum.monomial(1.0, lam)
                r = kp_compose_scaling(sigma, rate, safety=safety)
                grid_slack = kp_scaling_slack(sigma, rate, r)
            else:
                r, grid_slack = _scaled_candidate_rate(sigma_gain, rate, lam, safety)
            scaled[key] = r
            ok = grid_slack >= 0
            log.append({"stage": "scaling", "candidate": key, "a": r.a, "p": r.p, "b": r.b,
                        "q": r.q, "grid_slack": grid_slack, "ok": ok})
            if not ok:
                return SmallGainCertificate(False, m1, m2, lam=lam, margin=check.margin, inflation=infl,
                                            scaled_rates=scaled, failed_stage="scaling", log=tuple(log))
    except (ValueError, ArithmeticError) as exc:
        log.append({"stage": "scaling", "ok": False, "error": str(exc)})
        return SmallGainCertificate(False, m1, m2, lam=lam, margin=check.margin, inflation=infl,
                                    scaled_rates=scaled, failed_stage="scaling", log=tuple(log))

    composed = kfx_common_lower_bound(list(scaled.values()))
    bound = composed.settling_bound()
    log.append({"stage": "composition", "a": composed.a, "p": composed.p, "b": composed.b,
                "q": composed.q, "settling_bound": bound, "ok": True})
    return SmallGainCertificate(True, m1, m2, lam=lam, composed_rate=composed, settling_bound=bound,
                                margin=check.margin, inflation=infl, scaled_rates=scaled, log=tuple(log))


@dataclass(frozen=True)
class EpsilonBound:
    C: float
    epsilon: float
    warnings: tuple = ()

    @property
    def hypotheses_ok(self):
        return not self.warnings


def homogeneous_epsilon_bound(a1, a2, p2, q2, kappa1, kappa2, n1, n2, eta2, eta1=None,
                              decay_fraction=0.25) -> EpsilonBound:
    """Dissipativity constant ``C`` and admissible coupling size ``epsilon``.

    The decay rates that enter the dissipativity step are
    ``decay_fraction * a_i * (s**p_i + s**q_i)``, so ``delta_i`` is
    ``decay_fraction * a_i``. A quarter is what the quadratic construction
    leaves after absorbing the cross terms; pass ``decay_fraction=1`` to use
    ``a_i`` directly.

    Hypothesis failures (exponent products outside [p2, q2], excessive spread
    of ``eta2``) are reported as warnings; the numbers are still computed.
    """
    eta2 = [float(e) for e in eta2]
    if not eta2 or min(eta2) <= 0:
        raise ValueError("eta2 must be a nonempty list of positive exponents")
    warnings = []
    if max(eta2) / min(eta2) > q2 / p2 + 1e-12:
        warnings.append(f"spread max/min eta2 = {max(eta2) / min(eta2):.6g} exceeds q2/p2 = {q2 / p2:.6g}")
    if eta1 is not None:
        for e1 in eta1:
            for e2 in eta2:
                prod = e1 * e2
                if not (p2 - 1e-12 <= prod <= q2 + 1e-12):
                    warnings.append(f"exponent product {e1:g}*{e2:g} = {prod:.6g} outside [{p2:g}, {q2:g}]")
    d1 = decay_fraction * a1
    d2 = decay_fraction * a2
    C = min(d2 / (n2 * max(1.0, 2.0 ** (e - 1.0))) * (d1 / (2.0 * n1)) ** e for e in eta2)
    inner = C * a1 / ((n1 + 1) * kappa1 ** 2) * min((a2 / ((n2 + 1) * kappa2 ** 2)) ** e for e in eta2)
    return EpsilonBound(float(C), math.sqrt(inner), tuple(warnings))


def decentralized_flow_constant(n, p, M, grid_points=1001):
    """Constant c with ``sum_i a_i(a_i+b_i)/|a_i+b_i|**p >= c*|a|**(2-p)`` when ``|b| <= M|a|``."""
    if n < 1:
        raise ValueError("n must be positive")
    if not p < 1:
        raise ValueError("need p < 1")
    if not 0 < M < 1.0 / n:
        raise ValueError(f"need 0 < M < 1/n = {1.0 / n}, got {M}")
    if n == 1:
        if p >= 0:
            return (1.0 - M) / (1.0 + M) ** p
        # for negative p the |a+b|^-p factor is bounded below, not above
        return (1.0 - M) ** (1.0 - p)
    delta = np.linspace(0.0, 1.0, grid_points)
    mr = M * math.sqrt(n)
    r_prev = max(1.0, (n - 1) ** (p / 2.0))
    vals = ((1.0 - delta * mr) ** (1.0 - p)
            - r_prev * (1.0 - delta ** 2) ** (1.0 - p / 2.0) * mr ** (2.0 - p)) / n ** (1.0 - p / 2.0)
    return float(vals.min())


@dataclass(frozen=True)
class CurvatureCheck:
    satisfied: bool
    margin: float

    def __bool__(self):
        return self.satisfied


def curvature_condition(mu, K, ell, gamma, N=1) -> CurvatureCheck:
    """Strong-convexity test ``mu > N*K*(ell + gamma)``; margin is the signed gap."""
    if min(mu, K, ell, gamma) <= 0 or N < 1:
        raise ValueError("parameters must be positive and N >= 1")
    margin = mu - N * K * (ell + gamma)
    return CurvatureCheck(margin > 0, margin)


def linear_loop_gains(mu, K, ell, gamma, N=1, delta=None, delta_hat=None):
    """Linear cross gains of a plant/optimizer loop under the curvature condition.

    Returns ``(g1, g2)`` with slopes ``(gamma+dh)**2`` and ``(gamma_d+dh)**2``
    where ``gamma_d = K/(mu - ell*K - delta)``; ``delta`` and ``delta_hat``
    default to half of their admissible ranges.
    """
    cond = curvature_condition(mu, K, ell, gamma, N)
    if not cond:
        raise ValueError(f"curvature condition violated (deficit {cond.margin})")
    kk = N * K
    if delta is None:
        delta = 0.5 * (mu - kk * (ell + gamma))
    gd = kk / (mu - ell * kk - delta)
    if gamma * gd >= 1:
        raise ValueError("delta too large for a contracting gain product")
    if delta_hat is None:
        # largest dh with (gamma+dh)(gd+dh) = 1, halved
        b = gamma + gd
        root = (-b + math.sqrt(b * b - 4 * (gamma * gd - 1))) / 2
        delta_hat = 0.5 * root
    return (GainFunction.linear((gamma + delta_hat) ** 2),
            GainFunction.linear((gd + delta_hat) ** 2))

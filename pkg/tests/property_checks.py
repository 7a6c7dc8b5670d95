"""Inequality checks shared by the property tests and the acceptance suite.

Each check returns ``(checked, violations)``.
"""
import numpy as np

from fxtiss.certificate import (
    decentralized_flow_constant,
    inverse_gain_scaling,
    kp_compose_scaling,
)
from fxtiss.comparison import (
    GainFunction,
    KFxRate,
    PowerSum,
    domination_bounds,
    holder_factor,
    jensen_factor,
    kfx_common_lower_bound,
    log_grid,
    max_gain_inverse,
    power_split_bound,
)

SEED = 20240601
GRID = log_grid(4096)
DRAWS = 100_000
REL = 1e-12


def _rng(offset=0):
    return np.random.default_rng(SEED + offset)


def power_split(draws=1000):
    rng = _rng(1)
    checked = bad = 0
    for _ in range(draws):
        lo, mid, hi = np.sort(rng.uniform(0.01, 5.0, 3))
        s = float(np.exp(rng.uniform(np.log(1e-9), np.log(1e9))))
        checked += 1
        bad += not power_split_bound(mid, lo, hi, s)
    # the full grid at a few fixed triples, endpoints included
    for lo, mid, hi in ((0.5, 1.0, 2.0), (0.1, 0.1, 3.0), (1.5, 1.5, 1.5)):
        for s in np.concatenate([[0.0], GRID]):
            checked += 1
            bad += not power_split_bound(mid, lo, hi, float(s))
    return checked, bad


def _random_rate(rng):
    return KFxRate(rng.uniform(0.05, 5), rng.uniform(0.05, 0.95), rng.uniform(0.05, 5), rng.uniform(1.05, 4))


def kfx_lower_bound(cases=200):
    rng = _rng(2)
    checked = bad = 0
    for _ in range(cases):
        rates = [_random_rate(rng) for _ in range(rng.integers(1, 5))]
        low = kfx_common_lower_bound(rates)(GRID)
        env = np.min([r(GRID) for r in rates], axis=0)
        checked += GRID.size
        bad += int(np.sum(low > env * (1 + REL)))
    return checked, bad


def jensen(draws=DRAWS):
    rng = _rng(3)
    n = rng.integers(1, 12, draws)
    p = rng.uniform(0.05, 4.0, draws)
    bad = 0
    for k in range(draws):
        s = rng.exponential(size=n[k]) * 10 ** rng.uniform(-3, 3)
        lhs = s.sum() ** p[k]
        rhs = jensen_factor(p[k], int(n[k])) * np.sum(s ** p[k])
        bad += lhs > rhs * (1 + 1e-12)
    return draws, int(bad)


DOMINATION_CASES = (
    PowerSum([(1, 1), (1, 2)]),
    PowerSum([(2, 0.5), (3, 3)]),
    PowerSum([(1, 1), (-0.5, 1.5), (1, 2)]),
    PowerSum([(0.3, 1 / 3), (4, 0.9), (0.01, 2.5), (2, 7)]),
    PowerSum.monomial(2.5, 1.7),
)


def domination(cases=DOMINATION_CASES):
    checked = bad = 0
    for ps in cases:
        lo, hi = domination_bounds(ps)
        c1, p1 = ps.lowest
        cn, pn = ps.highest
        base = GRID ** p1 + GRID ** pn
        v = ps(GRID)
        checked += GRID.size
        bad += int(np.sum((v < lo * base * (1 - REL)) | (v > hi * base * (1 + REL))))
    return checked, bad


KP_CASES = (
    (PowerSum.monomial(1, 1), KFxRate(1, 0.5, 1, 2)),
    (PowerSum.monomial(1, 2), KFxRate(1, 0.5, 1, 2)),
    (PowerSum([(1, 1), (1, 2)]), KFxRate(2, 2 / 3, 2, 2)),
    (PowerSum([(0.5, 1.5), (2, 3)]), KFxRate(0.3, 0.8, 4, 1.2)),
    (PowerSum([(1.1, 1), (0.2, 2), (3, 4)]), KFxRate(1, 0.25, 0.5, 1.5)),
)


def kp_scaling(cases=KP_CASES):
    checked = bad = 0
    for sigma, rate in cases:
        scaled = kp_compose_scaling(sigma, rate)
        lhs = scaled(sigma(GRID))
        rhs = rate(GRID) * sigma.derivative()(GRID)
        checked += GRID.size
        bad += int(np.sum(lhs > rhs * (1 + REL)))
    return checked, bad


INV_CASES = (
    (PowerSum.monomial(1, 1), KFxRate(1, 0.5, 1, 2), None),
    (PowerSum.monomial(1, 2), KFxRate(2, 0.75, 2, 1.5), None),
    (PowerSum([(1, 1 / 6), (1, 1.2)]), KFxRate(0.5, 2 / 3, 0.5, 2), None),
    (PowerSum([(0.2, 1.125), (0.7, 3.2)]), KFxRate(0.5, 0.75, 0.5, 1.5), 2.0),
    (PowerSum([(3, 0.5), (0.1, 1), (1, 2.5)]), KFxRate(1, 0.4, 1, 3), None),
)


def inverse_scaling(cases=INV_CASES):
    """``lam g^(lam-1) g' Psi >= Psi~(g^lam)``, sampled at t = g(s)."""
    checked = bad = 0
    for inv, rate, lam in cases:
        g = GainFunction.from_inverse(inv)
        lam, scaled = inverse_gain_scaling(g, rate, lam=lam)
        t = GRID
        s = inv(t)
        gprime = 1.0 / inv.derivative()(t)
        lhs = lam * t ** (lam - 1) * gprime * rate(s)
        rhs = scaled(t ** lam)
        ok = np.isfinite(lhs) & np.isfinite(rhs)
        checked += int(ok.sum())
        bad += int(np.sum(rhs[ok] > lhs[ok] * (1 + REL)))
    return checked, bad


def _bisect_envelope(gains, y):
    lo, hi = 0.0, 1.0
    while max(float(g(hi)) for g in gains) < y:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if max(float(g(mid)) for g in gains) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def max_inverse(cases=60):
    rng = _rng(4)
    checked = bad = 0
    for _ in range(cases):
        gains = []
        for _ in range(2):
            ps = PowerSum([(rng.uniform(0.1, 3), rng.uniform(0.2, 1)), (rng.uniform(0.1, 3), rng.uniform(1, 3))])
            gains.append(GainFunction(ps, bool(rng.integers(2))))
        for y in 10 ** rng.uniform(-4, 4, 5):
            got = max_gain_inverse(gains, y)
            ref = _bisect_envelope(gains, y)
            checked += 1
            bad += abs(got - ref) > 1e-8 * max(1.0, ref)
    return checked, int(bad)


def holder(draws=DRAWS):
    rng = _rng(5)
    bad = 0
    for _ in range(draws):
        n = int(rng.integers(1, 10))
        p, q = np.sort(rng.uniform(0.2, 4.0, 2))
        if q - p < 1e-6:
            q = p + 0.1
        x = np.abs(rng.normal(size=n)) * 10 ** rng.uniform(-3, 3)
        lp = np.sum(x ** p) ** (1 / p)
        lq = np.sum(x ** q) ** (1 / q)
        bad += lp > holder_factor(n, p, q) * lq * (1 + 1e-12)
    return draws, int(bad)


FLOW_CASES = ((1, 0.5, 0.5), (1, -0.2, 0.5), (2, 1 / 3, 0.4), (2, -0.2, 0.4), (2, 0.8, 0.45))


def decentralized_flow(draws=DRAWS, cases=FLOW_CASES):
    """``sum_i a_i(a_i+b_i)/|a_i+b_i|^p >= c|a|^(2-p)`` whenever ``|b| <= M|a|``."""
    checked = bad = 0
    for k, (n, p, M) in enumerate(cases):
        rng = _rng(10 + k)
        c = decentralized_flow_constant(n, p, M)
        a = rng.normal(size=(draws, n)) * 10 ** rng.uniform(-3, 3, (draws, 1))
        d = rng.normal(size=(draws, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = rng.uniform(0, 1, (draws, 1))
        r[: draws // 4] = 1.0  # the boundary |b| = M|a| is where the bound is tight
        b = M * np.linalg.norm(a, axis=1, keepdims=True) * r * d * (1 - 1e-12)
        z = a + b
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(z != 0, a * z / np.abs(z) ** p, 0.0)
        lhs = terms.sum(axis=1)
        rhs = c * np.linalg.norm(a, axis=1) ** (2 - p)
        checked += draws
        bad += int(np.sum(lhs < rhs * (1 - 1e-10)))
    return checked, bad


ALL = {
    "power split": power_split,
    "fixed-time lower bound": kfx_lower_bound,
    "jensen factor": jensen,
    "domination bounds": domination,
    "direct-gain rescaling": kp_scaling,
    "inverse-gain rescaling": inverse_scaling,
    "max-gain inverse": max_inverse,
    "holder factor": holder,
    "decentralized flow": decentralized_flow,
}
